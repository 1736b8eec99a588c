import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fermiweyl.errors import DisconnectedMask, EmptyErosion, EmptyInterior
from fermiweyl.geometry import (DomainSpec, build_grid, compact_subset, domain_quadrature,
                                read_pgm, volume, write_pgm)


def test_grid_counts_unit_square():
    g = build_grid(DomainSpec.unit_square(), 4)
    assert g.num_nodes == 9
    assert np.allclose(g.spacing, 0.25)
    g = build_grid(DomainSpec.unit_square(), 100)
    assert g.num_nodes == 99**2
    assert g.cell_measure == pytest.approx(1e-4)


def test_grid_disk_count():
    g = build_grid(DomainSpec.disk(1.0), 100)
    assert g.num_nodes * g.cell_measure == pytest.approx(math.pi, rel=0.02)


def test_grid_refinement_disk():
    dom = DomainSpec.disk(1.0)
    errs = [abs(volume(dom, "quadrature", r) - math.pi) for r in (50, 100, 200)]
    # error of the lattice count shrinks with refinement (Gauss circle problem)
    assert errs[2] < errs[0]
    assert volume(dom, "quadrature", 400) == pytest.approx(math.pi, abs=1e-3)


def test_grid_determinism():
    dom = DomainSpec.l_shape((1.0, 1.0), (0.5, 0.5))
    a, b = build_grid(dom, 40), build_grid(dom, 40)
    assert np.array_equal(a.index, b.index) and np.array_equal(a.nodes, b.nodes)


def test_grid_index_consistent():
    g = build_grid(DomainSpec.disk(0.5, (0.5, 0.5)), 30)
    assert np.array_equal(g.index[tuple(g.nodes.T)], np.arange(g.num_nodes))
    assert np.all(g.domain.contains(g.coordinates))


def test_volumes():
    assert volume(DomainSpec.rectangle((1, 2))) == 2
    assert volume(DomainSpec.unit_cube()) == 1
    assert volume(DomainSpec.l_shape((1, 1), (0.5, 0.5))) == pytest.approx(0.75)
    tri = DomainSpec.polygon([(0, 0), (1, 0), (0, 1)])
    assert volume(tri) == pytest.approx(0.5)


@pytest.mark.parametrize("dom", [
    DomainSpec.rectangle((1.0, 2.0)), DomainSpec.unit_cube(), DomainSpec.disk(1.0),
    DomainSpec.disk(0.7, dimension=3), DomainSpec.l_shape((2.0, 1.0), (0.5, 0.25)),
    DomainSpec.polygon([(0, 0), (2, 0), (2, 1), (1, 0.4), (0, 1)]),
])
def test_domain_quadrature_mass(dom):
    pts, w = domain_quadrature(dom, 16)
    assert w.sum() == pytest.approx(dom.volume, rel=1e-10)
    assert np.all(dom.contains(pts) | (dom.boundary_distance(pts) < 1e-9))


def test_compact_subset_examples():
    sub = compact_subset(DomainSpec.unit_square(), 0.25)
    assert sub.contains([[0.5, 0.5]])[0]
    assert not sub.contains([[0.1, 0.5]])[0]
    cube = compact_subset(DomainSpec.unit_cube(), 0.25)
    assert cube.measure == pytest.approx(0.125)
    lo, hi = cube.box
    assert np.allclose(lo, 0.25) and np.allclose(hi, 0.75)


def test_empty_erosion():
    with pytest.raises(EmptyErosion):
        compact_subset(DomainSpec.unit_square(), 0.5)
    with pytest.raises(EmptyErosion):
        compact_subset(DomainSpec.disk(0.3), 0.3)


@given(st.floats(0.01, 0.2), st.floats(0.01, 0.2))
def test_erosion_monotone(m1, m2):
    m1, m2 = sorted((m1, m2))
    dom = DomainSpec.l_shape((1.0, 1.0), (0.4, 0.4))
    pts = np.random.default_rng(0).uniform(0, 1, (400, 2))
    a = compact_subset(dom, m1).contains(pts)
    b = compact_subset(dom, m2).contains(pts)
    assert np.all(a | ~b)


def test_boundary_distance_disk():
    dom = DomainSpec.disk(1.0)
    pts = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.9]])
    assert np.allclose(dom.boundary_distance(pts), [1.0, 0.5, 0.1])


def test_diameter_and_bbox():
    dom = DomainSpec.rectangle((3.0, 4.0))
    assert dom.diameter == pytest.approx(5.0)
    lo, hi = dom.bbox
    assert np.allclose(lo, 0) and np.allclose(hi, (3, 4))


def test_polygon_rejects_self_intersection():
    with pytest.raises(ValueError):
        DomainSpec.polygon([(0, 0), (1, 1), (1, 0), (0, 1)])


def test_content_hash_stable():
    a, b = DomainSpec.disk(1.0), DomainSpec.disk(1.0)
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != DomainSpec.disk(1.1).content_hash()


def _disk_image(size=64, radius=24):
    yy, xx = np.mgrid[:size, :size]
    return ((xx - size / 2 + 0.5) ** 2 + (yy - size / 2 + 0.5) ** 2 <= radius**2).astype(np.uint8) * 255


def test_pgm_roundtrip(tmp_path):
    img = _disk_image()
    write_pgm(tmp_path / "m.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "m.pgm"), img)


def test_mask_domain(tmp_path):
    write_pgm(tmp_path / "m.pgm", _disk_image())
    dom = DomainSpec.mask(tmp_path / "m.pgm", (0.0, 1.0, 0.0, 1.0))
    assert dom.volume == pytest.approx(math.pi * (24 / 64) ** 2, rel=0.02)
    assert dom.contains([[0.5, 0.5]])[0] and not dom.contains([[0.02, 0.02]])[0]
    pts, w = domain_quadrature(dom)
    assert w.sum() == pytest.approx(dom.volume)


def test_mask_errors(tmp_path):
    write_pgm(tmp_path / "empty.pgm", np.zeros((8, 8), np.uint8))
    with pytest.raises(EmptyInterior):
        DomainSpec.mask(tmp_path / "empty.pgm", (0, 1, 0, 1))
    two = np.zeros((8, 8), np.uint8)
    two[1:3, 1:3] = two[5:7, 5:7] = 255
    write_pgm(tmp_path / "two.pgm", two)
    with pytest.raises(DisconnectedMask):
        DomainSpec.mask(tmp_path / "two.pgm", (0, 1, 0, 1))
