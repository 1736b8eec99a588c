"""Domains, uniform Cartesian grids and compact interior subsets."""

import functools
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DisconnectedMask, EmptyErosion, EmptyInterior
from .special import ball_volume

KINDS = ("rectangle", "disk", "l_shape", "polygon", "mask")


def read_pgm(path):
    """Read a plain (P2) or raw (P5) PGM file into a 2D integer array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P2":
        values = np.array(data[pos:].split(), dtype=np.int64)
    elif magic == b"P5":
        raw = data[pos + 1:]
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        values = np.frombuffer(raw, dtype=dtype, count=width * height).astype(np.int64)
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    if values.size < width * height:
        raise ValueError(f"{path}: truncated PGM data")
    return values[: width * height].reshape(height, width)


def write_pgm(path, image):
    """Write a 2D array of small nonnegative integers as a plain P2 PGM."""
    image = np.asarray(image, dtype=np.int64)
    h, w = image.shape
    lines = ["P2", f"{w} {h}", str(max(1, int(image.max())))]
    lines += [" ".join(str(v) for v in row) for row in image]
    Path(path).write_text("\n".join(lines) + "\n")


def _segment_distance(points, a, b):
    ab = b - a
    t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Bounded domain in R^2 or R^3.

    Use the constructors :meth:`rectangle`, :meth:`disk`, :meth:`l_shape`,
    :meth:`polygon` and :meth:`mask` rather than the raw initializer.
    Rectangles (boxes) occupy ``(0, L_1) x ... x (0, L_n)``.
    """

    kind: str
    dimension: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")

    # constructors -------------------------------------------------------
    @classmethod
    def rectangle(cls, lengths):
        lengths = tuple(float(v) for v in lengths)
        if any(v <= 0 for v in lengths):
            raise ValueError("rectangle lengths must be positive")
        return cls("rectangle", len(lengths), {"lengths": lengths})

    @classmethod
    def box(cls, lengths):
        return cls.rectangle(lengths)

    @classmethod
    def unit_square(cls):
        return cls.rectangle((1.0, 1.0))

    @classmethod
    def unit_cube(cls):
        return cls.rectangle((1.0, 1.0, 1.0))

    @classmethod
    def disk(cls, radius, center=None, dimension=2):
        """Disk (n = 2) or ball (n = 3); centred at the origin by default."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        center = tuple(float(c) for c in (center if center is not None else (0.0,) * dimension))
        return cls("disk", len(center), {"radius": float(radius), "center": center})

    @classmethod
    def l_shape(cls, outer, notch):
        """Rectangle ``(0,a) x (0,b)`` with the corner ``[a-c, a) x [b-d, b)`` removed."""
        (a, b), (c, d) = outer, notch
        if not (0 < c < a and 0 < d < b):
            raise ValueError("notch must be strictly smaller than the outer rectangle")
        return cls("l_shape", 2, {"outer": (float(a), float(b)), "notch": (float(c), float(d))})

    @classmethod
    def polygon(cls, vertices):
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise ValueError("polygon needs at least three 2D vertices")
        if _self_intersecting(verts):
            raise ValueError("polygon must be simple")
        return cls("polygon", 2, {"vertices": tuple(map(tuple, verts))})

    @classmethod
    def mask(cls, path, extent):
        """Bitmap domain from a PGM file; nonzero pixels are inside.

        ``extent`` is ``(x0, x1, y0, y1)``; row 0 of the image is the top edge.
        """
        image = read_pgm(path)
        inside = image != 0
        labels, count = ndimage.label(inside)
        if count == 0:
            raise EmptyInterior(f"{path}: mask has no inside pixels")
        if count > 1:
            raise DisconnectedMask(f"{path}: mask has {count} connected components")
        x0, x1, y0, y1 = (float(v) for v in extent)
        return cls("mask", 2, {"path": str(path), "extent": (x0, x1, y0, y1),
                               "_inside": inside})

    # geometry -----------------------------------------------------------
    @property
    def bbox(self):
        """``(lo, hi)`` arrays of the bounding box."""
        p = self.params
        if self.kind == "rectangle":
            return np.zeros(self.dimension), np.array(p["lengths"])
        if self.kind == "disk":
            c = np.array(p["center"])
            return c - p["radius"], c + p["radius"]
        if self.kind == "l_shape":
            return np.zeros(2), np.array(p["outer"])
        if self.kind == "polygon":
            v = np.array(p["vertices"])
            return v.min(axis=0), v.max(axis=0)
        x0, x1, y0, y1 = p["extent"]
        return np.array([x0, y0]), np.array([x1, y1])

    @cached_property
    def volume(self):
        return volume(self)

    @property
    def diameter(self):
        lo, hi = self.bbox
        if self.kind == "disk":
            return 2.0 * self.params["radius"]
        return float(np.linalg.norm(hi - lo))

    def _l_vertices(self):
        (a, b), (c, d) = self.params["outer"], self.params["notch"]
        return np.array([(0, 0), (a, 0), (a, b - d), (a - c, b - d), (a - c, b), (0, b)], float)

    def _pixel_geometry(self):
        inside = self.params["_inside"]
        x0, x1, y0, y1 = self.params["extent"]
        h, w = inside.shape
        return inside, x0, y1, (x1 - x0) / w, (y1 - y0) / h

    def _pixel_index(self, points):
        inside, x0, ytop, dx, dy = self._pixel_geometry()
        col = np.floor((points[:, 0] - x0) / dx).astype(np.int64)
        row = np.floor((ytop - points[:, 1]) / dy).astype(np.int64)
        ok = (col >= 0) & (col < inside.shape[1]) & (row >= 0) & (row < inside.shape[0])
        return row, col, ok

    def contains(self, points):
        """Strict interior membership; boundary points are classified outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.params
        if self.kind == "rectangle":
            hi = np.array(p["lengths"])
            return np.all((pts > 0) & (pts < hi), axis=1)
        if self.kind == "disk":
            d2 = np.sum((pts - np.array(p["center"])) ** 2, axis=1)
            return d2 < p["radius"] ** 2 * (1 - 1e-14)
        if self.kind in ("l_shape", "polygon"):
            verts = self._l_vertices() if self.kind == "l_shape" else np.array(p["vertices"])
            inside = _even_odd(pts, verts)
            return inside & (_polygon_boundary_distance(pts, verts) > 1e-12)
        inside, *_ = self._pixel_geometry()
        row, col, ok = self._pixel_index(pts)
        res = np.zeros(len(pts), dtype=bool)
        res[ok] = inside[row[ok], col[ok]]
        return res

    def boundary_distance(self, points):
        """Distance to the boundary for interior points (0 outside).

        Exact for rectangles, disks, L-shapes and polygons; for masks the
        pixel distance transform minus one pixel (a conservative value).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.contains(pts)
        p = self.params
        if self.kind == "rectangle":
            hi = np.array(p["lengths"])
            d = np.min(np.minimum(pts, hi - pts), axis=1)
        elif self.kind == "disk":
            d = p["radius"] - np.linalg.norm(pts - np.array(p["center"]), axis=1)
        elif self.kind in ("l_shape", "polygon"):
            verts = self._l_vertices() if self.kind == "l_shape" else np.array(p["vertices"])
            d = _polygon_boundary_distance(pts, verts)
        else:
            mask, _, _, dx, dy = self._pixel_geometry()
            edt = ndimage.distance_transform_edt(mask, sampling=(dy, dx))
            row, col, ok = self._pixel_index(pts)
            d = np.zeros(len(pts))
            d[ok] = np.maximum(edt[row[ok], col[ok]] - max(dx, dy), 0.0)
        return np.where(inside, np.maximum(d, 0.0), 0.0)

    def content_hash(self):
        """Stable hex digest of the geometric description."""
        desc = {k: v for k, v in self.params.items() if not k.startswith("_")}
        payload = {"kind": self.kind, "dimension": self.dimension, "params": desc}
        if self.kind == "mask":
            payload["mask_sha"] = hashlib.sha256(self.params["_inside"].tobytes()).hexdigest()
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def __repr__(self):
        desc = {k: v for k, v in self.params.items() if not k.startswith("_")}
        return f"DomainSpec({self.kind!r}, n={self.dimension}, {desc})"


def _even_odd(pts, verts):
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x1, y1 = verts[:, 0][None, :], verts[:, 1][None, :]
    x2, y2 = np.roll(verts[:, 0], -1)[None, :], np.roll(verts[:, 1], -1)[None, :]
    crosses = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    return (np.sum(crosses & (x < xint), axis=1) % 2) == 1


def _polygon_boundary_distance(pts, verts):
    d = np.full(len(pts), np.inf)
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        d = np.minimum(d, _segment_distance(pts, a, b))
    return d


def _self_intersecting(verts):
    n = len(verts)
    edges = [(verts[i], verts[(i + 1) % n]) for i in range(n)]

    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            p1, q1 = edges[i]
            p2, q2 = edges[j]
            if (orient(p1, q1, p2) * orient(p1, q1, q2) < 0
                    and orient(p2, q2, p1) * orient(p2, q2, q1) < 0):
                return True
    return False


def volume(domain, method="exact", resolution=400):
    """Lebesgue measure of the domain.

    ``method="exact"`` uses closed forms (shoelace for polygons, pixel count
    for masks); ``method="quadrature"`` counts interior lattice nodes of
    :func:`build_grid` at ``resolution``.
    """
    p = domain.params
    if method == "quadrature":
        g = build_grid(domain, resolution)
        return g.num_nodes * g.cell_measure
    if domain.kind == "rectangle":
        return float(np.prod(p["lengths"]))
    if domain.kind == "disk":
        return ball_volume(domain.dimension, p["radius"])
    if domain.kind == "l_shape":
        (a, b), (c, d) = p["outer"], p["notch"]
        return a * b - c * d
    if domain.kind == "polygon":
        v = np.array(p["vertices"])
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    inside, _, _, dx, dy = domain._pixel_geometry()
    return float(inside.sum()) * dx * dy


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice over the bounding box with its interior nodes.

    ``index`` has the full lattice shape and holds the interior node number
    or -1; ``nodes`` lists lattice multi-indices of interior nodes in
    lexicographic order.
    """

    domain: DomainSpec
    resolution: float
    origin: np.ndarray
    spacing: np.ndarray
    shape: tuple
    index: np.ndarray
    nodes: np.ndarray

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def cell_measure(self):
        return float(np.prod(self.spacing))

    @property
    def coordinates(self):
        return self.origin + self.nodes * self.spacing

    def axis_coordinates(self, axis):
        return self.origin[axis] + self.spacing[axis] * np.arange(self.shape[axis])


def build_grid(domain, resolution):
    """Interior lattice nodes of ``domain`` at ``resolution`` nodes per unit length."""
    if resolution < 1:
        raise ValueError("resolution must be at least 1 node per unit length")
    lo, hi = domain.bbox
    extent = hi - lo
    cells = np.maximum(1, np.ceil(extent * resolution - 1e-9)).astype(int)
    spacing = extent / cells
    shape = tuple(int(c) + 1 for c in cells)
    axes = [lo[i] + spacing[i] * np.arange(shape[i]) for i in range(domain.dimension)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dimension)
    inside = domain.contains(mesh).reshape(shape)
    if not inside.any():
        raise EmptyInterior(f"no lattice point of {domain!r} at resolution {resolution}")
    index = np.full(shape, -1, dtype=np.int64)
    nodes = np.argwhere(inside)
    index[tuple(nodes.T)] = np.arange(len(nodes))
    index.setflags(write=False)
    nodes.setflags(write=False)
    return Grid(domain, float(resolution), lo.copy(), spacing, shape, index, nodes)


@dataclass(frozen=True, eq=False)
class CompactSubset:
    """Points of the parent domain at distance at least ``margin`` from its boundary."""

    parent: DomainSpec
    margin: float

    def contains(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.parent.contains(pts) & (self.parent.boundary_distance(pts) >= self.margin - 1e-12)

    @property
    def box(self):
        """``(lo, hi)`` when the subset is itself a box (rectangle parent), else None."""
        if self.parent.kind != "rectangle":
            return None
        hi = np.array(self.parent.params["lengths"])
        return np.full(len(hi), self.margin), hi - self.margin

    @property
    def measure(self):
        p = self.parent.params
        if self.parent.kind == "rectangle":
            return float(np.prod(np.array(p["lengths"]) - 2 * self.margin))
        if self.parent.kind == "disk":
            return ball_volume(self.parent.dimension, p["radius"] - self.margin)
        pts, w = self.sample_lattice(400)
        return float(w.sum())

    def sample_lattice(self, resolution):
        """Member lattice points of the parent's bounding box and their cell weights."""
        lo, hi = self.parent.bbox
        cells = np.maximum(1, np.ceil((hi - lo) * resolution)).astype(int)
        spacing = (hi - lo) / cells
        axes = [lo[i] + spacing[i] * (np.arange(cells[i]) + 0.5) for i in range(len(lo))]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
        keep = self.contains(mesh)
        return mesh[keep], np.full(int(keep.sum()), float(np.prod(spacing)))


def compact_subset(domain, margin):
    """Erosion of ``domain`` by ``margin``; raises EmptyErosion when nothing remains."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    p = domain.params
    if domain.kind == "rectangle":
        empty = 2 * margin >= min(p["lengths"])
    elif domain.kind == "disk":
        empty = margin >= p["radius"]
    else:
        res = max(64.0, 4.0 / margin)
        empty = not CompactSubset(domain, margin).sample_lattice(res)[0].size
    if empty:
        raise EmptyErosion(f"margin {margin} erodes all of {domain!r}")
    return CompactSubset(domain, float(margin))


def _gauss_box(lo, hi, order):
    t, w = np.polynomial.legendre.leggauss(order)
    axes, weights = [], []
    for a, b in zip(lo, hi):
        axes.append(a + 0.5 * (b - a) * (t + 1))
        weights.append(0.5 * (b - a) * w)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
    wts = functools.reduce(np.multiply, np.ix_(*weights)).ravel()
    return pts, wts


def _ear_clip(verts):
    """Triangulate a simple polygon; returns a list of vertex triples."""
    v = [np.asarray(p, float) for p in verts]
    x, y = np.array(verts).T
    if 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) < 0:
        v = v[::-1]
    tris = []
    while len(v) > 3:
        for i in range(len(v)):
            a, b, c = v[i - 1], v[i], v[(i + 1) % len(v)]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 1e-15:
                continue
            others = [p for j, p in enumerate(v) if j not in (i - 1 if i else len(v) - 1, i, (i + 1) % len(v))]
            if others and np.any(_in_triangle(np.array(others), a, b, c)):
                continue
            tris.append((a, b, c))
            del v[i]
            break
        else:
            raise ValueError("polygon triangulation failed")
    tris.append(tuple(v))
    return tris


def _in_triangle(p, a, b, c):
    def side(p, q, r):
        return (q[0] - p[:, 0]) * (r[1] - p[:, 1]) - (q[1] - p[:, 1]) * (r[0] - p[:, 0])
    d1, d2, d3 = side(p, a, b), side(p, b, c), side(p, c, a)
    return (d1 >= 0) & (d2 >= 0) & (d3 >= 0)


def _triangle_rule(tri, order):
    # collapsed (Duffy) tensor Gauss rule
    t, w = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (t + 1)
    wu = 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    W = np.outer(wu, wu) * (1 - U)
    s, r = U, V * (1 - U)
    a, b, c = (np.asarray(p, float) for p in tri)
    pts = a + s[..., None] * (b - a) + r[..., None] * (c - a)
    jac = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return pts.reshape(-1, 2), (W * jac).ravel()


def domain_quadrature(domain, order=32):
    """Quadrature points and weights on the domain.

    Tensor Gauss-Legendre rules on boxes and L-shape pieces, polar/spherical
    Gauss rules on disks and balls, collapsed Gauss rules on the triangles of
    an ear-clipped polygon, and a small tensor rule per pixel for masks.
    """
    p = domain.params
    n = domain.dimension
    if domain.kind == "rectangle":
        return _gauss_box(np.zeros(n), np.array(p["lengths"]), order)
    if domain.kind == "l_shape":
        (a, b), (c, d) = p["outer"], p["notch"]
        p1, w1 = _gauss_box([0.0, 0.0], [a, b - d], order)
        p2, w2 = _gauss_box([0.0, b - d], [a - c, b], order)
        return np.vstack([p1, p2]), np.concatenate([w1, w2])
    if domain.kind == "disk":
        R, c = p["radius"], np.array(p["center"])
        r, wr = np.polynomial.legendre.leggauss(order)
        r, wr = 0.5 * R * (r + 1), 0.5 * R * wr
        m = 2 * order
        ph = 2 * np.pi * np.arange(m) / m
        if n == 2:
            pts = np.stack([np.outer(r, np.cos(ph)), np.outer(r, np.sin(ph))], -1).reshape(-1, 2)
            return c + pts, np.outer(wr * r, np.full(m, 2 * np.pi / m)).ravel()
        ct, wt = np.polynomial.legendre.leggauss(order)
        st = np.sqrt(1 - ct**2)
        om = np.stack([np.outer(st, np.cos(ph)).ravel(), np.outer(st, np.sin(ph)).ravel(),
                       np.repeat(ct, m)], 1)
        wo = np.repeat(wt, m) * (2 * np.pi / m)
        pts = (r[:, None, None] * om[None]).reshape(-1, 3)
        return c + pts, np.outer(wr * r**2, wo).ravel()
    if domain.kind == "polygon":
        rules = [_triangle_rule(t, order) for t in _ear_clip(p["vertices"])]
        return np.vstack([r[0] for r in rules]), np.concatenate([r[1] for r in rules])
    inside, x0, ytop, dx, dy = domain._pixel_geometry()
    rows, cols = np.nonzero(inside)
    k = max(1, min(order // 8, 4))
    sub, sw = _gauss_box([0.0, 0.0], [dx, dy], k)
    base = np.stack([x0 + cols * dx, ytop - (rows + 1) * dy], 1)
    pts = (base[:, None, :] + sub[None]).reshape(-1, 2)
    return pts, np.tile(sw, len(base))
