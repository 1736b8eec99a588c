"""Batch front end: ``fermiweyl {spectrum,weyl,localweyl,correlation,exchange}``.

Runs are described by an INI file (see the README for the schema).  Every
CSV is accompanied by a JSON manifest with hashes, error budgets, the
tolerances used in ``--check`` mode and per-stage wall-clock times.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 tolerance breach in ``--check`` mode.
"""

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import struct
import sys
import time
from contextlib import contextmanager, nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import __version__
from . import correlation as corr
from . import fermi, quantization, weyl
from .errors import ConfigError, DimensionUnsupported, KTooLarge, NTooLarge, NumericError
from .geometry import DomainSpec, build_grid, compact_subset
from .spectral import (BCS, EigenBasis, analytic_basis_box, assemble_laplacian, max_admissible_K,
                       solve_lowest)

log = logging.getLogger("fermiweyl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
FLOAT = "%.17g"

DEFAULT_TOLERANCES = {
    "weyl_2d": 0.03,
    "weyl_3d": 0.05,
    "localweyl_rel": 0.05,
    "path_agreement": 1e-6,
    "correlation_sup_analytic": 0.05,
    "correlation_sup_grid": 0.08,
    "exchange_basis": 0.10,
    "exchange_limit": 1e-4,
}


# configuration ---------------------------------------------------------------

def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in text.replace(",", " ").split()]


def _parse_domain(sec):
    kind = sec.get("kind", "rectangle").strip()
    if kind in ("rectangle", "box", "square", "cube"):
        if "lengths" in sec:
            lengths = _floats(sec["lengths"])
        else:
            lengths = [1.0] * (3 if kind == "cube" else 2)
        return DomainSpec.rectangle(lengths)
    if kind in ("disk", "ball"):
        dim = sec.getint("dimension", 3 if kind == "ball" else 2)
        center = _floats(sec["center"]) if "center" in sec else None
        return DomainSpec.disk(sec.getfloat("radius", 1.0), center, dim)
    if kind == "l_shape":
        return DomainSpec.l_shape(_floats(sec["outer"]), _floats(sec["notch"]))
    if kind == "polygon":
        verts = [_floats(v) for v in sec["vertices"].split(";") if v.strip()]
        return DomainSpec.polygon(verts)
    if kind == "mask":
        return DomainSpec.mask(sec["path"], _floats(sec["extent"]))
    raise ConfigError(f"unknown domain kind {kind!r}")


@dataclass
class RunConfig:
    """Parsed run configuration.

    Sections ``[domain]``, ``[basis]``, ``[run]``, ``[sampling]``,
    ``[exchange]`` and ``[tolerances]``; see the README for every key.
    """

    domain: DomainSpec
    bc: str = "dirichlet"
    source: str = "analytic"
    resolution: int = 0
    K: int = 64
    solver_tol: float = 1e-8
    N: list = field(default_factory=lambda: [16])
    m: int = 1
    symbol: str = "constant"
    filling: str = "ordered"
    seed: int = 0
    y_extent: float = 8.0
    y_spacing: float = 0.1
    x_margin: float = 0.15
    x_per_axis: int = 5
    exchange_mode: str = "basis"
    exchange_lo: list = None
    exchange_hi: list = None
    radial_spacing: float = 0.1
    radial_extent: float = None
    n_theta: int = 8
    x_order: int = 3
    skip_heavy: bool = False
    out: str = "out"
    cache: str = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    text: str = ""

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
            if not cp.has_section("domain"):
                raise ConfigError("config needs a [domain] section")
            dom = _parse_domain(cp["domain"])
            b = cp["basis"] if cp.has_section("basis") else {}
            r = cp["run"] if cp.has_section("run") else {}
            s = cp["sampling"] if cp.has_section("sampling") else {}
            e = cp["exchange"] if cp.has_section("exchange") else {}
            g = lambda sec, key, conv, default: conv(sec[key]) if key in sec else default  # noqa: E731
            boolean = lambda v: v.strip().lower() in ("1", "true", "yes", "on")  # noqa: E731
            cfg = cls(
                domain=dom,
                bc=g(b, "bc", str.strip, "dirichlet"),
                source=g(b, "source", str.strip, "analytic"),
                resolution=g(b, "resolution", int, 0),
                K=g(b, "K", int, 64),
                solver_tol=g(b, "tol", float, 1e-8),
                N=g(r, "N", _ints, [16]),
                m=g(r, "m", int, 1),
                symbol=g(r, "symbol", str.strip, "constant"),
                filling=g(r, "filling", str.strip, "ordered"),
                seed=g(r, "seed", int, 0),
                skip_heavy=g(r, "skip_heavy", boolean, False),
                y_extent=g(s, "y_extent", float, 8.0),
                y_spacing=g(s, "y_spacing", float, 0.1),
                x_margin=g(s, "x_margin", float, 0.15),
                x_per_axis=g(s, "x_per_axis", int, 5),
                exchange_mode=g(e, "mode", str.strip, "basis"),
                exchange_lo=g(e, "A_lo", _floats, None),
                exchange_hi=g(e, "A_hi", _floats, None),
                radial_spacing=g(e, "radial_spacing", float, 0.1),
                radial_extent=g(e, "radial_extent", float, None),
                n_theta=g(e, "n_theta", int, 8),
                x_order=g(e, "x_order", int, 3),
                out=g(r, "out", str.strip, "out"),
                cache=g(r, "cache", str.strip, None),
                text=text,
            )
            if cp.has_section("tolerances"):
                for k, v in cp["tolerances"].items():
                    if k not in DEFAULT_TOLERANCES:
                        raise ConfigError(f"unknown tolerance {k!r}")
                    cfg.tolerances[k] = float(v)
        except (configparser.Error, KeyError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def validate(self):
        if self.bc not in BCS:
            raise ConfigError(f"bc must be one of {BCS}")
        if self.source not in ("analytic", "grid"):
            raise ConfigError("basis source must be analytic or grid")
        if self.source == "analytic" and self.domain.kind != "rectangle":
            raise ConfigError("analytic bases exist only for rectangles and boxes")
        if self.source == "grid" and self.resolution < 1:
            raise ConfigError("grid bases need basis.resolution >= 1")
        if self.K < 1 or self.m < 1 or min(self.N) < 1:
            raise ConfigError("K, m and every N must be positive")
        if self.symbol not in quantization.PRESETS:
            raise ConfigError(f"unknown symbol preset {self.symbol!r}")
        if self.filling not in ("ordered", "random"):
            raise ConfigError("filling must be ordered or random")
        if self.exchange_mode not in ("basis", "limit"):
            raise ConfigError("exchange.mode must be basis or limit")
        if max(self.N) > self.m * self.K:
            raise NTooLarge(f"N={max(self.N)} exceeds m*K={self.m * self.K}")
        if self.source == "grid":
            nodes = build_grid(self.domain, self.resolution).num_nodes
            if self.K > max_admissible_K(nodes):
                raise KTooLarge(f"K={self.K} exceeds the guard {max_admissible_K(nodes)} "
                                f"for {nodes} nodes")

    def content_hash(self):
        return hashlib.sha256(self.text.encode()).hexdigest()


# eigenbasis cache --------------------------------------------------------------

CACHE_MAGIC = b"FWEB"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sH32sBIIBBI")


def basis_key(cfg):
    """Content hash of everything that determines the eigenbasis."""
    payload = json.dumps({
        "domain": cfg.domain.content_hash(), "bc": cfg.bc, "source": cfg.source,
        "resolution": cfg.resolution if cfg.source == "grid" else 0, "K": cfg.K,
        "tol": cfg.solver_tol if cfg.source == "grid" else 0.0,
        "seed": cfg.seed if cfg.source == "grid" else 0}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def write_cache(path, basis, resolution):
    """Binary eigenbasis file: fixed header then little-endian float64 data.

    Header fields: magic, version, domain hash (32 raw bytes), bc flag, K,
    resolution, representation flag (0 analytic, 1 grid), dimension and the
    column count of the data block.  Data: ortho defect, eigenvalues, then
    the modes (analytic) or nodal vectors (grid), one row per eigenpair.
    """
    grid = basis.representation == "grid"
    data = basis.vectors.T if grid else basis.modes.astype(float)
    header = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, bytes.fromhex(basis.domain.content_hash()),
                          BCS.index(basis.bc), basis.K, resolution, int(grid),
                          basis.dimension, data.shape[1])
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray([basis.ortho_defect], "<f8").tobytes())
        fh.write(np.asarray(basis.eigenvalues, "<f8").tobytes())
        fh.write(np.ascontiguousarray(data, "<f8").tobytes())
    os.replace(tmp, path)


def read_cache(path, domain):
    raw = Path(path).read_bytes()
    magic, version, dhash, bcf, K, res, grid, dim, ncols = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise ConfigError(f"{path}: not a version-{CACHE_VERSION} eigenbasis cache")
    if dhash.hex() != domain.content_hash():
        raise ConfigError(f"{path}: cached basis belongs to another domain")
    body = np.frombuffer(raw, "<f8", offset=_HEADER.size)
    defect, ev, data = body[0], body[1:1 + K].copy(), body[1 + K:].reshape(K, ncols)
    if grid:
        return EigenBasis(BCS[bcf], ev, "grid", domain, float(defect),
                          vectors=np.ascontiguousarray(data.T), grid=build_grid(domain, res))
    return EigenBasis(BCS[bcf], ev, "analytic", domain, float(defect),
                      modes=np.rint(data).astype(int))


def compute_basis(cfg):
    if cfg.source == "analytic":
        return analytic_basis_box(cfg.domain, cfg.bc, cfg.K)
    grid = build_grid(cfg.domain, cfg.resolution)
    return solve_lowest(assemble_laplacian(grid, cfg.bc), cfg.K, cfg.solver_tol, cfg.seed)


def load_basis(cfg, cache_dir=None):
    """Eigenbasis for ``cfg``, read from or written to ``cache_dir``.

    Returns ``(basis, cached)``.  The cache directory is guarded by an
    advisory lock so concurrent runs never see half-written files.
    """
    if cache_dir is None:
        return compute_basis(cfg), False
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{basis_key(cfg)}.fwb"
    with FileLock(str(cache_dir / ".lock")):
        if path.exists():
            log.info("cache hit %s", path.name)
            return read_cache(path, cfg.domain), True
        basis = compute_basis(cfg)
        write_cache(path, basis, cfg.resolution if cfg.source == "grid" else 0)
        return basis, False


# manifests and output -----------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_hash: str
    basis_hash: str = None
    tool_version: str = __version__
    cached: bool = False
    seed: int = 0
    error_budgets: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    breaches: list = field(default_factory=list)

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.stage_seconds[name] = round(time.perf_counter() - t0, 6)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT % v
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows, manifest):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    manifest.outputs[Path(path).name] = hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def write_manifest(out_dir, manifest):
    path = Path(out_dir) / f"{manifest.command}.manifest.json"
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True,
                               default=_json_default) + "\n")
    return path


def _check(manifest, name, value, tol):
    manifest.tolerances[name] = tol
    ok = bool(value <= tol)
    if not ok:
        manifest.breaches.append({"quantity": name, "value": float(value), "tolerance": tol})
    return ok


# subcommands ------------------------------------------------------------------

def _prepare(cfg, manifest, cache):
    with manifest.stage("basis"):
        basis, cached = load_basis(cfg, cache)
    manifest.cached = cached
    manifest.basis_hash = basis.content_hash()
    manifest.error_budgets["eigen_orthonormality"] = float(basis.ortho_defect)
    return basis


def cmd_spectrum(cfg, out, cache, manifest):
    basis = _prepare(cfg, manifest, cache)
    rows = zip(range(1, basis.K + 1), basis.eigenvalues)
    write_csv(Path(out) / "spectrum.csv", ["k", "lambda_k"], rows, manifest)
    manifest.results["K"] = basis.K


def cmd_weyl(cfg, out, cache, manifest):
    basis = _prepare(cfg, manifest, cache)
    with manifest.stage("weyl"):
        path = Path(out) / "weyl.csv"
        weyl.write_weyl_csv(basis, path)
        manifest.outputs[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
        ratio = weyl.weyl_ratio(basis, basis.K)
        manifest.results["final_ratio"] = ratio
        manifest.results["counting_slope"] = weyl.counting_slope(basis) if basis.K > 1 else None
        manifest.results["expected_slope"] = basis.dimension / 2
    tol = cfg.tolerances["weyl_2d" if basis.dimension == 2 else "weyl_3d"]
    _check(manifest, "weyl_ratio_deviation", abs(ratio - 1), tol)


def cmd_localweyl(cfg, out, cache, manifest):
    basis = _prepare(cfg, manifest, cache)
    sym = quantization.preset(cfg.symbol, cfg.domain)
    with manifest.stage("phase_space_integral"):
        rhs = quantization.phase_space_integral(sym, cfg.domain)
    rows = []
    path_tol = cfg.tolerances["path_agreement"]
    worst = 0.0
    with manifest.stage("cesaro"):
        for N in cfg.N:
            direct = quantization.cesaro_average_direct(basis, sym, N)
            wig = quantization.cesaro_average_wigner(basis, sym, N)
            err = abs(direct - rhs)
            rel = err / abs(rhs) if rhs else err
            gap = abs(direct - wig)
            status = "OK" if gap <= path_tol else "WARN"
            rows.append((N, direct, wig, rhs, err, rel, gap, status))
            worst = max(worst, rel)
    write_csv(Path(out) / "localweyl.csv",
              ["N", "lhs_direct", "lhs_wigner", "rhs", "abs_err", "rel_err", "path_gap",
               "status"], rows, manifest)
    manifest.results["max_rel_err"] = worst
    manifest.tolerances["path_agreement"] = path_tol
    _check(manifest, "localweyl_rel_err", rows[-1][5], cfg.tolerances["localweyl_rel"])


def cmd_correlation(cfg, out, cache, manifest):
    basis = _prepare(cfg, manifest, cache)
    dom = cfg.domain
    sub = compact_subset(dom, cfg.x_margin)
    xs = corr.default_x_samples(dom, cfg.x_margin, cfg.x_per_axis)
    ylat = corr.YLattice(dom.dimension, cfg.y_extent, cfg.y_spacing)
    rows, last = [], None
    with manifest.stage("fields"):
        for N in cfg.N:
            if cfg.m == 1:
                Q = corr.one_body_matrix(basis, N, xs, ylat)
                P = corr.pair_correlation(Q)
                rho = corr.one_body_density(basis, N, xs)
                q_vals, q_lim = Q, corr.limit_Q(dom, ylat)
                p_lim = corr.limit_P(dom, ylat)
            else:
                system = fermi.shell_fill(basis.eigenvalues, N, cfg.m, cfg.filling, cfg.seed)
                Qs = fermi.spin_one_body(basis, system, xs, ylat)
                P = fermi.spin_pair_correlation(Qs)
                rho = fermi.spin_density(basis, system, xs)
                q_vals = corr.CorrelationField("Q", N, Qs.x_samples, Qs.values[:, 0, 0],
                                               ylat, None, cfg.m, None, Qs.metadata)
                q_lim = fermi.limit_Q_spin(dom, cfg.m, ylat)
                p_lim = fermi.limit_P_spin(dom, cfg.m, ylat)
            eq = corr.error_norms(q_vals, q_lim, sub)
            ep = corr.error_norms(P, p_lim, sub)
            rho_dev = float(np.mean(np.abs(rho.values - 1.0 / dom.volume)))
            ident = corr.l2_norm_squared(basis, N) if cfg.m == 1 else float("nan")
            rows.append((N, cfg.m, eq.sup_on_compact, eq.L1_global, eq.L2_global,
                         ep.sup_on_compact, rho_dev, ident))
            last = (N, q_vals, q_lim, P, p_lim, rho)
    write_csv(Path(out) / "correlation.csv",
              ["N", "m", "sup_Q", "L1_Q", "L2_Q", "sup_P", "mean_abs_rho_dev", "l2_identity"],
              rows, manifest)
    # a cut of the largest-N fields along the first y axis, plus the density
    N, q_vals, q_lim, P, p_lim, rho = last
    pts = ylat.points
    on_axis = np.all(pts[:, 1:] == 0, axis=1) & (pts[:, 0] >= 0)
    frows = []
    for i, x in enumerate(q_vals.x_samples):
        for j in np.flatnonzero(on_axis):
            frows.append((i, *x, pts[j, 0], q_vals.values[i, j], q_lim[j], P.values[i, j],
                          p_lim[j]))
    xcols = [f"x{k + 1}" for k in range(dom.dimension)]
    write_csv(Path(out) / "correlation_fields.csv",
              ["x_index", *xcols, "y1", "Q_N", "Q_limit", "P_N", "P_limit"], frows, manifest)
    write_csv(Path(out) / "density.csv", ["x_index", *xcols, "rho"],
              [(i, *x, r) for i, (x, r) in enumerate(zip(rho.x_samples, rho.values))], manifest)
    md = q_vals.metadata
    if "interpolation_error_budget" in md:
        manifest.error_budgets["interpolation"] = md["interpolation_error_budget"]
    manifest.error_budgets["y_truncation_tail"] = corr.limit_Q_tail(dom, cfg.y_extent)
    key = "correlation_sup_grid" if basis.representation == "grid" else "correlation_sup_analytic"
    manifest.results["sup_Q"] = rows[-1][2]
    _check(manifest, "correlation_sup", rows[-1][2], cfg.tolerances[key])


def _exchange_box(cfg):
    lo, hi = cfg.domain.bbox
    A_lo = np.array(cfg.exchange_lo) if cfg.exchange_lo else lo + 0.25 * (hi - lo)
    A_hi = np.array(cfg.exchange_hi) if cfg.exchange_hi else hi - 0.25 * (hi - lo)
    if np.any(A_lo < lo) or np.any(A_hi > hi) or np.any(A_hi <= A_lo):
        raise ConfigError("exchange region A must be a box inside the domain")
    return A_lo, A_hi


def cmd_exchange(cfg, out, cache, manifest):
    dom = cfg.domain
    if dom.dimension != 3:
        raise DimensionUnsupported("the exchange energy is implemented for n = 3 only")
    A_lo, A_hi = _exchange_box(cfg)
    area = float(np.prod(A_hi - A_lo))
    rows = []
    if cfg.exchange_mode == "limit":
        R = cfg.radial_extent or 50.0
        radial = fermi.RadialLattice(cfg.radial_spacing, R, cfg.n_theta)
        vals = fermi.limit_P_spin(dom, cfg.m, radial.points)
        P = corr.CorrelationField("P_spin", 0, ((A_lo + A_hi) / 2)[None], vals[None], None,
                                  radial.points, cfg.m, np.array([area]))
        with manifest.stage("exchange"):
            res = fermi.exchange_energy(P, radial=radial)
        lda = fermi.c_x(cfg.m) * dom.volume ** (-4.0 / 3.0) * area
        gap = abs(res.value / -lda - 1)
        rows.append(("limit", cfg.m, "", "", res.value, lda, gap))
        manifest.error_budgets["exchange_tail"] = res.tail_bound
        tol = cfg.tolerances["exchange_limit"]
    elif cfg.skip_heavy:
        log.warning("run.skip_heavy is set: basis-mode exchange skipped")
        manifest.results["skipped"] = "skip_heavy"
        write_csv(Path(out) / "exchange.csv", ["N", "m", "a_N", "b_N", "E_x", "LDA", "rel_gap"],
                  [], manifest)
        return
    else:
        basis = _prepare(cfg, manifest, cache)
        margin = float(min(np.min(A_lo - dom.bbox[0]), np.min(dom.bbox[1] - A_hi)))
        for N in cfg.N:
            system = fermi.shell_fill(basis.eigenvalues, N, cfg.m, cfg.filling, cfg.seed)
            s = N ** (-1.0 / 3.0)
            R = 2 * margin / s  # keeps every coordinate of x +- s y / 2 inside the box
            if cfg.radial_extent:
                R = min(R, cfg.radial_extent)
            radial = fermi.RadialLattice(cfg.radial_spacing, R, cfg.n_theta)
            with manifest.stage(f"exchange_N{N}"):
                if basis.representation == "analytic" and system.spin_diagonal:
                    P = fermi.averaged_spin_pair_correlation(basis, system, (A_lo, A_hi), radial)
                    rho = fermi.spin_density_quadrature(basis, system, (A_lo, A_hi))
                else:
                    g, w = np.polynomial.legendre.leggauss(cfg.x_order)
                    axes = [A_lo[i] + (A_hi[i] - A_lo[i]) * (g + 1) / 2 for i in range(3)]
                    wts = [w * (A_hi[i] - A_lo[i]) / 2 for i in range(3)]
                    xs = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
                    wx = np.einsum("i,j,k->ijk", *wts).ravel()
                    Pf = fermi.spin_pair_correlation(
                        fermi.spin_one_body(basis, system, xs, radial.points))
                    P = corr.CorrelationField("P_spin", N, xs, Pf.values, None, radial.points,
                                              cfg.m, wx, Pf.metadata)
                    rho = fermi.spin_density_quadrature(basis, system, (A_lo, A_hi), order=24)
                res = fermi.exchange_energy(P, radial=radial)
                lda = fermi.lda_exchange(rho, m=cfg.m)
            gap = abs(res.value / -lda - 1)
            rows.append((N, cfg.m, system.a_N, system.b_N, res.value, lda, gap))
            manifest.error_budgets[f"exchange_tail_N{N}"] = res.tail_bound
            manifest.results[f"ratio_to_uniform_lda_N{N}"] = res.value / (
                -fermi.c_x(cfg.m) * dom.volume ** (-4.0 / 3.0) * area)
        tol = cfg.tolerances["exchange_basis"]
    write_csv(Path(out) / "exchange.csv", ["N", "m", "a_N", "b_N", "E_x", "LDA", "rel_gap"],
              rows, manifest)
    manifest.results["rel_gap"] = rows[-1][-1]
    _check(manifest, "exchange_rel_gap", rows[-1][-1], tol)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "weyl": cmd_weyl,
    "localweyl": cmd_localweyl,
    "correlation": cmd_correlation,
    "exchange": cmd_exchange,
}


# entry point ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fermiweyl", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", help="output directory (overrides run.out)")
    p.add_argument("--cache", help="eigenbasis cache directory (overrides run.cache)")
    p.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--check", action="store_true",
                   help="exit with status 4 if a result breaches its tolerance")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(command, cfg, out, cache=None, check=False):
    """Run one subcommand; returns ``(exit_code, manifest)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command, cfg.content_hash(), seed=cfg.seed,
                           tolerances=dict(cfg.tolerances))
    COMMANDS[command](cfg, out, cache, manifest)
    write_manifest(out, manifest)
    if check and manifest.breaches:
        for b in manifest.breaches:
            log.error("tolerance breach: %(quantity)s = %(value).6g > %(tolerance).3g", b)
        return EXIT_CHECK, manifest
    return EXIT_OK, manifest


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.text += f"\n# seed override {args.seed}\n"
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        out = args.out or cfg.out
        cache = args.cache or cfg.cache
        with _thread_limit(args.threads):
            code, _ = run(args.command, cfg, out, cache, args.check)
        return code
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
