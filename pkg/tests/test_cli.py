import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fermiweyl import cli
from fermiweyl.errors import ConfigError, KTooLarge, NTooLarge
from fermiweyl.geometry import DomainSpec

SQUARE = """
[domain]
kind = square
[basis]
K = 600
[run]
N = 128, 512
symbol = product
[sampling]
y_extent = 4
y_spacing = 0.2
x_margin = 0.15
x_per_axis = 3
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(tmp_path, command, text, *extra):
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    return cli.main([command, "--config", cfg, "--out", str(out), *extra]), out


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_spectrum_and_manifest(tmp_path):
    code, out = _run(tmp_path, "spectrum", SQUARE)
    assert code == 0
    rows = _rows(out / "spectrum.csv")
    assert rows[0] == ["k", "lambda_k"] and len(rows) == 601
    assert float(rows[1][1]) == pytest.approx(2 * np.pi**2, rel=1e-15)
    man = json.loads((out / "spectrum.manifest.json").read_text())
    for key in ("config_hash", "basis_hash", "tool_version", "seed", "error_budgets",
                "stage_seconds", "outputs", "results", "tolerances"):
        assert key in man
    assert set(man["outputs"]) == {"spectrum.csv"}
    assert man["tolerances"] == cli.DEFAULT_TOLERANCES


def test_weyl_command(tmp_path):
    code, out = _run(tmp_path, "weyl", SQUARE.replace("K = 600", "K = 4096"))
    assert code == 0
    man = json.loads((out / "weyl.manifest.json").read_text())
    assert abs(man["results"]["final_ratio"] - 1) <= 0.03


def test_localweyl_command(tmp_path):
    code, out = _run(tmp_path, "localweyl", SQUARE)
    assert code == 0
    rows = _rows(out / "localweyl.csv")
    assert rows[0] == ["N", "lhs_direct", "lhs_wigner", "rhs", "abs_err", "rel_err", "path_gap",
                       "status"]
    assert [r[-1] for r in rows[1:]] == ["OK", "OK"]
    assert all(float(r[6]) <= 1e-6 for r in rows[1:])


def test_correlation_command(tmp_path):
    code, out = _run(tmp_path, "correlation", SQUARE)
    assert code == 0
    rows = _rows(out / "correlation.csv")
    assert [int(r[0]) for r in rows[1:]] == [128, 512]
    assert all(abs(float(r[-1]) - 1) <= 1e-6 for r in rows[1:])
    assert (out / "correlation_fields.csv").exists() and (out / "density.csv").exists()


def test_correlation_spin(tmp_path):
    text = SQUARE.replace("symbol = product", "symbol = product\nm = 2\nfilling = random\nseed = 3")
    code, out = _run(tmp_path, "correlation", text)
    assert code == 0
    rows = _rows(out / "correlation.csv")
    assert rows[1][1] == "2" and rows[1][-1] == "nan"


def test_determinism(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir(), b.mkdir()
    for d in (a, b):
        code, out = _run(d, "correlation", SQUARE)
        assert code == 0
    for name in ("correlation.csv", "correlation_fields.csv", "density.csv"):
        assert (a / "out" / name).read_bytes() == (b / "out" / name).read_bytes()


def test_exchange_limit(tmp_path):
    text = "[domain]\nkind = cube\n[run]\nm = 2\n[exchange]\nmode = limit\n" \
           "radial_spacing = 0.01\nradial_extent = 50\nn_theta = 2\n"
    code, out = _run(tmp_path, "exchange", text, "--check")
    assert code == 0
    row = _rows(out / "exchange.csv")[1]
    assert float(row[4]) == pytest.approx(-0.738559 * 0.125, abs=1e-4)


def test_exchange_basis_small(tmp_path):
    text = ("[domain]\nkind = cube\n[basis]\nK = 1100\n[run]\nN = 2048\nm = 2\n"
            "[exchange]\nmode = basis\nA_lo = 0.4, 0.4, 0.4\nA_hi = 0.6, 0.6, 0.6\n"
            "radial_spacing = 0.1\nn_theta = 4\n")
    code, out = _run(tmp_path, "exchange", text, "--check")
    assert code == 0
    N, m, a, b, E, lda, gap = _rows(out / "exchange.csv")[1]
    assert (N, m, a, b) == ("2048", "2", "1024", "0")
    assert float(E) < 0 < float(lda) and float(gap) <= 0.10


def test_exchange_tail_exit_code(tmp_path):
    # with A = (0.25, 0.75)^3 and N = 256 the reachable radius is too short
    text = ("[domain]\nkind = cube\n[basis]\nK = 400\n[run]\nN = 256\nm = 2\n"
            "[exchange]\nmode = basis\n")
    code, out = _run(tmp_path, "exchange", text)
    assert code == cli.EXIT_NUMERIC and not (out / "exchange.csv").exists()


def test_exchange_skip_heavy(tmp_path):
    text = ("[domain]\nkind = cube\n[basis]\nK = 2400\n[run]\nN = 4096\nm = 2\n"
            "skip_heavy = true\n[exchange]\nmode = basis\n")
    code, out = _run(tmp_path, "exchange", text, "--check")
    assert code == 0
    assert _rows(out / "exchange.csv") == [["N", "m", "a_N", "b_N", "E_x", "LDA", "rel_gap"]]
    assert json.loads((out / "exchange.manifest.json").read_text())["results"]["skipped"] == "skip_heavy"


def test_exchange_rejects_2d(tmp_path):
    code, _ = _run(tmp_path, "exchange", "[domain]\nkind = square\n[exchange]\nmode = limit\n")
    assert code == cli.EXIT_CONFIG


def test_check_flag_breach(tmp_path):
    text = SQUARE + "[tolerances]\nlocalweyl_rel = 1e-9\n"
    code, out = _run(tmp_path, "localweyl", text, "--check")
    assert code == cli.EXIT_CHECK
    man = json.loads((out / "localweyl.manifest.json").read_text())
    assert man["breaches"][0]["quantity"] == "localweyl_rel_err"
    code, _ = _run(tmp_path, "localweyl", text)
    assert code == 0  # breaches only change the exit status under --check


def test_config_errors(tmp_path):
    bad = {
        "nodomain": "[run]\nN = 4\n",
        "bc": "[domain]\nkind = square\n[basis]\nbc = robin\n",
        "analytic_disk": "[domain]\nkind = disk\nradius = 1\n",
        "symbol": "[domain]\nkind = square\n[run]\nsymbol = nope\n",
        "tolerance": "[domain]\nkind = square\n[tolerances]\nmystery = 1\n",
    }
    for name, text in bad.items():
        with pytest.raises(ConfigError):
            cli.RunConfig.from_text(text)
        code, _ = _run(tmp_path, "spectrum", text)
        assert code == cli.EXIT_CONFIG, name
    assert cli.main(["spectrum", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_CONFIG


def test_k_too_large(tmp_path):
    text = "[domain]\nkind = square\n[basis]\nsource = grid\nresolution = 10\nK = 500\n"
    with pytest.raises(KTooLarge):
        cli.RunConfig.from_text(text)
    code, out = _run(tmp_path, "spectrum", text)
    assert code == cli.EXIT_CONFIG and not (out / "spectrum.csv").exists()


def test_n_too_large():
    with pytest.raises(NTooLarge):
        cli.RunConfig.from_text("[domain]\nkind = square\n[basis]\nK = 10\n[run]\nN = 11\n")
    cli.RunConfig.from_text("[domain]\nkind = square\n[basis]\nK = 10\n[run]\nN = 20\nm = 2\n")


def test_domain_kinds():
    texts = {
        "rectangle": "kind = rectangle\nlengths = 1, 2",
        "box": "kind = box\nlengths = 1, 1, 2",
        "disk": "kind = disk\nradius = 0.5\ncenter = 0.5, 0.5",
        "ball": "kind = ball\nradius = 0.5",
        "l_shape": "kind = l_shape\nouter = 1, 1\nnotch = 0.5, 0.5",
        "polygon": "kind = polygon\nvertices = 0 0; 1 0; 0 1",
    }
    for kind, body in texts.items():
        cfg = cli.RunConfig.from_text(
            f"[domain]\n{body}\n[basis]\nsource = grid\nresolution = 20\nK = 5\n[run]\nN = 4\n")
        assert cfg.domain.volume > 0, kind


def test_cache_hit_and_roundtrip(tmp_path):
    cache = tmp_path / "cache"
    text = "[domain]\nkind = l_shape\nouter = 1, 1\nnotch = 0.5, 0.5\n" \
           "[basis]\nsource = grid\nresolution = 24\nK = 12\n[run]\nN = 4\n"
    cfg = cli.RunConfig.from_text(text)
    b1, hit1 = cli.load_basis(cfg, cache)
    b2, hit2 = cli.load_basis(cfg, cache)
    assert (hit1, hit2) == (False, True)
    assert np.array_equal(b1.eigenvalues, b2.eigenvalues)
    assert np.array_equal(b1.vectors, b2.vectors)
    assert b1.content_hash() == b2.content_hash()
    assert len(list(cache.glob("*.fwb"))) == 1
    acfg = cli.RunConfig.from_text(SQUARE)
    a1, _ = cli.load_basis(acfg, cache)
    a2, hit = cli.load_basis(acfg, cache)
    assert hit and np.array_equal(a1.modes, a2.modes) and a1.content_hash() == a2.content_hash()


def test_cache_rejects_other_domain(tmp_path):
    cfg = cli.RunConfig.from_text(SQUARE)
    basis = cli.compute_basis(cfg)
    path = tmp_path / "x.fwb"
    cli.write_cache(path, basis, 0)
    with pytest.raises(ConfigError):
        cli.read_cache(path, DomainSpec.rectangle((1.0, 2.0)))
    path.write_bytes(b"JUNK" + path.read_bytes()[4:])
    with pytest.raises(ConfigError):
        cli.read_cache(path, cfg.domain)


def test_cache_via_main(tmp_path):
    cfg = _write(tmp_path, SQUARE)
    args = ["spectrum", "--config", cfg, "--cache", str(tmp_path / "c")]
    assert cli.main(args + ["--out", str(tmp_path / "o1")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "o2"), "--threads", "1"]) == 0
    m1 = json.loads((tmp_path / "o1" / "spectrum.manifest.json").read_text())
    m2 = json.loads((tmp_path / "o2" / "spectrum.manifest.json").read_text())
    assert (m1["cached"], m2["cached"]) == (False, True)
    assert m1["outputs"] == m2["outputs"]


def test_seed_override(tmp_path):
    code, out = _run(tmp_path, "spectrum", SQUARE, "--seed", "9")
    assert code == 0
    assert json.loads((out / "spectrum.manifest.json").read_text())["seed"] == 9


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, SQUARE)
    res = subprocess.run([sys.executable, "-m", "fermiweyl.cli", "spectrum", "--config", cfg,
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.ini")),
                         ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    cfg = cli.RunConfig.from_file(path)
    assert cfg.out.startswith("out/")
