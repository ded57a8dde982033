import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from regionedit import jacobian as jac
from regionedit import models
from regionedit.cli import main
from regionedit.config import SCHEMA, ConfigError, RunConfig
from regionedit.pipeline import load_trajectory


def _write_cfg(tmp_path, text="", name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _tsv(path):
    lines = Path(path).read_text().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln.split("\t") for ln in lines if not ln.startswith("#")]
    return comments, body[0], body[1:]


def _snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.is_file()}


# ---------------------------------------------------------------- config


def test_config_defaults_round_trip():
    cfg = RunConfig.from_pairs({})
    again = RunConfig.parse(cfg.dumps())
    assert again.values == cfg.values
    assert set(cfg.values) == set(SCHEMA)


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ConfigError, match="unknown config keys: discovery.kk"):
        RunConfig.parse("discovery.kk = 3\n")
    with pytest.raises(ConfigError, match="discovery.k: cannot parse"):
        RunConfig.parse("discovery.k = three\n")
    with pytest.raises(ConfigError, match="line 2: expected key = value"):
        RunConfig.parse("# comment\nnonsense\n")
    with pytest.raises(ConfigError, match="duplicate key seed"):
        RunConfig.parse("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="projection_mode"):
        RunConfig.parse("discovery.projection_mode = sideways\n")
    with pytest.raises(ConfigError, match="window"):
        RunConfig.parse("edit.t_hi = 10\nedit.t_lo = 20\n")
    with pytest.raises(ConfigError, match="fd_step"):
        RunConfig.parse("discovery.fd_step = 0.5\n")
    with pytest.raises(ConfigError, match="n_confined"):
        RunConfig.parse("model.n_confined = 17\n")


def test_config_overrides_win():
    cfg = RunConfig.parse("seed = 1\nout = a\n", {"seed": "9", "out": "b"})
    assert cfg["seed"] == 9 and cfg["out"] == "b"


# ---------------------------------------------------------------- discover


def test_discover_smoke_and_determinism(tmp_path):
    out = tmp_path / "o"
    assert main(["discover", "--out", str(out)]) == 0
    comments, header, rows = _tsv(out / "leakage.tsv")
    assert header == ["index", "singular_value", "in_norm", "out_norm", "ratio", "converged"]
    assert len(rows) == 3
    assert all(np.isfinite(float(r[4])) for r in rows)
    assert "# seed = 0" in comments and any(c.startswith("# discovery.k = 3") for c in comments)
    ds = jac.load_directions(out / "directions.rbed")
    assert ds.k == 3 and ds.projection_mode is jac.ProjectionMode.SUBSPACE
    assert "discovery.projection_mode = subspace" in (out / "directions.rbed.config").read_text()
    first = _snapshot(out)
    assert main(["discover", "--out", str(out)]) == 0
    assert _snapshot(out) == first


def test_discover_seed_override_changes_metadata(tmp_path):
    assert main(["discover", "--out", str(tmp_path / "a"), "--seed", "4"]) == 0
    assert "# seed = 4" in (tmp_path / "a" / "leakage.tsv").read_text()


# ---------------------------------------------------------------- edit


def test_edit_outputs_and_metrics(tmp_path):
    cfg = _write_cfg(tmp_path, "edit.alphas = -0.1,-0.05,0,0.05,0.1\n")
    out = tmp_path / "e"
    assert main(["edit", "--config", str(cfg), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"original.ppm", "recon.ppm", "edit_alpha_-0.1.ppm", "edit_alpha_+0.05.ppm", "metrics.tsv"} <= names
    comments, header, rows = _tsv(out / "metrics.tsv")
    assert header == ["alpha", "mse_global", "mse_in", "mse_out"]
    assert any("[0,1] pixel scale" in c for c in comments)
    vals = {float(r[0]): [float(v) for v in r[1:]] for r in rows}
    assert set(vals) == {0.0, -0.1, -0.05, 0.05, 0.1}
    # alpha=0 row is reconstruction error only
    assert max(vals[0.0]) < 1e-6
    # mse_in strictly increasing in |alpha|
    assert vals[0.0][1] < vals[0.05][1] < vals[0.1][1]
    assert vals[0.0][1] < vals[-0.05][1] < vals[-0.1][1]
    assert (out / "recon.ppm").read_bytes().startswith(b"P6\n# regionedit edit\n# seed = 0\n")
    first = _snapshot(out)
    assert main(["edit", "--config", str(cfg), "--out", str(out)]) == 0
    assert _snapshot(out) == first


def test_edit_with_direction_file(tmp_path):
    d = tmp_path / "d"
    assert main(["discover", "--out", str(d)]) == 0
    cfg = _write_cfg(tmp_path, f"edit.directions = {d / 'directions.rbed'}\nedit.direction_index = 1\n")
    assert main(["edit", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 0


def test_edit_locality_subspace_vs_none(tmp_path):
    """At matched mse_in, projected directions leave the outside less changed."""
    from regionedit.config import build_input, build_mask, build_model, build_schedule

    res = {}
    for mode in ("none", "subspace"):
        cfg = RunConfig.from_pairs({"discovery.projection_mode": mode, "edit.alphas": "0.05"})
        s = build_schedule(cfg)
        m = build_model(cfg, s)
        mask = build_mask(cfg)
        x0 = build_input(cfg, m, s)
        # rescale alpha so the in-mask response equals 0.1 rms in model units
        from regionedit.pipeline import run_edit

        out = run_edit(m, s, x0, mask, alpha_list=(0.05,), projection_mode=mode)
        inside = mask.bits[None] == 1
        d = out.images[1][1] - out.images[0][1]
        scale = 0.1 / np.sqrt(np.mean(d[inside] ** 2))
        p = _write_cfg(tmp_path, f"discovery.projection_mode = {mode}\nedit.alphas = {float(0.05 * scale)!r}\n",
                       f"{mode}.cfg")
        assert main(["edit", "--config", str(p), "--out", str(tmp_path / mode)]) == 0
        _, _, rows = _tsv(tmp_path / mode / "metrics.tsv")
        res[mode] = [float(v) for v in rows[1][1:]]
    # metrics are against the original, so the matched mse_in also carries the small reconstruction error
    assert res["none"][1] == pytest.approx(res["subspace"][1], rel=1e-3)
    assert res["subspace"][2] < res["none"][2]


# ---------------------------------------------------------------- invert / verify / errors


def test_invert_writes_trajectory(tmp_path):
    out = tmp_path / "i"
    assert main(["invert", "--out", str(out), "--seed", "3"]) == 0
    traj = load_trajectory(out / "trajectory.rbet")
    assert traj.T == 50 and len(traj.ts) == 51
    assert "seed = 3" in (out / "trajectory.rbet.config").read_text()


def test_verify_default_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_verify_loose_tol_still_orthogonal(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "discovery.tol = 1e-2\n")
    assert main(["verify", "--config", str(cfg)]) == 0
    assert "PASS  subspace directions orthogonal" in capsys.readouterr().out


def test_verify_tinynet_weights(tmp_path, capsys):
    w = tmp_path / "w.rbew"
    models.save_weights(models.init_random(1, 16), w)
    cfg = _write_cfg(tmp_path, f"backend = tinynet\nmodel.weights = {w}\n")
    assert main(["verify", "--config", str(cfg)]) == 0
    capsys.readouterr()
    data = bytearray(w.read_bytes())
    w.write_bytes(bytes(data[:300]))
    assert main(["verify", "--config", str(cfg)]) == 1
    err = capsys.readouterr().err
    assert "first failing invariant: weights file loads" in err
    assert "truncated while reading layer" in err and "expected" in err


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "bogus = 1\n")
    assert main(["discover", "--config", str(cfg)]) == 2
    assert "unknown config keys: bogus" in capsys.readouterr().err


def test_missing_mask_file_exit_code(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, f"mask.pgm = {tmp_path / 'nope.pgm'}\n")
    assert main(["edit", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "nope.pgm" in capsys.readouterr().err


def test_pgm_mask_and_image_inputs(tmp_path):
    from regionedit.masks import rect_mask, save_image_ppm, save_mask_pgm

    save_mask_pgm(rect_mask(16, 16, 2, 2, 5, 9), tmp_path / "m.pgm")
    save_image_ppm(np.zeros((1, 16, 16)), tmp_path / "in.ppm")
    cfg = _write_cfg(tmp_path, f"mask.pgm = {tmp_path / 'm.pgm'}\ninput.image = {tmp_path / 'in.ppm'}\n")
    assert main(["edit", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 0


def test_tinynet_discover(tmp_path):
    cfg = _write_cfg(tmp_path, "backend = tinynet\ndiscovery.k = 2\njobs = 2\n")
    assert main(["discover", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    _, _, rows = _tsv(tmp_path / "t" / "leakage.tsv")
    assert len(rows) == 2


def test_demo_outputs(tmp_path):
    out = tmp_path / "demo"
    assert main(["demo", "--out", str(out)]) == 0
    _, header, rows = _tsv(out / "demo_metrics.tsv")
    assert header == ["mode", "alpha", "mse_in", "mse_out", "leakage_ratio", "k_u"]
    none = [float(r[3]) for r in rows if r[0] == "none"]
    sub = [float(r[3]) for r in rows if r[0] == "subspace"]
    assert max(sub) < min(none)
    assert (out / "strip.ppm").exists() and (out / "mask.pgm").exists()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "regionedit", "discover", "--out", str(tmp_path / "m")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
