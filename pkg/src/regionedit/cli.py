"""``regionedit`` command line: discover, edit, invert, verify, demo."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import jacobian as jac
from .config import ConfigError, RunConfig, build_input, build_mask, build_model, build_schedule
from .fileio import FormatError, atomic_write_text
from .masks import region_mse, save_image_ppm, save_mask_pgm
from .pipeline import EditPlan, generate, invert, run_edit, save_trajectory
from .rng import Rng

MSE_SCALE = "[0,1] pixel scale"


def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".12g")


def write_tsv(path, columns, rows, cfg: RunConfig, command: str, notes=()):
    head = [f"# regionedit {command}", f"# seed = {cfg['seed']}", *(f"# {n}" for n in notes),
            *(f"# {line}" for line in cfg.lines())]
    body = ["\t".join(columns)] + ["\t".join(_fmt(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(head + body) + "\n")


def write_sidecar(path, cfg: RunConfig, command: str):
    atomic_write_text(str(path) + ".config", f"# regionedit {command}\n# seed = {cfg['seed']}\n" + cfg.dumps())


def _image_comments(cfg, command, extra=()):
    return [f"regionedit {command}", f"seed = {cfg['seed']}", *extra, *cfg.lines()]


def _setup(cfg: RunConfig):
    s = build_schedule(cfg)
    model = build_model(cfg, s)
    mask = build_mask(cfg)
    x0 = build_input(cfg, model, s)
    return s, model, mask, x0


def _discovery_kw(cfg):
    return dict(k=cfg["discovery.k"], projection_mode=cfg["discovery.projection_mode"],
                k_u=cfg["discovery.k_u"], tol=cfg["discovery.tol"], max_iters=cfg["discovery.max_iters"])


def _reference_spec(cfg, model, s, mask, x0):
    t_hi, t_lo = cfg.window()
    t_ref = (t_hi + t_lo + 1) // 2
    traj = invert(model, s, x0, cfg["inversion.refine"])
    spec = jac.MaskedJacobianSpec(model, t_ref, traj.x(t_ref), mask, h_base=traj.h(t_ref),
                                  fd_step=cfg["discovery.fd_step"], jobs=cfg["jobs"])
    return spec, traj


def cmd_discover(cfg: RunConfig) -> int:
    out = Path(cfg["out"])
    s, model, mask, x0 = _setup(cfg)
    spec, _ = _reference_spec(cfg, model, s, mask, x0)
    ds = jac.discover(spec, rng=Rng(cfg["seed"], stream=2), **_discovery_kw(cfg))
    rows = []
    for i in range(ds.k):
        lk = jac.leakage_report(spec, ds[i])
        rows.append([i, ds.singular_values[i], lk.in_mask_norm, lk.out_mask_norm,
                     "inf" if lk.in_zero else lk.ratio, ds.converged[i]])
    jac.save_directions(ds, out / "directions.rbed")
    write_sidecar(out / "directions.rbed", cfg, "discover")
    notes = [f"t_ref = {spec.t}", f"unmasked_rank = {ds.unmasked_rank}"]
    if ds.fallback:
        notes.append(f"warning = {ds.fallback}")
    write_tsv(out / "leakage.tsv", ["index", "singular_value", "in_norm", "out_norm", "ratio", "converged"],
              rows, cfg, "discover", notes)
    print(f"wrote {ds.k} directions (t={spec.t}, mode={ds.projection_mode.value}, "
          f"k_u={ds.unmasked_rank}) to {out}")
    return 0


def _scaled_mse(a, b, mask):
    # model pixels live in [-1, 1]; halving the difference maps to [0, 1]
    return region_mse(a / 2.0, b / 2.0, mask)


def cmd_edit(cfg: RunConfig) -> int:
    out = Path(cfg["out"])
    s, model, mask, x0 = _setup(cfg)
    directions = jac.load_directions(cfg["edit.directions"]) if cfg["edit.directions"] else None
    if directions is not None and directions.d_h != model.d_h:
        raise ConfigError(f"direction file {cfg['edit.directions']}: d_h {directions.d_h} != model {model.d_h}")
    res = run_edit(model, s, x0, mask, alpha_list=cfg["edit.alphas"], window=cfg.window(),
                   direction_index=cfg["edit.direction_index"], injection=cfg["edit.injection"],
                   fd_step=cfg["discovery.fd_step"], seed=cfg["seed"], per_t_discovery=cfg["discovery.per_t"],
                   directions=directions, jobs=cfg["jobs"], refine=cfg["inversion.refine"],
                   **_discovery_kw(cfg))
    save_image_ppm(x0, out / "original.ppm", _image_comments(cfg, "edit", ["image = original"]))
    rows = []
    for alpha, img in res.images:
        name = "recon.ppm" if alpha == 0.0 else f"edit_alpha_{alpha:+g}.ppm"
        save_image_ppm(img, out / name, _image_comments(cfg, "edit", [f"alpha = {alpha!r}"]))
        r = _scaled_mse(img, x0, mask)
        rows.append([alpha, r.mse_global, r.mse_in, r.mse_out])
    write_tsv(out / "metrics.tsv", ["alpha", "mse_global", "mse_in", "mse_out"], rows, cfg, "edit",
              [f"mse scale = {MSE_SCALE}, reference = original image", f"t_ref = {res.t_ref}"])
    print(f"wrote {len(res.images)} images and metrics.tsv to {out}")
    return 0


def cmd_invert(cfg: RunConfig) -> int:
    out = Path(cfg["out"])
    s, model, _, x0 = _setup(cfg)
    traj = invert(model, s, x0, cfg["inversion.refine"])
    save_trajectory(traj, out / "trajectory.rbet")
    write_sidecar(out / "trajectory.rbet", cfg, "invert")
    save_image_ppm(x0, out / "original.ppm", _image_comments(cfg, "invert"))
    print(f"wrote trajectory with {len(traj.ts)} states to {out}")
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    from .verify import run_checks

    t0 = time.perf_counter()
    results = run_checks(cfg)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<{width}}  {r.seconds:6.2f}s  {r.detail}")
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    if failed:
        print(f"first failing invariant: {failed[0].name}: {failed[0].detail}", file=sys.stderr)
        return 1
    return 0


def _upscale(img, f=8):
    return np.repeat(np.repeat(img, f, axis=1), f, axis=2)


def cmd_demo(cfg: RunConfig, target_rms: float = 0.15) -> int:
    """Analytic backend end to end: subspace vs unprojected edits at matched in-mask change."""
    if cfg["backend"] != "analytic":
        raise ConfigError("demo runs on the analytic backend only")
    out = Path(cfg["out"])
    s, model, mask, x0 = _setup(cfg)
    spec, traj = _reference_spec(cfg, model, s, mask, x0)
    t_hi, t_lo = cfg.window()
    x_T = traj.x(s.T)
    recon = generate(model, s, x_T, None, cfg["seed"])
    m3 = mask.bits[None] == 1.0
    rows, panels = [], [x0, recon]
    kw = _discovery_kw(cfg)
    for mode in ("none", "subspace"):
        kw["projection_mode"] = mode
        ds = jac.discover(spec, rng=Rng(cfg["seed"], stream=2), **kw)
        d = ds[cfg["edit.direction_index"]]
        lk = jac.leakage_report(spec, d)
        probe = generate(model, s, x_T, EditPlan(d, 1.0, t_hi, t_lo, cfg["edit.injection"]), cfg["seed"])
        rms_in = float(np.sqrt(np.mean((probe - recon)[m3] ** 2)))
        alpha = target_rms / rms_in
        for sign in (-1.0, 1.0):
            img = generate(model, s, x_T, EditPlan(d, sign * alpha, t_hi, t_lo, cfg["edit.injection"]),
                           cfg["seed"])
            save_image_ppm(img, out / f"{mode}_alpha_{sign * alpha:+.4f}.ppm",
                           _image_comments(cfg, "demo", [f"mode = {mode}", f"alpha = {sign * alpha!r}"]))
            r = _scaled_mse(img, recon, mask)
            rows.append([mode, sign * alpha, r.mse_in, r.mse_out, lk.ratio, ds.unmasked_rank])
            panels.append(img)
    save_image_ppm(x0, out / "original.ppm", _image_comments(cfg, "demo"))
    save_image_ppm(recon, out / "recon.ppm", _image_comments(cfg, "demo"))
    save_mask_pgm(mask, out / "mask.pgm", _image_comments(cfg, "demo"))
    strip = np.concatenate([_upscale(p) for p in panels], axis=2)
    save_image_ppm(strip, out / "strip.ppm",
                   _image_comments(cfg, "demo", ["panels = original, recon, none-, none+, subspace-, subspace+"]))
    write_tsv(out / "demo_metrics.tsv", ["mode", "alpha", "mse_in", "mse_out", "leakage_ratio", "k_u"], rows,
              cfg, "demo", [f"mse scale = {MSE_SCALE}, reference = reconstruction",
                            f"matched in-mask RMS change = {target_rms} (model pixel units)"])
    sub = [r for r in rows if r[0] == "subspace"]
    non = [r for r in rows if r[0] == "none"]
    print(f"demo written to {out}: mean mse_out none={np.mean([r[3] for r in non]):.3e} "
          f"subspace={np.mean([r[3] for r in sub]):.3e} at matched in-mask change")
    return 0


COMMANDS = {"discover": cmd_discover, "edit": cmd_edit, "invert": cmd_invert, "verify": cmd_verify,
            "demo": cmd_demo}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value run config")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--out", type=str, help="override output directory")
    parser = argparse.ArgumentParser(prog="regionedit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None)
    return parser


def load_config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.config is not None:
        return RunConfig.load(args.config, overrides)
    return RunConfig.from_pairs(overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, FormatError, ValueError, OSError, jac.JacobianError) as exc:
        print(f"regionedit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
