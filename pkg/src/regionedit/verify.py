"""Oracle and invariant checks runnable from the command line (``regionedit verify``).

Each check returns ``(ok, detail)``.  Instances are small so the whole table
runs in well under a minute on one core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import jacobian as jac
from . import linalg, models, oracles, schedule as sch
from .config import RunConfig, build_mask, build_model, build_schedule
from .masks import Mask, rect_mask, region_mse
from .pipeline import EditPlan, generate, invert
from .rng import Rng


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _gapped_matrix(rng: Rng, rows: int, cols: int, k: int, min_gap: float = 1e-3):
    while True:
        a = rng.fill_gaussian((rows, cols))
        s = np.linalg.svd(a, compute_uv=False)[: k + 1]
        if len(s) <= k or np.min((s[:-1] - s[1:]) / s[:-1]) >= min_gap:
            return a


def check_power_vs_jacobi(cfg):
    rng = Rng(cfg["seed"], stream=20)
    worst_s, worst_a = 0.0, 0.0
    for rows, cols in ((64, 16), (200, 32), (512, 64)):
        a = _gapped_matrix(rng, rows, cols, 4)
        res = linalg.power_iteration_topk(jac.explicit_gram(a), cols, 4, tol=1e-20, max_iters=50000, rng=rng)
        s, vt = oracles.jacobi_svd(a)
        worst_s = max(worst_s, float(np.max(np.abs(res.singular_values - s[:4]) / s[:4])))
        for v, w in zip(res.right_vectors, vt[:4]):
            worst_a = max(worst_a, float(oracles.principal_angles(v[None], w[None]).max()))
    return worst_s <= 1e-8 and worst_a <= 1e-6, f"rel sv err {worst_s:.2e}, max angle {worst_a:.2e} rad"


def check_gram_orthonormal(cfg):
    rng = Rng(cfg["seed"], stream=21)
    a = rng.fill_gaussian((40, 12))
    res = linalg.power_iteration_topk(jac.explicit_gram(a), 12, 6, tol=cfg["discovery.tol"], rng=rng)
    err = float(np.max(np.abs(res.right_vectors @ res.right_vectors.T - np.eye(6))))
    return err <= 1e-10, f"max |V V^T - I| = {err:.2e}"


def check_projection_idempotent(cfg):
    rng = Rng(cfg["seed"], stream=22)
    basis = linalg.orthonormalize(list(rng.fill_gaussian((4, 10))))
    v = rng.gaussians(10)
    once = linalg.project_complement(v, basis)
    twice = linalg.project_complement(once, basis)
    err = float(np.max(np.abs(once - twice)))
    return err <= 1e-12, f"|P(Pv) - Pv| = {err:.2e}"


def check_gram_linear(cfg):
    rng = Rng(cfg["seed"], stream=23)
    a = rng.fill_gaussian((30, 8))
    g = jac.explicit_gram(a)
    u, v = rng.gaussians(8), rng.gaussians(8)
    err = float(np.max(np.abs(g(2.0 * u - 3.0 * v) - (2.0 * g(u) - 3.0 * g(v)))))
    return err <= 1e-10, f"linearity residual {err:.2e}"


def check_step_inverse(cfg):
    s = build_schedule(cfg).with_eta(0.0)
    rng = Rng(cfg["seed"], stream=24)
    worst = 0.0
    for t in range(s.T):
        x, e = rng.fill_gaussian((1, 4, 4)), rng.fill_gaussian((1, 4, 4))
        back = sch.reverse_step(s, t + 1, sch.ddim_invert_step(s, t, x, e), e).x_prev
        worst = max(worst, float(np.max(np.abs(back - x))))
    return worst <= 1e-10, f"max round-trip error {worst:.2e}"


def check_asymmetric_identity(cfg):
    s = build_schedule(cfg).with_eta(0.0)
    rng = Rng(cfg["seed"], stream=25)
    worst = 0.0
    for t in range(1, s.T + 1):
        x, e, d = (rng.fill_gaussian((1, 4, 4)) for _ in range(3))
        asym = sch.reverse_step(s, t, x, e + d, e).x_prev
        sym = sch.reverse_step(s, t, x, e, e).x_prev
        a, ap = s.alpha_bar[t], s.alpha_bar[t - 1]
        want = -np.sqrt(ap) * np.sqrt(1 - a) / np.sqrt(a) * d
        worst = max(worst, float(np.max(np.abs((asym - sym) - want))))
    return worst <= 1e-12, f"max deviation {worst:.2e}"


def check_sigma_ddpm(cfg):
    s = build_schedule(cfg)
    s1 = s.with_eta(1.0)
    worst = 0.0
    for t in range(2, s.T + 1):
        beta = s.betas[t - 1]
        post = np.sqrt(beta * (1 - s.alpha_bar[t - 1]) / (1 - s.alpha_bar[t]))
        worst = max(worst, abs(sch.sigma_t(s1, t) - post) / post)
    return worst <= 1e-10, f"max rel deviation {worst:.2e}"


def check_deterministic_sampling(cfg):
    s = build_schedule(cfg).with_eta(0.0)
    model = build_model(cfg, s)
    x_T = Rng(cfg["seed"], stream=26).fill_gaussian(model.image_shape)
    a, b = generate(model, s, x_T), generate(model, s, x_T)
    return bool(np.array_equal(a, b)), "bit-identical" if np.array_equal(a, b) else "runs differ"


def _derivative_identity(model, s, x, t, rng):
    v = rng.gaussians(model.d_h)
    v /= np.linalg.norm(v)
    h0 = model.extract_h(x, t)
    d = 1e-5 * (np.linalg.norm(h0) + 1)
    e_p, e_m = model.eval(x, t, h=h0 + d * v), model.eval(x, t, h=h0 - d * v)
    dp = (sch.p_term(s, t, x, e_p) - sch.p_term(s, t, x, e_m)) / (2 * d)
    de = (e_p - e_m) / (2 * d)
    a = s.alpha_bar[t]
    return float(np.max(np.abs(dp + np.sqrt(1 - a) / np.sqrt(a) * de)))


def check_derivative_identity(cfg):
    s = build_schedule(cfg).with_eta(0.0)
    rng = Rng(cfg["seed"], stream=27)
    worst = 0.0
    backends = [models.blob_analytic_model(s, cfg.image_shape, cfg["model.d_h"], cfg["model.s2"]),
                build_model(cfg, s)]
    if cfg["backend"] == "analytic":
        backends[1] = models.init_random(cfg["model.seed"], 8, (1, 8, 8), (4, 8), s.T)
    for model in backends:
        for t in (max(1, s.T // 5), s.T // 2, s.T):
            x = rng.fill_gaussian(model.image_shape)
            worst = max(worst, _derivative_identity(model, s, x, t, rng))
    return worst <= 1e-8, f"max elementwise deviation {worst:.2e}"


def check_analytic_affine(cfg):
    s = build_schedule(cfg)
    model = models.blob_analytic_model(s, cfg.image_shape, cfg["model.d_h"], cfg["model.s2"])
    rng = Rng(cfg["seed"], stream=28)
    x = rng.fill_gaussian(model.image_shape)
    h1, h2 = rng.gaussians(model.d_h), rng.gaussians(model.d_h)
    t = s.T // 2
    lhs = model.eval(x, t, h=h1) + model.eval(x, t, h=h2) - model.eval(x, t, h=np.zeros(model.d_h))
    err = float(np.max(np.abs(lhs - model.eval(x, t, h=h1 + h2))))
    return err <= 1e-12, f"affinity residual {err:.2e}"


def check_analytic_jacobian(cfg):
    s = build_schedule(cfg)
    model = models.blob_analytic_model(s, cfg.image_shape, cfg["model.d_h"], cfg["model.s2"])
    x = Rng(cfg["seed"], stream=29).fill_gaussian(model.image_shape)
    mask = Mask(np.ones(model.image_shape[1:]))
    worst = 0.0
    for t in (1, s.T // 2, s.T):
        spec = jac.MaskedJacobianSpec(model, t, x, mask, fd_step=cfg["discovery.fd_step"])
        worst = max(worst, float(np.max(np.abs(spec.jacobian(None) - model.jacobian(t)))))
    return worst <= 1e-6, f"max |J_fd - J_closed| = {worst:.2e}"


def check_fd_slope(cfg):
    s = build_schedule(cfg)
    model = models.init_random(cfg["model.seed"], 8, (1, 8, 8), (4, 8), s.T)
    rng = Rng(cfg["seed"], stream=30)
    x = rng.fill_gaussian(model.image_shape)
    t = s.T // 2
    v = rng.gaussians(model.d_h)
    v /= np.linalg.norm(v)
    h0 = model.extract_h(x, t)
    exact = oracles.complex_step_jvp(model.decode, h0, v)
    steps = np.array([1e-3, 1e-4, 1e-5])
    errs = []
    for d in steps:
        spec = jac.MaskedJacobianSpec(model, t, x, rect_mask(8, 8, 0, 0, 8, 8), h_base=h0, fd_step=d)
        errs.append(np.max(np.abs(jac.fd_jvp(spec, v, region=None) - exact)))
    slope = float(np.polyfit(np.log(steps), np.log(errs), 1)[0])
    return abs(slope - 2.0) <= 0.2, f"log-log slope {slope:.3f} vs complex-step oracle"


def check_orthogonality(cfg):
    s = build_schedule(cfg)
    model = build_model(cfg, s)
    mask = build_mask(cfg)
    x = Rng(cfg["seed"], stream=31).fill_gaussian(model.image_shape)
    t = s.T // 2
    spec = jac.MaskedJacobianSpec(model, t, x, mask, fd_step=cfg["discovery.fd_step"], jobs=cfg["jobs"])
    ds = jac.discover(spec, cfg["discovery.k"], "subspace", cfg["discovery.k_u"], cfg["discovery.tol"],
                      cfg["discovery.max_iters"], Rng(cfg["seed"], stream=32))
    if len(ds.complement_basis) == 0:
        return True, "complement basis empty"
    worst = float(np.max(np.abs(ds.directions @ ds.complement_basis.T)))
    return worst <= 1e-8, f"max |<dir, v_u>| = {worst:.2e} over {ds.unmasked_rank} complement vectors"


def _block_model(s, d_in=4, d_both=6):
    """Analytic model whose first ``d_in`` columns live inside rect (4,4,8,8) of a 16x16 frame."""
    rng = Rng(5, stream=40)
    inside = rect_mask(16, 16, 4, 4, 8, 8).bits.ravel()
    cols = [rng.gaussians(256) * inside for _ in range(d_in)]
    cols += [rng.gaussians(256) for _ in range(d_both)]
    W = np.stack(cols, axis=1) * 0.2
    return models.AnalyticGaussianModel(np.zeros((1, 16, 16)), W, 1.0, s), rect_mask(16, 16, 4, 4, 8, 8)


def check_oracle_equivalence(cfg):
    s = build_schedule(cfg)
    model, mask = _block_model(s)
    x = Rng(cfg["seed"], stream=33).fill_gaussian(model.image_shape)
    t = s.T // 2
    spec = jac.MaskedJacobianSpec(model, t, x, mask)
    ds = jac.discover(spec, 3, "none", tol=1e-20, max_iters=50000, rng=Rng(1))
    dense = mask.flat(1)[:, None] * model.jacobian(t)
    sv, _ = oracles.jacobi_svd(dense)
    err = float(np.max(np.abs(ds.singular_values - sv[:3]) / sv[:3]))
    return err <= 1e-6, f"rel sv err vs dense {err:.2e} (top value = max masked response)"


def check_suppression(cfg):
    s = build_schedule(cfg)
    model, mask = _block_model(s)
    x = Rng(cfg["seed"], stream=34).fill_gaussian(model.image_shape)
    t = s.T // 2
    spec = jac.MaskedJacobianSpec(model, t, x, mask)
    J = model.jacobian(t)
    ju = (1 - mask.flat(1))[:, None] * J
    rank = int(np.linalg.matrix_rank(ju))
    outs = []
    for k_u in range(1, rank + 1):
        ds = jac.discover(spec, 1, "subspace", k_u, tol=1e-14, rng=Rng(2))
        outs.append(jac.leakage_report(spec, ds[0]).out_mask_norm)
    bound = 1e-6 * np.linalg.norm(J, 2)
    return outs[-1] <= bound, f"out-of-mask response at k_u=rank({rank}): {outs[-1]:.2e} (bound {bound:.2e})"


def check_inversion(cfg):
    s = build_schedule(cfg).with_eta(0.0)
    model, _ = _block_model(s)
    x0 = model.sample_x0(Rng(cfg["seed"], stream=35))
    traj = invert(model, s, x0, cfg["inversion.refine"])
    rec = generate(model, s, traj.x(s.T))
    rms = float(np.sqrt(np.mean((rec - x0) ** 2)))
    return rms <= 1e-3, f"reconstruction RMS {rms:.2e}"


def check_window_locality(cfg):
    s = build_schedule(cfg).with_eta(0.0)
    model, mask = _block_model(s)
    x_T = Rng(cfg["seed"], stream=36).fill_gaussian(model.image_shape)
    t_hi, t_lo = cfg.window()
    plan = EditPlan(np.eye(model.d_h)[0], 1.0, t_hi, t_lo)
    _, a = generate(model, s, x_T, plan, record=True)
    _, b = generate(model, s, x_T, None, record=True)
    same = all(np.array_equal(a.x(t), b.x(t)) for t in range(t_hi, s.T + 1))
    moved = not np.array_equal(a.x(0), b.x(0))
    return same and moved, f"states for t >= {t_hi} identical: {same}; final image moved: {moved}"


def check_asym_vs_sym(cfg):
    s = build_schedule(cfg).with_eta(0.0)
    model, _ = _block_model(s)
    x_T = Rng(cfg["seed"], stream=37).fill_gaussian(model.image_shape)
    t_hi, t_lo = cfg.window()
    base = generate(model, s, x_T)
    d = np.eye(model.d_h)[0]
    da = np.linalg.norm(generate(model, s, x_T, EditPlan(d, 0.1, t_hi, t_lo, "asymmetric")) - base)
    ds = np.linalg.norm(generate(model, s, x_T, EditPlan(d, 0.1, t_hi, t_lo, "symmetric")) - base)
    return ds < da, f"|sym - base| = {ds:.3e} < |asym - base| = {da:.3e}"


def check_mse_identity(cfg):
    rng = Rng(cfg["seed"], stream=38)
    worst = 0.0
    for _ in range(100):
        a, b = rng.fill_gaussian((2, 8, 8)), rng.fill_gaussian((2, 8, 8))
        bits = (rng.uniforms(64) < 0.5).astype(float).reshape(8, 8)
        bits[0, 0], bits[0, 1] = 1.0, 0.0
        m = Mask(bits)
        r = region_mse(a, b, m)
        c = m.coverage
        worst = max(worst, abs(r.mse_global - (c * r.mse_in + (1 - c) * r.mse_out)))
    return worst <= 1e-12, f"max deviation {worst:.2e}"


def check_rng(cfg):
    a, b = Rng(cfg["seed"], 0), Rng(cfg["seed"], 0)
    same = np.array_equal(a.gaussians(10000), b.gaussians(10000))
    g = Rng(cfg["seed"], 1).gaussians(100000)
    ok = same and abs(g.mean()) <= 0.02 and abs(g.var() - 1) <= 0.03
    return ok, f"reproducible {same}, mean {g.mean():+.4f}, var {g.var():.4f}"


def check_weights(cfg):
    if cfg["backend"] != "tinynet" or not cfg["model.weights"]:
        return True, "no weights file configured"
    m = models.load_weights(cfg["model.weights"])
    return True, f"loaded {cfg['model.weights']} (d_h={m.d_h})"


CHECKS: list[tuple[str, Callable]] = [
    ("weights file loads", check_weights),
    ("power iteration matches Jacobi SVD", check_power_vs_jacobi),
    ("right vectors orthonormal", check_gram_orthonormal),
    ("complement projection idempotent", check_projection_idempotent),
    ("Gram action linear", check_gram_linear),
    ("invert/reverse step exact inverses", check_step_inverse),
    ("asymmetric displacement identity", check_asymmetric_identity),
    ("sigma(eta=1) equals DDPM posterior std", check_sigma_ddpm),
    ("eta=0 sampling deterministic", check_deterministic_sampling),
    ("dP/dh = -sqrt(1-ab)/sqrt(ab) d eps/dh", check_derivative_identity),
    ("analytic predictor affine in h", check_analytic_affine),
    ("fd Jacobian matches closed form", check_analytic_jacobian),
    ("central difference error O(step^2)", check_fd_slope),
    ("subspace directions orthogonal to J_u", check_orthogonality),
    ("mode none matches dense masked SVD", check_oracle_equivalence),
    ("out-of-mask response suppressed at k_u=rank", check_suppression),
    ("inversion round trip", check_inversion),
    ("edit window leaves earlier states untouched", check_window_locality),
    ("symmetric injection moves less than asymmetric", check_asym_vs_sym),
    ("region MSE coverage identity", check_mse_identity),
    ("rng reproducible with normal statistics", check_rng),
]


def run_checks(cfg: RunConfig) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(cfg)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
