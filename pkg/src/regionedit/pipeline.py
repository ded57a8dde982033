"""Invert an image, find directions at a reference timestep, regenerate with the shift."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import jacobian as jac
from .fileio import FormatError, Reader, Writer, atomic_write
from .masks import Mask
from .rng import Rng
from .schedule import Schedule, ddim_invert_step, reverse_step

INJECTIONS = ("asymmetric", "symmetric")


def default_window(T: int) -> tuple[int, int]:
    t_hi = max(1, int(round(0.8 * T)))
    return t_hi, min(int(round(0.4 * T)), t_hi - 1)


@dataclass(frozen=True, eq=False)
class EditPlan:
    """Shift ``alpha * gain[t] * direction`` applied for ``t_lo < t <= t_hi``.

    ``direction`` is one h-vector, or a ``[T+1, d_h]`` table for per-timestep
    directions.  ``per_t_gain`` (if given) is indexed by ``t``.
    """

    direction: np.ndarray
    alpha: float
    t_hi: int
    t_lo: int
    injection: str = "asymmetric"
    per_t_gain: tuple | None = None

    def validate(self, s: Schedule):
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if not s.T >= self.t_hi > self.t_lo >= 0:
            raise ValueError(f"edit window ({self.t_lo}, {self.t_hi}] outside schedule 0..{s.T}")
        if self.injection not in INJECTIONS:
            raise ValueError(f"injection must be one of {INJECTIONS}")
        if self.per_t_gain is not None and len(self.per_t_gain) != s.T + 1:
            raise ValueError(f"per_t_gain needs T+1={s.T + 1} entries")
        d = np.asarray(self.direction)
        if d.ndim == 2 and d.shape[0] != s.T + 1:
            raise ValueError(f"per-timestep direction table needs T+1={s.T + 1} rows")

    def in_window(self, t: int) -> bool:
        return self.t_lo < t <= self.t_hi

    def shift(self, t: int) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        if d.ndim == 2:
            d = d[t]
        gain = 1.0 if self.per_t_gain is None else float(self.per_t_gain[t])
        return self.alpha * gain * d


@dataclass(frozen=True, eq=False)
class Trajectory:
    ts: tuple
    xs: np.ndarray  # [len(ts), C, H, W]
    hs: np.ndarray  # [len(ts), d_h]
    seed: int
    T: int

    def x(self, t: int) -> np.ndarray:
        return self.xs[self.ts.index(t)]

    def h(self, t: int) -> np.ndarray:
        return self.hs[self.ts.index(t)]


def invert(model, s: Schedule, x0, refine: int = 1) -> Trajectory:
    """Deterministic DDIM inversion ``x_0 -> x_T``, recording ``x_t`` and ``h_t``.

    The step ``t -> t+1`` is the exact inverse of the sampler's step ``t+1 -> t``
    only if it uses ``eps(x_{t+1}, t+1)``.  The first guess evaluates the
    predictor at ``x_t`` with label ``t+1``; each of ``refine`` fixed-point
    passes re-evaluates it at the provisional ``x_{t+1}``.
    """
    if s.eta != 0.0:
        raise ValueError("inversion requires eta = 0")
    if refine < 0:
        raise ValueError("refine must be >= 0")
    x = np.asarray(x0, dtype=np.float64)
    xs, hs = [x], [model.extract_h(x, 0)]
    for t in range(s.T):
        eps = model.eval(x, t + 1)
        for _ in range(refine):
            eps = model.eval(ddim_invert_step(s, t, x, eps), t + 1)
        x = ddim_invert_step(s, t, x, eps)
        xs.append(x)
        hs.append(model.extract_h(x, t + 1))
    return Trajectory(tuple(range(s.T + 1)), np.stack(xs), np.stack(hs), 0, s.T)


def generate(model, s: Schedule, x_T, plan: EditPlan | None = None, seed: int = 0,
             record: bool = False):
    """Run the reverse process from ``x_T``; returns ``x_0`` (and the trajectory if ``record``).

    Inside the plan's window, the noise estimate with the h-shift feeds the
    predicted-image channel while the unshifted estimate feeds the direction
    channel (``asymmetric``), or the shifted one feeds both (``symmetric``).
    """
    if plan is not None:
        plan.validate(s)
    rng = Rng(seed, stream=1)
    x = np.asarray(x_T, dtype=np.float64)
    if x.shape != tuple(model.image_shape):
        raise ValueError(f"x_T shape {x.shape} != model image shape {model.image_shape}")
    xs = {s.T: x}
    hs = {s.T: model.extract_h(x, s.T)} if record else {}
    for t in range(s.T, 0, -1):
        eps_d = model.eval(x, t)
        eps_p = eps_d
        if plan is not None and plan.in_window(t) and plan.alpha != 0.0:
            eps_p = model.eval(x, t, delta_h=plan.shift(t))
            if plan.injection == "symmetric":
                eps_d = eps_p
        z = rng.fill_gaussian(x.shape) if s.eta > 0 else None
        x = reverse_step(s, t, x, eps_p, eps_d, z).x_prev
        if record:
            xs[t - 1] = x
            hs[t - 1] = model.extract_h(x, t - 1)
    if not record:
        return x
    ts = tuple(sorted(xs))
    return x, Trajectory(ts, np.stack([xs[t] for t in ts]), np.stack([hs[t] for t in ts]), seed, s.T)


@dataclass(frozen=True, eq=False)
class EditOutcome:
    images: list  # [(alpha, image)], alpha 0 first
    trajectory: Trajectory
    directions: jac.DirectionSet
    plan_window: tuple
    t_ref: int
    direction: np.ndarray


def discover_at(model, traj: Trajectory, mask: Mask, t: int, k: int = 3, projection_mode="subspace",
                k_u: int | None = None, fd_step: float = 1e-4, tol: float = 1e-9, max_iters: int = 10000,
                seed: int = 0, jobs: int = 1) -> jac.DirectionSet:
    spec = jac.MaskedJacobianSpec(model, t, traj.x(t), mask, h_base=traj.h(t), fd_step=fd_step, jobs=jobs)
    return jac.discover(spec, k, projection_mode, k_u, tol, max_iters, Rng(seed, stream=2))


def run_edit(model, s: Schedule, x0, mask: Mask, k: int = 3, alpha_list=(1.0,), window=None,
             projection_mode="subspace", k_u: int | None = None, direction_index: int = 0,
             injection: str = "asymmetric", fd_step: float = 1e-4, tol: float = 1e-9,
             max_iters: int = 10000, seed: int = 0, per_t_discovery: bool = False,
             per_t_gain=None, directions: jac.DirectionSet | None = None, jobs: int = 1,
             refine: int = 1) -> EditOutcome:
    t_hi, t_lo = default_window(s.T) if window is None else window
    if not s.T >= t_hi > t_lo >= 0:
        raise ValueError(f"edit window ({t_lo}, {t_hi}] outside schedule 0..{s.T}")
    t_ref = (t_hi + t_lo + 1) // 2
    traj = invert(model, s, x0, refine)
    kw = dict(k=k, projection_mode=projection_mode, k_u=k_u, fd_step=fd_step, tol=tol,
              max_iters=max_iters, seed=seed, jobs=jobs)
    if directions is None:
        directions = discover_at(model, traj, mask, t_ref, **kw)
    if not 0 <= direction_index < directions.k:
        raise ValueError(f"direction_index {direction_index} outside 0..{directions.k - 1}")
    ref = directions[direction_index]
    direction = ref
    if per_t_discovery:
        table = np.zeros((s.T + 1, model.d_h))
        for t in range(t_lo + 1, t_hi + 1):
            d = discover_at(model, traj, mask, t, **kw)[direction_index]
            table[t] = d if d @ ref >= 0 else -d
        direction = table
    x_T = traj.x(s.T)
    images = [(0.0, generate(model, s, x_T, None, seed))]
    for alpha in alpha_list:
        if alpha == 0.0:
            continue
        plan = EditPlan(direction, float(alpha), t_hi, t_lo, injection,
                        None if per_t_gain is None else tuple(per_t_gain))
        images.append((float(alpha), generate(model, s, x_T, plan, seed)))
    return EditOutcome(images, traj, directions, (t_hi, t_lo), t_ref, ref)


def edit(model, s: Schedule, x0, mask: Mask, k: int = 3, alpha_list=(1.0,), window=None,
         projection_mode="subspace", **kw) -> list:
    """``[(alpha, image)]`` with the alpha=0 reconstruction first."""
    return run_edit(model, s, x0, mask, k, alpha_list, window, projection_mode, **kw).images


# ---------------------------------------------------------------- trajectory cache

TRAJECTORY_MAGIC = b"RBET"
TRAJECTORY_VERSION = 1


def save_trajectory(traj: Trajectory, path):
    w = Writer()
    w.u32(TRAJECTORY_VERSION, traj.T)
    w.u64(traj.seed)
    w.u32(len(traj.ts), *traj.ts)
    w.u32(*traj.xs.shape[1:], traj.hs.shape[1])
    for x, h in zip(traj.xs, traj.hs):
        w.f64(x)
        w.f64(h)
    atomic_write(path, w.framed(TRAJECTORY_MAGIC))


def load_trajectory(path) -> Trajectory:
    r = Reader(Path(path).read_bytes(), TRAJECTORY_MAGIC, what=f"trajectory file {path}")
    version = r.u32("version")
    if version != TRAJECTORY_VERSION:
        raise FormatError(f"trajectory file {path}: unsupported version {version}")
    T = r.u32("T")
    seed = r.u64("seed")
    n = r.u32("stored count")
    ts = tuple(r.u32("stored t", n)) if n > 1 else ((r.u32("stored t"),) if n else ())
    C, H, W, d_h = r.u32("tensor dims", 4)
    xs, hs = [], []
    for t in ts:
        xs.append(r.f64((C, H, W), f"x[{t}]"))
        hs.append(r.f64((d_h,), f"h[{t}]"))
    r.finish()
    return Trajectory(ts, np.stack(xs), np.stack(hs), seed, T)
