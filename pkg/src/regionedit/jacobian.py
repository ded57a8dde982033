"""Masked Jacobians of the noise predictor w.r.t. ``h`` and edit-direction discovery.

The masked Jacobian ``J_m`` is the Jacobian of ``eps * mask``; ``J_u`` is the
same for the complement ``1 - mask``.  :func:`discover` looks for unit
``v`` that make ``|J_m v|`` large while keeping ``|J_u v|`` small:

* ``none``: top right singular vectors of ``J_m``.
* ``subspace``: top right singular vectors of ``J_m P`` where ``P`` projects
  out the leading right singular vectors of ``J_u``.  First-order response
  outside the mask along the retained complement directions is exactly zero.
* ``frobenius``: the rank-one correction ``J_m - <J_m,J_u>_F / <J_u,J_u>_F J_u``.
  When ``J_m`` and ``J_u`` come from one mask and its complement their rows
  are disjoint, the Frobenius product vanishes, and this reduces to ``none``.
"""

from __future__ import annotations

import enum
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import linalg
from .fileio import FormatError, Reader, Writer, atomic_write
from .masks import Mask
from .rng import Rng

FD_STEP_RANGE = (1e-8, 1e-2)
ENERGY_FRACTION = 0.99
# singular values below this fraction of the largest count as numerical zero
RANK_TOL = 1e-8


class JacobianError(RuntimeError):
    pass


class ProjectionMode(str, enum.Enum):
    NONE = "none"
    FROBENIUS = "frobenius"
    SUBSPACE = "subspace"

    @property
    def code(self) -> int:
        return _MODE_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "ProjectionMode":
        for mode, c in _MODE_CODES.items():
            if c == code:
                return mode
        raise FormatError(f"unknown projection mode code {code}")


_MODE_CODES = {ProjectionMode.NONE: 0, ProjectionMode.FROBENIUS: 1, ProjectionMode.SUBSPACE: 2}


@dataclass(frozen=True, eq=False)
class MaskedJacobianSpec:
    """Where and how to differentiate: model, timestep, image, base ``h``, mask.

    ``fd_step`` is relative; the absolute central-difference step is
    ``fd_step * (|h_base| + 1)``.
    """

    model: object
    t: int
    x_t: np.ndarray
    mask: Mask
    h_base: np.ndarray | None = None
    fd_step: float = 1e-4
    jobs: int = 1

    def __post_init__(self):
        x_t = np.asarray(self.x_t, dtype=np.float64)
        if x_t.shape != tuple(self.model.image_shape):
            raise ValueError(f"x_t shape {x_t.shape} != model image shape {self.model.image_shape}")
        if x_t.shape[1:] != self.mask.shape:
            raise ValueError(f"mask shape {self.mask.shape} != image H,W {x_t.shape[1:]}")
        if not FD_STEP_RANGE[0] <= self.fd_step <= FD_STEP_RANGE[1]:
            raise ValueError(f"fd_step {self.fd_step} outside {FD_STEP_RANGE}")
        h = self.model.extract_h(x_t, self.t) if self.h_base is None else np.asarray(self.h_base, dtype=np.float64)
        if h.shape != (self.model.d_h,):
            raise ValueError(f"h_base must have length {self.model.d_h}")
        object.__setattr__(self, "x_t", x_t)
        object.__setattr__(self, "h_base", h)

    @property
    def d_h(self) -> int:
        return self.model.d_h

    @property
    def delta(self) -> float:
        return self.fd_step * (float(np.linalg.norm(self.h_base)) + 1.0)

    def region(self, which: str | None) -> np.ndarray | None:
        """Flat 0/1 weights for ``'mask'``, ``'complement'``; ``None`` for the whole image."""
        if which is None:
            return None
        flat = self.mask.flat(self.x_t.shape[0])
        if which == "mask":
            return flat
        if which == "complement":
            return 1.0 - flat
        raise ValueError(f"unknown region {which!r}")

    def eps(self, h) -> np.ndarray:
        return self.model.eval(self.x_t, self.t, h=h)

    @cached_property
    def columns(self) -> np.ndarray:
        """Unmasked finite-difference Jacobian, one column per basis vector of ``h``."""
        basis = np.eye(self.d_h)
        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                cols = list(pool.map(lambda e: fd_jvp(self, e, region=None), basis))
        else:
            cols = [fd_jvp(self, e, region=None) for e in basis]
        out = np.stack([c.ravel() for c in cols], axis=1)
        out.setflags(write=False)
        return out

    def jacobian(self, region: str | None = "mask") -> np.ndarray:
        w = self.region(region)
        return self.columns if w is None else w[:, None] * self.columns


def fd_jvp(spec: MaskedJacobianSpec, v, region: str | None = "mask") -> np.ndarray:
    """Central-difference directional derivative of the (masked) predictor, image-shaped."""
    v = np.asarray(v, dtype=np.float64)
    nv = float(np.linalg.norm(v))
    if nv < 1e-14:
        raise ValueError(f"fd_jvp needs a non-zero direction, got norm {nv:.3g}")
    delta = spec.delta
    step = (delta / nv) * v
    out = (spec.eps(spec.h_base + step) - spec.eps(spec.h_base - step)) * (nv / (2.0 * delta))
    if not np.all(np.isfinite(out)):
        raise JacobianError(f"non-finite Jacobian-vector product at t={spec.t}, fd_step={spec.fd_step}")
    w = spec.region(region)
    return out if w is None else out * w.reshape(out.shape)


def fd_vjp(spec: MaskedJacobianSpec, u, region: str | None = "mask") -> np.ndarray:
    """``J^T u`` from the cached finite-difference columns."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != spec.x_t.shape:
        raise ValueError(f"u shape {u.shape} != image shape {spec.x_t.shape}")
    return spec.jacobian(region).T @ u.ravel()


def explicit_gram(J: np.ndarray):
    J = np.ascontiguousarray(J, dtype=np.float64)
    Jt = np.ascontiguousarray(J.T)
    return lambda v: linalg.gram_apply(lambda x: linalg.matvec(J, x), lambda y: linalg.matvec(Jt, y), v)


@dataclass(frozen=True, eq=False)
class DirectionSet:
    directions: np.ndarray  # (k, d_h)
    singular_values: np.ndarray
    t: int
    projection_mode: ProjectionMode
    unmasked_rank: int
    converged: tuple | None  # None when read back from disk
    complement_basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    complement_singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fallback: str | None = None

    @property
    def k(self) -> int:
        return len(self.singular_values)

    @property
    def d_h(self) -> int:
        return self.directions.shape[1]

    def __getitem__(self, i) -> np.ndarray:
        return self.directions[i]


def complement_basis(ju: np.ndarray, k_u: int | None, tol: float, max_iters: int, rng: Rng,
                     k_max: int | None = None):
    """Leading right singular vectors of ``J_u`` to project out.

    ``k_u=None`` picks the smallest count whose captured energy reaches 99% of
    ``|J_u|_F^2`` (column norms give the total), capped at ``k_max``.
    Numerically-zero singular values are never retained.
    """
    d_h = ju.shape[1]
    k_max = d_h if k_max is None else k_max
    total = float(np.sum(np.linalg.norm(ju, axis=0) ** 2))
    if total == 0.0:
        return np.zeros((0, d_h)), np.zeros(0), True
    if k_u is not None and not 1 <= k_u <= d_h:
        raise ValueError(f"k_u must lie in [1, {d_h}], got {k_u}")
    vecs, lams, conv = [], [], []
    captured = 0.0
    for lam, v, ok, _ in linalg.power_pairs(explicit_gram(ju), d_h, tol, max_iters, rng, scale=total):
        if lams and lam <= (RANK_TOL ** 2) * lams[0]:
            break
        if not lams and lam == 0.0:
            break
        vecs.append(v)
        lams.append(lam)
        conv.append(ok)
        captured += lam
        if k_u is not None and len(vecs) >= k_u:
            break
        if k_u is None and (captured >= ENERGY_FRACTION * total or len(vecs) >= k_max):
            break
    return np.array(vecs).reshape(-1, d_h), np.sqrt(np.array(lams)), all(conv)


def discover_jacobians(jm, ju, k: int = 3, projection_mode="subspace", k_u: int | None = None,
                       tol: float = 1e-9, max_iters: int = 10000, rng: Rng | None = None,
                       t: int = 0) -> DirectionSet:
    """Direction discovery on explicit masked / complement Jacobians."""
    mode = ProjectionMode(projection_mode)
    jm = np.asarray(jm, dtype=np.float64)
    ju = np.asarray(ju, dtype=np.float64)
    if jm.ndim != 2 or jm.shape[1] != ju.shape[1]:
        raise ValueError(f"J_m {jm.shape} and J_u {ju.shape} must share the h dimension")
    d_h = jm.shape[1]
    if not 1 <= k <= d_h:
        raise ValueError(f"need 1 <= k <= {d_h}, got {k}")
    rng = rng if rng is not None else Rng(0, stream=3)
    basis = np.zeros((0, d_h))
    basis_sv = np.zeros(0)
    fallback = None
    restrict = None

    scale = float(np.sum(jm * jm))
    if mode is ProjectionMode.NONE:
        op = explicit_gram(jm)
    elif mode is ProjectionMode.SUBSPACE:
        if k_u is not None and k_u > d_h - k:
            raise ValueError(f"k_u={k_u} leaves fewer than k={k} of d_h={d_h} directions to search")
        # the automatic choice always leaves room for k directions
        basis, basis_sv, _ = complement_basis(ju, k_u, tol, max_iters, rng, k_max=d_h - k)
        op = linalg.projector_gram(explicit_gram(jm), basis)
        if len(basis):
            restrict = lambda v: linalg.project_complement(v, basis)  # noqa: E731
    else:
        nn = float(np.sum(ju * ju))
        if nn <= 1e-28 * max(scale, 1e-300):
            fallback = "J_u numerically zero; frobenius projection skipped"
            warnings.warn(fallback, RuntimeWarning, stacklevel=2)
            op = explicit_gram(jm)
        else:
            J = jm - (float(np.sum(jm * ju)) / nn) * ju
            scale = float(np.sum(J * J))
            op = explicit_gram(J)

    pairs = []
    for pair in linalg.power_pairs(op, d_h, tol, max_iters, rng, restrict=restrict, scale=scale):
        pairs.append(pair)
        if len(pairs) == k:
            break
    res = linalg._to_result(pairs)
    return DirectionSet(
        directions=res.right_vectors.reshape(-1, d_h),
        singular_values=res.singular_values,
        t=int(t),
        projection_mode=mode,
        unmasked_rank=len(basis),
        converged=tuple(bool(c) for c in res.converged),
        complement_basis=basis,
        complement_singular_values=basis_sv,
        fallback=fallback,
    )


def discover(spec: MaskedJacobianSpec, k: int = 3, projection_mode="subspace", k_u: int | None = None,
             tol: float = 1e-9, max_iters: int = 10000, rng: Rng | None = None) -> DirectionSet:
    if spec.mask.coverage == 0.0:
        raise ValueError("mask selects no pixels")
    return discover_jacobians(spec.jacobian("mask"), spec.jacobian("complement"), k, projection_mode,
                              k_u, tol, max_iters, rng, t=spec.t)


@dataclass(frozen=True)
class Leakage:
    in_mask_norm: float
    out_mask_norm: float
    ratio: float
    in_zero: bool = False


def leakage_report(spec: MaskedJacobianSpec, direction) -> Leakage:
    """First-order response of the unmasked predictor inside vs outside the mask."""
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-8:
        raise ValueError("leakage_report expects a unit direction")
    jv = fd_jvp(spec, direction, region=None).ravel()
    m = spec.region("mask")
    n_in = float(np.linalg.norm(m * jv))
    n_out = float(np.linalg.norm((1.0 - m) * jv))
    if n_in == 0.0:
        return Leakage(n_in, n_out, float("inf"), True)
    return Leakage(n_in, n_out, n_out / n_in, False)


# ---------------------------------------------------------------- file format

DIRECTIONS_MAGIC = b"RBED"
DIRECTIONS_VERSION = 1


def save_directions(ds: DirectionSet, path):
    w = Writer()
    w.u32(DIRECTIONS_VERSION, ds.t, ds.k, ds.d_h, ds.projection_mode.code, ds.unmasked_rank)
    w.f64(ds.singular_values)
    w.f64(ds.directions)
    atomic_write(path, w.framed(DIRECTIONS_MAGIC))


def load_directions(path) -> DirectionSet:
    r = Reader(Path(path).read_bytes(), DIRECTIONS_MAGIC, what=f"direction file {path}")
    version = r.u32("version")
    if version != DIRECTIONS_VERSION:
        raise FormatError(f"direction file {path}: unsupported version {version}")
    t, k, d_h, code, k_u = r.u32("header", 5)
    sv = r.f64((k,), "singular values")
    dirs = r.f64((k, d_h), "directions")
    r.finish()
    return DirectionSet(dirs, sv, t, ProjectionMode.from_code(code), k_u, None)
