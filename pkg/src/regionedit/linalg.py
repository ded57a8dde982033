"""Dense primitives and matrix-free spectral routines.

Vectors are 1-D float64 arrays, matrices 2-D float64 arrays.  The spectral
routine only ever sees the Gram operator ``v -> J^T J v`` through a callback,
so the Jacobian never has to be formed explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .rng import Rng

VecFn = Callable[[np.ndarray], np.ndarray]

# residual / original magnitude below which Gram-Schmidt treats a vector as dependent
RANK_DROP = 1e-12
# Gram action this small relative to the leading eigenvalue means the operator is exhausted
NULL_REL = 1e-13


def _as_vec(v, name="v") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    return v


def matvec(m, v) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    v = _as_vec(v)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    if m.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: matrix has {m.shape[1]} cols, vector has {v.shape[0]} entries")
    return m @ v


def gram_apply(jvp: VecFn, vjp: VecFn, v, d_x: int | None = None) -> np.ndarray:
    """Return ``vjp(jvp(v))``, i.e. ``J^T J v``."""
    v = _as_vec(v)
    u = np.asarray(jvp(v), dtype=np.float64).ravel()
    if d_x is not None and u.shape[0] != d_x:
        raise ValueError(f"jvp returned {u.shape[0]} entries, expected {d_x}")
    w = np.asarray(vjp(u), dtype=np.float64).ravel()
    if w.shape[0] != v.shape[0]:
        raise ValueError(f"vjp returned {w.shape[0]} entries, expected {v.shape[0]}")
    return w


def sign_normalize(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so that its largest-magnitude entry is positive."""
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


@dataclass(frozen=True)
class SpectralResult:
    singular_values: np.ndarray
    right_vectors: np.ndarray  # (k, d), one vector per row
    converged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    iterations: tuple = ()

    @property
    def k(self) -> int:
        return len(self.singular_values)

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


def _orth_against(w: np.ndarray, found: Sequence[np.ndarray]) -> np.ndarray:
    for q in found:
        w = w - (q @ w) * q
    return w


def power_pairs(gram: VecFn, d_h: int, tol: float, max_iters: int, rng: Rng,
                restrict: VecFn | None = None, scale: float = 0.0) -> Iterator[tuple]:
    """Yield ``(eigenvalue, vector, converged, iterations)`` of a PSD operator.

    Pairs come out one at a time, each from power iteration on the operator
    with all previous pairs removed by Hotelling deflation.  Iterates are also
    re-orthogonalised against previous vectors, which deflation alone only
    achieves to the accuracy of the earlier pairs.

    ``restrict`` maps random start vectors into the subspace the operator
    acts on; the generator stops once that subspace is used up.  ``scale``
    is an upper bound on the top eigenvalue (e.g. a squared Frobenius norm)
    against which a vanishing Gram action is judged before any pair exists.
    """
    vals: list[float] = []
    vecs: list[np.ndarray] = []
    lam_ref = float(scale)
    while len(vecs) < d_h:
        g = rng.gaussians(d_h)
        if restrict is not None:
            g = restrict(g)
        v = _orth_against(_orth_against(g, vecs), vecs)
        nv = np.linalg.norm(v)
        if nv <= RANK_DROP * np.sqrt(d_h):
            return
        v /= nv
        converged = False
        exhausted = False
        n = 0
        for n in range(1, max_iters + 1):
            w = np.asarray(gram(v), dtype=np.float64)
            for lam, q in zip(vals, vecs):
                w = w - lam * (q @ v) * q
            w = _orth_against(w, vecs)
            nrm = np.linalg.norm(w)
            if not np.isfinite(nrm):
                raise FloatingPointError("non-finite Gram action in power iteration")
            if nrm <= NULL_REL * lam_ref or nrm == 0.0:
                exhausted = True
                converged = True
                break
            w /= nrm
            d = w + v if (w @ v) < 0 else w - v
            v = w
            # 1 - |<v_n, v_n+1>| == |v_n -+ v_n+1|^2 / 2 for unit vectors; this form has no cancellation
            if 0.5 * (d @ d) < tol:
                converged = True
                break
        lam = 0.0 if exhausted else max(float(v @ gram(v)), 0.0)
        lam_ref = max(lam_ref, lam)
        vals.append(lam)
        vecs.append(v)
        yield lam, v, converged, n


def power_iteration_topk(gram: VecFn, d_h: int, k: int, tol: float = 1e-9,
                         max_iters: int = 10000, rng: Rng | None = None) -> SpectralResult:
    """Top-``k`` singular triplets (values and right vectors) from a Gram callback.

    Non-convergence is reported through ``converged`` rather than raised.
    """
    if not 1 <= k <= d_h:
        raise ValueError(f"need 1 <= k <= d_h, got k={k}, d_h={d_h}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = rng if rng is not None else Rng(0)
    pairs = []
    for pair in power_pairs(gram, d_h, tol, max_iters, rng):
        pairs.append(pair)
        if len(pairs) == k:
            break
    return _to_result(pairs)


def _to_result(pairs) -> SpectralResult:
    # deflation order is almost always descending; sorting guards stragglers
    pairs = sorted(pairs, key=lambda p: -p[0])
    if not pairs:
        return SpectralResult(np.zeros(0), np.zeros((0, 0)), np.zeros(0, dtype=bool), ())
    sv = np.sqrt(np.array([p[0] for p in pairs]))
    V = np.array([sign_normalize(p[1]) for p in pairs])
    conv = np.array([p[2] for p in pairs], dtype=bool)
    return SpectralResult(sv, V, conv, tuple(p[3] for p in pairs))


def orthonormalize(vs) -> list[np.ndarray]:
    """Modified Gram-Schmidt with one re-orthogonalisation pass; drops dependent vectors."""
    out: list[np.ndarray] = []
    for v in vs:
        v = _as_vec(v).copy()
        mag = np.linalg.norm(v)
        if mag == 0.0:
            continue
        w = _orth_against(v, out)
        if np.linalg.norm(w) < RANK_DROP * mag:
            continue
        w = _orth_against(w, out)
        out.append(w / np.linalg.norm(w))
    return out


def project_complement(v, basis) -> np.ndarray:
    """Remove from ``v`` its component in ``span(basis)``; basis must be orthonormal."""
    v = _as_vec(v)
    basis = [np.asarray(b, dtype=np.float64) for b in basis]
    if not basis:
        return v.copy()
    for b in basis:
        if b.shape != v.shape:
            raise ValueError(f"basis vector shape {b.shape} != {v.shape}")
    # second pass mops up the O(eps) residue left by a non-exact basis
    return _orth_against(_orth_against(v, basis), basis)


def projector_gram(gram: VecFn, basis) -> VecFn:
    """Operator ``v -> P gram(P v)`` with ``P = I - B B^T``."""
    basis = list(basis)
    if not basis:
        return gram

    def op(v):
        return project_complement(gram(project_complement(v, basis)), basis)

    return op
