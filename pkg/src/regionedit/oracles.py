"""Brute-force reference computations used by the test suite and ``verify``.

None of these share code with the routines they check.
"""

from __future__ import annotations

import numpy as np


def _round_robin(n: int):
    """Rounds of disjoint column pairs covering every pair once (circle method)."""
    idx = list(range(n)) + ([-1] if n % 2 else [])
    m = len(idx)
    rounds = []
    for _ in range(m - 1):
        pairs = [(idx[i], idx[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        rounds.append((np.array([p for p, _ in pairs], dtype=int), np.array([q for _, q in pairs], dtype=int)))
        idx = [idx[0]] + [idx[-1]] + idx[1:-1]
    return rounds


def jacobi_svd(a, tol: float = 1e-15, max_sweeps: int = 60):
    """One-sided (Hestenes) Jacobi SVD of an explicit matrix.

    Returns ``(s, Vt)`` with singular values descending and right singular
    vectors as rows.  Each round rotates a set of disjoint column pairs at once.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    m, n = a.shape
    v = np.eye(n)
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = 0.0
        for p, q in rounds:
            if len(p) == 0:
                continue
            ap, aq = a[:, p], a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            scale = np.sqrt(alpha * beta)
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = np.where(scale > 0, np.abs(gamma) / scale, 0.0)
            off = max(off, float(rel.max(initial=0.0)))
            rot = rel > tol
            if not rot.any():
                continue
            p, q = p[rot], q[rot]
            ap, aq = ap[:, rot], aq[:, rot]
            alpha, beta, gamma = alpha[rot], beta[rot], gamma[rot]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if off <= tol:
            break
    sv = np.linalg.norm(a, axis=0)
    order = np.argsort(-sv, kind="stable")
    return sv[order], v[:, order].T


def principal_angles(a, b) -> np.ndarray:
    """Principal angles (radians, descending) between the row spaces of ``a`` and ``b``.

    Uses the sines, singular values of ``(I - Qa Qa^T) Qb``, which stay accurate
    for tiny angles where arccos of the cosines does not.
    """
    qa, _ = np.linalg.qr(np.atleast_2d(a).T)
    qb, _ = np.linalg.qr(np.atleast_2d(b).T)
    if qa.shape[1] != qb.shape[1]:
        raise ValueError("subspaces must have equal dimension")
    sin = np.linalg.svd(qb - qa @ (qa.T @ qb), compute_uv=False)
    return np.arcsin(np.clip(sin, 0.0, 1.0))


def central_diff_jacobian(f, h0, step: float) -> np.ndarray:
    """Dense Jacobian of ``f`` at ``h0`` column by column, central differences."""
    h0 = np.asarray(h0, dtype=np.float64)
    cols = []
    for i in range(h0.size):
        e = np.zeros_like(h0)
        e[i] = step
        cols.append((np.ravel(f(h0 + e)) - np.ravel(f(h0 - e))) / (2.0 * step))
    return np.stack(cols, axis=1)


def dense_projected_topk(jm, ju_basis, k: int):
    """Top-``k`` of ``J_m P`` with ``P = I - B^T B`` formed densely."""
    jm = np.asarray(jm, dtype=np.float64)
    d = jm.shape[1]
    b = np.atleast_2d(np.asarray(ju_basis, dtype=np.float64)).reshape(-1, d)
    p = np.eye(d) - b.T @ b
    s, vt = jacobi_svd(jm @ p)
    return s[:k], vt[:k]


def complex_step_jvp(f, h0, v, step: float = 1e-30) -> np.ndarray:
    """``J v`` of a real-analytic ``f`` to machine precision: ``Im f(h0 + i step v) / step``."""
    h = np.asarray(h0, dtype=np.complex128) + 1j * step * np.asarray(v, dtype=np.float64)
    return np.imag(f(h)) / step
