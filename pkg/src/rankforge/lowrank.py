"""Truncated SVD and 2-level spatial/channel decomposition of kernel matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LayerSpec, SCHEME_CHANNEL, SCHEME_SPATIAL

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
# Above this min-dimension the cyclic Jacobi sweeps get too slow for the
# test-suite time budget; fall back to LAPACK, which is equally deterministic.
JACOBI_SIZE_LIMIT = 64


class LowRankError(ValueError):
    pass


@dataclass(frozen=True)
class SvdResult:
    """Full SVD K = U diag(s) V^T with singular values sorted non-increasing."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def reconstruct(self, r: int | None = None) -> np.ndarray:
        if r is None:
            r = self.singular_values.size
        return (self.U[:, :r] * self.singular_values[:r]) @ self.V[:, :r].T


@dataclass(frozen=True)
class DecomposedLayer:
    """Rank-r factor pair K ~= K1 @ K2 with a balanced singular-value split."""

    K1: np.ndarray
    K2: np.ndarray
    rank: int
    scheme: str


def _round_robin_rounds(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: ceil(m)-1 rounds of disjoint column pairs."""
    players = list(range(m))
    if m % 2:
        players.append(-1)  # bye
    n = len(players)
    rounds = []
    for _ in range(n - 1):
        left = players[: n // 2]
        right = players[n // 2:][::-1]
        pairs = [(a, b) for a, b in zip(left, right) if a != -1 and b != -1]
        if pairs:
            rounds.append((np.array([p[0] for p in pairs], dtype=int),
                           np.array([p[1] for p in pairs], dtype=int)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _complete_orthonormal(U: np.ndarray, keep: int) -> np.ndarray:
    """Fill columns keep..end with an orthonormal complement (deterministic)."""
    n, m = U.shape
    basis = [U[:, j] for j in range(keep)]
    col = keep
    for k in range(n):
        if col >= m:
            break
        v = np.zeros(n)
        v[k] = 1.0
        for b in basis:
            v -= (b @ v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            v /= norm
            basis.append(v)
            U[:, col] = v
            col += 1
    return U


def svd(K) -> SvdResult:
    """Deterministic SVD of a dense matrix.

    Uses one-sided Jacobi (fixed round-robin pair order, vectorized rounds)
    up to JACOBI_SIZE_LIMIT, and LAPACK beyond that; both are deterministic
    for a given input.
    """
    A = np.asarray(K, dtype=float)
    if A.ndim != 2 or min(A.shape) < 1:
        raise LowRankError(f"expected a non-empty matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise LowRankError("matrix has non-finite entries")
    if min(A.shape) > JACOBI_SIZE_LIMIT:
        U, sigma, Vt = np.linalg.svd(A, full_matrices=False)
        return SvdResult(U=U, singular_values=sigma, V=Vt.T)
    return jacobi_svd(A)


def jacobi_svd(K) -> SvdResult:
    """One-sided Jacobi SVD; stops when the relative off-diagonal mass of the
    implicit Gram matrix falls below JACOBI_TOL, or after JACOBI_MAX_SWEEPS."""
    A = np.asarray(K, dtype=float)
    transposed = A.shape[0] < A.shape[1]
    W = (A.T if transposed else A).copy()
    n, m = W.shape
    V = np.eye(m)
    total = float(np.sum(W * W))
    rounds = _round_robin_rounds(m)

    if total > 0.0:
        for _ in range(JACOBI_MAX_SWEEPS):
            off = 0.0
            for idx_p, idx_q in rounds:
                Wp = W[:, idx_p]
                Wq = W[:, idx_q]
                app = np.einsum("ij,ij->j", Wp, Wp)
                aqq = np.einsum("ij,ij->j", Wq, Wq)
                apq = np.einsum("ij,ij->j", Wp, Wq)
                off += float(np.sum(apq * apq))
                active = np.abs(apq) > JACOBI_TOL * total
                if not np.any(active):
                    continue
                p_i, q_i = idx_p[active], idx_q[active]
                a, b, g = app[active], aqq[active], apq[active]
                zeta = (b - a) / (2.0 * g)
                t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                t = np.where(zeta == 0.0, 1.0, t)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                Wp, Wq = W[:, p_i].copy(), W[:, q_i].copy()
                W[:, p_i] = c * Wp - s * Wq
                W[:, q_i] = s * Wp + c * Wq
                Vp, Vq = V[:, p_i].copy(), V[:, q_i].copy()
                V[:, p_i] = c * Vp - s * Vq
                V[:, q_i] = s * Vp + c * Vq
            if np.sqrt(off) <= JACOBI_TOL * total:
                break

    norms = np.linalg.norm(W, axis=0)
    order = np.argsort(-norms, kind="stable")
    norms = norms[order]
    W = W[:, order]
    V = V[:, order]
    U = np.zeros_like(W)
    cutoff = norms[0] * max(n, m) * np.finfo(float).eps if norms.size else 0.0
    keep = int(np.sum(norms > cutoff))
    if keep:
        U[:, :keep] = W[:, :keep] / norms[:keep]
    norms[keep:] = 0.0
    if keep < m:
        U = _complete_orthonormal(U, keep)

    if transposed:
        U, V = V, U
    return SvdResult(U=U, singular_values=norms, V=V)


def decompose(K, r: int, scheme: str = SCHEME_SPATIAL) -> DecomposedLayer:
    """Split K into K1 (cols r) and K2 (rows r) with sqrt(sigma) on each side."""
    A = np.asarray(K, dtype=float)
    if not (1 <= r <= min(A.shape)):
        raise LowRankError(f"rank {r} out of range for shape {A.shape}")
    res = svd(A)
    root = np.sqrt(res.singular_values[:r])
    K1 = res.U[:, :r] * root
    K2 = (res.V[:, :r] * root).T
    return DecomposedLayer(K1=K1, K2=K2, rank=r, scheme=scheme)


def reshape_spatial(layer: LayerSpec, kernel4d) -> np.ndarray:
    """(d, d, S, T) tensor -> (d*S) x (d*T) matrix; spatial index slowest."""
    K = np.asarray(kernel4d)
    expected = (layer.d, layer.d, layer.S, layer.T)
    if K.shape != expected:
        raise LowRankError(f"layer {layer.name!r}: expected tensor {expected}, got {K.shape}")
    return K.transpose(0, 2, 1, 3).reshape(layer.d * layer.S, layer.d * layer.T)


def unreshape_spatial(layer: LayerSpec, matrix) -> np.ndarray:
    M = np.asarray(matrix)
    if M.shape != (layer.d * layer.S, layer.d * layer.T):
        raise LowRankError(f"layer {layer.name!r}: bad matrix shape {M.shape}")
    return M.reshape(layer.d, layer.S, layer.d, layer.T).transpose(0, 2, 1, 3)


def reshape_channel(layer: LayerSpec, kernel4d) -> np.ndarray:
    """(d, d, S, T) tensor -> (d*d*S) x T matrix; spatial index slowest."""
    K = np.asarray(kernel4d)
    expected = (layer.d, layer.d, layer.S, layer.T)
    if K.shape != expected:
        raise LowRankError(f"layer {layer.name!r}: expected tensor {expected}, got {K.shape}")
    return K.reshape(layer.d * layer.d * layer.S, layer.T)


def unreshape_channel(layer: LayerSpec, matrix) -> np.ndarray:
    M = np.asarray(matrix)
    if M.shape != (layer.d * layer.d * layer.S, layer.T):
        raise LowRankError(f"layer {layer.name!r}: bad matrix shape {M.shape}")
    return M.reshape(layer.d, layer.d, layer.S, layer.T)


def reshape_kernel(layer: LayerSpec, kernel4d) -> np.ndarray:
    """Reshape per the layer's configured scheme."""
    if layer.scheme == SCHEME_CHANNEL:
        return reshape_channel(layer, kernel4d)
    return reshape_spatial(layer, kernel4d)
