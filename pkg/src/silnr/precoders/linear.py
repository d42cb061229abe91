"""Closed-form baselines: matched filter, zero forcing and multi-cell MMSE."""

from __future__ import annotations

import warnings
from typing import Optional

import numpy as np

from .base import PrecoderResult, uniform_power


def mrt(channels: np.ndarray, cell_index: int = 0) -> PrecoderResult:
    """Matched filter on the (K, N) estimated channels."""
    H = np.atleast_2d(np.asarray(channels, dtype=complex))
    return PrecoderResult(uniform_power(H, cell_index))


def zf(channels: np.ndarray, cell_index: int = 0, rcond: float = 1e-10) -> PrecoderResult:
    """Columns of ``H (H^H H)^{-1}`` with H = [h_1 ... h_K], uniform power."""
    H = np.atleast_2d(np.asarray(channels, dtype=complex))
    K, N = H.shape
    if K > N:
        raise ValueError(f"zero forcing needs K <= N, got K={K}, N={N}")
    s = np.linalg.svd(H, compute_uv=False)
    flags = []
    if s[-1] <= rcond * s[0]:
        warnings.warn("rank-deficient channel matrix; using pseudo-inverse", RuntimeWarning)
        flags.append("rank_deficient")
    # rows of pinv(H^*)^T ... i.e. beam k solves h_i^H f_k = delta_ik
    Fc = np.linalg.pinv(H.conj(), rcond=rcond)  # (N, K), H^* Fc = I
    return PrecoderResult(uniform_power(Fc.T, cell_index), flags=flags)


def multicell_mmse(
    own_channels: np.ndarray,
    leak_channels: Optional[np.ndarray],
    noise,
    own_error: Optional[np.ndarray] = None,
    leak_error: Optional[np.ndarray] = None,
    cell_index: int = 0,
) -> PrecoderResult:
    """Regularized beams ``(sum h h^H [+ sum Phi] + noise_k I)^{-1} h_k``.

    The interference sum runs over the served users and the leakage users.
    Passing error covariances gives the covariance-aware variant.
    """
    H = np.atleast_2d(np.asarray(own_channels, dtype=complex))
    K, N = H.shape
    G = H if leak_channels is None or len(leak_channels) == 0 else np.vstack([H, leak_channels])
    M = G.T @ G.conj()
    if own_error is not None:
        M = M + np.sum(own_error, axis=0)
    if leak_error is not None and len(leak_error):
        M = M + np.sum(leak_error, axis=0)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (K,))
    eye = np.eye(N)
    beams = np.empty((K, N), dtype=complex)
    # users sharing a noise level share a factorization
    for lvl in np.unique(noise):
        idx = np.flatnonzero(noise == lvl)
        beams[idx] = np.linalg.solve(M + lvl * eye, H[idx].T).T
    return PrecoderResult(uniform_power(beams, cell_index))
