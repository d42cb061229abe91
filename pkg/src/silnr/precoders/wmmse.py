"""Weighted-MMSE sum-rate precoding with per-user leakage caps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from ..quadratics import StackedPrecoder
from .base import PrecoderResult, uniform_power


@dataclass
class WmmseState:
    u: np.ndarray  # receivers
    e: np.ndarray  # MSEs
    w: np.ndarray  # MSE weights
    r: Optional[np.ndarray]  # leakage targets, None when unconstrained


def _receivers(H, F, noise):
    G = H.conj() @ F.T  # G[k, i] = h_k^H f_i
    tot = np.sum(np.abs(G) ** 2, axis=1) + noise
    d = np.diag(G)
    u = d / tot
    e = 1.0 - np.abs(d) ** 2 / tot
    e = np.maximum(e, 1e-300)
    return u, e


def _objective(e, w):
    return float(np.sum(w * e - np.log(w)))


def _bisect(fun, target, hi0=1.0, iters=100, rtol=1e-12):
    """Smallest x >= 0 with fun(x) <= target, for ``fun`` decreasing in x."""
    if fun(0.0) <= target:
        return 0.0
    lo, hi = 0.0, hi0
    while fun(hi) > target:
        lo, hi = hi, hi * 4.0
        if hi > 1e300:
            return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fun(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return hi


def _leak_multipliers(d, absc2, r, iters=50):
    """Per-user ``nu >= 0`` with ``sum_n d_n |c_kn|^2 / (1 + nu d_n)^2 <= r_k``, all users at once."""

    def leak(nu):
        return np.sum(d * absc2 / (1.0 + nu[:, None] * d) ** 2, axis=1)

    K = absc2.shape[0]
    nu = np.zeros(K)
    active = leak(nu) > r
    if not active.any():
        return nu
    lo = np.zeros(K)
    hi = np.ones(K)
    for _ in range(200):
        grow = active & (leak(hi) > r)
        if not grow.any():
            break
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, hi * 4.0, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = leak(mid) > r
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    return np.where(active, hi, 0.0)


def _beams_given_mu(T, Q, rhs, mu, r, null_tol):
    """Beam per user with power multiplier ``mu``; per-user leakage multiplier by bisection.

    With the generalized eigenbasis ``Q V = (T + mu I) V diag(d)`` and
    ``V^H (T + mu I) V = I`` each beam is ``V (I + nu d)^{-1} V^H rhs_k`` so
    leakage and power are cheap scalar functions of ``nu``.
    """
    N = T.shape[0]
    d, V = scipy.linalg.eigh(Q, T + mu * np.eye(N))
    d = np.maximum(d, 0.0)
    C = rhs @ V.conj()  # row k: V^H rhs_k
    if r is None:
        coef = C
    else:
        nulled = r <= 0
        nu = _leak_multipliers(d, np.abs(C) ** 2, np.where(nulled, np.inf, r))
        coef = C / (1.0 + nu[:, None] * d)
        if nulled.any():
            keep = d <= null_tol * max(d.max(), 1e-300)
            coef[nulled] = np.where(keep, C[nulled], 0.0)
    return coef @ V.T


def wmmse_leakage(
    channels: np.ndarray,
    leak_channels: Optional[np.ndarray],
    noise,
    r_targets=None,
    max_iter: int = 100,
    tol: float = 1e-8,
    init: Optional[np.ndarray] = None,
    cell_index: int = 0,
) -> PrecoderResult:
    """Alternating WMMSE updates under ``sum_k ||f_k||^2 <= 1`` and ``f_k^H Q f_k <= r_k``.

    ``Q`` is the sum of the leakage channels' outer products. ``r_targets=None``
    drops the leakage caps (plain WMMSE).
    """
    H = np.atleast_2d(np.asarray(channels, dtype=complex))
    K, N = H.shape
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (K,)).copy()
    if leak_channels is None or len(leak_channels) == 0:
        Q = np.zeros((N, N), dtype=complex)
        if r_targets is not None:
            r_targets = None
    else:
        G = np.asarray(leak_channels, dtype=complex)
        Q = G.T @ G.conj()
    r = None if r_targets is None else np.broadcast_to(np.asarray(r_targets, dtype=float), (K,)).copy()
    F = uniform_power(H).beams if init is None else np.asarray(init, dtype=complex)
    u, e = _receivers(H, F, noise)
    w = 1.0 / e
    obj_hist = [_objective(e, w)]
    converged = False
    it = 0
    scale = np.trace(Q).real + np.sum(np.abs(H) ** 2) + 1.0
    for it in range(1, max_iter + 1):
        T = (H.T * (w * np.abs(u) ** 2)) @ H.conj()
        T = 0.5 * (T + T.conj().T)
        rhs = (w * u)[:, None] * H

        mu_floor = 1e-8 * scale

        def power(mu):
            Fm = _beams_given_mu(T, Q, rhs, max(mu, mu_floor), r, 1e-9)
            return float(np.sum(np.abs(Fm) ** 2))

        if power(mu_floor) <= 1.0:
            mu = mu_floor
        else:
            mu = _bisect(power, 1.0, hi0=scale * 1e-3 + 1e-12, rtol=1e-6)
        F = _beams_given_mu(T, Q, rhs, max(mu, mu_floor), r, 1e-9)
        # bisection stops on the feasible side up to rounding; rescaling keeps leakage feasible
        pw = float(np.sum(np.abs(F) ** 2))
        if pw > 1.0:
            F = F / np.sqrt(pw)
        u, e = _receivers(H, F, noise)
        w = 1.0 / e
        obj_hist.append(_objective(e, w))
        if abs(obj_hist[-2] - obj_hist[-1]) <= tol * max(1.0, abs(obj_hist[-1])):
            converged = True
            break
    res = PrecoderResult(
        StackedPrecoder.from_beams(F, cell_index),
        iterations=it,
        inner_iterations_total=it,
        converged=converged,
        objective=obj_hist[-1],
    )
    res.extra["objective_history"] = obj_hist
    res.extra["state"] = WmmseState(u, e, w, r)
    return res
