"""Generalized power iteration for products of Rayleigh-quotient-like ratios.

``silnr_gpi`` works from one base station's local CSIT. ``coop_gpi`` is the
global-CSIT benchmark: it maximizes the true network sum rate by sweeping
over the cells and running the same fixed-point update on each cell's
conditional objective.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..metrics import network_sum_rate, received_power
from ..quadratics import (
    LEAKAGE_FLOOR,
    BlockOperator,
    CellProblem,
    SingularOperatorError,
    StackedPrecoder,
    _pencil,
    cell_terms,
)
from .base import PrecoderResult
from .linear import mrt, zf


def default_init(problem: CellProblem) -> StackedPrecoder:
    """Zero forcing when K <= N, matched filter otherwise."""
    if problem.num_users <= problem.num_antennas:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return zf(problem.own_channels, problem.cell_index).f
        except np.linalg.LinAlgError:
            pass
    else:
        warnings.warn("K > N: starting the iteration from the matched filter", RuntimeWarning)
    return mrt(problem.own_channels, problem.cell_index).f


def kkt_ratio(problem: CellProblem, terms) -> float:
    """Multiplier over objective, ``lam / gamma``, that makes the pencil stationary at ``f``.

    Since every ratio is homogeneous of degree zero except for the leakage
    power whose degree is ``2p`` (p = |U|/K), the multiplier reduces to
    ``(p - 1) L^p sum_i (1/a_i - 1/b_i)``; it is exactly zero when p = 1.
    """
    p = problem.leakage_exponent
    if problem.num_victims == 0 or p == 1.0:
        return 0.0
    return float((p - 1.0) * terms.leak_pow * np.sum(1.0 / terms.numer - 1.0 / terms.denom))


def shifted_pencil(problem: CellProblem, terms, nu: float):
    """Pencil with ``nu * I`` added to the B side, or ``|nu| * I`` to the A side when ``nu < 0``.

    Both choices have the same unit-eigenvalue fixed points; keeping the
    shift on the A side for negative ``nu`` keeps B positive definite.
    """
    if nu >= 0:
        return _pencil(problem, terms, b_shift=nu)
    return _pencil(problem, terms, a_shift=-nu)


def pencil_residual(A: BlockOperator, B: BlockOperator, F: np.ndarray) -> float:
    AF = A.matvec(F)
    nrm = np.linalg.norm(AF)
    if nrm == 0:
        return float("inf")
    return float(np.linalg.norm(AF - B.matvec(F)) / nrm)


def silnr_gpi(
    problem: CellProblem,
    init: Optional[StackedPrecoder] = None,
    eps: float = 0.1,
    max_inner: int = 100,
    max_outer: int = 50,
    outer_tol: Optional[float] = None,
    floor: float = LEAKAGE_FLOOR,
) -> PrecoderResult:
    """Maximize ``prod_k (1 + SILNR_k)`` on the unit sphere.

    Outer rounds fix the multiplier ``lam``; inner rounds iterate
    ``f <- normalize(B(f, lam)^{-1} A(f) f)`` until consecutive unit-norm
    iterates differ by less than ``eps``. After each round ``lam`` moves to
    the value that makes the current iterate stationary; the loop stops once
    that correction is below ``outer_tol`` relative to ``f^H A f``.
    """
    if outer_tol is None:
        outer_tol = min(eps, 1e-3)
    f = default_init(problem) if init is None else init
    F = f.beams / np.sqrt(f.norm_sq)
    K, N = F.shape
    lam = 0.0
    trace, flags = [], []
    inner_total = 0
    converged = False
    best = (-np.inf, F)
    n_round = 0
    for n_round in range(1, max_outer + 1):
        inner_ok = False
        for t in range(1, max_inner + 1):
            terms = cell_terms(problem, StackedPrecoder.from_beams(F), floor)
            log_gamma = float(np.sum(np.log(terms.numer) - np.log(terms.denom)))
            nu = lam / np.exp(log_gamma)
            A, B = shifted_pencil(problem, terms, nu)
            try:
                G = B.solve(A.matvec(F))
            except SingularOperatorError:
                flags.append("singular_pencil")
                break
            G /= np.linalg.norm(G)
            delta = float(np.linalg.norm(G - F))
            F = G
            inner_total += 1
            terms = cell_terms(problem, StackedPrecoder.from_beams(F), floor)
            log_gamma = float(np.sum(np.log(terms.numer) - np.log(terms.denom)))
            trace.append((n_round, t, delta, float(np.exp(log_gamma))))
            if log_gamma > best[0]:
                best = (log_gamma, F)
            if delta < eps:
                inner_ok = True
                break
        gamma = np.exp(log_gamma)
        nu_kkt = kkt_ratio(problem, terms)
        scale = np.sum(1.0 / terms.numer * (terms.numer - terms.leak_pow)) + terms.leak_pow * problem.leakage_exponent * np.sum(1.0 / terms.numer)
        step = nu_kkt - lam / gamma
        lam = nu_kkt * gamma
        if not inner_ok:
            flags.append("inner_max_iter")
            break
        if abs(step) <= outer_tol * scale:
            converged = True
            break
    else:
        flags.append("outer_max_iter")

    if not converged:
        F = best[1]
        terms = cell_terms(problem, StackedPrecoder.from_beams(F), floor)
        lam = kkt_ratio(problem, terms) * np.exp(np.sum(np.log(terms.numer) - np.log(terms.denom)))
    terms = cell_terms(problem, StackedPrecoder.from_beams(F), floor)
    gamma = float(np.exp(np.sum(np.log(terms.numer) - np.log(terms.denom))))
    A, B = _pencil(problem, terms, b_shift=lam / gamma)
    res = pencil_residual(A, B, F)
    out = PrecoderResult(
        StackedPrecoder.from_beams(F, problem.cell_index),
        iterations=n_round,
        inner_iterations_total=inner_total,
        lam=float(lam),
        converged=converged,
        objective=gamma,
        stationarity_residual=res,
        trace=trace,
        flags=flags,
    )
    out.extra["scaled_multiplier"] = float(lam * np.exp(np.sum(np.log(terms.denom))))
    return out


# ---------------------------------------------------------------------------
# cooperative benchmark
# ---------------------------------------------------------------------------


@dataclass
class NetworkCSI:
    """Global channel knowledge: ``channels[b][c]`` is the (K_c, N_b) channel from BS b to cell c's users."""

    channels: Sequence[Sequence[np.ndarray]]
    powers: np.ndarray
    sigma2: float

    @property
    def num_cells(self) -> int:
        return len(self.channels)

    def users(self, c: int) -> int:
        return self.channels[c][c].shape[0]

    def antennas(self, b: int) -> int:
        return self.channels[b][b].shape[1]


def _coop_pencil_data(net: NetworkCSI, beams: list, ell: int, R: list):
    """Shared rank-one channels and the A/B scalar offsets of cell ``ell``'s conditional objective."""
    P = net.powers[ell]
    H = net.channels[ell][ell]
    K = H.shape[0]
    # interference-plus-noise at own users from every other BS
    ici = np.zeros(K)
    for b in range(net.num_cells):
        if b != ell:
            ici += R[b][ell].sum(axis=1)
    vecs = [H]
    alpha = [np.full(K, 0.0)]
    beta = [np.full(K, 0.0)]
    c_own = (ici + net.sigma2) / P
    for c in range(net.num_cells):
        if c == ell:
            continue
        G = net.channels[ell][c]
        if G.shape[0] == 0:
            continue
        excl = net.sigma2 + sum(R[b][c].sum(axis=1) for b in range(net.num_cells) if b != ell)
        sig = np.diag(R[c][c]).real
        vecs.append(G)
        alpha.append(excl / P)
        beta.append((excl - sig) / P)
    return np.vstack(vecs), c_own, np.concatenate(alpha[1:]) if len(alpha) > 1 else np.zeros(0), \
        np.concatenate(beta[1:]) if len(beta) > 1 else np.zeros(0)


def _coop_values(V, K, c_own, alpha, beta, F):
    proj = np.abs(V.conj() @ F.T) ** 2  # (K + M, K)
    own = proj[:K]
    nsq = float(np.vdot(F, F).real)
    a_own = own.sum(axis=1) + c_own * nsq
    b_own = a_own - np.diag(own)
    tot_other = proj[K:].sum(axis=1)
    a_oth = tot_other + alpha * nsq
    b_oth = tot_other + beta * nsq
    return np.concatenate([a_own, a_oth]), np.concatenate([b_own, b_oth])


def coop_gpi(
    net: NetworkCSI,
    init: Optional[Sequence[Sequence[np.ndarray]]] = None,
    eps: float = 1e-4,
    max_sweeps: int = 50,
    max_inner: int = 20,
    inner_eps: float = 1e-3,
) -> list:
    """Alternating per-cell GPI on the network sum rate with global CSIT.

    ``init`` is a list of candidate starting points, each a list of (K_c, N_c)
    beam arrays; the best candidate (by true sum rate) seeds the sweeps.
    Each cell keeps the best iterate of its inner loop, so the sum rate never
    decreases across sweeps. Stops when a full sweep gains less than ``eps``
    bits/s/Hz.
    """
    L = net.num_cells
    cands = []
    if init is not None:
        cands.extend([[np.asarray(b, dtype=complex) for b in c] for c in init])
    base = []
    for c in range(L):
        H = net.channels[c][c]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            base.append((zf(H) if H.shape[0] <= H.shape[1] else mrt(H)).f.beams)
    cands.append(base)
    scores = [network_sum_rate(net, c) for c in cands]
    beams = [b.copy() for b in cands[int(np.argmax(scores))]]
    beams = [b / np.linalg.norm(b) for b in beams]
    cur = network_sum_rate(net, beams)
    start = cur
    iters = np.zeros(L, dtype=int)
    sweeps = 0
    converged = False
    for sweeps in range(1, max_sweeps + 1):
        prev = cur
        for ell in range(L):
            R = received_power(net, beams)
            V, c_own, alpha, beta = _coop_pencil_data(net, beams, ell, R)
            K, N = beams[ell].shape
            F = beams[ell]
            a, b = _coop_values(V, K, c_own, alpha, beta, F)
            best_val, best_F = np.sum(np.log(a) - np.log(b)), F
            for _ in range(max_inner):
                M = V.shape[0]
                wa = 1.0 / a
                wb = 1.0 / b
                A = BlockOperator(N, K, float(np.dot(c_own, wa[:K]) + np.dot(alpha, wa[K:])), V, wa)
                B = BlockOperator(
                    N, K, float(np.dot(c_own, wb[:K]) + np.dot(beta, wb[K:])), V, wb,
                    slot_vecs=V[:K], slot_weights=-wb[:K],
                )
                try:
                    G = B.solve(A.matvec(F))
                except SingularOperatorError:
                    break
                G /= np.linalg.norm(G)
                delta = np.linalg.norm(G - F)
                F = G
                iters[ell] += 1
                a, b = _coop_values(V, K, c_own, alpha, beta, F)
                val = np.sum(np.log(a) - np.log(b))
                if val > best_val:
                    best_val, best_F = val, F
                if delta < inner_eps:
                    break
            beams[ell] = best_F
        cur = network_sum_rate(net, beams)
        if cur - prev < eps:
            converged = True
            break
    out = []
    for ell in range(L):
        r = PrecoderResult(
            StackedPrecoder.from_beams(beams[ell], ell),
            iterations=sweeps,
            inner_iterations_total=int(iters[ell]),
            converged=converged,
            objective=cur,
        )
        r.extra["initial_sum_rate"] = start
        out.append(r)
    return out
