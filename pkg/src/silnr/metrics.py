"""SINR, spectral efficiency and the quasi-optimality identities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .quadratics import CellProblem, StackedPrecoder, cell_terms


@dataclass
class RateReport:
    per_user_sinr: np.ndarray
    per_user_se: np.ndarray
    sum_se: float
    overhead_factor: float = 1.0
    ergodic: bool = False
    std_error: Optional[np.ndarray] = None


def overhead_factor(tau_u: int, tau_d: int, tau_c: int) -> float:
    return 1.0 - (tau_u + tau_d) / tau_c


def received_power(net, beams: Sequence[np.ndarray]) -> list:
    """``R[b][c][k, i] = P_b |h_{b,c,k}^H f_{b,i}|^2``: power from BS b's stream i at user k of cell c."""
    L = net.num_cells
    R = []
    for b in range(L):
        row = []
        for c in range(L):
            H = net.channels[b][c]
            if H.shape[0] == 0 or beams[b].shape[0] == 0:
                row.append(np.zeros((H.shape[0], beams[b].shape[0])))
                continue
            row.append(net.powers[b] * np.abs(H.conj() @ beams[b].T) ** 2)
        R.append(row)
    return R


def network_sinr(net, beams: Sequence[np.ndarray], R: Optional[list] = None) -> list:
    """Per-cell arrays of user SINRs, every cell's precoder acting on the given channels."""
    if R is None:
        R = received_power(net, beams)
    out = []
    for c in range(net.num_cells):
        own = R[c][c]
        sig = np.diag(own).copy()
        interf = own.sum(axis=1) - sig
        for b in range(net.num_cells):
            if b != c:
                interf = interf + R[b][c].sum(axis=1)
        out.append(sig / (interf + net.sigma2))
    return out


def network_sum_rate(net, beams: Sequence[np.ndarray]) -> float:
    return float(sum(np.sum(np.log2(1.0 + s)) for s in network_sinr(net, beams)))


def sinr(net, beams: Sequence[np.ndarray], cell: int, user: int) -> float:
    """SINR of one user with every BS transmitting its beams at its own power."""
    return float(network_sinr(net, beams)[cell][user])


def rate_report(sinrs: Sequence[np.ndarray]) -> RateReport:
    s = np.concatenate([np.asarray(x, dtype=float) for x in sinrs])
    se = np.log2(1.0 + s)
    return RateReport(s, se, float(se.sum()))


def instantaneous_se(
    net_hat,
    phis: Sequence[Sequence[Optional[np.ndarray]]],
    beams: Sequence[np.ndarray],
    n_error_draws: int,
    rng: np.random.Generator,
) -> RateReport:
    """Expected per-user SE given the channel estimates, by Monte Carlo over the CSIT error.

    ``phis[b][c]`` holds the (K_c, N_b, N_b) error covariances of the links
    from BS b to cell c, or None for a perfectly known link.
    """
    if n_error_draws < 1:
        raise ValueError("n_error_draws must be >= 1")
    from .channel import crandn, psd_sqrt
    from .precoders.gpi import NetworkCSI

    L = net_hat.num_cells
    roots = [[None if phis[b][c] is None else np.array([psd_sqrt(p) for p in phis[b][c]]) for c in range(L)] for b in range(L)]
    draws = []
    sinr_sum = None
    for _ in range(n_error_draws):
        chans = []
        for b in range(L):
            row = []
            for c in range(L):
                H = net_hat.channels[b][c]
                if roots[b][c] is None:
                    row.append(H)
                else:
                    w = crandn(rng, *H.shape)
                    row.append(H + np.einsum("kmn,kn->km", roots[b][c], w))
            chans.append(row)
        s = np.concatenate(network_sinr(NetworkCSI(chans, net_hat.powers, net_hat.sigma2), beams))
        draws.append(np.log2(1.0 + s))
        sinr_sum = s if sinr_sum is None else sinr_sum + s
    draws = np.array(draws)
    se = draws.mean(axis=0)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(n_error_draws) if n_error_draws > 1 else np.zeros_like(se)
    return RateReport(sinr_sum / n_error_draws, se, float(se.sum()), 1.0, False, stderr)


def ergodic_se(
    trial_se: Callable[[int], np.ndarray],
    n_fading_trials: int,
    tau_u: int,
    tau_d: int,
    tau_c: int,
) -> RateReport:
    """Average per-user SE over independent trials and apply the training overhead once.

    ``trial_se(t)`` returns the per-user SE (bits/s/Hz) of trial ``t``.
    """
    if n_fading_trials < 1:
        raise ValueError("n_fading_trials must be >= 1")
    rows = np.array([trial_se(t) for t in range(n_fading_trials)])
    oh = overhead_factor(tau_u, tau_d, tau_c)
    se = oh * rows.mean(axis=0)
    stderr = oh * rows.std(axis=0, ddof=1) / np.sqrt(n_fading_trials) if n_fading_trials > 1 else None
    return RateReport(np.full(se.shape, np.nan), se, float(se.sum()), oh, True, stderr)


# ---------------------------------------------------------------------------
# quasi-optimality identities of the two-cell formulation
# ---------------------------------------------------------------------------


def _null_projector(V: np.ndarray, N: int) -> np.ndarray:
    """Projector onto the orthogonal complement of span{rows of V} (as column vectors)."""
    if V.shape[0] == 0:
        return np.eye(N, dtype=complex)
    U, s, _ = np.linalg.svd(V.T, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * s[0]))
    Q = U[:, rank:]
    return Q @ Q.conj().T


def project_zero_iui(problem: CellProblem, f: StackedPrecoder) -> StackedPrecoder:
    """Project each beam onto the nullspace of the co-scheduled users' channels."""
    H = problem.own_channels
    K, N = H.shape
    if K - 1 >= N:
        raise ValueError("zero-IUI nullspace is empty (K - 1 >= N)")
    F = f.beams.copy()
    for k in range(K):
        P = _null_projector(np.delete(H, k, axis=0), N)
        F[k] = P @ F[k]
    out = StackedPrecoder.from_beams(F, f.cell_index)
    return out.normalize()


def project_zero_ici(problem: CellProblem, f: StackedPrecoder) -> StackedPrecoder:
    """Project every beam onto the nullspace of the leakage channels."""
    N = problem.num_antennas
    if problem.num_victims >= N:
        raise ValueError("zero-ICI nullspace is empty (|U| >= N)")
    P = _null_projector(problem.leak_channels, N)
    F = f.beams @ P.T
    return StackedPrecoder.from_beams(F, f.cell_index).normalize()


def zero_iui_equivalence(problem: CellProblem, f: StackedPrecoder, project: bool = True) -> float:
    """Gap between the two high-SINR objectives under zero IUI.

    One side is ``log2(prod_k S_k / prod_j C_j)``; the other is
    ``sum_k log2 SILNR_k`` with the noise dropped (high-SINR regime). The
    geometric-mean leakage makes them agree exactly once ``f`` has no IUI.
    """
    if project:
        f = project_zero_iui(problem, f)
    t = cell_terms(problem, f, floor=None)
    coop_form = np.sum(np.log2(t.signal)) - np.sum(np.log2(t.leakage))
    local_form = np.sum(np.log2(t.signal / (t.iui + t.error + t.leak_pow)))
    return float(abs(coop_form - local_form))


def zero_ici_equivalence(problem: CellProblem, f: StackedPrecoder, project: bool = True) -> float:
    """Gap between the local SILNR sum rate and the zero-ICI SINR sum rate at ``f``."""
    if project:
        f = project_zero_ici(problem, f)
    t = cell_terms(problem, f, floor=None)
    local_form = np.sum(np.log2(t.numer / t.denom))
    no_leak = t.signal + t.iui + t.error + t.noise
    sinr_form = np.sum(np.log2(no_leak / (no_leak - t.signal)))
    return float(abs(local_form - sinr_form))
