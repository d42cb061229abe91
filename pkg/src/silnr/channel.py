"""Spatially correlated channels, MMSE estimates and pilot bookkeeping."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def gen_correlation(model: str, N: int, r: float = 0.0) -> np.ndarray:
    """Spatial correlation matrix with trace ``N``.

    ``iid`` gives the identity, ``exponential`` gives ``[R]_{mn} = r^{|m-n|}``.
    """
    if model == "iid":
        return np.eye(N, dtype=complex)
    if model != "exponential":
        raise ValueError(f"unknown correlation model {model!r}")
    if not 0 <= r < 1:
        raise ValueError(f"correlation coefficient must satisfy 0 <= r < 1, got {r}")
    idx = np.arange(N)
    R = (r ** np.abs(idx[:, None] - idx[None, :])).astype(complex)
    return R * (N / np.trace(R).real)


def psd_sqrt(M: np.ndarray, clip: float = 0.0) -> np.ndarray:
    """Hermitian square root; eigenvalues below ``clip`` are set to zero."""
    w, V = np.linalg.eigh(0.5 * (M + M.conj().T))
    w = np.where(w > clip, w, 0.0)
    return (V * np.sqrt(w)) @ V.conj().T


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@dataclass
class LinkGeometry:
    bs_index: int
    cell_index: int
    user_index: int
    beta: float
    correlation: np.ndarray

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        self.correlation = np.asarray(self.correlation, dtype=complex)

    @property
    def num_antennas(self) -> int:
        return self.correlation.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.beta * self.correlation


@dataclass
class ChannelEstimate:
    h_hat: np.ndarray
    phi: np.ndarray
    true_h: np.ndarray


@dataclass
class PilotPlan:
    clusters: Sequence[Sequence[int]]
    tau_u: int
    tau_d: int
    tau_c: int
    p_ul: float
    sigma2: float
    users_per_bs: Optional[Sequence[int]] = None
    num_bs: Optional[int] = None
    _owner: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if min(self.tau_u, self.tau_c) <= 0 or self.tau_d < 0:
            raise ValueError("training lengths must be positive")
        if self.tau_u + self.tau_d > self.tau_c:
            raise ValueError("training exceeds the coherence interval")
        if self.p_ul <= 0 or self.sigma2 <= 0:
            raise ValueError("p_ul and sigma2 must be positive")
        self.clusters = [list(c) for c in self.clusters]
        for ci, c in enumerate(self.clusters):
            for b in c:
                if b in self._owner:
                    raise ValueError(f"BS {b} appears in more than one cluster")
                self._owner[b] = ci
        if self.num_bs is not None and sorted(self._owner) != list(range(self.num_bs)):
            raise ValueError("clusters must cover every BS exactly once")
        if self.users_per_bs is not None:
            for ci, c in enumerate(self.clusters):
                need = sum(self.users_per_bs[b] for b in c)
                if need > self.tau_u:
                    raise ValueError(
                        f"cluster {ci} needs {need} orthogonal pilots but tau_u = {self.tau_u}"
                    )

    def cluster_of(self, bs: int) -> int:
        return self._owner[bs]

    def cluster_mates(self, bs: int) -> list:
        """Other BSs sharing the pilot-orthogonality set of ``bs``."""
        return [b for b in self.clusters[self._owner[bs]] if b != bs]

    def pilot_index(self, bs: int, user: int) -> int:
        """Pilot sequences are assigned consecutively inside each cluster."""
        offset = 0
        for b in self.clusters[self._owner[bs]]:
            if b == bs:
                return offset + user
            offset += self.users_per_bs[b]
        raise KeyError(bs)

    @property
    def overhead_factor(self) -> float:
        return 1.0 - (self.tau_u + self.tau_d) / self.tau_c


def draw_channel(geom: LinkGeometry, rng: np.random.Generator, sqrt_corr: Optional[np.ndarray] = None) -> np.ndarray:
    """``sqrt(beta) R^{1/2} w`` with ``w ~ CN(0, I)``."""
    if sqrt_corr is None:
        sqrt_corr = psd_sqrt(geom.correlation)
    w = crandn(rng, geom.num_antennas)
    return np.sqrt(geom.beta) * (sqrt_corr @ w)


def error_covariance(geom: LinkGeometry, contaminators: Sequence[LinkGeometry], plan: PilotPlan) -> np.ndarray:
    """MMSE error covariance of a link whose pilot is reused by ``contaminators``.

    ``beta R - beta^2 R (beta R + sum_c beta_c R_c + sigma2/(tau_u p_ul) I)^{-1} R``
    """
    N = geom.num_antennas
    cov = geom.covariance
    Q = cov + plan.sigma2 / (plan.tau_u * plan.p_ul) * np.eye(N)
    for c in contaminators:
        Q = Q + c.covariance
    Q = 0.5 * (Q + Q.conj().T)
    assert np.linalg.eigvalsh(Q).min() > 0, "pilot observation covariance must be positive definite"
    phi = cov - cov @ np.linalg.solve(Q, cov)
    return 0.5 * (phi + phi.conj().T)


def estimate_link(
    geom: LinkGeometry,
    contaminators: Sequence[LinkGeometry],
    plan: PilotPlan,
    rng: np.random.Generator,
    phi: Optional[np.ndarray] = None,
) -> ChannelEstimate:
    """Draw an (estimate, error) pair with the MMSE covariances; true channel is their sum."""
    if phi is None:
        phi = error_covariance(geom, contaminators, plan)
    est_cov = geom.covariance - phi
    w = np.linalg.eigvalsh(0.5 * (est_cov + est_cov.conj().T))
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        warnings.warn("estimate covariance is indefinite; clipping negative eigenvalues", RuntimeWarning)
    h_hat = psd_sqrt(est_cov, clip=1e-12 * max(abs(w).max(), 1e-300)) @ crandn(rng, geom.num_antennas)
    e = psd_sqrt(phi) @ crandn(rng, geom.num_antennas)
    return ChannelEstimate(h_hat, phi, h_hat + e)


def effective_noise(betas: np.ndarray, powers: np.ndarray, sigma2: float, exclude: Sequence[int] = ()) -> float:
    """Average interference-plus-noise power seen by one user.

    ``betas[j]`` is the large-scale gain from BS ``j`` to the user and
    ``powers[j]`` that BS's transmit power; indices in ``exclude`` (at least
    the serving BS) are left out. Each interfering BS is assumed to radiate
    unit total beam energy isotropically.
    """
    mask = np.ones(len(betas), dtype=bool)
    mask[list(exclude)] = False
    return float(np.dot(np.asarray(powers)[mask], np.asarray(betas)[mask]) + sigma2)
