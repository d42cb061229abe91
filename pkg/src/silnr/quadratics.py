"""Structured quadratic forms for stacked multi-user precoders.

A base station with ``N`` antennas serving ``K`` users stacks the per-user
beams into one vector ``f`` of length ``N*K``. Every matrix the precoder
design needs is built from Kronecker blocks of the form ``I_K (x) M`` or
``e_k e_k^T (x) h h^H`` plus a multiple of the identity, so quadratic forms
and linear solves are done block-wise and the ``NK x NK`` matrices are never
formed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

LEAKAGE_FLOOR = 1e-12


class SingularOperatorError(np.linalg.LinAlgError):
    """Raised when a block operator is not positive definite."""


class QuadKind(enum.Enum):
    SIGNAL = "signal"
    IUI_NOISE = "iui_noise"
    CROSS_LEAKAGE = "cross_leakage"
    ERROR = "error"


@dataclass
class StackedPrecoder:
    """Concatenated beams of one base station; beam ``k`` is ``coeffs[k*N:(k+1)*N]``."""

    coeffs: np.ndarray
    num_antennas: int
    num_users: int
    cell_index: int = 0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex).ravel()
        if self.coeffs.size != self.num_antennas * self.num_users:
            raise ValueError(
                f"precoder length {self.coeffs.size} != N*K = "
                f"{self.num_antennas}*{self.num_users}"
            )

    @classmethod
    def from_beams(cls, beams: np.ndarray, cell_index: int = 0) -> "StackedPrecoder":
        beams = np.asarray(beams, dtype=complex)
        return cls(beams.ravel(), beams.shape[1], beams.shape[0], cell_index)

    @property
    def beams(self) -> np.ndarray:
        """``(K, N)`` view, row ``k`` is ``f_k``."""
        return self.coeffs.reshape(self.num_users, self.num_antennas)

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self.coeffs, self.coeffs).real)

    def normalize(self) -> "StackedPrecoder":
        nrm = np.sqrt(self.norm_sq)
        if nrm == 0:
            raise ValueError("cannot normalize a zero precoder")
        return StackedPrecoder(self.coeffs / nrm, self.num_antennas, self.num_users, self.cell_index)


@dataclass
class StructuredQuadratic:
    """One of the four block-structured Hermitian PSD matrices.

    SIGNAL         e_k e_k^T (x) h h^H
    IUI_NOISE      I_K (x) h h^H - e_k e_k^T (x) h h^H + noise_scale * I
    CROSS_LEAKAGE  power_ratio * I_K (x) (h h^H + error_cov)
    ERROR          I_K (x) error_cov
    """

    kind: QuadKind
    channel: Optional[np.ndarray] = None
    user_slot: Optional[int] = None
    noise_scale: float = 0.0
    error_cov: Optional[np.ndarray] = None
    power_ratio: float = 1.0

    def __post_init__(self):
        if self.channel is not None:
            self.channel = np.asarray(self.channel, dtype=complex).ravel()
        if self.kind in (QuadKind.SIGNAL, QuadKind.IUI_NOISE) and self.user_slot is None:
            raise ValueError(f"{self.kind.value} quadratic needs a user_slot")
        if self.kind is QuadKind.ERROR and self.error_cov is None:
            raise ValueError("error quadratic needs error_cov")
        if self.noise_scale < 0 or self.power_ratio <= 0:
            raise ValueError("noise_scale must be >= 0 and power_ratio > 0")

    @property
    def size(self) -> int:
        if self.channel is not None:
            return self.channel.size
        return self.error_cov.shape[0]


def _beams_for(q: StructuredQuadratic, f: StackedPrecoder) -> np.ndarray:
    if q.size != f.num_antennas:
        raise ValueError(
            f"dimension mismatch: quadratic channel length {q.size} vs precoder "
            f"length {f.coeffs.size} (N={f.num_antennas}, K={f.num_users})"
        )
    return f.beams


def quad_form(q: StructuredQuadratic, f: StackedPrecoder) -> float:
    """``f^H M f`` for the matrix ``M`` encoded by ``q`` in O(N*K)."""
    F = _beams_for(q, f)
    if q.kind is QuadKind.ERROR:
        return float(np.einsum("kn,nm,km->", F.conj(), q.error_cov, F).real)
    proj = np.abs(F @ q.channel.conj()) ** 2
    if q.kind is QuadKind.SIGNAL:
        return float(proj[q.user_slot])
    if q.kind is QuadKind.IUI_NOISE:
        return float(proj.sum() - proj[q.user_slot] + q.noise_scale * f.norm_sq)
    val = proj.sum()
    if q.error_cov is not None:
        val += np.einsum("kn,nm,km->", F.conj(), q.error_cov, F).real
    return float(q.power_ratio * val)


def _log_geomean(values: np.ndarray) -> float:
    return float(np.mean(np.log(values)))


def leakage_geomean(leakage_quads: Sequence[StructuredQuadratic], f: StackedPrecoder) -> float:
    """Geometric mean of the per-victim leakage powers, computed in the log domain."""
    if len(leakage_quads) == 0:
        raise ValueError("leakage set is empty")
    terms = np.array([quad_form(q, f) for q in leakage_quads])
    if np.any(terms <= 0):
        return 0.0
    return float(np.exp(_log_geomean(terms)))


# ---------------------------------------------------------------------------
# Cell-level problem: all quadratics of one base station, vectorized
# ---------------------------------------------------------------------------


@dataclass
class CellProblem:
    """Local CSIT of one base station expressed as quadratic-form data.

    own_channels   (K, N) estimated channels to the served users
    noise          (K,)  effective noise over transmit power per user
    own_error      (K, N, N) CSIT error covariances of the served users, or None
    leak_channels  (U, N) estimated channels to the other-cell users in the
                   pilot cluster (the leakage victims)
    leak_error     (U, N, N) or None
    leak_ratio     (U,) power ratio applied to each leakage term
    leak_noise     (U,) noise power of each victim in the units of the leakage
                   term; enters as ``leak_noise * ||f||^2`` so each leakage term
                   cannot be driven below the victim's noise level, or None
    """

    own_channels: np.ndarray
    noise: np.ndarray
    own_error: Optional[np.ndarray] = None
    leak_channels: Optional[np.ndarray] = None
    leak_error: Optional[np.ndarray] = None
    leak_ratio: Optional[np.ndarray] = None
    cell_index: int = 0
    leak_noise: Optional[np.ndarray] = None

    def __post_init__(self):
        self.own_channels = np.atleast_2d(np.asarray(self.own_channels, dtype=complex))
        K, N = self.own_channels.shape
        self.noise = np.broadcast_to(np.asarray(self.noise, dtype=float), (K,)).copy()
        if self.leak_channels is None:
            self.leak_channels = np.zeros((0, N), dtype=complex)
        self.leak_channels = np.asarray(self.leak_channels, dtype=complex).reshape(-1, N)
        U = self.leak_channels.shape[0]
        if self.leak_ratio is None:
            self.leak_ratio = np.ones(U)
        self.leak_ratio = np.broadcast_to(np.asarray(self.leak_ratio, dtype=float), (U,)).copy()
        if self.leak_noise is not None:
            self.leak_noise = np.broadcast_to(np.asarray(self.leak_noise, dtype=float), (U,)).copy()
        if self.own_error is not None:
            self.own_error = np.asarray(self.own_error, dtype=complex).reshape(K, N, N)
        if self.leak_error is not None:
            self.leak_error = np.asarray(self.leak_error, dtype=complex).reshape(U, N, N)

    @property
    def num_antennas(self) -> int:
        return self.own_channels.shape[1]

    @property
    def num_users(self) -> int:
        return self.own_channels.shape[0]

    @property
    def num_victims(self) -> int:
        return self.leak_channels.shape[0]

    @property
    def leakage_exponent(self) -> float:
        """``|U|/K``; the two-cell case has ``|U| = K_other``."""
        return self.num_victims / self.num_users

    def scaled(self, factor: float) -> "CellProblem":
        """Every quadratic multiplied by ``factor`` (e.g. to express powers in noise units)."""
        return CellProblem(
            self.own_channels * np.sqrt(factor),
            self.noise * factor,
            None if self.own_error is None else self.own_error * factor,
            self.leak_channels * np.sqrt(factor),
            None if self.leak_error is None else self.leak_error * factor,
            self.leak_ratio,
            self.cell_index,
            None if self.leak_noise is None else self.leak_noise * factor,
        )

    # quadratic lists, for the per-quad API
    def signal_quads(self):
        return [StructuredQuadratic(QuadKind.SIGNAL, h, user_slot=k) for k, h in enumerate(self.own_channels)]

    def iui_quads(self):
        return [
            StructuredQuadratic(QuadKind.IUI_NOISE, h, user_slot=k, noise_scale=float(self.noise[k]))
            for k, h in enumerate(self.own_channels)
        ]

    def error_quads(self):
        if self.own_error is None:
            return []
        return [StructuredQuadratic(QuadKind.ERROR, error_cov=E) for E in self.own_error]

    def leakage_quads(self):
        return [
            StructuredQuadratic(
                QuadKind.CROSS_LEAKAGE,
                h,
                error_cov=None if self.leak_error is None else self.leak_error[j],
                power_ratio=float(self.leak_ratio[j]),
            )
            for j, h in enumerate(self.leak_channels)
        ]

    def check(self, f: StackedPrecoder) -> np.ndarray:
        if f.num_antennas != self.num_antennas or f.num_users != self.num_users:
            raise ValueError(
                f"dimension mismatch: problem N*K = {self.num_antennas}*{self.num_users}, "
                f"precoder length {f.coeffs.size}"
            )
        return f.beams


@dataclass
class CellTerms:
    """Scalar ingredients of the objective at one precoder."""

    signal: np.ndarray  # (K,) |h_k^H f_k|^2
    iui: np.ndarray  # (K,) sum_{i != k} |h_k^H f_i|^2
    error: np.ndarray  # (K,) sum_i f_i^H Phi_k f_i
    noise: np.ndarray  # (K,) noise_k * ||f||^2
    leakage: np.ndarray  # (U,) raw f^H C_j f
    leakage_used: np.ndarray  # (U,) leakage after the optimization floor
    floored: np.ndarray  # (U,) bool, term sits on the floor
    leak_pow: float  # L(f)^{|U|/K}
    norm_sq: float

    @property
    def numer(self) -> np.ndarray:
        return self.signal + self.iui + self.error + self.noise + self.leak_pow

    @property
    def denom(self) -> np.ndarray:
        return self.iui + self.error + self.noise + self.leak_pow


def cell_terms(problem: CellProblem, f: StackedPrecoder, floor: Optional[float] = LEAKAGE_FLOOR) -> CellTerms:
    """Evaluate all quadratic forms of ``problem`` at ``f``.

    ``floor`` clamps each leakage term before the geometric mean; pass ``None``
    for metric reporting, where a zero term annihilates the mean.
    """
    F = problem.check(f)
    G = problem.own_channels.conj() @ F.T  # G[k, i] = h_k^H f_i
    P = np.abs(G) ** 2
    signal = np.diag(P).copy()
    iui = P.sum(axis=1) - signal
    nsq = float(np.vdot(f.coeffs, f.coeffs).real)
    if problem.own_error is not None:
        error = np.einsum("im,kmn,in->k", F.conj(), problem.own_error, F).real
    else:
        error = np.zeros(problem.num_users)
    U = problem.num_victims
    if U:
        leak = (np.abs(problem.leak_channels.conj() @ F.T) ** 2).sum(axis=1)
        if problem.leak_error is not None:
            leak = leak + np.einsum("im,jmn,in->j", F.conj(), problem.leak_error, F).real
        leak = problem.leak_ratio * leak
        if problem.leak_noise is not None:
            leak = leak + problem.leak_noise * nsq
        if floor is None:
            used = leak
            leak_pow = 0.0 if np.any(leak <= 0) else float(np.exp(np.sum(np.log(leak)) / problem.num_users))
        else:
            used = np.maximum(leak, floor)
            leak_pow = float(np.exp(np.sum(np.log(used)) / problem.num_users))
    else:
        leak = used = np.zeros(0)
        leak_pow = 0.0
    floored = used > leak
    return CellTerms(signal, iui, error, problem.noise * nsq, leak, used, floored, leak_pow, nsq)


def silnr(problem: CellProblem, f: StackedPrecoder, user_index: int, floor: Optional[float] = None) -> float:
    """SILNR of served user ``user_index``; leakage enters as ``L(f)^{|U|/K}``."""
    if not 0 <= user_index < problem.num_users:
        raise IndexError(f"user_index {user_index} out of range for K={problem.num_users}")
    t = cell_terms(problem, f, floor)
    den = t.denom[user_index]
    assert den > 0, "SILNR denominator must be positive"
    return float(t.signal[user_index] / den)


def log_gamma(problem: CellProblem, f: StackedPrecoder, floor: Optional[float] = LEAKAGE_FLOOR) -> float:
    t = cell_terms(problem, f, floor)
    return float(np.sum(np.log(t.numer) - np.log(t.denom)))


def gamma_objective(problem: CellProblem, f: StackedPrecoder, floor: Optional[float] = LEAKAGE_FLOOR) -> float:
    """``prod_k (1 + SILNR_k)``, accumulated as a sum of logs."""
    return float(np.exp(log_gamma(problem, f, floor)))


# ---------------------------------------------------------------------------
# Block operators
# ---------------------------------------------------------------------------


@dataclass
class BlockOperator:
    """Hermitian operator on C^{NK}:

        scalar * I + I_K (x) (sum_r w_r v_r v_r^H + dense) + sum_k s_k e_k e_k^T (x) u_k u_k^H

    Every block shares the N x N part; slot ``k`` additionally carries a
    weighted rank-one term. ``solve`` inverts the shared part once (successive
    Sherman-Morrison updates when there is no dense part) and then applies
    one rank-one correction per block, so a solve costs O(r N^2 + K N^2).
    """

    num_antennas: int
    num_users: int
    scalar: float = 0.0
    vecs: np.ndarray = None
    weights: np.ndarray = None
    dense: Optional[np.ndarray] = None
    slot_vecs: Optional[np.ndarray] = None
    slot_weights: Optional[np.ndarray] = None
    _shared_inv: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        N = self.num_antennas
        if self.vecs is None:
            self.vecs = np.zeros((0, N), dtype=complex)
            self.weights = np.zeros(0)

    def matvec(self, F: np.ndarray) -> np.ndarray:
        """Apply to beams ``F`` of shape ``(K, N)``."""
        out = self.scalar * F
        if self.vecs.shape[0]:
            out = out + ((F @ self.vecs.conj().T) * self.weights) @ self.vecs
        if self.dense is not None:
            out = out + F @ self.dense.T
        if self.slot_vecs is not None:
            coef = np.sum(self.slot_vecs.conj() * F, axis=1) * self.slot_weights
            out = out + coef[:, None] * self.slot_vecs
        return out

    def quad(self, F: np.ndarray) -> float:
        return float(np.vdot(F, self.matvec(F)).real)

    def shared_inverse(self) -> np.ndarray:
        if self._shared_inv is not None:
            return self._shared_inv
        N = self.num_antennas
        if self.dense is None:
            if self.scalar <= 0:
                raise SingularOperatorError("shared block has no positive identity part")
            inv = np.eye(N, dtype=complex) / self.scalar
            for v, w in zip(self.vecs, self.weights):
                if w == 0:
                    continue
                u = inv @ v
                den = 1.0 + w * np.vdot(v, u).real
                if den <= 0:
                    raise SingularOperatorError("shared block lost positive definiteness")
                inv -= (w / den) * np.outer(u, u.conj())
        else:
            W = self.dense + self.scalar * np.eye(N)
            if self.vecs.shape[0]:
                W = W + (self.vecs.T * self.weights) @ self.vecs.conj()
            W = 0.5 * (W + W.conj().T)
            try:
                c = scipy.linalg.cho_factor(W)
            except np.linalg.LinAlgError as exc:
                raise SingularOperatorError(str(exc)) from exc
            inv = scipy.linalg.cho_solve(c, np.eye(N, dtype=complex))
        self._shared_inv = inv
        return inv

    def solve(self, Y: np.ndarray) -> np.ndarray:
        """Return ``X`` with ``self.matvec(X) == Y``."""
        inv = self.shared_inverse()
        Z = Y @ inv.T
        if self.slot_vecs is None:
            return Z
        T = self.slot_vecs @ inv.T
        den = 1.0 + self.slot_weights * np.sum(self.slot_vecs.conj() * T, axis=1).real
        if np.any(den <= 0):
            raise SingularOperatorError("block operator is not positive definite")
        coef = self.slot_weights * np.sum(self.slot_vecs.conj() * Z, axis=1) / den
        return Z - coef[:, None] * T

    def to_dense(self, max_dim: int = 64) -> np.ndarray:
        """Explicit matrix; restricted to small test-scale problems."""
        n = self.num_antennas * self.num_users
        if n > max_dim:
            raise ValueError(f"refusing dense construction of a {n}x{n} operator")
        eye = np.eye(n, dtype=complex)
        cols = [self.matvec(eye[:, c].reshape(self.num_users, self.num_antennas)).ravel() for c in range(n)]
        return np.array(cols).T


# ---------------------------------------------------------------------------
# functional matrices of the stationarity condition
# ---------------------------------------------------------------------------


def _pencil(problem: CellProblem, t: CellTerms, a_shift: float = 0.0, b_shift: float = 0.0):
    """Normalized pencil ``(sum_i X^A_i / a_i, sum_i X^B_i / b_i)`` plus identity shifts."""
    K, N = problem.own_channels.shape
    a, b = t.numer, t.denom
    inv_a, inv_b = 1.0 / a, 1.0 / b
    # leakage gradient matrix C~ = I (x) M_C, M_C = (L^p / K) sum_j C_j / q_j
    c_scalar = 0.0
    if problem.num_victims:
        # floored terms are constant, so they carry no gradient
        base = np.where(~t.floored, t.leak_pow / K / t.leakage_used, 0.0)
        cw = base * problem.leak_ratio
        if problem.leak_noise is not None:
            c_scalar = float(np.dot(base, problem.leak_noise))
    else:
        cw = np.zeros(0)
    vecs = np.concatenate([problem.own_channels, problem.leak_channels])
    wa = np.concatenate([inv_a, inv_a.sum() * cw])
    wb = np.concatenate([inv_b, inv_b.sum() * cw])
    dense_a = dense_b = None
    if problem.own_error is not None or problem.leak_error is not None:
        Eo = np.zeros((N, N), dtype=complex)
        if problem.own_error is not None:
            Eo_a = np.tensordot(inv_a, problem.own_error, axes=1)
            Eo_b = np.tensordot(inv_b, problem.own_error, axes=1)
        else:
            Eo_a = Eo_b = Eo
        if problem.leak_error is not None and problem.num_victims:
            El = np.tensordot(cw, problem.leak_error, axes=1)
        else:
            El = Eo
        dense_a = Eo_a + inv_a.sum() * El
        dense_b = Eo_b + inv_b.sum() * El
    sa = float(np.dot(problem.noise, inv_a) + inv_a.sum() * c_scalar)
    sb = float(np.dot(problem.noise, inv_b) + inv_b.sum() * c_scalar)
    A = BlockOperator(N, K, sa + a_shift, vecs, wa, dense_a)
    B = BlockOperator(
        N, K, sb + b_shift, vecs, wb, dense_b,
        slot_vecs=problem.own_channels, slot_weights=-inv_b,
    )
    return A, B


@dataclass
class FunctionalMatrices:
    """Actions of ``A_bar(f)`` and ``B_bar(f, lam)`` at a fixed precoder.

    Internally both are stored divided by their natural scales
    ``prod_k a_k`` and ``prod_k b_k``; ``a_bar``/``b_bar`` restore the scale.
    ``lam`` is the multiplier of ``gamma(f) - lam (||f||^2 - 1)``; in the
    unscaled ``B_bar`` it appears as ``(prod_k b_k) * lam / gamma`` on the
    diagonal.
    """

    A: BlockOperator
    B: BlockOperator
    gamma: float
    lam: float
    log_scale_a: float
    log_scale_b: float
    terms: CellTerms

    @property
    def num_users(self) -> int:
        return self.A.num_users

    @property
    def num_antennas(self) -> int:
        return self.A.num_antennas

    def _shape(self, v):
        return np.asarray(v, dtype=complex).reshape(self.num_users, self.num_antennas)

    def a_action(self, v) -> np.ndarray:
        return self.A.matvec(self._shape(v)).ravel()

    def b_action(self, v) -> np.ndarray:
        return self.B.matvec(self._shape(v)).ravel()

    def b_solve(self, v) -> np.ndarray:
        return self.B.solve(self._shape(v)).ravel()

    def a_bar(self, v) -> np.ndarray:
        return np.exp(self.log_scale_a) * self.a_action(v)

    def b_bar(self, v) -> np.ndarray:
        return np.exp(self.log_scale_b) * self.b_action(v)

    def b_bar_inverse(self, v) -> np.ndarray:
        return np.exp(-self.log_scale_b) * self.b_solve(v)

    @property
    def scaled_multiplier(self) -> float:
        """Multiplier as it appears in the unscaled ``B_bar``: ``(prod b) * lam``."""
        return float(np.exp(self.log_scale_b) * self.lam)


def build_functionals(
    problem: CellProblem, f: StackedPrecoder, lam: float = 0.0, floor: float = LEAKAGE_FLOOR
) -> FunctionalMatrices:
    t = cell_terms(problem, f, floor)
    gamma = float(np.exp(np.sum(np.log(t.numer) - np.log(t.denom))))
    A, B = _pencil(problem, t, b_shift=lam / gamma)
    return FunctionalMatrices(A, B, gamma, lam, float(np.sum(np.log(t.numer))), float(np.sum(np.log(t.denom))), t)
