"""First- and second-order certificates and finite-difference oracles.

Conventions: the Lagrangian is ``gamma(f) - lam (||f||^2 - 1)``; gradients
are ``g = d/dRe + 1j d/dIm = 2 d/df*``; the complex Hessian is the mixed
``H = d^2 / df* df^T``. Everything here is test-scale: the dense path is
used up to ``N*K = 64`` and a Lanczos path beyond.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .quadratics import LEAKAGE_FLOOR, CellProblem, StackedPrecoder, _pencil, cell_terms

DENSE_LIMIT = 64


@dataclass
class Certificate:
    stationarity_residual: float
    second_order_pass: bool
    lhs_max_eig: float
    rhs_min_eig: float
    # the split on the full space, with a single eta eta^H and no W terms
    unprojected_lhs_max_eig: float = float("nan")
    unprojected_rhs_min_eig: float = float("nan")
    # largest eigenvalue of the real Hessian on the sphere's tangent space, per-user phases removed
    tangent_max_eig: Optional[float] = None
    gradient_check_error: Optional[float] = None
    advisory: bool = False
    lanczos: bool = False

    @property
    def unprojected_pass(self) -> bool:
        return bool(self.unprojected_lhs_max_eig < self.unprojected_rhs_min_eig)

    @property
    def tangent_negative(self) -> Optional[bool]:
        """Exact local-maximum check; None when the tangent Hessian was not computed."""
        return None if self.tangent_max_eig is None else bool(self.tangent_max_eig < 0)


def _unit(f: StackedPrecoder) -> np.ndarray:
    return f.beams


def lagrangian(problem: CellProblem, F: np.ndarray, lam: float, floor=LEAKAGE_FLOOR) -> float:
    t = cell_terms(problem, StackedPrecoder.from_beams(F), floor)
    gamma = float(np.exp(np.sum(np.log(t.numer) - np.log(t.denom))))
    return gamma - lam * (t.norm_sq - 1.0)


def stationarity_residual(problem: CellProblem, f: StackedPrecoder, lam: float, floor=LEAKAGE_FLOOR) -> float:
    """``||A f - gamma B f|| / ||A f||`` with both pencils in normalized scale."""
    F = f.beams
    t = cell_terms(problem, f, floor)
    if np.any(t.numer <= 0) or np.any(t.denom <= 0):
        return float("inf")
    gamma = float(np.exp(np.sum(np.log(t.numer) - np.log(t.denom))))
    A, B = _pencil(problem, t, b_shift=lam / gamma)
    AF = A.matvec(F)
    nrm = np.linalg.norm(AF)
    if nrm == 0 or not np.isfinite(nrm):
        return float("inf")
    return float(np.linalg.norm(AF - B.matvec(F)) / nrm)


class _Pieces:
    """Matrix-free actions of every term in the complex Hessian at ``f``."""

    def __init__(self, problem: CellProblem, F: np.ndarray, lam: float, floor=LEAKAGE_FLOOR):
        self.p = problem
        self.F = F
        self.K, self.N = F.shape
        t = cell_terms(problem, StackedPrecoder.from_beams(F), floor)
        self.t = t
        self.a, self.b = t.numer, t.denom
        self.gamma = float(np.exp(np.sum(np.log(self.a) - np.log(self.b))))
        self.lam = lam
        self.An, self.Bn = _pencil(problem, t)  # no multiplier shift
        self.Lp = t.leak_pow
        K, N = self.K, self.N
        U = problem.num_victims
        if U:
            self.base = np.where(~t.floored, self.Lp / K / t.leakage_used, 0.0)
        else:
            self.base = np.zeros(0)
        self.eta = (self.An.matvec(F) - self.Bn.matvec(F)).ravel()
        # X^A_i f and X^B_i f
        Cf = self.ctilde(F)
        self.xa = np.array([(self.atilde(i, F) + Cf).ravel() for i in range(K)])
        self.xb = np.array([(self.btilde(i, F) + Cf).ravel() for i in range(K)])
        self.w = Cf.ravel()
        self.z = np.array([self.cj(j, F).ravel() for j in range(U)]).reshape(U, N * K)

    # --- building blocks on (K, N) arrays ---
    def atilde(self, i, V):
        h = self.p.own_channels[i]
        out = np.outer(V @ h.conj(), h) + self.p.noise[i] * V
        if self.p.own_error is not None:
            out = out + V @ self.p.own_error[i].T
        return out

    def btilde(self, i, V):
        h = self.p.own_channels[i]
        out = self.atilde(i, V)
        out[i] -= (h.conj() @ V[i]) * h
        return out

    def cj(self, j, V):
        g = self.p.leak_channels[j]
        out = np.outer(V @ g.conj(), g)
        if self.p.leak_error is not None:
            out = out + V @ self.p.leak_error[j].T
        out = self.p.leak_ratio[j] * out
        if self.p.leak_noise is not None:
            out = out + self.p.leak_noise[j] * V
        return out

    def ctilde(self, V):
        out = np.zeros_like(V)
        for j in range(self.p.num_victims):
            if self.base[j]:
                out = out + self.base[j] * self.cj(j, V)
        return out

    # --- Hessian groups on flat vectors ---
    def _rank(self, vecs, weights, v):
        return vecs.T @ (weights * (vecs.conj() @ v)) if len(vecs) else np.zeros_like(v)

    def W(self, v):
        if self.Lp == 0:
            return np.zeros_like(v)
        return self.w * (np.vdot(self.w, v) / self.Lp)

    def Z(self, v):
        if self.p.num_victims == 0:
            return np.zeros_like(v)
        q = self.t.leakage_used
        wts = np.where(~self.t.floored, self.Lp / (self.K * q ** 2), 0.0)
        return self._rank(self.z, wts, v)

    def _mat(self, op, v):
        return op.matvec(v.reshape(self.K, self.N)).ravel()

    def left(self, v, unprojected=False):
        g = self.gamma
        sa, sb = np.sum(1 / self.a), np.sum(1 / self.b)
        eta_term = self.eta * np.vdot(self.eta, v)
        out = (eta_term if unprojected else g * eta_term)
        out = out + g * (self._mat(self.An, v) + sb * self.Z(v) + self._rank(self.xb, 1 / self.b ** 2, v))
        if not unprojected:
            out = out + g * sa * self.W(v)
        return out

    def right(self, v, unprojected=False):
        g = self.gamma
        sa, sb = np.sum(1 / self.a), np.sum(1 / self.b)
        out = g * (self._mat(self.Bn, v) + sa * self.Z(v) + self._rank(self.xa, 1 / self.a ** 2, v))
        if not unprojected:
            out = out + g * sb * self.W(v)
        return out + self.lam * v

    def hessian(self, v):
        return self.left(v) - self.right(v)


def _dense(op: Callable, n: int) -> np.ndarray:
    eye = np.eye(n, dtype=complex)
    M = np.array([op(eye[:, c]) for c in range(n)]).T
    return 0.5 * (M + M.conj().T)


def complex_hessian(problem: CellProblem, f: StackedPrecoder, lam: float, floor=LEAKAGE_FLOOR) -> np.ndarray:
    """Closed-form mixed Hessian ``d^2 L / df* df^T`` (dense, test scale)."""
    n = f.coeffs.size
    if n > DENSE_LIMIT:
        raise ValueError(f"dense Hessian refused at N*K = {n} > {DENSE_LIMIT}")
    P = _Pieces(problem, f.beams, lam, floor)
    return _dense(P.hessian, n)


def closed_form_gradient(problem: CellProblem, f: StackedPrecoder, lam: float, floor=LEAKAGE_FLOOR) -> np.ndarray:
    """``2 gamma eta - 2 lam f``."""
    P = _Pieces(problem, f.beams, lam, floor)
    return 2 * P.gamma * P.eta - 2 * lam * f.coeffs


def fd_gradient(problem: CellProblem, f: StackedPrecoder, lam: float, step: float, floor=LEAKAGE_FLOOR) -> np.ndarray:
    x = f.coeffs
    K, N = f.num_users, f.num_antennas
    fun = lambda z: lagrangian(problem, z.reshape(K, N), lam, floor)
    g = np.zeros(x.size, dtype=complex)
    for m in range(x.size):
        for unit, part in ((1.0, 1.0), (1j, 1j)):
            e = np.zeros(x.size, dtype=complex)
            e[m] = unit * step
            g[m] += part * (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def gradient_oracle(problem: CellProblem, f: StackedPrecoder, lam: float, step: float = 1e-5, floor=LEAKAGE_FLOOR) -> float:
    """Relative error of the closed-form Lagrangian gradient against central differences."""
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    g_fd = fd_gradient(problem, f, lam, step, floor)
    g_cf = closed_form_gradient(problem, f, lam, floor)
    return float(np.linalg.norm(g_fd - g_cf) / max(np.linalg.norm(g_fd), 1e-300))


def fd_real_hessian(fun: Callable, x: np.ndarray, step: float) -> np.ndarray:
    """Second-order central differences of a scalar function of a real vector."""
    n = x.size
    H = np.zeros((n, n))
    f0 = fun(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        H[i, i] = (fun(x + ei) - 2 * f0 + fun(x - ei)) / step ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = step
            val = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)) / (4 * step ** 2)
            H[i, j] = H[j, i] = val
    return H


def fd_complex_hessian(problem: CellProblem, f: StackedPrecoder, lam: float, step: float = 1e-4, floor=LEAKAGE_FLOOR) -> np.ndarray:
    n = f.coeffs.size
    K, N = f.num_users, f.num_antennas
    fun = lambda xr: lagrangian(problem, (xr[:n] + 1j * xr[n:]).reshape(K, N), lam, floor)
    x = np.concatenate([f.coeffs.real, f.coeffs.imag])
    R = fd_real_hessian(fun, x, step)
    Hxx, Hxy, Hyx, Hyy = R[:n, :n], R[:n, n:], R[n:, :n], R[n:, n:]
    return 0.25 * (Hxx + Hyy + 1j * (Hyx - Hxy))


def hessian_oracle(problem: CellProblem, f: StackedPrecoder, lam: float, step: float = 1e-4, floor=LEAKAGE_FLOOR) -> float:
    """Relative Frobenius error of the closed-form complex Hessian against finite differences."""
    if f.coeffs.size > 16:
        raise ValueError("hessian_oracle is test-scale only (N*K <= 16)")
    if abs(f.norm_sq - 1.0) > 1e-9:
        raise ValueError("hessian_oracle expects a unit-norm precoder")
    H_fd = fd_complex_hessian(problem, f, lam, step, floor)
    H_cf = complex_hessian(problem, f, lam, floor)
    return float(np.linalg.norm(H_fd - H_cf) / max(np.linalg.norm(H_fd), 1e-300))


def _complement_basis(f: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the complex orthogonal complement of ``f``."""
    u = f / np.linalg.norm(f)
    Q, _ = np.linalg.qr(np.column_stack([u, np.eye(u.size, dtype=complex)]))
    return Q[:, 1 : u.size]


def _real_tangent_basis(F: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Orthonormal real basis of the sphere's tangent space at ``F`` with every
    per-user phase rotation ``1j * f_k`` removed (the objective only sees
    ``|h^H f_k|^2`` and ``f_k^H M f_k``, so each of these is a flat direction)."""
    K, N = F.shape
    n = K * N
    x = np.concatenate([F.ravel().real, F.ravel().imag])
    drop = [x / np.linalg.norm(x)]
    for k in range(K):
        if np.linalg.norm(F[k]) > tol:
            d = np.zeros((K, N), dtype=complex)
            d[k] = 1j * F[k]
            drop.append(np.concatenate([d.ravel().real, d.ravel().imag]))
    D = np.column_stack(drop)
    Q, _ = np.linalg.qr(np.column_stack([D, np.eye(2 * n)]))
    return Q[:, D.shape[1] : 2 * n]


def tangent_hessian_max_eig(problem: CellProblem, f: StackedPrecoder, lam: float, step: float = 1e-6, floor=LEAKAGE_FLOOR) -> float:
    """Largest eigenvalue of the real Lagrangian Hessian on the tangent space
    of the sphere, per-user phase rotations removed. Built by central
    differences of the closed-form gradient."""
    n = f.coeffs.size
    K, N = f.num_users, f.num_antennas

    def grad_real(xr):
        g = closed_form_gradient(problem, StackedPrecoder((xr[:n] + 1j * xr[n:]), N, K), lam, floor)
        return np.concatenate([g.real, g.imag])

    x = np.concatenate([f.coeffs.real, f.coeffs.imag])
    R = np.zeros((2 * n, 2 * n))
    for i in range(2 * n):
        e = np.zeros(2 * n)
        e[i] = step
        R[:, i] = (grad_real(x + e) - grad_real(x - e)) / (2 * step)
    R = 0.5 * (R + R.T)
    T = _real_tangent_basis(f.beams)
    return float(np.linalg.eigvalsh(T.T @ R @ T).max())


def _extreme_eigs(left_op, right_op, f: np.ndarray, project: bool):
    n = f.size
    u = f / np.linalg.norm(f)
    if n <= DENSE_LIMIT:
        Lm = _dense(left_op, n)
        Rm = _dense(right_op, n)
        if project:
            Q = _complement_basis(u)
            Lm = Q.conj().T @ Lm @ Q
            Rm = Q.conj().T @ Rm @ Q
        return float(np.linalg.eigvalsh(Lm).max()), float(np.linalg.eigvalsh(Rm).min()), False

    if project:
        # Householder reflection sending u to a multiple of e_1: the complement
        # of u is then the span of the remaining coordinates, exactly
        w = u.astype(complex).copy()
        alpha = -np.exp(1j * np.angle(w[0])) if w[0] != 0 else -1.0
        w[0] -= alpha
        w /= np.linalg.norm(w)
        refl = lambda v: v - 2 * w * np.vdot(w, v)

        def restrict(op):
            return lambda x: refl(op(refl(np.concatenate([[0.0], np.ravel(x)]))))[1:]

        lo, ro, m = restrict(left_op), restrict(right_op), n - 1
    else:
        lo, ro, m = left_op, right_op, n

    def top(op):
        A = spla.LinearOperator((m, m), matvec=op, dtype=complex)
        return float(spla.eigsh(A, k=1, which="LA", return_eigenvectors=False, tol=1e-10, maxiter=20 * m)[0].real)

    lmax = top(lo)
    # smallest eigenvalue as a largest one of the reflected spectrum (faster for ARPACK)
    rtop = top(ro)
    rmin = rtop - top(lambda x: rtop * x - ro(x))
    return lmax, rmin, True


def second_order_test(
    problem: CellProblem,
    f: StackedPrecoder,
    lam: float,
    floor=LEAKAGE_FLOOR,
    with_tangent: bool = False,
) -> Certificate:
    """Spectral split of the complex Hessian into two PSD groups.

    The pass/fail comparison is made on the complex orthogonal complement
    of ``f``: both the radial direction (fixed by the norm constraint) and
    the phase direction (along which the objective is constant) carry no
    curvature information. The unprojected split in its original form, with a single
    ``eta eta^H`` and without the ``(C~f)(C~f)^H`` terms, is reported too.
    """
    F = f.beams
    res = stationarity_residual(problem, f, lam, floor)
    P = _Pieces(problem, F, lam, floor)
    lmax, rmin, lanczos = _extreme_eigs(P.left, P.right, f.coeffs, project=True)
    plmax, prmin, _ = _extreme_eigs(
        lambda v: P.left(v, unprojected=True), lambda v: P.right(v, unprojected=True), f.coeffs, project=False
    )
    tang = None
    if with_tangent and f.coeffs.size <= DENSE_LIMIT:
        tang = tangent_hessian_max_eig(problem, f, lam, floor=floor)
    return Certificate(
        stationarity_residual=res,
        second_order_pass=bool(lmax < rmin),
        lhs_max_eig=lmax,
        rhs_min_eig=rmin,
        unprojected_lhs_max_eig=plmax,
        unprojected_rhs_min_eig=prmin,
        tangent_max_eig=tang,
        advisory=bool(res >= 1e-3),
        lanczos=lanczos,
    )
