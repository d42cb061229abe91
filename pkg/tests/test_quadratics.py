import numpy as np
import pytest

from oracles import crandn, dense_functionals, dense_objective, dense_problem, dense_quad, random_problem, random_unit
from silnr.quadratics import (
    BlockOperator,
    CellProblem,
    QuadKind,
    SingularOperatorError,
    StackedPrecoder,
    StructuredQuadratic,
    build_functionals,
    cell_terms,
    gamma_objective,
    leakage_geomean,
    log_gamma,
    quad_form,
    silnr,
)


def sp(vals, K):
    return StackedPrecoder.from_beams(np.asarray(vals, dtype=complex).reshape(K, -1))


# --- StackedPrecoder ---


def test_normalize_gives_unit_norm():
    rng = np.random.default_rng(0)
    f = StackedPrecoder.from_beams(3.7 * crandn(rng, 3, 5)).normalize()
    assert abs(f.norm_sq - 1.0) < 1e-9
    assert f.coeffs.size == 15
    assert f.beams.shape == (3, 5)


def test_beam_slots_are_contiguous():
    f = StackedPrecoder.from_beams(np.arange(6, dtype=complex).reshape(2, 3))
    np.testing.assert_array_equal(f.coeffs, np.arange(6))


# --- quad_form ---


def test_signal_quad_aligned():
    q = StructuredQuadratic(QuadKind.SIGNAL, channel=[1, 0], user_slot=0)
    assert quad_form(q, sp([1, 0, 0, 0], 2)) == pytest.approx(1.0)


def test_signal_quad_other_slot_is_zero():
    q = StructuredQuadratic(QuadKind.SIGNAL, channel=[1, 0], user_slot=0)
    assert quad_form(q, sp([0, 0, 1, 0], 2)) == pytest.approx(0.0)


def test_iui_noise_quad_zero_channel():
    rng = np.random.default_rng(1)
    q = StructuredQuadratic(QuadKind.IUI_NOISE, channel=np.zeros(3), user_slot=1, noise_scale=0.5)
    assert quad_form(q, random_unit(rng, 2, 3)) == pytest.approx(0.5)


def test_quad_dimension_mismatch_names_lengths():
    q = StructuredQuadratic(QuadKind.SIGNAL, channel=[1, 0, 0], user_slot=0)
    with pytest.raises(ValueError, match="3.*4"):
        quad_form(q, sp([1, 0, 0, 0], 2))


def _all_quads(rng, N, K):
    h = crandn(rng, N)
    X = crandn(rng, N, N)
    cov = X @ X.conj().T / N
    return [
        StructuredQuadratic(QuadKind.SIGNAL, channel=h, user_slot=K - 1),
        StructuredQuadratic(QuadKind.IUI_NOISE, channel=h, user_slot=0, noise_scale=0.3),
        StructuredQuadratic(QuadKind.ERROR, error_cov=cov),
        StructuredQuadratic(QuadKind.CROSS_LEAKAGE, channel=h, error_cov=cov, power_ratio=2.5),
    ]


@pytest.mark.parametrize("N,K", [(2, 1), (3, 2), (4, 3)])
def test_structured_matches_dense_kronecker(N, K):
    rng = np.random.default_rng(N * 10 + K)
    for q in _all_quads(rng, N, K):
        M = dense_quad(q, K)
        for _ in range(5):
            f = StackedPrecoder.from_beams(crandn(rng, K, N))
            ref = np.vdot(f.coeffs, M @ f.coeffs).real
            assert quad_form(q, f) == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_quads_nonnegative_and_scale_covariant():
    rng = np.random.default_rng(2)
    for _ in range(50):
        for q in _all_quads(rng, 4, 3):
            f = StackedPrecoder.from_beams(crandn(rng, 3, 4))
            c = complex(*rng.standard_normal(2))
            v = quad_form(q, f)
            assert v >= -1e-12
            g = StackedPrecoder.from_beams(c * f.beams)
            assert quad_form(q, g) == pytest.approx(abs(c) ** 2 * v, rel=1e-10, abs=1e-12)


# --- leakage_geomean ---


def _const_leak(N, value):
    # ||f|| = 1 and channel zero: only the error covariance contributes
    return StructuredQuadratic(QuadKind.CROSS_LEAKAGE, channel=np.zeros(N), error_cov=value * np.eye(N))


def test_geomean_of_equal_terms():
    rng = np.random.default_rng(3)
    f = random_unit(rng, 2, 3)
    assert leakage_geomean([_const_leak(3, 4.0)] * 3, f) == pytest.approx(4.0)


def test_geomean_of_one_and_four():
    rng = np.random.default_rng(4)
    f = random_unit(rng, 2, 3)
    assert leakage_geomean([_const_leak(3, 1.0), _const_leak(3, 4.0)], f) == pytest.approx(2.0)


def test_geomean_zero_when_orthogonal():
    f = sp([1, 0, 0, 0, 0, 0], 2)
    q = StructuredQuadratic(QuadKind.CROSS_LEAKAGE, channel=[0, 1, 0])
    assert leakage_geomean([q, _const_leak(3, 2.0)], f) == 0.0


def test_geomean_bounds_and_no_overflow():
    rng = np.random.default_rng(5)
    for _ in range(20):
        quads = [
            StructuredQuadratic(QuadKind.CROSS_LEAKAGE, channel=crandn(rng, 4), power_ratio=float(rng.uniform(0.1, 10)))
            for _ in range(5)
        ]
        f = random_unit(rng, 2, 4)
        vals = [quad_form(q, f) for q in quads]
        g = leakage_geomean(quads, f)
        assert min(vals) * (1 - 1e-12) <= g <= max(vals) * (1 + 1e-12)
    # several hundred huge terms stay finite in the log domain
    f = random_unit(rng, 1, 2)
    big = [_const_leak(2, 1e300)] * 300
    assert leakage_geomean(big, f) == pytest.approx(1e300, rel=1e-9)


# --- silnr / gamma_objective ---


def test_silnr_reduces_to_snr():
    p = CellProblem(np.array([[1.0, 0.0]]), noise=1.0)
    assert silnr(p, sp([1, 0], 1), 0) == pytest.approx(1.0)
    assert gamma_objective(p, sp([1, 0], 1)) == pytest.approx(2.0)


def test_silnr_arithmetic_with_leakage():
    # signal 2, IUI 0, noise 1, one victim with leakage 1 so L^p = 1
    p = CellProblem(np.array([[np.sqrt(2), 0.0]]), noise=1.0, leak_channels=np.array([[1.0, 0.0]]))
    assert silnr(p, sp([1, 0], 1), 0) == pytest.approx(1.0)


def test_gamma_is_one_without_signal():
    rng = np.random.default_rng(6)
    p = CellProblem(np.zeros((2, 3)), noise=1.0, leak_channels=crandn(rng, 2, 3))
    assert gamma_objective(p, random_unit(rng, 2, 3)) == pytest.approx(1.0)


def test_silnr_below_leakage_free_ratio():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = random_problem(rng, 4, 2, 2, noise=0.3)
        f = random_unit(rng, 2, 4)
        t = cell_terms(p, f, floor=None)
        rho = t.signal / (t.iui + t.noise)
        for k in range(2):
            assert silnr(p, f, k) <= rho[k] + 1e-12


def test_log_gamma_equals_sum_rate_terms():
    rng = np.random.default_rng(8)
    for _ in range(50):
        p = random_problem(rng, 4, 3, 2, with_error=True)
        f = random_unit(rng, 3, 4)
        direct = sum(np.log2(1 + silnr(p, f, k)) for k in range(3))
        assert log_gamma(p, f, floor=None) / np.log(2) == pytest.approx(direct, abs=1e-9)
        assert gamma_objective(p, f) == pytest.approx(dense_objective(p, f.coeffs), rel=1e-10)


def test_problem_quads_match_dense_problem():
    rng = np.random.default_rng(9)
    p = random_problem(rng, 3, 2, 2, with_error=True)
    S, D, C = dense_problem(p)
    f = random_unit(rng, 2, 3)
    v = f.coeffs
    for k, q in enumerate(p.signal_quads()):
        assert quad_form(q, f) == pytest.approx(np.vdot(v, S[k] @ v).real, rel=1e-10)
    for j, q in enumerate(p.leakage_quads()):
        assert quad_form(q, f) == pytest.approx(np.vdot(v, C[j] @ v).real, rel=1e-10)


# --- functional matrices ---


def _dense_ops(fm):
    n = fm.num_users * fm.num_antennas
    I = np.eye(n)
    A = np.column_stack([fm.a_bar(I[:, i]) for i in range(n)])
    B = np.column_stack([fm.b_bar(I[:, i]) for i in range(n)])
    return A, B


@pytest.mark.parametrize("leak_noise", [None, 0.2])
def test_functionals_match_dense_construction(leak_noise):
    rng = np.random.default_rng(10)
    for _ in range(10):
        p = random_problem(rng, 3, 2, 2, with_error=True, leak_noise=leak_noise)
        f = random_unit(rng, 2, 3)
        lam = float(rng.uniform(0, 2))
        fm = build_functionals(p, f, lam)
        A_ref, B_ref, g_ref = dense_functionals(p, f.coeffs, lam)
        A, B = _dense_ops(fm)
        assert fm.gamma == pytest.approx(g_ref, rel=1e-10)
        assert np.linalg.norm(A - A_ref) <= 1e-8 * np.linalg.norm(A_ref)
        assert np.linalg.norm(B - B_ref) <= 1e-8 * np.linalg.norm(B_ref)


def test_single_user_no_leakage_reduces_to_pencil():
    rng = np.random.default_rng(11)
    p = CellProblem(crandn(rng, 1, 4), noise=0.7)
    f = random_unit(rng, 1, 4)
    S, D, _ = dense_problem(p)
    Af = build_functionals(p, f).a_bar(f.coeffs)
    ref = (S[0] + D[0]) @ f.coeffs
    c = np.vdot(ref, Af) / np.vdot(ref, ref)
    assert c.real > 0
    assert np.linalg.norm(Af - c * ref) < 1e-10 * np.linalg.norm(Af)


def test_b_inverse_reproduces_identity():
    rng = np.random.default_rng(12)
    for leak_noise in (None, 0.5):
        p = random_problem(rng, 4, 3, 3, with_error=True, leak_noise=leak_noise)
        fm = build_functionals(p, random_unit(rng, 3, 4), lam=0.3)
        for _ in range(5):
            v = crandn(rng, 12)
            assert np.linalg.norm(fm.b_bar(fm.b_bar_inverse(v)) - v) < 1e-8 * np.linalg.norm(v)


def test_large_multiplier_limit():
    rng = np.random.default_rng(13)
    p = random_problem(rng, 3, 2, 2)
    f = random_unit(rng, 2, 3)
    lam = 1e8
    fm = build_functionals(p, f, lam)
    x = fm.b_bar_inverse(fm.a_bar(f.coeffs))
    scale = np.exp(fm.log_scale_b) * lam / fm.gamma
    approx = fm.a_bar(f.coeffs) / scale
    assert np.linalg.norm(x - approx) < 1e-6 * np.linalg.norm(approx)


def test_block_operator_solve_and_singularity():
    rng = np.random.default_rng(14)
    N, K = 4, 3
    V = crandn(rng, 2, N)
    op = BlockOperator(N, K, scalar=0.5, vecs=V, weights=np.array([1.0, 2.0]),
                       slot_vecs=crandn(rng, K, N), slot_weights=np.array([-0.1, 0.2, -0.05]))
    M = op.to_dense()
    Y = crandn(rng, K, N)
    X = op.solve(Y)
    assert np.linalg.norm(M @ X.ravel() - Y.ravel()) < 1e-10 * np.linalg.norm(Y)
    h = np.array([1.0, 0, 0, 0], dtype=complex)
    sing = BlockOperator(N, 1, scalar=1.0, slot_vecs=h[None, :], slot_weights=np.array([-1.0]))
    with pytest.raises(SingularOperatorError):
        sing.solve(np.ones((1, N), dtype=complex))
