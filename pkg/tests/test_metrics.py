import numpy as np
import pytest

from oracles import crandn, random_problem, random_unit
from silnr.metrics import (
    ergodic_se,
    instantaneous_se,
    network_sinr,
    overhead_factor,
    project_zero_ici,
    project_zero_iui,
    rate_report,
    sinr,
    zero_ici_equivalence,
    zero_iui_equivalence,
)
from silnr.precoders import NetworkCSI, zf
from silnr.quadratics import CellProblem, cell_terms


def one_cell(H, sigma2=1.0, power=1.0):
    return NetworkCSI([[H]], np.array([power]), sigma2)


# --- SINR ---


def test_isolated_user_unit_snr():
    net = one_cell(np.array([[1.0, 0.0]]))
    assert sinr(net, [np.array([[1.0, 0.0]])], 0, 0) == pytest.approx(1.0)


def test_equal_signal_and_interference_without_noise():
    net = one_cell(np.array([[1.0, 1.0], [1.0, 1.0]]), sigma2=0.0)
    F = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert sinr(net, [F], 0, 0) == pytest.approx(1.0)


def test_zf_leaves_only_noise():
    rng = np.random.default_rng(0)
    H = crandn(rng, 3, 5)
    F = zf(H).per_user_beams
    net = one_cell(H, sigma2=0.1, power=2.0)
    for k in range(3):
        expect = 2.0 * abs(H[k].conj() @ F[k]) ** 2 / 0.1
        assert sinr(net, [F], 0, k) == pytest.approx(expect, rel=1e-9)


def test_other_cell_interference_scales_with_its_power():
    h = np.array([[1.0, 0.0]])
    ch = [[h, h], [h, h]]
    F = np.array([[1.0, 0.0]])
    net = NetworkCSI(ch, np.array([1.0, 3.0]), 1.0)
    assert sinr(net, [F, F], 0, 0) == pytest.approx(1.0 / 4.0)
    assert sinr(net, [F, F], 1, 0) == pytest.approx(3.0 / 2.0)


def test_isolated_cell_sinr_grows_with_power():
    rng = np.random.default_rng(1)
    H = crandn(rng, 3, 4)
    F = random_unit(rng, 3, 4).beams
    lo = network_sinr(one_cell(H, 0.2, 1.0), [F])[0]
    hi = network_sinr(one_cell(H, 0.2, 2.0), [F])[0]
    assert np.all(hi >= lo)


def test_rate_report_per_user_se():
    r = rate_report([np.array([1.0, 3.0])])
    np.testing.assert_allclose(r.per_user_se, [1.0, 2.0])
    assert r.sum_se == pytest.approx(3.0)


# --- instantaneous SE ---


def _two_cell(rng, N=4, K=2):
    ch = [[crandn(rng, K, N) for _ in range(2)] for _ in range(2)]
    return NetworkCSI(ch, np.ones(2), 0.1), [random_unit(rng, K, N).beams for _ in range(2)]


def test_perfect_csit_equals_single_realization():
    rng = np.random.default_rng(2)
    net, beams = _two_cell(rng)
    phis = [[None, None], [None, None]]
    exact = np.concatenate([np.log2(1 + s) for s in network_sinr(net, beams)])
    for n in (1, 7):
        r = instantaneous_se(net, phis, beams, n, np.random.default_rng(3))
        np.testing.assert_allclose(r.per_user_se, exact, rtol=1e-14)
        assert not r.ergodic and r.overhead_factor == 1.0


def test_monte_carlo_consistency_and_jensen():
    rng = np.random.default_rng(4)
    net, beams = _two_cell(rng)
    phi = np.array([0.3 * np.eye(4)] * 2)
    phis = [[phi, phi], [phi, phi]]
    big = instantaneous_se(net, phis, beams, 10_000, np.random.default_rng(5))
    assert np.all(big.per_user_se <= np.log2(1 + big.per_user_sinr) + 1e-12)
    small = [instantaneous_se(net, phis, beams, 1, np.random.default_rng(100 + s)).sum_se for s in range(200)]
    se_one = np.std(small, ddof=1)
    assert abs(np.mean(small) - big.sum_se) < 3 * se_one / np.sqrt(len(small)) + 3 * np.sqrt(np.sum(big.std_error ** 2))
    with pytest.raises(ValueError):
        instantaneous_se(net, phis, beams, 0, rng)


# --- ergodic SE ---


def test_overhead_arithmetic():
    assert overhead_factor(28, 0, 200) == pytest.approx(0.86)
    r = ergodic_se(lambda t: np.array([4.0, 6.0]), 3, 28, 0, 200)
    assert r.sum_se == pytest.approx(8.6)
    assert r.ergodic and r.overhead_factor == pytest.approx(0.86)


def test_all_training_gives_zero():
    assert ergodic_se(lambda t: np.array([5.0]), 2, 150, 50, 200).sum_se == 0.0


def test_ergodic_is_seed_deterministic():
    def trial(t):
        return np.random.default_rng([9, t]).uniform(0, 3, size=4)

    a = ergodic_se(trial, 20, 28, 0, 200)
    b = ergodic_se(trial, 20, 28, 0, 200)
    np.testing.assert_array_equal(a.per_user_se, b.per_user_se)
    with pytest.raises(ValueError):
        ergodic_se(trial, 0, 28, 0, 200)


# --- quasi-optimality identities ---


def _two_cell_problems(rng, N=6, K=2):
    H = [[crandn(rng, K, N) for _ in range(2)] for _ in range(2)]
    return [CellProblem(H[c][c], noise=0.1, leak_channels=H[c][1 - c], leak_noise=None) for c in range(2)]


def test_zero_iui_identity():
    rng = np.random.default_rng(6)
    for _ in range(100):
        for p in _two_cell_problems(rng):
            f = random_unit(rng, 2, 6)
            g = project_zero_iui(p, f)
            t = cell_terms(p, g, floor=None)
            assert t.iui.max() < 1e-20
            assert zero_iui_equivalence(p, f) < 1e-9


def test_zero_iui_identity_is_not_vacuous():
    rng = np.random.default_rng(7)
    p = _two_cell_problems(rng)[0]
    assert zero_iui_equivalence(p, random_unit(rng, 2, 6), project=False) > 1e-3


def test_zero_ici_identity():
    rng = np.random.default_rng(8)
    for _ in range(100):
        for p in _two_cell_problems(rng):
            f = random_unit(rng, 2, 6)
            assert cell_terms(p, project_zero_ici(p, f), floor=None).leakage.max() < 1e-20
            assert zero_ici_equivalence(p, f) < 1e-9


def test_zero_ici_identity_is_not_vacuous():
    rng = np.random.default_rng(9)
    p = _two_cell_problems(rng)[0]
    assert zero_ici_equivalence(p, random_unit(rng, 2, 6), project=False) > 1e-3


def test_mirrored_cells_give_equal_gaps():
    rng = np.random.default_rng(10)
    a, b = crandn(rng, 2, 6), crandn(rng, 2, 6)
    p1 = CellProblem(a, noise=0.1, leak_channels=b)
    p2 = CellProblem(a.copy(), noise=0.1, leak_channels=b.copy())
    f = random_unit(rng, 2, 6)
    assert zero_iui_equivalence(p1, f) == zero_iui_equivalence(p2, f)
    assert zero_ici_equivalence(p1, f) == zero_ici_equivalence(p2, f)


def test_empty_nullspace_is_reported():
    rng = np.random.default_rng(11)
    p = random_problem(rng, 2, 3, 2)
    with pytest.raises(ValueError):
        project_zero_iui(p, random_unit(rng, 3, 2))
    with pytest.raises(ValueError):
        project_zero_ici(p, random_unit(rng, 3, 2))
