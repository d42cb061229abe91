"""Evaluation scenarios and the Monte-Carlo driver.

Two builtins: ``two_cell_ll`` (two BSs, i.i.d. unit-gain Rayleigh links,
SNR sweep) and ``hetnet_tableII`` (7 hexagonal macro sites with 3 picos
each, COST-231 Hata path loss, pilot reuse across macro clusters).
"""

from __future__ import annotations

import dataclasses
import math
import time
import traceback
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.stats

from .channel import (
    LinkGeometry,
    PilotPlan,
    crandn,
    effective_noise,
    error_covariance,
    gen_correlation,
    psd_sqrt,
)
from .metrics import network_sinr
from .optimality import second_order_test
from .precoders import (
    NetworkCSI,
    PrecoderResult,
    coop_gpi,
    mrt,
    multicell_mmse,
    silnr_gpi,
    wmmse_leakage,
    zf,
)
from .quadratics import CellProblem

PRECODERS = ("mrt", "zf", "mmse", "mmse_cov", "wmmse_leakage", "silnr", "coop", "mczf")


def dbm_to_w(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def hex_layout(inter_site_distance: float, pico_radius_frac: float = 0.4, pico_angles_deg=(90.0, 210.0, 330.0)):
    """Macro sites (center + first ring) and three picos per macro.

    Returns (macro_xy (7, 2), pico_xy (21, 2), pico_parent (21,)). Hexagons are
    flat-topped with circumradius ``isd / sqrt(3)``; ring sites sit at
    distance ``isd`` along the apothem directions.
    """
    if inter_site_distance <= 0:
        raise ValueError("inter-site distance must be positive")
    R = inter_site_distance / math.sqrt(3.0)
    ang = np.deg2rad(30.0 + 60.0 * np.arange(6))
    ring = inter_site_distance * np.column_stack([np.cos(ang), np.sin(ang)])
    macros = np.vstack([np.zeros((1, 2)), ring])
    pa = np.deg2rad(np.asarray(pico_angles_deg, dtype=float))
    offs = pico_radius_frac * R * np.column_stack([np.cos(pa), np.sin(pa)])
    picos = (macros[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    parent = np.repeat(np.arange(len(macros)), len(pa))
    return macros, picos, parent


def in_hexagon(p: np.ndarray, R: float) -> np.ndarray:
    """Points (M, 2) relative to a flat-topped hexagon center with circumradius R."""
    x, y = np.abs(p[..., 0]), np.abs(p[..., 1])
    return (y <= math.sqrt(3) / 2 * R) & (math.sqrt(3) * x + y <= math.sqrt(3) * R)


def pathloss_db(model: str, distance_m, carrier_hz: float, h_bs: float, h_ue: float):
    """COST-231 Hata (metropolitan, +3 dB). Distances are clamped below at 10 m."""
    d = np.maximum(np.asarray(distance_m, dtype=float), 10.0)
    if model != "cost231_hata":
        raise ValueError(f"unknown path-loss model {model!r}")
    f = carrier_hz / 1e6
    a_hm = 3.2 * np.log10(11.75 * h_ue) ** 2 - 4.97
    return (
        46.3
        + 33.9 * np.log10(f)
        - 13.82 * np.log10(h_bs)
        - a_hm
        + (44.9 - 6.55 * np.log10(h_bs)) * np.log10(d / 1000.0)
        + 3.0
    )


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------


@dataclass
class BaseStation:
    index: int
    position: np.ndarray
    antennas: int
    power_dbm: float
    height: float
    kind: str  # macro | pico
    users: int
    cluster: int


@dataclass
class Scenario:
    """Network description. ``kind`` selects the builder for the BS list."""

    name: str
    kind: str  # link_level | hetnet
    # link level
    n_antennas: int = 16
    n_users: int = 8
    snr_db: float = 10.0
    # hetnet
    n_macro_antennas: int = 16
    n_pico_antennas: int = 4
    users_macro: int = 16
    users_pico: int = 4
    p_macro_dbm: float = 46.0
    p_pico_dbm: float = 23.0
    inter_site_distance: float = 500.0
    pico_radius_frac: float = 0.4
    hotspot_radius: float = 40.0
    h_bs: float = 32.0
    h_ue: float = 1.5
    carrier_hz: float = 2e9
    bandwidth_hz: float = 20e6
    sigma2_dbm: float = -113.0
    pathloss_model: str = "cost231_hata"
    # shared
    correlation_model: str = "iid"
    correlation_r: float = 0.5
    tau_u: int = 0
    tau_d: int = 0
    tau_c: int = 200
    p_ul_dbm: float = 23.0
    csit_mode: str = "perfect"  # perfect | noisy
    noise_ici: str = "none"  # all | out_of_cluster | none
    leakage_weighting: str = "inr"  # inr | power_ratio
    leakage_floor: str = "effective"  # effective | thermal | none
    eps: float = 0.1
    max_inner: int = 100
    max_outer: int = 50
    wmmse_max_iter: int = 100
    certify: bool = False
    bs: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.csit_mode not in ("perfect", "noisy"):
            raise ValueError(f"csit_mode must be perfect or noisy, got {self.csit_mode!r}")
        if self.noise_ici not in ("all", "out_of_cluster", "none"):
            raise ValueError(f"noise_ici must be all, out_of_cluster or none, got {self.noise_ici!r}")
        if self.leakage_floor not in ("effective", "thermal", "none"):
            raise ValueError(f"leakage_floor must be effective, thermal or none, got {self.leakage_floor!r}")
        if self.leakage_weighting not in ("inr", "power_ratio"):
            raise ValueError(f"leakage_weighting must be inr or power_ratio, got {self.leakage_weighting!r}")
        if self.kind == "link_level":
            self.bs = [
                BaseStation(i, np.zeros(2), self.n_antennas, 30.0, self.h_bs, "macro", self.n_users, 0)
                for i in range(2)
            ]
        elif self.kind == "hetnet":
            macros, picos, parent = hex_layout(self.inter_site_distance, self.pico_radius_frac)
            bs = []
            for m, xy in enumerate(macros):
                bs.append(BaseStation(m, xy, self.n_macro_antennas, self.p_macro_dbm, self.h_bs, "macro", self.users_macro, m))
            for p, (xy, m) in enumerate(zip(picos, parent)):
                bs.append(BaseStation(len(macros) + p, xy, self.n_pico_antennas, self.p_pico_dbm, self.h_bs, "pico", self.users_pico, int(m)))
            self.bs = bs
        else:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        # pilot plan consistency is checked at construction
        if self.tau_u > 0:
            self.pilot_plan()

    # --- derived quantities ---
    @property
    def num_bs(self) -> int:
        return len(self.bs)

    @property
    def users_per_bs(self) -> list:
        return [b.users for b in self.bs]

    @property
    def clusters(self) -> list:
        out = {}
        for b in self.bs:
            out.setdefault(b.cluster, []).append(b.index)
        return [out[k] for k in sorted(out)]

    @property
    def sigma2_w(self) -> float:
        if self.kind == "link_level":
            return 10.0 ** (-self.snr_db / 10.0)
        return dbm_to_w(self.sigma2_dbm)

    @property
    def powers_w(self) -> np.ndarray:
        if self.kind == "link_level":
            return np.ones(self.num_bs)
        return np.array([dbm_to_w(b.power_dbm) for b in self.bs])

    @property
    def overhead_factor(self) -> float:
        return 1.0 - (self.tau_u + self.tau_d) / self.tau_c

    def pilot_plan(self) -> PilotPlan:
        tau_u = self.tau_u if self.tau_u > 0 else max(sum(self.users_per_bs[b] for b in c) for c in self.clusters)
        p_ul = dbm_to_w(self.p_ul_dbm) if self.kind == "hetnet" else 1.0
        return PilotPlan(
            self.clusters, tau_u, self.tau_d, max(self.tau_c, tau_u + self.tau_d), p_ul, self.sigma2_w,
            users_per_bs=self.users_per_bs, num_bs=self.num_bs,
        )

    def correlation(self, N: int) -> np.ndarray:
        return gen_correlation(self.correlation_model, N, self.correlation_r)

    def check_invariants(self) -> list:
        """Return the violated reference-deployment invariants (empty when all hold)."""
        bad = []
        kinds = [b.kind for b in self.bs]
        if self.num_bs != 28:
            bad.append(f"num_bs={self.num_bs} != 28")
        if kinds.count("macro") != 7 or kinds.count("pico") != 21:
            bad.append("BS mix is not (7 macro, 21 pico)")
        if (self.users_macro, self.users_pico) != (16, 4):
            bad.append("users per (MBS, PBS) != (16, 4)")
        if (self.p_macro_dbm, self.p_pico_dbm) != (46.0, 23.0):
            bad.append("BS powers != (46, 23) dBm")
        if self.sigma2_dbm != -113.0:
            bad.append("noise power != -113 dBm")
        if (self.tau_c, self.tau_u, self.tau_d) != (200, 28, 0):
            bad.append("training lengths != (200, 28, 0)")
        if self.eps != 0.1:
            bad.append("eps != 0.1")
        if (self.h_bs, self.h_ue, self.carrier_hz) != (32.0, 1.5, 2e9):
            bad.append("heights/carrier != (32 m, 1.5 m, 2 GHz)")
        if sum(self.users_per_bs) != 196:
            bad.append("total users != 196")
        for c in self.clusters:
            if sum(self.users_per_bs[b] for b in c) != self.tau_u:
                bad.append("cluster pilot demand does not equal tau_u")
                break
        return bad


def two_cell_ll(**kw) -> Scenario:
    base = dict(name="two_cell_ll", kind="link_level", noise_ici="none", tau_u=0, tau_d=0, tau_c=200)
    base.update(kw)
    return Scenario(**base)


def hetnet_tableII(**kw) -> Scenario:
    base = dict(
        name="hetnet_tableII", kind="hetnet", correlation_model="exponential", correlation_r=0.5,
        tau_u=28, tau_d=0, tau_c=200, noise_ici="none",
    )
    base.update(kw)
    return Scenario(**base)


BUILTINS = {"two_cell_ll": two_cell_ll, "hetnet_tableII": hetnet_tableII}


# ---------------------------------------------------------------------------
# random draws
# ---------------------------------------------------------------------------


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator addressed by (seed, key); order of use is irrelevant."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


_DROP, _CHAN, _ERR = 0, 1, 2


def drop_users(scenario: Scenario, rng: np.random.Generator, max_attempts: int = 10_000):
    """User positions (U, 2) and serving BS (U,). Link-level scenarios have no geometry."""
    serving = np.concatenate([np.full(b.users, b.index) for b in scenario.bs])
    if scenario.kind == "link_level":
        return np.zeros((serving.size, 2)), serving
    R = scenario.inter_site_distance / math.sqrt(3.0)
    picos = [b for b in scenario.bs if b.kind == "pico"]
    pos = []
    for b in scenario.bs:
        if b.kind == "pico":
            r = scenario.hotspot_radius * np.sqrt(rng.uniform(size=b.users))
            th = rng.uniform(0, 2 * np.pi, size=b.users)
            pos.append(b.position + np.column_stack([r * np.cos(th), r * np.sin(th)]))
            continue
        mine = [p.position for p in picos if p.cluster == b.cluster]
        got = []
        attempts = 0
        while len(got) < b.users:
            attempts += 1
            if attempts > max_attempts:
                raise RuntimeError("user drop exceeded the rejection-sampling budget")
            p = rng.uniform(-R, R, size=2)
            if not in_hexagon(p, R):
                continue
            q = b.position + p
            if any(np.linalg.norm(q - c) < scenario.hotspot_radius for c in mine):
                continue
            got.append(q)
        pos.append(np.array(got))
    return np.vstack(pos), serving


def large_scale_gains(scenario: Scenario, user_pos: np.ndarray) -> np.ndarray:
    """(L, U) linear gains from every BS to every user."""
    if scenario.kind == "link_level":
        return np.ones((scenario.num_bs, user_pos.shape[0]))
    B = np.array([b.position for b in scenario.bs])
    d = np.linalg.norm(B[:, None, :] - user_pos[None, :, :], axis=2)
    hb = np.array([b.height for b in scenario.bs])[:, None]
    pl = pathloss_db(scenario.pathloss_model, d, scenario.carrier_hz, hb, scenario.h_ue)
    return 10.0 ** (-pl / 10.0)


@dataclass
class Realization:
    scenario: Scenario
    user_pos: np.ndarray
    serving: np.ndarray
    betas: np.ndarray  # (L, U)
    true: list  # true[b][c] (K_c, N_b)
    est: list  # est[b][c] or None when BS b has no estimate of cell c
    phi: list  # phi[b][c] (K_c, N_b, N_b) or None

    def users_of(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.serving == c)

    def network(self, which: str = "true") -> NetworkCSI:
        ch = self.true if which == "true" else self.est
        return NetworkCSI(ch, self.scenario.powers_w, self.scenario.sigma2_w)


def draw_realization(scenario: Scenario, seed: int, trial: int, drop=None) -> Realization:
    """Channels of one trial. Every link draws from its own substream."""
    if drop is None:
        drop = drop_users(scenario, substream(seed, trial, _DROP))
    pos, serving = drop
    betas = large_scale_gains(scenario, pos)
    L = scenario.num_bs
    users = [np.flatnonzero(serving == c) for c in range(L)]
    noisy = scenario.csit_mode == "noisy"
    plan = scenario.pilot_plan() if noisy else None
    corr = {}
    roots = {}
    for b in scenario.bs:
        if b.antennas not in corr:
            corr[b.antennas] = scenario.correlation(b.antennas)
            roots[b.antennas] = psd_sqrt(corr[b.antennas])
    # pilot index of every user, and users grouped by pilot index
    if noisy:
        pil = np.empty(serving.size, dtype=int)
        for c in range(L):
            for k, u in enumerate(users[c]):
                pil[u] = plan.pilot_index(c, k)
    true = [[None] * L for _ in range(L)]
    est = [[None] * L for _ in range(L)]
    phi = [[None] * L for _ in range(L)]
    for b in scenario.bs:
        N = b.antennas
        R, Rh = corr[N], roots[N]
        mates = set(plan.clusters[plan.cluster_of(b.index)]) if noisy else set()
        for c in range(L):
            uc = users[c]
            rng = substream(seed, trial, _CHAN, b.index, c)
            W = crandn(rng, uc.size, N)
            if not noisy or c not in mates:
                H = np.sqrt(betas[b.index, uc])[:, None] * (W @ Rh.T)
                true[b.index][c] = H
                if not noisy:
                    est[b.index][c] = H
                continue
            # estimated link: draw (estimate, error) with the MMSE covariances
            rng_e = substream(seed, trial, _ERR, b.index, c)
            E = crandn(rng_e, uc.size, N)
            Hh = np.empty((uc.size, N), dtype=complex)
            Ph = np.empty((uc.size, N, N), dtype=complex)
            for k, u in enumerate(uc):
                geom = LinkGeometry(b.index, c, k, betas[b.index, u], R)
                cont_users = np.flatnonzero((pil == pil[u]) & (np.array([plan.cluster_of(s) for s in serving]) != plan.cluster_of(c)))
                conts = [LinkGeometry(b.index, int(serving[v]), 0, betas[b.index, v], R) for v in cont_users]
                Phi = error_covariance(geom, conts, plan)
                Ph[k] = Phi
                Hh[k] = psd_sqrt(geom.covariance - Phi, clip=1e-12 * betas[b.index, u]) @ W[k]
                E[k] = psd_sqrt(Phi) @ E[k]
            est[b.index][c] = Hh
            phi[b.index][c] = Ph
            true[b.index][c] = Hh + E
    return Realization(scenario, pos, serving, betas, true, est, phi)


# ---------------------------------------------------------------------------
# local CSIT
# ---------------------------------------------------------------------------


@dataclass
class LocalCSIT:
    """What BS ``bs`` knows, expressed in units of its noise-referred SNR (P_l / sigma^2).

    Only links from this BS to users of its own pilot cluster are present.
    """

    bs: int
    own: np.ndarray  # (K, N)
    own_phi: Optional[np.ndarray]
    victims: np.ndarray  # (U, N)
    victim_phi: Optional[np.ndarray]
    victim_ids: list  # (cell, local user index)
    victim_ratio: np.ndarray  # (U,)
    victim_noise: np.ndarray  # (U,)
    noise: np.ndarray  # (K,) effective noise, sigma^2 units

    def problem(self, leakage_noise: bool = True) -> CellProblem:
        return CellProblem(
            self.own, self.noise, self.own_phi, self.victims, self.victim_phi, self.victim_ratio,
            cell_index=self.bs, leak_noise=self.victim_noise if leakage_noise else None,
        )


def local_csit(real: Realization, ell: int) -> LocalCSIT:
    sc = real.scenario
    P = sc.powers_w
    s2 = sc.sigma2_w
    scale = P[ell] / s2
    clusters = sc.clusters
    cl = next(c for c in clusters if ell in c)
    mates = [b for b in cl if b != ell]
    own = real.est[ell][ell] * np.sqrt(scale)
    own_phi = None if real.phi[ell][ell] is None else real.phi[ell][ell] * scale
    vic, vphi, vid, vratio = [], [], [], []
    for c in mates:
        G = real.est[ell][c]
        vic.append(G * np.sqrt(scale))
        if real.phi[ell][c] is not None:
            vphi.append(real.phi[ell][c] * scale)
        vid.extend((c, k) for k in range(G.shape[0]))
        r = P[c] / P[ell] if sc.leakage_weighting == "power_ratio" else 1.0
        vratio.extend([r] * G.shape[0])
    N = own.shape[1]
    victims = np.vstack(vic) if vic else np.zeros((0, N), dtype=complex)
    victim_phi = np.concatenate(vphi) if vphi else None
    # effective noise of own users from large-scale gains only
    uc = real.users_of(ell)
    if sc.noise_ici == "none":
        excl = list(range(sc.num_bs))
    elif sc.noise_ici == "out_of_cluster":
        excl = list(cl)
    else:
        excl = [ell]
    noise = np.array([effective_noise(real.betas[:, u], P, s2, exclude=excl) for u in uc]) / s2
    # smooth leakage floor: the victim's disturbance without this BS (effective) or sigma^2 (thermal)
    vnoise = []
    for c, k in vid:
        v = real.users_of(c)[k]
        if sc.leakage_floor == "effective":
            vnoise.append(effective_noise(real.betas[:, v], P, s2, exclude=[c, ell]) / s2)
        else:
            vnoise.append(1.0)
    vratio = np.asarray(vratio, dtype=float)
    return LocalCSIT(ell, own, own_phi, victims, victim_phi, vid, vratio, vratio * np.asarray(vnoise), noise)


# ---------------------------------------------------------------------------
# precoder dispatch
# ---------------------------------------------------------------------------


def _mczf(csi: LocalCSIT) -> PrecoderResult:
    """Zero forcing that also nulls the leakage users when dimensions allow."""
    K, N = csi.own.shape
    V = csi.victims
    if V.shape[0] + K > N:
        return zf(csi.own, csi.bs)
    U_, s, _ = np.linalg.svd(V.T, full_matrices=True)
    Q = U_[:, V.shape[0]:]  # orthonormal basis of the victims' null space
    Heff = csi.own.conj() @ Q  # (K, N - U)
    X = np.linalg.pinv(Heff)  # (N - U, K)
    beams = (Q @ X).T
    from .precoders.base import uniform_power

    return PrecoderResult(uniform_power(beams, csi.bs))


def run_precoder(name: str, csi: LocalCSIT, sc: Scenario) -> PrecoderResult:
    if name == "mrt":
        return mrt(csi.own, csi.bs)
    if name == "zf":
        return zf(csi.own, csi.bs)
    if name == "mczf":
        return _mczf(csi)
    if name == "mmse":
        return multicell_mmse(csi.own, csi.victims, csi.noise, cell_index=csi.bs)
    if name == "mmse_cov":
        return multicell_mmse(csi.own, csi.victims, csi.noise, csi.own_phi, csi.victim_phi, cell_index=csi.bs)
    if name == "wmmse_leakage":
        return wmmse_leakage(csi.own, csi.victims, csi.noise, r_targets=1.0, max_iter=sc.wmmse_max_iter, cell_index=csi.bs)
    if name == "silnr":
        return silnr_gpi(csi.problem(sc.leakage_floor != "none"), eps=sc.eps, max_inner=sc.max_inner, max_outer=sc.max_outer)
    raise ValueError(f"unknown precoder {name!r}")


@dataclass
class TrialOutcome:
    precoder: str
    trial: int
    sum_se: float = float("nan")
    per_cell_se: Optional[np.ndarray] = None
    iterations: float = float("nan")
    stationarity_pass: Optional[float] = None
    second_order_pass: Optional[float] = None
    failed: bool = False
    error: str = ""
    trace: list = field(default_factory=list)  # (cell, outer_round, inner_iter, delta, gamma)


def evaluate_trial(sc: Scenario, real: Realization, precoders: Sequence[str]) -> list:
    """Run every precoder on one realization and score it on the true channels."""
    L = sc.num_bs
    net = real.network("true")
    csis = [local_csit(real, ell) for ell in range(L)]
    out = {}
    cache = {}
    for name in precoders:
        oc = TrialOutcome(name, -1)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if name == "coop":
                    cands = []
                    for cname in ("silnr", "mmse"):
                        if cname not in cache:
                            cache[cname] = [run_precoder(cname, csis[l], sc) for l in range(L)]
                        cands.append([r.f.beams for r in cache[cname]])
                    res = coop_gpi(net, init=cands, eps=1e-4)
                else:
                    if name not in cache:
                        cache[name] = [run_precoder(name, csis[l], sc) for l in range(L)]
                    res = cache[name]
            beams = [r.f.beams for r in res]
            sinrs = network_sinr(net, beams)
            oc.per_cell_se = sc.overhead_factor * np.array([np.sum(np.log2(1.0 + s)) for s in sinrs])
            oc.sum_se = float(np.sum(oc.per_cell_se))
            oc.iterations = float(np.mean([r.inner_iterations_total for r in res]))
            if name == "silnr":
                oc.stationarity_pass = float(np.mean([r.stationarity_residual < 1e-3 for r in res]))
                for ell, r in enumerate(res):
                    oc.trace.extend((ell,) + tuple(row) for row in r.trace)
                if sc.certify:
                    passes = []
                    for ell, r in enumerate(res):
                        cert = second_order_test(csis[ell].problem(sc.leakage_floor != "none"), r.f, r.lam)
                        passes.append(cert.second_order_pass)
                    oc.second_order_pass = float(np.mean(passes))
        except Exception as exc:  # a failing precoder must not abort the run
            oc.failed = True
            oc.error = f"{type(exc).__name__}: {exc}"
        out[name] = oc
    return [out[n] for n in precoders]


def sweep_scenario(sc: Scenario, sweep_name: Optional[str], value) -> Scenario:
    if sweep_name is None:
        return sc
    key = {"snr_db": "snr_db", "n_macro_antennas": "n_macro_antennas", "n_antennas": "n_antennas"}[sweep_name]
    return dataclasses.replace(sc, **{key: value})


@dataclass
class SummaryRow:
    scenario: str
    precoder: str
    sweep_name: str
    sweep_value: object
    csit_mode: str
    n_trials: int
    mean_sum_se: float
    ci95_lo: float
    ci95_hi: float
    mean_iterations: float
    stationarity_pass_rate: Optional[float]
    second_order_pass_rate: Optional[float]
    wall_seconds: Optional[float]
    n_failed: int = 0
    per_cell_sum_se: Optional[list] = None


def summarize(values: Sequence[float]):
    x = np.asarray(values, dtype=float)
    n = x.size
    if n == 0:
        return float("nan"), float("nan"), float("nan")
    m = float(x.mean())
    if n == 1:
        return m, m, m
    half = float(scipy.stats.t.ppf(0.975, n - 1) * x.std(ddof=1) / math.sqrt(n))
    return m, m - half, m + half


def _trial_job(args):
    sc, sweep_name, sweep_values, precoders, seed, trial = args
    drop = drop_users(sc, substream(seed, trial, _DROP))
    res = []
    real = None
    for v in sweep_values:
        scv = sweep_scenario(sc, sweep_name, v)
        # channels depend on the sweep only through the antenna count
        if real is None or sweep_name in ("n_macro_antennas", "n_antennas"):
            real = draw_realization(scv, seed, trial, drop)
        else:
            real = dataclasses.replace(real, scenario=scv)
        outs = evaluate_trial(scv, real, precoders)
        for o in outs:
            o.trial = trial
        res.append(outs)
    return trial, res


def run_scenario(
    sc: Scenario,
    precoders: Sequence[str],
    n_trials: int,
    seed: int,
    sweep_name: Optional[str] = None,
    sweep_values: Sequence = (None,),
    workers: int = 1,
    record_wall_time: bool = False,
    trial_order: Optional[Sequence[int]] = None,
):
    """Monte-Carlo experiment; returns (summary rows, per-trial outcomes, convergence rows).

    ``trial_order`` permutes execution order only; every trial draws from its
    own substream and results are reduced in trial-index order.
    """
    for p in precoders:
        if p not in PRECODERS:
            raise ValueError(f"unknown precoder {p!r}; choose from {PRECODERS}")
    t0 = time.perf_counter()
    order = list(range(n_trials)) if trial_order is None else list(trial_order)
    if sorted(order) != list(range(n_trials)):
        raise ValueError("trial_order must be a permutation of range(n_trials)")
    jobs = [(sc, sweep_name, list(sweep_values), list(precoders), seed, t) for t in order]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    wall = time.perf_counter() - t0
    rows, per_trial, conv = [], [], []
    for si, v in enumerate(sweep_values):
        for pi, p in enumerate(precoders):
            outs = [res[si][pi] for _, res in results]
            per_trial.extend((v, o) for o in outs)
            ok = [o for o in outs if not o.failed]
            m, lo, hi = summarize([o.sum_se for o in ok])
            st = [o.stationarity_pass for o in ok if o.stationarity_pass is not None]
            so = [o.second_order_pass for o in ok if o.second_order_pass is not None]
            rows.append(
                SummaryRow(
                    sc.name, p, sweep_name or "", "" if v is None else v, sc.csit_mode, len(ok), m, lo, hi,
                    float(np.mean([o.iterations for o in ok])) if ok else float("nan"),
                    float(np.mean(st)) if st else None,
                    float(np.mean(so)) if so else None,
                    wall if record_wall_time else None,
                    len(outs) - len(ok),
                    np.mean([o.per_cell_se for o in ok], axis=0).tolist() if ok else None,
                )
            )
            if p == "silnr" and si == 0:
                for o in outs:
                    conv.extend((o.trial,) + row for row in o.trace)
    return rows, per_trial, conv
