"""SCA state tracking and assembly of the convex subproblem.

Each iteration solves one conic program: lifted PSD beamformers, Schur-LMI
epigraphs of the CRB diagonal, tangent surrogates of the bilinear rate
constraints under worst-case CSI, fairness box constraints on the sensing
power weights, and a linearized rank-1 penalty. Anchors (tangent expansion
points, penalty directions, power-weight operating point) live in the state
and are refreshed from every solution.

Implementation notes: Hermitian matrices are real-embedded (U = X + jY with
the PSD constraint on [[X, -Y], [Y, X]]) and every anchor-dependent quantity
enters as a cvxpy Parameter under the DPP ruleset; cvxpy's complex reduction
defeats parametric caching, while this real form canonicalizes once per run
and re-solves in milliseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .beams import extract_rank1
from .config import SystemConfig
from .conic import ConicSubproblem
from .errors import DimensionMismatch, NonpositiveAnchor
from .rates import BeamformerSet, noma_decoding_order, transmit_covariance
from .scenario import Scenario
from .sca import build_schur_lmi, fairness_power_bounds, fim_o_gradients
from .sensing import fim_blocks, unit_scnr

LN2 = float(np.log(2.0))
ANCHOR_FLOOR = 1e-7
RATE_TIE_BREAK = 1e-3
RC_SPLIT_REG = 1e-5
PROX_LIFT = 2.0
PROX_RC = 1e-2
O_CURV_CAP = 1e3
SCHEMES = ("RSMA", "I_RSMA", "SDMA", "NOMA", "OMA")
POLICIES = ("fairness_aware", "equality_aware")


def worst_case_grams(scenario: Scenario) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-user signal (H_es - e I) and interference (H_es + e I) Grams."""
    n = scenario.config.n_tx
    minus, plus = [], []
    for u in scenario.users:
        base = np.outer(u.h_est, u.h_est.conj())
        e = u.e_h_max
        minus.append(base - e * np.eye(n))
        plus.append(base + e * np.eye(n))
    return minus, plus


class HermitianLift:
    """Real embedding X + jY of a Hermitian PSD matrix variable."""

    def __init__(self, n: int, name: str):
        self.n = n
        self.name = name
        self.re = cp.Variable((n, n), symmetric=True, name=f"{name}:re")
        self.im = cp.Variable((n, n), name=f"{name}:im")

    def structure_constraints(self) -> list:
        return [self.im == -self.im.T,
                cp.bmat([[self.re, -self.im], [self.im, self.re]]) >> 0]

    def trace(self):
        return cp.trace(self.re)

    def re_trace(self, g) -> cp.Expression:
        """Re Tr(g @ U) for a complex constant matrix g."""
        gr, gi = np.real(g), np.imag(g)
        return cp.sum(cp.multiply(gr, self.re.T)) - cp.sum(cp.multiply(gi, self.im.T))

    def re_trace_param(self, gr: cp.Parameter, gi: cp.Parameter) -> cp.Expression:
        return cp.sum(cp.multiply(gr, self.re.T)) - cp.sum(cp.multiply(gi, self.im.T))

    @property
    def value(self):
        if self.re.value is None:
            return None
        return self.re.value + 1j * self.im.value


class _OmaSlot:
    """Fixed-direction slot beam D = d d^H with a scalar power variable."""

    def __init__(self, direction: np.ndarray, power):
        self.dir = direction
        self.power = power
        self.re = power * direction.real
        self.im = power * direction.imag

    def trace(self):
        return self.power * float(np.real(np.trace(self.dir)))

    def re_trace(self, g) -> cp.Expression:
        return self.power * float(np.real(np.trace(g @ self.dir)))

    @property
    def value(self):
        if self.power.value is None:
            return None
        return float(self.power.value) * self.dir


class _CplxSum:
    """Componentwise sum of lifts, as a (re, im) expression pair."""

    def __init__(self, lifts: list, scale: float = 1.0):
        self.re = scale * sum(l.re for l in lifts)
        self.im = scale * sum(l.im for l in lifts)


def _sandwich(a: np.ndarray, r: _CplxSum, b: np.ndarray):
    """(re, im) of A^H R B for complex constants A, B and R = X + jY."""
    ar, ai = np.real(a), np.imag(a)
    br, bi = np.real(b), np.imag(b)
    x, y = r.re, r.im
    mr = (ar.T @ x @ br + ai.T @ x @ bi - ar.T @ y @ bi + ai.T @ y @ br)
    mi = (ar.T @ x @ bi - ai.T @ x @ br + ar.T @ y @ br + ai.T @ y @ bi)
    return mr, mi


@dataclass
class ScaState:
    """Iteration state of the successive convex approximation loop."""

    scheme: str
    policy: str
    iterate_index: int = 0
    anchors: dict = field(default_factory=dict)
    u_anchor_common: np.ndarray | None = None
    u_anchor_private: list[np.ndarray] = field(default_factory=list)
    o_anchor: np.ndarray = None
    w_anchor: np.ndarray = None
    r_x_anchor: np.ndarray = None
    lift_prev: dict = field(default_factory=dict)
    rc_prev: np.ndarray = None
    penalty_common: float = 1.0
    penalty_private: list[float] = field(default_factory=list)
    fim_scale: float = 1.0
    prox_scale: float = 1.0
    gamma_unit: np.ndarray = None
    fairness_relaxed: bool = False
    qos_margin: float = 2e-3
    objective_trace: list[float] = field(default_factory=list)
    xi_epoch: list[int] = field(default_factory=list)
    last: dict = field(default_factory=dict)

    @property
    def has_common(self) -> bool:
        return self.scheme in ("RSMA", "I_RSMA")


def initialize_state(scenario: Scenario, cfg: SystemConfig, scheme: str,
                     policy: str, bf: BeamformerSet,
                     qos_margin: float = 2e-3) -> ScaState:
    """Build the initial SCA state from a feasible-ish beamformer set."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    m_users = cfg.n_users
    k = cfg.n_targets
    # the subproblem works in power units of p_max; anchors follow suit
    sigma2 = cfg.noise_power / cfg.p_max
    g_minus, g_plus = worst_case_grams(scenario)

    def tr(mat, lifted):
        return max(float(np.real(np.trace(mat @ lifted))) / cfg.p_max,
                   ANCHOR_FLOOR)

    state = ScaState(scheme=scheme, policy=policy, qos_margin=qos_margin)
    state.gamma_unit = unit_scnr(scenario.targets, cfg.noise_power,
                                 cfg.mean_target_gain)
    state.o_anchor = np.full(k, 1.0 / k)
    state.r_x_anchor = transmit_covariance(bf) / cfg.p_max
    state.penalty_common = cfg.penalty_common
    state.penalty_private = list(cfg.penalty_private)

    uc = bf.u_common
    state.u_anchor_common = (uc / max(np.linalg.norm(uc), 1e-12)
                             if state.has_common else None)
    state.u_anchor_private = [u / max(np.linalg.norm(u), 1e-12)
                              for u in bf.u_private]

    pad = 1e-6
    # clip the gain anchors into a band around the needed SINR: a tangent
    # anchored at a wildly oversized realized SINR is a valid but hopelessly
    # loose restriction, and one anchored far below the required gain asks
    # for more signal than the power budget holds; either way the first
    # subproblem can be spuriously infeasible
    gain_cap = 4.0 * max(2.0 ** cfg.rate_common_min,
                         2.0 ** cfg.rate_private_min,
                         2.0 ** cfg.rate_user_min, 2.0)
    floor_rate = max(cfg.rate_private_min, cfg.rate_user_min)
    pqos_floor = max(2.0 ** floor_rate - 1.0, pad)
    split_floor = max(2.0 ** max(cfg.rate_common_min, 1.0) - 1.0, pad)
    anchors = {}
    if state.has_common:
        split_g, split_d, cqos_g, cqos_d = [], [], [], []
        for m in range(m_users):
            denom = sum(tr(g_plus[m], U) for U in bf.U_private) + sigma2
            gain = tr(g_minus[m], bf.U_common)
            split_d.append(denom)
            split_g.append(float(np.clip(gain / denom, split_floor, gain_cap)))
            cqos_d.append(denom)
            cqos_g.append(max(2.0 ** cfg.rate_common_min - 1.0, pad))
        anchors["split"] = (np.array(split_g), np.array(split_d))
        anchors["cqos"] = (np.array(cqos_g), np.array(cqos_d))
    if scheme in ("RSMA", "I_RSMA", "SDMA"):
        pqos_g, pqos_d, rate_g = [], [], []
        for m in range(m_users):
            denom = sum(tr(g_plus[m], U)
                        for j, U in enumerate(bf.U_private) if j != m) + sigma2
            gain = tr(g_minus[m], bf.U_private[m])
            pqos_d.append(denom)
            pqos_g.append(max(2.0 ** cfg.rate_private_min - 1.0, pad))
            rate_g.append(float(np.clip(gain / denom, pqos_floor, gain_cap)))
        anchors["pqos"] = (np.array(pqos_g), np.array(pqos_d))
        anchors["rate"] = (np.array(rate_g), np.array(pqos_d))
    if scheme == "NOMA":
        order = noma_decoding_order(scenario.users)
        pos = {u: r for r, u in enumerate(order)}
        noma = {}
        g_est = [np.outer(u.h_est, u.h_est.conj()) for u in scenario.users]
        for j in range(m_users):
            for i in range(m_users):
                if pos[i] < pos[j]:
                    continue
                gs = g_minus[i]
                gi = g_plus[i] if i == j else g_est[i]
                denom = sum(tr(gi, bf.U_private[l])
                            for l in range(m_users) if pos[l] > pos[j]) + sigma2
                gain = tr(gs, bf.U_private[j])
                noma[(j, i)] = (float(np.clip(gain / denom, pqos_floor,
                                              gain_cap)), denom)
        anchors["noma"] = noma
        state.last["noma_order"] = order
    state.anchors = anchors

    fim0 = fim_blocks(scenario.targets.with_power_weights(state.o_anchor),
                      state.r_x_anchor * cfg.p_max, cfg.n_blocks,
                      cfg.noise_power)
    state.fim_scale = max(float(np.trace(fim0.fim)) / (3 * k), 1e-12)
    try:
        state.w_anchor = state.fim_scale * np.diag(np.linalg.inv(fim0.fim))
    except np.linalg.LinAlgError:
        state.w_anchor = np.ones(3 * k)
    return state


def gamma_min_floor(state: ScaState, cfg: SystemConfig) -> float:
    """Lower bound keeping the fairness interval away from the o=0 corner."""
    return 0.1 * float(np.min(state.gamma_unit)) / cfg.n_targets


def _gm_coeffs(g0: float, d0: float) -> tuple[float, float, float]:
    """Tangent of sqrt(g*d) at (g0, d0) as const + alpha*g + beta*d."""
    if g0 <= 0 or d0 <= 0:
        raise NonpositiveAnchor(f"anchors must be > 0, got ({g0}, {d0})")
    alpha = 0.5 * np.sqrt(d0 / g0)
    beta = 0.5 * np.sqrt(g0 / d0)
    return float(np.sqrt(g0 * d0) - alpha * g0 - beta * d0), float(alpha), float(beta)


class _GmFamily:
    """Parameter bundle for one family of geometric-mean tangents."""

    def __init__(self, name: str, count: int):
        self.const = cp.Parameter(count, name=f"gm_const:{name}")
        self.alpha = cp.Parameter(count, nonneg=True, name=f"gm_alpha:{name}")
        self.beta = cp.Parameter(count, nonneg=True, name=f"gm_beta:{name}")

    def tangent(self, idx: int, c_gain, c_denom):
        return (self.const[idx] + self.alpha[idx] * c_gain
                + self.beta[idx] * c_denom)

    def set(self, gains: np.ndarray, denoms: np.ndarray):
        triples = [_gm_coeffs(float(g), float(d))
                   for g, d in zip(np.atleast_1d(gains), np.atleast_1d(denoms))]
        self.const.value = np.array([t[0] for t in triples])
        self.alpha.value = np.array([t[1] for t in triples])
        self.beta.value = np.array([t[2] for t in triples])


def assemble_subproblem(scenario: Scenario, state: ScaState,
                        cfg: SystemConfig) -> ConicSubproblem:
    """Build the convex subproblem with anchors bound as parameters.

    The returned subproblem is ready to solve; call ``refresh_subproblem``
    after each anchor update instead of rebuilding.
    """
    m_users, k = cfg.n_users, cfg.n_targets
    n_tx = cfg.n_tx
    sigma2 = cfg.noise_power / cfg.p_max  # subproblem power unit is p_max
    lam1, lam2 = cfg.weight_sensing, cfg.weight_comm
    if scenario.targets.n_targets == 0 or k == 0:
        raise DimensionMismatch("empty target set")
    margin = state.qos_margin
    ic = cfg.rate_common_min + (margin if cfg.rate_common_min > 0 else 0.0)
    ip = cfg.rate_private_min + (margin if cfg.rate_private_min > 0 else 0.0)
    r0 = cfg.rate_user_min + (margin if cfg.rate_user_min > 0 else 0.0)
    g_minus, g_plus = worst_case_grams(scenario)

    sub = ConicSubproblem()
    params: dict = {"gm": {}}
    sub.params = params
    sub.meta = {"scheme": state.scheme, "policy": state.policy,
                "fairness_relaxed": state.fairness_relaxed,
                "targets": scenario.targets}

    u_common = None
    if state.scheme == "OMA":
        # slot beams are dedicated to their users (matched-filter direction);
        # only the per-slot powers are optimized, so the sensing covariance
        # rides on user-pointed beams only
        slot_dirs = []
        for u in scenario.users:
            d = u.h_est / np.linalg.norm(u.h_est)
            slot_dirs.append(np.outer(d, d.conj()))
        sub.meta["oma_dirs"] = slot_dirs
        slot_p = cp.Variable(m_users, nonneg=True, name="slot_powers")
        sub.scalar_vars["slot_powers"] = slot_p
        u_private = [_OmaSlot(slot_dirs[m], slot_p[m]) for m in range(m_users)]
        sub.psd_vars.update({f"U_private_{m}": u_private[m]
                             for m in range(m_users)})
        all_lifts = list(u_private)
        r_x = _CplxSum(u_private, scale=1.0 / m_users)
        sub.add_linear(slot_p <= 1.0, "power:slots")
    else:
        u_private = [HermitianLift(n_tx, f"U_private_{m}")
                     for m in range(m_users)]
        for m, U in enumerate(u_private):
            sub.psd_vars[f"U_private_{m}"] = U
            structure = U.structure_constraints()
            sub.add_linear(structure[0], f"herm:U_private_{m}")
            sub.add_lmi(structure[1], f"psd:U_private_{m}")
        if state.has_common:
            u_common = HermitianLift(n_tx, "U_common")
            sub.psd_vars["U_common"] = u_common
            structure = u_common.structure_constraints()
            sub.add_linear(structure[0], "herm:U_common")
            sub.add_lmi(structure[1], "psd:U_common")
        all_lifts = ([u_common] if u_common is not None else []) + u_private
        r_x = _CplxSum(all_lifts)
        sub.add_linear(sum(U.trace() for U in all_lifts) <= 1.0,
                       "power:total")

    a = cp.Variable(name="a")
    sub.scalar_vars["a"] = a
    w = cp.Variable(3 * k, nonneg=True, name="crb_epigraph_scaled")
    sub.scalar_vars["crb_epigraph_scaled"] = w
    tau = cp.Variable(m_users, nonneg=True, name="rate_private_epigraph")
    sub.scalar_vars["rate_private_epigraph"] = tau

    if state.scheme == "I_RSMA":
        rc = cp.Variable(m_users, nonneg=True, name="rate_split")
        sub.scalar_vars["rate_split"] = rc
        rc_expr = rc
    elif state.scheme == "RSMA":
        rho = cp.Variable(nonneg=True, name="rate_split_total")
        sub.scalar_vars["rate_split_total"] = rho
        rc_expr = cp.hstack([rho / m_users for _ in range(m_users)])
    else:
        rc_expr = None

    # --- sensing power weights and fairness interval -----------------------
    if state.policy == "fairness_aware":
        o = cp.Variable(k, nonneg=True, name="power_weights")
        gmin = cp.Variable(nonneg=True, name="gamma_min")
        sub.scalar_vars["power_weights"] = o
        sub.scalar_vars["gamma_min"] = gmin
        sub.add_linear(o <= 1.0, "o:cap")
        sub.add_linear(cp.sum(o) <= 1.0, "o:budget")
        if not state.fairness_relaxed:
            for kk, (lo, hi) in enumerate(
                    fairness_power_bounds(gmin, cfg.scnr_gap_tol,
                                          state.gamma_unit)):
                sub.add_linear(o[kk] >= lo, f"fair:lo_{kk}")
                sub.add_linear(o[kk] <= hi, f"fair:hi_{kk}")
            sub.add_linear(gmin >= gamma_min_floor(state, cfg), "fair:floor")
        o_expr = o
    else:
        o_expr = None

    # --- CRB epigraph through Schur LMIs -----------------------------------
    fim_expr = _parametric_fim(sub, scenario, cfg, r_x, o_expr)
    for i, con in enumerate(build_schur_lmi(fim_expr, w, k)):
        sub.add_lmi(con, f"schur:{i}")

    # --- rate constraints under worst-case CSI ------------------------------
    def intf(m: int, exclude: int | None, subset=None):
        terms = []
        for j, U in enumerate(u_private):
            if exclude is not None and j == exclude:
                continue
            if subset is not None and j not in subset:
                continue
            terms.append(U.re_trace(g_plus[m]))
        return sum(terms) + sigma2 if terms else cp.Constant(sigma2)

    def new_c(name, size=m_users):
        var = cp.Variable(size, nonneg=True, name=name)
        sub.scalar_vars[name] = var
        return var

    def gm_con(family: str, idx: int, gram, lifted: HermitianLift,
               c_gain, c_denom):
        fam = params["gm"][family]
        return cp.sqrt(lifted.re_trace(gram)) >= fam.tangent(idx, c_gain, c_denom)

    if state.has_common:
        params["gm"]["split"] = _GmFamily("split", m_users)
        params["gm"]["cqos"] = _GmFamily("cqos", m_users)
        params["gm"]["pqos"] = _GmFamily("pqos", m_users)
        params["gm"]["rate"] = _GmFamily("rate", m_users)
        c1, c2 = new_c("c_split_gain"), new_c("c_split_inr")
        c3, c4 = new_c("c_cqos_gain"), new_c("c_cqos_inr")
        c5, c6 = new_c("c_pqos_gain"), new_c("c_pqos_inr")
        c7 = new_c("c_rate_gain")
        for m in range(m_users):
            full = intf(m, exclude=None)
            other = intf(m, exclude=m)
            sub.add_linear(gm_con("split", m, g_minus[m], u_common,
                                  c1[m], c2[m]), f"split:gm_{m}")
            sub.add_exp(cp.log1p(c1[m]) >= LN2 * cp.sum(rc_expr),
                        f"split:gain_{m}")
            sub.add_linear(c2[m] >= full, f"split:inr_{m}")
            if cfg.rate_common_min > 0:
                sub.add_linear(gm_con("cqos", m, g_minus[m], u_common,
                                      c3[m], c4[m]), f"cqos:gm_{m}")
                sub.add_linear(c3[m] >= 2.0 ** ic - 1.0, f"cqos:gain_{m}")
                sub.add_linear(c4[m] >= full, f"cqos:inr_{m}")
            if cfg.rate_private_min > 0:
                sub.add_linear(gm_con("pqos", m, g_minus[m], u_private[m],
                                      c5[m], c6[m]), f"pqos:gm_{m}")
                sub.add_linear(c5[m] >= 2.0 ** ip - 1.0, f"pqos:gain_{m}")
            sub.add_linear(c6[m] >= other, f"pqos:inr_{m}")
            sub.add_linear(gm_con("rate", m, g_minus[m], u_private[m],
                                  c7[m], c6[m]), f"rate:gm_{m}")
            sub.add_exp(cp.log1p(c7[m]) >= LN2 * tau[m], f"rate:gain_{m}")
            if cfg.rate_user_min > 0:
                sub.add_linear(rc_expr[m] + tau[m] >= r0, f"floor:user_{m}")
    elif state.scheme == "SDMA":
        params["gm"]["pqos"] = _GmFamily("pqos", m_users)
        params["gm"]["rate"] = _GmFamily("rate", m_users)
        c5, c6 = new_c("c_pqos_gain"), new_c("c_pqos_inr")
        c7 = new_c("c_rate_gain")
        for m in range(m_users):
            other = intf(m, exclude=m)
            if cfg.rate_private_min > 0:
                sub.add_linear(gm_con("pqos", m, g_minus[m], u_private[m],
                                      c5[m], c6[m]), f"pqos:gm_{m}")
                sub.add_linear(c5[m] >= 2.0 ** ip - 1.0, f"pqos:gain_{m}")
            sub.add_linear(c6[m] >= other, f"pqos:inr_{m}")
            sub.add_linear(gm_con("rate", m, g_minus[m], u_private[m],
                                  c7[m], c6[m]), f"rate:gm_{m}")
            sub.add_exp(cp.log1p(c7[m]) >= LN2 * tau[m], f"rate:gain_{m}")
            if cfg.rate_user_min > 0:
                sub.add_linear(tau[m] >= r0, f"floor:user_{m}")
    elif state.scheme == "NOMA":
        order = state.last["noma_order"]
        pos = {u: r for r, u in enumerate(order)}
        pairs = [(j, i) for j in range(m_users) for i in range(m_users)
                 if pos[i] >= pos[j]]
        sub.meta["noma_pairs"] = pairs
        params["gm"]["noma"] = _GmFamily("noma", len(pairs))
        cg = new_c("c_noma_gain", len(pairs))
        cd = new_c("c_noma_inr", len(pairs))
        g_est = [np.outer(u.h_est, u.h_est.conj()) for u in scenario.users]
        for idx, (j, i) in enumerate(pairs):
            later = [l for l in range(m_users) if pos[l] > pos[j]]
            # a stream's own receiver sees worst-case CSI; at the cross
            # receivers the SIC decodability uses a worst-case signal with
            # interference taken at the estimated CSI
            if i == j:
                sig_gram = g_minus[i]
                denom = intf(i, exclude=None, subset=later)
            else:
                sig_gram = g_minus[i]
                terms = [u_private[l].re_trace(g_est[i]) for l in later]
                denom = sum(terms) + sigma2 if terms else cp.Constant(sigma2)
            sub.add_linear(gm_con("noma", idx, sig_gram, u_private[j],
                                  cg[idx], cd[idx]), f"noma:gm_{j}_{i}")
            sub.add_exp(cp.log1p(cg[idx]) >= LN2 * tau[j], f"noma:gain_{j}_{i}")
            sub.add_linear(cd[idx] >= denom, f"noma:inr_{j}_{i}")
        for j in range(m_users):
            floor_j = max(ip if cfg.rate_private_min > 0 else 0.0,
                          r0 if cfg.rate_user_min > 0 else 0.0)
            if floor_j > 0:
                sub.add_linear(tau[j] >= floor_j, f"noma:floor_{j}")
    elif state.scheme == "OMA":
        c7 = new_c("c_rate_gain")
        floor = max(cfg.rate_private_min, cfg.rate_user_min)
        thr = (2.0 ** (m_users * (floor + margin)) - 1.0) if floor > 0 else 0.0
        for m in range(m_users):
            signal = u_private[m].re_trace(g_minus[m])
            if thr > 0:
                sub.add_linear(signal >= thr * sigma2, f"oma:qos_{m}")
            sub.add_linear(signal >= c7[m] * sigma2, f"oma:rate_{m}")
            sub.add_exp(cp.log1p(c7[m]) >= m_users * LN2 * tau[m],
                        f"oma:gain_{m}")

    # --- objective: epigraph, rank-1 penalties, tie-breaks, damping --------
    obj_expr = a
    if lam1 > 0:
        sub.add_linear(lam1 * cp.sum(w) <= a, "epigraph:sensing")
    names = (["common"] if u_common is not None else []) \
        + [f"private_{m}" for m in range(m_users)]
    if state.scheme != "OMA":  # slot beams are rank-1 by construction
        params["pen_re"], params["pen_im"] = {}, {}
        for name, U in zip(names, all_lifts):
            pr = cp.Parameter((n_tx, n_tx), name=f"pen_re:{name}")
            pi = cp.Parameter((n_tx, n_tx), name=f"pen_im:{name}")
            params["pen_re"][name] = pr
            params["pen_im"][name] = pi
            obj_expr = obj_expr + U.re_trace_param(pr, pi)

    if lam2 > 0:
        t_min = cp.Variable(name="rate_min_total")
        sub.scalar_vars["rate_min_total"] = t_min
        bonus = []
        # tie-break: the rate variables are otherwise objective-free
        # whenever the (positive) sensing branch dominates the epigraph.
        # tau is weighted slightly below r_c so the (objective-flat)
        # common/private rate exchange has a definite preferred corner,
        # and the quadratic selects the even split among equivalent optima.
        tau_weight = 0.95 if rc_expr is not None else 1.0
        for m in range(m_users):
            total = tau[m] if rc_expr is None else rc_expr[m] + tau[m]
            bonus.append(tau_weight * tau[m] if rc_expr is None
                         else rc_expr[m] + tau_weight * tau[m])
            sub.add_linear(t_min <= total, f"epigraph:user_rate_{m}")
        sub.add_linear(-lam2 * t_min <= a, "epigraph:comm")
        obj_expr = obj_expr - RATE_TIE_BREAK * lam2 * (
            t_min + sum(bonus) / m_users)
        if rc_expr is not None:
            obj_expr = obj_expr + RC_SPLIT_REG * cp.sum_squares(rc_expr)

    if o_expr is not None:
        # curvature-matched damping of the power weights: the FIM is
        # linearized in o, so restore the 2*W_k/o_k^3 diagonal Hessian of
        # the true epigraph sum to keep the iterates from corner-hopping
        o_quad = cp.Parameter(k, nonneg=True, name="o_quad")
        o_lin = cp.Parameter(k, name="o_lin")
        params["o_quad"], params["o_lin"] = o_quad, o_lin
        for kk in range(k):
            obj_expr = (obj_expr + o_quad[kk] * cp.square(o_expr[kk])
                        + o_lin[kk] * o_expr[kk])

    # proximal damping toward the previous lifted iterate: the objective is
    # nearly flat along common/private power reshuffles, so without it the
    # iterates drift on the optimal face and the trace test never settles
    if state.scheme != "OMA":
        prox_sqrt = cp.Parameter(nonneg=True, name="prox_sqrt")
        params["prox_sqrt"] = prox_sqrt
        params["prox_center"] = {}
        for name, U in zip(names, all_lifts):
            c_re = cp.Parameter((n_tx, n_tx), name=f"prox_center_re:{name}")
            c_im = cp.Parameter((n_tx, n_tx), name=f"prox_center_im:{name}")
            params["prox_center"][name] = (c_re, c_im)
            obj_expr = obj_expr + (cp.sum_squares(prox_sqrt * U.re - c_re)
                                   + cp.sum_squares(prox_sqrt * U.im - c_im))
    if state.scheme == "I_RSMA":
        rc_sqrt = cp.Parameter(nonneg=True, name="prox_rc_sqrt")
        rc_center = cp.Parameter(m_users, name="prox_rc_center")
        params["prox_rc_sqrt"], params["prox_rc_center"] = rc_sqrt, rc_center
        obj_expr = obj_expr + cp.sum_squares(rc_sqrt * rc_expr - rc_center)
    elif state.scheme == "RSMA":
        rc_sqrt = cp.Parameter(nonneg=True, name="prox_rc_sqrt")
        rc_center = cp.Parameter(name="prox_rc_center")
        params["prox_rc_sqrt"], params["prox_rc_center"] = rc_sqrt, rc_center
        obj_expr = obj_expr + cp.square(
            rc_sqrt * sub.scalar_vars["rate_split_total"] - rc_center)

    sub.objective = cp.Minimize(obj_expr)
    refresh_subproblem(sub, state, cfg)
    return sub


def _parametric_fim(sub: ConicSubproblem, scenario: Scenario,
                    cfg: SystemConfig, r_x: _CplxSum, o_expr):
    """FIM/fim_scale as a DPP expression, affine in (R_x, o).

    Exact in R_x at the anchored power weights; a first-order parameterized
    correction captures the o dependence when o is a variable.
    """
    k = cfg.n_targets
    tg = scenario.targets
    qt, qdt = tg.steering_tx, tg.steering_tx_deriv

    # C*[k,l] contracts target l's (possibly dotted) column with target k's
    # through R_x; the transposes realize the (l, k) index order.
    pairs = [(qt, qt), (qdt, qt), (qt, qdt), (qdt, qdt)]
    c_exprs = []
    for a_mat, b_mat in pairs:
        mr, mi = _sandwich(a_mat, r_x, b_mat)
        c_exprs.append((mr.T, mi.T))

    coef = {}
    for name in ("p11a", "p11b", "p11c", "p11d", "p12a", "p12c", "p22"):
        coef[name + ":re"] = cp.Parameter((k, k), name=f"fim_coef:{name}:re")
        coef[name + ":im"] = cp.Parameter((k, k), name=f"fim_coef:{name}:im")
    sub.params["fim_coef"] = coef

    def cmul(name, c_pair):
        cr, ci = coef[name + ":re"], coef[name + ":im"]
        mr, mi = c_pair
        return (cp.multiply(cr, mr) - cp.multiply(ci, mi),
                cp.multiply(cr, mi) + cp.multiply(ci, mr))

    def cadd(*terms):
        return (sum(t[0] for t in terms), sum(t[1] for t in terms))

    f11 = cadd(cmul("p11a", c_exprs[0]), cmul("p11b", c_exprs[1]),
               cmul("p11c", c_exprs[2]), cmul("p11d", c_exprs[3]))
    f12 = cadd(cmul("p12a", c_exprs[0]), cmul("p12c", c_exprs[2]))
    f22 = cmul("p22", c_exprs[0])
    fim = cp.bmat([
        [f11[0], f12[0], -f12[1]],
        [f12[0].T, f22[0], -f22[1]],
        [-f12[1].T, -f22[1].T, f22[0]],
    ])
    fim = 0.5 * (fim + fim.T)

    if o_expr is not None:
        grads = [cp.Parameter((3 * k, 3 * k), name=f"fim_grad:{kk}")
                 for kk in range(k)]
        offset = cp.Parameter((3 * k, 3 * k), name="fim_grad_offset")
        sub.params["fim_grad"] = grads
        sub.params["fim_grad_offset"] = offset
        for kk in range(k):
            fim = fim + o_expr[kk] * grads[kk]
        fim = fim + offset
    return fim


def refresh_subproblem(sub: ConicSubproblem, state: ScaState,
                       cfg: SystemConfig) -> None:
    """Write the current anchors and penalties into the bound parameters."""
    if sub.meta["fairness_relaxed"] != state.fairness_relaxed:
        raise ValueError("constraint structure changed; rebuild the subproblem")
    params = sub.params
    k = cfg.n_targets
    n_tx = cfg.n_tx
    t = float(cfg.n_blocks)
    # lifted variables are in p_max units; fold the factor into the map
    scale = 2.0 / cfg.noise_power / state.fim_scale * cfg.p_max

    if state.has_common:
        params["gm"]["split"].set(*state.anchors["split"])
        params["gm"]["cqos"].set(*state.anchors["cqos"])
    if state.scheme in ("RSMA", "I_RSMA", "SDMA"):
        params["gm"]["pqos"].set(*state.anchors["pqos"])
        params["gm"]["rate"].set(*state.anchors["rate"])
    if state.scheme == "NOMA":
        pairs = sub.meta["noma_pairs"]
        gains = np.array([state.anchors["noma"][p][0] for p in pairs])
        denoms = np.array([state.anchors["noma"][p][1] for p in pairs])
        params["gm"]["noma"].set(gains, denoms)

    # FIM coefficients at the anchored power weights
    tg = sub.meta["targets"]
    s = np.sqrt(np.clip(state.o_anchor, 1e-12, None))
    smat = np.outer(s, s)
    p = tg.coeffs
    pp = np.outer(p.conj(), p)
    pc = p.conj()[:, None] * np.ones((1, k))
    qr, qdr = tg.steering_rx, tg.steering_rx_deriv
    a_rr = qr.conj().T @ qr
    a_rdr = qr.conj().T @ qdr
    a_drr = qdr.conj().T @ qr
    a_drdr = qdr.conj().T @ qdr
    values = {
        "p11a": scale * t * pp * a_drdr * smat,
        "p11b": scale * t * pp * a_drr * smat,
        "p11c": scale * t * pp * a_rdr * smat,
        "p11d": scale * t * pp * a_rr * smat,
        "p12a": scale * t * pc * a_drr * smat,
        "p12c": scale * t * pc * a_rr * smat,
        "p22": scale * t * np.ones((k, k)) * a_rr * smat,
    }
    coef = params["fim_coef"]
    for name, val in values.items():
        coef[name + ":re"].value = np.ascontiguousarray(val.real)
        coef[name + ":im"].value = np.ascontiguousarray(val.imag)

    if "fim_grad" in params:
        grads = fim_o_gradients(tg, state.r_x_anchor * cfg.p_max,
                                cfg.n_blocks, cfg.noise_power, state.o_anchor)
        offset = np.zeros((3 * k, 3 * k))
        for kk in range(k):
            params["fim_grad"][kk].value = grads[kk] / state.fim_scale
            offset -= state.o_anchor[kk] * grads[kk] / state.fim_scale
        params["fim_grad_offset"].value = offset

    # rank-1 penalty directions and factors
    anchors_u = {"common": state.u_anchor_common}
    anchors_u.update({f"private_{m}": u
                      for m, u in enumerate(state.u_anchor_private)})
    xi = {"common": state.penalty_common}
    xi.update({f"private_{m}": x
               for m, x in enumerate(state.penalty_private)})
    for name in params.get("pen_re", ()):
        u0 = anchors_u[name]
        mat = xi[name] * (np.eye(n_tx) - np.outer(u0, u0.conj()))
        params["pen_re"][name].value = np.ascontiguousarray(mat.real)
        params["pen_im"][name].value = np.ascontiguousarray(mat.imag)

    if "o_quad" in params:
        w_anchor = state.w_anchor
        lam1 = cfg.weight_sensing
        quad = np.zeros(k)
        lin = np.zeros(k)
        for kk in range(k):
            w_k = float(np.sum(w_anchor[np.arange(3 * k) % k == kk]))
            curv = lam1 * max(w_k, 1e-9) / max(state.o_anchor[kk], 1e-3) ** 3
            quad[kk] = min(curv, O_CURV_CAP)
            lin[kk] = -2.0 * quad[kk] * state.o_anchor[kk]
        params["o_quad"].value = quad
        params["o_lin"].value = lin

    # proximal centers: weight 0 until a previous iterate exists
    have_prev = bool(state.lift_prev)
    rho = np.sqrt(PROX_LIFT * state.prox_scale) if have_prev else 0.0
    if "prox_sqrt" in params:
        params["prox_sqrt"].value = rho
    for name, (c_re, c_im) in params.get("prox_center", {}).items():
        key = "U_common" if name == "common" else f"U_{name}"
        prev = state.lift_prev.get(key)
        if have_prev and prev is not None:
            c_re.value = np.ascontiguousarray(rho * prev.real)
            c_im.value = np.ascontiguousarray(rho * prev.imag)
        else:
            c_re.value = np.zeros((n_tx, n_tx))
            c_im.value = np.zeros((n_tx, n_tx))
    if "prox_rc_sqrt" in params:
        have_rc = state.rc_prev is not None
        rho_rc = np.sqrt(PROX_RC * state.prox_scale) if have_rc else 0.0
        params["prox_rc_sqrt"].value = rho_rc
        if state.scheme == "I_RSMA":
            params["prox_rc_center"].value = (
                rho_rc * state.rc_prev if have_rc else np.zeros(cfg.n_users))
        else:
            params["prox_rc_center"].value = (
                rho_rc * float(np.sum(state.rc_prev)) if have_rc else 0.0)


def refresh_anchors(state: ScaState, values: dict, scenario: Scenario,
                    cfg: SystemConfig) -> None:
    """Move expansion points to the freshly solved iterate."""
    m_users = cfg.n_users

    def vec(name, old):
        v = values.get(name)
        if v is None:
            return old
        return np.clip(np.atleast_1d(np.real(v)), ANCHOR_FLOOR, None)

    if state.has_common:
        state.anchors["split"] = (vec("c_split_gain", state.anchors["split"][0]),
                                  vec("c_split_inr", state.anchors["split"][1]))
        state.anchors["cqos"] = (vec("c_cqos_gain", state.anchors["cqos"][0]),
                                 vec("c_cqos_inr", state.anchors["cqos"][1]))
    if state.scheme in ("RSMA", "I_RSMA", "SDMA"):
        state.anchors["pqos"] = (vec("c_pqos_gain", state.anchors["pqos"][0]),
                                 vec("c_pqos_inr", state.anchors["pqos"][1]))
        state.anchors["rate"] = (vec("c_rate_gain", state.anchors["rate"][0]),
                                 state.anchors["pqos"][1])
    if state.scheme == "NOMA":
        pairs = list(state.anchors["noma"])
        g = values.get("c_noma_gain")
        d = values.get("c_noma_inr")
        if g is not None and d is not None:
            g = np.atleast_1d(np.real(g))
            d = np.atleast_1d(np.real(d))
            for idx, pair in enumerate(pairs):
                state.anchors["noma"][pair] = (
                    max(float(g[idx]), ANCHOR_FLOOR),
                    max(float(d[idx]), ANCHOR_FLOOR))

    def stable_dir(old: np.ndarray, mat: np.ndarray) -> np.ndarray:
        # penalty direction: the leading eigenvector, except that under a
        # near-degenerate top pair the in-subspace direction closest to the
        # previous anchor is used so successive anchors do not flip between
        # two equivalent directions
        mh = 0.5 * (mat + mat.conj().T)
        w, v = np.linalg.eigh(mh)
        lead = v[:, -1]
        if old is not None and len(w) >= 2 and w[-2] > 0.2 * max(w[-1], 1e-300):
            basis = v[:, -2:]
            proj = basis @ (basis.conj().T @ old)
            nrm = np.linalg.norm(proj)
            if nrm > 1e-6:
                return proj / nrm
        return lead / max(np.linalg.norm(lead), 1e-12)

    if state.has_common and values.get("U_common") is not None:
        state.u_anchor_common = stable_dir(state.u_anchor_common,
                                           values["U_common"])
    for m in range(m_users):
        um = values.get(f"U_private_{m}")
        if um is not None:
            state.u_anchor_private[m] = stable_dir(state.u_anchor_private[m], um)

    if state.policy == "fairness_aware" and values.get("power_weights") is not None:
        state.o_anchor = np.clip(np.real(values["power_weights"]), 1e-9, 1.0)
    if values.get("crb_epigraph_scaled") is not None:
        state.w_anchor = np.clip(np.real(values["crb_epigraph_scaled"]),
                                 1e-12, None)
    if state.has_common and values.get("U_common") is not None:
        state.lift_prev["U_common"] = values["U_common"]
    for m in range(m_users):
        if values.get(f"U_private_{m}") is not None:
            state.lift_prev[f"U_private_{m}"] = values[f"U_private_{m}"]
    if state.scheme == "I_RSMA" and values.get("rate_split") is not None:
        state.rc_prev = np.clip(np.real(values["rate_split"]), 0.0, None)
    elif state.scheme == "RSMA" and values.get("rate_split_total") is not None:
        rho = max(float(np.real(values["rate_split_total"])), 0.0)
        state.rc_prev = np.full(m_users, rho / m_users)
    lifted = [values[f"U_private_{m}"] for m in range(m_users)]
    if state.scheme == "OMA":
        state.r_x_anchor = sum(lifted) / m_users
    else:
        state.r_x_anchor = sum(lifted) + (values.get("U_common")
                                          if state.has_common else 0.0)
    state.iterate_index += 1


def solution_traces(state: ScaState, values: dict, cfg: SystemConfig) -> np.ndarray:
    """Stopping-rule trace vector (||r_c||^2, ||o||^2, Tr U_c, sum Tr U_m)."""
    m_users = cfg.n_users
    if state.scheme == "I_RSMA":
        rc = values.get("rate_split")
        rc_norm = float(np.sum(np.real(rc) ** 2)) if rc is not None else 0.0
    elif state.scheme == "RSMA":
        rho = values.get("rate_split_total")
        rc_norm = float(np.real(rho)) ** 2 / m_users if rho is not None else 0.0
    else:
        rc_norm = 0.0
    o = values.get("power_weights")
    o_norm = float(np.sum(np.real(o) ** 2)) if o is not None else \
        float(np.sum(state.o_anchor ** 2))
    tr_uc = (float(np.real(np.trace(values["U_common"])))
             if state.has_common and values.get("U_common") is not None else 0.0)
    tr_um = sum(float(np.real(np.trace(values[f"U_private_{m}"])))
                for m in range(m_users))
    return np.array([rc_norm, o_norm, tr_uc, tr_um])


def penalty_gap(state: ScaState, values: dict, cfg: SystemConfig) -> float:
    """Largest relative rank-1 penalty (Tr U - lambda_max)/Tr U over beams."""
    gaps = []
    mats = [values[f"U_private_{m}"] for m in range(cfg.n_users)]
    if state.has_common and values.get("U_common") is not None:
        mats.append(values["U_common"])
    for u_mat in mats:
        tr = float(np.real(np.trace(u_mat)))
        if tr <= 1e-9:
            continue
        lam = float(np.linalg.eigvalsh(0.5 * (u_mat + u_mat.conj().T))[-1])
        gaps.append(max(tr - lam, 0.0) / tr)
    return max(gaps) if gaps else 0.0
