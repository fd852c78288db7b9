"""Outer/inner iterative optimization loop and solution certification.

The loop alternates: solve the convex subproblem, refresh anchors, check the
per-target SCNR gap (inner), then test trace stagnation (outer). Stagnation
with a residual rank-1 gap grows the penalty factors; stagnation with tight
lifted matrices terminates. Beamformers are recovered by eigendecomposition
and lightly repaired (full-power rescale, common-rate-split clamp) so the
reported solution re-certifies against the closed-form metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .beams import (extract_rank1, noma_superposition_init, rank1_residual,
                    zero_forcing_init)
from .config import SystemConfig
from .conic import SolverSettings, solve_conic
from .errors import Infeasible, MaxOuterIterations
from .rates import (BeamformerSet, RatesReport, noma_rates, oma_rates,
                    rsma_rates, transmit_covariance)
from .scenario import Scenario
from .sensing import CrbReport, crb_from_fim, fim_blocks, unit_scnr
from .subproblem import (ScaState, assemble_subproblem, initialize_state,
                         penalty_gap, refresh_anchors, refresh_subproblem,
                         solution_traces)

RANK1_EXIT_TOL = 1e-4


@dataclass
class Solution:
    bf: BeamformerSet
    power_weights: np.ndarray
    rates: RatesReport
    crb: CrbReport
    scnr: np.ndarray
    converged: bool
    iterations_outer: int
    iterations_inner: int
    scheme: str
    power_policy: str
    weight_sensing: float
    objective: float
    objective_trace: list[float] = field(default_factory=list)
    crb_angle_trace: list[list[float]] = field(default_factory=list)
    rank1_errors: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    fairness_relaxed: bool = False
    gamma_gap: float = 0.0

    @property
    def crb_trace_total(self) -> float:
        return self.crb.trace

    def to_json(self) -> str:
        doc = {
            "scheme": self.scheme,
            "policy": self.power_policy,
            "weights": {"sensing": self.weight_sensing,
                        "comm": 1.0 - self.weight_sensing},
            "converged": self.converged,
            "iterations": {"outer": self.iterations_outer,
                           "inner": self.iterations_inner},
            "objective": self.objective,
            "objective_trace": [float(x) for x in self.objective_trace],
            "power_weights": [float(x) for x in self.power_weights],
            "scnr": [float(x) for x in self.scnr],
            "gamma_gap": float(self.gamma_gap),
            "crb_angle_db": [10.0 * np.log10(x) for x in self.crb.crb_angle],
            "crb_coeff_re_db": [10.0 * np.log10(x) for x in self.crb.crb_coeff_re],
            "crb_coeff_im_db": [10.0 * np.log10(x) for x in self.crb.crb_coeff_im],
            "crb_trace": float(self.crb.trace),
            "rates": self.rates.to_dict(),
            "rate_split": [float(x) for x in self.bf.rate_split],
            "rank1_errors": {k: float(v) for k, v in self.rank1_errors.items()},
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "fairness_relaxed": self.fairness_relaxed,
        }
        return json.dumps(doc, sort_keys=True)


def scheme_covariance(bf: BeamformerSet, scheme: str) -> np.ndarray:
    """Time-averaged transmit covariance; OMA duty-cycles its slots."""
    r = transmit_covariance(bf)
    return r / bf.n_users if scheme == "OMA" else r


def scheme_rates(scenario: Scenario, bf: BeamformerSet, scheme: str,
                 mode: str) -> RatesReport:
    sigma2 = scenario.config.noise_power
    if scheme in ("RSMA", "I_RSMA", "SDMA"):
        return rsma_rates(scenario.users, bf, sigma2, mode)
    if scheme == "NOMA":
        return noma_rates(scenario.users, bf, sigma2, mode)
    if scheme == "OMA":
        return oma_rates(scenario.users, bf, sigma2, mode)
    raise ValueError(f"unknown scheme {scheme!r}")


def _relative_change(new: np.ndarray, old: np.ndarray,
                     floor: np.ndarray | float = 1e-12) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(new), np.abs(old)), floor)
    out = np.abs(new - old) / denom
    out[(np.abs(new) < 1e-12) & (np.abs(old) < 1e-12)] = 0.0
    return out


def _gamma_gap(o: np.ndarray, gamma_unit: np.ndarray) -> float:
    g = o * gamma_unit
    return float(np.max(g) - np.min(g)) if len(g) > 1 else 0.0


def run_algorithm1(scenario: Scenario, cfg: SystemConfig,
                   settings: SolverSettings | None = None,
                   scheme: str = "I_RSMA", policy: str = "fairness_aware",
                   max_outer: int = 100, inner_cap: int = 6,
                   qos_margin: float = 2e-3, warm: Solution | None = None,
                   record_crb_trace: bool = False) -> Solution:
    """Nested SCA / penalty / fairness loop returning a certified Solution."""
    settings = settings or SolverSettings()
    if warm is not None:
        bf0 = warm.bf
    elif scheme == "NOMA":
        bf0 = noma_superposition_init(scenario)
    else:
        bf0 = zero_forcing_init(scenario)
    state = initialize_state(scenario, cfg, scheme, policy, bf0, qos_margin)
    if warm is not None:
        state.o_anchor = np.clip(np.asarray(warm.power_weights, dtype=float),
                                 1e-9, 1.0)

    converged = False
    xi_epoch = 0
    prev_traces = None
    prev2_traces = None
    vals = None
    inner_total = 0
    crb_angle_trace: list[list[float]] = []
    outer_done = 0
    sub = None
    near_stagnant = 0

    for outer in range(max_outer):
        outer_done = outer + 1
        gap = np.inf
        for _ in range(inner_cap):
            if sub is None or sub.meta["fairness_relaxed"] != state.fairness_relaxed:
                sub = assemble_subproblem(scenario, state, cfg)
            else:
                refresh_subproblem(sub, state, cfg)
            try:
                vals = solve_conic(sub, settings)
            except Infeasible:
                if (policy == "fairness_aware" and not state.fairness_relaxed):
                    state.fairness_relaxed = True  # drop fairness, keep QoS
                    continue
                raise
            inner_total += 1
            state.objective_trace.append(vals["__objective__"])
            state.xi_epoch.append(xi_epoch)
            refresh_anchors(state, vals, scenario, cfg)
            o_now = (state.o_anchor if policy == "fairness_aware"
                     else np.full(cfg.n_targets, 1.0 / cfg.n_targets))
            gap = _gamma_gap(o_now, state.gamma_unit)
            if gap <= cfg.scnr_gap_tol + 1e-7 or state.fairness_relaxed:
                break
        if vals is None:
            raise Infeasible("no subproblem could be solved")

        if record_crb_trace:
            crb_angle_trace.append(_crb_angles_now(scenario, cfg, state))

        traces = solution_traces(state, vals, cfg)
        if prev_traces is not None:
            # beam traces are in power-budget units, so a unit floor makes
            # the test relative to the scale of the whole problem
            rel_now = float(np.max(
                _relative_change(traces, prev_traces, floor=1.0)))
            stagnant = rel_now < cfg.outer_tol
        else:
            rel_now = np.inf
            stagnant = False
        if prev2_traces is not None and not stagnant:
            # the anchor map can settle into a stable period-2 cycle whose
            # two points are physically equivalent; stagnation of the
            # two-step subsequence is then the honest convergence signal
            rel2 = float(np.max(
                _relative_change(traces, prev2_traces, floor=1.0)))
            stagnant = rel2 < cfg.outer_tol and rel_now < 100 * cfg.outer_tol
        prev2_traces = prev_traces
        prev_traces = traces
        # late-phase proximal ramp: freezes the crawl along objective-flat
        # valleys so the trace-stagnation test can fire; capped so the
        # quadratic term cannot wreck the interior-point conditioning
        if state.iterate_index >= 8 and state.prox_scale < 4096.0:
            state.prox_scale = min(state.prox_scale * 1.6, 4096.0)
        pgap = penalty_gap(state, vals, cfg)
        if stagnant and pgap <= RANK1_EXIT_TOL:
            converged = True
            break
        if pgap <= RANK1_EXIT_TOL and rel_now >= cfg.outer_tol:
            # rank-1 locked but the iterate still creeps along a flat
            # valley; harden the proximal term so the map contracts
            state.prox_scale = min(state.prox_scale * 4.0, 1e7)
        # a residual rank gap keeps the penalty anchor flip-flopping
        # between near-equal directions and blocks exact stagnation;
        # escalate the penalty once the iterates are nearly settled
        if pgap > RANK1_EXIT_TOL and rel_now < 500 * cfg.outer_tol:
            near_stagnant += 1
        else:
            near_stagnant = 0
        if stagnant or near_stagnant >= 2:
            # stubborn gaps (multicast-like beams are genuinely rank-2 in
            # the relaxation) get a progressively harder escalation
            growth = (1.0 + cfg.penalty_growth) ** (1 + xi_epoch // 8)
            state.penalty_common *= growth
            state.penalty_private = [x * growth
                                     for x in state.penalty_private]
            xi_epoch += 1
            near_stagnant = 1  # keep growing while the gap persists
    if not converged:
        raise MaxOuterIterations(
            f"no convergence within {max_outer} outer iterations "
            f"(scheme={scheme}, policy={policy})")

    sol = _finalize(scenario, cfg, state, vals, converged, outer_done,
                    inner_total)
    sol.objective_trace = list(state.objective_trace)
    sol.crb_angle_trace = crb_angle_trace
    return sol


def _crb_angles_now(scenario, cfg, state) -> list[float]:
    try:
        o = state.o_anchor
        bundle = fim_blocks(scenario.targets.with_power_weights(o),
                            state.r_x_anchor * cfg.p_max, cfg.n_blocks,
                            cfg.noise_power)
        return [float(x) for x in
                crb_from_fim(bundle).crb_angle]
    except Exception:
        return [float("nan")] * cfg.n_targets


def _finalize(scenario: Scenario, cfg: SystemConfig, state: ScaState,
              vals: dict, converged: bool, outer: int, inner: int) -> Solution:
    m_users = cfg.n_users
    has_common = state.has_common
    # solver variables are in p_max units; restore physical power here
    uc_mat = vals["U_common"] * cfg.p_max if has_common else None
    um_mats = [vals[f"U_private_{m}"] * cfg.p_max for m in range(m_users)]
    u_common = (extract_rank1(uc_mat) if has_common
                else np.zeros(cfg.n_tx, dtype=complex))
    u_private = [extract_rank1(u) for u in um_mats]
    rank1_errors = {}
    if has_common:
        rank1_errors["common"] = rank1_residual(uc_mat, u_common)
    for m in range(m_users):
        rank1_errors[f"private_{m}"] = rank1_residual(um_mats[m], u_private[m])

    # use the power the extraction freed: uniform up-scaling only improves
    # every SINR and the sensing covariance
    if state.scheme == "OMA":
        u_private = [u * np.sqrt(cfg.p_max / max(np.linalg.norm(u) ** 2, 1e-300))
                     if np.linalg.norm(u) > 0 else u for u in u_private]
    else:
        used = (np.linalg.norm(u_common) ** 2
                + sum(np.linalg.norm(u) ** 2 for u in u_private))
        if used > 0.0:
            alpha = np.sqrt(cfg.p_max / used)
            u_common = u_common * alpha
            u_private = [u * alpha for u in u_private]

    # common rate split, clamped to the certified worst-case common rate
    if state.scheme == "I_RSMA":
        rc = np.clip(np.real(vals.get("rate_split")), 0.0, None)
    elif state.scheme == "RSMA":
        rho = max(float(np.real(vals.get("rate_split_total"))), 0.0)
        rc = np.full(m_users, rho / m_users)
    else:
        rc = np.zeros(m_users)
    bf = BeamformerSet(u_common=u_common, u_private=u_private, rate_split=rc)
    rates_wc = scheme_rates(scenario, bf, state.scheme, "worst_case")
    if has_common and rc.sum() > 0:
        cap = max(rates_wc.rate_common - 1e-9, 0.0)
        if rc.sum() > cap:
            rc = rc * (cap / rc.sum())
            bf = BeamformerSet(u_common=u_common, u_private=u_private,
                               rate_split=rc)
            rates_wc = scheme_rates(scenario, bf, state.scheme, "worst_case")

    o_final = (np.asarray(state.o_anchor, dtype=float)
               if state.policy == "fairness_aware"
               else np.full(cfg.n_targets, 1.0 / cfg.n_targets))
    r_x = scheme_covariance(bf, state.scheme)
    bundle = fim_blocks(scenario.targets.with_power_weights(o_final), r_x,
                        cfg.n_blocks, cfg.noise_power)
    crb = crb_from_fim(bundle)
    scnr = o_final * state.gamma_unit
    gap = _gamma_gap(o_final, state.gamma_unit)
    if state.fairness_relaxed and gap > cfg.scnr_gap_tol + 1e-7:
        converged = False

    sol = Solution(
        bf=bf, power_weights=o_final, rates=rates_wc, crb=crb, scnr=scnr,
        converged=converged, iterations_outer=outer, iterations_inner=inner,
        scheme=state.scheme, power_policy=state.policy,
        weight_sensing=cfg.weight_sensing,
        objective=true_objective(cfg, crb, rc, rates_wc),
        rank1_errors=rank1_errors,
        fairness_relaxed=state.fairness_relaxed, gamma_gap=gap)
    sol.residuals = certify_solution(scenario, cfg, sol)
    return sol


def true_objective(cfg: SystemConfig, crb: CrbReport, rc: np.ndarray,
                   rates_wc: RatesReport) -> float:
    """Pareto epigraph value max(l1 * Tr CRB, -l2 * min_m(r_c,m + R_m))."""
    comm = -cfg.weight_comm * float(np.min(rc + rates_wc.rate_private))
    if cfg.weight_sensing == 0.0:
        return comm
    sensing = cfg.weight_sensing * crb.trace
    if cfg.weight_comm == 0.0:
        return sensing
    return max(sensing, comm)


def certify_solution(scenario: Scenario, cfg: SystemConfig,
                     sol: Solution) -> dict:
    """Independent re-evaluation of every exit constraint (closed forms only).

    Residuals are signed so that <= 0 means satisfied.
    """
    res = {}
    bf = sol.bf
    if sol.scheme == "OMA":
        res["power"] = max(float(np.linalg.norm(u) ** 2) for u in bf.u_private) \
            - cfg.p_max
    else:
        r_full = transmit_covariance(bf)
        res["power"] = float(np.real(np.trace(r_full))) - cfg.p_max
    rates = sol.rates
    if sol.scheme in ("RSMA", "I_RSMA"):
        res["common_split"] = float(np.sum(bf.rate_split)) - rates.rate_common
        res["common_qos"] = cfg.rate_common_min - rates.rate_common
    res["private_qos"] = float(np.max(cfg.rate_private_min
                                      - rates.rate_private))
    if cfg.rate_user_min > 0:
        res["user_floor"] = float(np.max(cfg.rate_user_min - bf.rate_split
                                         - rates.rate_private))
    res["rank1"] = max(sol.rank1_errors.values()) - 1e-3 \
        if sol.rank1_errors else 0.0
    if sol.power_policy == "fairness_aware" and sol.converged:
        res["fairness_gap"] = sol.gamma_gap - cfg.scnr_gap_tol
    return res
