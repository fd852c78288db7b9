"""Convexification building blocks: Schur LMIs, tangent surrogates,
fairness boxes, and the rank-1 penalty.

These are the pieces the subproblem assembler composes. Each piece is usable
on its own (and unit-tested on its own): the tangent arithmetic works on
plain floats, the constraint builders on cvxpy expressions.
"""

from __future__ import annotations

import cvxpy as cp
import numpy as np

from .errors import DimensionMismatch, NonpositiveAnchor
from .sensing import fim_complex_blocks
from .scenario import TargetSet


# ---------------------------------------------------------------------------
# Schur-complement epigraph of CRB diagonal entries

def build_schur_lmi(fim_affine, v, k_targets: int) -> list:
    """3K LMIs [[F, e_i], [e_i^T, v_i]] >= 0 for the CRB diagonal epigraph.

    ``fim_affine`` must be a symmetric (3K x 3K) expression affine in the
    decision variables; each LMI is equivalent to v_i >= [F^-1]_{ii} whenever
    F is positive definite.
    """
    dim = 3 * k_targets
    if fim_affine.shape != (dim, dim):
        raise DimensionMismatch(
            f"FIM expression must be {dim}x{dim}, got {fim_affine.shape}")
    if v.shape not in ((dim,), (dim, 1)):
        raise DimensionMismatch("need one epigraph scalar per parameter")
    constraints = []
    eye = np.eye(dim)
    for i in range(dim):
        e = eye[:, i:i + 1]
        vi = cp.reshape(v[i], (1, 1), order="F")
        constraints.append(cp.bmat([[fim_affine, e], [e.T, vi]]) >> 0)
    return constraints


# ---------------------------------------------------------------------------
# first-order surrogate of the geometric mean sqrt(c_a * c_b)

def geometric_mean_tangent(anchor_a: float, anchor_b: float, c_a, c_b):
    """Tangent plane of sqrt(c_a*c_b) at (anchor_a, anchor_b).

    The geometric mean is concave, so the tangent dominates it everywhere;
    requiring sqrt(signal) >= tangent therefore implies the original bilinear
    inequality, and the two coincide at the anchor.
    """
    if anchor_a <= 0 or anchor_b <= 0:
        raise NonpositiveAnchor(
            f"anchors must be > 0, got ({anchor_a}, {anchor_b})")
    root = np.sqrt(anchor_a * anchor_b)
    return (root
            + (c_a - anchor_a) * np.sqrt(anchor_b / anchor_a) / 2.0
            + (c_b - anchor_b) * np.sqrt(anchor_a / anchor_b) / 2.0)


def linearize_rate_constraint(kind: str, anchors: tuple[float, float],
                              user: int, channel_bound: np.ndarray,
                              lifted, c_gain, c_denom):
    """Tangent form of Tr(H U) >= c_gain * c_denom for one rate constraint.

    ``kind`` tags the constraint family (common_split / common_qos /
    private_qos / rate_epigraph); ``channel_bound`` is the worst-case signal
    Gram (H_es - e_max I). Returns a single cvxpy constraint
    sqrt(Re Tr(H U)) >= tangent; the sqrt domain supplies the nonnegativity
    clamp of the rotated trace.
    """
    if kind not in ("common_split", "common_qos", "private_qos", "rate_epigraph"):
        raise ValueError(f"unknown constraint kind {kind!r}")
    tangent = geometric_mean_tangent(anchors[0], anchors[1], c_gain, c_denom)
    signal = cp.real(cp.trace(channel_bound @ lifted))
    return cp.sqrt(signal) >= tangent


# ---------------------------------------------------------------------------
# fairness interval on the sensing power weights

def fairness_power_bounds(gamma_min_var, rho0: float,
                          gamma_unit: np.ndarray) -> list[tuple]:
    """Per-target bounds gamma_min/g_k <= o_k <= (gamma_min + rho0)/g_k.

    ``gamma_min_var`` may be a number or a scalar cvxpy variable; the bounds
    stay affine in it either way. Returns one (lower, upper) pair per target.
    """
    gamma_unit = np.asarray(gamma_unit, dtype=float)
    if np.any(gamma_unit <= 0):
        raise ValueError("unit SCNRs must be > 0")
    if rho0 < 0:
        raise ValueError("rho0 must be >= 0")
    return [(gamma_min_var / g, (gamma_min_var + rho0) / g) for g in gamma_unit]


# ---------------------------------------------------------------------------
# rank-1 penalty term of a lifted beamformer

def penalty_value(U: np.ndarray, u0: np.ndarray) -> float:
    """Tr(U) - u0^H U u0 for a numeric PSD matrix and unit anchor."""
    return float(np.real(np.trace(U) - u0.conj() @ U @ u0))


def penalty_objective(a_var, v_vars, bf_anchors: list[np.ndarray],
                      lifted_vars: list, penalties: list[float],
                      lambda1: float, power_scale: float = 1.0):
    """Penalized epigraph pieces for the sensing objective.

    Returns (objective_expression, epigraph_constraints). The penalty for a
    lifted variable U with unit anchor u0 is Tr(U) - u0^H U u0, which is
    nonnegative and vanishes iff U is rank-1 aligned with u0; it enters the
    minimization objective scaled by its penalty factor and normalized by
    ``power_scale`` so factors stay dimensionless. The CRB epigraph
    lambda1 * sum(v) <= a is emitted only for lambda1 > 0 (at lambda1 = 0
    the sensing branch is dropped so the communication branch can drive the
    objective).
    """
    if len(bf_anchors) != len(lifted_vars) or len(penalties) != len(lifted_vars):
        raise DimensionMismatch("one anchor and penalty factor per lifted var")
    pen_expr = 0
    for u0, U, xi in zip(bf_anchors, lifted_vars, penalties):
        n = u0.shape[0]
        m0 = np.eye(n) - np.outer(u0, u0.conj())
        pen_expr = pen_expr + xi * cp.real(cp.trace(m0 @ U)) / power_scale
    objective = a_var + pen_expr
    constraints = []
    if lambda1 > 0:
        constraints.append(lambda1 * cp.sum(v_vars) <= a_var)
    return objective, constraints


# ---------------------------------------------------------------------------
# affine FIM map for the subproblem

def fim_affine_expression(targets: TargetSet, r_x_expr, n_blocks: int,
                          noise_power: float, o_anchor: np.ndarray,
                          o_expr=None, r_x_anchor: np.ndarray | None = None):
    """FIM as a cvxpy expression, affine in (R_x, o).

    The map is exact in R_x for weights fixed at ``o_anchor``; when ``o`` is
    a variable, a first-order correction around (o_anchor, r_x_anchor) makes
    the joint map affine. At o == o_anchor the expression equals the true
    FIM for any R_x.
    """
    k = targets.n_targets
    anchored = targets.with_power_weights(o_anchor)
    s = np.sqrt(o_anchor)
    qt = anchored.steering_tx * s[None, :]
    qdt = anchored.steering_tx_deriv * s[None, :]
    qr = anchored.steering_rx
    qdr = anchored.steering_rx_deriv
    p = anchored.coeffs
    t = float(n_blocks)
    pp = np.outer(p.conj(), p)

    a_rr = qr.conj().T @ qr
    a_rdr = qr.conj().T @ qdr
    a_drr = qdr.conj().T @ qr
    a_drdr = qdr.conj().T @ qdr

    c1 = (qt.conj().T @ r_x_expr @ qt).T
    c2 = (qdt.conj().T @ r_x_expr @ qt).T
    c3 = (qt.conj().T @ r_x_expr @ qdt).T
    c4 = (qdt.conj().T @ r_x_expr @ qdt).T

    f11 = (cp.multiply(t * pp * a_drdr, c1) + cp.multiply(t * pp * a_drr, c2)
           + cp.multiply(t * pp * a_rdr, c3) + cp.multiply(t * pp * a_rr, c4))
    f12 = (cp.multiply(t * p.conj()[:, None] * a_drr, c1)
           + cp.multiply(t * p.conj()[:, None] * a_rr, c3))
    f22 = cp.multiply(t * a_rr, c1)

    scale = 2.0 / noise_power
    fim = scale * cp.bmat([
        [cp.real(f11), cp.real(f12), -cp.imag(f12)],
        [cp.real(f12).T, cp.real(f22), -cp.imag(f22)],
        [-cp.imag(f12).T, -cp.imag(f22).T, cp.real(f22)],
    ])
    fim = 0.5 * (fim + fim.T)

    if o_expr is not None:
        if r_x_anchor is None:
            raise ValueError("o correction requires an R_x anchor")
        grads = fim_o_gradients(targets, r_x_anchor, n_blocks, noise_power,
                                o_anchor)
        for kk in range(k):
            fim = fim + (o_expr[kk] - o_anchor[kk]) * grads[kk]
    return fim


def fim_o_gradients(targets: TargetSet, r_x: np.ndarray, n_blocks: int,
                    noise_power: float, o_anchor: np.ndarray) -> list[np.ndarray]:
    """d FIM / d o_k at (r_x, o_anchor): constant symmetric matrices.

    Entry (i, j) of the FIM scales like sqrt(o_{t(i)} o_{t(j)}) with
    t(i) = i mod K, so the gradient is an entrywise rescaling of the
    unit-weight FIM.
    """
    k = targets.n_targets
    unit = targets.with_power_weights(np.ones(k))
    f11, f12, f22 = fim_complex_blocks(unit, r_x, n_blocks)
    from .sensing import assemble_real_fim

    base = assemble_real_fim(f11, f12, f22, noise_power)
    s = np.sqrt(np.clip(o_anchor, 1e-12, None))
    t_idx = np.tile(np.arange(k), 3)
    grads = []
    for kk in range(k):
        d = np.zeros((3 * k, 3 * k))
        for i in range(3 * k):
            for j in range(3 * k):
                ti, tj = t_idx[i], t_idx[j]
                if ti == kk and tj == kk:
                    d[i, j] = 1.0
                elif ti == kk:
                    d[i, j] = s[tj] / (2.0 * s[kk])
                elif tj == kk:
                    d[i, j] = s[ti] / (2.0 * s[kk])
        grads.append(d * base)
    return grads
