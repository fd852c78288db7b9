"""Beamformer initialization and rank-1 recovery."""

from __future__ import annotations

import numpy as np

from .errors import RankDeficientChannels, ZeroMatrix
from .rates import BeamformerSet
from .scenario import Scenario


def zero_forcing_init(scenario: Scenario) -> BeamformerSet:
    """Zero-forcing start: private beams from the channel pseudo-inverse,
    common beam along the dominant left singular vector, equal power split
    P_max/(M+1) per beam."""
    cfg = scenario.config
    h = scenario.channel_matrix_est  # (n_tx, M)
    m = cfg.n_users
    if m > cfg.n_tx:
        raise RankDeficientChannels("zero forcing needs M <= N_t")
    sv = np.linalg.svd(h, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise RankDeficientChannels(
            f"estimated channel matrix is rank deficient (sigma_min={sv[-1]:.3e})")
    w = h @ np.linalg.inv(h.conj().T @ h)  # h_i^H w_j = delta_ij
    per_beam = cfg.p_max / (m + 1)
    u_private = [np.sqrt(per_beam) * w[:, j] / np.linalg.norm(w[:, j])
                 for j in range(m)]
    u_left, _, _ = np.linalg.svd(h)
    u_common = np.sqrt(per_beam) * u_left[:, 0]
    return BeamformerSet(u_common=u_common, u_private=u_private,
                         rate_split=np.zeros(m))


def noma_superposition_init(scenario: Scenario) -> BeamformerSet:
    """Matched-filter beams with power tilted toward weak users.

    Superposition decoding needs the earliest-decoded (weakest) streams to
    arrive strongest, so per-user powers follow a geometric profile in the
    decoding order; an equal split is generally undecodable.
    """
    cfg = scenario.config
    norms = np.array([np.linalg.norm(u.h_est) for u in scenario.users])
    order = np.argsort(norms, kind="stable")  # weakest first
    frac = np.zeros(cfg.n_users)
    for rank, m in enumerate(order):
        frac[m] = 2.0 ** (cfg.n_users - 1 - rank)
    frac /= frac.sum()
    u_private = [np.sqrt(cfg.p_max * frac[m]) * u.h_est / norms[m]
                 for m, u in enumerate(scenario.users)]
    return BeamformerSet(u_common=np.zeros(cfg.n_tx, dtype=complex),
                         u_private=u_private,
                         rate_split=np.zeros(cfg.n_users))


def extract_rank1(U: np.ndarray) -> np.ndarray:
    """Leading-eigenpair beamformer sqrt(lambda_max) * v from a PSD matrix.

    The global phase is normalized so the first entry with non-negligible
    magnitude is real positive.
    """
    U = 0.5 * (U + U.conj().T)
    tr = float(np.real(np.trace(U)))
    if tr <= 1e-300 or not np.isfinite(tr):
        raise ZeroMatrix("cannot extract a beamformer from a zero matrix")
    w, v = np.linalg.eigh(U)
    lam = max(float(w[-1]), 0.0)
    vec = v[:, -1]
    idx = int(np.argmax(np.abs(vec) > 1e-12 * np.abs(vec).max()))
    phase = vec[idx] / abs(vec[idx])
    vec = vec / phase
    return np.sqrt(lam) * vec


def rank1_residual(U: np.ndarray, u: np.ndarray) -> float:
    """Relative reconstruction error ||U - u u^H||_F / ||U||_F."""
    nrm = np.linalg.norm(U)
    if nrm == 0:
        return 0.0
    return float(np.linalg.norm(U - np.outer(u, u.conj())) / nrm)
