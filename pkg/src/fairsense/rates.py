"""Closed-form communication metrics: covariance, SINRs, and rates.

Worst-case and best-case evaluations replace the unknown per-user Gram error
by its spectral-norm bound: for a signal term the Gram matrix becomes
``H_es - e_max*I`` (worst) or ``H_es + e_max*I`` (best); interference terms
use the opposite sign. Negative signal traces are clamped at zero before the
SINR, since an SINR is nonnegative by definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch
from .scenario import UserChannel


@dataclass
class BeamformerSet:
    """Common/private beamformers, lifted PSD forms, and the rate split.

    Either the vector or the lifted form may be primary: building from
    vectors lifts them as outer products; building from lifted matrices keeps
    the extracted vectors optional until rank-1 recovery.
    """

    u_common: np.ndarray | None
    u_private: list[np.ndarray] | None
    U_common: np.ndarray = None
    U_private: list[np.ndarray] = None
    rate_split: np.ndarray = None

    def __post_init__(self):
        if self.U_common is None and self.u_common is not None:
            self.U_common = np.outer(self.u_common, self.u_common.conj())
        if self.U_private is None and self.u_private is not None:
            self.U_private = [np.outer(u, u.conj()) for u in self.u_private]
        if self.U_common is None or self.U_private is None:
            raise DimensionMismatch("need either vector or lifted beamformers")
        n = self.U_common.shape[0]
        if any(U.shape != (n, n) for U in self.U_private):
            raise DimensionMismatch("inconsistent beamformer dimensions")
        if self.rate_split is None:
            self.rate_split = np.zeros(len(self.U_private))
        self.rate_split = np.asarray(self.rate_split, dtype=float)
        if len(self.rate_split) != len(self.U_private):
            raise DimensionMismatch("rate_split length must equal user count")

    @property
    def n_tx(self) -> int:
        return self.U_common.shape[0]

    @property
    def n_users(self) -> int:
        return len(self.U_private)


def transmit_covariance(bf: BeamformerSet) -> np.ndarray:
    """Transmit covariance R_x = U_c + sum_m U_m (Hermitian PSD)."""
    r = bf.U_common.copy()
    for U in bf.U_private:
        if U.shape != r.shape:
            raise DimensionMismatch("beamformer dimensions differ")
        r = r + U
    return 0.5 * (r + r.conj().T)


@dataclass
class RatesReport:
    sinr_common: np.ndarray
    sinr_private: np.ndarray
    rate_common: float
    rate_private: np.ndarray
    rate_sum: float
    worst_case: bool
    rate_common_per_user: np.ndarray = field(default=None)

    @property
    def min_user_rate(self) -> float:
        """min_m (r_c,m + R_m) requires the split; computed by callers."""
        return float(np.min(self.rate_private))

    def to_dict(self) -> dict:
        return {
            "sinr_common": list(map(float, self.sinr_common)),
            "sinr_private": list(map(float, self.sinr_private)),
            "rate_common": float(self.rate_common),
            "rate_private": list(map(float, self.rate_private)),
            "rate_sum": float(self.rate_sum),
            "worst_case": bool(self.worst_case),
        }


def _gram(channel: UserChannel, mode: str, role: str) -> np.ndarray:
    """Per-user Gram matrix for a signal or interference term."""
    n = len(channel.h_est)
    if mode == "nominal":
        h = channel.h_true if channel.h_true is not None else channel.h_est
        return np.outer(h, h.conj())
    h_es = channel.h_est
    base = np.outer(h_es, h_es.conj())
    e = channel.e_h_max
    sign = {"worst_case": {"signal": -1.0, "interference": +1.0},
            "best_case": {"signal": +1.0, "interference": -1.0}}[mode][role]
    return base + sign * e * np.eye(n)


def _trace_pos(G: np.ndarray, U: np.ndarray) -> float:
    return max(float(np.real(np.trace(G @ U))), 0.0)


def rsma_rates(channels: Sequence[UserChannel], bf: BeamformerSet,
               noise_power: float, mode: str = "nominal") -> RatesReport:
    """Per-user common/private SINRs and rates under RSMA decoding.

    ``mode`` is one of nominal / worst_case / best_case. The common rate is
    the minimum over users of log2(1 + gamma_c,m), the decodability
    requirement for a broadcast common stream.
    """
    if mode not in ("nominal", "worst_case", "best_case"):
        raise ValueError(f"unknown mode {mode!r}")
    if noise_power <= 0:
        raise ValueError("noise_power must be > 0")
    m_users = len(channels)
    if m_users != bf.n_users:
        raise DimensionMismatch("channel count does not match beamformers")
    if len(channels[0].h_est) != bf.n_tx:
        raise DimensionMismatch("channel length does not match beamformers")

    sinr_c = np.zeros(m_users)
    sinr_p = np.zeros(m_users)
    for m, ch in enumerate(channels):
        Gs = _gram(ch, mode, "signal")
        Gi = _gram(ch, mode, "interference")
        sig_c = _trace_pos(Gs, bf.U_common)
        int_c = sum(_trace_pos(Gi, U) for U in bf.U_private)
        sinr_c[m] = sig_c / (int_c + noise_power)
        sig_p = _trace_pos(Gs, bf.U_private[m])
        int_p = sum(_trace_pos(Gi, U)
                    for j, U in enumerate(bf.U_private) if j != m)
        sinr_p[m] = sig_p / (int_p + noise_power)

    rc_per_user = np.log2(1.0 + sinr_c)
    rate_c = float(np.min(rc_per_user))
    rate_p = np.log2(1.0 + sinr_p)
    return RatesReport(sinr_common=sinr_c, sinr_private=sinr_p,
                       rate_common=rate_c, rate_private=rate_p,
                       rate_sum=rate_c + float(np.sum(rate_p)),
                       worst_case=(mode == "worst_case"),
                       rate_common_per_user=rc_per_user)


def noma_rates(channels: Sequence[UserChannel], bf: BeamformerSet,
               noise_power: float, mode: str = "nominal") -> RatesReport:
    """Superposition rates with SIC ordered by estimated channel norm.

    Users are decoded weakest-channel first; at receiver i, streams already
    decoded are cancelled and later streams remain as interference. A
    stream's rate is the minimum over its own receiver (evaluated in the
    requested CSI mode) and every cancelling receiver, whose SIC
    decodability is checked at the estimated CSI.
    """
    order = noma_decoding_order(channels)
    m_users = len(channels)
    pos = {u: r for r, u in enumerate(order)}
    sinr_eff = np.zeros(m_users)
    for j in range(m_users):
        worst = np.inf
        for i in range(m_users):
            if pos[i] < pos[j]:
                continue  # receiver i cancels j only if i decodes at/after j
            if i == j:
                Gs = _gram(channels[i], mode, "signal")
                Gi = _gram(channels[i], mode, "interference")
            else:
                Gs = _gram(channels[i], mode, "signal")
                Gi = np.outer(channels[i].h_est, channels[i].h_est.conj())
            sig = _trace_pos(Gs, bf.U_private[j])
            intf = sum(_trace_pos(Gi, bf.U_private[l])
                       for l in range(m_users) if pos[l] > pos[j])
            worst = min(worst, sig / (intf + noise_power))
        sinr_eff[j] = worst
    rate_p = np.log2(1.0 + sinr_eff)
    return RatesReport(sinr_common=np.zeros(m_users), sinr_private=sinr_eff,
                       rate_common=0.0, rate_private=rate_p,
                       rate_sum=float(np.sum(rate_p)),
                       worst_case=(mode == "worst_case"),
                       rate_common_per_user=np.zeros(m_users))


def noma_decoding_order(channels: Sequence[UserChannel]) -> list[int]:
    """User indices sorted by ascending estimated channel norm."""
    norms = [float(np.linalg.norm(ch.h_est)) for ch in channels]
    return sorted(range(len(channels)), key=lambda m: (norms[m], m))


def oma_rates(channels: Sequence[UserChannel], bf: BeamformerSet,
              noise_power: float, mode: str = "nominal") -> RatesReport:
    """Orthogonal-slot rates: each user gets a 1/M time fraction."""
    m_users = len(channels)
    sinr = np.zeros(m_users)
    for m, ch in enumerate(channels):
        Gs = _gram(ch, mode, "signal")
        sinr[m] = _trace_pos(Gs, bf.U_private[m]) / noise_power
    rate_p = np.log2(1.0 + sinr) / m_users
    return RatesReport(sinr_common=np.zeros(m_users), sinr_private=sinr,
                       rate_common=0.0, rate_private=rate_p,
                       rate_sum=float(np.sum(rate_p)),
                       worst_case=(mode == "worst_case"),
                       rate_common_per_user=np.zeros(m_users))
