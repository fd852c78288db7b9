"""System-level configuration for the ISAC scenario and optimizer."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .errors import ConfigurationError


def dbm_to_watt(p_dbm: float) -> float:
    """dBm to linear power, normalized so that 0 dBm -> 1.0."""
    return 10.0 ** (p_dbm / 10.0)


def watt_to_dbm(p: float) -> float:
    return 10.0 * math.log10(p)


@dataclass(frozen=True)
class SystemConfig:
    """All scenario scalars.

    Powers are linear (0 dBm == 1.0). ``csi_error_radius`` is the absolute
    2-norm bound on the channel estimation error; the sweep in the
    experiments maps the uncertainty axis onto this radius directly.
    """

    n_tx: int = 4
    n_rx: int = 4
    n_users: int = 2
    n_targets: int = 2
    n_blocks: int = 180
    noise_power: float = 1.0
    p_max: float = dbm_to_watt(40.0)
    rate_common_min: float = 1.0      # I_c, bit/s/Hz
    rate_private_min: float = 1.0     # I_p, bit/s/Hz
    rate_user_min: float = 0.0        # per-user total-rate floor R0 (0 = off)
    scnr_gap_tol: float = 4.0         # rho0, linear SCNR gap between targets
    outer_tol: float = 1e-4           # rho1
    penalty_growth: float = 0.3       # rho2
    penalty_common: float = 1.0
    penalty_private: tuple[float, ...] = ()
    weight_sensing: float = 0.5       # lambda1
    weight_comm: float = 0.5          # lambda2
    rician_weight: float = 0.5        # omega
    csi_error_radius: float = 0.05
    mean_target_gain: float = 1.0     # p0 = E|p_k|^2
    carrier_hz: float = 28e9          # metadata only; model is normalized
    bandwidth_hz: float = 80e6        # metadata only
    element_spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if min(self.n_tx, self.n_rx, self.n_users, self.n_targets, self.n_blocks) < 1:
            raise ConfigurationError("all counts must be >= 1")
        for name in ("noise_power", "p_max", "outer_tol", "penalty_growth",
                     "mean_target_gain", "carrier_hz", "bandwidth_hz",
                     "element_spacing_wavelengths"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        for name in ("rate_common_min", "rate_private_min", "rate_user_min",
                     "scnr_gap_tol", "csi_error_radius", "penalty_common"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not self.penalty_private:
            object.__setattr__(
                self, "penalty_private", (self.penalty_common,) * self.n_users)
        if len(self.penalty_private) != self.n_users:
            raise ConfigurationError("penalty_private must have one entry per user")
        if any(x <= 0 for x in self.penalty_private):
            raise ConfigurationError("penalty factors must be > 0")
        if not (0.0 <= self.weight_sensing <= 1.0 and 0.0 <= self.weight_comm <= 1.0):
            raise ConfigurationError("weights must lie in [0, 1]")
        if abs(self.weight_sensing + self.weight_comm - 1.0) > 1e-12:
            raise ConfigurationError("weight_sensing + weight_comm must equal 1")
        if not (0.0 <= self.rician_weight <= 1.0):
            raise ConfigurationError("rician_weight must lie in [0, 1]")

    def replace(self, **kwargs) -> "SystemConfig":
        if "weight_sensing" in kwargs and "weight_comm" not in kwargs:
            kwargs["weight_comm"] = 1.0 - kwargs["weight_sensing"]
        if ("n_users" in kwargs and "penalty_private" not in kwargs
                and kwargs["n_users"] != self.n_users):
            kwargs["penalty_private"] = ()
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["penalty_private"] = list(self.penalty_private)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        if "penalty_private" in d:
            d["penalty_private"] = tuple(d["penalty_private"])
        return cls(**d)


def desk_profile(**overrides) -> SystemConfig:
    """Reduced-size profile for laptop-scale experiments and tests."""
    cfg = SystemConfig()
    return cfg.replace(**overrides) if overrides else cfg


def paper_profile(**overrides) -> SystemConfig:
    """Full-size simulation profile (Nt=Nr=8, M=4, K=2, T=180)."""
    cfg = SystemConfig(n_tx=8, n_rx=8, n_users=4, n_targets=2, n_blocks=180)
    return cfg.replace(**overrides) if overrides else cfg
