"""Scenario construction: channels, targets, and their serialization.

A ``Scenario`` bundles one realization of user channels (estimated CSI plus a
bounded-norm error draw) and target parameters (angles, complex gains,
steering matrices with angle derivatives). Construction is fully determined
by the configuration, the angle placement, and the RNG seed; instances are
immutable afterwards and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .arrays import steering_matrix, steering_matrix_derivative, ula_steering
from .config import SystemConfig
from .errors import DimensionMismatch, DuplicateTargetAngle


def sample_rician_channel(config: SystemConfig, los_angle: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Draw one user channel h = sqrt(w)*a(angle) + sqrt(1-w)*g.

    ``g`` has i.i.d. zero-mean unit-variance circular complex Gaussian
    entries, so the per-entry second moment is 1 at both weight endpoints.
    """
    w = config.rician_weight
    los = ula_steering(los_angle, config.n_tx, config.element_spacing_wavelengths)
    nlos = (rng.standard_normal(config.n_tx)
            + 1j * rng.standard_normal(config.n_tx)) / np.sqrt(2.0)
    return np.sqrt(w) * los + np.sqrt(1.0 - w) * nlos


def sample_csi_error(radius: float, n_elems: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Error vector uniform in direction, with norm uniform on [0, radius]."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    direction = (rng.standard_normal(n_elems)
                 + 1j * rng.standard_normal(n_elems))
    nrm = np.linalg.norm(direction)
    if nrm == 0.0:
        direction = np.ones(n_elems, dtype=complex)
        nrm = np.linalg.norm(direction)
    target = rng.uniform(0.0, radius)
    out = direction * (target / nrm)
    # clamp: the returned norm may never exceed the radius
    out_norm = np.linalg.norm(out)
    if out_norm > radius > 0.0:
        out *= radius / out_norm
    return out


@dataclass(frozen=True)
class UserChannel:
    """Estimated CSI, error-ball radius, and one realized true channel."""

    h_est: np.ndarray
    error_radius: float
    h_true: np.ndarray | None = None

    def __post_init__(self):
        _freeze(self.h_est)
        if self.h_true is not None:
            _freeze(self.h_true)
            if self.h_true.shape != self.h_est.shape:
                raise DimensionMismatch("h_true and h_est shapes differ")

    @property
    def e_h_max(self) -> float:
        """Spectral-norm bound on the Gram error matrix: e^2 + 2*e*||h_es||."""
        e = self.error_radius
        return e * e + 2.0 * e * float(np.linalg.norm(self.h_est))


@dataclass(frozen=True)
class TargetSet:
    """Target angles, complex coefficients, power weights, and steering."""

    angles: np.ndarray
    coeffs: np.ndarray
    power_weights: np.ndarray
    steering_tx: np.ndarray
    steering_rx: np.ndarray
    steering_tx_deriv: np.ndarray
    steering_rx_deriv: np.ndarray

    def __post_init__(self):
        for name in ("angles", "coeffs", "power_weights", "steering_tx",
                     "steering_rx", "steering_tx_deriv", "steering_rx_deriv"):
            _freeze(getattr(self, name))
        k = len(self.angles)
        if not (len(self.coeffs) == len(self.power_weights)
                == self.steering_tx.shape[1] == self.steering_rx.shape[1]
                == self.steering_tx_deriv.shape[1]
                == self.steering_rx_deriv.shape[1] == k):
            raise DimensionMismatch("inconsistent target-set shapes")

    @property
    def n_targets(self) -> int:
        return len(self.angles)

    def with_power_weights(self, weights: np.ndarray) -> "TargetSet":
        return TargetSet(self.angles, self.coeffs,
                         np.asarray(weights, dtype=float),
                         self.steering_tx, self.steering_rx,
                         self.steering_tx_deriv, self.steering_rx_deriv)


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    users: tuple[UserChannel, ...]
    targets: TargetSet
    rng_seed: int
    user_angles: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.users) != self.config.n_users:
            raise DimensionMismatch("user count does not match config")
        if self.targets.n_targets != self.config.n_targets:
            raise DimensionMismatch("target count does not match config")
        if self.user_angles is not None:
            _freeze(self.user_angles)

    @property
    def channel_matrix_est(self) -> np.ndarray:
        """Estimated channels stacked column-wise, shape (n_tx, n_users)."""
        return np.stack([u.h_est for u in self.users], axis=1)


def _freeze(arr: np.ndarray):
    if isinstance(arr, np.ndarray):
        arr.setflags(write=False)


def default_user_angles(n_users: int, target_angles: np.ndarray,
                        span_deg: float = 60.0,
                        min_sep_deg: float = 5.0) -> np.ndarray:
    """Place users evenly in [-span, span] keeping clear of target angles."""
    cand = np.deg2rad(np.linspace(-span_deg, span_deg, n_users + 2)[1:-1])
    sep = np.deg2rad(min_sep_deg)
    out = []
    for a in cand:
        step = np.deg2rad(1.0)
        guard = 0
        while any(abs(a - t) < sep for t in target_angles) and guard < 360:
            a += step
            guard += 1
        out.append(a)
    return np.array(out)


def build_scenario(config: SystemConfig,
                   user_angles: np.ndarray | None = None,
                   target_angles: np.ndarray | None = None,
                   rng: np.random.Generator | int | None = None) -> Scenario:
    """Sample a full scenario realization, deterministic for a fixed seed."""
    if isinstance(rng, (int, np.integer)) or rng is None:
        seed = 0 if rng is None else int(rng)
        rng = np.random.default_rng(seed)
    else:
        seed = -1  # external generator; seed not tracked
    if target_angles is None:
        target_angles = np.deg2rad(np.linspace(-40.0, 30.0, config.n_targets))
    target_angles = np.asarray(target_angles, dtype=float)
    if len(target_angles) != config.n_targets:
        raise DimensionMismatch("target_angles length does not match config")
    for i in range(len(target_angles)):
        for j in range(i + 1, len(target_angles)):
            if abs(target_angles[i] - target_angles[j]) < 1e-9:
                raise DuplicateTargetAngle(
                    f"targets {i} and {j} coincide at {target_angles[i]} rad")
    if user_angles is None:
        user_angles = default_user_angles(config.n_users, target_angles)
    user_angles = np.asarray(user_angles, dtype=float)
    if len(user_angles) != config.n_users:
        raise DimensionMismatch("user_angles length does not match config")

    d = config.element_spacing_wavelengths
    users = []
    for m in range(config.n_users):
        h_est = sample_rician_channel(config, user_angles[m], rng)
        h_err = sample_csi_error(config.csi_error_radius, config.n_tx, rng)
        users.append(UserChannel(h_est=h_est,
                                 error_radius=config.csi_error_radius,
                                 h_true=h_est + h_err))

    # complex gains with E|p_k|^2 = p0, held fixed for the scenario
    p = np.sqrt(config.mean_target_gain / 2.0) * (
        rng.standard_normal(config.n_targets)
        + 1j * rng.standard_normal(config.n_targets))
    targets = TargetSet(
        angles=target_angles,
        coeffs=p,
        power_weights=np.full(config.n_targets, 1.0 / config.n_targets),
        steering_tx=steering_matrix(target_angles, config.n_tx, d),
        steering_rx=steering_matrix(target_angles, config.n_rx, d),
        steering_tx_deriv=steering_matrix_derivative(target_angles, config.n_tx, d),
        steering_rx_deriv=steering_matrix_derivative(target_angles, config.n_rx, d),
    )
    return Scenario(config=config, users=tuple(users), targets=targets,
                    rng_seed=seed, user_angles=user_angles)


# ---------------------------------------------------------------------------
# serialization (complex numbers as [re, im] pairs)

def _c2j(arr: np.ndarray):
    a = np.asarray(arr)
    if np.iscomplexobj(a):
        return [[float(x.real), float(x.imag)] for x in a.ravel(order="F")], list(a.shape)
    return [float(x) for x in a.ravel(order="F")], list(a.shape)


def _j2c(data, shape, is_complex):
    if is_complex:
        flat = np.array([complex(re, im) for re, im in data])
    else:
        flat = np.array(data, dtype=float)
    return flat.reshape(shape, order="F")


def scenario_to_json(s: Scenario) -> str:
    def arr(a):
        vals, shape = _c2j(a)
        return {"values": vals, "shape": shape,
                "complex": bool(np.iscomplexobj(np.asarray(a)))}

    doc = {
        "config": s.config.to_dict(),
        "rng_seed": s.rng_seed,
        "user_angles": arr(s.user_angles),
        "users": [
            {"h_est": arr(u.h_est), "error_radius": u.error_radius,
             "h_true": arr(u.h_true) if u.h_true is not None else None,
             "e_h_max": u.e_h_max}
            for u in s.users
        ],
        "targets": {
            "angles": arr(s.targets.angles),
            "coeffs": arr(s.targets.coeffs),
            "power_weights": arr(s.targets.power_weights),
            "steering_tx": arr(s.targets.steering_tx),
            "steering_rx": arr(s.targets.steering_rx),
            "steering_tx_deriv": arr(s.targets.steering_tx_deriv),
            "steering_rx_deriv": arr(s.targets.steering_rx_deriv),
        },
    }
    return json.dumps(doc, sort_keys=True)


def scenario_from_json(text: str) -> Scenario:
    doc = json.loads(text)

    def arr(d):
        return _j2c(d["values"], d["shape"], d["complex"])

    cfg = SystemConfig.from_dict(doc["config"])
    users = tuple(
        UserChannel(h_est=arr(u["h_est"]), error_radius=u["error_radius"],
                    h_true=arr(u["h_true"]) if u["h_true"] is not None else None)
        for u in doc["users"])
    t = doc["targets"]
    targets = TargetSet(
        angles=arr(t["angles"]), coeffs=arr(t["coeffs"]),
        power_weights=arr(t["power_weights"]),
        steering_tx=arr(t["steering_tx"]), steering_rx=arr(t["steering_rx"]),
        steering_tx_deriv=arr(t["steering_tx_deriv"]),
        steering_rx_deriv=arr(t["steering_rx_deriv"]))
    return Scenario(config=cfg, users=users, targets=targets,
                    rng_seed=doc["rng_seed"], user_angles=arr(doc["user_angles"]))
