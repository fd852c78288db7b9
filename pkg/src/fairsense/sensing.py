"""Sensing metrics: echo SCNR, Fisher information, CRB, and beampatterns.

The Fisher information is for the 3K-dimensional parameter vector
b = [angles, Re(gains), Im(gains)] of the noisy echo whose mean is
vec(Q_r P Q_t^H X). Sensing power weights enter by scaling target k's
transmit steering column (and its derivative) by sqrt(o_k), matching the
amplitude model of the per-target echo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularFim
from .arrays import steering_matrix
from .scenario import TargetSet


def echo_scnr(targets: TargetSet, noise_power: float,
              mean_gain: float) -> np.ndarray:
    """Per-target echo SCNR: gamma_k = o_k * p0 * Tr[q_r q_t^H q_t q_r^H]/sigma^2.

    For unit-modulus steering the trace equals N_t*N_r, so the per-unit-weight
    SCNR is identical across targets; angle dependence enters the CRB through
    the FIM geometry instead.
    """
    if noise_power <= 0:
        raise ValueError("noise_power must be > 0")
    return targets.power_weights * unit_scnr(targets, noise_power, mean_gain)


def unit_scnr(targets: TargetSet, noise_power: float,
              mean_gain: float) -> np.ndarray:
    """SCNR per unit power weight (gamma_{o,k})."""
    qt2 = np.sum(np.abs(targets.steering_tx) ** 2, axis=0)
    qr2 = np.sum(np.abs(targets.steering_rx) ** 2, axis=0)
    return mean_gain * qt2 * qr2 / noise_power


@dataclass
class FimBundle:
    f11: np.ndarray
    f12: np.ndarray
    f22: np.ndarray
    fim: np.ndarray
    noise_power: float
    n_blocks: int
    mean_vector_dim: int

    @property
    def n_targets(self) -> int:
        return self.f22.shape[0]


def fim_complex_blocks(targets: TargetSet, r_x: np.ndarray,
                       n_blocks: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Complex Hadamard-form FIM blocks (F11, F12, F22) before 2/sigma^2."""
    k = targets.n_targets
    if r_x.shape != (targets.steering_tx.shape[0],) * 2:
        raise DimensionMismatch("r_x does not match the transmit array size")
    s = np.sqrt(np.clip(targets.power_weights, 0.0, None))
    qt = targets.steering_tx * s[None, :]
    qdt = targets.steering_tx_deriv * s[None, :]
    qr = targets.steering_rx
    qdr = targets.steering_rx_deriv
    p = targets.coeffs

    a_rr = qr.conj().T @ qr
    a_rdr = qr.conj().T @ qdr
    a_drr = qdr.conj().T @ qr
    a_drdr = qdr.conj().T @ qdr
    # C*[k,l] contracts target l's (possibly dotted) column with target k's
    # through R_x; the transposes realize the (l, k) index order.
    c1 = (qt.conj().T @ r_x @ qt).T
    c2 = (qdt.conj().T @ r_x @ qt).T
    c3 = (qt.conj().T @ r_x @ qdt).T
    c4 = (qdt.conj().T @ r_x @ qdt).T

    pc = p.conj()[:, None]
    pr = p[None, :]
    t = float(n_blocks)
    f11 = t * pc * (a_drdr * c1 + a_drr * c2 + a_rdr * c3 + a_rr * c4) * pr
    f12 = t * pc * (a_drr * c1 + a_rr * c3)
    f22 = t * (a_rr * c1)
    return f11, f12, f22


def assemble_real_fim(f11: np.ndarray, f12: np.ndarray, f22: np.ndarray,
                      noise_power: float) -> np.ndarray:
    """Real 3Kx3K FIM with the 2/sigma^2 scaling and the block layout
    [[Re F11, Re F12, -Im F12], [., Re F22, -Im F22], [., ., Re F22]]."""
    scale = 2.0 / noise_power
    top = np.block([[f11.real, f12.real, -f12.imag],
                    [f12.real.T, f22.real, -f22.imag],
                    [-f12.imag.T, -f22.imag.T, f22.real]])
    fim = scale * top
    return 0.5 * (fim + fim.T)


def fim_blocks(targets: TargetSet, r_x: np.ndarray, n_blocks: int,
               noise_power: float = 1.0) -> FimBundle:
    """Analytic FIM of the vectorized echo mean for covariance ``r_x``."""
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    f11, f12, f22 = fim_complex_blocks(targets, r_x, n_blocks)
    fim = assemble_real_fim(f11, f12, f22, noise_power)
    return FimBundle(f11=f11, f12=f12, f22=f22, fim=fim,
                     noise_power=noise_power, n_blocks=n_blocks,
                     mean_vector_dim=n_blocks * targets.steering_rx.shape[0])


PARAMETER_ORDER = ("angle", "coeff_re", "coeff_im")


@dataclass
class CrbReport:
    crb_matrix: np.ndarray
    crb_angle: np.ndarray
    crb_coeff_re: np.ndarray
    crb_coeff_im: np.ndarray
    trace: float
    parameter_order: tuple[str, ...] = PARAMETER_ORDER

    def to_dict(self) -> dict:
        return {
            "crb_angle": list(map(float, self.crb_angle)),
            "crb_coeff_re": list(map(float, self.crb_coeff_re)),
            "crb_coeff_im": list(map(float, self.crb_coeff_im)),
            "trace": float(self.trace),
            "parameter_order": list(self.parameter_order),
        }


def crb_from_fim(fim: FimBundle, cond_limit: float = 1e12) -> CrbReport:
    """Invert the FIM; raises SingularFim when ill-conditioned."""
    f = fim.fim
    eigvals = np.linalg.eigvalsh(f)
    smallest = float(eigvals[0])
    largest = float(eigvals[-1])
    if smallest <= 0.0 or largest / max(smallest, 1e-300) > cond_limit:
        raise SingularFim(
            f"FIM is singular or ill-conditioned (lambda_min={smallest:.3e})",
            smallest_eigenvalue=smallest)
    c = np.linalg.inv(f)
    c = 0.5 * (c + c.T)
    k = fim.n_targets
    d = np.diag(c)
    return CrbReport(crb_matrix=c, crb_angle=d[:k].copy(),
                     crb_coeff_re=d[k:2 * k].copy(),
                     crb_coeff_im=d[2 * k:].copy(), trace=float(np.sum(d)))


def beampattern(r_x: np.ndarray, angle_grid: np.ndarray, n_elems: int,
                spacing: float = 0.5) -> np.ndarray:
    """Transmit gain a(theta)^H R_x a(theta) on a grid (linear units).

    The CSV emitter reports 10*log10(gain/max) when a dB pattern is wanted.
    """
    a = steering_matrix(angle_grid, n_elems, spacing)  # (n_elems, G)
    g = np.real(np.einsum("ig,ij,jg->g", a.conj(), r_x, a))
    return np.clip(g, 0.0, None)
