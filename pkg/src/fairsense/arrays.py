"""Uniform linear array steering vectors and their angle derivatives."""

from __future__ import annotations

import numpy as np


def ula_steering(angle: float, n_elems: int, spacing: float = 0.5) -> np.ndarray:
    """Steering vector of an N-element ULA.

    Entry n (0-indexed) is exp(j*2*pi*spacing*n*sin(angle)), with spacing in
    wavelengths. Every entry has unit modulus.
    """
    n = np.arange(n_elems)
    return np.exp(2j * np.pi * spacing * n * np.sin(angle))


def ula_steering_derivative(angle: float, n_elems: int,
                            spacing: float = 0.5) -> np.ndarray:
    """Elementwise derivative of ``ula_steering`` with respect to the angle."""
    n = np.arange(n_elems)
    phase = 2.0 * np.pi * spacing * n
    return 1j * phase * np.cos(angle) * np.exp(1j * phase * np.sin(angle))


def steering_matrix(angles: np.ndarray, n_elems: int,
                    spacing: float = 0.5) -> np.ndarray:
    """Stack steering vectors column-wise: shape (n_elems, len(angles))."""
    angles = np.asarray(angles, dtype=float)
    return np.stack([ula_steering(a, n_elems, spacing) for a in angles], axis=1)


def steering_matrix_derivative(angles: np.ndarray, n_elems: int,
                               spacing: float = 0.5) -> np.ndarray:
    angles = np.asarray(angles, dtype=float)
    return np.stack(
        [ula_steering_derivative(a, n_elems, spacing) for a in angles], axis=1)
