"""Scalar machinery of the periodic-well multiclass model.

Every function accepts a float or an ndarray and works elementwise.
Class values are the integers; class boundaries sit at half-integers.
"""

from __future__ import annotations

import numpy as np


def frac(u):
    """Fractional part ``u - floor(u)``, always in ``[0, 1)``."""
    u = np.asarray(u, dtype=np.float64)
    f = u - np.floor(u)
    # -1e-17 - floor(-1e-17) rounds to exactly 1.0
    return np.where(f >= 1.0, 0.0, f)[()]


def well(u):
    """Periodic-well potential ``0.5 * {u}^2 ({u} - 1)^2``."""
    f = frac(u)
    return 0.5 * f * f * (f - 1.0) ** 2


def well_deriv(u):
    f = frac(u)
    return 2.0 * f**3 - 3.0 * f**2 + f


def rhat(u):
    """Distance from ``u`` to the nearest half-integer."""
    return np.abs(0.5 - frac(u))


def rhat_deriv(u):
    """Subderivative of :func:`rhat`; zero at integers and half-integers."""
    f = frac(u)
    d = np.sign(f - 0.5)
    return np.where(f == 0.0, 0.0, d)[()]


def label_of(u):
    """Nearest-integer label ``floor(u + 1/2)``, not clamped to the class range."""
    return np.floor(np.asarray(u, dtype=np.float64) + 0.5).astype(np.int64)[()]


def clamp_labels(labels, n_classes: int):
    return np.clip(labels, 0, n_classes - 1)


def rho_from_parts(rh_i, rh_j, same_label):
    """Generalized difference given precomputed ``rhat`` values and label equality."""
    return np.where(same_label, np.abs(rh_i - rh_j), rh_i + rh_j)[()]


def rho(u_i, u_j):
    """Label-order-symmetric difference between two states.

    Different labels: the two distances to the separating half-integers add.
    Same label: they subtract. ``rho(a, b) == 0`` does not imply ``a == b``.
    """
    return rho_from_parts(rhat(u_i), rhat(u_j), label_of(u_i) == label_of(u_j))
