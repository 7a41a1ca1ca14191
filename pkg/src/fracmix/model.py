"""Constitutive pieces of the mixed phase-field fracture model.

The mixed form treats p = lambda * tr(E(u)) as an independent unknown, so the
material carries 1/lambda instead of lambda: the incompressible limit
nu = 0.5 is the ordinary value inv_lambda = 0 rather than a singular one.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "MaterialParams",
    "State",
    "degradation",
    "strain",
    "stress_mixed",
    "stress_primal",
    "lame_from_E_nu",
    "lame_from_mu_nu",
    "extrapolate_phase",
]


@dataclass(frozen=True)
class MaterialParams:
    """Material and regularization data.

    mu : shear modulus
    inv_lambda : reciprocal first Lame parameter (0 at nu = 0.5)
    gc : critical energy release rate
    kappa : degradation floor
    eps : phase-field regularization length
    rho : crack pressure (0 for unpressurized solids)
    E, nu : engineering constants kept for reference quantities
    """

    mu: float
    inv_lambda: float
    gc: float
    kappa: float
    eps: float
    rho: float = 0.0
    E: float = 0.0
    nu: float = 0.0

    def with_eps(self, eps: float) -> "MaterialParams":
        return replace(self, eps=eps)


def lame_from_E_nu(E: float, nu: float) -> tuple[float, float]:
    """(mu, inv_lambda) from Young's modulus and Poisson ratio."""
    if not 0.0 < nu <= 0.5:
        raise ValueError("Poisson ratio must lie in (0, 0.5]")
    if E <= 0.0:
        raise ValueError("Young's modulus must be positive")
    mu = E / (2.0 * (1.0 + nu))
    inv_lambda = (1.0 + nu) * (1.0 - 2.0 * nu) / (E * nu)
    return mu, inv_lambda


def lame_from_mu_nu(mu: float, nu: float) -> tuple[float, float]:
    """(mu, inv_lambda) holding the shear modulus fixed."""
    if not 0.0 < nu <= 0.5:
        raise ValueError("Poisson ratio must lie in (0, 0.5]")
    if mu <= 0.0:
        raise ValueError("shear modulus must be positive")
    return mu, (1.0 - 2.0 * nu) / (2.0 * mu * nu)


def degradation(phi, kappa: float):
    """g(phi) = (1 - kappa) phi^2 + kappa."""
    phi = np.asarray(phi, dtype=float)
    g = (1.0 - kappa) * phi * phi + kappa
    return float(g) if g.ndim == 0 else g


def strain(grad_u: np.ndarray) -> np.ndarray:
    """Symmetric gradient, acting on (..., 2, 2) displacement gradients."""
    return 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))


def stress_mixed(eps_u: np.ndarray, p, mu: float) -> np.ndarray:
    """sigma(u, p) = 2 mu E(u) + p I on (..., 2, 2) strains."""
    p = np.asarray(p, dtype=float)
    out = 2.0 * mu * eps_u.copy()
    out[..., 0, 0] += p
    out[..., 1, 1] += p
    return out


def stress_primal(eps_u: np.ndarray, mu: float, lam: float) -> np.ndarray:
    """Primal stress 2 mu E + lambda tr(E) I, used for cross-checks."""
    tr = eps_u[..., 0, 0] + eps_u[..., 1, 1]
    out = 2.0 * mu * eps_u.copy()
    out[..., 0, 0] += lam * tr
    out[..., 1, 1] += lam * tr
    return out


@dataclass
class State:
    """Nodal solution data for one loading step.

    ``phi_prev`` is the irreversibility obstacle of the current step (the
    accepted phase field of the previous step); ``phi_prev2`` feeds the
    linear-in-time extrapolation.
    """

    u: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    phi_prev: np.ndarray = field(default=None)  # type: ignore[assignment]
    phi_prev2: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.phi_prev is None:
            self.phi_prev = self.phi.copy()
        if self.phi_prev2 is None:
            self.phi_prev2 = self.phi_prev.copy()

    @classmethod
    def zero(cls, n_u: int, n_p: int, n_phi: int, phi0: np.ndarray | None = None) -> "State":
        phi = np.ones(n_phi) if phi0 is None else np.asarray(phi0, dtype=float).copy()
        return cls(np.zeros(n_u), np.zeros(n_p), phi)

    def copy(self) -> "State":
        return State(
            self.u.copy(), self.p.copy(), self.phi.copy(), self.phi_prev.copy(), self.phi_prev2.copy()
        )


def extrapolate_phase(phi_prev, phi_prev2, t, t_prev, t_prev2) -> np.ndarray:
    """Linear-in-time extrapolation of the phase field, clamped to [0, 1].

    With coincident history times (first step) this returns phi_prev.
    """
    phi_prev = np.asarray(phi_prev, dtype=float)
    phi_prev2 = np.asarray(phi_prev2, dtype=float)
    dt = t_prev - t_prev2
    if dt <= 0.0:
        return phi_prev.copy()
    theta = (t - t_prev2) / dt
    return np.clip(phi_prev2 + theta * (phi_prev - phi_prev2), 0.0, 1.0)
