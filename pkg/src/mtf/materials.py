"""Constitutive laws and activation models for layered active films.

Stress routines work on in-plane covariant metric components and return
contravariant second Piola-Kirchhoff components together with their
consistent tangents (2 dS/dC).  The plane-stress incompressibility of the
Neo-Hookean substrate is condensed analytically: the thickness stretch
satisfies C_33 = J0^-2 with J0 the in-plane Jacobian determinant.

Two activation routes are provided: an imposed stretch-dependent law with
a pluggable time factor, and a potential-driven relaxation ODE paired
with a normalized two-variable excitable cell model.

Every function is pure and accepts either a single point (2x2 metrics)
or leading batch dimensions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PassiveLayerParams",
    "FiberAnisotropy",
    "ImposedActivationParams",
    "CoupledActivationParams",
    "AlievPanfilovParams",
    "InvalidStateError",
    "neo_hookean_stress",
    "anisotropic_stress",
    "active_stress_tensor",
    "imposed_activation",
    "activation_time_factor",
    "zeta_rate",
    "coupled_activation_rate",
    "aliev_panfilov_rhs",
    "NeoHookeanIncompressible",
    "StVenantKirchhoffPlaneStress",
]


class InvalidStateError(ValueError):
    """Deformation state outside the constitutive model's admissible range."""


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberAnisotropy:
    """Exponential fiber stiffening along a unit direction (cartesian)."""

    E_p: float           # kPa
    alpha: float         # dimensionless exponent
    f0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def __post_init__(self):
        f0 = np.asarray(self.f0, float)
        if self.E_p < 0:
            raise ValueError("E_p must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if abs(np.linalg.norm(f0) - 1.0) > 1e-10:
            raise ValueError("fiber direction must be a unit vector")
        object.__setattr__(self, "f0", f0)


@dataclass(frozen=True)
class PassiveLayerParams:
    """Passive response of one material layer."""

    mu: float                       # shear modulus, kPa
    rho: float                      # volumetric density, mg/mm^3
    thickness: float                # mm
    anisotropy: FiberAnisotropy | None = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")


@dataclass(frozen=True)
class ImposedActivationParams:
    """Stretch-gated active stress with a prescribed time law."""

    lambda_0: float = 1.24
    lambda_min: float = 0.86
    lambda_max: float = 1.34
    lambda_s: float = 1.14
    P_hat: float = 9.0              # kPa
    T_bar: float = 210.0            # ms, pulse time constant
    q_law: str = "constant"         # "constant" or "pulse"
    clamp_negative: bool = False    # floor sigma_a at zero instead of formula verbatim

    def __post_init__(self):
        if not self.lambda_min < self.lambda_0:
            raise ValueError("lambda_min must be below lambda_0")
        if not self.lambda_0 < self.lambda_max:
            raise ValueError("lambda_0 must be below lambda_max")
        if self.P_hat < 0:
            raise ValueError("P_hat must be nonnegative")
        if self.q_law not in ("constant", "pulse"):
            raise ValueError("q_law must be 'constant' or 'pulse'")


@dataclass(frozen=True)
class CoupledActivationParams:
    """Potential-driven active stress relaxation."""

    k_sigma: float = 0.122          # kPa/mV
    v_r: float = -80.0              # mV
    zeta_0: float = 0.1             # 1/ms (at rest)
    zeta_inf: float = 1.0           # 1/ms (depolarized)
    xi_v: float = 1.0               # 1/mV
    v_bar: float = 0.0              # mV

    def __post_init__(self):
        if self.zeta_0 <= 0 or self.zeta_inf <= 0:
            raise ValueError("zeta rates must be positive")


@dataclass(frozen=True)
class AlievPanfilovParams:
    """Normalized excitable cell model with physical rescaling.

    ``variant`` selects the reactive term: "standard" restores the full
    cubic with a repolarizing recovery coupling; "printed" keeps the
    defective quadratic form for auditability (no proper action potential).
    """

    k_v: float = 8.0
    a: float = 0.15
    b: float = 0.15
    mu_v1: float = 0.2
    mu_v2: float = 0.3
    e_0: float = 0.002
    r_v: float = 100.0              # mV
    s_v: float = -80.0              # mV
    r_t: float = 12.9               # ms
    D: float = 0.002                # conductivity (capacitance-normalized units)
    C_m: float = 1.0                # nF/mm^2
    v_0: float = -80.0              # mV
    w_0: float = 0.0
    sigma_a_0: float = 0.0          # kPa
    variant: str = "standard"

    def __post_init__(self):
        if self.r_v <= 0 or self.r_t <= 0 or self.C_m <= 0:
            raise ValueError("scaling constants must be positive")
        if self.variant not in ("standard", "printed"):
            raise ValueError("variant must be 'standard' or 'printed'")


# ---------------------------------------------------------------------------
# passive stresses
# ---------------------------------------------------------------------------

def _inv22(m):
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1]
    inv[..., 1, 1] = m[..., 0, 0]
    inv[..., 0, 1] = -m[..., 0, 1]
    inv[..., 1, 0] = -m[..., 1, 0]
    return inv / det[..., None, None], det


def _check_spd(m, name):
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if np.any(m[..., 0, 0] <= 0) or np.any(det <= 0):
        raise InvalidStateError(f"{name} metric is not symmetric positive definite")


def neo_hookean_stress(g_ref: np.ndarray, g_def: np.ndarray, mu: float):
    """Incompressible plane-stress Neo-Hookean stress and tangent.

    Parameters are the covariant reference and deformed in-plane metrics
    (2x2, possibly batched).  Returns contravariant stress components
    S^{ab} (..., 2, 2) and the condensed tangent 2 dS/dC (..., 2, 2, 2, 2).
    The implied thickness stretch squared is J0^-2.
    """
    g_ref = np.asarray(g_ref, float)
    g_def = np.asarray(g_def, float)
    _check_spd(g_ref, "reference")
    _check_spd(g_def, "deformed")
    ref_inv, ref_det = _inv22(g_ref)
    def_inv, def_det = _inv22(g_def)
    j0sq = def_det / ref_det
    S = mu * (ref_inv - def_inv / j0sq[..., None, None])
    gi = def_inv
    term = (np.einsum("...ab,...cd->...abcd", gi, gi) * 2.0
            + np.einsum("...ac,...bd->...abcd", gi, gi)
            + np.einsum("...ad,...bc->...abcd", gi, gi))
    C_t = (mu / j0sq)[..., None, None, None, None] * term
    return S, C_t


def anisotropic_stress(lambda_f, f_con, E_p: float, alpha: float):
    """Exponential fiber stress along contravariant components ``f_con``.

    ``lambda_f`` is the fiber stretch, ``f_con`` the (..., 2) contravariant
    fiber components in the reference basis.  Returns the rank-one stress
    and its tangent 2 dS/dC.
    """
    lam = np.asarray(lambda_f, float)
    if np.any(lam <= 0):
        raise InvalidStateError("fiber stretch must be positive")
    f_con = np.asarray(f_con, float)
    e = np.exp(alpha * (lam - 1.0))
    m = E_p / (alpha * lam) * (e - 1.0)
    dm = E_p / alpha * (alpha * e / lam - (e - 1.0) / lam**2)
    ff = np.einsum("...a,...b->...ab", f_con, f_con)
    ffff = np.einsum("...ab,...cd->...abcd", ff, ff)
    S = m[..., None, None] * ff
    C_t = (dm / lam)[..., None, None, None, None] * ffff
    return S, C_t


def active_stress_tensor(sigma_a, f_con, lambda_f, dsigma_dlambda=0.0):
    """Active stress S_a = sigma_a / lambda_f^2 f x f and its tangent.

    ``dsigma_dlambda`` carries the stretch sensitivity of the activation
    model (zero for potential-driven activation).
    """
    lam = np.asarray(lambda_f, float)
    if np.any(lam <= 0):
        raise InvalidStateError("fiber stretch must be positive")
    sig = np.asarray(sigma_a, float)
    dsig = np.asarray(dsigma_dlambda, float)
    f_con = np.asarray(f_con, float)
    ff = np.einsum("...a,...b->...ab", f_con, f_con)
    ffff = np.einsum("...ab,...cd->...abcd", ff, ff)
    S = (sig / lam**2)[..., None, None] * ff
    coef = dsig / lam**3 - 2.0 * sig / lam**4
    C_t = coef[..., None, None, None, None] * ffff
    return S, C_t


def fiber_contravariant(f0: np.ndarray, acon: np.ndarray, metric: np.ndarray,
                        warn_threshold: float = 0.99):
    """Project a cartesian fiber direction onto the reference surface basis.

    Returns the contravariant components f^a = f0 . a^a.  A warning is
    emitted when the in-plane part of the fiber has norm below
    ``warn_threshold`` (out-of-plane content is discarded by projection).
    """
    f_con = np.einsum("...ac,c->...a", acon, f0)
    inplane = np.sqrt(np.einsum("...a,...ab,...b->...", f_con, metric, f_con))
    if np.any(inplane < warn_threshold):
        warnings.warn(
            "fiber direction has significant out-of-plane component "
            f"(in-plane norm {float(np.min(inplane)):.3f}); it is discarded by projection",
            stacklevel=2)
    return f_con


# ---------------------------------------------------------------------------
# activation models
# ---------------------------------------------------------------------------

def activation_time_factor(t, params: ImposedActivationParams):
    """Time law q(t): unity, or the calibrated pulse (t/T)^2 exp[1-(t/T)^2]."""
    if params.q_law == "constant":
        return np.ones_like(np.asarray(t, float))
    x = np.asarray(t, float) / params.T_bar
    return x**2 * np.exp(1.0 - x**2)


def imposed_activation(lambda_f, t, params: ImposedActivationParams,
                       time_factor=None):
    """Stretch-gated active stress and its stretch derivative.

    Returns ``(sigma_a, dsigma_a/dlambda_f)``.  Outside the admissible
    stretch window the stress is exactly zero.  ``time_factor`` overrides
    q(t) (used by ramp continuation).
    """
    lam = np.asarray(lambda_f, float)
    q = params.P_hat * (activation_time_factor(t, params) if time_factor is None
                        else time_factor)
    den = (1.0 - params.lambda_0) ** 2
    z = lam + (params.lambda_s - 1.0) - params.lambda_0
    sig = q * (1.0 - z**2 / den)
    dsig = q * (-2.0 * z / den)
    inside = (lam >= params.lambda_min) & (lam <= params.lambda_max)
    sig = np.where(inside, sig, 0.0)
    dsig = np.where(inside, dsig, 0.0)
    if params.clamp_negative:
        dsig = np.where(sig > 0.0, dsig, 0.0)
        sig = np.maximum(sig, 0.0)
    return sig, dsig


def zeta_rate(v, params: CoupledActivationParams):
    """Double-exponential switch rate between rest and depolarized kinetics."""
    v = np.asarray(v, float)
    return params.zeta_0 + (params.zeta_inf - params.zeta_0) * np.exp(
        -np.exp(-params.xi_v * (v - params.v_bar)))


def coupled_activation_rate(sigma_a, v, params: CoupledActivationParams):
    """d sigma_a / dt of the potential-driven relaxation model (kPa/ms)."""
    return zeta_rate(v, params) * (params.k_sigma * (np.asarray(v, float) - params.v_r)
                                   - np.asarray(sigma_a, float))


# ---------------------------------------------------------------------------
# cell model
# ---------------------------------------------------------------------------

def aliev_panfilov_rhs(v, w, params: AlievPanfilovParams):
    """Ionic current and recovery rate in physical units.

    Returns ``(I_ion, dw_dt)`` with ``I_ion`` scaled back by r_v/r_t (the
    monodomain consumes it with a negative sign) and ``dw_dt`` in 1/ms.
    The rest state (v_0, w_0) is an exact equilibrium.
    """
    v = np.asarray(v, float)
    w = np.asarray(w, float)
    vs = (v - params.s_v) / params.r_v
    if params.variant == "standard":
        i_star = params.k_v * vs * (vs - params.a) * (vs - 1.0) + vs * w
    else:  # literal printed form, kept for auditability
        i_star = params.k_v * vs * (vs - params.a) - vs * w
    dw_star = (params.e_0 + params.mu_v1 * w / (params.mu_v2 + vs)) * (
        -w - params.k_v * vs * (vs - params.b - 1.0))
    return i_star * params.r_v / params.r_t, dw_star / params.r_t


# ---------------------------------------------------------------------------
# material-law objects used by the shell layer stack
# ---------------------------------------------------------------------------

class NeoHookeanIncompressible:
    """Incompressible plane-stress Neo-Hookean law (object wrapper)."""

    def __init__(self, mu: float):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.mu = mu

    def stress_and_tangent(self, g_ref, g_def):
        return neo_hookean_stress(g_ref, g_def, self.mu)

    def energy_density(self, g_ref, g_def):
        """Condensed strain-energy density (per reference volume)."""
        ref_inv, ref_det = _inv22(np.asarray(g_ref, float))
        _, def_det = _inv22(np.asarray(g_def, float))
        j0sq = def_det / ref_det
        tr = np.einsum("...ab,...ab->...", np.asarray(g_def, float), ref_inv)
        return 0.5 * self.mu * (tr + 1.0 / j0sq - 3.0)


class StVenantKirchhoffPlaneStress:
    """Linear-elastic (St. Venant-Kirchhoff) plane-stress law.

    Used by the structural verification benchmarks, which are calibrated
    with a Young modulus and Poisson ratio.
    """

    def __init__(self, E: float, nu: float):
        if E <= 0 or not -1.0 < nu < 0.5:
            raise ValueError("invalid elastic constants")
        self.E = E
        self.nu = nu
        self.lam_bar = E * nu / (1.0 - nu**2)
        self.mu = E / (2.0 * (1.0 + nu))

    def stress_and_tangent(self, g_ref, g_def):
        g_ref = np.asarray(g_ref, float)
        g_def = np.asarray(g_def, float)
        ref_inv, _ = _inv22(g_ref)
        E_cov = 0.5 * (g_def - g_ref)
        C_t = (self.lam_bar * np.einsum("...ab,...cd->...abcd", ref_inv, ref_inv)
               + self.mu * (np.einsum("...ac,...bd->...abcd", ref_inv, ref_inv)
                            + np.einsum("...ad,...bc->...abcd", ref_inv, ref_inv)))
        S = np.einsum("...abcd,...cd->...ab", C_t, E_cov)
        return S, C_t

    def energy_density(self, g_ref, g_def):
        g_ref = np.asarray(g_ref, float)
        E_cov = 0.5 * (np.asarray(g_def, float) - g_ref)
        S, _ = self.stress_and_tangent(g_ref, g_def)
        return 0.5 * np.einsum("...ab,...ab->...", S, E_cov)
