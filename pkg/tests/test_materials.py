"""Constitutive and activation model tests.

Tangents are checked against central finite differences of the stresses;
the plane-stress Neo-Hookean is cross-checked against a generic 3D
incompressible law with the transverse-stress condition enforced
numerically.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mtf.materials import (
    AlievPanfilovParams,
    CoupledActivationParams,
    FiberAnisotropy,
    ImposedActivationParams,
    InvalidStateError,
    NeoHookeanIncompressible,
    StVenantKirchhoffPlaneStress,
    active_stress_tensor,
    activation_time_factor,
    aliev_panfilov_rhs,
    anisotropic_stress,
    coupled_activation_rate,
    fiber_contravariant,
    imposed_activation,
    neo_hookean_stress,
    zeta_rate,
)


def random_spd(rng, lo=0.5, hi=2.0):
    """Random symmetric positive definite 2x2 with eigenvalues in [lo, hi]."""
    q = np.linalg.qr(rng.normal(size=(2, 2)))[0]
    return q @ np.diag(rng.uniform(lo, hi, 2)) @ q.T


def fd_tangent(stress_fn, C, h=1e-7):
    """Central-difference 2 dS/dC, symmetrized perturbation of C_{cd}."""
    out = np.zeros((2, 2, 2, 2))
    for c in range(2):
        for d in range(2):
            dC = np.zeros((2, 2))
            dC[c, d] += 0.5 * h
            dC[d, c] += 0.5 * h
            Sp = stress_fn(C + dC)
            Sm = stress_fn(C - dC)
            out[:, :, c, d] = 2.0 * (Sp - Sm) / (2.0 * h)
    return out


def rel_err(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / scale


# ---------------------------------------------------------------------------
# Neo-Hookean plane stress
# ---------------------------------------------------------------------------

class TestNeoHookean:
    def test_zero_at_reference(self):
        rng = np.random.default_rng(0)
        g = random_spd(rng)
        S, _ = neo_hookean_stress(g, g, mu=500.0)
        assert_allclose(S, 0.0, atol=1e-10)

    def test_equibiaxial_vs_3d_oracle(self):
        """Full 3D incompressible Neo-Hookean with numeric plane stress.

        3D law: S = mu I - p C^-1 with J = 1 enforced through C33 and
        S33 = 0 fixing the pressure.
        """
        mu = 0.767
        lam = 1.17
        g_ref = np.eye(2)
        g_def = lam**2 * np.eye(2)

        C33 = 1.0 / lam**4            # incompressibility: det C = 1
        C3 = np.diag([lam**2, lam**2, C33])
        C3_inv = np.linalg.inv(C3)
        p = mu * C33                  # from S33 = mu - p / C33 = 0
        S3 = mu * np.eye(3) - p * C3_inv

        S, _ = neo_hookean_stress(g_ref, g_def, mu)
        assert_allclose(S, S3[:2, :2], rtol=1e-12)
        # thickness stretch implied by the plane-stress condensation
        j0sq = lam**4
        assert_allclose(C33, 1.0 / j0sq, rtol=1e-14)

    def test_random_state_vs_3d_oracle(self):
        rng = np.random.default_rng(4)
        mu = 3.1
        g_ref = random_spd(rng)
        g_def = random_spd(rng)
        # cartesianize: work in the reference dual basis, where the 3D law
        # reads S^{ab} = mu g_ref^{ab} - p (C^-1)^{ab} with C mixed metric
        ref_inv = np.linalg.inv(g_ref)
        C33 = np.linalg.det(g_ref) / np.linalg.det(g_def)
        Cinv_plane = np.linalg.inv(g_def)
        p = mu * C33
        S_oracle = mu * ref_inv - p * Cinv_plane
        S, _ = neo_hookean_stress(g_ref, g_def, mu)
        assert_allclose(S, S_oracle, rtol=1e-12)

    def test_tangent_fd(self):
        rng = np.random.default_rng(8)
        mu = 500.0
        worst = 0.0
        for _ in range(20):
            g_ref = random_spd(rng)
            g_def = random_spd(rng)
            S, C_t = neo_hookean_stress(g_ref, g_def, mu)
            fd = fd_tangent(lambda C: neo_hookean_stress(g_ref, C, mu)[0], g_def)
            worst = max(worst, rel_err(C_t, fd))
        assert worst < 1e-4

    def test_non_spd_rejected(self):
        with pytest.raises(InvalidStateError):
            neo_hookean_stress(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0)

    def test_energy_consistency(self):
        # S = 2 dpsi/dC by finite differences of the condensed energy
        rng = np.random.default_rng(12)
        mat = NeoHookeanIncompressible(2.0)
        g_ref = random_spd(rng)
        g_def = random_spd(rng)
        S, _ = mat.stress_and_tangent(g_ref, g_def)
        h = 1e-7
        for a in range(2):
            for b in range(2):
                dC = np.zeros((2, 2))
                dC[a, b] += 0.5 * h
                dC[b, a] += 0.5 * h
                ep = mat.energy_density(g_ref, g_def + dC)
                em = mat.energy_density(g_ref, g_def - dC)
                assert_allclose(2.0 * (ep - em) / (2 * h), S[a, b], rtol=2e-6, atol=1e-8)


class TestAnisotropic:
    def test_zero_at_unit_stretch(self):
        S, C_t = anisotropic_stress(1.0, np.array([1.0, 0.0]), 21.0, 5.5)
        assert_allclose(S, 0.0, atol=1e-14)

    def test_scalar_factor(self):
        # direct evaluation of the closed form at lambda_f = 1.1
        lam, E_p, alpha = 1.1, 21.0, 5.5
        S, _ = anisotropic_stress(lam, np.array([1.0, 0.0]), E_p, alpha)
        expected = (E_p / (alpha * lam)) * (np.exp(alpha * (lam - 1.0)) - 1.0)
        assert_allclose(S[0, 0], expected, rtol=1e-14)
        assert_allclose(S[1, 1], 0.0, atol=1e-14)

    def test_rank_one(self):
        f = np.array([0.6, 0.8])
        S, _ = anisotropic_stress(1.2, f, 21.0, 5.5)
        assert_allclose(np.linalg.det(S), 0.0, atol=1e-12)

    def test_tangent_fd(self):
        rng = np.random.default_rng(21)
        E_p, alpha = 21.0, 5.5
        f0 = np.array([1.0, 0.4]) / np.linalg.norm([1.0, 0.4])
        worst = 0.0
        for _ in range(20):
            C = random_spd(rng)

            def stress_of_C(Cm):
                lam = np.sqrt(f0 @ Cm @ f0)
                return anisotropic_stress(lam, f0, E_p, alpha)[0]

            lam = np.sqrt(f0 @ C @ f0)
            _, C_t = anisotropic_stress(lam, f0, E_p, alpha)
            fd = fd_tangent(stress_of_C, C)
            worst = max(worst, rel_err(C_t, fd))
        assert worst < 1e-4

    def test_invalid_stretch(self):
        with pytest.raises(InvalidStateError):
            anisotropic_stress(0.0, np.array([1.0, 0.0]), 21.0, 5.5)


class TestActiveStress:
    def test_zero_activation(self):
        S, C_t = active_stress_tensor(0.0, np.array([1.0, 0.0]), 1.0)
        assert_allclose(S, 0.0, atol=1e-15)
        assert_allclose(C_t, 0.0, atol=1e-15)

    def test_direct_value(self):
        S, _ = active_stress_tensor(9.0, np.array([1.0, 0.0]), 1.0)
        assert_allclose(S[0, 0], 9.0)
        assert_allclose(S[0, 1], 0.0)
        assert_allclose(S[1, 1], 0.0)

    def test_tangent_fd_with_imposed_model(self):
        # sigma_a(lambda_f) in the loop: the chain term and the activation
        # slope must both appear in the tangent
        params = ImposedActivationParams(P_hat=9.0)
        f0 = np.array([1.0, 0.0])
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(20):
            C = random_spd(rng, 0.8, 1.6)

            def stress_of_C(Cm):
                lam = np.sqrt(f0 @ Cm @ f0)
                sig, dsig = imposed_activation(lam, 0.0, params)
                return active_stress_tensor(sig, f0, lam, dsig)[0]

            lam = np.sqrt(f0 @ C @ f0)
            if not params.lambda_min + 0.02 < lam < params.lambda_max - 0.02:
                continue
            sig, dsig = imposed_activation(lam, 0.0, params)
            _, C_t = active_stress_tensor(sig, f0, lam, dsig)
            # total tangent includes d sigma/d lambda via the active model
            fd = fd_tangent(stress_of_C, C)
            worst = max(worst, rel_err(C_t, fd))
        assert worst < 1e-4


class TestFiberProjection:
    def test_in_plane(self):
        acon = np.eye(2, 3)
        f = fiber_contravariant(np.array([1.0, 0.0, 0.0]), acon, np.eye(2))
        assert_allclose(f, [1.0, 0.0])

    def test_out_of_plane_warns(self):
        acon = np.eye(2, 3)
        with pytest.warns(UserWarning):
            fiber_contravariant(np.array([0.0, 0.1, np.sqrt(1 - 0.01)]), acon, np.eye(2))


# ---------------------------------------------------------------------------
# activation models
# ---------------------------------------------------------------------------

class TestImposedActivation:
    def test_outside_window(self):
        params = ImposedActivationParams(P_hat=9.0)
        sig, dsig = imposed_activation(0.80, 0.0, params)
        assert sig == 0.0 and dsig == 0.0

    def test_optimal_stretch(self):
        # bracket vanishes at lambda_f = 1.10 with the default constants
        params = ImposedActivationParams(P_hat=9.0)
        sig, _ = imposed_activation(1.10, 0.0, params)
        assert_allclose(sig, 9.0, rtol=1e-14)

    def test_pulse_law(self):
        params = ImposedActivationParams(q_law="pulse", T_bar=210.0)
        assert_allclose(activation_time_factor(210.0, params), 1.0, rtol=1e-14)
        assert_allclose(activation_time_factor(0.0, params), 0.0, atol=1e-15)

    def test_negative_values_per_formula(self):
        # with a pre-stretch larger than the calibrated one the quadratic
        # exceeds unity inside the window; the verbatim formula goes
        # negative while the clamped variant floors at zero
        params = ImposedActivationParams(P_hat=9.0, lambda_s=1.30)
        sig, _ = imposed_activation(1.32, 0.0, params)
        assert sig < 0.0
        clamped = ImposedActivationParams(P_hat=9.0, lambda_s=1.30, clamp_negative=True)
        sig_c, dsig_c = imposed_activation(1.32, 0.0, clamped)
        assert sig_c == 0.0 and dsig_c == 0.0

    def test_window_edge_continuity_recorded(self):
        # with the calibrated constants the quadratic vanishes exactly at
        # both window edges, so the formula happens to be C^0 there; the
        # jump is recorded (zero here, nonzero for other pre-stretches)
        params = ImposedActivationParams(P_hat=9.0)
        just_in, _ = imposed_activation(params.lambda_min + 1e-12, 0.0, params)
        assert abs(just_in) < 1e-9
        shifted = ImposedActivationParams(P_hat=9.0, lambda_s=1.0)
        just_in, _ = imposed_activation(shifted.lambda_min + 1e-12, 0.0, shifted)
        assert abs(just_in) > 0.1  # genuine discontinuity, formula verbatim


class TestCoupledActivation:
    def test_rest_equilibrium(self):
        params = CoupledActivationParams()
        assert coupled_activation_rate(0.0, -80.0, params) == 0.0

    def test_zeta_limits(self):
        params = CoupledActivationParams()
        assert_allclose(zeta_rate(-500.0, params), params.zeta_0, atol=1e-12)
        assert_allclose(zeta_rate(500.0, params), params.zeta_inf, rtol=1e-12)

    def test_zeta_midpoint(self):
        params = CoupledActivationParams()
        expected = 0.1 + 0.9 * np.exp(-1.0)
        assert_allclose(zeta_rate(0.0, params), expected, rtol=1e-12)
        assert_allclose(expected, 0.43109, atol=5e-6)

    def test_step_relaxation_closed_form(self):
        # for constant v the ODE is linear: sigma(t) relaxes exponentially
        # to k_sigma (v - v_r) with the exact rate zeta(v)
        params = CoupledActivationParams()
        v = -20.0
        zeta = float(zeta_rate(v, params))
        target = params.k_sigma * (v - params.v_r)
        dt, n = 0.01, 2000
        sig = 0.0
        for _ in range(n):  # RK4
            k1 = coupled_activation_rate(sig, v, params)
            k2 = coupled_activation_rate(sig + dt / 2 * k1, v, params)
            k3 = coupled_activation_rate(sig + dt / 2 * k2, v, params)
            k4 = coupled_activation_rate(sig + dt * k3, v, params)
            sig += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = dt * n
        exact = target * (1.0 - np.exp(-zeta * t))
        assert_allclose(sig, exact, atol=1e-8)


class TestAlievPanfilov:
    def test_rest_equilibrium(self):
        params = AlievPanfilovParams()
        i_ion, dw = aliev_panfilov_rhs(-80.0, 0.0, params)
        assert i_ion == 0.0 and dw == 0.0

    def test_cubic_root_at_a(self):
        params = AlievPanfilovParams()
        v = params.s_v + params.a * params.r_v  # v* = a
        i_ion, _ = aliev_panfilov_rhs(v, 0.0, params)
        assert_allclose(i_ion, 0.0, atol=1e-12)

    def test_independent_expression(self):
        params = AlievPanfilovParams()
        vs, w = 0.5, 0.1
        v = params.s_v + vs * params.r_v
        i_ion, dw = aliev_panfilov_rhs(v, w, params)
        # independently coded expressions
        i_star = 8.0 * vs * (vs - 0.15) * (vs - 1.0) + vs * w
        dw_star = (0.002 + 0.2 * w / (0.3 + vs)) * (-w - 8.0 * vs * (vs - 0.15 - 1.0))
        assert_allclose(i_ion, i_star * 100.0 / 12.9, rtol=1e-14)
        assert_allclose(dw, dw_star / 12.9, rtol=1e-14)

    def test_printed_variant_differs(self):
        std = AlievPanfilovParams()
        lit = AlievPanfilovParams(variant="printed")
        v = -40.0
        assert aliev_panfilov_rhs(v, 0.2, std)[0] != aliev_panfilov_rhs(v, 0.2, lit)[0]

    def test_single_cell_action_potential(self):
        """One stimulus produces one action potential returning to rest."""
        params = AlievPanfilovParams()
        act = CoupledActivationParams()
        h = 0.05
        state = np.array([params.v_0, params.w_0, params.sigma_a_0])

        def rhs(s, t):
            v, w, sig = s
            i_app = 30.0 if 50.0 <= t < 52.0 else 0.0
            i_ion, dw = aliev_panfilov_rhs(v, w, params)
            dv = (-i_ion + i_app) / params.C_m
            dsig = coupled_activation_rate(sig, v, act)
            return np.array([dv, dw, dsig])

        v_max, sig_max = -np.inf, -np.inf
        for i in range(int(1000.0 / h)):
            t = i * h
            k1 = rhs(state, t)
            k2 = rhs(state + h / 2 * k1, t + h / 2)
            k3 = rhs(state + h / 2 * k2, t + h / 2)
            k4 = rhs(state + h * k3, t + h)
            state = state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            v_max = max(v_max, state[0])
            sig_max = max(sig_max, state[2])
        assert v_max > 0.0                       # real depolarization
        assert abs(state[0] - params.v_0) < 5.0  # back near rest at 1 s
        assert sig_max <= act.k_sigma * (v_max - act.v_r)
        assert 6.0 <= sig_max <= 13.0


class TestStVenantKirchhoff:
    def test_linear_in_strain(self):
        mat = StVenantKirchhoffPlaneStress(E=4.32e8, nu=0.0)
        g_ref = np.eye(2)
        eps = np.array([[1e-4, 2e-5], [2e-5, -3e-5]])
        S, _ = mat.stress_and_tangent(g_ref, g_ref + 2 * eps)
        S2, _ = mat.stress_and_tangent(g_ref, g_ref + 4 * eps)
        assert_allclose(S2, 2 * S, rtol=1e-12)

    def test_nu_zero_decoupling(self):
        mat = StVenantKirchhoffPlaneStress(E=2.0, nu=0.0)
        g_ref = np.eye(2)
        g_def = np.diag([1.02, 1.0])
        S, _ = mat.stress_and_tangent(g_ref, g_def)
        assert_allclose(S[1, 1], 0.0, atol=1e-15)
        assert_allclose(S[0, 0], mat.E * 0.01, rtol=1e-12)

    def test_tangent_fd(self):
        rng = np.random.default_rng(2)
        mat = StVenantKirchhoffPlaneStress(E=10.0, nu=0.3)
        g_ref = random_spd(rng)
        g_def = random_spd(rng)
        S, C_t = mat.stress_and_tangent(g_ref, g_def)
        fd = fd_tangent(lambda C: mat.stress_and_tangent(g_ref, C)[0], g_def)
        assert rel_err(C_t, fd) < 1e-4
