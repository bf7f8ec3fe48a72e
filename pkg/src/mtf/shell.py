"""Isogeometric Galerkin Kirchhoff-Love shell with layered active stress.

The mid-surface displacement is discretized with the patch basis
(isoparametric).  Through the thickness, each material layer carries its
own Gauss rule; the active stress acts only inside the flagged layer.
Membrane strains and curvature changes follow the standard shell split
E_{ab} = eps_{ab} + z kappa_{ab}, with layer metrics truncated linearly
in the thickness coordinate.

Assembly is vectorized over all elements at once and uses fixed-order
reductions only, so results are bit-reproducible regardless of BLAS
thread counts.  The consistent tangent carries material, geometric and
activation (stretch-sensitivity) contributions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from mtf.materials import (
    NeoHookeanIncompressible,
    PassiveLayerParams,
    active_stress_tensor,
    anisotropic_stress,
    imposed_activation,
)

__all__ = [
    "Layer",
    "LayerStack",
    "ShellModel",
    "ShellState",
    "ImposedActivationField",
    "SampledActivationField",
    "AssemblyError",
    "NonConvergenceError",
    "strain_measures",
    "stress_resultants",
    "assemble",
    "assemble_residual",
    "assemble_tangent",
    "strain_energy",
    "solve_quasi_static",
    "edge_control_indices",
    "clamp_edge",
    "fix_edge",
]

_VOIGT = [(0, 0), (1, 1), (0, 1)]
_VW = np.array([1.0, 1.0, 2.0])  # symmetry multiplicities
_EYE3 = np.eye(3)
_LEVI = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    _LEVI[_i, _j, _k] = 1.0
    _LEVI[_j, _i, _k] = -1.0


class AssemblyError(RuntimeError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, message, step=None, residual=None, history=None):
        super().__init__(message)
        self.step = step
        self.residual = residual
        self.history = history or []


# ---------------------------------------------------------------------------
# layer stack
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Layer:
    """One material layer: passive parameters plus an activation flag."""

    passive: PassiveLayerParams
    active: bool = False
    material: object = None  # defaults to incompressible Neo-Hookean with passive.mu

    def __post_init__(self):
        if self.material is None:
            object.__setattr__(self, "material", NeoHookeanIncompressible(self.passive.mu))
        if self.active and self.passive.anisotropy is None:
            raise ValueError("an active layer needs a fiber direction "
                             "(use anisotropy with E_p = 0 for a passive-isotropic one)")


class LayerStack:
    """Ordered layers, bottom to top, spanning z in [-d/2, d/2]."""

    def __init__(self, layers, points_per_layer: int = 3):
        layers = list(layers)
        if not layers:
            raise ValueError("layer stack is empty")
        if sum(1 for l in layers if l.active) > 1:
            raise ValueError("at most one active layer is supported")
        if points_per_layer < 2:
            raise ValueError("need at least 2 thickness points per layer for bending")
        self.layers = layers
        self.points_per_layer = points_per_layer
        self.total = sum(l.passive.thickness for l in layers)
        z0 = -0.5 * self.total
        self.intervals = []
        for l in layers:
            z1 = z0 + l.passive.thickness
            self.intervals.append((z0, z1))
            z0 = z1

    @property
    def active_layer_index(self):
        for i, l in enumerate(self.layers):
            if l.active:
                return i
        return None

    def areal_density(self) -> float:
        return sum(l.passive.rho * l.passive.thickness for l in self.layers)

    def thickness_rule(self):
        """Gauss points through the stack: (z, weight, layer index)."""
        xg, wg = np.polynomial.legendre.leggauss(self.points_per_layer)
        zs, ws, lids = [], [], []
        for lid, (z0, z1) in enumerate(self.intervals):
            half = 0.5 * (z1 - z0)
            mid = 0.5 * (z0 + z1)
            zs.extend(mid + half * xg)
            ws.extend(half * wg)
            lids.extend([lid] * xg.size)
        return np.array(zs), np.array(ws), np.array(lids)


# ---------------------------------------------------------------------------
# activation fields
# ---------------------------------------------------------------------------

class ImposedActivationField:
    """Stretch-gated activation, uniform time factor (optionally ramped)."""

    def __init__(self, params, time: float = 0.0, scale: float = 1.0,
                 time_factor=None):
        self.params = params
        self.time = time
        self.scale = scale
        self.time_factor = time_factor

    def value_and_slope(self, lambda_f, gp_index):
        sig, dsig = imposed_activation(lambda_f, self.time, self.params,
                                       time_factor=self.time_factor)
        return self.scale * sig, self.scale * dsig

    def scaled(self, scale):
        return ImposedActivationField(self.params, self.time, scale, self.time_factor)


class SampledActivationField:
    """Per-quadrature-point activation values (no stretch sensitivity)."""

    def __init__(self, values):
        self.values = np.asarray(values, float)

    def value_and_slope(self, lambda_f, gp_index):
        vals = np.broadcast_to(self.values[gp_index], np.shape(lambda_f))
        return vals.copy(), np.zeros(np.shape(lambda_f))


# ---------------------------------------------------------------------------
# constraints and edges
# ---------------------------------------------------------------------------

def edge_control_indices(patch, edge: str, depth: int = 1):
    """Flat control indices of the first ``depth`` rows along an edge.

    Edges refer to the parametric box: "xmin"/"xmax" are theta^1 limits,
    "ymin"/"ymax" theta^2 limits.
    """
    m1, m2 = patch.shape
    i1 = np.arange(m1)
    i2 = np.arange(m2)
    out = []
    for k in range(depth):
        if edge == "xmin":
            out.append(i2 * m1 + k)
        elif edge == "xmax":
            out.append(i2 * m1 + (m1 - 1 - k))
        elif edge == "ymin":
            out.append(i1 + k * m1)
        elif edge == "ymax":
            out.append(i1 + (m2 - 1 - k) * m1)
        else:
            raise ValueError(f"unknown edge {edge!r}")
    return np.unique(np.concatenate(out))


def fix_edge(patch, edge: str, components=(0, 1, 2), depth: int = 1, value: float = 0.0):
    """Constraint list pinning components of edge control points."""
    idx = edge_control_indices(patch, edge, depth)
    return [(int(q), int(c), float(value)) for q in idx for c in components]


def clamp_edge(patch, edge: str):
    """Strong clamp: two control-point rows fully fixed (zero edge rotation)."""
    return fix_edge(patch, edge, depth=2)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class ShellState:
    """Control displacements (and rates, for dynamics) as flat (3n,) arrays."""

    u: np.ndarray
    v: np.ndarray = None
    a: np.ndarray = None

    @classmethod
    def zeros(cls, model):
        n = 3 * model.patch.n_control
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))


class ShellModel:
    """Shell mid-surface patch with a layer stack, constraints and loads."""

    def __init__(self, patch, layers: LayerStack, constraints=(), area_load=None,
                 areal_density=None, gauss_per_span=None):
        self.patch = patch
        self.layers = layers
        self.constraints = list(constraints)
        self.area_load = None if area_load is None else np.asarray(area_load, float)
        self.rho = layers.areal_density() if areal_density is None else float(areal_density)
        p1, p2 = patch.degrees
        self.gauss = gauss_per_span or (p1 + 1, p2 + 1)
        self._disc = None

    @property
    def n_dof(self):
        return 3 * self.patch.n_control

    def constrained_dofs(self):
        if not self.constraints:
            return np.empty(0, int), np.empty(0)
        dofs = np.array([3 * q + c for q, c, _ in self.constraints], dtype=int)
        vals = np.array([v for _, _, v in self.constraints])
        uniq, pos = np.unique(dofs, return_index=True)
        return uniq, vals[pos]

    def free_dofs(self):
        fixed, _ = self.constrained_dofs()
        mask = np.ones(self.n_dof, bool)
        mask[fixed] = False
        return np.nonzero(mask)[0]

    def apply_constraints(self, u):
        fixed, vals = self.constrained_dofs()
        u = np.array(u, float)
        u[fixed] = vals
        return u

    def discretization(self):
        if self._disc is None:
            self._disc = _Discretization(self)
        return self._disc

    def mass_matrix(self):
        return self.discretization().mass_csr

    def external_force(self):
        return self.discretization().f_ext.copy()


class _Discretization:
    """Per-model cache: basis tables, reference frames, sparsity pattern."""

    def __init__(self, model: ShellModel):
        patch = model.patch
        p1, p2 = patch.degrees
        self.model = model
        self.nsh = (p1 + 1) * (p2 + 1)
        self.ndof_el = 3 * self.nsh

        u1 = np.unique(patch.kv1.knots)
        u2 = np.unique(patch.kv2.knots)
        spans1 = list(zip(u1[:-1], u1[1:]))
        spans2 = list(zip(u2[:-1], u2[1:]))
        self.n_el = len(spans1) * len(spans2)

        g1, w1 = np.polynomial.legendre.leggauss(model.gauss[0])
        g2, w2 = np.polynomial.legendre.leggauss(model.gauss[1])
        self.ngpe = g1.size * g2.size
        n_gp = self.n_el * self.ngpe
        self.n_gp = n_gp

        N = np.empty((n_gp, self.nsh))
        dN = np.empty((n_gp, 2, self.nsh))
        ddN = np.empty((n_gp, 3, self.nsh))
        wq = np.empty(n_gp)
        t1s = np.empty(n_gp)
        t2s = np.empty(n_gp)
        conn = np.empty((self.n_el, self.nsh), dtype=int)

        gp = el = 0
        for a2, b2 in spans2:
            for a1, b1 in spans1:
                first = True
                for x2, ww2 in zip(g2, w2):
                    t2 = 0.5 * (a2 + b2) + 0.5 * (b2 - a2) * x2
                    for x1, ww1 in zip(g1, w1):
                        t1 = 0.5 * (a1 + b1) + 0.5 * (b1 - a1) * x1
                        idx, vals = patch.basis_2d(t1, t2, order=2)
                        if first:
                            conn[el] = idx
                            first = False
                        N[gp] = vals[0]
                        dN[gp, 0], dN[gp, 1] = vals[1], vals[2]
                        ddN[gp, 0], ddN[gp, 1], ddN[gp, 2] = vals[3], vals[4], vals[5]
                        wq[gp] = ww1 * ww2 * 0.25 * (b1 - a1) * (b2 - a2)
                        t1s[gp], t2s[gp] = t1, t2
                        gp += 1
                el += 1
        self.N, self.dN, self.ddN = N, dN, ddN
        self.t1, self.t2 = t1s, t2s
        self.conn = conn
        self.el_of_gp = np.repeat(np.arange(self.n_el), self.ngpe)
        self.el_dofs = (3 * conn[:, :, None] + np.arange(3)[None, None, :]).reshape(
            self.n_el, -1)

        # reference kinematics
        self.ctrl_el = patch.flat_control()[conn]
        (self.ahat, self.ahat3, self.ahat_dd, self.ahat_cov, self.bhat_v,
         self.Wref) = self._kinematics(np.zeros_like(self.ctrl_el))
        self.wA = wq * self.Wref  # quadrature weight times reference area measure

        # thickness rule and per-layer reference data
        stack = model.layers
        self.z, self.wz, self.layer_of = stack.thickness_rule()
        n_tau = self.z.size
        bhat = _voigt_to_sym(self.bhat_v)
        self.ghat_cov = (self.ahat_cov[:, None]
                         - 2.0 * self.z[None, :, None, None] * bhat[:, None])
        self.ghat_inv, _ = _inv22_batch(self.ghat_cov)

        # reference fiber components per thickness point (where defined)
        self.f_con = np.zeros((n_gp, n_tau, 2))
        self.has_fiber = np.zeros(n_tau, bool)
        self.is_active = np.zeros(n_tau, bool)
        acon_hat = np.einsum("gab,gbc->gac", np.linalg.inv(self.ahat_cov), self.ahat)
        a3_d = -np.einsum("gbk,gkc->gbc", bhat, acon_hat)  # a_{3,beta}
        for tau in range(n_tau):
            layer = stack.layers[self.layer_of[tau]]
            ani = layer.passive.anisotropy
            if ani is None:
                continue
            self.has_fiber[tau] = True
            self.is_active[tau] = layer.active
            gvec = self.ahat + self.z[tau] * a3_d  # covariant 3-vectors at this z
            f_cov = np.einsum("gbc,c->gb", gvec, ani.f0)
            self.f_con[:, tau] = np.einsum("gab,gb->ga", self.ghat_inv[:, tau], f_cov)

        fib = np.nonzero(self.has_fiber)[0]
        if fib.size:
            t0 = fib[0]
            lam0 = np.sqrt(np.einsum("ga,gab,gb->g", self.f_con[:, t0],
                                     self.ghat_cov[:, t0], self.f_con[:, t0]))
            if np.any(lam0 < 0.99):
                warnings.warn(
                    "fiber direction has out-of-plane content (min in-plane "
                    f"norm {lam0.min():.3f}); the projection discards it", stacklevel=3)

        # sparsity pattern and entry -> data-slot map
        rows = np.repeat(self.el_dofs, self.ndof_el, axis=1).ravel()
        cols = np.tile(self.el_dofs, (1, self.ndof_el)).ravel()
        coo = sp.coo_matrix((np.zeros(rows.size), (rows, cols)),
                            shape=(model.n_dof, model.n_dof))
        csr = coo.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        self.K_pattern = csr
        csr_rows = np.repeat(np.arange(model.n_dof), np.diff(csr.indptr))
        csr_keys = csr_rows.astype(np.int64) * model.n_dof + csr.indices
        entry_keys = rows.astype(np.int64) * model.n_dof + cols
        self.data_slot = np.searchsorted(csr_keys, entry_keys)

        # consistent mass matrix (block I3 over components)
        blocks = np.einsum("g,gi,gj->gij", self.wA * model.rho, N, N)
        m_el = np.zeros((self.n_el, self.nsh, self.nsh))
        np.add.at(m_el, self.el_of_gp, blocks)
        Km = np.zeros((self.n_el, self.ndof_el, self.ndof_el))
        for r in range(3):
            Km[:, r::3, r::3] = m_el
        self.mass_csr = self.scatter_K(Km)

        # constant external load vector
        f = np.zeros(model.n_dof)
        if model.area_load is not None:
            load = np.einsum("g,gi,c->gic", self.wA, N, model.area_load)
            f_el = np.zeros((self.n_el, self.nsh, 3))
            np.add.at(f_el, self.el_of_gp, load)
            np.add.at(f, self.el_dofs.ravel(), f_el.reshape(self.n_el, -1).ravel())
        self.f_ext = f

    def _kinematics(self, u_el):
        """Frames at all quadrature points for element displacements u_el."""
        pos = self.ctrl_el + u_el
        pos_g = pos[self.el_of_gp]
        a = np.einsum("gds,gsc->gdc", self.dN, pos_g)    # covariant tangents
        dd = np.einsum("gvs,gsc->gvc", self.ddN, pos_g)  # second derivatives (Voigt)
        w = np.cross(a[:, 0], a[:, 1])
        W = np.linalg.norm(w, axis=1)
        if np.any(W < 1e-14):
            g = int(np.argmin(W))
            raise AssemblyError(
                f"degenerate surface at quadrature point "
                f"(theta1={self.t1[g]:.4g}, theta2={self.t2[g]:.4g})")
        a3 = w / W[:, None]
        acov = np.einsum("gdc,gec->gde", a, a)
        b_v = np.einsum("gvc,gc->gv", dd, a3)
        return a, a3, dd, acov, b_v, W

    def scatter_K(self, K_el):
        data = np.zeros(self.K_pattern.data.size)
        np.add.at(data, self.data_slot, K_el.ravel())
        return sp.csr_matrix((data, self.K_pattern.indices.copy(),
                              self.K_pattern.indptr.copy()), shape=self.K_pattern.shape)

    def scatter_R(self, R_el):
        R = np.zeros(self.model.n_dof)
        np.add.at(R, self.el_dofs.ravel(), R_el.ravel())
        return R


def _voigt_to_sym(v):
    out = np.empty(v.shape[:-1] + (2, 2))
    out[..., 0, 0] = v[..., 0]
    out[..., 1, 1] = v[..., 1]
    out[..., 0, 1] = v[..., 2]
    out[..., 1, 0] = v[..., 2]
    return out


def _sym_to_voigt(m):
    return np.stack([m[..., 0, 0], m[..., 1, 1], m[..., 0, 1]], axis=-1)


def _voigt4(C):
    """(..., 2,2,2,2) modulus to (..., 3, 3) Voigt (no multiplicities)."""
    out = np.empty(C.shape[:-4] + (3, 3))
    for A, (i, j) in enumerate(_VOIGT):
        for B, (k, l) in enumerate(_VOIGT):
            out[..., A, B] = C[..., i, j, k, l]
    return out


def _inv22_batch(m):
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1]
    inv[..., 1, 1] = m[..., 0, 0]
    inv[..., 0, 1] = -m[..., 0, 1]
    inv[..., 1, 0] = -m[..., 1, 0]
    return inv / det[..., None, None], det


# ---------------------------------------------------------------------------
# point-wise operations
# ---------------------------------------------------------------------------

def strain_measures(frame_ref, frame_def):
    """Membrane strain and curvature change between two frames."""
    eps = 0.5 * (frame_def.metric - frame_ref.metric)
    kappa = frame_ref.curvature - frame_def.curvature
    return eps, kappa


def stress_resultants(eps, kappa, stack: LayerStack, frame_ref, activation=None):
    """Thickness-integrated forces, moments and tangent blocks at a point.

    Returns ``(n, m, (A, B, D))``: contravariant resultants (2x2) and the
    membrane/coupling/bending moduli in Voigt layout without symmetry
    multiplicities.  ``activation`` follows the activation-field protocol
    and acts only in the flagged layer.
    """
    z, wz, layer_of = stack.thickness_rule()
    acov, bhat = frame_ref.metric, frame_ref.curvature
    a3_d = -np.einsum("bk,kc->bc", bhat, frame_ref.acon)
    n_v = np.zeros(3)
    m_v = np.zeros(3)
    A = np.zeros((3, 3))
    B = np.zeros((3, 3))
    D = np.zeros((3, 3))
    for tau in range(z.size):
        layer = stack.layers[layer_of[tau]]
        g_ref = acov - 2.0 * z[tau] * bhat
        g_def = g_ref + 2.0 * (eps + z[tau] * kappa)
        S, C_t = layer.material.stress_and_tangent(g_ref, g_def)
        ani = layer.passive.anisotropy
        if ani is not None:
            g_inv = np.linalg.inv(g_ref)
            gvec = frame_ref.covariant + z[tau] * a3_d
            f_con = g_inv @ (gvec @ ani.f0)
            lam = np.sqrt(max(f_con @ g_def @ f_con, 1e-30))
            if ani.E_p > 0:
                S_a, C_a = anisotropic_stress(lam, f_con, ani.E_p, ani.alpha)
                S, C_t = S + S_a, C_t + C_a
            if layer.active and activation is not None:
                sig, dsig = activation.value_and_slope(lam, 0)
                S_act, C_act = active_stress_tensor(sig, f_con, lam, dsig)
                S, C_t = S + S_act, C_t + C_act
        Sv = _sym_to_voigt(S)
        Cv = _voigt4(C_t)
        n_v += wz[tau] * Sv
        m_v += wz[tau] * z[tau] * Sv
        A += wz[tau] * Cv
        B += wz[tau] * z[tau] * Cv
        D += wz[tau] * z[tau] ** 2 * Cv
    return _voigt_to_sym(n_v), _voigt_to_sym(m_v), (A, B, D)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def assemble(model: ShellModel, u, activation=None, need_tangent=True,
             need_energy=False, chunk_elems=128):
    """Residual R = F_int - F_ext, optional tangent K and strain energy.

    ``u`` is the flat (3n,) control displacement vector with constrained
    entries already holding their prescribed values.
    """
    disc = model.discretization()
    nsh, ndof_el, nel, ngpe = disc.nsh, disc.ndof_el, disc.n_el, disc.ngpe
    n_gp = disc.n_gp
    u_el = np.asarray(u, float).reshape(-1, 3)[disc.conn]

    a, a3, dd, acov, b_v, W = disc._kinematics(u_el)

    eps_v = 0.5 * _sym_to_voigt(acov - disc.ahat_cov)
    kap_v = disc.bhat_v - b_v

    n_res = np.zeros((n_gp, 3))
    m_res = np.zeros((n_gp, 3))
    if need_tangent:
        Av = np.zeros((n_gp, 3, 3))
        Bv = np.zeros((n_gp, 3, 3))
        Dv = np.zeros((n_gp, 3, 3))
    energy = 0.0

    gp_index = np.arange(n_gp)
    for tau in range(disc.z.size):
        z, wz = disc.z[tau], disc.wz[tau]
        layer = model.layers.layers[disc.layer_of[tau]]
        g_ref = disc.ghat_cov[:, tau]
        g_def = g_ref + 2.0 * _voigt_to_sym(eps_v + z * kap_v)
        S, C_t = layer.material.stress_and_tangent(g_ref, g_def)
        if need_energy:
            energy += wz * float(np.sum(disc.wA * layer.material.energy_density(g_ref, g_def)))
        if disc.has_fiber[tau]:
            f_con = disc.f_con[:, tau]
            lam = np.sqrt(np.maximum(
                np.einsum("ga,gab,gb->g", f_con, g_def, f_con), 1e-30))
            ani = layer.passive.anisotropy
            if ani.E_p > 0:
                S_a, C_a = anisotropic_stress(lam, f_con, ani.E_p, ani.alpha)
                S = S + S_a
                if need_tangent:
                    C_t = C_t + C_a
                if need_energy:
                    psi = ani.E_p / ani.alpha**2 * (
                        np.exp(ani.alpha * (lam - 1.0)) - ani.alpha * (lam - 1.0) - 1.0)
                    energy += wz * float(np.sum(disc.wA * psi))
            if disc.is_active[tau] and activation is not None:
                sig, dsig = activation.value_and_slope(lam, gp_index)
                S_act, C_act = active_stress_tensor(sig, f_con, lam, dsig)
                S = S + S_act
                if need_tangent:
                    C_t = C_t + C_act
        Sv = _sym_to_voigt(S)
        n_res += wz * Sv
        m_res += (wz * z) * Sv
        if need_tangent:
            Cv = _voigt4(C_t)
            Av += wz * Cv
            Bv += (wz * z) * Cv
            Dv += (wz * z * z) * Cv

    # first variations ------------------------------------------------------
    dN1, dN2 = disc.dN[:, 0], disc.dN[:, 1]
    d_eps = np.empty((n_gp, 3, nsh, 3))
    d_eps[:, 0] = dN1[:, :, None] * a[:, 0][:, None, :]
    d_eps[:, 1] = dN2[:, :, None] * a[:, 1][:, None, :]
    d_eps[:, 2] = 0.5 * (dN1[:, :, None] * a[:, 1][:, None, :]
                         + dN2[:, :, None] * a[:, 0][:, None, :])

    E1 = np.cross(_EYE3[None, :, :], a[:, 1][:, None, :])  # e_r x a2
    E2 = np.cross(a[:, 0][:, None, :], _EYE3[None, :, :])  # a1 x e_r
    d_w = (dN1[:, :, None, None] * E1[:, None, :, :]
           + dN2[:, :, None, None] * E2[:, None, :, :])    # (g, nsh, 3r, 3c)
    d_W = np.einsum("gsrc,gc->gsr", d_w, a3)
    d_a3 = (d_w - d_W[..., None] * a3[:, None, None, :]) / W[:, None, None, None]

    d_b = (np.einsum("gvs,gr->gvsr", disc.ddN, a3)
           + np.einsum("gvc,gsrc->gvsr", dd, d_a3))
    d_eps_f = d_eps.reshape(n_gp, 3, ndof_el)
    d_kap_f = (-d_b).reshape(n_gp, 3, ndof_el)

    wA = disc.wA
    nW = n_res * _VW
    mW = m_res * _VW
    R_gp = (np.einsum("gvq,gv->gq", d_eps_f, nW)
            + np.einsum("gvq,gv->gq", d_kap_f, mW))
    R_el = (wA[:, None] * R_gp).reshape(nel, ngpe, ndof_el).sum(axis=1)
    R = disc.scatter_R(R_el) - disc.f_ext

    out = {"R": R}
    if need_energy:
        out["energy"] = energy
    if not need_tangent:
        return out

    # tangent ----------------------------------------------------------------
    # Block contractions run through tiny per-point matmuls (81x81 with
    # inner dimension <= 6); these stay on single-threaded BLAS paths for
    # any thread-count setting, keeping assembly bit-reproducible.
    K_el = np.zeros((nel, ndof_el, ndof_el))
    dwf = d_w.reshape(n_gp, ndof_el, 3)
    dWf = d_W.reshape(n_gp, ndof_el)
    da3f = d_a3.reshape(n_gp, ndof_el, 3)
    B6 = np.concatenate([d_eps_f, d_kap_f], axis=1)  # (g, 6, ndof)
    M6 = np.empty((n_gp, 6, 6))
    M6[:, :3, :3] = Av * _VW[None, :, None] * _VW[None, None, :]
    M6[:, :3, 3:] = Bv * _VW[None, :, None] * _VW[None, None, :]
    M6[:, 3:, :3] = M6[:, :3, 3:]
    M6[:, 3:, 3:] = Dv * _VW[None, :, None] * _VW[None, None, :]
    nsym = _voigt_to_sym(n_res)

    for lo in range(0, nel, chunk_elems):
        hi = min(lo + chunk_elems, nel)
        gs = slice(lo * ngpe, hi * ngpe)
        ng = hi * ngpe - lo * ngpe
        w = wA[gs]
        w3 = w[:, None, None]

        # material part: B^T (w M) B with stacked strain variations
        MB = M6[gs] @ B6[gs]
        Kc = B6[gs].transpose(0, 2, 1) @ (w3 * MB)

        # geometric part: membrane n : dd(eps), scalar blocks kron I3
        G = disc.dN[gs].transpose(0, 2, 1) @ (nsym[gs] @ disc.dN[gs])
        Kc += _expand_scalar_blocks(G, w)

        # geometric part: bending -(m : dd b)
        mf = mW[gs]
        dd_m = np.einsum("gv,gvs->gs", mf, disc.ddN[gs])  # (g, nsh)
        Vv = np.einsum("gv,gvc->gc", mf, dd[gs])          # (g, 3)
        da3 = da3f[gs]
        dw = dwf[gs]
        dW = dWf[gs]
        Wl = W[gs]
        c3 = np.einsum("gc,gc->g", Vv, a3[gs])
        Vw = dw @ Vv[:, :, None]  # (g, ndof, 1)

        DD = np.zeros((ng, ndof_el, 3))
        for r in range(3):
            DD[:, r::3, r] = dd_m
        Tb = DD @ da3.transpose(0, 2, 1)
        Tb += Tb.transpose(0, 2, 1)

        # rank-two correction as one k=2 product
        U = np.concatenate([-Vw / (Wl**2)[:, None, None], dW[:, :, None]], axis=2)
        V2 = np.concatenate(
            [dW[:, :, None],
             -Vw / (Wl**2)[:, None, None] + (2.0 * c3 / Wl**2)[:, None, None] * dW[:, :, None]],
            axis=2)
        Tb += U @ V2.transpose(0, 2, 1)

        # combined skew expansion (V and a3 parts share the kron structure)
        Zc = np.einsum("rsk,gk->grs", _LEVI,
                       (Vv - c3[:, None] * a3[gs])) / Wl[:, None, None]
        o1 = dN1[gs][:, :, None] * dN2[gs][:, None, :]  # (g, nsh, nsh)
        Tb += (o1[:, :, None, :, None] * Zc[:, None, :, None, :]).reshape(
            ng, ndof_el, ndof_el)
        Tb += (o1.transpose(0, 2, 1)[:, :, None, :, None]
               * Zc.transpose(0, 2, 1)[:, None, :, None, :]).reshape(ng, ndof_el, ndof_el)

        # -(c3/W) (dw dw^T - dW dW^T)/W
        Tb -= (c3 / Wl**2)[:, None, None] * (dw @ dw.transpose(0, 2, 1))
        Tb += (c3 / Wl**2)[:, None, None] * (dW[:, :, None] @ dW[:, None, :])

        Kc -= w3 * Tb
        K_el[lo:hi] = Kc.reshape(hi - lo, ngpe, ndof_el, ndof_el).sum(axis=1)

    out["K"] = disc.scatter_K(K_el)
    return out


def _expand_scalar_blocks(G, w):
    """Weighted scalar (g, nsh, nsh) blocks into (g, ndof, ndof) kron I3."""
    g, nsh, _ = G.shape
    out = np.zeros((g, 3 * nsh, 3 * nsh))
    Gw = w[:, None, None] * G
    for r in range(3):
        out[:, r::3, r::3] = Gw
    return out


def assemble_residual(model, state_or_u, activation=None):
    u = state_or_u.u if isinstance(state_or_u, ShellState) else state_or_u
    return assemble(model, u, activation, need_tangent=False)["R"]


def assemble_tangent(model, state_or_u, activation=None):
    u = state_or_u.u if isinstance(state_or_u, ShellState) else state_or_u
    return assemble(model, u, activation, need_tangent=True)["K"]


def strain_energy(model, u, activation=None):
    return assemble(model, u, activation, need_tangent=False, need_energy=True)["energy"]


# ---------------------------------------------------------------------------
# quasi-static Newton continuation
# ---------------------------------------------------------------------------

def solve_quasi_static(model: ShellModel, activations, tol_rel=1e-8, tol_abs=1e-10,
                       max_iter=30, u0=None, callback=None, predictor=True):
    """Newton continuation over a sequence of activation fields.

    ``activations`` is an iterable of activation-field objects (one per
    step; ``None`` entries mean passive).  A secant predictor extrapolates
    the previous two converged states to start each step.  Returns the
    displacement history, per-step Newton norms and the final displacement.
    """
    free = model.free_dofs()
    u = model.apply_constraints(np.zeros(model.n_dof) if u0 is None else u0)
    prev = None
    history = []
    norms_all = []
    for step, act in enumerate(activations):
        if predictor and prev is not None:
            u_try = u.copy()
            u_try[free] += u[free] - prev[free]
        else:
            u_try = u.copy()
        prev = u.copy()
        u = u_try
        norms = []
        ref_norm = None
        for _ in range(max_iter):
            out = assemble(model, u, act, need_tangent=True)
            R = out["R"][free]
            norm = float(np.linalg.norm(R))
            norms.append(norm)
            if ref_norm is None:
                ref_norm = norm
            if norm <= tol_abs or norm <= tol_rel * max(ref_norm, tol_abs):
                break
            K = out["K"][free][:, free].tocsc()
            u[free] += splu(K).solve(-R)
        else:
            raise NonConvergenceError(
                f"Newton stagnated at step {step}: |R| = {norms[-1]:.3e} "
                f"after {max_iter} iterations", step=step, residual=norms[-1],
                history=norms)
        history.append(u.copy())
        norms_all.append(norms)
        if callback is not None:
            callback(step, u)
    return {"displacements": history, "newton_norms": norms_all,
            "u": u, "free_dofs": free}
