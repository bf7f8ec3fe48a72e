"""B-spline kernel: univariate bases, refinement, Greville points, surfaces.

Basis evaluation follows the classical Cox-de Boor recursion in its
triangular-table form; knot insertion uses Boehm's algorithm and degree
elevation the segment-wise Bezier elevation of Piegl & Tiller (A5.9).
All evaluators return only the p+1 active functions together with the
index of the first one, so callers assemble sparse operators from local
blocks.

Conventions
-----------
* Knot vectors are open (first/last knot repeated p+1 times) and are kept
  in their native parameterization, never rescaled to [0, 1].
* Span lookup is half-open, with the last nonempty span closed on the
  right so that the domain endpoint is evaluable.
* Tensor-product control nets are indexed ``[i1, i2]`` with theta^1
  varying fastest in flattened order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KnotVector",
    "BSplinePatch",
    "DomainError",
]


class DomainError(ValueError):
    """Raised when a parametric coordinate falls outside the knot domain."""


def _as_readonly(a):
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector of a univariate B-spline basis of degree ``degree``."""

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        knots = _as_readonly(self.knots)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be nonnegative")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ValueError("knot vector too short for degree %d" % p)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if not (np.all(knots[: p + 1] == knots[0]) and np.all(knots[-p - 1 :] == knots[-1])):
            raise ValueError("knot vector must be open (p+1 repeated end knots)")
        if knots[0] == knots[-1]:
            raise ValueError("degenerate knot vector")

    @property
    def m(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def domain(self):
        return float(self.knots[self.degree]), float(self.knots[-self.degree - 1])

    def span_of(self, u: float) -> int:
        """Index s with knots[s] <= u < knots[s+1] (last span closed right)."""
        lo, hi = self.domain
        if u < lo or u > hi:
            raise DomainError(f"parameter {u} outside knot domain [{lo}, {hi}]")
        s = int(np.searchsorted(self.knots, u, side="right")) - 1
        return min(max(s, self.degree), self.m - 1)

    def basis(self, u: float):
        """Values of the p+1 active functions at ``u``.

        Returns ``(first, vals)`` where ``vals[j]`` is function
        ``first + j`` evaluated at ``u``.
        """
        p = self.degree
        s = self.span_of(u)
        kn = self.knots
        vals = np.zeros(p + 1)
        vals[0] = 1.0
        left = np.zeros(p + 1)
        right = np.zeros(p + 1)
        for j in range(1, p + 1):
            left[j] = u - kn[s + 1 - j]
            right[j] = kn[s + j] - u
            saved = 0.0
            for r in range(j):
                tmp = vals[r] / (right[r + 1] + left[j - r])
                vals[r] = saved + right[r + 1] * tmp
                saved = left[j - r] * tmp
            vals[j] = saved
        return s - p, vals

    def basis_derivatives(self, u: float, order: int):
        """Derivatives (orders 0..order) of the active functions at ``u``.

        Returns ``(first, ders)`` with ``ders[k, j]`` the k-th derivative of
        function ``first + j``.  Only orders up to 2 are supported.
        """
        if order > 2:
            raise ValueError("derivative order > 2 is unsupported")
        p = self.degree
        s = self.span_of(u)
        kn = self.knots
        # triangular table of all lower-degree bases (Piegl-Tiller A2.3)
        ndu = np.zeros((p + 1, p + 1))
        ndu[0, 0] = 1.0
        left = np.zeros(p + 1)
        right = np.zeros(p + 1)
        for j in range(1, p + 1):
            left[j] = u - kn[s + 1 - j]
            right[j] = kn[s + j] - u
            saved = 0.0
            for r in range(j):
                ndu[j, r] = right[r + 1] + left[j - r]
                tmp = ndu[r, j - 1] / ndu[j, r]
                ndu[r, j] = saved + right[r + 1] * tmp
                saved = left[j - r] * tmp
            ndu[j, j] = saved
        ders = np.zeros((order + 1, p + 1))
        ders[0] = ndu[:, p]
        for r in range(p + 1):
            a = np.zeros((2, p + 1))
            a[0, 0] = 1.0
            s1, s2 = 0, 1
            for k in range(1, order + 1):
                d = 0.0
                rk, pk = r - k, p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d += a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d += a[s2, k] * ndu[r, pk]
                ders[k, r] = d
                s1, s2 = s2, s1
        fac = float(p)
        for k in range(1, order + 1):
            ders[k] *= fac
            fac *= p - k
        return s - p, ders

    def greville(self) -> np.ndarray:
        """Knot averages: one collocation abscissa per basis function."""
        if self.degree < 1:
            raise ValueError("Greville abscissae need degree >= 1")
        p, kn = self.degree, self.knots
        pts = np.array([kn[i + 1 : i + p + 1].mean() for i in range(self.m)])
        # guard against roundoff pushing endpoints outside the domain
        lo, hi = self.domain
        return np.clip(pts, lo, hi)

    def insert(self, u: float):
        """Insert knot ``u`` once (Boehm).

        Returns ``(new_kv, T)`` with ``T`` the (m+1, m) matrix taking old
        coefficients to new ones.
        """
        lo, hi = self.domain
        if not (lo < u < hi):
            raise DomainError(f"knot insertion requires {lo} < u < {hi}")
        p, kn, m = self.degree, self.knots, self.m
        k = int(np.searchsorted(kn, u, side="right")) - 1  # kn[k] <= u < kn[k+1]
        T = np.zeros((m + 1, m))
        for i in range(m + 1):
            if i <= k - p:
                T[i, i] = 1.0
            elif i >= k + 1:
                T[i, i - 1] = 1.0
            else:
                alpha = (u - kn[i]) / (kn[i + p] - kn[i])
                T[i, i] = alpha
                T[i, i - 1] = 1.0 - alpha
        new_knots = np.insert(kn, k + 1, u)
        return KnotVector(new_knots, p), T

    def elevate(self):
        """Raise the degree by one, preserving geometry and continuity.

        Returns ``(new_kv, T)`` where ``T`` maps old to new coefficients
        (Piegl-Tiller algorithm A5.9, single elevation).
        """
        p, kn = self.degree, self.knots
        T = _elevate_matrix(kn, p)
        values, counts = np.unique(kn, return_counts=True)
        new_knots = np.repeat(values, counts + 1)
        return KnotVector(new_knots, p + 1), T

    def refined_uniform(self, subdivisions: int):
        """Split every nonempty span into ``subdivisions`` equal parts."""
        kv, T = self, np.eye(self.m)
        if subdivisions < 2:
            return kv, T
        spans = np.unique(self.knots)
        for a, b in zip(spans[:-1], spans[1:]):
            for j in range(1, subdivisions):
                kv, Tj = kv.insert(a + (b - a) * j / subdivisions)
                T = Tj @ T
        return kv, T

    def to_list(self):
        return self.knots.tolist()


def _elevate_matrix(kn: np.ndarray, p: int) -> np.ndarray:
    """Coefficient map of one degree elevation on an open knot vector.

    Works on the identity coefficient basis: elevating curves whose control
    "points" are the unit vectors yields the columns of the map.  The
    algorithm itself is A5.9 run on generic vector coefficients.
    """
    m = kn.size - p - 1
    coeffs = np.eye(m)
    new_pts = _elevate_curve(kn, p, coeffs)
    return new_pts


def _elevate_curve(kn: np.ndarray, p: int, P: np.ndarray) -> np.ndarray:
    """Degree-elevate the curve with knots ``kn``, degree ``p``, controls ``P``.

    ``P`` has shape (m, dim).  Returns the elevated control array.
    """
    t = 1  # single elevation
    m_high = kn.size - 1
    ph = p + t
    ph2 = ph // 2

    # Bezier elevation coefficients
    bezalfs = np.zeros((p + t + 1, p + 1))
    bezalfs[0, 0] = 1.0
    bezalfs[ph, p] = 1.0
    from math import comb

    for i in range(1, ph2 + 1):
        inv = 1.0 / comb(ph, i)
        mpi = min(p, i)
        for j in range(max(0, i - t), mpi + 1):
            bezalfs[i, j] = inv * comb(p, j) * comb(t, i - j)
    for i in range(ph2 + 1, ph):
        mpi = min(p, i)
        for j in range(max(0, i - t), mpi + 1):
            bezalfs[i, j] = bezalfs[ph - i, p - j]

    dim = P.shape[1]
    values, counts = np.unique(kn, return_counts=True)
    n_new = P.shape[0] + t * (len(values) - 1)
    Q = np.zeros((n_new, dim))
    Uh = np.zeros(kn.size + t * len(values))

    bpts = np.zeros((p + 1, dim))       # current Bezier segment
    ebpts = np.zeros((p + t + 1, dim))  # elevated segment
    nextbpts = np.zeros((p - 1, dim))
    alfs = np.zeros(p - 1) if p > 1 else np.zeros(0)

    mh = ph
    kind = ph + 1
    r = -1
    a = p
    b = p + 1
    cind = 1
    ua = kn[0]
    Q[0] = P[0]
    Uh[: ph + 1] = ua
    bpts[:] = P[: p + 1]

    while b < m_high:
        i = b
        while b < m_high and kn[b] == kn[b + 1]:
            b += 1
        mul = b - i + 1
        mh += mul + t
        ub = kn[b]
        oldr = r
        r = p - mul
        lbz = (oldr + 2) // 2 if oldr > 0 else 1
        rbz = ph - (r + 1) // 2 if r > 0 else ph

        if r > 0:
            # insert knot ub r times to make the segment Bezier
            numer = ub - ua
            for k in range(p, mul, -1):
                alfs[k - mul - 1] = numer / (kn[a + k] - ua)
            for j in range(1, r + 1):
                save = r - j
                s = mul + j
                for k in range(p, s - 1, -1):
                    bpts[k] = alfs[k - s] * bpts[k] + (1.0 - alfs[k - s]) * bpts[k - 1]
                nextbpts[save] = bpts[p]

        for i in range(lbz, ph + 1):
            ebpts[i] = 0.0
            for j in range(max(0, i - t), min(p, i) + 1):
                ebpts[i] += bezalfs[i, j] * bpts[j]

        if oldr > 1:
            # remove knot ua oldr-1 times
            first = kind - 2
            last = kind
            den = ub - ua
            bet = (ub - Uh[kind - 1]) / den
            for tr in range(1, oldr):
                i = first
                j = last
                kj = j - kind + 1
                while j - i > tr:
                    if i < cind:
                        alf = (ub - Uh[i]) / (ua - Uh[i])
                        Q[i] = alf * Q[i] + (1.0 - alf) * Q[i - 1]
                    if j >= lbz:
                        if j - tr <= kind - ph + oldr:
                            gam = (ub - Uh[j - tr]) / den
                            ebpts[kj] = gam * ebpts[kj] + (1.0 - gam) * ebpts[kj + 1]
                        else:
                            ebpts[kj] = bet * ebpts[kj] + (1.0 - bet) * ebpts[kj + 1]
                    i += 1
                    j -= 1
                    kj -= 1
                first -= 1
                last += 1

        if a != p:
            for _ in range(ph - oldr):
                Uh[kind] = ua
                kind += 1
        for j in range(lbz, rbz + 1):
            Q[cind] = ebpts[j]
            cind += 1

        if b < m_high:
            bpts[:r] = nextbpts[:r]
            bpts[r : p + 1] = P[b - p + r : b + 1]
            a = b
            b += 1
            ua = ub
        else:
            for i in range(ph + 1):
                Uh[kind + i] = ub

    return Q[:n_new]


@dataclass(frozen=True)
class BSplinePatch:
    """Tensor-product B-spline surface with a 3D control net."""

    kv1: KnotVector
    kv2: KnotVector
    control: np.ndarray  # (m1, m2, 3)
    _span_cache: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ctrl = _as_readonly(self.control)
        if ctrl.shape != (self.kv1.m, self.kv2.m, 3):
            raise ValueError(
                f"control net shape {ctrl.shape} does not match basis "
                f"({self.kv1.m}, {self.kv2.m}, 3)"
            )
        object.__setattr__(self, "control", ctrl)
        object.__setattr__(self, "_span_cache", None)

    # -- basic queries -------------------------------------------------

    @property
    def shape(self):
        return self.kv1.m, self.kv2.m

    @property
    def n_control(self) -> int:
        return self.kv1.m * self.kv2.m

    @property
    def degrees(self):
        return self.kv1.degree, self.kv2.degree

    @property
    def domain(self):
        return self.kv1.domain, self.kv2.domain

    def flat_control(self) -> np.ndarray:
        """Control points as (n, 3) with theta^1 index fastest."""
        return self.control.transpose(1, 0, 2).reshape(-1, 3)

    def flat_index(self, i1, i2):
        return i2 * self.kv1.m + i1

    # -- evaluation ----------------------------------------------------

    def basis_2d(self, t1: float, t2: float, order: int = 0):
        """Active bivariate functions and derivatives at a point.

        Returns ``(idx, vals)``: ``idx`` are flat control indices of the
        (p1+1)(p2+1) active functions; ``vals`` has rows
        [N] for order 0, plus [N1, N2] for order 1, plus [N11, N22, N12]
        for order 2 (columns follow ``idx``).
        """
        f1, d1 = self.kv1.basis_derivatives(t1, min(order, 2))
        f2, d2 = self.kv2.basis_derivatives(t2, min(order, 2))
        p1, p2 = self.degrees
        i1 = np.arange(f1, f1 + p1 + 1)
        i2 = np.arange(f2, f2 + p2 + 1)
        idx = (i2[:, None] * self.kv1.m + i1[None, :]).ravel()
        rows = [np.outer(d2[0], d1[0]).ravel()]
        if order >= 1:
            rows.append(np.outer(d2[0], d1[1]).ravel())
            rows.append(np.outer(d2[1], d1[0]).ravel())
        if order >= 2:
            rows.append(np.outer(d2[0], d1[2]).ravel())
            rows.append(np.outer(d2[2], d1[0]).ravel())
            rows.append(np.outer(d2[1], d1[1]).ravel())
        return idx, np.vstack(rows)

    def evaluate(self, t1: float, t2: float, order: int = 0, displacement=None):
        """Surface point and partial derivatives.

        Returns a dict with keys among {"r", "r1", "r2", "r11", "r22",
        "r12"} up to the requested order.  ``displacement`` is an optional
        (n, 3) or (m1, m2, 3) coefficient array sharing the patch basis,
        added to the control net before evaluation.
        """
        idx, vals = self.basis_2d(t1, t2, order)
        net = self.flat_control()
        if displacement is not None:
            disp = np.asarray(displacement, float)
            if disp.shape == (self.kv1.m, self.kv2.m, 3):
                disp = disp.transpose(1, 0, 2).reshape(-1, 3)
            net = net + disp
        pts = net[idx]
        out = {"r": vals[0] @ pts}
        if order >= 1:
            out["r1"] = vals[1] @ pts
            out["r2"] = vals[2] @ pts
        if order >= 2:
            out["r11"] = vals[3] @ pts
            out["r22"] = vals[4] @ pts
            out["r12"] = vals[5] @ pts
        return out

    def greville_points(self):
        """Tensor grid of Greville abscissae, (g1, g2)."""
        return self.kv1.greville(), self.kv2.greville()

    # -- refinement ----------------------------------------------------

    def insert_knot(self, direction: int, u: float) -> "BSplinePatch":
        """Insert a knot in parametric direction 1 or 2, geometry preserved."""
        if direction == 1:
            kv, T = self.kv1.insert(u)
            ctrl = np.einsum("ij,jkc->ikc", T, self.control)
            return BSplinePatch(kv, self.kv2, ctrl)
        if direction == 2:
            kv, T = self.kv2.insert(u)
            ctrl = np.einsum("ij,kjc->kic", T, self.control)
            return BSplinePatch(self.kv1, kv, ctrl)
        raise ValueError("direction must be 1 or 2")

    def elevate_degree(self, direction: int) -> "BSplinePatch":
        """Raise the polynomial degree by one in the given direction."""
        if direction == 1:
            kv = self.kv1
            m2 = self.kv2.m
            flat = self.control.reshape(kv.m, m2 * 3)
            new = _elevate_curve(kv.knots, kv.degree, flat)
            kv_new, _ = kv.elevate()
            return BSplinePatch(kv_new, self.kv2, new.reshape(kv_new.m, m2, 3))
        if direction == 2:
            kv = self.kv2
            m1 = self.kv1.m
            flat = self.control.transpose(1, 0, 2).reshape(kv.m, m1 * 3)
            new = _elevate_curve(kv.knots, kv.degree, flat)
            kv_new, _ = kv.elevate()
            ctrl = new.reshape(kv_new.m, m1, 3).transpose(1, 0, 2)
            return BSplinePatch(self.kv1, kv_new, ctrl)
        raise ValueError("direction must be 1 or 2")

    def refined_uniform(self, sub1: int, sub2: int) -> "BSplinePatch":
        """Uniformly subdivide every span, per direction."""
        patch = self
        kv1, T1 = self.kv1.refined_uniform(sub1)
        kv2, T2 = self.kv2.refined_uniform(sub2)
        ctrl = np.einsum("ij,jkc->ikc", T1, patch.control)
        ctrl = np.einsum("ij,kjc->kic", T2, ctrl)
        return BSplinePatch(kv1, kv2, ctrl)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "degrees": [self.kv1.degree, self.kv2.degree],
            "knots": [self.kv1.to_list(), self.kv2.to_list()],
            "control_points": self.flat_control().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BSplinePatch":
        p1, p2 = data["degrees"]
        kv1 = KnotVector(np.asarray(data["knots"][0], float), p1)
        kv2 = KnotVector(np.asarray(data["knots"][1], float), p2)
        pts = np.asarray(data["control_points"], float)
        ctrl = pts.reshape(kv2.m, kv1.m, 3).transpose(1, 0, 2)
        return cls(kv1, kv2, ctrl)


def uniform_open_knots(degree: int, n_spans: int, lo: float = 0.0, hi: float = 1.0) -> KnotVector:
    """Open knot vector with ``n_spans`` equal spans over [lo, hi]."""
    interior = np.linspace(lo, hi, n_spans + 1)[1:-1]
    knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
    return KnotVector(knots, degree)


def flat_patch(degree1: int, degree2: int, n1: int, n2: int, lx: float, ly: float,
               z: float = 0.0) -> BSplinePatch:
    """Planar patch mapping [0,lx]x[0,ly] to itself (arc-length parameterized).

    Control points sit at the Greville ordinates, so the geometry map is
    the identity in-plane and all frames are cartesian.
    """
    kv1 = uniform_open_knots(degree1, n1, 0.0, lx)
    kv2 = uniform_open_knots(degree2, n2, 0.0, ly)
    g1, g2 = kv1.greville(), kv2.greville()
    ctrl = np.zeros((kv1.m, kv2.m, 3))
    ctrl[:, :, 0] = g1[:, None]
    ctrl[:, :, 1] = g2[None, :]
    ctrl[:, :, 2] = z
    return BSplinePatch(kv1, kv2, ctrl)
