"""Differential geometry on B-spline surfaces.

Builds the local curvilinear frame (covariant/contravariant bases, metric,
curvature tensor, Christoffel symbols) at a parametric point of a patch,
optionally displaced by a coefficient field sharing the patch basis, and
provides the pointwise Laplace-Beltrami operator row used by collocation.

All quantities are evaluated on the mid-surface; the out-of-plane
Christoffel slots (k = 3) are retained because the surface Laplacian
contraction formally runs over all three frame directions, with the unit
normal playing the role of the third contravariant vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SurfaceFrame", "SingularGeometryError", "frame_at", "christoffel_at",
           "laplace_beltrami_row"]

DEGENERATE_NORMAL = 1e-14


class SingularGeometryError(ValueError):
    """Surface tangents are (numerically) parallel at the evaluation point."""


@dataclass(frozen=True)
class SurfaceFrame:
    """Local frame of a surface at one parametric point.

    Attributes
    ----------
    a1, a2 : covariant tangent vectors (first parametric derivatives)
    a3 : unit normal, right-hand oriented
    d2 : second derivatives, ``d2[(alpha, beta)]`` for (1,1), (2,2), (1,2)
    metric : covariant metric a_{ab}, 2x2
    metric_inv : contravariant metric a^{ab}
    acon : contravariant tangents as rows, acon[a] = a^a
    curvature : second fundamental form b_{ab}
    christoffel : Gamma^a_{bk}, shape (2, 2, 3), k in {1, 2, 3}
    jacobian : ||a1 x a2|| (area measure)
    """

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    d2: dict
    metric: np.ndarray
    metric_inv: np.ndarray
    acon: np.ndarray
    curvature: np.ndarray
    christoffel: np.ndarray
    jacobian: float

    @property
    def covariant(self):
        return np.array([self.a1, self.a2])


def _frame_from_derivatives(r1, r2, r11, r22, r12):
    cross = np.cross(r1, r2)
    jac = float(np.linalg.norm(cross))
    if jac < DEGENERATE_NORMAL:
        raise SingularGeometryError(
            f"degenerate surface point: ||a1 x a2|| = {jac:.3e}")
    a3 = cross / jac
    cov = np.array([r1, r2])
    metric = cov @ cov.T
    metric_inv = np.linalg.inv(metric)
    acon = metric_inv @ cov
    d2 = {(1, 1): r11, (2, 2): r22, (1, 2): r12}
    dd = np.array([[r11, r12], [r12, r22]])  # a_{alpha,beta}
    curvature = np.einsum("abc,c->ab", dd, a3)
    # normal derivatives a_{3,beta} from the Weingarten relations
    a3_d = -np.einsum("bg,gc->bc", curvature, acon)
    gamma = np.zeros((2, 2, 3))
    for al in range(2):
        for be in range(2):
            for k in range(2):
                gamma[al, be, k] = dd[be, k] @ acon[al]
            gamma[al, be, 2] = a3_d[be] @ acon[al]
    return SurfaceFrame(r1, r2, a3, d2, metric, metric_inv, acon, curvature, gamma, jac)


def frame_at(patch, t1: float, t2: float, displacement=None) -> SurfaceFrame:
    """Surface frame of ``patch`` at (t1, t2).

    ``displacement`` is an optional control-coefficient array on the same
    basis (shape (n, 3) flat or (m1, m2, 3)); when given, the frame
    describes the displaced configuration, otherwise the reference one.
    """
    out = patch.evaluate(t1, t2, order=2, displacement=displacement)
    return _frame_from_derivatives(out["r1"], out["r2"], out["r11"], out["r22"], out["r12"])


def christoffel_at(patch, t1: float, t2: float, displacement=None) -> np.ndarray:
    """Christoffel symbols Gamma^a_{bk} of the patch at a point, shape (2,2,3)."""
    return frame_at(patch, t1, t2, displacement).christoffel


def laplace_beltrami_row(frame: SurfaceFrame, dN: np.ndarray, ddN: np.ndarray) -> np.ndarray:
    """Row coefficients of the surface Laplacian at the frame's point.

    ``dN`` has rows (N_{,1}, N_{,2}) and ``ddN`` rows (N_{,11}, N_{,22},
    N_{,12}) over the active basis functions.  Applied to a coefficient
    vector of a scalar field, the returned row yields the Laplace-Beltrami
    value of that field at the point.
    """
    hinv = frame.metric_inv
    row = hinv[0, 0] * ddN[0] + hinv[1, 1] * ddN[1] + 2.0 * hinv[0, 1] * ddN[2]
    # drift coefficient c^g = Gamma^g_{bk} h^{kb}; the k = 3 slot drops out
    # because a^3 is orthogonal to the tangent plane
    gamma = frame.christoffel
    for g in range(2):
        c = sum(gamma[g, b, k] * hinv[k, b] for b in range(2) for k in range(2))
        row = row - c * dN[g]
    return row
