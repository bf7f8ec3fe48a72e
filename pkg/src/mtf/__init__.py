"""Electromechanical simulation of layered muscular thin films.

The package couples an isogeometric Galerkin Kirchhoff-Love shell solver
(one patch, layered through the thickness, active-stress contraction) to
a monodomain electrophysiology solver discretized by isogeometric
collocation at Greville points.
"""

from mtf.splines import BSplinePatch, KnotVector

__version__ = "0.1.0"

__all__ = ["BSplinePatch", "KnotVector", "__version__"]
