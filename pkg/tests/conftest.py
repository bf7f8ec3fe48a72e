import numpy as np
import pytest

from mtf.splines import BSplinePatch, KnotVector

# Bi-quadratic single-span patch over a deliberately distorted quadrilateral;
# used throughout as the standard non-orthogonal flat geometry.
DISTORTED_CONTROL = np.array([
    [0.3, 0.3, 0.0], [0.8, 0.3, 0.0], [1.3, 0.3, 0.0],
    [0.3, 0.8, 0.0], [0.9, 0.9, 0.0], [1.3, 0.8, 0.0],
    [0.3, 1.3, 0.0], [0.8, 1.3, 0.0], [1.3, 1.3, 0.0],
])


@pytest.fixture
def table_c1_patch():
    kv = KnotVector([0, 0, 0, 1, 1, 1], 2)
    ctrl = DISTORTED_CONTROL.reshape(3, 3, 3).transpose(1, 0, 2)
    return BSplinePatch(kv, kv, ctrl)
