import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays


def matrices(min_side=1, max_side=12, elements=None):
    """Finite float64 matrices of moderate magnitude."""
    elements = elements or st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=64)
    shape = st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=elements))
