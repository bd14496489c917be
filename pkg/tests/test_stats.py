import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdisco.stats import clopper_pearson, width_trend


@pytest.mark.parametrize("n", [1, 2, 7, 50, 200, 1000])
def test_closed_form_endpoints(n):
    assert abs(clopper_pearson(0, n)[1] - (1 - 0.025 ** (1 / n))) < 1e-12
    assert abs(clopper_pearson(n, n)[0] - 0.025 ** (1 / n)) < 1e-12
    assert clopper_pearson(0, n)[0] == 0.0 and clopper_pearson(n, n)[1] == 1.0


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 400), data=st.data())
def test_interval_contains_estimate_and_nests(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = clopper_pearson(k, n)
    assert 0 <= lo <= k / n <= hi <= 1
    lo99, hi99 = clopper_pearson(k, n, alpha=0.01)
    assert lo99 <= lo + 1e-12 and hi <= hi99 + 1e-12
    # symmetry k <-> n - k
    lo2, hi2 = clopper_pearson(n - k, n)
    assert abs(lo - (1 - hi2)) < 1e-9 and abs(hi - (1 - lo2)) < 1e-9


def test_interval_edge_cases():
    assert clopper_pearson(0, 0) == (0.0, 1.0)
    with pytest.raises(ValueError):
        clopper_pearson(5, 3)
    lo, hi = clopper_pearson(5, 10)
    assert abs(lo - 0.18708602844739855) < 1e-9 and abs(hi - 0.8129139715526015) < 1e-9


def test_width_trend():
    w = np.repeat(np.arange(9, 15), 50)
    flat = width_trend(w, np.tile([1, 1, 1, 0, 1], 60))
    assert flat.lo < 0 < flat.hi and not flat.negative
    decaying = width_trend(w, (np.random.default_rng(0).random(w.size) < 1.6 - 0.1 * w))
    assert decaying.negative
    assert width_trend([9, 9, 9], [1, 0, 1]).lo == -np.inf
    perfect = width_trend(w, np.ones(w.size))
    assert perfect.slope == perfect.lo == perfect.hi == 0.0
