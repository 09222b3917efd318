import math

import numpy as np

from diptv.utils.numerical import derive_seed, median, rng_streams


def test_derive_seed():
    a = derive_seed("phantom:64", "gaussian:1.6,9", 25.0)
    assert a == derive_seed("phantom:64", "gaussian:1.6,9", 25.0)
    assert a != derive_seed("phantom:64", "gaussian:1.6,9", 50.0)
    assert a != derive_seed("phantom:64", "none", 25.0)
    assert 0 <= a < 2 ** 32


def test_rng_streams():
    a, b = rng_streams(3, 2)
    x, y = a.standard_normal(100), b.standard_normal(100)
    assert not np.array_equal(x, y)
    a2, _ = rng_streams(3, 2)
    assert np.array_equal(a2.standard_normal(100), x)


def test_median():
    assert median([3.0, 1.0, 2.0]) == 2.0
    assert median([1.0, None, float("nan"), 3.0]) == 2.0
    assert math.isnan(median([None]))
