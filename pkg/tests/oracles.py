"""Independent reference computations shared by the test modules."""

import mpmath


def series_cdf(x):
    """Phi(x) = 1/2 + phi(x) sum_k x^(2k+1) / (2k+1)!! in multiprecision."""
    x = mpmath.mpf(x)
    term = x
    total = x
    k = 0
    while abs(term) > mpmath.mpf(10) ** (-45) * max(1, abs(total)):
        k += 1
        term *= x * x / (2 * k + 1)
        total += term
    return mpmath.mpf("0.5") + mpmath.npdf(x) * total


def phi_max_error(norm_cdf, lo=-8.0, hi=8.0, step=1e-3):
    """Largest |norm_cdf - Phi| on a uniform grid against the series oracle."""
    import numpy as np

    mpmath.mp.dps = 50
    k = np.arange(int(round(lo / step)), int(round(hi / step)) + 1)
    grid = k * step
    oracle = np.array([float(series_cdf(mpmath.mpf(int(v)) * mpmath.mpf(step))) for v in k])
    return float(np.max(np.abs(norm_cdf(grid) - oracle)))
