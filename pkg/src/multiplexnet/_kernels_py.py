"""Pure numpy elementwise kernels; the fallback for ``_kernels``."""
import numpy as np

BACKEND = "python"


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log_expm1(x):
    """log(exp(x) - 1) for x > 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    big = x > 30.0
    out[big] = x[big] + np.log1p(-np.exp(-x[big]))
    out[~big] = np.log(np.expm1(x[~big]))
    return out


def log_expm1_grad(x):
    """d/dx log(exp(x) - 1) = 1 / (1 - exp(-x))."""
    x = np.asarray(x, dtype=np.float64)
    return -1.0 / np.expm1(-x)


def interval(raw, lower, upper):
    """upper - softplus(log_expm1(upper - lower) - softplus(raw))."""
    return upper - softplus(log_expm1(upper - lower) - softplus(raw))
