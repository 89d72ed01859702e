import numpy as np

from skelretarget.solver import jacobian


def central_differences(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        d = np.zeros_like(x)
        d[i] = h
        cols.append((np.asarray(f(x + d)) - np.asarray(f(x - d))) / (2 * h))
    return np.stack(cols, axis=1)


def dense_jacobian(problem, x):
    J = jacobian(problem, x)
    return J.toarray() if hasattr(J, "toarray") else J


def jacobian_error(problem, x, h=1e-6):
    """Max of |autodiff - fd| / max(|fd|, 1) over all entries."""
    fd = central_differences(problem.evaluate, x, h)
    return float(np.max(np.abs(dense_jacobian(problem, x) - fd) / np.maximum(np.abs(fd), 1.0)))
