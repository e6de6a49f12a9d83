import numpy as np


def central_diff(f, point, h=1e-6):
    """Central finite-difference gradient of scalar f at point."""
    point = [float(v) for v in point]
    out = []
    for i in range(len(point)):
        hi = list(point)
        lo = list(point)
        hi[i] += h
        lo[i] -= h
        out.append((f(hi) - f(lo)) / (2.0 * h))
    return np.array(out)


def central_diff_jacobian(r, point, h=1e-6):
    """Central finite-difference Jacobian of vector-valued r at point."""
    point = [float(v) for v in point]
    cols = []
    for i in range(len(point)):
        hi = list(point)
        lo = list(point)
        hi[i] += h
        lo[i] -= h
        cols.append((np.asarray(r(hi)) - np.asarray(r(lo))) / (2.0 * h))
    return np.stack(cols, axis=1)
