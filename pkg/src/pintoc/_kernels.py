"""Implicit-Euler sweep kernels.

Every propagation in the package reduces to repeated solves with the banded
SPD matrix ``I + dt*A``.  The matrix is factored once (lower banded Cholesky,
LAPACK storage ``cb[i - j, j] = L[i, j]``) and a whole sweep of time steps is
run inside a single kernel call.

Two interchangeable backends are provided:

* ``numba``: ``@njit(nogil=True)`` loops doing the triangular substitutions by
  hand; releases the GIL so worker threads run sweeps concurrently.
* ``numpy``: a Python loop over time steps calling LAPACK ``pbtrs`` through
  :func:`scipy.linalg.cho_solve_banded`.

The backend is chosen at import from ``PINTOC_NUMBA`` (``0``/``false``/``off``
selects numpy) and can be switched at runtime with :func:`use_backend`.
"""
import os

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    njit = None

HAVE_NUMBA = njit is not None


def band_cholesky(band_lower):
    """Factor a symmetric band matrix given in lower LAPACK storage."""
    return np.ascontiguousarray(cholesky_banded(band_lower, lower=True))


# --------------------------------------------------------------------------
# numpy / LAPACK path
# --------------------------------------------------------------------------

def numpy_forward_sweep(cb, ctrl_idx, y0, v, dt):
    steps = v.shape[0]
    out = np.empty((steps + 1, y0.shape[0]))
    out[0] = y0
    rhs = np.empty_like(y0)
    for m in range(steps):
        rhs[:] = out[m]
        rhs[ctrl_idx] += dt * v[m]
        out[m + 1] = cho_solve_banded((cb, True), rhs, check_finite=False)
    return out


def numpy_backward_sweep(cb, p_final, steps):
    out = np.empty((steps + 1, p_final.shape[0]))
    out[steps] = p_final
    for m in range(steps - 1, -1, -1):
        out[m] = cho_solve_banded((cb, True), out[m + 1], check_finite=False)
    return out


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _band_solve_inplace(cb, x):
        n = x.shape[0]
        u = cb.shape[0] - 1
        for i in range(n):
            s = x[i]
            lo = i - u if i > u else 0
            for j in range(lo, i):
                s -= cb[i - j, j] * x[j]
            x[i] = s / cb[0, i]
        for i in range(n - 1, -1, -1):
            s = x[i]
            hi = i + u + 1 if i + u + 1 < n else n
            for j in range(i + 1, hi):
                s -= cb[j - i, i] * x[j]
            x[i] = s / cb[0, i]

    @njit(cache=True, nogil=True)
    def numba_forward_sweep(cb, ctrl_idx, y0, v, dt):
        steps = v.shape[0]
        n = y0.shape[0]
        out = np.empty((steps + 1, n))
        out[0] = y0
        for m in range(steps):
            x = out[m].copy()
            for c in range(ctrl_idx.shape[0]):
                x[ctrl_idx[c]] += dt * v[m, c]
            _band_solve_inplace(cb, x)
            out[m + 1] = x
        return out

    @njit(cache=True, nogil=True)
    def numba_backward_sweep(cb, p_final, steps):
        n = p_final.shape[0]
        out = np.empty((steps + 1, n))
        out[steps] = p_final
        for m in range(steps - 1, -1, -1):
            x = out[m + 1].copy()
            _band_solve_inplace(cb, x)
            out[m] = x
        return out

else:  # pragma: no cover
    numba_forward_sweep = numpy_forward_sweep
    numba_backward_sweep = numpy_backward_sweep


_BACKENDS = {
    "numba": (numba_forward_sweep, numba_backward_sweep),
    "numpy": (numpy_forward_sweep, numpy_backward_sweep),
}


def _default_backend():
    flag = os.environ.get("PINTOC_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "off", "no") or not HAVE_NUMBA:
        return "numpy"
    return "numba"


backend = _default_backend()
forward_sweep, backward_sweep = _BACKENDS[backend]


def use_backend(name):
    """Select the sweep implementation (``"numba"`` or ``"numpy"``); returns the previous one."""
    global backend, forward_sweep, backward_sweep
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    previous = backend
    backend = name
    forward_sweep, backward_sweep = _BACKENDS[name]
    return previous
