"""Finite-difference heat equation on the unit square.

Fields live on the ``nx*ny`` interior nodes of a uniform grid with homogeneous
Dirichlet closure; node ``(i, j)`` sits at ``((i+1)*hx, (j+1)*hy)`` and is
stored at flat index ``j*nx + i`` (one grid line per ``j``).  Controls are
supported on the nodes inside the closed square ``[1/3, 2/3]^2``.

Time stepping is implicit Euler.  With ``R = (I + dt*A)^{-1}`` and ``A`` the
5-point negative Laplacian scaled by ``nu``::

    y[m+1] = R (y[m] + dt * B v[m])        m = 0 .. L-1
    p[m]   = R p[m+1]

Control snapshot ``v[m]`` acts on the step ``t_m -> t_{m+1}``.  Because ``R`` is
symmetric the backward recursion is the exact transpose of the forward one,
so the reduced gradient is ``alpha*v[m] + B^T p[m]``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from . import _kernels
from .errors import ConfigurationError, NumericalError, ShapeError

OMEGA_C = (1.0 / 3.0, 2.0 / 3.0)
_MASK_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Interior nodes of a uniform grid on [0, 1]^2."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError(f"grid needs at least one interior node per axis, got {self.nx}x{self.ny}")
        if self.control_idx.size == 0:
            raise ConfigurationError(f"{self.nx}x{self.ny} grid has no node inside the control square")

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx + 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny + 1)

    @property
    def h(self) -> float:
        """Mesh spacing (x direction; equal to ``hy`` on square grids)."""
        return self.hx

    @property
    def cell(self) -> float:
        """Quadrature weight of one node in the discrete L2 products."""
        return self.hx * self.hy

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat ``(x, y)`` coordinate arrays in storage order."""
        x = (np.arange(self.nx) + 1) * self.hx
        y = (np.arange(self.ny) + 1) * self.hy
        xx, yy = np.meshgrid(x, y)  # rows are grid lines j
        return xx.ravel(), yy.ravel()

    @cached_property
    def control_idx(self) -> np.ndarray:
        lo, hi = OMEGA_C
        x, y = self.coords
        inside = (
            (x >= lo - _MASK_TOL) & (x <= hi + _MASK_TOL)
            & (y >= lo - _MASK_TOL) & (y <= hi + _MASK_TOL)
        )
        return np.flatnonzero(inside).astype(np.int64)

    @property
    def n_control(self) -> int:
        return int(self.control_idx.size)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform fine time grid ``t_m = m*dt``, ``m = 0..M``."""

    T: float
    M: int

    def __post_init__(self):
        if self.M < 1:
            raise ConfigurationError(f"need at least one time step, got M={self.M}")
        if not self.T > 0:
            raise ConfigurationError(f"horizon must be positive, got T={self.T}")

    @classmethod
    def from_step(cls, T: float, dt: float) -> "TimeGrid":
        if not dt > 0:
            raise ConfigurationError(f"time step must be positive, got dt={dt}")
        M = int(round(T / dt))
        if M < 1 or abs(M * dt - T) > 1e-9 * max(1.0, abs(T)):
            raise ConfigurationError(f"T={T} is not an integer multiple of dt={dt}")
        return cls(T, M)

    @property
    def dt(self) -> float:
        return self.T / self.M


@dataclass
class OpCounter:
    """Linear-solve tally under two cost models.

    ``serial`` sums every solve.  ``parallel`` charges a batch of concurrent
    tasks only with its most expensive task, so it never exceeds ``serial``.
    """

    serial: int = 0
    parallel: int = 0

    def add(self, solves: int) -> None:
        self.serial += solves
        self.parallel += solves

    def merge_batch(self, counters) -> None:
        counters = list(counters)
        if not counters:
            return
        self.serial += sum(c.serial for c in counters)
        self.parallel += max(c.parallel for c in counters)

    def snapshot(self) -> tuple[int, int]:
        return self.serial, self.parallel


def _count(counter, solves):
    if counter is not None:
        counter.add(solves)


@dataclass(eq=False)
class DiscreteOperator:
    """``nu`` times the 5-point negative Dirichlet Laplacian, with cached factorizations.

    Immutable after assembly apart from the factor cache, which is filled
    under a lock so instances may be shared between worker threads.
    """

    grid: Grid
    nu: float
    matrix: sp.csr_matrix
    _band: np.ndarray = field(repr=False)
    _factors: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def factor(self, dt: float) -> np.ndarray:
        """Lower banded Cholesky factor of ``I + dt*A``."""
        key = float(dt)
        cb = self._factors.get(key)
        if cb is None:
            with self._lock:
                cb = self._factors.get(key)
                if cb is None:
                    band = dt * self._band
                    band[0] += 1.0
                    cb = _kernels.band_cholesky(band)
                    self._factors[key] = cb
        return cb

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    @cached_property
    def laplacian_min_eig(self) -> float:
        """Smallest eigenvalue of the unscaled discrete ``-Laplacian``."""
        n = self.grid.size
        lap = self.matrix / self.nu
        if n <= 64:
            return float(np.linalg.eigvalsh(lap.toarray())[0])
        val = eigsh(lap.tocsc(), k=1, sigma=0.0, which="LM", return_eigenvectors=False)
        return float(val[0])

    @property
    def poincare_constant(self) -> float:
        """Discrete Poincare constant ``C`` with ``|f| <= C |grad f|``."""
        return 1.0 / np.sqrt(self.laplacian_min_eig)


def assemble_operator(grid: Grid, nu: float) -> DiscreteOperator:
    """Assemble ``nu * (-Delta_h)`` on ``grid`` (SPD)."""
    if not nu > 0:
        raise ConfigurationError(f"diffusivity must be positive, got nu={nu}")
    nx, ny = grid.nx, grid.ny
    cx, cy = nu / grid.hx**2, nu / grid.hy**2
    d1x = sp.diags([-np.ones(nx - 1), 2 * np.ones(nx), -np.ones(nx - 1)], [-1, 0, 1])
    d1y = sp.diags([-np.ones(ny - 1), 2 * np.ones(ny), -np.ones(ny - 1)], [-1, 0, 1])
    mat = (cx * sp.kron(sp.eye(ny), d1x) + cy * sp.kron(d1y, sp.eye(nx))).tocsr()

    n = grid.size
    # lower band storage: band[k, j] = A[j + k, j]; bandwidth nx
    band = np.zeros((nx + 1, n))
    band[0] = 2 * cx + 2 * cy
    if nx > 1:
        sub = np.full(n - 1, -cx)
        sub[np.arange(1, n) % nx == 0] = 0.0  # no coupling across grid lines
        band[1, : n - 1] = sub
    if ny > 1:
        band[nx, : n - nx] = -cy
    return DiscreteOperator(grid=grid, nu=float(nu), matrix=mat, _band=band)


# --------------------------------------------------------------------------
# injection / restriction and discrete inner products
# --------------------------------------------------------------------------

def inject(c: np.ndarray, grid: Grid) -> np.ndarray:
    """Extend a control snapshot (or a stack of them) by zero to the whole grid."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != grid.n_control:
        raise ShapeError(f"control has {c.shape[-1]} entries, grid has {grid.n_control} control nodes")
    out = np.zeros(c.shape[:-1] + (grid.size,))
    out[..., grid.control_idx] = c
    return out


def restrict(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Values at the control nodes; the adjoint of :func:`inject`."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.size:
        raise ShapeError(f"field has {f.shape[-1]} entries, grid has {grid.size} nodes")
    return f[..., grid.control_idx]


def field_inner(grid: Grid, a, b) -> float:
    return grid.cell * float(np.dot(np.ravel(a), np.ravel(b)))


def field_norm(grid: Grid, a) -> float:
    return np.sqrt(field_inner(grid, a, a))


def control_inner(grid: Grid, dt: float, a, b) -> float:
    """``L2(I; Omega_c)`` product of two control trajectories on the same window."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"control windows differ: {a.shape} vs {b.shape}")
    return dt * grid.cell * float(np.dot(a.ravel(), b.ravel()))


def control_norm(grid: Grid, dt: float, a) -> float:
    return np.sqrt(control_inner(grid, dt, a, a))


# --------------------------------------------------------------------------
# propagators
# --------------------------------------------------------------------------

def _check_finite(traj, what):
    if not np.all(np.isfinite(traj)):
        bad = int(np.sum(~np.isfinite(traj)))
        raise NumericalError(f"{what} produced {bad} non-finite values")
    return traj


def forward_solve(op: DiscreteOperator, dt: float, y_init, v, counter: OpCounter | None = None):
    """Implicit-Euler state trajectory driven by controls ``v`` (shape ``(L, n_control)``).

    Returns all ``L + 1`` fields including both endpoints.
    """
    grid = op.grid
    y_init = np.ascontiguousarray(y_init, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    if y_init.shape != (grid.size,):
        raise ShapeError(f"initial field has shape {y_init.shape}, expected ({grid.size},)")
    if v.ndim != 2 or v.shape[1] != grid.n_control or v.shape[0] < 1:
        raise ShapeError(f"control window has shape {v.shape}, expected (L, {grid.n_control})")
    traj = _kernels.forward_sweep(op.factor(dt), grid.control_idx, y_init, v, float(dt))
    _count(counter, v.shape[0])
    return _check_finite(traj, "forward sweep")


def free_solve(op: DiscreteOperator, dt: float, y_init, steps: int, counter: OpCounter | None = None):
    """Uncontrolled forward evolution over ``steps`` steps."""
    return forward_solve(op, dt, y_init, np.zeros((steps, op.grid.n_control)), counter)


def backward_solve(op: DiscreteOperator, dt: float, p_final, steps: int, counter: OpCounter | None = None):
    """Homogeneous adjoint trajectory ``p[m] = R p[m+1]`` from ``p[steps] = p_final``."""
    grid = op.grid
    p_final = np.ascontiguousarray(p_final, dtype=float)
    if p_final.shape != (grid.size,):
        raise ShapeError(f"terminal field has shape {p_final.shape}, expected ({grid.size},)")
    if steps < 1:
        raise ShapeError(f"backward window needs at least one step, got {steps}")
    traj = _kernels.backward_sweep(op.factor(dt), p_final, int(steps))
    _count(counter, steps)
    return _check_finite(traj, "backward sweep")


# --------------------------------------------------------------------------
# plain-text grid dumps
# --------------------------------------------------------------------------

def dump_field(stream, f, grid: Grid, t: float = 0.0) -> None:
    """Write ``f`` as ``ny`` lines of ``nx`` values after a ``# nx ny h t`` header."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.size,):
        raise ShapeError(f"field has shape {f.shape}, expected ({grid.size},)")
    stream.write(f"# {grid.nx} {grid.ny} {grid.h!r} {float(t)!r}\n")
    for row in f.reshape(grid.ny, grid.nx):
        stream.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_field(stream) -> tuple[np.ndarray, Grid, float]:
    """Inverse of :func:`dump_field`."""
    header = stream.readline().split()
    if len(header) != 5 or header[0] != "#":
        raise ShapeError(f"bad field dump header: {' '.join(header)!r}")
    grid = Grid(int(header[1]), int(header[2]))
    t = float(header[4])
    rows = [list(map(float, line.split())) for line in stream if line.strip()]
    f = np.asarray(rows, dtype=float)
    if f.shape != (grid.ny, grid.nx):
        raise ShapeError(f"dump body has shape {f.shape}, header says {(grid.ny, grid.nx)}")
    return f.ravel(), grid, t
