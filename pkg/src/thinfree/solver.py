"""Thin obstacle problem on a truncated half box.

The domain is ``[-L, L]^n x [0, L]`` sampled with spacing ``h``.  Even
symmetry across the thin plane ``z = 0`` is built into the plane stencil, so
only the upper half is stored.  The discrete problem is the linear
complementarity system

    u >= phi,   -L_h u >= 0,   (u - phi) * L_h u = 0      on plane nodes,
    L_h u = 0                                            at off-plane nodes,

with Dirichlet data on the faces ``|x_i| = L`` and ``z = L``.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator

from . import _kernels
from .validation import check_grid_array, check_scalar

__all__ = [
    "SolverDomain",
    "ObstacleProblemSpec",
    "SolutionField",
    "Residuals",
    "ThinObstacleSolver",
    "build_domain",
    "solve_thin_obstacle",
    "lcp_bruteforce",
    "residuals",
    "discrete_laplacian",
    "optimal_omega",
    "LCPError",
]

NODE_BUDGET = 4_000_000
DEFAULT_OMEGA = 1.8
DEFAULT_TOL = 1e-8


class LCPError(RuntimeError):
    """Raised when the complementarity oracle finds no consistent assignment."""


def _as_count(x, name):
    c = round(x)
    if abs(x - c) > 1e-9 * max(1.0, abs(x)):
        raise ValueError(f"{name} = {x!r} is not an integer number of cells")
    return int(c)


@dataclass(frozen=True)
class SolverDomain:
    n: int
    L: float
    h: float
    dims: tuple

    @property
    def cells(self):
        """Number of cells between the thin plane and the top face."""
        return self.dims[-1] - 1

    @property
    def thin_shape(self):
        return self.dims[:-1]

    @property
    def size(self):
        return int(np.prod(self.dims))

    def thin_axis(self):
        return -self.L + self.h * np.arange(self.dims[0])

    def normal_axis(self):
        return self.h * np.arange(self.dims[-1])

    def plane_coords(self):
        """Coordinate arrays (``indexing='ij'``) of the thin-plane nodes."""
        ax = self.thin_axis()
        return np.meshgrid(*([ax] * self.n), indexing="ij")

    def plane_radius(self):
        return np.sqrt(sum(c**2 for c in self.plane_coords()))

    def grid_coords(self):
        ax = self.thin_axis()
        return np.meshgrid(*([ax] * self.n), self.normal_axis(), indexing="ij")

    def boundary_mask(self):
        """Nodes carrying Dirichlet data (outer faces, including the plane's rim)."""
        m = np.zeros(self.dims, dtype=bool)
        for ax in range(self.n):
            idx = [slice(None)] * (self.n + 1)
            idx[ax] = 0
            m[tuple(idx)] = True
            idx[ax] = -1
            m[tuple(idx)] = True
        m[..., -1] = True
        return m

    def plane_interior_mask(self):
        m = np.zeros(self.thin_shape, dtype=bool)
        m[(slice(1, -1),) * self.n] = True
        return m

    def origin_index(self):
        c = self.dims[0] // 2
        return (c,) * self.n


def build_domain(n, L, h, max_nodes=NODE_BUDGET):
    """Create the half grid; node ``(i, j, k)`` sits at ``(-L + ih, -L + jh, kh)``."""
    n = check_scalar(n, "n", integer=True)
    if n not in (1, 2):
        raise ValueError(f"thin-space dimension n={n} is not supported (use 1 or 2)")
    L = float(check_scalar(L, "L", lo=0, lo_open=True))
    h = float(check_scalar(h, "h", lo=0, lo_open=True))
    m = _as_count(L / h, "L/h")
    dims = (2 * m + 1,) * n + (m + 1,)
    if int(np.prod(dims)) > max_nodes:
        raise ValueError(f"grid {dims} exceeds the node budget of {max_nodes}")
    return SolverDomain(n=n, L=L, h=h, dims=dims)


def optimal_omega(domain):
    """SOR factor ``2 / (1 + sin(pi h / 2L))`` for the half-box Laplacian."""
    return 2.0 / (1.0 + math.sin(math.pi * domain.h / (2.0 * domain.L)))


def _broadcast_field(value, domain, shape, name):
    if callable(value):
        coords = domain.plane_coords() if shape == domain.thin_shape else domain.grid_coords()
        return np.broadcast_to(np.asarray(value(*coords), dtype=float), shape).copy()
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    return check_grid_array(arr, shape, name).copy()


@dataclass(frozen=True, eq=False)
class ObstacleProblemSpec:
    """Obstacle on the plane, Dirichlet data on the outer faces, PSOR settings.

    ``obstacle`` and ``boundary`` accept scalars, arrays of the plane/grid
    shape, or callables evaluated on the node coordinates.  Only boundary-node
    entries of ``boundary`` are used.
    """

    domain: SolverDomain
    obstacle: np.ndarray
    boundary: np.ndarray
    omega: float = DEFAULT_OMEGA
    tol: float = DEFAULT_TOL
    max_sweeps: int | None = None

    def __post_init__(self):
        d = self.domain
        obs = _broadcast_field(self.obstacle, d, d.thin_shape, "obstacle")
        bnd = _broadcast_field(self.boundary, d, d.dims, "boundary")
        if np.isnan(obs).any():
            raise ValueError("obstacle contains NaN")
        if not np.all(np.isfinite(bnd[d.boundary_mask()])):
            raise ValueError("boundary data must be finite at every outer node")
        bnd[~d.boundary_mask()] = 0.0
        check_scalar(self.omega, "omega", lo=0, hi=2, lo_open=True, hi_open=True)
        check_scalar(self.tol, "tol", lo=0, lo_open=True)
        sweeps = self.max_sweeps
        if sweeps is None:
            sweeps = 50 * d.cells**2
        check_scalar(sweeps, "max_sweeps", lo=1, integer=True)
        obs.setflags(write=False)
        bnd.setflags(write=False)
        object.__setattr__(self, "obstacle", obs)
        object.__setattr__(self, "boundary", bnd)
        object.__setattr__(self, "max_sweeps", int(sweeps))

    def replace(self, **changes):
        kw = dict(domain=self.domain, obstacle=self.obstacle, boundary=self.boundary,
                  omega=self.omega, tol=self.tol, max_sweeps=self.max_sweeps)
        kw.update(changes)
        return ObstacleProblemSpec(**kw)


@dataclass(frozen=True, eq=False)
class SolutionField:
    domain: SolverDomain
    values: np.ndarray
    sweeps_used: int = 0
    converged: bool = True
    method: str = "psor"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        check_grid_array(v, self.domain.dims, "values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def plane(self):
        return self.values[..., 0]


def _initial_guess(spec, u0):
    d = spec.domain
    if u0 is None:
        u = np.zeros(d.dims)
    else:
        u = np.array(u0.values if isinstance(u0, SolutionField) else u0, dtype=float)
        check_grid_array(u, d.dims, "u0")
    bmask = d.boundary_mask()
    u[bmask] = spec.boundary[bmask]
    interior = d.plane_interior_mask()
    plane = u[..., 0]
    plane[interior] = np.maximum(plane[interior], spec.obstacle[interior])
    return np.ascontiguousarray(u)


def _slabs(nx, workers):
    edges = np.linspace(1, nx - 1, workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def solve_thin_obstacle(spec, u0=None, sweep="lexicographic", workers=1):
    """Projected SOR for the discrete thin obstacle problem.

    Sweeps run until the largest nodal update drops below ``spec.tol`` or
    ``spec.max_sweeps`` is reached (then ``converged`` is False).  With
    ``sweep="redblack"`` each colour is split into ``workers`` slabs updated
    concurrently; nodes of one colour do not interact, so the iterates do not
    depend on the worker count.
    """
    d = spec.domain
    u = _initial_guess(spec, u0)
    phi = np.ascontiguousarray(spec.obstacle)
    omega = float(spec.omega)

    if sweep == "lexicographic":
        kernel = _kernels.sweep_lex3 if d.n == 2 else _kernels.sweep_lex2

        def one_sweep():
            return kernel(u, phi, omega)

        pool = None
    elif sweep == "redblack":
        kernel = _kernels.color_slab3 if d.n == 2 else _kernels.color_slab2
        slabs = _slabs(d.dims[0], max(1, int(workers)))
        pool = ThreadPoolExecutor(max_workers=len(slabs)) if len(slabs) > 1 else None

        def one_sweep():
            dmax = 0.0
            for color in (0, 1):
                if pool is None:
                    parts = [kernel(u, phi, omega, color, a, b) for a, b in slabs]
                else:
                    parts = list(pool.map(lambda ab: kernel(u, phi, omega, color, ab[0], ab[1]), slabs))
                dmax = max(dmax, max(parts))
            return dmax
    else:
        raise ValueError(f"unknown sweep order {sweep!r}")

    converged = False
    sweeps = 0
    try:
        while sweeps < spec.max_sweeps:
            sweeps += 1
            if one_sweep() < spec.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return SolutionField(d, u, sweeps_used=sweeps, converged=converged, method=f"psor-{sweep}")


class ThinObstacleSolver(BaseEstimator):
    """Estimator-style front end to :func:`solve_thin_obstacle`.

    Hyper-parameters live on the estimator (``get_params``/``set_params``);
    ``fit`` takes a problem spec and stores ``solution_``.  A value of
    ``omega="auto"`` uses :func:`optimal_omega` for the spec's grid.
    """

    def __init__(self, omega="auto", tol=DEFAULT_TOL, max_sweeps=None, sweep="lexicographic", workers=1):
        self.omega = omega
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.sweep = sweep
        self.workers = workers

    def fit(self, spec, u0=None):
        omega = optimal_omega(spec.domain) if self.omega == "auto" else self.omega
        spec = spec.replace(omega=omega, tol=self.tol, max_sweeps=self.max_sweeps)
        self.spec_ = spec
        self.solution_ = solve_thin_obstacle(spec, u0=u0, sweep=self.sweep, workers=self.workers)
        self.n_sweeps_ = self.solution_.sweeps_used
        return self

    def predict(self, spec=None):
        """Solution values on the grid (refitting when a new spec is given)."""
        if spec is not None:
            self.fit(spec)
        return self.solution_.values


# ---------------------------------------------------------------------------
# Discrete operator and diagnostics
# ---------------------------------------------------------------------------


def discrete_laplacian(values, domain):
    """``L_h u`` at every non-boundary node (NaN on boundary nodes)."""
    u = np.asarray(values, dtype=float)
    h2 = domain.h**2
    out = np.full(u.shape, np.nan)
    n = domain.n
    inner = (slice(1, -1),) * n
    # off-plane nodes
    acc = -2.0 * (n + 1) * u[inner + (slice(1, -1),)]
    for ax in range(n):
        for shift in (-1, 1):
            idx = [slice(1, -1)] * n
            idx[ax] = slice(1 + shift, u.shape[ax] - 1 + shift)
            acc = acc + u[tuple(idx) + (slice(1, -1),)]
    acc = acc + u[inner + (slice(0, -2),)] + u[inner + (slice(2, None),)]
    out[inner + (slice(1, -1),)] = acc / h2
    # plane nodes with reflected neighbour
    acc = -2.0 * (n + 1) * u[inner + (0,)] + 2.0 * u[inner + (1,)]
    for ax in range(n):
        for shift in (-1, 1):
            idx = [slice(1, -1)] * n
            idx[ax] = slice(1 + shift, u.shape[ax] - 1 + shift)
            acc = acc + u[tuple(idx) + (0,)]
    out[inner + (0,)] = acc / h2
    return out


@dataclass(frozen=True)
class Residuals:
    harmonic: float
    superharmonic: float
    complementarity: float
    boundary: float
    contact_nodes: int

    def within(self, bound):
        return max(self.harmonic, self.superharmonic, self.complementarity, self.boundary) <= bound


def residuals(field, spec, contact_tol=0.0):
    """Discrete diagnostics of a solution against its spec.

    ``harmonic`` is ``max |L_h u|`` over unknowns off the contact set,
    ``superharmonic`` the largest positive part of ``L_h u``,
    ``complementarity`` the largest ``|min(u - phi, -L_h u)|`` on the plane,
    and ``boundary`` the largest Dirichlet mismatch.
    """
    d = spec.domain
    if field.domain != d:
        raise ValueError("field and spec live on different grids")
    u = field.values
    lap = discrete_laplacian(u, d)
    unknown = ~d.boundary_mask()
    interior = d.plane_interior_mask()
    gap = u[..., 0] - spec.obstacle
    contact = np.zeros(d.dims, dtype=bool)
    contact[..., 0] = interior & (gap <= contact_tol)

    free = unknown & ~contact
    harmonic = float(np.abs(lap[free]).max()) if free.any() else 0.0
    superh = float(max(0.0, np.nanmax(lap[unknown]))) if unknown.any() else 0.0
    plane_lap = lap[..., 0][interior]
    comp = np.abs(np.minimum(gap[interior], -plane_lap))
    bmask = d.boundary_mask()
    bnd = float(np.abs(u[bmask] - spec.boundary[bmask]).max())
    return Residuals(
        harmonic=harmonic,
        superharmonic=superh,
        complementarity=float(comp.max()) if comp.size else 0.0,
        boundary=bnd,
        contact_nodes=int(contact.sum()),
    )


# ---------------------------------------------------------------------------
# Complementarity oracle
# ---------------------------------------------------------------------------


@dataclass
class _Assembly:
    A: sp.csr_matrix
    b: np.ndarray
    index: np.ndarray
    plane_rows: np.ndarray
    inner_rows: np.ndarray
    phi: np.ndarray


def _assemble(spec):
    """Rows of ``-h^2 L_h`` on the unknowns; ``A x = b`` when unconstrained."""
    d = spec.domain
    dims = d.dims
    unknown = ~d.boundary_mask()
    index = -np.ones(dims, dtype=np.int64)
    nodes = np.argwhere(unknown)
    index[tuple(nodes.T)] = np.arange(len(nodes))
    rows, cols, vals = [], [], []
    b = np.zeros(len(nodes))
    bnd = spec.boundary
    center = 2.0 * (d.n + 1)
    for r, node in enumerate(map(tuple, nodes)):
        rows.append(r)
        cols.append(r)
        vals.append(center)
        nbrs = []
        for ax in range(d.n + 1):
            for s in (-1, 1):
                q = list(node)
                q[ax] += s
                if ax == d.n and q[ax] < 0:
                    q[ax] = 1  # reflected neighbour
                nbrs.append(tuple(q))
        for q in nbrs:
            c = index[q]
            if c >= 0:
                rows.append(r)
                cols.append(int(c))
                vals.append(-1.0)
            else:
                b[r] += bnd[q]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(nodes), len(nodes)))
    on_plane = nodes[:, -1] == 0
    plane_nodes = nodes[on_plane]
    phi = spec.obstacle[tuple(plane_nodes[:, :-1].T)]
    return _Assembly(A, b, index, np.flatnonzero(on_plane), np.flatnonzero(~on_plane), phi)


def _schur(asm):
    P, I = asm.plane_rows, asm.inner_rows
    A = asm.A
    App = A[P][:, P].toarray()
    if len(I) == 0:
        return App, asm.b[P].copy(), None
    Aii = sp.csc_matrix(A[I][:, I])
    Aip = A[I][:, P].toarray()
    Api = A[P][:, I]
    lu = spla.splu(Aii)
    X = lu.solve(np.column_stack([Aip, asm.b[I]]))
    M = App - Api @ X[:, :-1]
    r = asm.b[P] - Api @ X[:, -1]
    return M, r, (lu, Aip, asm.b[I])


def _check_lcp(M, q, w, atol):
    z = M @ w + q
    return np.all(w >= -atol) and np.all(z >= -atol) and np.all(np.minimum(np.abs(w), np.abs(z)) <= atol)


def _enumerate(M, q, atol):
    m = len(q)
    for mask in itertools.product((False, True), repeat=m):
        free = np.array(mask, dtype=bool)
        w = np.zeros(m)
        if free.any():
            w[free] = np.linalg.solve(M[np.ix_(free, free)], -q[free])
        z = M @ w + q
        if np.all(w[free] >= -atol) and np.all(z[~free] >= -atol):
            return np.maximum(w, 0.0)
    raise LCPError("no consistent contact/free assignment")


def _pivot(M, q, atol, max_pivots=None):
    """Murty's least-index principal pivoting (finite for P-matrices)."""
    m = len(q)
    free = np.zeros(m, dtype=bool)
    max_pivots = max_pivots or 2**min(m, 30)
    for _ in range(max_pivots):
        w = np.zeros(m)
        if free.any():
            w[free] = np.linalg.solve(M[np.ix_(free, free)], -q[free])
        z = M @ w + q
        bad = np.flatnonzero((free & (w < -atol)) | (~free & (z < -atol)))
        if len(bad) == 0:
            return np.maximum(w, 0.0)
        free[bad[0]] = ~free[bad[0]]
    raise LCPError("principal pivoting did not terminate")


def _projected_gs(M, q, tol=1e-12, max_sweeps=1_000_000):
    m = len(q)
    w = np.zeros(m)
    diag = np.diag(M).copy()
    for _ in range(max_sweeps):
        dmax = 0.0
        for i in range(m):
            new = max(0.0, w[i] - (M[i] @ w + q[i]) / diag[i])
            dmax = max(dmax, abs(new - w[i]))
            w[i] = new
        if dmax < tol:
            return w
    raise LCPError("projected iteration did not reach tolerance")


ENUMERATION_LIMIT = 12
ORACLE_UNKNOWN_LIMIT = 2000


def lcp_bruteforce(spec, method="auto"):
    """Direct solution of the discrete complementarity system.

    Interior unknowns are eliminated exactly (sparse LU), leaving a dense
    problem on the plane nodes.  ``method``:

    * ``"enumerate"`` tries every contact/free assignment of the plane nodes;
    * ``"pivot"`` walks assignments by least-index principal pivoting;
    * ``"iterate"`` runs projected Gauss-Seidel on the reduced system to 1e-12;
    * ``"auto"`` enumerates up to 12 plane nodes and pivots beyond.
    """
    d = spec.domain
    n_unknown = int((~d.boundary_mask()).sum())
    if n_unknown > ORACLE_UNKNOWN_LIMIT:
        raise ValueError(f"{n_unknown} unknowns exceed the oracle budget of {ORACLE_UNKNOWN_LIMIT}")
    asm = _assemble(spec)
    M, r, lift = _schur(asm)
    phi = asm.phi
    q = M @ phi - r
    m = len(q)
    if method == "auto":
        method = "enumerate" if m <= ENUMERATION_LIMIT else "pivot"
    if method == "enumerate" and m > 25:
        raise ValueError(f"{m} plane nodes are too many to enumerate")
    scale = 1.0 + np.abs(q).max() if m else 1.0
    atol = 1e-11 * scale
    if m == 0:
        w = np.zeros(0)
    elif method == "enumerate":
        w = _enumerate(M, q, atol)
    elif method == "pivot":
        w = _pivot(M, q, atol)
    elif method == "iterate":
        w = _projected_gs(M, q)
    else:
        raise ValueError(f"unknown oracle method {method!r}")

    y = phi + w
    # contact nodes sit exactly on the obstacle
    y[w == 0.0] = phi[w == 0.0]
    x = np.zeros(len(asm.b))
    x[asm.plane_rows] = y
    if lift is not None:
        lu, Aip, bI = lift
        x[asm.inner_rows] = lu.solve(bI - Aip @ y)
    u = np.array(spec.boundary, dtype=float)
    unknown = asm.index >= 0
    u[unknown] = x[asm.index[unknown]]
    return SolutionField(d, u, sweeps_used=0, converged=True, method=f"oracle-{method}")
