"""Reference and coarse solvers for the Burgers and multiscale elliptic problems."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import LinearOperator, cg, spsolve

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

KINDS = ("burgers", "elliptic1d", "elliptic2d_onefast", "elliptic2d_multiscale")

MULTISCALE_EPSILONS = (1 / 5, 1 / 4, 1 / 25, 1 / 16, 1 / 16, 1 / 32, 1 / 3, 1 / 9)


class SolverError(RuntimeError):
    """A numerical solver could not produce a trustworthy answer."""


@dataclass
class PdeConfig:
    kind: str
    alpha: float = 0.1
    epsilon: float | tuple[float, ...] = 1 / 128
    forcing: float | Callable = 0.5
    domain: tuple[float, float] = (0.0, 1.0)
    fine_mesh: int = 4096
    coarse_mesh: int = 64
    s: float | None = None
    kappa_offset: float = 2.0
    coefficient: Callable | None = None  # overrides the preset coefficient field

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.coarse_mesh >= self.fine_mesh:
            raise ValueError("coarse_mesh must be strictly coarser than fine_mesh")
        if self.kind != "burgers" and self.coefficient is None:
            span = self.domain[1] - self.domain[0]
            cells_per_period = self.fine_mesh * min(self.epsilons) / span
            if cells_per_period < 10:
                raise ValueError(
                    f"fine_mesh={self.fine_mesh} gives {cells_per_period:.1f} cells per "
                    f"smallest period; at least 10 are required"
                )

    @property
    def epsilons(self) -> tuple[float, ...]:
        return tuple(np.atleast_1d(self.epsilon).tolist())

    def kappa(self) -> Callable:
        if self.coefficient is not None:
            return self.coefficient
        if self.kind == "elliptic1d":
            return kappa_1d(self.epsilons[0])
        if self.kind == "elliptic2d_onefast":
            return kappa_onefast(self.epsilons[0])
        if self.kind == "elliptic2d_multiscale":
            return kappa_multiscale(self.epsilons, self.kappa_offset)
        raise ValueError("Burgers has no coefficient field")

    def f(self) -> Callable:
        if callable(self.forcing):
            return self.forcing
        value = float(self.forcing)
        return lambda *xs: np.full(np.shape(xs[0]), value)

    def to_dict(self) -> dict:
        d = asdict(self)
        if callable(self.forcing):
            d["forcing"] = getattr(self.forcing, "__name__", "callable")
        if self.coefficient is not None:
            d["coefficient"] = getattr(self.coefficient, "__name__", "callable")
        d["domain"] = list(self.domain)
        d["epsilon"] = list(self.epsilons) if len(self.epsilons) > 1 else self.epsilons[0]
        return d


def kappa_1d(eps: float) -> Callable:
    return lambda x: 0.5 * np.sin(TWO_PI * x / eps) + 0.8


def kappa_onefast(eps: float) -> Callable:
    return lambda x, y: 2.0 + np.sin(TWO_PI * x / eps) * np.cos(TWO_PI * y / eps)


def kappa_multiscale(eps: Sequence[float] = MULTISCALE_EPSILONS, offset: float = 2.0) -> Callable:
    e0, e1, e2, e3, e4, e5, e6, e7 = eps

    def kappa(x, y):
        a = np.sin(TWO_PI * x / e0) * np.cos(TWO_PI * y / e1)
        a /= 2.0 + np.cos(TWO_PI * x / e2) * np.sin(TWO_PI * y / e3)
        b = np.sin(TWO_PI * x / e4) * np.cos(TWO_PI * y / e5)
        b /= 2.0 + np.cos(TWO_PI * x / e6) * np.sin(TWO_PI * y / e7)
        return offset + a + b

    return kappa


@dataclass
class GridFunction:
    """Nodal values on a tensor grid; ``axes`` holds one coordinate array per dimension.

    A periodic grid omits the duplicated right endpoint; ``period`` is then the
    domain length.
    """

    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    period: float | None = None
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = tuple(a.size for a in self.axes)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} does not match mesh {expected}")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def __call__(self, points) -> np.ndarray:
        """Linear (1D) or bilinear (2D) interpolation at ``points``."""
        points = np.asarray(points, dtype=np.float64)
        if self.ndim == 1:
            x = points.reshape(-1) if points.ndim <= 1 or points.shape[-1] != 1 else points[..., 0]
            if self.period is not None:
                xp = np.append(self.axes[0], self.axes[0][0] + self.period)
                fp = np.append(self.values, self.values[0])
                out = np.interp(np.mod(x - xp[0], self.period) + xp[0], xp, fp)
            else:
                out = np.interp(x, self.axes[0], self.values)
            return out.reshape(np.shape(x))
        if self._interp is None:
            self._interp = RegularGridInterpolator(self.axes, self.values, method="linear")
        return self._interp(points)


def uniform_axis(lo: float, hi: float, n_cells: int, periodic: bool = False) -> np.ndarray:
    nodes = lo + (hi - lo) * np.arange(n_cells + 1) / n_cells
    return nodes[:-1] if periodic else nodes


# ---------------------------------------------------------------------------
# Burgers


def burgers_ic(s: float, n_cells: int = 512, t_pre: float = 0.1) -> GridFunction:
    """Inviscid Burgers solution at ``t_pre`` from ``s sin(x)`` on the periodic grid.

    Uses the characteristic relation ``x = xi + t s sin(xi)``, inverted per node
    with a bracketed Newton iteration.
    """
    if not 0.0 <= s <= 4.0:
        raise ValueError(f"s must lie in [0, 4] so characteristics do not cross; got {s}")
    x = uniform_axis(0.0, TWO_PI, n_cells, periodic=True)
    ts = t_pre * s
    xi = x.copy()
    lo, hi = x - ts, x + ts
    for _ in range(100):
        F = xi + ts * np.sin(xi) - x
        dF = 1.0 + ts * np.cos(xi)
        lo = np.where(F < 0, xi, lo)
        hi = np.where(F > 0, xi, hi)
        step = xi - F / dF
        outside = (step <= lo) | (step >= hi)
        xi_new = np.where(outside, 0.5 * (lo + hi), step)
        if np.max(np.abs(xi_new - xi)) < 1e-15:
            xi = xi_new
            break
        xi = xi_new
    return GridFunction((x,), s * np.sin(xi), period=TWO_PI)


def _convection(u: np.ndarray, h: float) -> np.ndarray:
    """Centered flux-form approximation of d(u^2/2)/dx on a periodic grid."""
    f = 0.5 * u * u
    return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * h)


def burgers_solve(
    u0: GridFunction,
    alpha: float = 0.1,
    t_end: float = 0.3,
    n_snapshots: int = 6,
    dt: float | None = None,
    cfl: float = 0.4,
    dt_floor: float = 1e-7,
) -> list[GridFunction]:
    """Viscous Burgers on a periodic grid with Crank-Nicolson diffusion and AB2 convection.

    Returns ``n_snapshots`` solutions at uniformly spaced times in ``[0, t_end]``.
    The implicit diffusion solve is done exactly in Fourier space.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if u0.period is None:
        raise ValueError("Burgers needs a periodic initial condition")
    x = u0.axes[0]
    n = x.size
    h = u0.period / n
    k = np.fft.rfftfreq(n, d=1.0 / n)
    lap = -4.0 / h**2 * np.sin(np.pi * k / n) ** 2  # symbol of the 3-point Laplacian

    u = u0.values.copy()
    times = np.linspace(0.0, t_end, n_snapshots)
    out = [GridFunction((x,), u.copy(), period=u0.period)]
    prev_conv = None
    for t0, t1 in zip(times[:-1], times[1:]):
        interval = t1 - t0
        umax = np.max(np.abs(u))
        # the unit floor keeps the step accuracy-limited when the solution is small
        step = dt if dt is not None else cfl * h / max(umax, 1.0)
        if step < dt_floor:
            raise SolverError(f"time step {step:.2e} fell below floor {dt_floor:.0e}")
        n_steps = max(1, int(np.ceil(interval / step - 1e-9)))
        tau = interval / n_steps
        if tau * umax / h > 1.0:
            raise SolverError(f"CFL number {tau * umax / h:.2f} exceeds 1 at t={t0:.3f}")
        for _ in range(n_steps):
            conv = _convection(u, h)
            if prev_conv is None:
                explicit = conv
            else:
                explicit = 1.5 * conv - 0.5 * prev_conv
            rhs = np.fft.rfft(u) * (1.0 + 0.5 * tau * alpha * lap) - tau * np.fft.rfft(explicit)
            u = np.fft.irfft(rhs / (1.0 - 0.5 * tau * alpha * lap), n=n)
            prev_conv = conv
            if not np.all(np.isfinite(u)):
                raise SolverError("Burgers solution became non-finite")
        out.append(GridFunction((x,), u.copy(), period=u0.period))
    return out


# ---------------------------------------------------------------------------
# 1D elliptic


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(8)


def _gauss_nodes(nodes: np.ndarray):
    a, b = nodes[:-1, None], nodes[1:, None]
    half = 0.5 * (b - a)
    pts = a + half * (_GAUSS_X[None, :] + 1.0)
    return pts, half * _GAUSS_W[None, :]


def _antiderivative_at(f: Callable, nodes: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """F(t) = int_0^t f at every Gauss point, by nested Gauss rules."""
    a = nodes[:-1, None]
    cell_pts, cell_w = _gauss_nodes(nodes)
    cum = np.concatenate([[0.0], np.cumsum(np.sum(f(cell_pts) * cell_w, axis=1))])
    # partial integral over [a, t] for each Gauss point t
    half = 0.5 * (pts - a)
    sub = a[..., None] + half[..., None] * (_GAUSS_X + 1.0)
    partial = np.sum(f(sub) * _GAUSS_W, axis=-1) * half
    return cum[:-1, None] + partial


def _solve_1d_quadrature(kappa: Callable, f: Callable, nodes: np.ndarray) -> np.ndarray:
    pts, w = _gauss_nodes(nodes)
    k = kappa(pts)
    if np.any(k <= 0):
        raise ValueError("kappa must be positive on the domain")
    F = _antiderivative_at(f, nodes, pts)
    inv_cells = np.sum(w / k, axis=1)
    Fk_cells = np.sum(w * F / k, axis=1)
    c = Fk_cells.sum() / inv_cells.sum()
    u = np.concatenate([[0.0], np.cumsum(c * inv_cells - Fk_cells)])
    u[-1] = 0.0
    return u


def elliptic1d_solve_exact(config: PdeConfig, n_cells: int | None = None) -> GridFunction:
    """Fine reference for ``-(kappa u')' = f``, ``u(0) = u(1) = 0``.

    Integrates ``u(x) = int_0^x (c - F(t)) / kappa(t) dt`` with an 8-point Gauss
    rule per cell; ``c`` is fixed by the right boundary condition.
    """
    n = n_cells or config.fine_mesh
    nodes = uniform_axis(*config.domain, n)
    return GridFunction((nodes,), _solve_1d_quadrature(config.kappa(), config.f(), nodes))


def effective_coefficient_1d(kappa: Callable, eps: float, n_quad: int = 4096) -> float:
    """Harmonic mean of ``kappa`` over one period ``[0, eps]``.

    The trapezoid rule on a periodic integrand converges spectrally.
    """
    y = eps * np.arange(n_quad) / n_quad
    k = kappa(y)
    if np.any(k <= 0):
        raise ValueError("kappa must be positive on the domain")
    return 1.0 / np.mean(1.0 / k)


def elliptic1d_homogenized(config: PdeConfig, n_cells: int | None = None) -> GridFunction:
    """Coarse input function: the constant-coefficient problem with the harmonic-mean kappa."""
    kstar = effective_coefficient_1d(config.kappa(), config.epsilons[0])
    n = n_cells or config.coarse_mesh
    nodes = uniform_axis(*config.domain, n)
    u = _solve_1d_quadrature(lambda x: np.full(np.shape(x), kstar), config.f(), nodes)
    return GridFunction((nodes,), u)


def elliptic1d_solve_fd(config: PdeConfig, n_cells: int) -> GridFunction:
    """Second-order finite differences with kappa sampled at cell midpoints."""
    nodes = uniform_axis(*config.domain, n_cells)
    h = nodes[1] - nodes[0]
    k_face = config.kappa()(0.5 * (nodes[:-1] + nodes[1:]))
    if np.any(k_face <= 0):
        raise ValueError("kappa must be positive on the domain")
    main = (k_face[:-1] + k_face[1:]) / h**2
    off = -k_face[1:-1] / h**2
    A = sp.diags([off, main, off], [-1, 0, 1], format="csc")
    rhs = config.f()(nodes[1:-1])
    u = np.zeros(n_cells + 1)
    u[1:-1] = spsolve(A, rhs)
    return GridFunction((nodes,), u)


# ---------------------------------------------------------------------------
# 2D elliptic


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def assemble_elliptic2d(kappa: np.ndarray, h: float) -> sp.csr_matrix:
    """5-point operator for ``-div(kappa grad u)`` on interior nodes, zero Dirichlet data.

    ``kappa`` holds nodal values on the full ``(n+1, n+1)`` grid; face
    coefficients are harmonic averages of the two adjacent nodes.
    """
    n = kappa.shape[0] - 1
    m = n - 1
    kx = _harmonic(kappa[:-1, :], kappa[1:, :])[:, 1:-1]  # faces (i+1/2, j), shape (n, m)
    ky = _harmonic(kappa[:, :-1], kappa[:, 1:])[1:-1, :]  # faces (i, j+1/2), shape (m, n)
    diag = (kx[:-1, :] + kx[1:, :] + ky[:, :-1] + ky[:, 1:]) / h**2
    idx = np.arange(m * m).reshape(m, m)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag.ravel()]
    # x-neighbours: interior face between (i, j) and (i+1, j) is kx[i+1, j] for i in 0..m-2
    west, east = idx[:-1, :].ravel(), idx[1:, :].ravel()
    wx = -kx[1:-1, :].ravel() / h**2
    south, north = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    wy = -ky[:, 1:-1].ravel() / h**2
    rows += [west, east, south, north]
    cols += [east, west, north, south]
    vals += [wx, wx, wy, wy]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m)
    )


def elliptic2d_solve(
    config: PdeConfig,
    n_cells: int | None = None,
    rtol: float = 1e-10,
    maxiter: int | None = None,
) -> GridFunction:
    """Vertex-centred finite volumes on ``[0,1]^2`` solved by Jacobi-preconditioned CG."""
    n = n_cells or config.fine_mesh
    axis = uniform_axis(*config.domain, n)
    h = axis[1] - axis[0]
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    kappa = config.kappa()(X, Y)
    if np.any(kappa <= 0):
        raise ValueError(f"kappa must be positive; minimum nodal value is {kappa.min():.3g}")
    A = assemble_elliptic2d(kappa, h)
    b = config.f()(X[1:-1, 1:-1], Y[1:-1, 1:-1]).ravel()
    d_inv = 1.0 / A.diagonal()
    M = LinearOperator(A.shape, matvec=lambda r: d_inv * r)
    maxiter = maxiter or 20 * n * n
    sol, info = cg(A, b, rtol=rtol, atol=0.0, M=M, maxiter=maxiter)
    residual = np.linalg.norm(b - A @ sol) / np.linalg.norm(b)
    if info != 0 or residual > 10 * rtol:
        raise SolverError(f"CG did not converge: info={info}, relative residual {residual:.2e}")
    u = np.zeros((n + 1, n + 1))
    u[1:-1, 1:-1] = sol.reshape(n - 1, n - 1)
    return GridFunction((axis, axis), u)


def poisson_square_center_series(n_terms: int = 200) -> float:
    """u(1/2, 1/2) for ``-lap u = 1`` on the unit square by the double sine series."""
    total = 0.0
    for m in range(1, 2 * n_terms, 2):
        for n in range(1, 2 * n_terms, 2):
            coeff = 16.0 / (np.pi**4 * m * n * (m * m + n * n))
            total += coeff * np.sin(m * np.pi / 2) * np.sin(n * np.pi / 2)
    return total
