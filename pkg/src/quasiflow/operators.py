"""Discrete energy, its gradient (the residual) and its Hessian.

The energy is assembled cell by cell.  On a cell with corner values u_k the
squared gradient is the mean of the squared edge differences,

    g2 = sum_e alpha_e ((u_b - u_a)/h)^2,   alpha_e = 1 (1D) or 1/2 (2D),

the diffusivity is a(mean of corners), and

    E(u) = h^n sum_c a(ubar_c) Phi(g2_c) - h^n sum_i F(u_i),
    Phi(s) = ((s + eps^2)^(p/2) - eps^p) / p.

The residual is dE/du_i divided by h^n at interior nodes, so that
``integrate(residual(u) * phi) == dE(u)[phi]`` holds to rounding.  For p = 2 and
a = 1 this is the 5-point (3-point in 1D) Laplacian.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .coefficients import CoefficientModel, NonlinearityModel
from .grid import Field, Grid


class NonFiniteError(ArithmeticError):
    def __init__(self, what: str, index: int):
        super().__init__(f"{what} is not finite at node/cell index {index}")
        self.index = index


@dataclass(frozen=True)
class RegularizationParams:
    eps: float = 0.0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    @classmethod
    def default_for(cls, grid: Grid) -> "RegularizationParams":
        return cls(eps=1e-6 * grid.resolution)

    def checked(self, p: float) -> "RegularizationParams":
        if self.eps == 0 and p != 2:
            raise ValueError("eps = 0 is only allowed for p = 2")
        return self


@dataclass
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray  # cumulative sum of dt * ||u_t||^2, aligned with times
    max_positive_jump: float
    max_violation: float = 0.0
    tolerance: float = 0.0
    passed: bool = True
    worst_pair: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        return {
            "max_positive_jump": self.max_positive_jump,
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "worst_pair": list(self.worst_pair),
            "steps": int(len(self.times) - 1),
        }


class Stencil:
    """Cell connectivity of a grid; cached per grid object."""

    def __init__(self, grid: Grid):
        self.grid = grid
        n = grid.ndim
        idx = np.arange(np.prod(grid.shape)).reshape(grid.shape)
        m = grid.interior
        if n == 1:
            corners = np.stack([idx[:-1], idx[1:]], axis=-1)
            active = m[:-1] | m[1:]
            self.edges = [(0, 1)]
            self.alpha = 1.0
        else:
            corners = np.stack([idx[:-1, :-1], idx[1:, :-1], idx[:-1, 1:], idx[1:, 1:]], axis=-1)
            active = m[:-1, :-1] | m[1:, :-1] | m[:-1, 1:] | m[1:, 1:]
            # bottom, top (x1 differences), left, right (x2 differences)
            self.edges = [(0, 1), (2, 3), (0, 2), (1, 3)]
            self.alpha = 0.5
        self.cells = corners[active].reshape(-1, corners.shape[-1])
        self.k = self.cells.shape[1]
        self.avg = np.full(self.k, 1.0 / self.k)
        h = grid.h
        D = np.zeros((len(self.edges), self.k))
        for e, (a, b) in enumerate(self.edges):
            D[e, a], D[e, b] = -1.0 / h, 1.0 / h
        self.D = D  # edge difference operators on a cell's corner vector
        self.K = 2 * self.alpha * D.T @ D  # Hessian of g2 w.r.t. corner values
        self.vol = grid.cell_measure
        nn = idx.size
        self.nnodes = nn
        self.free = grid.interior_index
        self._patterns = {
            "full": self._pattern(np.ones((self.k, self.k), dtype=bool)),
            "edge": self._pattern(self.K != 0),
        }

    def _pattern(self, local_mask: np.ndarray):
        """Fixed CSR pattern on interior nodes and the scatter map of local entries."""
        pos_of = np.full(self.nnodes, -1)
        pos_of[self.free] = np.arange(len(self.free))
        rl = pos_of[self.cells]  # (ncell, k) reduced index or -1
        a, b = np.nonzero(local_mask)
        rows, cols = rl[:, a], rl[:, b]
        keep = (rows >= 0) & (cols >= 0)
        nf = len(self.free)
        keys = (rows * nf + cols)[keep]
        uniq, where = np.unique(keys, return_inverse=True)
        r, c = np.divmod(uniq, nf)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=nf))])
        flat = (np.arange(self.cells.shape[0])[:, None] * self.k * self.k
                + (a * self.k + b)[None, :])[keep]
        return flat, where, c.astype(np.int32), indptr.astype(np.int32), len(uniq)

    def local(self, u: np.ndarray):
        uc = u.ravel()[self.cells]  # (ncell, k)
        ubar = uc @ self.avg
        de = uc @ self.D.T  # (ncell, nedge)
        g2 = self.alpha * np.sum(de ** 2, axis=1)
        return uc, ubar, de, g2

    def assemble(self, local_mats: np.ndarray, pattern: str = "full") -> sp.csr_matrix:
        flat, where, cols, indptr, nnz = self._patterns[pattern]
        data = np.bincount(where, weights=local_mats.ravel()[flat], minlength=nnz)
        n = len(self.free)
        return sp.csr_matrix((data, cols, indptr), shape=(n, n))


def stencil(grid: Grid) -> Stencil:
    st = grid.__dict__.get("_stencil")
    if st is None:
        st = grid.__dict__["_stencil"] = Stencil(grid)
    return st


def _phi(g2, p, eps):
    base = g2 + eps * eps
    if eps > 0:
        # eps^p ((1 + g2/eps^2)^(p/2) - 1)/p without cancellation; exactly 0 at g2 = 0
        Phi = eps ** p * np.expm1(0.5 * p * np.log1p(g2 / (eps * eps))) / p
    else:
        Phi = base ** (p / 2) / p
    w = base ** ((p - 2) / 2)  # 2 * Phi'
    return Phi, w


def _check(arr, what):
    bad = ~np.isfinite(arr)
    if bad.any():
        raise NonFiniteError(what, int(np.argmax(bad.ravel())))


def energy(u: Field, cm: CoefficientModel, nm: NonlinearityModel,
           reg: RegularizationParams) -> float:
    reg.checked(nm.p)
    st = stencil(u.grid)
    _, ubar, _, g2 = st.local(u.values)
    Phi, _ = _phi(g2, nm.p, reg.eps)
    dens = cm.a(ubar) * Phi
    _check(dens, "energy density")
    F = nm.bigF(u.interior_values)
    _check(F, "F(u)")
    return float(st.vol * (dens.sum() - F.sum()))


def _gradient_parts(u: np.ndarray, cm, nm, reg, st: Stencil):
    """Per-cell local gradient of the cell energy (without h^n)."""
    _, ubar, de, g2 = st.local(u)
    Phi, w = _phi(g2, nm.p, reg.eps)
    A, A1 = cm.a(ubar), cm.a1(ubar)
    # d g2 / du_k = 2 alpha sum_e de_e D[e,k]; times Phi' = w/2
    flux = (A * w)[:, None] * (st.alpha * de @ st.D)
    first = (A1 * Phi)[:, None] * st.avg[None, :]
    return flux, first


def energy_gradient(u: Field, cm, nm, reg) -> np.ndarray:
    """dE/du at interior nodes (includes the h^n weight)."""
    reg.checked(nm.p)
    st = stencil(u.grid)
    flux, first = _gradient_parts(u.values, cm, nm, reg, st)
    g = np.bincount(st.cells.ravel(), weights=(flux + first).ravel(), minlength=st.nnodes)
    g = g[st.free] - nm.f(u.interior_values)
    g *= st.vol
    _check(g, "energy gradient")
    return g


def energy_directional_derivative(u: Field, phi: Field, cm, nm, reg) -> float:
    """Diffusion, first-order and reaction terms of dE(u)[phi], summed."""
    reg.checked(nm.p)
    st = stencil(u.grid)
    flux, first = _gradient_parts(u.values, cm, nm, reg, st)
    pc = phi.values.ravel()[st.cells]
    diffusion = np.sum(flux * pc)
    lower = np.sum(first * pc)
    reaction = np.sum(nm.f(u.interior_values) * phi.interior_values)
    return float(st.vol * (diffusion + lower - reaction))


def residual(u: Field, cm, nm, reg) -> Field:
    return Field.from_interior(u.grid, energy_gradient(u, cm, nm, reg) / u.grid.cell_measure)


def hessian(u: Field, cm, nm, reg, *, picard: bool = False) -> sp.csr_matrix:
    """Second derivative of E at u restricted to interior nodes.

    ``picard`` drops the terms that differentiate the gradient weight and the
    diffusivity (a lagged-coefficient linearization).  It is always positive
    semidefinite in the diffusion part and serves as the fallback linearization.
    """
    reg.checked(nm.p)
    st = stencil(u.grid)
    p, eps = nm.p, reg.eps
    _, ubar, de, g2 = st.local(u.values)
    Phi, w = _phi(g2, p, eps)
    A, A1, A2 = cm.a(ubar), cm.a1(ubar), cm.a2(ubar)
    G = 2 * st.alpha * de @ st.D  # d g2 / du, (ncell, k)
    b = st.avg
    H = (A * w / 2)[:, None, None] * st.K[None]
    if not picard:
        with np.errstate(divide="ignore", invalid="ignore"):
            phi2 = (p - 2) / 4 * (g2 + eps * eps) ** ((p - 4) / 2)
        phi2 = np.where(np.isfinite(phi2), phi2, 0.0)
        bb = np.outer(b, b)
        H = H + (A2 * Phi)[:, None, None] * bb[None]
        bG = b[None, :, None] * G[:, None, :]
        H = H + (A1 * w / 2)[:, None, None] * (bG + bG.transpose(0, 2, 1))
        H = H + (A * phi2)[:, None, None] * (G[:, :, None] * G[:, None, :])
    M = st.assemble(H * st.vol)
    fprime = nm.f1(u.interior_values)
    _check(fprime, "f'(u)")
    return (M - sp.diags(st.vol * fprime)).tocsr()


def frozen_operator(u: Field, cm, nm, reg) -> sp.csr_matrix:
    """Stiffness matrix of -div(a(u) w(u) grad .) with weights frozen at u.

    Scaled by h^n, restricted to interior nodes; an M-matrix for a > 0.
    """
    st = stencil(u.grid)
    _, ubar, _, g2 = st.local(u.values)
    _, w = _phi(g2, nm.p, reg.checked(nm.p).eps)
    coef = cm.a(ubar) * w / 2
    return st.assemble(coef[:, None, None] * st.K[None] * st.vol, "edge")


def lower_order_term(u: Field, cm, nm, reg) -> np.ndarray:
    """(a'(u)/p)|grad u|^p assembled like the residual (interior nodes, per h^n)."""
    st = stencil(u.grid)
    _, first = _gradient_parts(u.values, cm, nm, reg, st)
    g = np.bincount(st.cells.ravel(), weights=first.ravel(), minlength=st.nnodes)
    return g[st.free]


def dirichlet_form(v: Field, weight_cells: np.ndarray | None = None) -> float:
    """sum_c h^n rho_c g2_c: the (weighted) squared L2 norm of grad v."""
    st = stencil(v.grid)
    _, _, _, g2 = st.local(v.values)
    if weight_cells is not None:
        g2 = g2 * weight_cells
    return float(st.vol * g2.sum())


def cell_gradient_magnitude(u: Field) -> np.ndarray:
    return np.sqrt(stencil(u.grid).local(u.values)[3])
