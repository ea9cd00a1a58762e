"""Checks of qualitative properties on computed fields.

Symmetry and monotonicity in x1, moving-plane reflections, the size of the
critical set {grad u = 0}, weighted integrals near it, weighted Poincare
constants and comparison on small subdomains.  Every function is a pure
function of its inputs.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .grid import Field, Grid, gradient_field, integrate, reflect_field
from .operators import cell_gradient_magnitude, stencil


class DegenerateFieldError(ValueError):
    """The field has no point with a nonzero gradient."""


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


class _Report:
    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


# ------------------------------------------------------------------ symmetry

@dataclass
class SymmetryReport(_Report):
    asymmetry_x1: float
    radial_deviation: float | None  # None when the domain is not a disk
    monotonicity_defect: float

    def within(self, tol: float) -> bool:
        vals = [self.asymmetry_x1, self.monotonicity_defect]
        if self.radial_deviation is not None:
            vals.append(self.radial_deviation)
        return max(vals) <= tol


def _require_symmetric(grid: Grid):
    if not grid.domain.symmetric_in_x1:
        raise ValueError(f"{grid.domain} is not symmetric under x1 -> -x1")


def asymmetry_x1(u: Field) -> float:
    _require_symmetric(u.grid)
    nu = np.sqrt(integrate(u.values ** 2, u.grid))
    if nu == 0:
        return 0.0
    d = u.values - reflect_field(u, 0.0).values
    return float(np.sqrt(integrate(d ** 2, u.grid)) / nu)


def radial_deviation(u: Field) -> float | None:
    """Largest spread of u over nodes sharing a radius, relative to sup|u|."""
    g = u.grid
    if g.domain.kind != "disk":
        return None
    sup = u.sup()
    if sup == 0:
        return 0.0
    m = g.interior
    # nodes on a common circle have the same integer r^2/h^2
    key = np.rint((g.radius[m] / g.h) ** 2).astype(np.int64)
    vals = u.values[m]
    order = np.argsort(key, kind="stable")
    key, vals = key[order], vals[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    spread = np.maximum.reduceat(vals, starts) - np.minimum.reduceat(vals, starts)
    return float(spread.max() / sup)


def monotonicity_defect(u: Field) -> float:
    """max over x1 < 0 of (-du/dx1)^+, relative to max |du/dx1|."""
    g = u.grid
    d1 = gradient_field(u).components[0]
    scale = np.abs(d1[g.interior]).max() if g.interior.any() else 0.0
    if scale == 0:
        return 0.0
    left = g.interior & (g.coords[0] < 0)
    if not left.any():
        return 0.0
    return float(np.maximum(-d1[left], 0.0).max() / scale)


def symmetry_report(u: Field) -> SymmetryReport:
    _require_symmetric(u.grid)
    return SymmetryReport(asymmetry_x1(u), radial_deviation(u), monotonicity_defect(u))


def symmetrize(u: Field) -> Field:
    return Field(u.grid, 0.5 * (u.values + reflect_field(u, 0.0).values))


# -------------------------------------------------------------- moving plane

@dataclass
class MovingPlaneReport(_Report):
    lambdas: np.ndarray
    defects: np.ndarray
    overall_max: float

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "defect"])
            for lam, d in zip(self.lambdas, self.defects):
                w.writerow([f"{lam:.17g}", f"{d:.17g}"])
        return path


def node_defects(u: Field, lam: float) -> np.ndarray:
    """(u - u_lam)^+ on interior nodes with x1 < lam, zero elsewhere."""
    g = u.grid
    cap = g.interior & (g.coords[0] < lam - 1e-12 * g.h)
    ul = reflect_field(u, lam).values
    return np.where(cap, np.maximum(u.values - ul, 0.0), 0.0)


def plane_defect(u: Field, lam: float) -> float:
    return float(node_defects(u, lam).max())


def moving_plane_sweep(u: Field, lambda_count: int = 16) -> MovingPlaneReport:
    g = u.grid
    _require_symmetric(g)
    if lambda_count < 1:
        raise ValueError("lambda_count must be positive")
    lo = g.domain.x_lo
    # grid-aligned abscissae in [x_lo/2, 0]
    k_lo = int(np.ceil((0.5 * lo - lo) / g.h - 1e-9))
    k_hi = int(np.rint(-lo / g.h))
    ks = np.unique(np.rint(np.linspace(k_lo, k_hi, lambda_count)).astype(int))
    lams = lo + ks * g.h
    lams[-1] = 0.0 if ks[-1] == k_hi else lams[-1]
    defects = np.array([plane_defect(u, lam) for lam in lams])
    return MovingPlaneReport(lams, defects, float(defects.max()))


# -------------------------------------------------------------- critical set

@dataclass
class CriticalSetReport(_Report):
    deltas: np.ndarray
    measure_fraction: np.ndarray
    inverse_gradient_integral: float
    hessian_integral: float
    r_exp: float
    beta: float
    gamma: float
    p: float
    inverse_gradient_by_y: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def y_stability_ratio(self) -> float:
        v = self.inverse_gradient_by_y
        return float(v.max() / v.min()) if v.size else 1.0

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta", "measure_fraction"])
            for d, m in zip(self.deltas, self.measure_fraction):
                w.writerow([f"{d:.17g}", f"{m:.17g}"])
        return path


def _second_derivatives(u: Field):
    """Central second differences; valid where all 3^n neighbours are interior."""
    g, v, h = u.grid, u.values, u.grid.h
    m = g.interior
    core = np.zeros(g.shape, dtype=bool)
    if g.ndim == 1:
        core[1:-1] = m[1:-1] & m[:-2] & m[2:]
        hess2 = np.zeros(g.shape)
        hess2[1:-1] = ((v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2) ** 2
        return core, hess2
    s = (slice(1, -1), slice(1, -1))
    nb = [m[1 + i:m.shape[0] - 1 + i, 1 + j:m.shape[1] - 1 + j]
          for i in (-1, 0, 1) for j in (-1, 0, 1)]
    core[s] = np.logical_and.reduce(nb)
    uxx = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h ** 2
    uyy = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h ** 2
    uxy = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * h * h)
    hess2 = np.zeros(g.shape)
    hess2[s] = uxx ** 2 + uyy ** 2 + 2 * uxy ** 2  # squared Frobenius norm
    return core, hess2


def critical_set_report(u: Field, deltas, r_exp: float = 0.5, beta: float = 0.0,
                        gamma: float = 0.0, y_samples=None, *, p: float = 2.0) -> CriticalSetReport:
    g = u.grid
    if not 0 < r_exp < 1:
        raise ValueError("r_exp must lie in (0, 1)")
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    if g.ndim <= 2 and gamma != 0:
        raise ValueError("gamma must be 0 in one and two dimensions")
    deltas = np.sort(np.asarray(deltas, dtype=float))
    mag = gradient_field(u).magnitude
    m = g.interior
    live = m & (mag > 0)
    if not live.any():
        raise DegenerateFieldError("grad u vanishes at every node")
    total = m.sum()
    frac = np.array([np.count_nonzero(m & (mag < d)) / total for d in deltas])

    if y_samples is None:
        y_samples = [tuple(0.0 for _ in range(g.ndim))]
    pts = np.stack([c[live] for c in g.coords], axis=-1)
    inv = mag[live] ** (-(p - 1) * r_exp)
    by_y = []
    for y in y_samples:
        dist = np.linalg.norm(pts - np.asarray(y, dtype=float), axis=-1)
        with np.errstate(divide="ignore"):
            kern = np.where(dist > 0, dist ** -gamma, 0.0) if gamma else 1.0
        by_y.append(float(np.sum(inv * kern) * g.cell_measure))
    by_y = np.array(by_y)

    core, hess2 = _second_derivatives(u)
    use = core & live
    hint = float(np.sum(mag[use] ** (p - 2 - beta) * hess2[use]) * g.cell_measure)
    return CriticalSetReport(deltas, frac, float(by_y.max()), hint, r_exp, beta, gamma, p, by_y)


# ------------------------------------------------------------------ Poincare

def _mass_matrix(grid: Grid):
    """Consistent mass of the piecewise (bi)linear interpolant on interior nodes."""
    st = stencil(grid)
    m1 = grid.h / 6 * np.array([[2.0, 1.0], [1.0, 2.0]])
    loc = m1 if grid.ndim == 1 else np.kron(m1, m1)
    return st.assemble(np.broadcast_to(loc, (st.cells.shape[0],) + loc.shape).copy())


def _weighted_stiffness(grid: Grid, rho: np.ndarray):
    st = stencil(grid)
    # K is the Hessian of g2, so the form sum_c rho_c g2_c has matrix K/2
    return st.assemble(rho[:, None, None] * (0.5 * st.K)[None] * st.vol, "edge")


def _sine_trial(grid: Grid, modes: np.ndarray, coefs: np.ndarray) -> np.ndarray:
    box = grid.domain.box
    out = np.zeros(grid.shape)
    for k, c in zip(modes, coefs):
        term = np.ones(grid.shape)
        for ax in range(grid.ndim):
            lo, hi = box[2 * ax], box[2 * ax + 1]
            term = term * np.sin(k[ax] * np.pi * (grid.coords[ax] - lo) / (hi - lo))
        out += c * term
    return np.where(grid.interior, out, 0.0).ravel()[grid.interior_index]


def rayleigh_ratio(v: np.ndarray, M, K) -> float:
    num = float(v @ (M @ v))
    den = float(v @ (K @ v))
    return np.sqrt(num / den) if den > 0 else np.inf


def weighted_poincare_constant(u_weight: Field, p: float, trials: int = 32, *,
                               seed: int = 0, refine: int = 8) -> float:
    """max ||v||_2 / ||grad v||_{2,rho} over seeded random sine fields, rho = |grad u|^(p-2).

    Norms are exact for the piecewise (bi)linear interpolant of v, so for rho = 1
    the estimate never exceeds the continuous constant.  The best trial is
    improved by a few inverse-iteration steps, which only increase the ratio.
    """
    if p < 2:
        raise ValueError("the weight is unbounded for p < 2")
    if trials < 32:
        raise ValueError("need at least 32 trials")
    g = u_weight.grid
    rho = cell_gradient_magnitude(u_weight) ** (p - 2)
    if not np.any(rho > 0):
        raise ValueError("the weight vanishes identically")
    M, K = _mass_matrix(g), _weighted_stiffness(g, rho)
    rng = np.random.default_rng(seed)
    best, best_v = -np.inf, None
    for t in range(trials):
        if t == 0:
            modes, coefs = np.ones((1, g.ndim), dtype=int), np.ones(1)
        else:
            nm = int(rng.integers(1, 5))
            modes = rng.integers(1, 5, size=(nm, g.ndim))
            coefs = rng.standard_normal(nm) / modes.sum(axis=1)
        v = _sine_trial(g, modes, coefs)
        r = rayleigh_ratio(v, M, K)
        if np.isfinite(r) and r > best:
            best, best_v = r, v
    if refine and best_v is not None:
        try:
            solve = spla.factorized(K.tocsc())
        except RuntimeError:
            solve = None
        v = best_v
        for _ in range(refine if solve else 0):
            v = solve(M @ v)
            v /= np.abs(v).max()
            r = rayleigh_ratio(v, M, K)
            if np.isfinite(r):
                best = max(best, r)
    return float(best)


# ---------------------------------------------------------------- comparison

@dataclass
class ComparisonReport(_Report):
    subdomain_measure: float
    boundary_ordered: bool
    violation: float
    theta: float
    applicable: bool
    passed: bool
    u_residual: float | None = None
    v_residual: float | None = None
    notes: list[str] = field(default_factory=list)


def mask_boundary(grid: Grid, mask: np.ndarray) -> np.ndarray:
    """Nodes outside ``mask`` with a mask node among their axis neighbours."""
    grown = np.zeros_like(mask)
    for ax in range(grid.ndim):
        for k in (1, -1):
            grown |= np.roll(mask, k, axis=ax) & _valid_roll(mask.shape, ax, k)
    return grown & ~mask


def _valid_roll(shape, ax, k):
    ok = np.ones(shape, dtype=bool)
    idx = [slice(None)] * len(shape)
    idx[ax] = 0 if k > 0 else -1
    ok[tuple(idx)] = False
    return ok


def comparison_experiment(u: Field, v: Field, subdomain: np.ndarray, *,
                          theta: float | None = None, problems=None,
                          stationary_tol: float = 1e-6) -> ComparisonReport:
    """Check u <= v on a subdomain given u <= v on its discrete boundary.

    ``problems`` is an optional pair ``((cm, nm_u, reg), (cm, nm_v, reg))``;
    when given, both fields are checked for stationarity first.
    """
    from .stationary import verify_stationary

    g = u.grid
    if v.grid is not g:
        raise ValueError("fields live on different grids")
    mask = np.asarray(subdomain, dtype=bool) & g.interior
    if mask.shape != g.shape or not mask.any():
        raise ValueError("subdomain mask is empty or has the wrong shape")
    theta = 0.1 * g.domain.measure if theta is None else float(theta)
    measure = float(mask.sum() * g.cell_measure)
    notes = []
    scale = max(u.sup(), v.sup(), 1.0)
    bnd = mask_boundary(g, mask)
    ordered = bool(np.all(u.values[bnd] <= v.values[bnd] + 1e-12 * scale))
    violation = float(np.maximum(u.values[mask] - v.values[mask], 0.0).max())
    res_u = res_v = None
    verified = True
    if problems is not None:
        (cu, nu, ru), (cv, nv, rv) = problems
        res_u = verify_stationary(u, cu, nu, ru)
        res_v = verify_stationary(v, cv, nv, rv)
        for name, r in (("u", res_u), ("v", res_v)):
            if r > stationary_tol:
                verified = False
                notes.append(f"{name} is not verified stationary (residual {r:.3e})")
    if not ordered:
        notes.append("boundary ordering u <= v fails: comparison does not apply")
    if measure > theta:
        notes.append(f"subdomain measure {measure:.4g} exceeds theta {theta:.4g}")
    applicable = ordered and verified and measure <= theta
    passed = ordered and verified and violation <= 1e-8 * v.sup()
    return ComparisonReport(measure, ordered, violation, theta, applicable, passed,
                            res_u, res_v, notes)
