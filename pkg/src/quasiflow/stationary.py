"""Direct solver for the stationary problem, independent of the time stepper."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .coefficients import CoefficientModel, NonlinearityModel
from .grid import DirichletError, Field, Grid, integrate
from .operators import RegularizationParams, energy, energy_gradient, hessian, residual

log = logging.getLogger(__name__)


@dataclass
class StationaryResult:
    z: Field
    residual_norm: float
    iterations: int
    eps_path: list[float] = field(default_factory=list)
    converged: bool = False
    descent_steps: int = 0
    message: str = ""

    def summary(self) -> dict:
        return {
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "eps_path": list(self.eps_path),
            "converged": self.converged,
            "descent_steps": self.descent_steps,
            "message": self.message,
        }


def _l2(grid: Grid, vec: np.ndarray) -> float:
    return float(np.sqrt(np.sum(vec ** 2) * grid.cell_measure))


def eps_schedule(target: float, p: float, start: float = 1e-2, stages: int = 4) -> list[float]:
    if p == 2 or target >= start:
        return [target]
    return list(np.geomspace(start, target, stages))


def solve_stationary(guess: Field, cm: CoefficientModel, nm: NonlinearityModel,
                     reg: RegularizationParams, tol: float = 1e-8, *,
                     max_iter: int = 200, stage_tol: float = 1e-5,
                     clip: bool = True) -> StationaryResult:
    """Damped Newton on the residual with continuation in eps.

    Each stage starts from the previous stage's iterate.  When the Newton
    direction cannot reduce the residual norm, a few backtracking descent
    steps on the energy are taken instead.
    """
    grid = guess.grid
    if np.any(guess.values < 0):
        raise ValueError("initial guess must be nonnegative")
    u = guess.interior_values.copy()
    vol = grid.cell_measure
    path = eps_schedule(reg.eps, nm.p)
    total = descent = 0

    def field(vec):
        return Field.from_interior(grid, vec)

    def F(vec, r):
        return energy_gradient(field(vec), cm, nm, r) / vol

    if not np.any(u):
        r0 = F(u, reg)
        if _l2(grid, r0) <= tol:
            return StationaryResult(field(u), _l2(grid, r0), 0, [reg.eps], True,
                                    message="initial guess is an exact root")

    for k, eps in enumerate(path):
        r = RegularizationParams(eps)
        last = k == len(path) - 1
        goal = tol if last else max(tol, stage_tol)
        res = F(u, r)
        norm = _l2(grid, res)
        while norm > goal and total < max_iter:
            total += 1
            accepted = False
            for picard in (False, True):
                d = _newton_direction(field(u), res, cm, nm, r, picard)
                if d is None:
                    continue
                t = 1.0
                for _ in range(30):
                    trial = u + t * d
                    if clip:
                        trial = np.maximum(trial, 0.0)
                    rt = F(trial, r)
                    nt = _l2(grid, rt)
                    if nt < (1 - 1e-4 * t) * norm:
                        u, res, norm, accepted = trial, rt, nt, True
                        break
                    t *= 0.5
                if accepted:
                    break
            if not accepted:
                moved = _energy_descent(u, grid, cm, nm, r, clip)
                descent += 1
                if moved is None:
                    break
                u = moved
                res = F(u, r)
                norm = _l2(grid, res)
        log.debug("eps=%.3g stage done: |R|=%.3e after %d iterations", eps, norm, total)

    norm = _l2(grid, F(u, reg))
    ok = norm <= tol
    msg = "" if ok else f"residual {norm:.3e} above tolerance {tol:.1e} after {total} iterations"
    return StationaryResult(field(u), norm, total, path, ok, descent, msg)


def _newton_direction(u: Field, res, cm, nm, reg, picard):
    J = hessian(u, cm, nm, reg, picard=picard) / u.grid.cell_measure
    try:
        d = spla.spsolve(J.tocsc(), -res)
    except RuntimeError:
        return None
    return d if np.all(np.isfinite(d)) else None


def _energy_descent(u, grid, cm, nm, reg, clip, steps: int = 5):
    """Backtracking gradient descent on the energy (fallback when Newton stalls)."""
    vol = grid.cell_measure
    E0 = energy(Field.from_interior(grid, u), cm, nm, reg)
    moved = False
    for _ in range(steps):
        g = energy_gradient(Field.from_interior(grid, u), cm, nm, reg) / vol
        gg = float(np.sum(g * g) * vol)
        if gg == 0:
            break
        t = 1.0
        while t > 1e-14:
            trial = u - t * g
            if clip:
                trial = np.maximum(trial, 0.0)
            E1 = energy(Field.from_interior(grid, trial), cm, nm, reg)
            if E1 <= E0 - 1e-4 * t * gg:
                u, E0, moved = trial, E1, True
                break
            t *= 0.5
        else:
            break
    return u if moved else None


def verify_stationary(z, cm, nm, reg) -> float:
    """Residual L2 norm, recomputed from scratch."""
    if isinstance(z, tuple):
        grid, values = z
        values = np.asarray(values, dtype=float)
        if np.any(values[~grid.interior] != 0):
            raise DirichletError("nonzero boundary values: not a Dirichlet field")
        z = Field(grid, values)
    r = residual(z, cm, nm, reg)
    return float(np.sqrt(integrate(r.values ** 2, z.grid)))


def exact_p_torsion(grid: Grid, p: float) -> Field:
    """Radial solution of -Delta_p u = 1 on a 2D disk with u = 0 on the circle."""
    if grid.domain.kind != "disk":
        raise ValueError("exact p-torsion needs a disk grid")
    if not p > 1:
        raise ValueError("p must exceed 1")
    R = grid.domain.bounds[0]
    e = p / (p - 1)
    coef = (p - 1) / p * 0.5 ** (1 / (p - 1))
    r = np.minimum(grid.radius, R)
    return Field.from_function(grid, lambda *_: coef * (R ** e - r ** e))
