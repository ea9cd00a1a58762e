"""Uniform grids on symmetric domains, nodal fields and grid quadrature.

Every domain is realized on a box of nodes ``x_lo + i*h``.  Disks are masked
Cartesian grids: a node is an unknown when it sits at least ``DISK_MARGIN*h``
inside the circle, and every other node carries the homogeneous Dirichlet
value.  Arrays use ``indexing='ij'`` so axis 0 is always x1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

DISK_MARGIN = 0.2


class DirichletError(ValueError):
    """A field carries nonzero values on non-interior (boundary) nodes."""


@dataclass(frozen=True)
class Domain:
    kind: str
    bounds: tuple[float, ...]

    @classmethod
    def interval(cls, x_lo: float, x_hi: float) -> "Domain":
        if not x_hi > x_lo:
            raise ValueError("empty interval")
        return cls("interval", (float(x_lo), float(x_hi)))

    @classmethod
    def rectangle(cls, x_lo, x_hi, y_lo, y_hi) -> "Domain":
        if not (x_hi > x_lo and y_hi > y_lo):
            raise ValueError("empty rectangle")
        return cls("rectangle", tuple(map(float, (x_lo, x_hi, y_lo, y_hi))))

    @classmethod
    def disk(cls, radius: float) -> "Domain":
        if not radius > 0:
            raise ValueError("disk radius must be positive")
        return cls("disk", (float(radius),))

    @classmethod
    def parse(cls, text: str) -> "Domain":
        """``interval(0,1)``, ``rectangle(-1,1,-1,1)`` or ``disk(1)``."""
        text = text.strip().replace(" ", "")
        name, _, rest = text.partition("(")
        if not rest.endswith(")"):
            raise ValueError(f"cannot parse domain {text!r}")
        args = [float(v) for v in rest[:-1].split(",") if v]
        try:
            return getattr(cls, name)(*args)
        except (AttributeError, TypeError):
            raise ValueError(f"cannot parse domain {text!r}") from None

    @property
    def ndim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def box(self) -> tuple[float, ...]:
        if self.kind == "disk":
            r = self.bounds[0]
            return (-r, r, -r, r)
        return self.bounds

    @property
    def x_lo(self) -> float:
        return self.box[0]

    @property
    def symmetric_in_x1(self) -> bool:
        if self.kind == "disk":
            return True
        lo, hi = self.box[:2]
        return math.isclose(lo, -hi, abs_tol=1e-14)

    @property
    def measure(self) -> float:
        if self.kind == "disk":
            return math.pi * self.bounds[0] ** 2
        b = self.box
        m = b[1] - b[0]
        return m if self.ndim == 1 else m * (b[3] - b[2])

    def __str__(self):
        return f"{self.kind}({','.join(f'{b:g}' for b in self.bounds)})"


class Grid:
    """Node box, interior mask and cell connectivity for one domain."""

    def __init__(self, domain: Domain, resolution: int):
        if resolution < 8:
            raise ValueError("resolution must be at least 8")
        self.domain = domain
        self.resolution = int(resolution)
        box = domain.box
        self.h = (box[1] - box[0]) / resolution
        x = box[0] + self.h * np.arange(resolution + 1)
        if domain.ndim == 1:
            self.axes = (x,)
            self.coords = (x,)
            interior = np.zeros(x.shape, dtype=bool)
            interior[1:-1] = True
        else:
            ny = int(round((box[3] - box[2]) / self.h))
            if not math.isclose(ny * self.h, box[3] - box[2], rel_tol=1e-9):
                raise ValueError("rectangle height must be a multiple of h")
            y = box[2] + self.h * np.arange(ny + 1)
            self.axes = (x, y)
            self.coords = tuple(np.meshgrid(x, y, indexing="ij"))
            interior = np.zeros(self.coords[0].shape, dtype=bool)
            if domain.kind == "disk":
                r = np.hypot(*self.coords)
                interior = r < domain.bounds[0] - DISK_MARGIN * self.h
            else:
                interior[1:-1, 1:-1] = True
        if not interior.any():
            raise ValueError("resolution too small to contain an interior node")
        self.interior = interior
        self.interior.setflags(write=False)

    @property
    def ndim(self) -> int:
        return self.domain.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.interior.shape

    @property
    def cell_measure(self) -> float:
        return self.h ** self.ndim

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior.ravel())

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    @cached_property
    def radius(self) -> np.ndarray:
        if self.ndim == 1:
            return np.abs(self.coords[0])
        return np.hypot(*self.coords)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def __repr__(self):
        return f"Grid({self.domain}, resolution={self.resolution}, h={self.h:g})"


def build_grid(domain: Domain, resolution: int) -> Grid:
    return Grid(domain, resolution)


class Field:
    """Nodal values on a grid, exactly zero off the interior mask."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        v = np.array(values, dtype=float)
        if v.shape != grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {grid.shape}")
        if not np.isfinite(v).all():
            raise ValueError("field values must be finite")
        off = v[~grid.interior]
        if np.any(off != 0):
            raise DirichletError(
                f"nonzero boundary values (max |u| = {np.abs(off).max():.3g} off the interior)")
        v.setflags(write=False)
        self.grid = grid
        self.values = v

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "Field":
        v = np.asarray(fn(*grid.coords), dtype=float) * np.ones(grid.shape)
        return cls(grid, np.where(grid.interior, v, 0.0))

    @classmethod
    def from_interior(cls, grid: Grid, vec: np.ndarray) -> "Field":
        v = np.zeros(grid.shape)
        v.ravel()[grid.interior_index] = vec
        return cls(grid, v)

    @property
    def interior_values(self) -> np.ndarray:
        return self.values.ravel()[self.grid.interior_index]

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid is not self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / other)

    def __neg__(self):
        return Field(self.grid, -self.values)

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def __repr__(self):
        return f"Field({self.grid!r}, sup={self.sup():.4g})"


@dataclass(frozen=True)
class GradientField:
    grid: Grid
    components: np.ndarray  # shape (ndim, *grid.shape)

    @cached_property
    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components ** 2, axis=0))


def _shift(a: np.ndarray, axis: int, k: int, fill) -> np.ndarray:
    """out[i] = a[i+k] along ``axis``, padded with ``fill``."""
    out = np.full_like(a, fill)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if k > 0:
        src[axis], dst[axis] = slice(k, n), slice(0, n - k)
    else:
        src[axis], dst[axis] = slice(0, n + k), slice(-k, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def gradient_field(u: Field) -> GradientField:
    """Central differences where both axis neighbours are interior, else one-sided."""
    g, v, m = u.grid, u.values, u.grid.interior
    comps = np.zeros((g.ndim,) + g.shape)
    for ax in range(g.ndim):
        up, dn = _shift(v, ax, 1, 0.0), _shift(v, ax, -1, 0.0)
        mu, md = _shift(m, ax, 1, False), _shift(m, ax, -1, False)
        d = np.zeros(g.shape)
        both = m & mu & md
        d[both] = (up - dn)[both] / (2 * g.h)
        fwd = m & mu & ~md
        d[fwd] = (up - v)[fwd] / g.h
        bwd = m & md & ~mu
        d[bwd] = (v - dn)[bwd] / g.h
        comps[ax] = d
    return GradientField(g, comps)


def integrate(values, grid: Grid | None = None) -> float:
    """Cell quadrature: sum over interior nodes times h^n."""
    if isinstance(values, Field):
        grid, values = values.grid, values.values
    if grid is None:
        raise TypeError("integrate needs a grid for raw arrays")
    values = np.asarray(values, dtype=float)
    return float(values[grid.interior].sum() * grid.cell_measure)


def norm_Lq(u: Field, q: float) -> float:
    return integrate(np.abs(u.values) ** q, u.grid) ** (1.0 / q)


def norm_W1p(u: Field, p: float) -> float:
    if not p > 1:
        raise ValueError("p must exceed 1")
    mag = gradient_field(u).magnitude
    return (integrate(np.abs(u.values) ** p, u.grid) + integrate(mag ** p, u.grid)) ** (1.0 / p)


def reflect_field(u: Field, lam: float) -> Field:
    """u_lambda(x) = u(2*lambda - x1, x2, ...) by linear interpolation along x1."""
    g = u.grid
    lo = g.domain.x_lo
    if not (lo - 1e-12 <= lam <= 1e-12):
        raise ValueError(f"lambda={lam} outside [{lo}, 0]")
    x1 = g.coords[0]
    pos = (2 * lam - x1 - lo) / g.h
    n = g.shape[0]
    # snap near-integer positions so grid-aligned reflections are exact
    near = np.rint(pos)
    pos = np.where(np.abs(pos - near) < 1e-9, near, pos)
    inside = (pos >= 0) & (pos <= n - 1)
    i0 = np.clip(np.floor(pos).astype(int), 0, n - 1)
    i1 = np.clip(i0 + 1, 0, n - 1)
    w = pos - i0
    v = u.values
    if g.ndim == 1:
        a, b = v[i0], v[i1]
    else:
        cols = np.broadcast_to(np.arange(g.shape[1]), g.shape)
        a, b = v[i0, cols], v[i1, cols]
    val = np.where(w == 0, a, (1 - w) * a + w * b)
    out = np.where(inside & g.interior, val, 0.0)
    return Field(g, out)


def field_to_csv(u: Field, path, t: float | None = None):
    """Write x1, x2, value for every node; a comment line names domain, h and t."""
    g = u.grid
    x1 = g.coords[0].ravel()
    x2 = g.coords[1].ravel() if g.ndim == 2 else np.zeros_like(x1)
    stamp = "" if t is None else f"{t:.17g}"
    with open(path, "w") as fh:
        fh.write(f"# domain={g.domain} h={g.h:.17g} t={stamp}\n")
        fh.write("x1,x2,value\n")
        for a, b, c in zip(x1, x2, u.values.ravel()):
            fh.write(f"{a:.17g},{b:.17g},{c:.17g}\n")


def field_from_csv(grid: Grid, path) -> Field:
    data = np.loadtxt(path, delimiter=",", comments="#", skiprows=2)
    return Field(grid, data[:, 2].reshape(grid.shape))
