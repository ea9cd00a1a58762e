"""Structural data of the quasilinear problem: diffusivity a(s), reaction f(s).

Both models are plain frozen dataclasses holding vectorized callables.  The
hypothesis checks work by dense sampling (plus finite differences where a
derivative of a derived quantity is needed), never symbolically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

Scalar = Callable[[np.ndarray], np.ndarray]


class EvaluationError(ArithmeticError):
    """A model returned a non-finite value at some sample point."""

    def __init__(self, what: str, s: float):
        super().__init__(f"{what} is not finite at s={s!r}")
        self.what = what
        self.s = s


@dataclass(frozen=True)
class CoefficientModel:
    a: Scalar
    a1: Scalar
    a2: Scalar
    eta: float = 1.0
    cap: float = 1.0
    rho: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.cap > 0:
            raise ValueError("cap must be positive")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")


@dataclass(frozen=True)
class NonlinearityModel:
    f: Scalar
    f1: Scalar
    bigF: Scalar
    sigma: float
    c1: float
    c2: float
    n: int
    p: float
    name: str = "custom"

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.n < 1:
            raise ValueError("n must be a positive integer")

    @property
    def pstar(self) -> float:
        """Sobolev exponent np/(n-p); +inf when p >= n."""
        if self.p >= self.n:
            return math.inf
        return self.n * self.p / (self.n - self.p)


@dataclass
class HypothesisReport:
    ellipticity_ok: bool = True
    sign_condition_ok: bool = True
    growth_ok: bool = True
    positivity_ok: bool = True
    superlinearity_ok: bool = True
    H_monotone_ok: bool = True
    witnesses: list[tuple[str, float, float]] = field(default_factory=list)
    H_samples: np.ndarray | None = None
    H_values: np.ndarray | None = None

    def fail(self, flag: str, condition: str, s: float, residual: float):
        setattr(self, flag, False)
        self.witnesses.append((condition, float(s), float(residual)))

    def witness(self, condition: str):
        """First witness recorded for ``condition`` (None if it held)."""
        for w in self.witnesses:
            if w[0] == condition:
                return w
        return None

    @property
    def ok(self) -> bool:
        return all((self.ellipticity_ok, self.sign_condition_ok, self.growth_ok,
                    self.positivity_ok, self.superlinearity_ok, self.H_monotone_ok))

    def to_dict(self) -> dict:
        return {
            "ellipticity_ok": self.ellipticity_ok,
            "sign_condition_ok": self.sign_condition_ok,
            "growth_ok": self.growth_ok,
            "positivity_ok": self.positivity_ok,
            "superlinearity_ok": self.superlinearity_ok,
            "H_monotone_ok": self.H_monotone_ok,
            "witnesses": [list(w) for w in self.witnesses],
        }


def _evaluate(fn: Scalar, s: np.ndarray, what: str) -> np.ndarray:
    with np.errstate(all="ignore"):
        v = np.asarray(fn(s), dtype=float) * np.ones_like(s)
    bad = ~np.isfinite(v)
    if bad.any():
        raise EvaluationError(what, float(s[np.argmax(bad)]))
    return v


def _samples(s_max: float, samples: int) -> np.ndarray:
    if not s_max > 0:
        raise ValueError("s_max must be positive")
    if samples < 16:
        raise ValueError("need at least 16 samples")
    return np.linspace(0.0, s_max, samples)


def _first(report: HypothesisReport, flag: str, cond: str, s, resid, bad):
    if bad.any():
        k = int(np.argmax(bad))
        report.fail(flag, cond, s[k], resid[k])


def check_structural_hypotheses(cm: CoefficientModel, nm: NonlinearityModel,
                                s_max: float, samples: int = 257) -> HypothesisReport:
    s = _samples(s_max, samples)
    a = _evaluate(cm.a, s, "a")
    a1 = _evaluate(cm.a1, s, "a'")
    f = _evaluate(nm.f, s, "f")
    rep = HypothesisReport()

    # a >= eta, then the (boundd) caps on a and a'
    _first(rep, "ellipticity_ok", "ellipticity", s, cm.eta - a, a < cm.eta)
    _first(rep, "ellipticity_ok", "bound_a", s, np.abs(a) - cm.cap, np.abs(a) > cm.cap)
    _first(rep, "ellipticity_ok", "bound_a1", s, np.abs(a1) - cm.cap, np.abs(a1) > cm.cap)

    prod = a1 * s
    _first(rep, "sign_condition_ok", "sign", s, -prod, (np.abs(s) >= cm.rho) & (prod < 0))

    bound = nm.c1 + nm.c2 * s ** nm.sigma
    excess = np.abs(f) - bound
    _first(rep, "growth_ok", "growth", s, excess, excess > 1e-12 * (1 + bound))
    if not (1 <= nm.sigma < nm.pstar - 1):
        rep.fail("growth_ok", "sigma_window", nm.sigma, nm.sigma - (nm.pstar - 1))

    pos = s > 0
    _first(rep, "positivity_ok", "positivity", s[pos], -f[pos], f[pos] <= 0)
    return rep


def H_function(nm: NonlinearityModel, s: np.ndarray) -> np.ndarray:
    """H(s) = (n-p) s - n p F(s)/f(s), with H(0) = 0."""
    s = np.asarray(s, dtype=float)
    f = _evaluate(nm.f, s, "f")
    F = _evaluate(nm.bigF, s, "F")
    out = np.zeros_like(s)
    interior = s > 0
    zero = interior & (f == 0)
    if zero.any():
        raise ZeroDivisionError(f"f vanishes at s={float(s[np.argmax(zero)])!r}; H undefined")
    out[interior] = (nm.n - nm.p) * s[interior] - nm.n * nm.p * F[interior] / f[interior]
    return out


def check_uniqueness_conditions(nm: NonlinearityModel, s_max: float,
                                samples: int = 257) -> HypothesisReport:
    if not nm.p < nm.n:
        raise ValueError("uniqueness conditions need p < n")
    s = _samples(s_max, samples)
    rep = HypothesisReport()
    pos = s > 0
    sp = s[pos]
    lhs = (nm.p - 1) * _evaluate(nm.f, sp, "f")
    rhs = sp * _evaluate(nm.f1, sp, "f'")
    # strict inequality with a relative margin so the equality case f = s^(p-1) fails
    bad = ~((0 < lhs) & (lhs < rhs - 1e-12 * np.abs(rhs)))
    _first(rep, "superlinearity_ok", "superlinearity", sp, lhs - rhs, bad)

    H = H_function(nm, s)
    slope = np.diff(H) / np.diff(s)
    tol = 1e-8 * (1 + np.abs(H[1:]))
    _first(rep, "H_monotone_ok", "H_monotone", s[1:], slope, slope > tol)
    rep.H_samples, rep.H_values = s, H
    return rep


def extend_f_hat(nm: NonlinearityModel) -> NonlinearityModel:
    """Zero extension of f to negative arguments."""
    f, f1, F = nm.f, nm.f1, nm.bigF

    def fh(s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 0, f(np.maximum(s, 0.0)), 0.0)

    def f1h(s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 0, f1(np.maximum(s, 0.0)), 0.0)

    def Fh(s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 0, F(np.maximum(s, 0.0)), 0.0)

    name = nm.name if nm.name.endswith("^") else nm.name + "^"
    return replace(nm, f=fh, f1=f1h, bigF=Fh, name=name)


# --------------------------------------------------------------- catalogue

def coefficient(name: str, *, eta: float | None = None, cap: float | None = None,
                rho: float = 0.0) -> CoefficientModel:
    if name == "const":
        return CoefficientModel(
            a=lambda s: np.ones_like(np.asarray(s, dtype=float)),
            a1=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
            a2=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
            eta=eta or 1.0, cap=cap or 1.0, rho=rho, name="const")
    if name == "quadratic":
        # cap only certifies the sampled range; a = 1 + s^2 is not globally bounded
        return CoefficientModel(
            a=lambda s: 1.0 + np.asarray(s, dtype=float) ** 2,
            a1=lambda s: 2.0 * np.asarray(s, dtype=float),
            a2=lambda s: 2.0 * np.ones_like(np.asarray(s, dtype=float)),
            eta=eta or 1.0, cap=cap or 100.0, rho=rho, name="quadratic")
    if name == "linear_decay":
        # a = 1 - s: deliberately violates ellipticity past s = 1 - eta
        return CoefficientModel(
            a=lambda s: 1.0 - np.asarray(s, dtype=float),
            a1=lambda s: -np.ones_like(np.asarray(s, dtype=float)),
            a2=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
            eta=eta or 0.5, cap=cap or 10.0, rho=rho, name="linear_decay")
    raise KeyError(f"unknown coefficient model {name!r}")


def _power(q: float, n: int, p: float, name: str) -> NonlinearityModel:
    if q <= 0:
        raise ValueError("power exponent must be positive")

    def f(s):
        s = np.asarray(s, dtype=float)
        return np.sign(s) * np.abs(s) ** q

    def f1(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return q * np.abs(s) ** (q - 1)

    def F(s):
        s = np.asarray(s, dtype=float)
        return np.abs(s) ** (q + 1) / (q + 1)

    sigma = max(q, 1.0)
    return NonlinearityModel(f=f, f1=f1, bigF=F, sigma=sigma,
                             c1=1.0 if q < 1 else 0.0, c2=1.0, n=n, p=p, name=name)


def nonlinearity(text: str, *, n: int = 2, p: float = 2.0) -> NonlinearityModel:
    """Build a reaction term from a catalogue name.

    ``zero``, ``constant:c``, ``power:q`` and ``critical`` (q = p* - 1) are known.
    """
    kind, _, arg = text.partition(":")
    if kind == "zero":
        return NonlinearityModel(
            f=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
            f1=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
            bigF=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
            sigma=1.0, c1=0.0, c2=0.0, n=n, p=p, name="zero")
    if kind == "constant":
        c = float(arg or 1.0)
        return NonlinearityModel(
            f=lambda s: np.full_like(np.asarray(s, dtype=float), c),
            f1=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
            bigF=lambda s: c * np.asarray(s, dtype=float),
            sigma=1.0, c1=abs(c), c2=0.0, n=n, p=p, name=f"constant:{c:g}")
    if kind == "power":
        if not arg:
            raise KeyError("power needs an exponent, e.g. power:3")
        return _power(float(arg), n, p, f"power:{float(arg):g}")
    if kind == "critical":
        if p >= n:
            raise ValueError(f"no critical exponent for p={p} >= n={n} (p* is infinite)")
        q = n * p / (n - p) - 1
        return _power(q, n, p, "critical")
    raise KeyError(f"unknown nonlinearity {text!r}")
