"""Time stepping of the parabolic flow, trajectories and their post-processing.

Two schemes are available:

``implicit``
    backward Euler, (v - u)/dt + residual(v) = 0, solved by damped Newton;
``semi_implicit``
    diffusion weights frozen at u and the reaction (plus the a'(u) term)
    explicit: one linear solve per step.  For p <= 2, constant a and a convex
    primitive F this is a convex-concave splitting, so every step satisfies
    E(v) + ||v - u||^2/dt <= E(u) exactly, for any dt.

The flow always uses the zero extension of f below 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import (CoefficientModel, NonlinearityModel, check_structural_hypotheses,
                           extend_f_hat)
from .grid import Field, Grid, integrate, norm_Lq, norm_W1p
from .operators import (EnergyReport, RegularizationParams, energy, energy_gradient,
                        frozen_operator, hessian, lower_order_term)

log = logging.getLogger(__name__)

SCHEMES = ("implicit", "semi_implicit")


class StepRejected(RuntimeError):
    """Newton did not converge; carries the last iterate for diagnostics."""

    def __init__(self, last: Field, residual_norm: float):
        super().__init__(f"Newton failed, residual norm {residual_norm:.3e}")
        self.last = last
        self.residual_norm = residual_norm


@dataclass
class FlowConfig:
    dt0: float = 1e-3
    t_end: float = 1.0
    scheme: str = "implicit"
    newton_tol: float = 1e-9
    newton_max_iter: int = 25
    backtrack: float = 0.5
    stride: int = 1
    dt_min: float = 1e-12
    tol_E: float = 1e-10
    blowup_ceiling: float = 1e6
    vanish_floor: float = 0.0  # stop early once max u drops below this (0 = never)

    def __post_init__(self):
        if not self.dt0 > 0:
            raise ValueError("dt0 must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class Trajectory:
    grid: Grid
    p: float
    times: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    ut_l2: list[float] = field(default_factory=list)  # one entry per step
    dts: list[float] = field(default_factory=list)
    min_u: list[float] = field(default_factory=list)
    max_u: list[float] = field(default_factory=list)
    snapshots: dict[int, Field] = field(default_factory=dict)
    status: str = "running"
    rejected_steps: int = 0

    def record(self, t, E, u: Field, keep: bool, ut=None, dt=None):
        if ut is not None:
            self.ut_l2.append(ut)
            self.dts.append(dt)
        self.times.append(t)
        self.energy.append(E)
        self.min_u.append(float(u.values.min()))
        self.max_u.append(float(u.values.max()))
        if keep:
            self.snapshots[len(self.times) - 1] = u

    @property
    def steps(self) -> int:
        return len(self.ut_l2)

    @property
    def final(self) -> Field:
        return self.snapshots[max(self.snapshots)]

    @property
    def initial(self) -> Field:
        return self.snapshots[0]

    def snapshot_times(self) -> np.ndarray:
        return np.array([self.times[k] for k in sorted(self.snapshots)])

    def series(self) -> dict[str, np.ndarray]:
        ut = np.concatenate([[np.nan], self.ut_l2])
        return {"t": np.array(self.times), "energy": np.array(self.energy), "ut_l2": ut,
                "min_u": np.array(self.min_u), "max_u": np.array(self.max_u)}


@dataclass
class OmegaLimitReport:
    sample_times: list[float]
    sample_indices: list[int]
    lambdas: list[float]
    z: Field
    z_norm: float
    metrics: list[float]
    verdict: str
    vanish_tol: float

    def to_dict(self) -> dict:
        return {
            "sample_times": self.sample_times,
            "sample_indices": self.sample_indices,
            "lambdas": self.lambdas,
            "z_norm": self.z_norm,
            "metrics": self.metrics,
            "verdict": self.verdict,
            "vanish_tol": self.vanish_tol,
        }


def _solve_symmetric(A, b):
    # the frozen system is symmetric; symmetric-mode ordering roughly halves the cost
    lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
    return lu.solve(b)


class _Stepper:
    """Holds factorization caches for one (grid, model) combination."""

    def __init__(self, grid: Grid, cm: CoefficientModel, nm: NonlinearityModel,
                 reg: RegularizationParams, scheme: str, tol: float = 1e-9, max_iter: int = 25):
        self.grid, self.cm, self.nm, self.reg = grid, cm, nm, reg
        self.scheme = scheme
        self.tol, self.max_iter = tol, max_iter
        self.vol = grid.cell_measure
        self._linear = cm.name == "const" and nm.p == 2
        self._affine = self._linear and nm.name.startswith(("zero", "constant"))
        self._cache: dict[float, object] = {}

    def _l2(self, vec):
        return float(np.sqrt(np.sum(vec ** 2) * self.vol))

    def __call__(self, u: Field, dt: float) -> Field:
        if not dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme == "semi_implicit":
            return self._semi(u, dt)
        return self._implicit(u, dt)

    def _semi(self, u: Field, dt: float) -> Field:
        ui = u.interior_values
        rhs = ui / dt + self.nm.f(ui) - lower_order_term(u, self.cm, self.nm, self.reg)
        if self._linear:
            solve = self._cache.get(dt)
            if solve is None:
                L = frozen_operator(u, self.cm, self.nm, self.reg) / self.vol
                A = (sp.identity(L.shape[0]) / dt + L).tocsc()
                solve = self._cache[dt] = spla.factorized(A)
            v = solve(rhs)
        else:
            L = frozen_operator(u, self.cm, self.nm, self.reg) / self.vol
            v = _solve_symmetric(sp.identity(L.shape[0]) / dt + L, rhs)
        return Field.from_interior(self.grid, v)

    def _G(self, v, ui, dt):
        fv = Field.from_interior(self.grid, v)
        return (v - ui) / dt + energy_gradient(fv, self.cm, self.nm, self.reg) / self.vol

    def _implicit(self, u: Field, dt: float) -> Field:
        ui = u.interior_values
        v = ui.copy()
        G = self._G(v, ui, dt)
        norm = self._l2(G)
        eye = sp.identity(len(ui)) / dt
        for it in range(self.max_iter):
            # always take one step: an absolute tolerance would otherwise freeze small states
            if norm == 0 or (it > 0 and norm <= self.tol):
                return Field.from_interior(self.grid, v)
            if self._affine:
                # constant Jacobian: factor once per dt
                solve = self._cache.get(dt)
                if solve is None:
                    J = hessian(u, self.cm, self.nm, self.reg) / self.vol + eye
                    solve = self._cache[dt] = spla.factorized(J.tocsc())
                d = solve(-G)
            else:
                J = hessian(Field.from_interior(self.grid, v), self.cm, self.nm, self.reg) / self.vol
                d = spla.spsolve((J + eye).tocsc(), -G)
            if not np.all(np.isfinite(d)):
                break
            t = 1.0
            while t > 1e-6:
                trial = v + t * d
                Gt = self._G(trial, ui, dt)
                nt = self._l2(Gt)
                if nt < (1 - 1e-4 * t) * norm:
                    v, G, norm = trial, Gt, nt
                    break
                t *= 0.5
            else:
                break
        if norm <= self.tol:
            return Field.from_interior(self.grid, v)
        raise StepRejected(Field.from_interior(self.grid, v), norm)


def step(u: Field, dt: float, cm: CoefficientModel, nm: NonlinearityModel,
         reg: RegularizationParams, scheme: str = "implicit", *, tol: float = 1e-9,
         max_iter: int = 25) -> Field:
    return _Stepper(u.grid, cm, nm, reg, scheme, tol, max_iter)(u, dt)


def run_flow(u0: Field, cfg: FlowConfig, cm: CoefficientModel, nm: NonlinearityModel,
             reg: RegularizationParams) -> Trajectory:
    if np.any(u0.values < 0):
        raise ValueError("initial datum must be nonnegative")
    s_max = max(1.0, 2.0 * float(u0.values.max()))
    hyp = check_structural_hypotheses(cm, nm, s_max=s_max, samples=64)
    if not hyp.ellipticity_ok:
        raise ValueError(f"ellipticity fails: {hyp.witnesses}")
    nmh = extend_f_hat(nm)
    stepper = _Stepper(u0.grid, cm, nmh, reg, cfg.scheme, cfg.newton_tol, cfg.newton_max_iter)
    tr = Trajectory(u0.grid, nm.p)
    u, t = u0, 0.0
    E = energy(u, cm, nmh, reg)
    tr.record(t, E, u, keep=True)
    dt = cfg.dt0
    k = 0
    vol = u0.grid.cell_measure
    while t < cfg.t_end - 1e-12 * cfg.t_end:
        h = min(dt, cfg.t_end - t)
        try:
            v = stepper(u, h)
            Ev = energy(v, cm, nmh, reg)
            if Ev > E + cfg.tol_E * (1 + abs(E)):
                raise StepRejected(v, float("nan"))
        except StepRejected:
            tr.rejected_steps += 1
            dt = h * cfg.backtrack
            if dt < cfg.dt_min:
                tr.status = "dt_underflow"
                log.warning("dt underflow at t=%.6g", t)
                break
            continue
        k += 1
        ut = float(np.sqrt(np.sum((v.interior_values - u.interior_values) ** 2) * vol)) / h
        t = t + h
        done = t >= cfg.t_end - 1e-12 * cfg.t_end
        blow = float(v.values.max()) > cfg.blowup_ceiling
        vanish = cfg.vanish_floor > 0 and float(v.values.max()) < cfg.vanish_floor
        tr.record(t, Ev, v, keep=(k % cfg.stride == 0) or done or blow or vanish, ut=ut, dt=h)
        u, E = v, Ev
        if blow:
            tr.status = "blowup"
            break
        if vanish:
            tr.status = "vanished"
            break
        # recover the nominal step after backtracking
        dt = min(cfg.dt0, dt / cfg.backtrack) if dt < cfg.dt0 else cfg.dt0
    if tr.status == "running":
        tr.status = "completed"
    return tr


def verify_energy_inequality(tr: Trajectory, tol_E: float = 1e-10) -> EnergyReport:
    """Worst violation of E(t) + int_s^t ||u_t||^2 <= E(s) over all recorded s < t."""
    if not tr.times:
        raise ValueError("empty trajectory")
    E = np.asarray(tr.energy, dtype=float)
    diss = np.concatenate([[0.0], np.cumsum(np.asarray(tr.dts) * np.asarray(tr.ut_l2) ** 2)])
    Q = E + diss
    steps = len(E) - 1
    worst, pair = 0.0, (0, 0)
    if steps:
        run_min = np.minimum.accumulate(Q[:-1])
        arg = np.zeros(steps, dtype=int)
        best = 0
        for i in range(steps):
            if Q[i] <= Q[best]:
                best = i
            arg[i] = best
        gaps = Q[1:] - run_min
        j = int(np.argmax(gaps))
        worst, pair = max(float(gaps[j]), 0.0), (int(arg[j]), j + 1)
    jumps = np.diff(E)
    tol = tol_E * (1 + float(np.abs(E).max())) * max(steps, 1)
    return EnergyReport(
        times=np.asarray(tr.times), energy=E, dissipation=diss,
        max_positive_jump=float(max(jumps.max(), 0.0)) if steps else 0.0,
        max_violation=worst, tolerance=tol, passed=worst <= tol, worst_pair=pair)


def sample_omega_limit(tr: Trajectory, tau_list, *, vanish_factor: float = 1e-3,
                       stationary_rel: float = 1e-2) -> OmegaLimitReport:
    """Pick, in each window [tau, tau+1], the snapshot with the smallest ||u_t||.

    The candidate z is the sample from the last window.  ``vanished`` when
    ||z||_{W1p} is below ``vanish_factor * ||u0||_{W1p}``; ``nontrivial`` when
    the time derivative at z is below ``stationary_rel * ||z||``.
    """
    taus = sorted(float(t) for t in tau_list)
    if not taus:
        raise ValueError("need at least one window")
    t_last = tr.times[-1]
    if taus[-1] + 1 > t_last + 1e-9:
        raise ValueError(f"window [{taus[-1]}, {taus[-1] + 1}] exceeds the run (t_end={t_last})")
    keys = sorted(k for k in tr.snapshots if k > 0)
    times = np.array([tr.times[k] for k in keys])
    lam = np.array([tr.ut_l2[k - 1] for k in keys])
    chosen = []
    for tau in taus:
        inside = np.flatnonzero((times >= tau - 1e-12) & (times <= tau + 1 + 1e-12))
        if not len(inside):
            raise ValueError(f"no snapshot in window [{tau}, {tau + 1}]")
        chosen.append(int(inside[np.argmin(lam[inside])]))
    z = tr.snapshots[keys[chosen[-1]]]
    p = tr.p
    metrics = [norm_W1p(tr.snapshots[keys[c]] - z, p) for c in chosen[:-1]]
    z_norm = norm_W1p(z, p)
    vanish_tol = vanish_factor * norm_W1p(tr.initial, p)
    lam_z = float(lam[chosen[-1]])
    if z_norm < vanish_tol:
        verdict = "vanished"
    elif lam_z <= stationary_rel * z_norm:
        verdict = "nontrivial"
    else:
        verdict = "undecided"
    return OmegaLimitReport(
        sample_times=[float(times[c]) for c in chosen],
        sample_indices=[keys[c] for c in chosen],
        lambdas=[float(lam[c]) for c in chosen],
        z=z, z_norm=z_norm, metrics=metrics, verdict=verdict, vanish_tol=vanish_tol)


def check_time_equicontinuity(tr: Trajectory, mu0: float, q: float) -> float:
    """sup of ||u(t) - u(t+mu)||_{L^q} over snapshot pairs in the last quarter, mu <= mu0."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if mu0 <= 0:
        return 0.0
    keys = sorted(tr.snapshots)
    times = np.array([tr.times[k] for k in keys])
    t0, t1 = times[0], times[-1]
    tail = [i for i, t in enumerate(times) if t >= t0 + 0.75 * (t1 - t0)]
    worst = 0.0
    for a in tail:
        for b in tail:
            mu = times[b] - times[a]
            if 0 < mu <= mu0 + 1e-12:
                d = tr.snapshots[keys[b]] - tr.snapshots[keys[a]]
                worst = max(worst, norm_Lq(d, q))
    return worst


def trajectory_is_cauchy_tail(tr: Trajectory, tol: float) -> bool:
    """Pairwise W^{1,p} distances of last-quarter snapshots all below ``tol``."""
    keys = sorted(tr.snapshots)
    times = np.array([tr.times[k] for k in keys])
    tail = [keys[i] for i, t in enumerate(times) if t >= times[0] + 0.75 * (times[-1] - times[0])]
    ref = tr.snapshots[tail[-1]]
    return all(norm_W1p(tr.snapshots[k] - ref, tr.p) < tol / 2 for k in tail)


@dataclass
class EdgeTrack:
    """Result of bisecting the amplitude of an initial shape between decay and blow-up."""
    low: float
    high: float
    runs: int
    trajectory: Trajectory  # the run started from ``low * shape``
    outcomes: list[tuple[float, str]] = field(default_factory=list)


def classify_run(tr: Trajectory) -> str:
    """``up`` for runs that blow up or still grow at t_end, ``down`` otherwise."""
    if tr.status == "blowup":
        return "up"
    if tr.status == "completed" and len(tr.max_u) > 1 and tr.max_u[-1] > tr.max_u[-2]:
        return "up"
    return "down"


def edge_track(shape: Field, cfg: FlowConfig, cm: CoefficientModel, nm: NonlinearityModel,
               reg: RegularizationParams, low: float, high: float, *, rel_tol: float = 1e-12,
               max_runs: int = 80) -> EdgeTrack:
    """Bisection on the amplitude alpha of ``alpha * shape``.

    For a superlinear reaction the positive steady state is a saddle of the
    flow; amplitudes just below threshold linger near it before decaying, which
    is what makes a nontrivial omega-limit observable in finite time.  Needs
    ``cfg.blowup_ceiling`` and ``cfg.vanish_floor`` set so that both fates end
    the run early.
    """
    if not 0 < low < high:
        raise ValueError("need 0 < low < high")
    outcomes = []
    for a in (low, high):
        outcomes.append((a, classify_run(run_flow(a * shape, cfg, cm, nm, reg))))
    if [o for _, o in outcomes] != ["down", "up"]:
        raise ValueError(f"bracket does not straddle the threshold: {outcomes}")
    runs = 2
    while high - low > rel_tol * high and runs < max_runs:
        mid = 0.5 * (low + high)
        if not low < mid < high:
            break
        o = classify_run(run_flow(mid * shape, cfg, cm, nm, reg))
        outcomes.append((mid, o))
        runs += 1
        if o == "up":
            high = mid
        else:
            low = mid
    tr = run_flow(low * shape, cfg, cm, nm, reg)
    return EdgeTrack(low, high, runs + 1, tr, outcomes)


def lingering_windows(tr: Trajectory, width: float = 1.0, count: int = 3,
                      plateau: float = 0.5) -> list[float]:
    """Window starts ending at the slowest snapshot of the lingering phase.

    The lingering phase is where max u stays above ``plateau`` times its
    overall maximum; the last window is centred on the snapshot with the
    smallest ||u_t|| there, the earlier ones step back by ``width``.
    """
    keys = sorted(k for k in tr.snapshots if k > 0)
    top = max(tr.max_u)
    keys = [k for k in keys if tr.max_u[k] > plateau * top]
    if not keys:
        raise ValueError("no lingering phase in this trajectory")
    k = min(keys, key=lambda j: tr.ut_l2[j - 1])
    t_star = tr.times[k]
    last = max(0.0, min(t_star - 0.5 * width, tr.times[-1] - width))
    return [max(0.0, last - i * width) for i in reversed(range(count))]
