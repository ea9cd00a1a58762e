"""Registered experiments and their batch pipeline.

A preset is a runner plus default settings.  Every run goes through the same
stages: hypothesis checks, flow and/or stationary solves, diagnostics, export.
Each verdict lands in ``manifest.json`` next to the data files it refers to.
"""
from __future__ import annotations

import json
import logging
import math
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .coefficients import (check_structural_hypotheses, check_uniqueness_conditions, coefficient,
                           nonlinearity)
from .config import ConfigError, ExperimentConfig
from .diagnostics import (comparison_experiment, critical_set_report, moving_plane_sweep,
                          symmetry_report, weighted_poincare_constant)
from .flow import (Trajectory, edge_track, lingering_windows, run_flow, sample_omega_limit,
                   verify_energy_inequality)
from .grid import Domain, Field, build_grid, field_to_csv, norm_W1p
from .operators import RegularizationParams
from .stationary import exact_p_torsion, solve_stationary, verify_stationary

log = logging.getLogger(__name__)

SYMMETRY_TOL = 5e-3
PLANE_TOL = 5e-3
CRITICAL_DELTA = 1e-3
CRITICAL_FRACTION = 0.05


@dataclass
class Verdict:
    passed: bool
    value: float | str | None = None
    threshold: float | str | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {"passed": bool(self.passed), "value": _plain(self.value),
                "threshold": _plain(self.threshold), "note": self.note}


def _plain(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


class RunContext:
    """Collects verdicts and files for one experiment directory."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.verdicts: dict[str, Verdict] = {}
        self.files: list[str] = []
        self.notes: list[str] = []
        self.data: dict[str, object] = {}

    def verdict(self, name: str, passed: bool, value=None, threshold=None, note: str = ""):
        if name in self.verdicts:
            raise KeyError(f"duplicate verdict {name!r}")
        self.verdicts[name] = Verdict(bool(passed), value, threshold, note)

    def _path(self, rel: str) -> Path:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(rel)
        return path

    def write_json(self, rel: str, obj) -> Path:
        path = self._path(rel)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")
        return path

    def write_field(self, tag: str, u: Field, t: float | None = None) -> Path:
        name = "final" if t is None else f"{t:.6f}"
        return field_to_csv(u, self._path(f"snapshots/{tag}/{name}.csv"), t)

    def write_trajectory(self, tag: str, tr: Trajectory) -> Path:
        s = tr.series()
        cols = ("t", "energy", "ut_l2", "min_u", "max_u")
        path = self._path(f"{tag}_series.csv")
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in zip(*(s[c] for c in cols)):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        k = max(tr.snapshots)
        self.write_field(tag, tr.snapshots[k], tr.times[k])
        return path

    def check_trajectory(self, tag: str, tr: Trajectory):
        """Energy inequality and positivity verdicts for a recorded run."""
        fc = self.cfg.flow
        rep = verify_energy_inequality(tr, fc.tol_E)
        self.verdict(f"{tag}.energy_inequality", rep.passed, rep.max_violation, rep.tolerance)
        self.write_json(f"{tag}_energy.json", rep.to_dict())
        floor = -10 * fc.newton_tol
        lowest = float(min(tr.min_u))
        self.verdict(f"{tag}.positivity", lowest >= floor, lowest, floor)
        self.data.setdefault("trajectories", {})[tag] = {
            "status": tr.status, "steps": tr.steps, "t_final": tr.times[-1],
            "rejected_steps": tr.rejected_steps, "min_u": lowest,
            "energy_violation": rep.max_violation, "energy_tolerance": rep.tolerance}


@dataclass
class Preset:
    name: str
    description: str
    runner: Callable[[ExperimentConfig, RunContext], None]
    defaults: dict
    flow: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    validate: Callable | None = None


PRESETS: dict[str, Preset] = {}


def preset(name: str, description: str, defaults: dict, flow=None, diagnostics=None,
           params=None, validate=None):
    def wrap(fn):
        PRESETS[name] = Preset(name, description, fn, defaults, flow or {}, diagnostics or {},
                               params or {}, validate)
        return fn
    return wrap


# ------------------------------------------------------------------ helpers

def _setup(cfg: ExperimentConfig):
    grid = build_grid(Domain.parse(cfg.domain), cfg.resolution)
    cm = coefficient(cfg.a)
    nm = nonlinearity(cfg.f, n=grid.ndim, p=cfg.p)
    reg = RegularizationParams(0.0) if cfg.p == 2 else RegularizationParams.default_for(grid)
    return grid, cm, nm, reg


def _hypotheses(ctx: RunContext, cm, nm, s_max: float, *, need_positive: bool = True):
    rep = check_structural_hypotheses(cm, nm, s_max=s_max)
    ctx.write_json("hypotheses.json", rep.to_dict())
    ok = rep.ellipticity_ok and rep.sign_condition_ok and rep.growth_ok
    if need_positive:
        ok = ok and rep.positivity_ok
    ctx.verdict("hypotheses", ok, None, None, "; ".join(w[0] for w in rep.witnesses))
    return rep


def _shape(grid, name: str, tilt: float = 0.0) -> Field:
    R = grid.domain.bounds[0] if grid.domain.kind == "disk" else 1.0
    shapes = {
        "paraboloid": lambda x, y: R * R - x * x - y * y,
        "cosine2": lambda x, y: np.cos(0.5 * np.pi * np.hypot(x, y) / R) ** 2,
        "quartic": lambda x, y: (R * R - x * x - y * y) ** 2,
    }
    if name not in shapes:
        raise ConfigError(f"unknown initial shape {name!r}")
    base = shapes[name]
    u = Field.from_function(grid, lambda x, y: base(x, y) * np.exp(tilt * (x + 0.5 * y) / R))
    return u / u.sup()


def _stationary_diagnostics(ctx: RunContext, tag: str, z: Field, p: float):
    sup = z.sup()
    mp = moving_plane_sweep(z, 16)
    mp.to_csv(ctx._path(f"{tag}_moving_plane.csv"))
    ctx.verdict(f"{tag}.moving_plane", mp.overall_max <= PLANE_TOL * sup, mp.overall_max / sup,
                PLANE_TOL)
    if ctx.cfg.diagnostics.get("critical_set", True):
        deltas = [1e-3, 1e-2, 5e-2, 1e-1]
        ys = [(0.0, 0.0), (0.3, 0.0), (0.0, -0.4), (0.2, 0.2), (-0.5, 0.1)]
        cs = critical_set_report(z, deltas, min(0.5 / (p - 1), 0.9), 0.0, 0.0, ys, p=p)
        cs.to_csv(ctx._path(f"{tag}_critical_set.csv"))
        ctx.write_json(f"{tag}_critical_set.json", cs.to_dict())
        frac = float(cs.measure_fraction[0])
        ctx.verdict(f"{tag}.critical_set", frac <= CRITICAL_FRACTION, frac, CRITICAL_FRACTION,
                    f"fraction of {{|grad u| < {CRITICAL_DELTA:g}}}")


def _polish(ctx, limits, cm, nm, reg, p):
    """Newton from the first omega-limit; every limit must lie within 1e-3 of the result."""
    pol = solve_stationary(limits[0], cm, nm, reg, tol=1e-9)
    ctx.verdict("omega.stationary_polish", pol.converged, pol.residual_norm, 1e-9)
    dist = max(norm_W1p(z - pol.z, p) for z in limits)
    ctx.verdict("omega.cross_validation", dist <= 1e-3, dist, 1e-3,
                "W1p distance from the omega-limit(s) to the stationary solve seeded there")
    ctx.write_field("stationary", pol.z)
    ctx.write_json("stationary.json", pol.summary())
    _stationary_diagnostics(ctx, "stationary", pol.z, p)


def _edge_pipeline(ctx, tag, shape, grid, cm, nm, reg):
    cfg = ctx.cfg
    low, high = cfg.param("low", 0.1), cfg.param("high", 20.0)
    et = edge_track(shape, cfg.flow, cm, nm, reg, low, high, rel_tol=cfg.param("rel_tol", 1e-13))
    tr = et.trajectory
    ctx.write_trajectory(tag, tr)
    ctx.check_trajectory(tag, tr)
    om = sample_omega_limit(tr, lingering_windows(tr))
    z = om.z
    k = om.sample_indices[-1]
    ctx.write_field(f"{tag}_omega", z, tr.times[k])
    info = om.to_dict()
    info.update(amplitude_low=et.low, amplitude_high=et.high, runs=et.runs)
    ctx.write_json(f"{tag}_omega.json", info)
    return om, et


# ------------------------------------------------------------------ presets

def _check_heat(cfg, dom, nm):
    if dom.kind != "interval" or cfg.p != 2 or cfg.a != "const" or nm.name != "zero":
        raise ConfigError("heat_decay needs an interval, p = 2, a = const and f = zero")


@preset("heat_decay", "linear heat flow of the first sine mode; decay rate and energy oracle",
        {"domain": "interval(0,1)", "resolution": 128, "p": 2, "a": "const", "f": "zero"},
        flow={"scheme": "implicit", "dt0": 1e-3, "t_end": 1.0, "stride": 50},
        validate=_check_heat)
def _heat_decay(cfg: ExperimentConfig, ctx: RunContext):
    grid, cm, nm, reg = _setup(cfg)
    lo, hi = grid.domain.box[:2]
    L = hi - lo
    lam = (math.pi / L) ** 2
    u0 = Field.from_function(grid, lambda x: np.sin(math.pi * (x - lo) / L))
    _hypotheses(ctx, cm, nm, 2.0, need_positive=False)
    tr = run_flow(u0, cfg.flow, cm, nm, reg)
    ctx.write_trajectory("flow", tr)
    ctx.check_trajectory("flow", tr)
    t = np.array(tr.times)
    m = np.array(tr.max_u)
    sel = (t >= 0.1 * min(1.0, t[-1])) & (m > 0)
    rate = -np.polyfit(t[sel], np.log(m[sel]), 1)[0]
    ctx.verdict("decay_rate", abs(rate / lam - 1) <= 0.02, rate, lam, "fitted from max u, within 2%")
    t_e = min(0.1, t[-1])
    E = float(np.interp(t_e, t, tr.energy))
    E_ref = math.exp(-2 * lam * t_e) * lam * L / 4
    ctx.verdict("energy_at_0.1", abs(E / E_ref - 1) <= 0.02, E, E_ref, "within 2%")


def _check_torsion(cfg, dom, nm):
    if dom.kind != "disk" or dom.ndim != 2:
        raise ConfigError("torsion presets need a disk")
    if not nm.name.startswith("constant") or nm.f(np.array([1.0]))[0] <= 0:
        raise ConfigError("torsion presets need f = constant:c with c > 0")


@preset("torsion_disk", "p-torsion problem on the unit disk against the closed form, plus its flow",
        {"domain": "disk(1)", "resolution": 64, "p": 2, "a": "const", "f": "constant:1"},
        flow={"dt0": 1e-2, "t_end": 4.0, "stride": 20},
        params={"resolutions": "64", "scheme": "auto"}, validate=_check_torsion)
def _torsion_disk(cfg: ExperimentConfig, ctx: RunContext):
    p = cfg.p
    cm = coefficient(cfg.a)
    _hypotheses(ctx, cm, nonlinearity(cfg.f, n=2, p=p), 2.0)
    load = float(nonlinearity(cfg.f, n=2, p=p).f(np.array([1.0]))[0])
    res = [int(r) for r in cfg.params.get("resolutions", str(cfg.resolution)).split(",")]
    rows, z_fine = [], None
    for N in res:
        grid = build_grid(Domain.parse(cfg.domain), N)
        nm = nonlinearity(cfg.f, n=2, p=p)
        reg = RegularizationParams.default_for(grid)
        sol = solve_stationary(grid.zeros(), cm, nm, reg)
        exact = exact_p_torsion(grid, p) * load ** (1 / (p - 1))
        err = float(np.abs(sol.z.values - exact.values).max())
        rows.append({"resolution": N, "linf_error": err, "residual": sol.residual_norm,
                     "converged": sol.converged, "iterations": sol.iterations})
        ctx.verdict(f"stationary_{N}.converged", sol.converged, sol.residual_norm, 1e-8)
        z_fine = sol.z
    ctx.write_json("convergence.json", rows)
    for a, b in zip(rows, rows[1:]):
        ratio = a["linf_error"] / b["linf_error"]
        ctx.verdict(f"error_ratio_{a['resolution']}_{b['resolution']}", 1.4 <= ratio <= 2.6, ratio,
                    "[1.4, 2.6]")
    ctx.write_field("stationary", z_fine)
    _stationary_diagnostics(ctx, "stationary", z_fine, p)

    # the flow from rest settles on the same profile
    grid = z_fine.grid
    nm = nonlinearity(cfg.f, n=2, p=p)
    reg = RegularizationParams.default_for(grid)
    scheme = cfg.params.get("scheme", "auto")
    if scheme == "auto":
        # lagged weights dissipate the full energy only for p <= 2
        scheme = "semi_implicit" if p <= 2 else "implicit"
    tr = run_flow(grid.zeros(), replace(cfg.flow, scheme=scheme), cm, nm, reg)
    ctx.write_trajectory("flow", tr)
    ctx.check_trajectory("flow", tr)
    t_end = tr.times[-1]
    om = sample_omega_limit(tr, [max(0.0, t_end - 2), t_end - 1])
    dist = norm_W1p(om.z - z_fine, p) / norm_W1p(z_fine, p)
    ctx.verdict("flow.omega_limit", om.verdict == "nontrivial" and dist <= 1e-3, dist, 1e-3,
                f"verdict {om.verdict}; relative W1p distance to the stationary solve")


def _check_symmetry(cfg, dom, nm):
    if dom.kind != "disk":
        raise ConfigError("symmetry_ball needs a disk")


@preset("symmetry_ball", "asymmetric data on the disk; symmetry of the omega-limit found by edge tracking",
        {"domain": "disk(1)", "resolution": 96, "p": 2, "a": "const", "f": "power:3"},
        flow={"scheme": "semi_implicit", "dt0": 5e-3, "t_end": 30.0, "blowup_ceiling": 50.0,
              "vanish_floor": 1e-2},
        params={"shape": "paraboloid", "tilt": 0.1, "low": 0.1, "high": 20.0, "rel_tol": 0.0},
        validate=_check_symmetry)
def _symmetry_ball(cfg: ExperimentConfig, ctx: RunContext):
    grid, cm, nm, reg = _setup(cfg)
    _hypotheses(ctx, cm, nm, 10.0)
    shape = _shape(grid, cfg.params.get("shape", "paraboloid"), cfg.param("tilt", 0.1))
    ctx.write_field("initial_shape", shape, 0.0)
    om, _ = _edge_pipeline(ctx, "flow", shape, grid, cm, nm, reg)
    sym = symmetry_report(om.z)
    ctx.write_json("omega_symmetry.json", sym.to_dict())
    ok = om.verdict == "vanished" or (om.verdict == "nontrivial" and sym.within(SYMMETRY_TOL))
    worst = max(sym.asymmetry_x1, sym.radial_deviation or 0.0, sym.monotonicity_defect)
    ctx.verdict("omega_symmetry", ok, worst, SYMMETRY_TOL, f"omega-limit verdict {om.verdict}")
    if om.verdict == "nontrivial":
        _polish(ctx, [om.z], cm, nm, reg, cfg.p)


def _check_uniqueness(cfg, dom, nm):
    kind, _, arg = cfg.f.partition(":")
    if kind != "power":
        raise ConfigError("uniqueness_ball needs f = power:q")
    if not cfg.p < dom.ndim:
        raise ConfigError(f"uniqueness_ball needs p < n (p={cfg.p}, n={dom.ndim})")
    q = float(arg)
    if not (cfg.p - 1 < q < nm.pstar - 1):
        raise ConfigError(f"q={q:g} outside the window (p-1, p*-1) = ({cfg.p - 1:g}, {nm.pstar - 1:g})")


@preset("uniqueness_ball", "two radial data below p*-1 growth converge to one positive steady state",
        {"domain": "disk(1)", "resolution": 48, "p": 1.5, "a": "const", "f": "power:2"},
        flow={"scheme": "semi_implicit", "dt0": 2e-2, "t_end": 40.0, "blowup_ceiling": 10.0,
              "vanish_floor": 1.0},
        params={"shapes": "paraboloid,cosine2", "low": 1.0, "high": 10.0, "rel_tol": 1e-13},
        validate=_check_uniqueness)
def _uniqueness_ball(cfg: ExperimentConfig, ctx: RunContext):
    grid, cm, nm, reg = _setup(cfg)
    _hypotheses(ctx, cm, nm, 10.0)
    uq = check_uniqueness_conditions(nm, s_max=10.0)
    ctx.write_json("uniqueness_conditions.json", uq.to_dict())
    ctx.verdict("uniqueness_conditions", uq.ok, None, None, "; ".join(w[0] for w in uq.witnesses))
    shapes = [s.strip() for s in cfg.params.get("shapes", "paraboloid,cosine2").split(",")]
    if len(shapes) != 2 or shapes[0] == shapes[1]:
        raise ConfigError("uniqueness_ball needs two distinct shapes")
    limits = []
    for k, name in enumerate(shapes):
        om, _ = _edge_pipeline(ctx, f"flow_{k}", _shape(grid, name), grid, cm, nm, reg)
        ctx.verdict(f"flow_{k}.omega_verdict", om.verdict == "nontrivial", om.verdict, "nontrivial")
        limits.append(om.z)
    dist = norm_W1p(limits[0] - limits[1], cfg.p)
    ctx.verdict("omega_distance", dist <= 1e-3, dist, 1e-3, "W1p distance of the two omega-limits")
    _polish(ctx, limits, cm, nm, reg, cfg.p)


@preset("critical_vanishing",
        "qualitative proxy for the critical exponent: steep power at n = 2, vanish or blow up",
        {"domain": "disk(1)", "resolution": 48, "p": 2, "a": "const", "f": "power:7"},
        flow={"scheme": "semi_implicit", "dt0": 1e-2, "t_end": 10.0, "stride": 10,
              "blowup_ceiling": 1e6, "vanish_floor": 1e-6},
        params={"amplitude": 1.0, "shape": "paraboloid"})
def _critical_vanishing(cfg: ExperimentConfig, ctx: RunContext):
    grid, cm, nm, reg = _setup(cfg)
    ctx.notes.append(
        "qualitative proxy: at n = 2 the Sobolev exponent is infinite, so a steep power "
        f"({cfg.f}) stands in for the critical one; the dichotomy is checked, not the Pohozaev regime")
    ctx.data["qualitative_proxy"] = True
    _hypotheses(ctx, cm, nm, 10.0)
    u0 = cfg.param("amplitude", 1.0) * _shape(grid, cfg.params.get("shape", "paraboloid"))
    tr = run_flow(u0, cfg.flow, cm, nm, reg)
    ctx.write_trajectory("flow", tr)
    ctx.check_trajectory("flow", tr)
    if tr.status == "blowup":
        ctx.verdict("dichotomy", True, "blowup", "vanished or blowup")
        return
    t_end = tr.times[-1]
    verdict = "vanished" if tr.status == "vanished" else \
        sample_omega_limit(tr, [max(0.0, t_end - 1)]).verdict
    ctx.verdict("dichotomy", verdict == "vanished", verdict, "vanished or blowup")


@preset("comparison_torsion", "ordered loads give ordered torsion profiles on a small subdomain",
        {"domain": "disk(1)", "resolution": 64, "p": 2, "a": "const", "f": "constant:1"},
        params={"load_v": 1.2, "mask_radius": 0.3}, validate=_check_torsion)
def _comparison_torsion(cfg: ExperimentConfig, ctx: RunContext):
    grid, cm, nm_u, _ = _setup(cfg)
    reg = RegularizationParams.default_for(grid)
    nm_v = nonlinearity(f"constant:{cfg.param('load_v', 1.2):g}", n=2, p=cfg.p)
    _hypotheses(ctx, cm, nm_u, 2.0)
    u = solve_stationary(grid.zeros(), cm, nm_u, reg).z
    v = solve_stationary(grid.zeros(), cm, nm_v, reg).z
    mask = grid.interior & (grid.radius < cfg.param("mask_radius", 0.3))
    rep = comparison_experiment(u, v, mask, problems=((cm, nm_u, reg), (cm, nm_v, reg)))
    ctx.write_json("comparison.json", rep.to_dict())
    ctx.write_field("u", u)
    ctx.write_field("v", v)
    ctx.verdict("comparison", rep.passed and rep.applicable, rep.violation, 1e-8 * v.sup(),
                "; ".join(rep.notes))


@preset("poincare_shrink", "weighted Poincare constant on nested intervals shrinks with the domain",
        {"domain": "interval(0,1)", "resolution": 128, "p": 2, "a": "const", "f": "zero"},
        params={"lengths": "1,0.5", "trials": 32})
def _poincare_shrink(cfg: ExperimentConfig, ctx: RunContext):
    lengths = sorted((float(x) for x in cfg.params.get("lengths", "1,0.5").split(",")), reverse=True)
    trials = cfg.param("trials", 32, int)
    lo = Domain.parse(cfg.domain).box[0]
    rows = []
    for L in lengths:
        grid = build_grid(Domain.interval(lo, lo + L), cfg.resolution)
        w = Field.from_function(grid, lambda x: (x - lo) * (lo + L - x))
        c = weighted_poincare_constant(w, cfg.p, trials, seed=cfg.seed)
        rows.append({"length": L, "estimate": c, "reference": L / math.pi})
        if cfg.p == 2:
            rel = abs(c / (L / math.pi) - 1)
            ctx.verdict(f"constant_L{L:g}", rel <= 0.1, c, L / math.pi, "within 10% of L/pi")
    ctx.write_json("poincare.json", rows)
    est = [r["estimate"] for r in rows]
    ctx.verdict("monotone_in_length", all(a >= b for a, b in zip(est, est[1:])), None, None)


@preset("quadratic_decay", "decay under a(u) = 1 + u^2 exercising the a'(u)|grad u|^p/p term",
        {"domain": "interval(-1,1)", "resolution": 128, "p": 2, "a": "quadratic", "f": "zero"},
        flow={"scheme": "implicit", "dt0": 1e-3, "t_end": 1.0, "stride": 50},
        params={"amplitude": 2.0})
def _quadratic_decay(cfg: ExperimentConfig, ctx: RunContext):
    grid, cm, nm, reg = _setup(cfg)
    amp = cfg.param("amplitude", 2.0)
    _hypotheses(ctx, cm, nm, 2 * amp, need_positive=False)
    lo, hi = grid.domain.box[:2]
    u0 = Field.from_function(grid, lambda x: amp * np.sin(math.pi * (x - lo) / (hi - lo)))
    tr = run_flow(u0, cfg.flow, cm, nm, reg)
    ctx.write_trajectory("flow", tr)
    ctx.check_trajectory("flow", tr)
    m = np.array(tr.max_u)
    ctx.verdict("max_decreasing", bool(np.all(np.diff(m) <= 1e-12)), float(m[-1]), float(m[0]))


# ------------------------------------------------------------------ driver

@dataclass
class RunResult:
    preset: str
    out: Path
    verdicts: dict[str, Verdict]
    manifest: dict

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


def _versions() -> dict:
    return {"quasiflow": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _write_manifest(out: Path, manifest: dict) -> Path:
    path = out / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_plain) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def export(reports: dict, trajectory: Trajectory | None, out, *, seed: int = 0) -> list[Path]:
    """Write reports (JSON, plus CSV curves where a report has them) and a trajectory.

    A manifest listing the files is always written, so an empty export
    yields ``manifest.json`` alone.
    """
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    ctx = RunContext(None, out)
    for name, rep in reports.items():
        ctx.write_json(f"{name}.json", rep.to_dict())
        if hasattr(rep, "to_csv"):
            rep.to_csv(ctx._path(f"{name}.csv"))
    if trajectory is not None:
        ctx.write_trajectory("flow", trajectory)
    files = sorted(set(ctx.files))
    manifest = {"seed": seed, "versions": _versions(), "files": files + ["manifest.json"]}
    return [out / f for f in files] + [_write_manifest(out, manifest)]


def _clear_previous(out: Path):
    """Remove the files a previous run listed in its manifest (nothing else)."""
    old = out / "manifest.json"
    if not old.is_file():
        return
    try:
        files = json.loads(old.read_text()).get("files", [])
    except (OSError, ValueError):
        return
    root = out.resolve()
    for rel in files:
        path = (out / rel).resolve()
        if root in path.parents and path.is_file():
            path.unlink()
    for d in sorted((p for p in out.rglob("*") if p.is_dir()), reverse=True):
        if not any(d.iterdir()):
            d.rmdir()


def run_experiment(cfg: ExperimentConfig, out: Path | None = None) -> RunResult:
    out = Path(out) if out is not None else cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    _clear_previous(out)
    ctx = RunContext(cfg, out)
    status = "completed"
    try:
        PRESETS[cfg.preset].runner(cfg, ctx)
    except ConfigError:
        raise
    except Exception as exc:  # a crashed pipeline is a FAIL with its cause recorded
        log.exception("preset %s failed", cfg.preset)
        status = "error"
        ctx.verdict("pipeline", False, type(exc).__name__, None, str(exc))
    manifest = {
        "preset": cfg.preset,
        "description": PRESETS[cfg.preset].description,
        "status": status,
        "passed": all(v.passed for v in ctx.verdicts.values()),
        "config": cfg.echo(),
        "seed": cfg.seed,
        "versions": _versions(),
        "verdicts": {k: v.to_dict() for k, v in ctx.verdicts.items()},
        "files": sorted(set(ctx.files)) + ["manifest.json"],
        "notes": ctx.notes,
        "data": ctx.data,
    }
    _write_manifest(out, manifest)
    return RunResult(cfg.preset, out, ctx.verdicts, manifest)
