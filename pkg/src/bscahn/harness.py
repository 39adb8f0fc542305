"""Scenario configuration and run orchestration.

A scenario is a flat ``key = value`` text document (``#`` comments, blank
lines ignored) that fully determines one experiment: an evolution run, a
two-trajectory continuous-dependence study, the inequality verification
suite, or an elliptic convergence study.  Parsing fills documented defaults,
rejects unknown keys, and reports every violation with the offending key
path.  ``run_scenario`` executes the experiment into an output directory and
writes a diagnostics CSV, field snapshots (CSV and legacy-ASCII VTK), and a
``summary.json`` that embeds the fully resolved configuration, so a run can
always be audited and replayed.

Key reference (defaults in parentheses):

    kind                evolve | cdep | verify | elliptic        (evolve)
    level               mesh refinement level                    (3)
    T                   final time                               (1.0)
    model.K             phase-coupling parameter, "inf" allowed  (inf)
    model.L             potential-coupling parameter             (inf)
    model.alpha         trace coupling factor                    (1)
    model.beta          mass coupling factor                     (1)
    model.potential     logarithmic | quartic                    (logarithmic)
    model.theta         potential temperature                    (1)
    model.theta0        well depth parameter                     (2)
    mobility.<side>.kind        constant | polynomial | tabulated (constant)
    mobility.<side>.value       constant value                   (1)
    mobility.<side>.coeffs      comma list, increasing order     (-)
    mobility.<side>.m_lower     certified lower bound            (value)
    mobility.<side>.m_upper     certified upper bound            (value)
    mobility.<side>.table       CSV path with columns s,m        (-)
    scheme.dt           time step                                (1e-3)
    scheme.newton_tol   Newton residual tolerance                (1e-10)
    scheme.newton_max   Newton iteration budget                  (50)
    scheme.clip_margin  confinement margin epsilon               (1e-9)
    scheme.max_retries  dt-halving retry depth                   (5)
    ic.kind             spinodal | modes | constant              (spinodal)
    ic.seed             RNG seed, mandatory for random kinds     (-)
    ic.amplitude        fluctuation amplitude                    (0.05)
    ic.mean             bulk mean value                          (0)
    ic.mean_surf        surface mean value                       (ic.mean)
    output.every        snapshot cadence in steps, 0 = final     (0)
    cdep.amplitude      perturbation amplitude                   (1e-3)
    cdep.seed           perturbation seed                        (1)
    cdep.sample_every   probe cadence in steps                   (10)
    verify.levels       comma list of levels                     (3,4,5)
    verify.r            comma list of exponents                  (2,4,8)
    verify.samples      samples per probe                        (50)
    elliptic.levels     comma list of levels                     (2,3,4,5)
    elliptic.mobility   constant | variable | both               (both)
    elliptic.coupling   finite | inf | both                      (both)

``<side>`` is ``bulk`` or ``surf``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BscahnError, ConfigError
from .geometry import build_disk_mesh, assemble_fem, FemMatrices
from .fields import (
    FieldPair,
    ModelParams,
    project_mean_zero,
    l2_norm,
    write_fieldpair,
)
from .potentials import PotentialSpec, MobilitySpec
from .elliptic import assemble_form, assemble_weighted_form, solve_weighted
from .evolution import SchemeConfig, Stepper
from . import diagnostics as diag
from .vtkio import write_vtk

EVOLVE = "evolve"
CDEP = "continuous-dependence"
SUITE = "inequality-suite"
ELLIPTIC = "elliptic-convergence"

_KIND_ALIASES = {
    "evolve": EVOLVE,
    "cdep": CDEP,
    "continuous-dependence": CDEP,
    "verify": SUITE,
    "inequality-suite": SUITE,
    "elliptic": ELLIPTIC,
    "elliptic-convergence": ELLIPTIC,
}


@dataclass
class IcSpec:
    kind: str = "spinodal"
    seed: int | None = None
    amplitude: float = 0.05
    mean: float = 0.0
    mean_surf: float = 0.0


@dataclass
class CdepSpec:
    amplitude: float = 1e-3
    seed: int = 1
    sample_every: int = 10


@dataclass
class SuiteSpec:
    levels: tuple = (3, 4, 5)
    r_values: tuple = (2.0, 4.0, 8.0)
    samples: int = 50


@dataclass
class EllipticSpec:
    levels: tuple = (2, 3, 4, 5)
    mobility: str = "both"
    coupling: str = "both"


@dataclass
class ScenarioConfig:
    """A fully resolved experiment description.

    ``resolved`` maps every configuration key to its final textual value; it
    is embedded verbatim in run summaries.
    """

    kind: str = EVOLVE
    level: int = 3
    T: float = 1.0
    params: ModelParams = field(default_factory=ModelParams)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    ic: IcSpec = field(default_factory=IcSpec)
    output_every: int = 0
    cdep: CdepSpec = field(default_factory=CdepSpec)
    suite: SuiteSpec = field(default_factory=SuiteSpec)
    elliptic: EllipticSpec = field(default_factory=EllipticSpec)
    resolved: dict = field(default_factory=dict)


def _tokenize(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise ConfigError(f"{key}: duplicate key")
        out[key] = value
    return out


class _Reader:
    """Typed key access with key-path error reporting and usage tracking."""

    def __init__(self, kv: dict):
        self.kv = kv
        self.used = set()

    def raw(self, key, default=None):
        self.used.add(key)
        return self.kv.get(key, default)

    def str(self, key, default=None, choices=None):
        val = self.raw(key, default)
        if choices is not None and val not in choices:
            raise ConfigError(f"{key}: expected one of {sorted(choices)}, got {val!r}")
        return val

    def int(self, key, default=None, minimum=None):
        val = self.raw(key)
        if val is None:
            return default
        try:
            out = int(val)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {val!r}") from None
        if minimum is not None and out < minimum:
            raise ConfigError(f"{key}: must be >= {minimum}, got {out}")
        return out

    def float(self, key, default=None, positive=False, allow_inf=False):
        val = self.raw(key)
        if val is None:
            return default
        try:
            out = float(val)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {val!r}") from None
        if math.isnan(out):
            raise ConfigError(f"{key}: NaN is not a value")
        if math.isinf(out) and not allow_inf:
            raise ConfigError(f"{key}: must be finite, got {val!r}")
        if positive and not out > 0.0:
            raise ConfigError(f"{key}: must be positive, got {val!r}")
        return out

    def int_list(self, key, default):
        val = self.raw(key)
        if val is None:
            return tuple(default)
        try:
            out = tuple(int(part.strip()) for part in val.split(","))
        except ValueError:
            raise ConfigError(f"{key}: expected a comma-separated integer list, got {val!r}") from None
        if not out:
            raise ConfigError(f"{key}: list must be nonempty")
        return out

    def float_list(self, key, default):
        val = self.raw(key)
        if val is None:
            return tuple(default)
        try:
            out = tuple(float(part.strip()) for part in val.split(","))
        except ValueError:
            raise ConfigError(f"{key}: expected a comma-separated number list, got {val!r}") from None
        if not out:
            raise ConfigError(f"{key}: list must be nonempty")
        return out


def _read_mobility(r: _Reader, side: str) -> MobilitySpec:
    prefix = f"mobility.{side}"
    kind = r.str(f"{prefix}.kind", "constant", choices={"constant", "polynomial", "tabulated"})
    lower = r.float(f"{prefix}.m_lower", None, positive=True)
    upper = r.float(f"{prefix}.m_upper", None, positive=True)
    if kind == "constant":
        value = r.float(f"{prefix}.value", 1.0, positive=True)
        r.raw(f"{prefix}.coeffs")  # claim the key so a stray entry is named, not "unknown"
        if r.kv.get(f"{prefix}.coeffs") is not None:
            raise ConfigError(f"{prefix}.coeffs: not meaningful for a constant mobility")
        r.raw(f"{prefix}.table")
        if r.kv.get(f"{prefix}.table") is not None:
            raise ConfigError(f"{prefix}.table: not meaningful for a constant mobility")
        return MobilitySpec(
            kind="constant",
            value=value,
            m_lower=lower if lower is not None else value,
            m_upper=upper if upper is not None else value,
        )
    if kind == "polynomial":
        coeffs = r.float_list(f"{prefix}.coeffs", ())
        if not coeffs:
            raise ConfigError(f"{prefix}.coeffs: required for a polynomial mobility")
        if lower is None or upper is None:
            raise ConfigError(f"{prefix}.m_lower: bounds are required for a polynomial mobility")
        return MobilitySpec(kind="polynomial", coeffs=coeffs, m_lower=lower, m_upper=upper)
    path = r.str(f"{prefix}.table")
    if path is None:
        raise ConfigError(f"{prefix}.table: required for a tabulated mobility")
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ConfigError(f"{prefix}.table: cannot read {path!r} ({exc})") from None
    if data.shape[1] != 2:
        raise ConfigError(f"{prefix}.table: expected two columns s,m in {path!r}")
    s, m = data[:, 0], data[:, 1]
    return MobilitySpec(
        kind="tabulated",
        table_s=tuple(s),
        table_m=tuple(m),
        m_lower=lower if lower is not None else float(np.min(m)),
        m_upper=upper if upper is not None else float(np.max(m)),
    )


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document; unknown keys are rejected."""
    kv = _tokenize(text)
    r = _Reader(kv)

    kind_raw = r.str("kind", "evolve", choices=set(_KIND_ALIASES))
    kind = _KIND_ALIASES[kind_raw]
    level = r.int("level", 3, minimum=0)
    T = r.float("T", 1.0)
    if T < 0.0:
        raise ConfigError(f"T: must be nonnegative, got {T!r}")

    pot_kind = r.str("model.potential", "logarithmic", choices={"logarithmic", "quartic"})
    theta = r.float("model.theta", 1.0, positive=True)
    theta0 = r.float("model.theta0", 2.0, positive=True)
    try:
        pot = PotentialSpec(kind=pot_kind, theta=theta, theta0=theta0)
    except ValueError as exc:
        raise ConfigError(f"model.theta0: {exc}") from None

    mob_bulk = _read_mobility(r, "bulk")
    mob_surf = _read_mobility(r, "surf")
    try:
        params = ModelParams(
            K=r.float("model.K", math.inf, allow_inf=True),
            L=r.float("model.L", math.inf, allow_inf=True),
            alpha=r.float("model.alpha", 1.0),
            beta=r.float("model.beta", 1.0),
            pot_bulk=pot,
            pot_surf=pot,
            mob_bulk=mob_bulk,
            mob_surf=mob_surf,
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None

    dt = r.float("scheme.dt", 1e-3)
    if not dt > 0.0:
        raise ConfigError(f"scheme.dt: must be positive, got {dt!r}")
    try:
        scheme = SchemeConfig(
            dt=dt,
            newton_tol=r.float("scheme.newton_tol", 1e-10, positive=True),
            newton_max=r.int("scheme.newton_max", 50, minimum=1),
            eps_confine=r.float("scheme.clip_margin", 1e-9, positive=True),
            max_retries=r.int("scheme.max_retries", 5, minimum=0),
        )
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from None

    ic_kind = r.str("ic.kind", "spinodal", choices={"spinodal", "modes", "constant"})
    ic_mean = r.float("ic.mean", 0.0)
    ic = IcSpec(
        kind=ic_kind,
        seed=r.int("ic.seed", None),
        amplitude=r.float("ic.amplitude", 0.05),
        mean=ic_mean,
        mean_surf=r.float("ic.mean_surf", ic_mean),
    )
    if kind in (EVOLVE, CDEP) and ic.kind != "constant" and ic.seed is None:
        raise ConfigError("ic.seed: required for stochastic initial data")
    if ic.amplitude < 0.0:
        raise ConfigError(f"ic.amplitude: must be nonnegative, got {ic.amplitude!r}")
    for key, val in (("ic.mean", ic.mean), ("ic.mean_surf", ic.mean_surf)):
        if abs(val) + ic.amplitude >= 1.0:
            raise ConfigError(f"{key}: |mean| + amplitude must stay below 1")

    cdep = CdepSpec(
        amplitude=r.float("cdep.amplitude", 1e-3, positive=True),
        seed=r.int("cdep.seed", 1),
        sample_every=r.int("cdep.sample_every", 10, minimum=1),
    )
    suite = SuiteSpec(
        levels=r.int_list("verify.levels", (3, 4, 5)),
        r_values=r.float_list("verify.r", (2.0, 4.0, 8.0)),
        samples=r.int("verify.samples", 50, minimum=1),
    )
    elliptic = EllipticSpec(
        levels=r.int_list("elliptic.levels", (2, 3, 4, 5)),
        mobility=r.str("elliptic.mobility", "both", choices={"constant", "variable", "both"}),
        coupling=r.str("elliptic.coupling", "both", choices={"finite", "inf", "both"}),
    )

    output_every = r.int("output.every", 0, minimum=0)

    unknown = sorted(set(kv) - r.used)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")

    if kind == SUITE and math.isinf(params.K):
        raise ConfigError("model.K: the inequality suite needs a finite phase coupling")
    if kind == CDEP and math.isinf(scheme.dt):
        raise ConfigError("scheme.dt: must be finite")

    cfg = ScenarioConfig(
        kind=kind,
        level=level,
        T=T,
        params=params,
        scheme=scheme,
        ic=ic,
        output_every=output_every,
        cdep=cdep,
        suite=suite,
        elliptic=elliptic,
    )
    cfg.resolved = _resolve(cfg)
    return cfg


def _fmt(value) -> str:
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _resolve(cfg: ScenarioConfig) -> dict:
    p, s = cfg.params, cfg.scheme
    out = {
        "kind": cfg.kind,
        "level": _fmt(cfg.level),
        "T": _fmt(cfg.T),
        "model.K": _fmt(p.K),
        "model.L": _fmt(p.L),
        "model.alpha": _fmt(p.alpha),
        "model.beta": _fmt(p.beta),
        "model.potential": p.pot_bulk.kind,
        "model.theta": _fmt(p.pot_bulk.theta),
        "model.theta0": _fmt(p.pot_bulk.theta0),
        "scheme.dt": _fmt(s.dt),
        "scheme.newton_tol": _fmt(s.newton_tol),
        "scheme.newton_max": _fmt(s.newton_max),
        "scheme.clip_margin": _fmt(s.eps_confine),
        "scheme.max_retries": _fmt(s.max_retries),
        "ic.kind": cfg.ic.kind,
        "ic.seed": _fmt(cfg.ic.seed) if cfg.ic.seed is not None else "",
        "ic.amplitude": _fmt(cfg.ic.amplitude),
        "ic.mean": _fmt(cfg.ic.mean),
        "ic.mean_surf": _fmt(cfg.ic.mean_surf),
        "output.every": _fmt(cfg.output_every),
        "cdep.amplitude": _fmt(cfg.cdep.amplitude),
        "cdep.seed": _fmt(cfg.cdep.seed),
        "cdep.sample_every": _fmt(cfg.cdep.sample_every),
        "verify.levels": _fmt(cfg.suite.levels),
        "verify.r": _fmt(cfg.suite.r_values),
        "verify.samples": _fmt(cfg.suite.samples),
        "elliptic.levels": _fmt(cfg.elliptic.levels),
        "elliptic.mobility": cfg.elliptic.mobility,
        "elliptic.coupling": cfg.elliptic.coupling,
    }
    for side, mob in (("bulk", p.mob_bulk), ("surf", p.mob_surf)):
        out[f"mobility.{side}.kind"] = mob.kind
        out[f"mobility.{side}.m_lower"] = _fmt(mob.m_lower)
        out[f"mobility.{side}.m_upper"] = _fmt(mob.m_upper)
        if mob.kind == "constant":
            out[f"mobility.{side}.value"] = _fmt(mob.value)
        elif mob.kind == "polynomial":
            out[f"mobility.{side}.coeffs"] = _fmt(mob.coeffs)
    return out


def with_overrides(cfg: ScenarioConfig, kind=None, seed=None, level=None) -> ScenarioConfig:
    """Apply command-line overrides, revalidating what they touch."""
    out = replace(cfg)
    if kind is not None:
        if kind not in _KIND_ALIASES:
            raise ConfigError(f"kind: expected one of {sorted(set(_KIND_ALIASES))}, got {kind!r}")
        out.kind = _KIND_ALIASES[kind]
    if seed is not None:
        out.ic = replace(out.ic, seed=int(seed))
        out.cdep = replace(out.cdep, seed=int(seed) + 1)
    if level is not None:
        if level < 0:
            raise ConfigError(f"level: must be >= 0, got {level}")
        out.level = int(level)
    if out.kind in (EVOLVE, CDEP) and out.ic.kind != "constant" and out.ic.seed is None:
        raise ConfigError("ic.seed: required for stochastic initial data")
    if out.kind == SUITE and math.isinf(out.params.K):
        raise ConfigError("model.K: the inequality suite needs a finite phase coupling")
    out.resolved = _resolve(out)
    return out


# ---------------------------------------------------------------------------
# initial data


def make_initial(ic: IcSpec, fem: FemMatrices) -> FieldPair:
    """Generate the configured initial phase pair on a mesh.

    ``constant`` fills both components with their means; ``spinodal`` adds
    independent uniform fluctuations at every node; ``modes`` superposes the
    first three tensor/circular harmonics with seeded coefficients, rescaled
    so the fluctuation peaks exactly at the configured amplitude.
    """
    nb, ns = fem.n_bulk, fem.n_surf
    if ic.kind == "constant":
        return FieldPair(np.full(nb, ic.mean), np.full(ns, ic.mean_surf))
    rng = np.random.default_rng(ic.seed)
    if ic.kind == "spinodal":
        bulk = ic.mean + ic.amplitude * rng.uniform(-1.0, 1.0, nb)
        surf = ic.mean_surf + ic.amplitude * rng.uniform(-1.0, 1.0, ns)
        return FieldPair(bulk, surf)
    if ic.kind != "modes":
        raise ConfigError(f"ic.kind: unknown generator {ic.kind!r}")
    xy = fem.mesh.vertices
    theta = surface_angles(fem)
    braw = np.zeros(nb)
    sraw = np.zeros(ns)
    for k in range(1, 4):
        braw += rng.standard_normal() * np.cos(k * np.pi * xy[:, 0]) * np.cos(k * np.pi * xy[:, 1])
        sraw += rng.standard_normal() * np.cos(k * theta + rng.uniform(0.0, 2.0 * np.pi))
    for raw in (braw, sraw):
        peak = np.max(np.abs(raw))
        if peak > 0.0:
            raw /= peak
    return FieldPair(ic.mean + ic.amplitude * braw, ic.mean_surf + ic.amplitude * sraw)


def surface_angles(fem: FemMatrices) -> np.ndarray:
    """Polar angle of each surface node (the natural boundary coordinate)."""
    pts = fem.mesh.vertices[fem.mesh.surface_vertices]
    return np.arctan2(pts[:, 1], pts[:, 0])


# ---------------------------------------------------------------------------
# elliptic convergence study

_MOB_CONST = MobilitySpec(kind="constant", m_lower=0.5, m_upper=2.0, value=1.0)
_MOB_VAR = MobilitySpec(kind="polynomial", m_lower=0.4, m_upper=1.6, coeffs=(1.0, 0.5))


def _mms_case(decoupled: bool, variable: bool) -> dict:
    """Closed-form test problems for the weighted transport operator.

    Each case fixes exact fields (u on the disk, v on the circle) together
    with the strong-form right-hand sides of the operator they solve; the
    decoupled bulk solutions carry an exactly vanishing boundary flux and
    trace, the coupled ones balance the flux against the jump term.  The
    variable cases weight with m(s) = 1 + s/2 evaluated at the phase pair
    (x, cos theta).
    """
    if decoupled:

        def u(x, y):
            r2 = x * x + y * y
            return (10.0 + x) * (1.0 - r2) ** 2

        def v(th):
            return np.cos(th)

        if not variable:

            def f(x, y):
                r2 = x * x + y * y
                return (10.0 + x) * (8.0 - 16.0 * r2) + 8.0 * x * (1.0 - r2)

            def g(th):
                return np.cos(th)

        else:

            def f(x, y):
                r2 = x * x + y * y
                lap = (10.0 + x) * (16.0 * r2 - 8.0) - 8.0 * x * (1.0 - r2)
                dxu = (1.0 - r2) ** 2 - 4.0 * x * (10.0 + x) * (1.0 - r2)
                return -(1.0 + 0.5 * x) * lap - 0.5 * dxu

            def g(th):
                return np.cos(th) + 0.5 * np.cos(2.0 * th)

    else:

        def u(x, y):
            return x * (x * x + y * y)

        if not variable:

            def v(th):
                return 4.0 * np.cos(th)

            def f(x, y):
                return -8.0 * x

            def g(th):
                return 7.0 * np.cos(th)

        else:

            def v(th):
                return 0.75 + 4.0 * np.cos(th) + 0.75 * np.cos(2.0 * th)

            def f(x, y):
                return -(8.0 * x + 5.5 * x * x + 0.5 * y * y)

            def g(th):
                return (
                    0.75
                    + 7.375 * np.cos(th)
                    + 5.75 * np.cos(2.0 * th)
                    + 1.125 * np.cos(3.0 * th)
                )

    return {"u": u, "v": v, "f": f, "g": g}


def elliptic_convergence_study(levels, decoupled: bool, variable: bool) -> dict:
    """L2 errors and fitted order for one operator family across levels.

    Solves the closed-form problem of :func:`_mms_case` on each level,
    measures the combined mean-free L2 error of (u, v), and fits the order
    as the slope of log error against log measured mesh size.
    """
    case = _mms_case(decoupled, variable)
    params = ModelParams(
        L=math.inf if decoupled else 1.0,
        mob_bulk=_MOB_VAR if variable else _MOB_CONST,
        mob_surf=_MOB_VAR if variable else _MOB_CONST,
    )
    hs, errors = [], []
    for level in levels:
        fem = assemble_fem(build_disk_mesh(level))
        xy = fem.mesh.vertices
        th = surface_angles(fem)
        phase = FieldPair(xy[:, 0].copy(), np.cos(th))
        form = assemble_weighted_form(fem, phase, params, slot="L")
        rhs = project_mean_zero(FieldPair(case["f"](xy[:, 0], xy[:, 1]), case["g"](th)), params, fem)
        sol = solve_weighted(form, rhs, params)
        exact = project_mean_zero(FieldPair(case["u"](xy[:, 0], xy[:, 1]), case["v"](th)), params, fem)
        approx = project_mean_zero(sol.pair, params, fem)
        diff = FieldPair(approx.bulk - exact.bulk, approx.surf - exact.surf)
        hs.append(fem.h_max)
        errors.append(l2_norm(diff, fem))
    order = float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
    return {
        "levels": list(levels),
        "h": [float(h) for h in hs],
        "errors": [float(e) for e in errors],
        "order": order,
    }


# ---------------------------------------------------------------------------
# scenario execution


def _write_summary(out_dir: str, payload: dict) -> None:
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _snapshot(out_dir: str, state, fem) -> None:
    tag = f"{state.step:06d}"
    write_fieldpair(state.phases, os.path.join(out_dir, f"phase_{tag}"))
    write_fieldpair(state.potentials, os.path.join(out_dir, f"potential_{tag}"))
    write_vtk(
        os.path.join(out_dir, f"state_{tag}.vtk"),
        fem.mesh,
        {"phi": state.phases.bulk, "mu": state.potentials.bulk},
        title=f"state at t={state.t!r}",
    )


def _run_evolve(cfg: ScenarioConfig, out_dir: str) -> dict:
    fem = assemble_fem(build_disk_mesh(cfg.level))
    cfg.params.validate(fem, evolution=True)
    stepper = Stepper(cfg.params, fem, cfg.scheme)
    state = stepper.initial_state(make_initial(cfg.ic, fem))
    n_steps = int(round(cfg.T / cfg.scheme.dt))

    csv_path = os.path.join(out_dir, "diagnostics.csv")
    with open(csv_path, "w") as fh:
        fh.write(diag.DiagnosticsRecord.CSV_HEADER + "\n")
        fh.write(diag.snapshot_record(state, cfg.params, fem).csv_row() + "\n")
        _snapshot(out_dir, state, fem)

        def observer(prev, new, st):
            fh.write(diag.record_step(prev, new, st).csv_row() + "\n")
            if cfg.output_every and new.step % cfg.output_every == 0:
                _snapshot(out_dir, new, fem)

        traj = stepper.run(state, n_steps, observer=observer)

    final = traj.final
    if not (cfg.output_every and final.step % cfg.output_every == 0):
        _snapshot(out_dir, final, fem)
    stat = diag.stationarity_report(final, cfg.params, fem)
    rec = diag.snapshot_record(final, cfg.params, fem)
    return {
        "final": {
            "t": final.t,
            "energy": rec.energy,
            "mass_bulk": rec.mass_bulk,
            "mass_surf": rec.mass_surf,
            "mass_combined": rec.mass_combined,
            "separation": rec.separation,
            "mu_mean": stat.mu_mean,
            "theta_mean": stat.theta_mean,
            "stdev_mu": stat.stdev_mu,
            "stdev_theta": stat.stdev_theta,
            "theta_pred": stat.theta_pred,
            "mu_pred": stat.mu_pred,
            "boundary_flux": stat.boundary_flux,
        },
        "run": {
            "n_steps": traj.n_steps,
            "newton_iterations": traj.newton_iterations,
            "substeps": traj.substeps,
        },
    }


def _run_cdep(cfg: ScenarioConfig, out_dir: str) -> dict:
    fem = assemble_fem(build_disk_mesh(cfg.level))
    cfg.params.validate(fem, evolution=True)
    base = make_initial(cfg.ic, fem)
    pert_spec = IcSpec(
        kind="modes",
        seed=cfg.cdep.seed,
        amplitude=cfg.cdep.amplitude,
        mean=0.0,
        mean_surf=0.0,
    )
    perturbation = make_initial(pert_spec, fem)
    n_steps = int(round(cfg.T / cfg.scheme.dt))
    sample_every = cfg.cdep.sample_every
    if n_steps % sample_every:
        raise ConfigError("cdep.sample_every: must divide the step count T/dt")
    report = diag.continuous_dependence_experiment(
        base, perturbation, cfg.params, fem, cfg.scheme, n_steps, sample_every=sample_every
    )
    with open(os.path.join(out_dir, "gronwall.csv"), "w") as fh:
        fh.write("t, y, qhat\n")
        for t, yk, qk in zip(report.times, report.y, report.qhat):
            fh.write(f"{float(t)!r}, {float(yk)!r}, {float(qk)!r}\n")
    return {
        "gronwall": {
            "y0": report.y0,
            "yT": report.yT,
            "sqrt_yT": math.sqrt(report.yT),
            "fitted_rate": report.fitted_rate,
            "worst_violation": report.worst_violation,
            "samples": int(len(report.times)),
        }
    }


def _run_suite(cfg: ScenarioConfig, out_dir: str) -> tuple[dict, list]:
    failures = []
    poincare = {}
    interpolation = {}
    for level in cfg.suite.levels:
        fem = assemble_fem(build_disk_mesh(level))
        rep = diag.verify_poincare(cfg.params, fem)
        poincare[str(level)] = {"eigenvalue": rep.eigenvalue, "constant": rep.constant}
        if not rep.eigenvalue > 0.0:
            failures.append(f"level {level}: nonpositive eigenvalue {rep.eigenvalue!r}")
        ratios = {}
        for rv in cfg.suite.r_values:
            ratios[_fmt(rv)] = diag.verify_interpolation(
                fem, rv, seed=cfg.ic.seed or 0, n_samples=cfg.suite.samples
            )
        interpolation[str(level)] = ratios

    constants = [poincare[str(lv)]["constant"] for lv in cfg.suite.levels]
    spread = (max(constants) - min(constants)) / min(constants)
    if spread > 0.05:
        failures.append(f"Poincare constants vary by {spread:.2%} (> 5%) across levels")
    for rv in cfg.suite.r_values:
        vals = [interpolation[str(lv)][_fmt(rv)] for lv in cfg.suite.levels]
        drift = (max(vals) - min(vals)) / min(vals)
        if drift > 0.10:
            failures.append(f"interpolation ratio at r={_fmt(rv)} drifts by {drift:.2%} (> 10%)")

    norm_eq = _sandwich_probe(cfg, cfg.suite.levels[0])
    if norm_eq["violations"]:
        failures.append(f"{norm_eq['violations']} norm-equivalence violations")
    return (
        {"poincare": poincare, "interpolation": interpolation, "norm_equivalence": norm_eq},
        failures,
    )


def _sandwich_probe(cfg: ScenarioConfig, level: int) -> dict:
    """Check the weighted/unweighted norm sandwich on random samples."""
    params = cfg.params
    fem = assemble_fem(build_disk_mesh(level))
    unit = assemble_form(fem, params.l_form())
    lower = min(1.0, math.sqrt(min(params.mob_bulk.m_lower, params.mob_surf.m_lower)))
    upper = max(1.0, math.sqrt(max(params.mob_bulk.m_upper, params.mob_surf.m_upper)))
    rng = np.random.default_rng(cfg.ic.seed or 0)
    violations = 0
    worst_low = math.inf
    worst_high = 0.0
    for _ in range(cfg.suite.samples):
        pair = FieldPair(rng.standard_normal(fem.n_bulk), rng.standard_normal(fem.n_surf))
        phase = FieldPair(
            rng.uniform(-0.95, 0.95, fem.n_bulk), rng.uniform(-0.95, 0.95, fem.n_surf)
        )
        weighted = assemble_weighted_form(fem, phase, params, slot="L")
        x = pair.stacked()
        wn = math.sqrt(max(float(x @ (weighted.matrix @ x)), 0.0))
        un = math.sqrt(max(float(x @ (unit.matrix @ x)), 0.0))
        if un == 0.0:
            continue
        ratio = wn / un
        worst_low = min(worst_low, ratio)
        worst_high = max(worst_high, ratio)
        if ratio < lower * (1.0 - 1e-12) or ratio > upper * (1.0 + 1e-12):
            violations += 1
    return {
        "lower_constant": lower,
        "upper_constant": upper,
        "observed_min": worst_low,
        "observed_max": worst_high,
        "violations": violations,
    }


def _run_elliptic(cfg: ScenarioConfig, out_dir: str) -> tuple[dict, list]:
    mob_opts = {"constant": (False,), "variable": (True,), "both": (False, True)}
    coup_opts = {"inf": (True,), "finite": (False,), "both": (True, False)}
    cases = {}
    failures = []
    for variable in mob_opts[cfg.elliptic.mobility]:
        for decoupled in coup_opts[cfg.elliptic.coupling]:
            name = f"{'variable' if variable else 'constant'}-{'inf' if decoupled else 'finite'}"
            res = elliptic_convergence_study(cfg.elliptic.levels, decoupled, variable)
            cases[name] = res
            if not 1.8 <= res["order"] <= 2.2:
                failures.append(f"{name}: order {res['order']:.3f} outside [1.8, 2.2]")
    return {"cases": cases}, failures


def run_scenario(cfg: ScenarioConfig, out_dir: str) -> int:
    """Execute one scenario into ``out_dir``; returns the process exit status.

    Zero means the experiment completed and, for the verification kinds,
    every enabled assertion held.
    """
    os.makedirs(out_dir, exist_ok=True)
    summary = {"config": dict(cfg.resolved)}
    failures: list = []
    try:
        if cfg.kind == EVOLVE:
            summary.update(_run_evolve(cfg, out_dir))
        elif cfg.kind == CDEP:
            summary.update(_run_cdep(cfg, out_dir))
        elif cfg.kind == SUITE:
            body, failures = _run_suite(cfg, out_dir)
            summary.update(body)
        elif cfg.kind == ELLIPTIC:
            body, failures = _run_elliptic(cfg, out_dir)
            summary.update(body)
        else:
            raise ConfigError(f"kind: unknown experiment {cfg.kind!r}")
    except BscahnError as exc:
        summary["error"] = f"{type(exc).__name__}: {exc}"
        _write_summary(out_dir, summary)
        raise
    summary["failures"] = failures
    _write_summary(out_dir, summary)
    return 1 if failures else 0
