"""Observables and verification probes for the coupled phase-field system.

Everything here is read-only with respect to the evolution: energies,
dissipation rates, separation margins, stationarity predictors, the discrete
chain-rule residual for the lagged-mobility dissipation, the coupled Poincare
constant, discrete norm-scaling checks, and the two-trajectory continuous
dependence experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateParameterError, SingularEnergyError
from .fields import (
    FieldPair,
    ModelParams,
    form_norm,
    generalized_mean,
    h2_surrogate,
    integral_bulk,
    integral_surf,
    project_mean_zero,
    trace_values,
)
from .geometry import FemMatrices
from .elliptic import (
    AssembledForm,
    BorderedSolver,
    assemble_form,
    assemble_weighted_form,
    dual_norm,
)
from .evolution import SchemeConfig, Stepper, TimeState
from .potentials import mob_deriv


@dataclass
class DiagnosticsRecord:
    """One sampling instant of the standard observables.

    ``dissipation`` and ``dual_dt_norm`` describe the step that *arrived* at
    time ``t`` (they need the previous state); both are NaN for a bare
    snapshot.
    """

    t: float
    energy: float
    mass_bulk: float
    mass_surf: float
    mass_combined: float
    dissipation: float = math.nan
    separation: float = math.nan
    stdev_mu: float = math.nan
    stdev_theta: float = math.nan
    beta_theta_minus_mu: float = math.nan
    dual_dt_norm: float = math.nan

    CSV_HEADER = (
        "t, E, mass_b, mass_s, mass_combined, D, delta, stdev_mu, stdev_theta, "
        "beta_theta_minus_mu, dual_dt_norm"
    )

    def csv_row(self) -> str:
        vals = [
            self.t,
            self.energy,
            self.mass_bulk,
            self.mass_surf,
            self.mass_combined,
            self.dissipation,
            self.separation,
            self.stdev_mu,
            self.stdev_theta,
            self.beta_theta_minus_mu,
            self.dual_dt_norm,
        ]
        return ", ".join(repr(float(v)) for v in vals)


def energy(pair: FieldPair, params: ModelParams, fem: FemMatrices) -> float:
    """Total free energy: gradient parts, K-penalty, and both well potentials.

    Raises :class:`SingularEnergyError` when a nodal value leaves the closed
    physical interval and the singular potential evaluates to infinity.
    """
    pair.check_shape(fem)
    spec = params.k_form()
    grad = 0.5 * float(
        pair.bulk @ (fem.A_bulk @ pair.bulk) + pair.surf @ (fem.A_surf @ pair.surf)
    )
    if spec.weight != 0.0:
        jump = spec.coupling * pair.surf - trace_values(pair.bulk, fem)
        grad += 0.5 * spec.weight * float(jump @ (fem.M_surf @ jump))
    Fb = params.pot_bulk.convex(pair.bulk, 0) + params.pot_bulk.concave(pair.bulk, 0)
    Gs = params.pot_surf.convex(pair.surf, 0) + params.pot_surf.concave(pair.surf, 0)
    pot = float(np.sum(fem.M_bulk @ Fb) + np.sum(fem.M_surf @ Gs))
    total = grad + pot
    if not math.isfinite(total):
        raise SingularEnergyError(
            "free energy is not finite: a nodal phase value lies outside [-1, 1]"
        )
    return total


def dissipation_rate(potentials: FieldPair, form: AssembledForm) -> float:
    """Quadratic dissipation q^T S_L q of the (lagged) transport operator."""
    q = potentials.stacked()
    return float(q @ (form.matrix @ q))


def separation_margin(pair: FieldPair) -> float:
    """Distance of the worst nodal phase value from the pure states +-1."""
    worst = max(
        float(np.max(np.abs(pair.bulk), initial=0.0)),
        float(np.max(np.abs(pair.surf), initial=0.0)),
    )
    return 1.0 - worst


def record_step(
    prev: TimeState, new: TimeState, stepper: Stepper, with_dual: bool = False
) -> DiagnosticsRecord:
    """Standard per-step record, using the stepper's lagged transport form."""
    params, fem = stepper.params, stepper.fem
    pair = new.phases
    mb = integral_bulk(fem, pair.bulk)
    ms = integral_surf(fem, pair.surf)
    mu, th = new.potentials.bulk, new.potentials.surf
    mu_mean = integral_bulk(fem, mu) / fem.area
    th_mean = integral_surf(fem, th) / fem.perimeter
    stdev_mu = math.sqrt(
        max(integral_bulk(fem, (mu - mu_mean) ** 2) / fem.area, 0.0)
    )
    stdev_th = math.sqrt(
        max(integral_surf(fem, (th - th_mean) ** 2) / fem.perimeter, 0.0)
    )
    rec = DiagnosticsRecord(
        t=new.t,
        energy=energy(pair, params, fem),
        mass_bulk=mb,
        mass_surf=ms,
        mass_combined=params.beta * mb + ms,
        separation=separation_margin(pair),
        stdev_mu=stdev_mu,
        stdev_theta=stdev_th,
        beta_theta_minus_mu=params.beta * th_mean - mu_mean,
    )
    if stepper.last_form is not None:
        rec.dissipation = dissipation_rate(new.potentials, stepper.last_form)
        if with_dual:
            dt = new.t - prev.t
            rate = FieldPair(
                (new.phases.bulk - prev.phases.bulk) / dt,
                (new.phases.surf - prev.phases.surf) / dt,
            )
            rate = project_mean_zero(rate, params, fem)
            rec.dual_dt_norm = dual_norm(rate, stepper.last_form, params)
    return rec


def snapshot_record(state: TimeState, params: ModelParams, fem: FemMatrices) -> DiagnosticsRecord:
    """Record for a bare state (no step context: dissipation left NaN)."""
    pair = state.phases
    mb = integral_bulk(fem, pair.bulk)
    ms = integral_surf(fem, pair.surf)
    return DiagnosticsRecord(
        t=state.t,
        energy=energy(pair, params, fem),
        mass_bulk=mb,
        mass_surf=ms,
        mass_combined=params.beta * mb + ms,
        separation=separation_margin(pair),
    )


@dataclass
class StationarityReport:
    """Late-time predictors versus measured potential means."""

    mu_mean: float
    theta_mean: float
    stdev_mu: float
    stdev_theta: float
    theta_pred: float
    mu_pred: float
    boundary_flux: float


def stationarity_report(
    state: TimeState, params: ModelParams, fem: FemMatrices
) -> StationarityReport:
    """Compare the measured potential plateau against its closed-form value.

    At a stationary point with finite L the potentials are the spatial
    constants ``theta = (alpha int W'(phi) + int_Gamma W'(psi)) / (alpha beta
    |Omega| + |Gamma|)`` and ``mu = beta theta``.  The boundary flux is
    recovered variationally as ``int W'(phi) - int mu``, which vanishes for
    decoupled potentials (L = inf) at stationarity.
    """
    phi, psi = state.phases.bulk, state.phases.surf
    mu, th = state.potentials.bulk, state.potentials.surf
    dWb = params.pot_bulk.convex(phi, 1) + params.pot_bulk.concave(phi, 1)
    dWs = params.pot_surf.convex(psi, 1) + params.pot_surf.concave(psi, 1)
    denom = params.alpha * params.beta * fem.area + fem.perimeter
    theta_pred = (
        params.alpha * integral_bulk(fem, dWb) + integral_surf(fem, dWs)
    ) / denom
    mu_mean = integral_bulk(fem, mu) / fem.area
    th_mean = integral_surf(fem, th) / fem.perimeter
    flux = integral_bulk(fem, dWb) - integral_bulk(fem, mu)
    return StationarityReport(
        mu_mean=mu_mean,
        theta_mean=th_mean,
        stdev_mu=math.sqrt(max(integral_bulk(fem, (mu - mu_mean) ** 2) / fem.area, 0.0)),
        stdev_theta=math.sqrt(
            max(integral_surf(fem, (th - th_mean) ** 2) / fem.perimeter, 0.0)
        ),
        theta_pred=theta_pred,
        mu_pred=params.beta * theta_pred,
        boundary_flux=flux,
    )


@dataclass
class ChainRuleReport:
    """One-window check of the dissipation-functional chain rule."""

    dY_dt: float
    transport_term: float
    bulk_weight_term: float
    surf_weight_term: float

    @property
    def residual(self) -> float:
        return self.dY_dt - self.transport_term - self.bulk_weight_term - self.surf_weight_term

    @property
    def normalized(self) -> float:
        scale = max(
            abs(self.dY_dt),
            abs(self.transport_term + self.bulk_weight_term + self.surf_weight_term),
        )
        return abs(self.residual) / max(scale, 1e-300)


def chain_rule_residual(
    states: tuple, params: ModelParams, fem: FemMatrices
) -> ChainRuleReport:
    """Differentiate Y(t) = 1/2 q^T S_L[p(t)] q(t) through the weights.

    ``states`` are three consecutive states at t - dt, t, t + dt.  The time
    derivative of Y (central difference across the window, so the quotient is
    centered on the middle state) splits into the transport part -- the
    scheme's own rate of q tested against the frozen operator -- and one term
    per weighted block carrying the mobility derivative, ``1/2 sum_T |T|
    m'(pbar_T) d_t pbar_T |grad q|_T^2`` with element-mean phases.  The rate
    quotients on the right are the backward differences the scheme itself
    advances by, which makes the residual first order in dt.  For constant
    mobilities the weight terms vanish identically.
    """
    sm, s0, sp = states
    dt = s0.t - sm.t
    if not math.isclose(sp.t - s0.t, dt, rel_tol=1e-9):
        raise ValueError("chain-rule probe needs equispaced states")

    def Y(state):
        f = assemble_weighted_form(fem, state.phases, params, slot="L")
        q = state.potentials.stacked()
        return 0.5 * float(q @ (f.matrix @ q)), f

    Ym, _ = Y(sm)
    Yp, _ = Y(sp)
    Y0, form0 = Y(s0)
    dY = (Yp - Ym) / (2.0 * dt)

    dq = (s0.potentials.stacked() - sm.potentials.stacked()) / dt
    q0 = s0.potentials.stacked()
    transport = float(dq @ (form0.matrix @ q0))

    tris = fem.mesh.triangles
    pbar0 = s0.phases.bulk[tris].mean(axis=1)
    dpbar = (pbar0 - sm.phases.bulk[tris].mean(axis=1)) / dt
    mu0 = s0.potentials.bulk
    gx = np.einsum("tv,tv->t", fem.tri_grads[:, :, 0], mu0[tris])
    gy = np.einsum("tv,tv->t", fem.tri_grads[:, :, 1], mu0[tris])
    grad2 = gx * gx + gy * gy
    mprime_b = mob_deriv(params.mob_bulk, np.clip(pbar0, -1.0, 1.0))
    bulk_term = 0.5 * float(np.sum(fem.tri_areas * mprime_b * dpbar * grad2))

    ns = fem.n_surf
    nxt = (np.arange(ns) + 1) % ns
    ebar0 = 0.5 * (s0.phases.surf + s0.phases.surf[nxt])
    debar = (ebar0 - 0.5 * (sm.phases.surf + sm.phases.surf[nxt])) / dt
    th0 = s0.potentials.surf
    gs = (th0[nxt] - th0) / fem.edge_lengths
    mprime_s = mob_deriv(params.mob_surf, np.clip(ebar0, -1.0, 1.0))
    surf_term = 0.5 * float(np.sum(fem.edge_lengths * mprime_s * debar * gs * gs))

    return ChainRuleReport(
        dY_dt=dY,
        transport_term=transport,
        bulk_weight_term=bulk_term,
        surf_weight_term=surf_term,
    )


@dataclass
class PoincareReport:
    """Smallest constrained eigenvalue of the interfacial operator."""

    eigenvalue: float
    constant: float
    iterations: int


def verify_poincare(
    params: ModelParams, fem: FemMatrices, tol: float = 1e-11, max_iter: int = 500
) -> PoincareReport:
    """Inverse power iteration for the coupled Poincare constant.

    Minimizes the K-form Rayleigh quotient over the joint-mean-zero subspace;
    the Poincare constant is the inverse square root of the eigenvalue (the
    norm bound is ||p|| <= C ||p||_K on mean-free pairs).  Requires finite K:
    with K = inf the form decouples and the single joint-mean constraint
    leaves a constant direction with zero energy.
    """
    if math.isinf(params.K):
        raise DegenerateParameterError(
            "the joint Poincare constant needs finite K; with K = inf the "
            "decoupled constants make the infimum zero"
        )
    import scipy.sparse as sps

    Q = assemble_form(fem, params.k_form()).matrix
    M = sps.block_diag([fem.M_bulk, fem.M_surf], format="csr")
    one_b = fem.M_bulk @ np.ones(fem.n_bulk)
    one_s = fem.M_surf @ np.ones(fem.n_surf)
    c = np.concatenate([params.beta * one_b, one_s])
    solver = BorderedSolver(Q, [c])
    rng = np.random.default_rng(0)
    x = rng.standard_normal(Q.shape[0])
    x -= c * (c @ x) / (c @ c)
    lam_old = math.inf
    lam = math.inf
    for it in range(1, max_iter + 1):
        y, _ = solver.solve(M @ x)
        num = float(y @ (M @ x))
        den = float(y @ (M @ y))
        lam = num / den
        x = y / math.sqrt(den)
        if abs(lam - lam_old) <= tol * max(1.0, abs(lam)):
            break
        lam_old = lam
    return PoincareReport(eigenvalue=lam, constant=1.0 / math.sqrt(lam), iterations=it)


def surface_fourier_sample(
    fem: FemMatrices, rng: np.random.Generator, max_mode: int = 6
) -> np.ndarray:
    """Smooth mean-zero nodal sample on the boundary loop from low modes."""
    sv = fem.mesh.surface_vertices
    th = np.arctan2(fem.mesh.vertices[sv, 1], fem.mesh.vertices[sv, 0])
    out = np.zeros(len(sv))
    for k in range(1, max_mode + 1):
        a, b = rng.standard_normal(2) / k
        out += a * np.cos(k * th) + b * np.sin(k * th)
    return out


def lumped_lr_norm(values: np.ndarray, weights: np.ndarray, r: float) -> float:
    """Lumped-quadrature L^r norm with the given nodal measures."""
    if math.isinf(r):
        return float(np.max(np.abs(values)))
    return float(np.sum(weights * np.abs(values) ** r) ** (1.0 / r))


def verify_interpolation(
    fem: FemMatrices, r: float, seed: int = 0, n_samples: int = 50
) -> float:
    """Worst L^r-to-L^inf scaling ratio over seeded surface samples.

    For each sample computes ``||p||_{L^r} / (|Gamma|_h^{1/r} ||p||_inf)``
    with lumped surface quadrature; the ratio never exceeds one, and for a
    single Fourier mode at r = 2 it equals 1/sqrt(2) up to quadrature.  The
    maximum over samples is a grid-quality probe: it must stabilize under
    refinement.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    scale = fem.perimeter ** (1.0 / r)
    for _ in range(n_samples):
        p = surface_fourier_sample(fem, rng)
        ratio = lumped_lr_norm(p, fem.lumped_surf, r) / (scale * np.max(np.abs(p)))
        worst = max(worst, float(ratio))
    return worst


@dataclass
class GronwallReport:
    """Outcome of the two-trajectory continuous dependence experiment."""

    times: np.ndarray
    y: np.ndarray
    qhat: np.ndarray
    fitted_rate: float
    y0: float
    yT: float
    worst_violation: float


def continuous_dependence_experiment(
    phase0: FieldPair,
    perturbation: FieldPair,
    params: ModelParams,
    fem: FemMatrices,
    config: SchemeConfig,
    n_steps: int,
    sample_every: int = 1,
) -> GronwallReport:
    """Co-evolve a base and a perturbed trajectory and test the growth bound.

    The distance ``y = 1/2 ||difference||_*^2`` is measured in the dual norm
    of the transport operator weighted at the base trajectory; the comparison
    rate

        qhat = 1 + ||q_2||_{form}^2 + ||d_t p_1||_*^2 + ||p_1||_{H2,h}^4

    integrates (trapezoid) into the exponent of the admissible growth.  The
    fitted rate is the smallest constant C with ``y(t) <= y(0) exp(C int
    qhat)`` for every sample, and ``worst_violation`` reports how far the
    bound with that C is from tight at its argmax (zero by construction).

    ``sample_every`` thins the probe to every k-th step (the rate quotient
    then spans the sampling interval); keep the physical cadence fixed when
    comparing runs at different dt.
    """
    if sample_every < 1 or n_steps % sample_every:
        raise ValueError("sample_every must divide n_steps")
    perturbation = project_mean_zero(perturbation, params, fem)
    base = Stepper(params, fem, config)
    pert = Stepper(params, fem, config)
    s1 = base.initial_state(phase0)
    s2 = pert.initial_state(
        FieldPair(phase0.bulk + perturbation.bulk, phase0.surf + perturbation.surf)
    )
    unit_spec = params.l_form()

    def distance(a: TimeState, b: TimeState, form: AssembledForm) -> float:
        diff = FieldPair(a.phases.bulk - b.phases.bulk, a.phases.surf - b.phases.surf)
        diff = project_mean_zero(diff, params, fem)
        return 0.5 * dual_norm(diff, form, params) ** 2

    form0 = assemble_weighted_form(fem, s1.phases, params, slot="L")
    times = [0.0]
    y = [distance(s1, s2, form0)]
    qhat = [math.nan]  # padded below once the first step exists
    dt = config.dt
    dt_sample = dt * sample_every
    prev1 = s1
    for k in range(n_steps):
        s1 = base.step(s1)
        s2 = pert.step(s2)
        if (k + 1) % sample_every:
            continue
        form1 = base.last_form
        yk = distance(s1, s2, form1)
        rate = FieldPair(
            (s1.phases.bulk - prev1.phases.bulk) / dt_sample,
            (s1.phases.surf - prev1.phases.surf) / dt_sample,
        )
        rate = project_mean_zero(rate, params, fem)
        qk = (
            1.0
            + form_norm(s2.potentials, unit_spec, fem) ** 2
            + dual_norm(rate, form1, params) ** 2
            + h2_surrogate(s1.phases, fem) ** 4
        )
        times.append((k + 1) * dt)
        y.append(yk)
        qhat.append(qk)
        prev1 = s1
    qhat[0] = qhat[1]
    times = np.asarray(times)
    y = np.asarray(y)
    qhat = np.asarray(qhat)
    integ = np.concatenate([[0.0], np.cumsum(0.5 * (qhat[1:] + qhat[:-1]) * np.diff(times))])
    with np.errstate(divide="ignore"):
        ratios = np.log(y[1:] / y[0]) / integ[1:]
    fitted = float(np.max(ratios))
    bound = y[0] * np.exp(fitted * integ)
    worst = float(np.max(y - bound))
    return GronwallReport(
        times=times,
        y=y,
        qhat=qhat,
        fitted_rate=fitted,
        y0=float(y[0]),
        yT=float(y[-1]),
        worst_violation=worst,
    )
