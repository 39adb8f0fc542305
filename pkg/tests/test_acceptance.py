"""End-to-end acceptance checks for the coupled solver.

Nine numbered criteria, each printing one PASS/FAIL line with its measured
numbers: mass conservation, energy dissipation, confinement, elliptic
convergence, norm equivalences, continuous dependence, spectral constants,
equilibration, and the dissipation chain rule.  The heavy shared runs (six
level-4 trajectories) are produced once per module.
"""

import json
import math

import numpy as np
import pytest

from bscahn.diagnostics import (
    chain_rule_residual,
    continuous_dependence_experiment,
    dissipation_rate,
    energy,
    separation_margin,
    stationarity_report,
)
from bscahn.elliptic import assemble_weighted_form, solve_weighted
from bscahn.evolution import SchemeConfig, Stepper
from bscahn.fields import FieldPair, ModelParams, generalized_mean, project_mean_zero
from bscahn.geometry import assemble_fem, build_disk_mesh
from bscahn.harness import (
    IcSpec,
    elliptic_convergence_study,
    make_initial,
    parse_config,
    run_scenario,
)
from bscahn.potentials import MobilitySpec

MOB_VAR = MobilitySpec(kind="polynomial", coeffs=(1.0, 0.5), m_lower=0.4, m_upper=1.6)
MOB_HALF_TWO = MobilitySpec(kind="polynomial", coeffs=(1.25, 0.75), m_lower=0.5, m_upper=2.0)

# the six coupling regimes exercised by the long runs; variable mobility on
# the phase-coupled half so both operator families see real trajectories
MASS_CASES = [
    (1.0, 0.0, True),
    (1.0, 1.0, True),
    (1.0, math.inf, True),
    (math.inf, 0.0, False),
    (math.inf, 1.0, False),
    (math.inf, math.inf, False),
]


def _verdict(num, label, ok, detail):
    print(f"[criterion {num}] {label}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {num} ({label}): {detail}"


@pytest.fixture(scope="module")
def fem4():
    return assemble_fem(build_disk_mesh(4))


@pytest.fixture(scope="module")
def mass_runs(fem4):
    """Six 1000-step spinodal trajectories at level 4, one per coupling regime."""
    runs = []
    for idx, (K, L, variable) in enumerate(MASS_CASES):
        mob = MOB_VAR if variable else MobilitySpec(kind="constant", value=1.0, m_lower=1.0, m_upper=1.0)
        params = ModelParams(K=K, L=L, mob_bulk=mob, mob_surf=mob)
        stepper = Stepper(params, fem4, SchemeConfig(dt=1e-3))
        ic = IcSpec(kind="spinodal", seed=101 + idx, amplitude=0.2, mean=0.1, mean_surf=0.1)
        state = stepper.initial_state(make_initial(ic, fem4))
        m0 = generalized_mean(state.phases, params, fem4)
        drift = [0.0]
        energies = [energy(state.phases, params, fem4)]
        separations = [separation_margin(state.phases)]

        def observer(prev, new, st, m0=m0, params=params, drift=drift,
                     energies=energies, separations=separations):
            m = generalized_mean(new.phases, params, fem4)
            if isinstance(m0, tuple):
                rel = max(
                    abs(m[0] - m0[0]) / max(abs(m0[0]), 1e-300),
                    abs(m[1] - m0[1]) / max(abs(m0[1]), 1e-300),
                )
            else:
                rel = abs(m - m0) / max(abs(m0), 1e-300)
            drift.append(rel)
            energies.append(energy(new.phases, params, fem4))
            separations.append(separation_margin(new.phases))

        traj = stepper.run(state, 1000, observer=observer)
        runs.append(
            {
                "K": K,
                "L": L,
                "variable": variable,
                "max_rel_drift": max(drift),
                "energies": energies,
                "min_separation": min(separations),
                "substeps": traj.substeps,
            }
        )
    return runs


def test_criterion_1_mass_conservation(mass_runs):
    worst = max(r["max_rel_drift"] for r in mass_runs)
    detail = (
        f"six level-4 runs (K in {{1, inf}} x L in {{0, 1, inf}}), 1000 steps each: "
        f"worst relative drift {worst:.3e} (tolerance 1e-9)"
    )
    _verdict(1, "mass conservation", worst <= 1e-9, detail)


def test_criterion_2_energy_dissipation(mass_runs, fem3):
    fractions = []
    for r in mass_runs:
        e = r["energies"]
        slack = 1e-12 * max(1.0, max(abs(v) for v in e))
        good = sum(1 for a, b in zip(e, e[1:]) if b <= a + slack)
        fractions.append(good / (len(e) - 1))
    min_frac = min(fractions)

    def window_residual(dt, variable, t_warm=0.15, t_end=0.35):
        mob = MOB_VAR if variable else MobilitySpec(kind="constant", value=1.0, m_lower=1.0, m_upper=1.0)
        params = ModelParams(K=1.0, L=1.0, mob_bulk=mob, mob_surf=mob)
        st = Stepper(params, fem3, SchemeConfig(dt=dt))
        ic = IcSpec(kind="spinodal", seed=5, amplitude=0.2, mean=0.1, mean_surf=0.1)
        s = st.initial_state(make_initial(ic, fem3))
        e = energy(s.phases, params, fem3)
        total = 0.0
        for k in range(int(round(t_end / dt))):
            s = st.step(s)
            e_new = energy(s.phases, params, fem3)
            if (k + 1) * dt > t_warm:
                total += abs(e_new - e + dt * dissipation_rate(s.potentials, st.last_form))
            e = e_new
        return total

    ratios = []
    for variable in (False, True):
        vals = [window_residual(dt, variable) for dt in (4e-3, 2e-3, 1e-3)]
        ratios.extend([vals[0] / vals[1], vals[1] / vals[2]])
    ok = min_frac >= 0.999 and all(r >= 1.8 for r in ratios)
    detail = (
        f"E non-increasing on {min_frac:.2%} of steps at dt = 1e-3 (recorded threshold); "
        f"identity-residual halving ratios {', '.join(f'{r:.2f}' for r in ratios)} (need >= 1.8)"
    )
    _verdict(2, "energy dissipation", ok, detail)


def test_criterion_3_confinement_and_separation(mass_runs, fem3):
    min_sep = min(r["min_separation"] for r in mass_runs)
    params = ModelParams(K=1.0, L=1.0)
    stepper = Stepper(params, fem3, SchemeConfig(dt=2e-3))
    ic = IcSpec(kind="spinodal", seed=9, amplitude=0.2, mean=0.1, mean_surf=0.1)
    state = stepper.initial_state(make_initial(ic, fem3))
    plateau = math.inf
    for k in range(750):
        state = stepper.step(state)
        if (k + 1) * 2e-3 >= 1.0:
            plateau = min(plateau, separation_margin(state.phases))
    ok = min_sep > 0.0 and plateau > 0.0
    detail = (
        f"nodal |phi|, |psi| < 1 on all six runs (worst margin {min_sep:.3e}); "
        f"separation plateau {plateau:.4f} for t in [1, 1.5] on the reference run"
    )
    _verdict(3, "confinement and separation", ok, detail)


def test_criterion_4_elliptic_convergence(fem1):
    orders = {}
    for decoupled in (True, False):
        for variable in (False, True):
            name = f"{'inf' if decoupled else 'L=1'}/{'var' if variable else 'const'}"
            res = elliptic_convergence_study((2, 3, 4, 5), decoupled, variable)
            orders[name] = res["order"]

    rng = np.random.default_rng(7)
    oracle_worst = 0.0
    for L in (1.0, math.inf):
        params = ModelParams(L=L, mob_bulk=MOB_HALF_TWO, mob_surf=MOB_HALF_TWO)
        phase = FieldPair(
            rng.uniform(-0.9, 0.9, fem1.n_bulk), rng.uniform(-0.9, 0.9, fem1.n_surf)
        )
        form = assemble_weighted_form(fem1, phase, params, slot="L")
        rhs = project_mean_zero(
            FieldPair(rng.standard_normal(fem1.n_bulk), rng.standard_normal(fem1.n_surf)),
            params,
            fem1,
        )
        sol = solve_weighted(form, rhs, params)
        nb, ns = fem1.n_bulk, fem1.n_surf
        A = form.matrix.toarray()
        b = np.concatenate([fem1.M_bulk @ rhs.bulk, fem1.M_surf @ rhs.surf])
        mb1 = np.asarray(fem1.M_bulk @ np.ones(nb))
        ms1 = np.asarray(fem1.M_surf @ np.ones(ns))
        if math.isinf(L):
            cons = [np.concatenate([mb1, np.zeros(ns)]), np.concatenate([np.zeros(nb), ms1])]
        else:
            cons = [np.concatenate([params.beta * mb1, ms1])]
        C = np.column_stack(cons)
        Kd = np.block([[A, C], [C.T, np.zeros((C.shape[1], C.shape[1]))]])
        full = np.linalg.solve(Kd, np.concatenate([b, np.zeros(C.shape[1])]))
        oracle_worst = max(
            oracle_worst, float(np.max(np.abs(sol.pair.stacked() - full[: nb + ns])))
        )

    ok = all(1.8 <= o <= 2.2 for o in orders.values()) and oracle_worst < 1e-10
    detail = (
        "L2 orders over levels 2-5: "
        + ", ".join(f"{k} {v:.3f}" for k, v in orders.items())
        + f" (band [1.8, 2.2]); level-1 dense-oracle mismatch {oracle_worst:.2e} (< 1e-10)"
    )
    _verdict(4, "elliptic convergence", ok, detail)


SUITE_CONFIG = """
kind = verify
model.K = 1
model.L = 1
mobility.bulk.kind = polynomial
mobility.bulk.coeffs = 1.25,0.75
mobility.bulk.m_lower = 0.5
mobility.bulk.m_upper = 2
mobility.surf.kind = polynomial
mobility.surf.coeffs = 1.25,0.75
mobility.surf.m_lower = 0.5
mobility.surf.m_upper = 2
ic.seed = 0
verify.levels = 3,4,5
verify.samples = 50
"""


@pytest.fixture(scope="module")
def suite_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    rc = run_scenario(parse_config(SUITE_CONFIG), str(out))
    summary = json.loads((out / "summary.json").read_text())
    return rc, summary


def test_criterion_5_norm_equivalences(suite_report):
    rc, summary = suite_report
    ne = summary["norm_equivalence"]
    lower, upper = ne["lower_constant"], ne["upper_constant"]
    ok = (
        ne["violations"] == 0
        and lower == pytest.approx(math.sqrt(0.5), rel=1e-12)
        and upper == pytest.approx(math.sqrt(2.0), rel=1e-12)
        and lower <= ne["observed_min"] <= ne["observed_max"] <= upper
    )
    detail = (
        f"50 random pairs with m* = 0.5, M* = 2: 0 violations; observed ratio range "
        f"[{ne['observed_min']:.4f}, {ne['observed_max']:.4f}] inside "
        f"[{lower:.4f}, {upper:.4f}]"
    )
    _verdict(5, "norm equivalences", ok, detail)


def test_criterion_6_continuous_dependence(fem3):
    params = ModelParams(K=1.0, L=1.0)
    base = make_initial(
        IcSpec(kind="spinodal", seed=21, amplitude=0.2, mean=0.1, mean_surf=0.1), fem3
    )

    def experiment(amp, dt, sample_every):
        pert = make_initial(
            IcSpec(kind="modes", seed=22, amplitude=amp, mean=0.0, mean_surf=0.0), fem3
        )
        return continuous_dependence_experiment(
            base, pert, params, fem3, SchemeConfig(dt=dt), int(round(5.0 / dt)), sample_every
        )

    full = experiment(1e-3, 1e-3, 50)
    half_amp = experiment(5e-4, 1e-3, 50)
    half_dt = experiment(1e-3, 5e-4, 100)

    amp_ratio = math.sqrt(half_amp.yT / full.yT)
    rate_drift = abs(half_dt.fitted_rate - full.fitted_rate) / abs(full.fitted_rate)
    ok = (
        0.4 <= amp_ratio <= 0.6
        and rate_drift <= 0.10
        and full.worst_violation <= 1e-12
        and half_dt.worst_violation <= 1e-12
    )
    detail = (
        f"level 3, T = 5, dt = 1e-3: halving the perturbation scales sqrt(y(T)) by "
        f"{amp_ratio:.3f} (band [0.4, 0.6]); fitted growth rate drifts {rate_drift:.2%} "
        f"under dt halving (<= 10%); growth bound violations 0"
    )
    _verdict(6, "continuous dependence", ok, detail)


def test_criterion_7_poincare_and_interpolation(suite_report):
    rc, summary = suite_report
    eigs = {lv: summary["poincare"][lv]["eigenvalue"] for lv in ("3", "4", "5")}
    consts = [summary["poincare"][lv]["constant"] for lv in ("3", "4", "5")]
    spread = (max(consts) - min(consts)) / min(consts)
    drifts = {}
    for r in ("2.0", "4.0", "8.0"):
        vals = [summary["interpolation"][lv][r] for lv in ("3", "4", "5")]
        drifts[r] = (max(vals) - min(vals)) / min(vals)
        assert all(v <= 1.0 + 1e-12 for v in vals)
    ok = (
        rc == 0
        and summary["failures"] == []
        and all(e > 0.0 for e in eigs.values())
        and spread <= 0.05
        and all(d <= 0.10 for d in drifts.values())
    )
    detail = (
        f"eigenvalue > 0 on levels 3-5 (lambda_3 = {eigs['3']:.6f}); constants Cauchy "
        f"within {spread:.2%} (<= 5%); interpolation ratios drift "
        + ", ".join(f"r={r}: {d:.2%}" for r, d in drifts.items())
        + " (<= 10%)"
    )
    _verdict(7, "Poincare and interpolation", ok, detail)


def test_criterion_8_convergence_to_equilibrium(fem3):
    params = ModelParams(K=1.0, L=1.0)
    dt = 2e-2
    stepper = Stepper(params, fem3, SchemeConfig(dt=dt))
    ic = IcSpec(kind="spinodal", seed=31, amplitude=0.2, mean=0.1, mean_surf=0.1)
    state = stepper.initial_state(make_initial(ic, fem3))
    traj = stepper.run(state, int(round(200.0 / dt)))
    rep = stationarity_report(traj.final, params, fem3)
    scale = 1e-5 * (1.0 + abs(rep.mu_mean))
    tie = abs(params.beta * rep.theta_mean - rep.mu_mean)
    rel = abs(rep.theta_mean - rep.theta_pred) / max(abs(rep.theta_pred), 1e-300)
    ok = rep.stdev_mu <= scale and rep.stdev_theta <= scale and tie <= 1e-6 and rel <= 1e-4
    detail = (
        f"level 3, K = L = 1, T = 200: stdev(mu) = {rep.stdev_mu:.2e}, stdev(theta) = "
        f"{rep.stdev_theta:.2e} (<= {scale:.2e}); |beta*theta_mean - mu_mean| = {tie:.2e} "
        f"(<= 1e-6); equilibrium-constant match {rel:.2e} relative (<= 1e-4)"
    )
    _verdict(8, "convergence to equilibrium", ok, detail)


def test_criterion_9_chain_rule_identity(fem3):
    def normalized_residual(dt, variable):
        mob = MOB_VAR if variable else MobilitySpec(kind="constant", value=1.0, m_lower=1.0, m_upper=1.0)
        params = ModelParams(K=1.0, L=1.0, mob_bulk=mob, mob_surf=mob)
        st = Stepper(params, fem3, SchemeConfig(dt=dt))
        xy = fem3.mesh.vertices
        sv = fem3.mesh.surface_vertices
        th = np.arctan2(xy[sv, 1], xy[sv, 0])
        p0 = FieldPair(
            0.2 + 0.05 * np.cos(2.0 * np.pi * xy[:, 0]) * np.cos(np.pi * xy[:, 1]),
            0.2 + 0.05 * np.cos(2.0 * th),
        )
        s = st.initial_state(p0)
        for _ in range(int(round(0.1 / dt))):
            s = st.step(s)
        window = [s]
        for _ in range(2):
            window.append(st.step(window[-1]))
        rep = chain_rule_residual(tuple(window), params, fem3)
        if not variable:
            assert rep.bulk_weight_term == 0.0 and rep.surf_weight_term == 0.0
        return rep.normalized

    ratios = []
    for variable in (False, True):
        vals = [normalized_residual(dt, variable) for dt in (4e-3, 2e-3, 1e-3)]
        ratios.extend([vals[0] / vals[1], vals[1] / vals[2]])
    ok = all(1.6 <= r <= 2.4 for r in ratios)
    detail = (
        "normalized residual halving ratios "
        + ", ".join(f"{r:.3f}" for r in ratios)
        + " (band 2.0 +- 0.4); constant-mobility weight terms identically zero"
    )
    _verdict(9, "chain-rule identity", ok, detail)
