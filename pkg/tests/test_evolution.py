import math

import numpy as np
import pytest

from bscahn.evolution import SchemeConfig, Stepper, check_initial_datum
from bscahn.fields import FieldPair, ModelParams, generalized_mean
from bscahn.potentials import MobilitySpec, PotentialSpec
from bscahn.diagnostics import energy, dissipation_rate
from bscahn.errors import CompatibilityError, DegenerateParameterError, StepFailureError

MOB_VAR = MobilitySpec(kind="polynomial", coeffs=(1.0, 0.5), m_lower=0.4, m_upper=1.6)


def _spinodal(fem, rng, amp=0.2, mean=0.1):
    return FieldPair(
        mean + amp * rng.uniform(-1.0, 1.0, fem.n_bulk),
        mean + amp * rng.uniform(-1.0, 1.0, fem.n_surf),
    )


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.0)
    with pytest.raises(ValueError):
        SchemeConfig(dt=1e-3, newton_max=0)
    with pytest.raises(ValueError):
        SchemeConfig(dt=1e-3, eps_confine=0.0)


def test_zero_state_is_a_fixed_point(fem1):
    for K, L in [(1.0, 1.0), (math.inf, math.inf), (1.0, 0.0)]:
        params = ModelParams(K=K, L=L)
        stepper = Stepper(params, fem1, SchemeConfig(dt=1e-2))
        state = stepper.initial_state(FieldPair.zeros(fem1))
        new = stepper.step(state)
        assert np.max(np.abs(new.phases.bulk)) < 1e-12
        assert np.max(np.abs(new.phases.surf)) < 1e-12


@pytest.mark.parametrize("K,L", [(1.0, 1.0), (1.0, math.inf), (math.inf, 2.0)])
def test_mass_conserved_each_step(fem2, rng, K, L):
    params = ModelParams(K=K, L=L, beta=1.5, mob_bulk=MOB_VAR, mob_surf=MOB_VAR)
    stepper = Stepper(params, fem2, SchemeConfig(dt=1e-3))
    state = stepper.initial_state(_spinodal(fem2, rng))
    m0 = generalized_mean(state.phases, params, fem2)
    for _ in range(5):
        state = stepper.step(state)
        m = generalized_mean(state.phases, params, fem2)
        if isinstance(m0, tuple):
            assert abs(m[0] - m0[0]) < 1e-11 and abs(m[1] - m0[1]) < 1e-11
        else:
            assert abs(m - m0) < 1e-11


def test_energy_decreases_with_sharp_bound(fem2, rng):
    params = ModelParams(K=1.0, L=1.0, mob_bulk=MOB_VAR, mob_surf=MOB_VAR)
    cfg = SchemeConfig(dt=2e-3)
    stepper = Stepper(params, fem2, cfg)
    state = stepper.initial_state(_spinodal(fem2, rng))
    e = energy(state.phases, params, fem2)
    for _ in range(20):
        state = stepper.step(state)
        e_new = energy(state.phases, params, fem2)
        drop = e_new - e
        rate = dissipation_rate(state.potentials, stepper.last_form)
        assert drop <= -cfg.dt * rate + 1e-11
        e = e_new


def test_confinement_never_violated(fem1, rng):
    params = ModelParams(K=1.0, L=1.0)
    cfg = SchemeConfig(dt=0.5, eps_confine=1e-9)
    stepper = Stepper(params, fem1, cfg)
    state = stepper.initial_state(_spinodal(fem1, rng, amp=0.05, mean=0.6))
    for _ in range(8):
        state = stepper.step(state)
        limit = 1.0 - cfg.eps_confine
        assert np.max(np.abs(state.phases.bulk)) <= limit
        assert np.max(np.abs(state.phases.surf)) <= limit


def test_bitwise_deterministic(fem1, rng):
    params = ModelParams(K=1.0, L=1.0, mob_bulk=MOB_VAR, mob_surf=MOB_VAR)
    p0 = _spinodal(fem1, rng)
    finals = []
    for _ in range(2):
        stepper = Stepper(params, fem1, SchemeConfig(dt=1e-3))
        traj = stepper.run(stepper.initial_state(p0.copy()), 10)
        finals.append(traj.final)
    assert np.array_equal(finals[0].phases.bulk, finals[1].phases.bulk)
    assert np.array_equal(finals[0].potentials.surf, finals[1].potentials.surf)


def test_zero_step_trajectory(fem1):
    params = ModelParams(K=1.0, L=1.0)
    stepper = Stepper(params, fem1, SchemeConfig(dt=1e-3))
    state = stepper.initial_state(FieldPair.zeros(fem1))
    traj = stepper.run(state, 0, snapshot_every=1)
    assert traj.n_steps == 0
    assert traj.final is state
    assert len(traj.times) == 1
    assert len(traj.snapshots) == 1


def test_initial_potential_consistency(fem2, rng):
    params = ModelParams(K=1.0, L=1.0)
    stepper = Stepper(params, fem2, SchemeConfig(dt=1e-3))
    p0 = _spinodal(fem2, rng, amp=0.1, mean=0.0)
    state = stepper.initial_state(p0)
    # q0 solves M q = S_K p + M W'(p)
    from bscahn.elliptic import assemble_form
    from bscahn.potentials import potential_eval

    S = assemble_form(fem2, params.k_form()).matrix
    w1 = potential_eval(params.pot_bulk, p0.bulk, 1)
    w2 = potential_eval(params.pot_surf, p0.surf, 1)
    import scipy.sparse as sps

    M = sps.block_diag([fem2.M_bulk, fem2.M_surf]).tocsr()
    lhs = M @ state.potentials.stacked()
    rhs = S @ p0.stacked() + M @ np.concatenate([w1, w2])
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_run_rejects_degenerate_phase_coupling(fem1):
    params = ModelParams(K=0.0, L=1.0)
    stepper = Stepper(params, fem1, SchemeConfig(dt=1e-3))
    phase0 = FieldPair.zeros(fem1)
    state = stepper.initial_state(phase0)
    with pytest.raises(DegenerateParameterError):
        stepper.run(state, 1)


def test_hard_trace_step_keeps_the_tie(fem1, rng):
    # K = 0 single steps are allowed (stationary analysis); the bulk trace
    # must track alpha * surface exactly
    alpha = 0.5
    params = ModelParams(K=0.0, L=1.0, alpha=alpha)
    stepper = Stepper(params, fem1, SchemeConfig(dt=1e-3))
    surf = 0.3 + 0.05 * rng.uniform(-1.0, 1.0, fem1.n_surf)
    bulk = 0.3 + 0.05 * rng.uniform(-1.0, 1.0, fem1.n_bulk)
    bulk[fem1.mesh.surface_vertices] = alpha * surf
    state = stepper.initial_state(FieldPair(bulk, surf))
    new = stepper.step(state)
    sv = fem1.mesh.surface_vertices
    assert np.allclose(new.phases.bulk[sv], alpha * new.phases.surf, atol=1e-12)


def test_initial_datum_checks(fem1):
    params = ModelParams(K=1.0, L=1.0)
    cfg = SchemeConfig(dt=1e-3)
    bad = FieldPair.zeros(fem1)
    bad.bulk[3] = 1.0
    with pytest.raises(CompatibilityError):
        check_initial_datum(bad, params, fem1, cfg)
    # K = 0 requires the trace tie in the datum
    tied = ModelParams(K=0.0, L=1.0, alpha=1.0)
    loose = FieldPair(np.full(fem1.n_bulk, 0.2), np.full(fem1.n_surf, 0.4))
    with pytest.raises(CompatibilityError):
        check_initial_datum(loose, tied, fem1, cfg)
    ok = FieldPair(np.full(fem1.n_bulk, 0.4), np.full(fem1.n_surf, 0.4))
    check_initial_datum(ok, tied, fem1, cfg)


def test_newton_budget_exhaustion_raises(fem1, rng):
    params = ModelParams(K=1.0, L=1.0)
    cfg = SchemeConfig(dt=1e-2, newton_max=1, max_retries=1)
    stepper = Stepper(params, fem1, cfg)
    state = stepper.initial_state(_spinodal(fem1, rng))
    with pytest.raises(StepFailureError) as info:
        stepper.run(state, 1)
    assert info.value.residual is not None


def test_retry_splits_macro_step(fem1, rng):
    # inject one transient failure at the full dt to drive the halving path
    params = ModelParams(K=1.0, L=1.0)
    cfg = SchemeConfig(dt=1e-2, max_retries=3)
    stepper = Stepper(params, fem1, cfg)
    state = stepper.initial_state(_spinodal(fem1, rng, amp=0.1))

    real_step = stepper.step
    calls = []

    def flaky(st, dt=None):
        calls.append(dt)
        if dt == cfg.dt:
            raise StepFailureError("injected stall", residual=1.0, iterations=0)
        return real_step(st, dt)

    stepper.step = flaky
    traj = stepper.run(state, 2)
    assert traj.substeps == 4  # each macro step split once
    assert calls.count(cfg.dt) == 2
    assert traj.final.t == pytest.approx(2 * cfg.dt)
    assert traj.final.step == 2
