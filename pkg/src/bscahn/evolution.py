"""Implicit splitting scheme for the coupled bulk-surface phase-field system.

One step advances phases p = (phi, psi) and chemical potentials q = (mu, theta)
through the coupled system

    M (p - p_old)/dt + S_L[p_old] q           = 0
    S_K p + M (W1'(p) + W2'(p_old)) - M q     = 0

where S_L is the mobility-weighted transport operator with weights lagged at
the previous phases, S_K the (unit-weight) interfacial operator, and the
potential is split into an implicit convex part W1 and an explicit concave
part W2.  The step is unconditionally energy decreasing and conserves the
combined mass exactly up to the Newton residual, because the conserved
direction lies in the kernel of S_L and in the test space of the first
equation.

Singular potentials are handled by a damped Newton iteration whose line
search keeps every nodal phase value strictly inside (-1, 1); a step that
cannot be driven to tolerance raises :class:`StepFailureError`, and the
driver retries it as two half steps.

The penalization limits chi_param = 0 are realized by eliminating the tied
boundary values through the nodal trace prolongation: the potentials for
L = 0 (mu = beta theta on the boundary), the phases for K = 0
(phi = alpha psi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from .errors import CompatibilityError, SolverError, StepFailureError
from .fields import FieldPair, ModelParams, generalized_mean
from .geometry import FemMatrices
from .elliptic import AssembledForm, assemble_form, assemble_weighted_form, trace_prolongation


@dataclass(frozen=True)
class SchemeConfig:
    """Knobs of the splitting scheme.

    ``eps_confine`` is the distance the line search keeps between nodal
    phases and the pure states +-1; ``max_retries`` bounds the recursive
    step-halving depth of :meth:`Stepper.run`.
    """

    dt: float = 1e-3
    newton_tol: float = 1e-10
    newton_max: int = 50
    eps_confine: float = 1e-9
    max_retries: int = 5
    ls_shrink: float = 0.5
    ls_max: int = 40

    def __post_init__(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt!r}")
        if not (0.0 < self.eps_confine < 0.1):
            raise ValueError("eps_confine must lie in (0, 0.1)")
        if self.newton_max < 1 or self.max_retries < 0:
            raise ValueError("newton_max must be >= 1 and max_retries >= 0")


@dataclass
class TimeState:
    """Discrete trajectory point: time, step count, phases and potentials."""

    t: float
    step: int
    phases: FieldPair
    potentials: FieldPair

    def copy(self) -> "TimeState":
        return TimeState(self.t, self.step, self.phases.copy(), self.potentials.copy())


@dataclass
class InitialReport:
    """What the admissibility check saw in an initial datum."""

    max_abs_bulk: float
    max_abs_surf: float
    mean: object
    messages: list = field(default_factory=list)


@dataclass
class Trajectory:
    """Accepted states of a run plus bookkeeping counters."""

    times: list
    snapshots: list
    final: TimeState
    n_steps: int
    newton_iterations: int
    substeps: int


def check_initial_datum(
    phase0: FieldPair, params: ModelParams, fem: FemMatrices, config: SchemeConfig
) -> InitialReport:
    """Verify an initial phase pair is admissible for the singular system.

    Requires every nodal value to keep at least ``eps_confine`` distance from
    the pure phases, and the conserved mean to be strictly inside the well:
    the joint mean m must satisfy beta*m, m in (-1, 1) when the masses are
    coupled, and each componentwise mean must be in (-1, 1) when they are
    not.  Raises :class:`CompatibilityError` on violation.
    """
    phase0.check_shape(fem)
    mb = float(np.max(np.abs(phase0.bulk)))
    ms = float(np.max(np.abs(phase0.surf)))
    report = InitialReport(max_abs_bulk=mb, max_abs_surf=ms, mean=None)
    limit = 1.0 - config.eps_confine
    if mb > limit or ms > limit:
        raise CompatibilityError(
            f"initial phases reach {max(mb, ms):.6g}; nodal values must stay "
            f"within +-{limit} so the singular potential is differentiable"
        )
    mean = generalized_mean(phase0, params, fem)
    report.mean = mean
    if params.decoupled_mass:
        for label, m in zip(("bulk", "surface"), mean):
            if not -1.0 < m < 1.0:
                raise CompatibilityError(
                    f"{label} mean {m:.6g} lies outside (-1, 1); no trajectory "
                    "can conserve it"
                )
    else:
        for label, m in (("scaled joint", params.beta * mean), ("joint", mean)):
            if not -1.0 < m < 1.0:
                raise CompatibilityError(
                    f"{label} mean {m:.6g} lies outside (-1, 1); no trajectory "
                    "can conserve it"
                )
    if params.k_form().constrained:
        jump = phase0.bulk[fem.mesh.surface_vertices] - params.alpha * phase0.surf
        worst = float(np.max(np.abs(jump)))
        if worst > 1e-12 * (1.0 + ms):
            raise CompatibilityError(
                f"K = 0 requires the initial trace tie phi = alpha psi on the "
                f"boundary; largest violation {worst:.3e}"
            )
        report.messages.append("trace tie verified for the K = 0 limit")
    return report


def _split_deriv(pair: FieldPair, params: ModelParams, order: int, part: str) -> np.ndarray:
    """Stacked nodal values of the convex or concave potential derivative."""
    if part == "convex":
        b = params.pot_bulk.convex(pair.bulk, order)
        s = params.pot_surf.convex(pair.surf, order)
    else:
        b = params.pot_bulk.concave(pair.bulk, order)
        s = params.pot_surf.concave(pair.surf, order)
    return np.concatenate([np.atleast_1d(b), np.atleast_1d(s)])


class Stepper:
    """Assembled-once machinery advancing a state by the splitting scheme."""

    def __init__(self, params: ModelParams, fem: FemMatrices, config: SchemeConfig):
        params.validate(fem, evolution=False)
        self.params = params
        self.fem = fem
        self.config = config
        self.n = fem.n_bulk + fem.n_surf
        self.M_block = sps.block_diag([fem.M_bulk, fem.M_surf], format="csr")
        self._S_K_full = assemble_form(fem, params.k_form()).matrix
        k_spec = params.k_form()
        l_spec = params.l_form()
        self.P_p = trace_prolongation(fem, k_spec.coupling) if k_spec.constrained else None
        self.P_q = trace_prolongation(fem, l_spec.coupling) if l_spec.constrained else None
        on_bdry = np.zeros(fem.n_bulk, dtype=bool)
        on_bdry[fem.mesh.surface_vertices] = True
        self._interior = np.flatnonzero(~on_bdry)
        self.S_K = self._restrict(self._S_K_full, self.P_p, self.P_p)
        self._M_pq = self._restrict(self.M_block, self.P_p, self.P_q)
        self._M_qp = self._restrict(self.M_block, self.P_q, self.P_p)
        # Exposed after each step: the lagged transport form and the Newton
        # iteration count of the last accepted solve.
        self.last_form: AssembledForm | None = None
        self.last_newton_iters = 0

    @staticmethod
    def _restrict(mat, P_left, P_right):
        out = mat
        if P_left is not None:
            out = P_left.T @ out
        if P_right is not None:
            out = out @ P_right
        return sps.csr_matrix(out)

    def _reduce_p(self, stacked: np.ndarray) -> np.ndarray:
        if self.P_p is None:
            return stacked.copy()
        nb = self.fem.n_bulk
        return np.concatenate([stacked[: nb][self._interior], stacked[nb:]])

    def _expand_p(self, reduced: np.ndarray) -> np.ndarray:
        if self.P_p is None:
            return reduced.copy()
        return self.P_p @ reduced

    def _reduce_q(self, stacked: np.ndarray) -> np.ndarray:
        if self.P_q is None:
            return stacked.copy()
        nb = self.fem.n_bulk
        return np.concatenate([stacked[: nb][self._interior], stacked[nb:]])

    def _expand_q(self, reduced: np.ndarray) -> np.ndarray:
        if self.P_q is None:
            return reduced.copy()
        return self.P_q @ reduced

    def initial_state(self, phase0: FieldPair, t0: float = 0.0) -> TimeState:
        """Pair an initial phase field with its compatible potential.

        The potential solves ``M q = S_K p0 + M W'(p0)`` (full derivative)
        tested against the potential space, so the first step starts from the
        same discrete identity later steps maintain.
        """
        check_initial_datum(phase0, self.params, self.fem, self.config)
        p0 = phase0.stacked()
        rhs = self._S_K_full @ p0 + self.M_block @ (
            _split_deriv(phase0, self.params, 1, "convex")
            + _split_deriv(phase0, self.params, 1, "concave")
        )
        if self.P_q is None:
            q = np.concatenate(
                [
                    self.fem.solve_mass_bulk(rhs[: self.fem.n_bulk]),
                    self.fem.solve_mass_surf(rhs[self.fem.n_bulk :]),
                ]
            )
        else:
            Mq = (self.P_q.T @ self.M_block @ self.P_q).tocsc()
            q_red = spsla.spsolve(Mq, self.P_q.T @ rhs)
            q = self._expand_q(q_red)
        pot = FieldPair.from_stacked(q, self.fem.n_bulk, self.fem.n_surf)
        return TimeState(t=t0, step=0, phases=phase0.copy(), potentials=pot)

    def step(self, state: TimeState, dt: float | None = None) -> TimeState:
        """Advance one step of size ``dt`` (default: the configured one).

        Raises :class:`StepFailureError` if the damped Newton iteration fails
        to reach tolerance; the caller may retry with a smaller step.
        """
        cfg = self.config
        if dt is None:
            dt = cfg.dt
        fem = self.fem
        nb, ns = fem.n_bulk, fem.n_surf
        limit = 1.0 - cfg.eps_confine

        form = assemble_weighted_form(fem, state.phases, self.params, slot="L")
        S_L_red = self._restrict(form.matrix, self.P_q, self.P_q)
        M_qp = self._M_qp
        p_old = state.phases.stacked()
        p_old_red = self._reduce_p(p_old)
        q_red = self._reduce_q(state.potentials.stacked())
        p_red = p_old_red.copy()
        w2_old = _split_deriv(state.phases, self.params, 1, "concave")
        Mw2_red = self._reduce_via(self.P_p, self.M_block @ w2_old)

        def residuals(p_r, q_r):
            p_full = self._expand_p(p_r)
            pair = FieldPair.from_stacked(p_full, nb, ns)
            w1 = _split_deriv(pair, self.params, 1, "convex")
            r1 = M_qp @ ((p_r - p_old_red) / dt) + S_L_red @ q_r
            r2 = (
                self.S_K @ p_r
                + self._reduce_via(self.P_p, self.M_block @ w1)
                + Mw2_red
                - self._M_pq @ q_r
            )
            return r1, r2, pair

        r1, r2, pair = residuals(p_red, q_red)
        res = max(float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))
        iters = 0
        while res > cfg.newton_tol:
            if iters >= cfg.newton_max:
                raise StepFailureError(
                    f"newton stalled at residual {res:.3e} after {iters} iterations",
                    residual=res,
                    iterations=iters,
                )
            w1dd = _split_deriv(pair, self.params, 2, "convex")
            D = sps.diags(w1dd)
            MD = self._restrict(self.M_block @ D, self.P_p, self.P_p)
            J = sps.bmat(
                [[M_qp / dt, S_L_red], [self.S_K + MD, -self._M_pq]], format="csc"
            )
            try:
                delta = spsla.splu(J).solve(-np.concatenate([r1, r2]))
            except RuntimeError as exc:
                raise SolverError(f"step Jacobian factorization failed: {exc}") from exc
            np_red = len(p_red)
            dp_red, dq_red = delta[:np_red], delta[np_red:]
            dp_full = self._expand_p(dp_red)
            p_full = self._expand_p(p_red)
            lam = 1.0
            moving = np.abs(dp_full) > 0.0
            if np.any(moving):
                room = np.where(dp_full > 0.0, limit - p_full, -limit - p_full)
                caps = room[moving] / dp_full[moving]
                lam = min(1.0, 0.95 * float(np.min(caps))) if caps.size else 1.0
                if lam <= 0.0:
                    raise StepFailureError(
                        "confinement line search has no admissible direction",
                        residual=res,
                        iterations=iters,
                    )
            accepted = False
            for _ in range(cfg.ls_max):
                trial_p = p_red + lam * dp_red
                trial_q = q_red + lam * dq_red
                trial_full = self._expand_p(trial_p)
                if np.max(np.abs(trial_full)) < 1.0:
                    t1, t2, tpair = residuals(trial_p, trial_q)
                    tres = max(float(np.max(np.abs(t1))), float(np.max(np.abs(t2))))
                    if np.isfinite(tres) and (tres < res or tres <= cfg.newton_tol):
                        p_red, q_red = trial_p, trial_q
                        r1, r2, pair = t1, t2, tpair
                        res = tres
                        accepted = True
                        break
                lam *= cfg.ls_shrink
            if not accepted:
                raise StepFailureError(
                    f"line search exhausted at residual {res:.3e}",
                    residual=res,
                    iterations=iters + 1,
                )
            iters += 1
        self.last_form = form
        self.last_newton_iters = iters
        q_full = self._expand_q(q_red)
        p_full = self._expand_p(p_red)
        return TimeState(
            t=state.t + dt,
            step=state.step + 1,
            phases=FieldPair.from_stacked(p_full, nb, ns),
            potentials=FieldPair.from_stacked(q_full, nb, ns),
        )

    @staticmethod
    def _reduce_via(P, vec):
        return vec.copy() if P is None else P.T @ vec

    def _advance(self, state: TimeState, dt: float, depth: int) -> tuple:
        try:
            out = self.step(state, dt)
            return out, self.last_newton_iters, 1
        except StepFailureError:
            if depth >= self.config.max_retries:
                raise
            mid, it1, c1 = self._advance(state, dt / 2.0, depth + 1)
            end, it2, c2 = self._advance(mid, dt / 2.0, depth + 1)
            return end, it1 + it2, c1 + c2

    def run(
        self,
        state: TimeState,
        n_steps: int,
        observer=None,
        snapshot_every: int | None = None,
    ) -> Trajectory:
        """March ``n_steps`` macro steps, halving into substeps on failure.

        The observer, if given, is called as ``observer(prev, new, stepper)``
        after every accepted macro step; snapshots (copies) are collected
        every ``snapshot_every`` macro steps plus the final state.
        """
        self.params.validate(self.fem, evolution=True)
        times = [state.t]
        snaps = [state.copy()] if snapshot_every else []
        total_iters = 0
        total_sub = 0
        current = state
        for k in range(n_steps):
            new, iters, subs = self._advance(current, self.config.dt, 0)
            new.step = current.step + 1
            new.t = current.t + self.config.dt
            total_iters += iters
            total_sub += subs
            if observer is not None:
                observer(current, new, self)
            current = new
            times.append(current.t)
            if snapshot_every and (k + 1) % snapshot_every == 0:
                snaps.append(current.copy())
        if snapshot_every and (not snaps or snaps[-1].step != current.step):
            snaps.append(current.copy())
        return Trajectory(
            times=times,
            snapshots=snaps,
            final=current,
            n_steps=n_steps,
            newton_iterations=total_iters,
            substeps=total_sub,
        )
