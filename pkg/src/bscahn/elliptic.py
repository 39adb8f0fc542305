"""Mobility-weighted bulk-surface elliptic operators and their solver.

The assembled operator acts on stacked vectors ``[bulk; surf]`` and realizes
the bilinear form

    (u, v) -> int m_b(phi) grad u_b . grad v_b
              + int_Gamma m_s(psi) grad u_s . grad v_s
              + chi * int_Gamma (c u_s - u_b)(c v_s - v_b)

with element-midpoint mobility weights.  ``solve_weighted`` inverts it on the
mean-zero subspace with scalar Lagrange multipliers (two of them in the
decoupled case); a ``chi_param = 0`` slot is handled by eliminating the bulk
boundary unknowns through the nodal trace constraint instead of penalization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from .errors import AssumptionViolationError, CompatibilityError, SolverError
from .fields import FieldPair, FormSpec, ModelParams, generalized_mean, project_mean_zero
from .geometry import FemMatrices
from .potentials import MobilitySpec, mob_eval

CLAMP_WARN_EXCESS = 1e-12


def _element_weights(
    spec: MobilitySpec, nodal: np.ndarray, elements: np.ndarray, label: str
) -> np.ndarray:
    """Mobility at element midpoints (average of nodal values, then m(.))."""
    excess = np.max(np.abs(nodal)) - 1.0
    if excess > CLAMP_WARN_EXCESS:
        warnings.warn(
            f"{label} phase exceeds [-1, 1] by {excess:.3e}; clamping for mobility "
            "evaluation",
            RuntimeWarning,
            stacklevel=3,
        )
    clamped = np.clip(nodal, -1.0, 1.0)
    midvals = clamped[elements].mean(axis=1)
    w = mob_eval(spec, midvals)
    tol = 1e-12 * (1.0 + spec.m_upper)
    if np.min(w) < spec.m_lower - tol or np.max(w) > spec.m_upper + tol:
        raise AssumptionViolationError(
            f"{label} mobility leaves declared bounds [{spec.m_lower}, {spec.m_upper}]: "
            f"observed [{np.min(w):.6g}, {np.max(w):.6g}]"
        )
    return w


def _trace_matrix(fem: FemMatrices) -> sps.csr_matrix:
    ns, nb = fem.n_surf, fem.n_bulk
    return sps.coo_matrix(
        (np.ones(ns), (np.arange(ns), fem.mesh.surface_vertices)), shape=(ns, nb)
    ).tocsr()


@dataclass
class AssembledForm:
    """Operator matrix for one coupling slot plus its provenance."""

    matrix: sps.csr_matrix
    spec: FormSpec
    fem: FemMatrices
    weights_bulk: np.ndarray  # per-triangle mobility values
    weights_surf: np.ndarray  # per-edge mobility values
    _solver: "BorderedSolver | None" = field(default=None, repr=False)

    def apply(self, pair: FieldPair) -> np.ndarray:
        return self.matrix @ pair.stacked()

    def energy(self, pair: FieldPair) -> float:
        """Quadratic form value (the squared weighted norm)."""
        x = pair.stacked()
        return float(x @ (self.matrix @ x))

    def norm(self, pair: FieldPair) -> float:
        return math.sqrt(max(self.energy(pair), 0.0))


def _build_matrix(
    fem: FemMatrices,
    spec: FormSpec,
    w_bulk: np.ndarray,
    w_surf: np.ndarray,
) -> sps.csr_matrix:
    A_b = fem.weighted_stiffness_bulk(w_bulk)
    A_s = fem.weighted_stiffness_surf(w_surf)
    w = spec.weight
    if w == 0.0:
        return sps.bmat([[A_b, None], [None, A_s]], format="csr")
    R = _trace_matrix(fem)
    c = spec.coupling
    Ms = fem.M_surf
    MsR = Ms @ R
    return sps.bmat(
        [
            [A_b + w * (R.T @ MsR), -w * c * MsR.T],
            [-w * c * MsR, A_s + w * c * c * Ms],
        ],
        format="csr",
    )


def assemble_weighted_form(
    fem: FemMatrices, phase: FieldPair, params: ModelParams, slot: str
) -> AssembledForm:
    """Assemble the mobility-weighted operator for slot "L" or "K".

    The L slot uses ``(chi_param, coupling) = (L, beta)``, the K slot
    ``(K, alpha)``; weights are the mobilities evaluated at element-midpoint
    phase values (nodal averages), clamped into [-1, 1] with a warning beyond
    a 1e-12 excess.
    """
    phase.check_shape(fem)
    if slot == "L":
        spec = params.l_form()
    elif slot == "K":
        spec = params.k_form()
    else:
        raise ValueError(f"slot must be 'L' or 'K', got {slot!r}")
    ns = fem.n_surf
    edges = np.stack([np.arange(ns), (np.arange(ns) + 1) % ns], axis=1)
    w_bulk = _element_weights(params.mob_bulk, phase.bulk, fem.mesh.triangles, "bulk")
    w_surf = _element_weights(params.mob_surf, phase.surf, edges, "surface")
    return AssembledForm(
        matrix=_build_matrix(fem, spec, w_bulk, w_surf),
        spec=spec,
        fem=fem,
        weights_bulk=w_bulk,
        weights_surf=w_surf,
    )


def assemble_form(fem: FemMatrices, spec: FormSpec) -> AssembledForm:
    """Assemble the unweighted (unit-mobility) operator for an explicit slot."""
    w_bulk = np.ones(fem.mesh.n_triangles)
    w_surf = np.ones(fem.n_surf)
    return AssembledForm(
        matrix=_build_matrix(fem, spec, w_bulk, w_surf),
        spec=spec,
        fem=fem,
        weights_bulk=w_bulk,
        weights_surf=w_surf,
    )


def trace_prolongation(fem: FemMatrices, coupling: float) -> sps.csr_matrix:
    """Prolongation from [bulk-interior; surf] to [bulk; surf] with the trace tie.

    The returned P satisfies ``(P x)_bulk|_Gamma = coupling * x_surf`` and is
    the identity on interior bulk nodes and on the surface block.
    """
    nb, ns = fem.n_bulk, fem.n_surf
    on_bdry = np.zeros(nb, dtype=bool)
    on_bdry[fem.mesh.surface_vertices] = True
    interior = np.flatnonzero(~on_bdry)
    ni = len(interior)
    rows = np.concatenate([interior, fem.mesh.surface_vertices, nb + np.arange(ns)])
    cols = np.concatenate([np.arange(ni), ni + np.arange(ns), ni + np.arange(ns)])
    vals = np.concatenate([np.ones(ni), np.full(ns, coupling), np.ones(ns)])
    return sps.coo_matrix((vals, (rows, cols)), shape=(nb + ns, ni + ns)).tocsr()


class BorderedSolver:
    """Sparse direct solve of a symmetric operator with scalar side constraints.

    Factorizes ``[[Q, C], [C.T, 0]]`` once; ``solve`` returns the primal part
    satisfying ``C.T x = 0`` together with the multipliers.
    """

    def __init__(self, Q: sps.spmatrix, constraints: list[np.ndarray]):
        n = Q.shape[0]
        k = len(constraints)
        C = sps.csc_matrix(np.column_stack(constraints)) if k else None
        if k:
            big = sps.bmat([[Q, C], [C.T, None]], format="csc")
        else:
            big = sps.csc_matrix(Q)
        self.n = n
        self.k = k
        try:
            self._lu = spsla.splu(big)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rhs = np.concatenate([b, np.zeros(self.k)]) if self.k else b
        y = self._lu.solve(rhs)
        return y[: self.n], y[self.n :]


@dataclass
class EllipticSolution:
    """Mean-zero solution of the weighted elliptic system."""

    pair: FieldPair
    multipliers: np.ndarray
    residual: float


def _mean_constraints(form: AssembledForm, params: ModelParams) -> list[np.ndarray]:
    fem = form.fem
    one_b = fem.M_bulk @ np.ones(fem.n_bulk)
    one_s = fem.M_surf @ np.ones(fem.n_surf)
    if params.decoupled_mass:
        return [
            np.concatenate([one_b, np.zeros(fem.n_surf)]),
            np.concatenate([np.zeros(fem.n_bulk), one_s]),
        ]
    return [np.concatenate([params.beta * one_b, one_s])]


def _form_solver(form: AssembledForm, params: ModelParams) -> tuple:
    """Build (or reuse) the constrained solver for a form; returns (solver, P).

    The cache is keyed by the parameters that shape the constraint set, so a
    form instance can be safely reused across calls.
    """
    key = (params.beta, params.decoupled_mass)
    if form._solver is not None and form._solver[0] == key:
        return form._solver[1]
    fem = form.fem
    constraints = _mean_constraints(form, params)
    if form.spec.constrained:
        P = trace_prolongation(fem, form.spec.coupling)
        Q = (P.T @ form.matrix @ P).tocsc()
        constraints = [P.T @ c for c in constraints]
        solver = BorderedSolver(Q, constraints)
    else:
        P = None
        solver = BorderedSolver(form.matrix, constraints)
    form._solver = (key, (solver, P))
    return form._solver[1]


def solve_weighted(
    form: AssembledForm, rhs: FieldPair, params: ModelParams
) -> EllipticSolution:
    """Invert the assembled form on the mean-zero subspace.

    The right-hand side must have (generalized or componentwise) mean zero up
    to ``1e-10 * (1 + max|rhs|)``; a small residue is projected away, a larger
    one raises :class:`CompatibilityError`.
    """
    fem = form.fem
    rhs.check_shape(fem)
    scale = 1.0 + max(np.max(np.abs(rhs.bulk), initial=0.0), np.max(np.abs(rhs.surf), initial=0.0))
    mean = generalized_mean(rhs, params, fem)
    worst = max(abs(m) for m in mean) if isinstance(mean, tuple) else abs(mean)
    if worst > 1e-10 * scale:
        raise CompatibilityError(
            f"right-hand side mean {worst:.3e} exceeds the solvability tolerance "
            f"{1e-10 * scale:.3e}; project it first"
        )
    if worst != 0.0:
        rhs = project_mean_zero(rhs, params, fem)

    b = np.concatenate([fem.M_bulk @ rhs.bulk, fem.M_surf @ rhs.surf])
    solver, P = _form_solver(form, params)
    if P is not None:
        x_red, lam = solver.solve(P.T @ b)
        x = P @ x_red
        res_vec = P.T @ (form.matrix @ x - b)
        for c, l_i in zip(_mean_constraints(form, params), lam):
            res_vec += (P.T @ c) * l_i
    else:
        x, lam = solver.solve(b)
        res_vec = form.matrix @ x - b
        for c, l_i in zip(_mean_constraints(form, params), lam):
            res_vec += c * l_i
    bnorm = float(np.linalg.norm(b))
    residual = float(np.linalg.norm(res_vec)) / (bnorm if bnorm > 0.0 else 1.0)
    if not np.all(np.isfinite(x)):
        raise SolverError("constrained solve produced non-finite values")
    return EllipticSolution(
        pair=FieldPair.from_stacked(x, fem.n_bulk, fem.n_surf),
        multipliers=lam,
        residual=residual,
    )


def dual_norm(rhs: FieldPair, form: AssembledForm, params: ModelParams) -> float:
    """Weighted dual norm: sqrt of the duality product of rhs with its lift."""
    sol = solve_weighted(form, rhs, params)
    fem = form.fem
    val = float(
        (fem.M_bulk @ rhs.bulk) @ sol.pair.bulk + (fem.M_surf @ rhs.surf) @ sol.pair.surf
    )
    return math.sqrt(max(val, 0.0))
