"""Bulk-surface field pairs, model parameters, coupling forms and means.

A :class:`FieldPair` carries one nodal vector on the bulk triangulation and
one on the boundary loop.  The two penalization parameters K (phase-field
coupling) and L (chemical-potential coupling) live on the closed half-line
[0, inf]; infinity means the corresponding trace term is absent, zero means a
hard trace constraint.  Both are kept as IEEE floats so that case dispatch via
``math.isinf``/``== 0`` is exact — no magnitude sentinels anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateParameterError, FormatError
from .geometry import FemMatrices
from .potentials import MobilitySpec, PotentialSpec


def chi(r: float) -> float:
    """Penalization weight: 1/r on (0, inf), 0 at r in {0, inf}."""
    if r < 0.0 or math.isnan(r):
        raise ValueError(f"penalization parameter must be in [0, inf], got {r!r}")
    if r == 0.0 or math.isinf(r):
        return 0.0
    return 1.0 / r


@dataclass
class FieldPair:
    """Nodal values on the bulk mesh plus nodal values on the boundary loop."""

    bulk: np.ndarray
    surf: np.ndarray

    def __post_init__(self):
        self.bulk = np.asarray(self.bulk, dtype=float)
        self.surf = np.asarray(self.surf, dtype=float)
        if self.bulk.ndim != 1 or self.surf.ndim != 1:
            raise ValueError("field components must be 1-D arrays")

    @classmethod
    def zeros(cls, fem: FemMatrices) -> "FieldPair":
        return cls(np.zeros(fem.n_bulk), np.zeros(fem.n_surf))

    @classmethod
    def from_stacked(cls, x: np.ndarray, nb: int, ns: int) -> "FieldPair":
        return cls(x[:nb].copy(), x[nb : nb + ns].copy())

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.bulk, self.surf])

    def copy(self) -> "FieldPair":
        return FieldPair(self.bulk.copy(), self.surf.copy())

    def check_shape(self, fem: FemMatrices) -> None:
        if self.bulk.shape != (fem.n_bulk,) or self.surf.shape != (fem.n_surf,):
            raise ValueError(
                f"field shape ({self.bulk.shape[0]}, {self.surf.shape[0]}) does not "
                f"match discretization ({fem.n_bulk}, {fem.n_surf})"
            )

    def __add__(self, other: "FieldPair") -> "FieldPair":
        return FieldPair(self.bulk + other.bulk, self.surf + other.surf)

    def __sub__(self, other: "FieldPair") -> "FieldPair":
        return FieldPair(self.bulk - other.bulk, self.surf - other.surf)

    def __mul__(self, a: float) -> "FieldPair":
        return FieldPair(self.bulk * a, self.surf * a)

    __rmul__ = __mul__


@dataclass(frozen=True)
class FormSpec:
    """One coupling slot of the model, made explicit.

    ``chi_param`` is the penalization parameter (K or L); ``coupling`` is the
    scalar multiplying the surface component inside the trace term, i.e. the
    term reads ``chi(chi_param) * int_Gamma (coupling*surf - bulk)**2``.  When
    ``chi_param`` is 0 the slot instead imposes the nodal trace constraint
    ``bulk|_Gamma = coupling * surf``.
    """

    chi_param: float
    coupling: float

    def __post_init__(self):
        chi(self.chi_param)  # validates the range

    @property
    def weight(self) -> float:
        return chi(self.chi_param)

    @property
    def constrained(self) -> bool:
        return self.chi_param == 0.0


@dataclass(frozen=True)
class ModelParams:
    """All scalar and constitutive parameters of the coupled model.

    K couples the phase fields through the boundary (with factor ``alpha``),
    L couples the chemical potentials (with factor ``beta``).  Defaults:
    fully decoupled (K = L = inf), unit couplings, logarithmic potentials with
    theta = 1, theta0 = 2 on both bulk and surface, unit mobilities.
    """

    K: float = math.inf
    L: float = math.inf
    alpha: float = 1.0
    beta: float = 1.0
    pot_bulk: PotentialSpec = field(default_factory=PotentialSpec)
    pot_surf: PotentialSpec = field(default_factory=PotentialSpec)
    mob_bulk: MobilitySpec = field(default_factory=MobilitySpec)
    mob_surf: MobilitySpec = field(default_factory=MobilitySpec)

    def __post_init__(self):
        if self.K < 0.0 or math.isnan(self.K):
            raise ValueError(f"K must be in [0, inf], got {self.K!r}")
        if self.L < 0.0 or math.isnan(self.L):
            raise ValueError(f"L must be in [0, inf], got {self.L!r}")
        if not (-1.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [-1, 1], got {self.alpha!r}")
        if self.beta == 0.0 or not math.isfinite(self.beta):
            raise ValueError(f"beta must be finite and nonzero, got {self.beta!r}")

    def l_form(self) -> FormSpec:
        return FormSpec(chi_param=self.L, coupling=self.beta)

    def k_form(self) -> FormSpec:
        return FormSpec(chi_param=self.K, coupling=self.alpha)

    @property
    def decoupled_mass(self) -> bool:
        """True when bulk and surface masses are conserved separately."""
        return math.isinf(self.L)

    def mean_weight(self, fem: FemMatrices) -> float:
        """The denominator ``beta^2 |Omega|_h + |Gamma|_h`` of the joint mean."""
        return self.beta**2 * fem.area + fem.perimeter

    def validate(self, fem: FemMatrices | None = None, evolution: bool = False) -> None:
        """Check solvability conditions; needs measures for the mean condition."""
        if fem is not None:
            denom = self.alpha * self.beta * fem.area + fem.perimeter
            if abs(denom) <= 1e-12 * (fem.area + fem.perimeter):
                raise DegenerateParameterError(
                    "alpha*beta*|Omega| + |Gamma| vanishes; the joint mean is degenerate"
                )
        if evolution and self.K == 0.0:
            raise DegenerateParameterError(
                "K = 0 is outside the admissible range for evolution runs "
                "(use K in (0, inf]); it remains valid for static operators"
            )


def integral_bulk(fem: FemMatrices, values: np.ndarray) -> float:
    """Discrete integral over the bulk (consistent-mass quadrature)."""
    return float(np.sum(fem.M_bulk @ values))


def integral_surf(fem: FemMatrices, values: np.ndarray) -> float:
    """Discrete integral over the boundary loop."""
    return float(np.sum(fem.M_surf @ values))


def generalized_mean(pair: FieldPair, params: ModelParams, fem: FemMatrices):
    """Joint (L finite) or componentwise (L = inf) spatial mean.

    For finite L returns the scalar
    ``(beta*int_bulk + int_surf) / (beta^2 |Omega|_h + |Gamma|_h)``; for
    L = inf returns the tuple of plain componentwise means.
    """
    pair.check_shape(fem)
    ib = integral_bulk(fem, pair.bulk)
    isf = integral_surf(fem, pair.surf)
    if params.decoupled_mass:
        return (ib / fem.area, isf / fem.perimeter)
    return (params.beta * ib + isf) / params.mean_weight(fem)


def project_mean_zero(pair: FieldPair, params: ModelParams, fem: FemMatrices) -> FieldPair:
    """Remove the mean along the direction the conservation law selects.

    Finite L subtracts ``mean * (beta, 1)``; L = inf subtracts each
    componentwise mean.  Idempotent.
    """
    mean = generalized_mean(pair, params, fem)
    if params.decoupled_mass:
        mb, ms = mean
        return FieldPair(pair.bulk - mb, pair.surf - ms)
    return FieldPair(pair.bulk - params.beta * mean, pair.surf - mean)


def apply_trace_constraint(pair: FieldPair, spec: FormSpec, fem: FemMatrices) -> FieldPair:
    """Overwrite bulk boundary values with ``coupling * surf`` (chi_param = 0 slots)."""
    if not spec.constrained:
        raise ValueError("trace constraint only applies to a chi_param = 0 slot")
    out = pair.copy()
    out.bulk[fem.mesh.surface_vertices] = spec.coupling * out.surf
    return out


def trace_values(pair_bulk: np.ndarray, fem: FemMatrices) -> np.ndarray:
    """Bulk nodal values restricted to the boundary loop (surface ordering)."""
    return pair_bulk[fem.mesh.surface_vertices]


def form_inner(p: FieldPair, q: FieldPair, spec: FormSpec, fem: FemMatrices) -> float:
    """Evaluate the coupling bilinear form (gradient parts + trace term).

    ``(p, q) = int grad p_b . grad q_b + int_Gamma grad p_s . grad q_s
    + chi * int_Gamma (c p_s - p_b)(c q_s - q_b)`` with c the coupling factor.
    For a constrained slot (chi_param = 0) the trace term is absent; callers
    are responsible for feeding constrained pairs.
    """
    p.check_shape(fem)
    q.check_shape(fem)
    val = float(p.bulk @ (fem.A_bulk @ q.bulk) + p.surf @ (fem.A_surf @ q.surf))
    w = spec.weight
    if w != 0.0:
        jump_p = spec.coupling * p.surf - trace_values(p.bulk, fem)
        jump_q = spec.coupling * q.surf - trace_values(q.bulk, fem)
        val += w * float(jump_p @ (fem.M_surf @ jump_q))
    return val


def form_norm(p: FieldPair, spec: FormSpec, fem: FemMatrices) -> float:
    return math.sqrt(max(form_inner(p, p, spec, fem), 0.0))


def l2_norm(p: FieldPair, fem: FemMatrices) -> float:
    p.check_shape(fem)
    return math.sqrt(
        max(float(p.bulk @ (fem.M_bulk @ p.bulk) + p.surf @ (fem.M_surf @ p.surf)), 0.0)
    )


def h1_norm(p: FieldPair, fem: FemMatrices) -> float:
    p.check_shape(fem)
    grad = float(p.bulk @ (fem.A_bulk @ p.bulk) + p.surf @ (fem.A_surf @ p.surf))
    return math.sqrt(max(grad, 0.0) + l2_norm(p, fem) ** 2)


def h2_surrogate(p: FieldPair, fem: FemMatrices) -> float:
    """Discrete H^2 stand-in: H^1 norm plus the L^2 norm of the discrete Laplacian.

    The discrete Laplacian is ``M^{-1} A p`` componentwise; no boundary
    corrections are attempted — this is a surrogate, not a consistent H^2
    norm, and is only used inside rate estimates.
    """
    p.check_shape(fem)
    lap_b = fem.solve_mass_bulk(fem.A_bulk @ p.bulk)
    lap_s = fem.solve_mass_surf(fem.A_surf @ p.surf)
    lap = FieldPair(lap_b, lap_s)
    return math.sqrt(h1_norm(p, fem) ** 2 + l2_norm(lap, fem) ** 2)


def write_fieldpair(pair: FieldPair, prefix: str) -> tuple[str, str]:
    """Write the two components as two-column CSVs ``<prefix>_bulk/surf.csv``."""
    paths = (prefix + "_bulk.csv", prefix + "_surf.csv")
    for path, comp in zip(paths, (pair.bulk, pair.surf)):
        with open(path, "w") as f:
            f.write("index,value\n")
            for i, v in enumerate(comp):
                f.write(f"{i},{float(v)!r}\n")
    return paths


def _read_component(path: str) -> np.ndarray:
    vals = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "index,value":
            raise FormatError(f"{path}: expected header 'index,value', got {header!r}")
        for ln_no, raw in enumerate(f, 2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"{path}:{ln_no}: expected two columns")
            try:
                idx, val = int(parts[0]), float(parts[1])
            except ValueError:
                raise FormatError(f"{path}:{ln_no}: malformed row {line!r}") from None
            if idx != len(vals):
                raise FormatError(f"{path}:{ln_no}: indices must be 0..n-1 in order")
            vals.append(val)
    return np.asarray(vals)


def read_fieldpair(prefix: str) -> FieldPair:
    """Read a pair written by :func:`write_fieldpair`."""
    return FieldPair(
        _read_component(prefix + "_bulk.csv"), _read_component(prefix + "_surf.csv")
    )
