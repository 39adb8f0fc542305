"""Singular double-well potentials, mobilities, and structural-assumption checks.

Potentials are handled as a convex/concave split ``W = W1 + W2``: ``W1`` is
convex with a positive curvature floor (singular at +-1 for the logarithmic
kind), ``W2`` is concave with a globally Lipschitz derivative.  The split is
what the semi-implicit scheme discretizes, so it is part of the contract, not
an implementation detail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import xlogy

from .errors import AssumptionViolationError, FormatError, SingularityError

LOGARITHMIC = "logarithmic"
QUARTIC = "quartic"


@dataclass(frozen=True)
class PotentialSpec:
    """Double-well potential ``W(s) = W1(s) + W2(s)`` on [-1, 1].

    kind "logarithmic":
        ``W1(s) = theta/2 * ((1+s)ln(1+s) + (1-s)ln(1-s))``,
        ``W2(s) = -theta0/2 * s**2``, with the convention ``0*ln(0) = 0``.
        Requires ``theta0 > theta > 0`` for a genuine double well; ``W1'``
        blows up at +-1 and ``W1'' >= theta``.
    kind "quartic":
        ``W1(s) = theta*(s**2/2 + s**4/4)``, ``W2(s) = -theta0/2 * s**2``.
        Regular on all of R; provided for smooth-potential experiments.
    """

    kind: str = LOGARITHMIC
    theta: float = 1.0
    theta0: float = 2.0

    def __post_init__(self):
        if self.kind not in (LOGARITHMIC, QUARTIC):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not (self.theta > 0.0):
            raise ValueError("theta must be positive")
        if not (self.theta0 > self.theta):
            raise ValueError("theta0 must exceed theta (double-well condition)")

    @property
    def singular(self) -> bool:
        return self.kind == LOGARITHMIC

    @property
    def curvature_floor(self) -> float:
        """Lower bound for W1'' on (-1, 1)."""
        return self.theta

    @property
    def f2_lipschitz(self) -> float:
        """Lipschitz constant of W2'."""
        return self.theta0

    def convex(self, s, order: int = 0):
        """Evaluate W1 or its derivatives (orders 0..2), vectorized."""
        s = np.asarray(s, dtype=float)
        if self.kind == QUARTIC:
            if order == 0:
                return self.theta * (0.5 * s**2 + 0.25 * s**4)
            if order == 1:
                return self.theta * (s + s**3)
            if order == 2:
                return self.theta * (1.0 + 3.0 * s**2)
            raise ValueError(f"order must be 0, 1 or 2, got {order}")
        if order == 0:
            out = np.where(
                np.abs(s) > 1.0,
                np.inf,
                0.5 * self.theta * (xlogy(1.0 + s, 1.0 + s) + xlogy(1.0 - s, 1.0 - s)),
            )
            return out if out.ndim else float(out)
        if np.any(np.abs(s) >= 1.0):
            raise SingularityError(
                f"W1 derivative of order {order} undefined at |s| >= 1 "
                f"(max |s| = {np.max(np.abs(s))!r})"
            )
        if order == 1:
            return 0.5 * self.theta * (np.log1p(s) - np.log1p(-s))
        if order == 2:
            return self.theta / (1.0 - s * s)
        raise ValueError(f"order must be 0, 1 or 2, got {order}")

    def concave(self, s, order: int = 0):
        """Evaluate W2 or its derivatives (orders 0..2), vectorized."""
        s = np.asarray(s, dtype=float)
        if order == 0:
            return -0.5 * self.theta0 * s * s
        if order == 1:
            return -self.theta0 * s
        if order == 2:
            return np.full_like(s, -self.theta0)
        raise ValueError(f"order must be 0, 1 or 2, got {order}")


def potential_eval(spec: PotentialSpec, s, order: int = 0):
    """Evaluate ``W = W1 + W2`` with the extended-value convention.

    Order 0 returns +inf beyond [-1, 1] for the singular kind; orders 1 and 2
    raise :class:`SingularityError` at or beyond the pure phases.
    """
    return spec.convex(s, order) + spec.concave(s, order)


CONSTANT = "constant"
POLYNOMIAL = "polynomial"
TABULATED = "tabulated"
MOLLIFIED = "mollified"

# Fixed quadrature for one-sided mollification: nodes for the bump on (0, 1),
# rho(t) = exp(-1/(t(1-t))), normalized discretely so constants mollify
# exactly and bounds are preserved.
_MOLL_N = 257
_MOLL_T = (np.arange(_MOLL_N) + 0.5) / _MOLL_N
_MOLL_W = np.exp(-1.0 / (_MOLL_T * (1.0 - _MOLL_T)))
_MOLL_W = _MOLL_W / _MOLL_W.sum()


@dataclass(frozen=True)
class MobilitySpec:
    """Concentration-dependent Onsager mobility with certified bounds.

    ``m_lower``/``m_upper`` are the declared two-sided bounds (positive);
    evaluation outside them raises an assumption error at the calling sites
    that enforce it.  Kinds: constant value, polynomial in s (coefficients in
    increasing order), tabulated (piecewise-linear on a grid covering [-1,1]),
    and mollified (a smoothed view of a base spec, produced by
    :func:`regularize_mobility`).
    """

    kind: str = CONSTANT
    m_lower: float = 1.0
    m_upper: float = 1.0
    value: float = 1.0
    coeffs: tuple = ()
    table_s: tuple = ()
    table_m: tuple = ()
    base: "MobilitySpec | None" = None
    moll_k: int = 0

    def __post_init__(self):
        if self.kind not in (CONSTANT, POLYNOMIAL, TABULATED, MOLLIFIED):
            raise ValueError(f"unknown mobility kind {self.kind!r}")
        if not (0.0 < self.m_lower <= self.m_upper):
            raise ValueError("mobility bounds must satisfy 0 < m_lower <= m_upper")
        if self.kind == TABULATED:
            s = np.asarray(self.table_s)
            if s.size < 2 or np.any(np.diff(s) <= 0.0):
                raise FormatError("mobility table abscissae must be strictly increasing")
            if s[0] > -1.0 or s[-1] < 1.0:
                raise FormatError("mobility table must span [-1, 1]")
        if self.kind == MOLLIFIED and (self.base is None or self.moll_k < 1):
            raise ValueError("mollified mobility needs a base spec and k >= 1")


def mob_eval(spec: MobilitySpec, s):
    """Evaluate the mobility, vectorized; input is clamped to [-1, 1]."""
    s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
    if spec.kind == CONSTANT:
        return np.full_like(s, spec.value) if s.ndim else float(spec.value)
    if spec.kind == POLYNOMIAL:
        return np.polynomial.polynomial.polyval(s, np.asarray(spec.coeffs))
    if spec.kind == TABULATED:
        return np.interp(s, spec.table_s, spec.table_m)
    # mollified: m_k(s) = sum_j w_j m_base(s - t_j / k)
    shifts = _MOLL_T / spec.moll_k
    flat = np.atleast_1d(s)
    vals = mob_eval(spec.base, flat[:, None] - shifts[None, :])
    out = np.atleast_2d(vals) @ _MOLL_W
    return out.reshape(flat.shape) if np.asarray(s).ndim else float(out[0])


def mob_deriv(spec: MobilitySpec, s):
    """Derivative of the mobility with respect to concentration."""
    s_arr = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
    if spec.kind == CONSTANT:
        return np.zeros_like(s_arr) if s_arr.ndim else 0.0
    if spec.kind == POLYNOMIAL:
        c = np.polynomial.polynomial.polyder(np.asarray(spec.coeffs, dtype=float))
        return np.polynomial.polynomial.polyval(s_arr, c)
    if spec.kind == TABULATED:
        sg = np.asarray(spec.table_s)
        mg = np.asarray(spec.table_m)
        slopes = np.diff(mg) / np.diff(sg)
        idx = np.clip(np.searchsorted(sg, s_arr, side="right") - 1, 0, len(slopes) - 1)
        out = slopes[idx]
        return out if s_arr.ndim else float(out)
    # mollified: differentiate under the quadrature; the clamped base has
    # derivative zero outside [-1, 1].
    shifts = _MOLL_T / spec.moll_k
    flat = np.atleast_1d(s_arr)
    args = flat[:, None] - shifts[None, :]
    inside = (args > -1.0) & (args < 1.0)
    dvals = mob_deriv(spec.base, args) * inside
    out = np.atleast_2d(dvals) @ _MOLL_W
    return out.reshape(flat.shape) if np.asarray(s).ndim else float(out[0])


def regularize_mobility(spec: MobilitySpec, k: int) -> MobilitySpec:
    """Return the k-th mollified view of a mobility.

    The result evaluates ``m_k(s) = int_0^1 rho(t) m(s - t/k) dt`` with a
    smooth bump ``rho`` supported in (0, 1), realized by a fixed normalized
    quadrature.  Constants are reproduced exactly; the range (hence the
    declared bounds) is preserved, and for C^1 bases the derivative stays
    uniformly bounded by the base's.
    """
    if k < 1:
        raise ValueError(f"mollification index must be >= 1, got {k}")
    base = spec.base if spec.kind == MOLLIFIED else spec
    return replace(spec, kind=MOLLIFIED, base=base, moll_k=int(k))


def load_mobility_table(path: str, m_lower: float, m_upper: float) -> MobilitySpec:
    """Load a tabulated mobility from a two-column CSV (s, m)."""
    rows = []
    with open(path) as f:
        for ln_no, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"{path}:{ln_no}: expected two columns, got {len(parts)}")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                if ln_no == 1:
                    continue  # header line
                raise FormatError(f"{path}:{ln_no}: non-numeric entry") from None
    if len(rows) < 2:
        raise FormatError(f"{path}: mobility table needs at least two rows")
    s, m = zip(*rows)
    if min(m) <= 0.0:
        raise FormatError(f"{path}: mobility values must be positive")
    return MobilitySpec(
        kind=TABULATED, m_lower=m_lower, m_upper=m_upper, table_s=tuple(s), table_m=tuple(m)
    )


@dataclass
class AssumptionReport:
    """Outcome of the structural-assumption audit.

    ``domination`` holds a feasible ``(kappa1, kappa2)`` pair for the
    cross-potential growth condition ``|F1'(alpha*s)| <= kappa1*|G1'(s)| +
    kappa2``; ``curvature_growth`` holds a feasible ``(c, gamma)`` pair for
    the curvature-vs-slope growth bound ``|F1''| <= c*exp(c*|F1'|**gamma)``
    on the bulk potential.
    """

    ok: bool
    convexity_floor_bulk: float
    convexity_floor_surf: float
    mobility_range_bulk: tuple
    mobility_range_surf: tuple
    domination: tuple
    curvature_growth: tuple
    messages: list


def _sample_grid(n_interior: int = 801, n_tail: int = 60) -> np.ndarray:
    interior = np.linspace(-0.95, 0.95, n_interior)
    tail = 1.0 - np.logspace(-12, np.log10(0.05), n_tail)
    return np.unique(np.concatenate([interior, tail, -tail]))


def validate_assumptions(
    pot_bulk: PotentialSpec,
    pot_surf: PotentialSpec,
    mob_bulk: MobilitySpec,
    mob_surf: MobilitySpec,
    alpha: float,
) -> AssumptionReport:
    """Audit convexity floors, mobility bounds, domination, and curvature growth.

    Sampling accumulates on a geometric grid approaching the pure phases; the
    report carries feasible constants rather than pass/fail booleans where the
    assumptions are quantitative.
    """
    msgs = []
    s = _sample_grid()

    floor_b = float(np.min(pot_bulk.convex(s, 2)))
    floor_s = float(np.min(pot_surf.convex(s, 2)))
    if floor_b <= 0.0 or floor_s <= 0.0:
        msgs.append("convex part lacks a positive curvature floor")

    rng_b = _mobility_range(mob_bulk, msgs, "bulk")
    rng_s = _mobility_range(mob_surf, msgs, "surface")

    # Domination of the bulk slope at alpha*s by the surface slope at s.
    fb = np.abs(pot_bulk.convex(alpha * s, 1))
    gs = np.abs(pot_surf.convex(s, 1))
    big = gs >= 1.0
    kappa1 = float(np.max(fb[big] / gs[big])) if np.any(big) else 0.0
    kappa2 = float(max(0.0, np.max(fb - kappa1 * gs)))
    if pot_bulk.singular and not pot_surf.singular and abs(alpha) == 1.0:
        msgs.append("singular bulk potential cannot be dominated by a regular surface one")

    c_sharp = _fit_curvature_growth(pot_bulk, s)
    if not np.isfinite(c_sharp):
        msgs.append("no finite curvature-growth constant found at gamma = 1")

    return AssumptionReport(
        ok=not msgs,
        convexity_floor_bulk=floor_b,
        convexity_floor_surf=floor_s,
        mobility_range_bulk=rng_b,
        mobility_range_surf=rng_s,
        domination=(kappa1, kappa2),
        curvature_growth=(c_sharp, 1.0),
        messages=msgs,
    )


def _mobility_range(spec: MobilitySpec, msgs: list, label: str) -> tuple:
    s = np.linspace(-1.0, 1.0, 2001)
    vals = mob_eval(spec, s)
    lo, hi = float(np.min(vals)), float(np.max(vals))
    tol = 1e-12 * (1.0 + spec.m_upper)
    if lo < spec.m_lower - tol or hi > spec.m_upper + tol:
        msgs.append(
            f"{label} mobility leaves its declared bounds "
            f"[{spec.m_lower}, {spec.m_upper}]: observed [{lo:.6g}, {hi:.6g}]"
        )
    return (lo, hi)


def _fit_curvature_growth(pot: PotentialSpec, s: np.ndarray) -> float:
    """Smallest c (to ~1e-3) with |W1''| <= c*exp(c*|W1'|) on the sample grid."""
    if not pot.singular:
        # Regular potentials satisfy the bound with c = max|W1''| on [-1,1].
        return float(np.max(np.abs(pot.convex(s, 2))))
    inner = s[np.abs(s) < 1.0]
    w2 = np.abs(pot.convex(inner, 2))
    w1 = np.abs(pot.convex(inner, 1))

    def feasible(c: float) -> bool:
        return bool(np.all(np.log(w2) <= np.log(c) + c * w1))

    hi = 1.0
    while not feasible(hi):
        hi *= 2.0
        if hi > 1e6:
            return math.inf
    lo = 1e-3
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi
