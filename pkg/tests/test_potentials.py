import math

import numpy as np
import pytest

from bscahn.potentials import (
    MobilitySpec,
    PotentialSpec,
    load_mobility_table,
    mob_deriv,
    mob_eval,
    potential_eval,
    regularize_mobility,
    validate_assumptions,
)
from bscahn.errors import FormatError, SingularityError


def test_double_well_value():
    spec = PotentialSpec(theta=1.0, theta0=2.0)
    w = potential_eval(spec, 0.5)
    exact = 0.5 * (1.5 * math.log(1.5) + 0.5 * math.log(0.5)) - 0.25
    assert w == pytest.approx(exact, abs=1e-12)
    assert w == pytest.approx(-0.1191885, abs=1e-6)


def test_zero_log_convention():
    spec = PotentialSpec(theta=1.0, theta0=2.0)
    # 0*log(0) = 0 keeps the endpoint values finite even though the slope blows up.
    assert potential_eval(spec, 1.0) == pytest.approx(math.log(2.0) - 1.0)
    assert potential_eval(spec, -1.0) == pytest.approx(math.log(2.0) - 1.0)


@pytest.mark.parametrize("kind", ["logarithmic", "quartic"])
def test_derivative_consistency(kind):
    spec = PotentialSpec(kind=kind, theta=1.3, theta0=2.4)
    s = np.linspace(-0.9, 0.9, 41)
    h = 1e-6
    for order in (0, 1):
        fd = (potential_eval(spec, s + h, order) - potential_eval(spec, s - h, order)) / (2 * h)
        exact = potential_eval(spec, s, order + 1)
        assert np.max(np.abs(fd - exact)) < 2e-4 * (1.0 + np.max(np.abs(exact)))


def test_split_reassembles():
    spec = PotentialSpec(theta=1.0, theta0=2.0)
    s = np.linspace(-0.95, 0.95, 21)
    for order in (0, 1, 2):
        total = spec.convex(s, order) + spec.concave(s, order)
        assert np.allclose(total, potential_eval(spec, s, order), atol=1e-12)


def test_singularity_raised_at_pure_phases():
    spec = PotentialSpec(theta=1.0, theta0=2.0)
    for order in (1, 2):
        with pytest.raises(SingularityError):
            potential_eval(spec, 1.0, order)
        with pytest.raises(SingularityError):
            potential_eval(spec, np.array([0.0, -1.0]), order)
    # the quartic variant is globally smooth
    quartic = PotentialSpec(kind="quartic", theta=1.0, theta0=2.0)
    assert np.isfinite(potential_eval(quartic, 1.0, 2))


def test_convexity_floor_and_spinodal():
    spec = PotentialSpec(theta=1.0, theta0=2.0)
    s = np.linspace(-0.99, 0.99, 199)
    assert np.all(spec.convex(s, 2) >= spec.curvature_floor - 1e-12)
    # full curvature changes sign exactly at 1/sqrt(2) for theta0/theta = 2
    s_c = 1.0 / math.sqrt(2.0)
    inner = np.linspace(-s_c + 1e-3, s_c - 1e-3, 51)
    outer = np.array([-0.99, -s_c - 1e-3, s_c + 1e-3, 0.99])
    assert np.all(potential_eval(spec, inner, 2) < 0.0)
    assert np.all(potential_eval(spec, outer, 2) > 0.0)


def test_invalid_potential_parameters():
    with pytest.raises(ValueError):
        PotentialSpec(theta=0.0, theta0=1.0)
    with pytest.raises(ValueError):
        PotentialSpec(theta=2.0, theta0=1.0)


def test_mobility_kinds(rng):
    s = rng.uniform(-1.0, 1.0, 17)
    const = MobilitySpec(kind="constant", value=1.7, m_lower=1.7, m_upper=1.7)
    assert np.allclose(mob_eval(const, s), 1.7)
    assert np.allclose(mob_deriv(const, s), 0.0)

    poly = MobilitySpec(kind="polynomial", coeffs=(1.0, 0.5, -0.25), m_lower=0.2, m_upper=2.0)
    expected = 1.0 + 0.5 * s - 0.25 * s * s
    assert np.allclose(mob_eval(poly, s), expected, atol=1e-14)
    assert np.allclose(mob_deriv(poly, s), 0.5 - 0.5 * s, atol=1e-14)

    grid = np.linspace(-1.0, 1.0, 9)
    tab = MobilitySpec(
        kind="tabulated", table_s=tuple(grid), table_m=tuple(1.0 + 0.5 * grid),
        m_lower=0.5, m_upper=1.5,
    )
    assert np.allclose(mob_eval(tab, grid), 1.0 + 0.5 * grid, atol=1e-14)
    assert np.allclose(mob_eval(tab, s), 1.0 + 0.5 * s, atol=1e-12)


def test_tabulated_requires_full_span():
    grid = np.linspace(-0.5, 1.0, 7)
    with pytest.raises(FormatError):
        MobilitySpec(
            kind="tabulated", table_s=tuple(grid), table_m=tuple(np.ones(7)),
            m_lower=1.0, m_upper=1.0,
        )


def test_mobility_table_loader(tmp_path):
    path = tmp_path / "mob.csv"
    grid = np.linspace(-1.0, 1.0, 11)
    lines = ["s,m"] + [f"{si},{1.0 + 0.25 * si * si}" for si in grid]
    path.write_text("\n".join(lines) + "\n")
    spec = load_mobility_table(str(path), 1.0, 1.25)
    assert mob_eval(spec, 0.0) == pytest.approx(1.0)
    assert mob_eval(spec, 1.0) == pytest.approx(1.25)

    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n")
    with pytest.raises(FormatError):
        load_mobility_table(str(bad), 0.5, 2.0)


def test_mollified_mobility():
    base = MobilitySpec(kind="polynomial", coeffs=(1.0, 0.5), m_lower=0.4, m_upper=1.6)
    s = np.linspace(-1.0, 1.0, 401)
    errs = []
    for k in (4, 16, 64):
        moll = regularize_mobility(base, k)
        vals = mob_eval(moll, s)
        assert np.all(vals >= base.m_lower - 1e-9)
        assert np.all(vals <= base.m_upper + 1e-9)
        errs.append(np.max(np.abs(vals - mob_eval(base, s))))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01

    const = MobilitySpec(kind="constant", value=1.3, m_lower=1.3, m_upper=1.3)
    moll = regularize_mobility(const, 8)
    assert np.allclose(mob_eval(moll, s), 1.3, atol=1e-12)

    with pytest.raises(ValueError):
        regularize_mobility(base, 0)


def test_assumption_audit_defaults():
    report = validate_assumptions(
        PotentialSpec(), PotentialSpec(), MobilitySpec(), MobilitySpec(), alpha=1.0
    )
    assert report.ok
    assert report.convexity_floor_bulk == pytest.approx(1.0, rel=1e-6)
    k1, k2 = report.domination
    assert k1 == pytest.approx(1.0, abs=0.05)
    assert k2 >= 0.0
    c, gamma = report.curvature_growth
    assert gamma == 1.0 and np.isfinite(c)


def test_assumption_audit_dominated_pair():
    # a steeper bulk slope needs a proportionally larger domination factor
    report = validate_assumptions(
        PotentialSpec(theta=2.0, theta0=3.0),
        PotentialSpec(theta=1.0, theta0=2.0),
        MobilitySpec(),
        MobilitySpec(),
        alpha=1.0,
    )
    k1, _ = report.domination
    assert 2.0 <= k1 <= 2.05


def test_assumption_audit_flags_singular_over_regular():
    report = validate_assumptions(
        PotentialSpec(theta=1.0, theta0=2.0),
        PotentialSpec(kind="quartic", theta=1.0, theta0=2.0),
        MobilitySpec(),
        MobilitySpec(),
        alpha=1.0,
    )
    assert not report.ok
    assert any("dominated" in msg for msg in report.messages)
