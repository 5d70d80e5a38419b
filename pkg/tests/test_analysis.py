import csv
import io
import json
from fractions import Fraction

import mpmath
import pytest

from dreidel import analysis
from dreidel.analysis import (
    REFERENCE_FULL, REFERENCE_SIMPLIFIED, ModelCoefficients, difference_table, duration_report,
    error_profile, eval_model, exact_least_squares, mp_least_squares, spins_lookup,
)
from dreidel.arith import AffineExpr, PolyABP, to_bigfloat
from dreidel.chain import GameState, expected_spins, to_fraction
from dreidel.errors import EmptyDomainError
from dreidel.games import FULL

F = Fraction
c2 = AffineExpr.unknown("c2")


def test_first_differences():
    lookup = spins_lookup("simplified")
    da = difference_table(lookup, "a", {"p": 2, "b": 2}, start=1, count=2)
    assert da.values == [F(1), F(6, 5)]
    assert da.indices() == [1, 2]
    h = difference_table(lookup, "h", {"a": 1, "b": 2}, start=2, count=1)
    assert h.values == [F(1, 4)]
    with pytest.raises(ValueError):
        difference_table(lookup, "z", {}, 1, 1)
    with pytest.raises(EmptyDomainError):
        difference_table(lookup, "a", {"p": 2, "b": 2}, 1, 0)


def test_second_differences_flatten():
    lookup = spins_lookup("simplified")
    d2 = difference_table(lookup, "a2", {"p": 2, "b": 10}, start=10, count=16)
    # The entry at a = 10 is about -2.2e-4; from a = 11 on they are below 1e-4.
    assert F(2, 10**4) < abs(d2.values[0]) < F(3, 10**4)
    assert all(abs(v) < F(1, 10**4) for v in d2.values[1:])


def test_difference_error_bounds():
    t = difference_table(lambda a, p, b: F(a), "b2", {"a": 1, "p": 2}, 1, 3, value_error=F(1, 10))
    assert t.values == [0, 0, 0] and t.error_bound == F(4, 10)


def test_recurrence_derivation():
    d = analysis.derive_constants_recurrence()
    assert d.solution["c3"] == AffineExpr(F(12, 19))
    assert d.solution["s0"] == c2 - F(18, 19)
    assert d.solution["c1"] == c2 + F(2, 19)
    back = d.residual.substitute_unknowns(d.solution.assignment)
    assert back.is_zero


def test_key_and_recurrence_agree():
    rec = analysis.derive_constants_recurrence().solution
    cases = analysis.verify_conjecture_in_key()
    assert set(cases) == {"a>=b+1", "a<=b"}
    for case in cases.values():
        assert case.solution["c3"] == rec["c3"]
        assert case.solution["c1"] == rec["c1"]
        assert {"c2", "c0"} <= set(case.solution.free)


def test_eval_model_pot_two_identity():
    for coeffs in (REFERENCE_SIMPLIFIED, analysis.simplified_model(
            to_bigfloat(REFERENCE_SIMPLIFIED.c2), to_bigfloat(REFERENCE_SIMPLIFIED.c0))):
        for a, b in [(1, 1), (7, 3), (40, 55)]:
            assert eval_model(coeffs, a, b, p=2) == eval_model(coeffs, a, b)
    with pytest.raises(ValueError):
        eval_model(REFERENCE_FULL, 3, 3, p=3)


def test_full_model_at_nine():
    assert abs(eval_model(REFERENCE_FULL, 9, 9) - F("168.61")) < F(1, 100)


def test_exact_least_squares():
    X = [[1, x] for x in range(5)]
    y = [F(3) + F(1, 7) * x for x in range(5)]
    assert exact_least_squares(X, y) == ([F(3), F(1, 7)], False)
    # Two identical columns: minimal-norm splits the weight evenly.
    sol, deficient = exact_least_squares([[1, 1], [1, 1]], [F(2), F(2)])
    assert deficient and sol == [F(1), F(1)]
    sol, deficient = mp_least_squares([[1, 1], [1, 1]], [2, 2], 256)
    assert deficient and all(abs(v - 1) < mpmath.mpf(10) ** -60 for v in sol)


def test_degenerate_one_point_fit():
    fit = analysis.fit_simplified(30, 30, 30, 30)
    assert fit.points == 1 and fit.rank_deficient
    # Exact interpolation; the reported residual is only 256-bit rounding.
    assert fit.values[(30, 30)] == eval_model(fit.coefficients, 30, 30)
    assert fit.residual_max < mpmath.mpf(2) ** -240


def test_empty_grid():
    with pytest.raises(EmptyDomainError):
        analysis.fit_simplified(5, 4, 5, 4)


def test_simplified_fit_residual(simplified_fit):
    assert simplified_fit.mode == "exact" and simplified_fit.points == 31 * 31
    assert simplified_fit.residual_max < mpmath.mpf(10) ** -10
    c = simplified_fit.coefficients
    assert c.c3 == F(12, 19) and c.c1 - c.c2 == F(2, 19)


def test_fit_serialization(simplified_fit):
    data = json.loads(simplified_fit.to_json(), parse_constant=pytest.fail)
    assert data["grid"] == {"a_min": 30, "a_max": 60, "b_min": 30, "b_max": 60}
    assert data["coefficients"]["c2"].startswith("-0.30463656")
    rows = list(csv.reader(io.StringIO(simplified_fit.to_csv())))
    assert rows[0] == ["a", "b", "value", "model", "epsilon"] and len(rows) == 1 + 31 * 31


def test_full_fit_predicts(full_fit):
    q = expected_spins(FULL, GameState(35, 2, 22), "hiprec")
    assert abs(q - eval_model(full_fit.coefficients, 35, 22)) < mpmath.mpf(10) ** -10
    assert not full_fit.rank_deficient


def test_error_profile_small_sizes():
    prof = error_profile("simplified", REFERENCE_SIMPLIFIED, [(1, 1)])
    eps = prof.epsilon[(1, 1)]
    assert F(1, 10) < abs(eps) < 10


def test_diagonal_decay_rate():
    prof = error_profile("simplified", REFERENCE_SIMPLIFIED, diagonal=(10, 20))
    assert sorted(prof.ratios) == list(range(10, 21))
    assert F(1, 8) <= to_fraction(prof.mean_ratio()) <= F(1, 2)
    # Individual ratios wander well outside the band; see the notes.
    assert prof.within_band is False


def test_pot_model_error_shrinks(simplified_fit):
    coeffs = simplified_fit.coefficients
    lookup = spins_lookup("simplified", "hiprec")
    errs = []
    with mpmath.workprec(256):
        for k in range(5, 29):
            errs.append(abs(lookup(k, 3, k) - to_bigfloat(eval_model(coeffs, k, k, p=3))))
    block_max = [max(errs[i:i + 4]) for i in range(0, len(errs), 4)]
    assert all(x > y for x, y in zip(block_max, block_max[1:]))


def test_durations():
    assert abs(to_fraction(duration_report(2, 10)) - F(2, 5)) < F(1, 10**28)
    with pytest.raises(ValueError):
        duration_report(1)


def test_model_coefficients_dict():
    d = REFERENCE_SIMPLIFIED.to_dict(12)
    assert set(d) == {"c3", "c2", "c1", "c0", "s2", "s1", "s0"}
    assert isinstance(ModelCoefficients("full", 1, 2, 3, 4).items(), list)
