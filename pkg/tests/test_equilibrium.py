import dataclasses
import itertools
import json
import math

import numpy as np
import pytest

from productform.config import DEFAULT_TOL
from productform.equilibrium import (assemble_boundary, evaluate_levels, evaluate_p, evaluate_p_aggregated,
                                     inner_residual, marginal, solution_document, solve_boundary,
                                     solve_equilibrium)
from productform.errors import (DegenerateBasisInput, NotSymmetric, ResidualCheckFailed, SingularSystem,
                                StateOutOfDomain)
from productform.model import is_w_state
from productform.spectral import beta_i, build_basis
from productform.model import generating_functions


def _max_dev(sol, pi, levels=20):
    return max(abs(evaluate_p(sol, s) - p) for s, p in pi.items() if not is_w_state(s) or s[0] <= levels)


def test_unknown_count(erlang, breakdown, batch):
    for spec in (erlang, breakdown, batch):
        sys = assemble_boundary(spec, build_basis(spec))
        nv = len(spec.boundary.v_states)
        assert len(sys.labels) == nv + 2**spec.c * spec.K
        assert sys.matrix.shape == (len(sys.labels), len(sys.labels))
        assert len(sys.states) == nv + 2**spec.c * spec.K


def test_breakdown_full_rank(breakdown):
    sys = assemble_boundary(breakdown, build_basis(breakdown))
    M, _ = sys.system()
    assert np.linalg.matrix_rank(M) == M.shape[0]


def test_replaced_row_is_smallest_state(erlang):
    sys = assemble_boundary(erlang, build_basis(erlang))
    assert sys.states[sys.replaced_row] == min(erlang.boundary.v_states)


def test_erlang_matches_oracle(sol_erlang, erlang, oracle_pi):
    assert _max_dev(sol_erlang, oracle_pi(erlang)) < 1e-8


def test_erlang_single_state(sol_erlang, erlang, oracle_pi):
    assert abs(evaluate_p(sol_erlang, (5, 1, 0)) - oracle_pi(erlang)[(5, 1, 0)]) < 1e-8


@pytest.mark.parametrize("name", ["sol_erlang", "sol_breakdown", "sol_batch"])
def test_normalization_and_omitted_residual(name, request):
    sol = request.getfixturevalue(name)
    assert abs(sol.normalization - 1.0) < 1e-10
    assert sol.omitted_residual < 1e-9
    # recount: boundary mass plus a long level sum
    levels = evaluate_levels(sol, np.arange(0, 2000))
    assert abs(sum(sol.boundary_probs.values()) + levels.sum() - 1.0) < 1e-10


@pytest.mark.parametrize("name", ["sol_erlang", "sol_breakdown", "sol_batch"])
def test_imaginary_parts_vanish(name, request):
    sol = request.getfixturevalue(name)
    for n0 in range(0, 30):
        for bits in itertools.product((0, 1), repeat=sol.spec.c):
            val = sum(a * f.value((n0, *bits)) for a, f in zip(sol.alphas, sol.basis.forms))
            assert abs(val.imag) < 1e-12


@pytest.mark.parametrize("name", ["sol_erlang", "sol_breakdown", "sol_batch"])
def test_nonnegative(name, request):
    sol = request.getfixturevalue(name)
    assert evaluate_levels(sol, np.arange(0, 101)).min() >= -1e-10
    assert min(sol.boundary_probs.values()) >= -1e-10


@pytest.mark.parametrize("name", ["sol_erlang", "sol_breakdown", "sol_batch"])
def test_tail_decay(name, request):
    sol = request.getfixturevalue(name)
    lv = evaluate_levels(sol, np.array([30, 31, 60, 61])).sum(axis=1)
    target = -math.log(sol.tail_rate())
    assert abs(math.log(lv[2]) - math.log(lv[3]) - target) < 1e-4
    # the level ratio is already close at 30 and closer at 60
    assert abs(math.log(lv[2]) - math.log(lv[3]) - target) <= abs(math.log(lv[0]) - math.log(lv[1]) - target) + 1e-12


@pytest.mark.parametrize("name", ["sol_erlang", "sol_breakdown", "sol_batch"])
def test_inner_balance(name, request):
    sol = request.getfixturevalue(name)
    rng = np.random.default_rng(7)
    for _ in range(50):
        state = (int(rng.integers(sol.spec.K, 40)), *(int(b) for b in rng.integers(0, 2, sol.spec.c)))
        assert inner_residual(sol, state) < 1e-9


@pytest.mark.parametrize("name", ["sol_breakdown", "sol_batch"])
def test_aggregation_consistency(name, request):
    sol = request.getfixturevalue(name)
    for n0 in range(25):
        for m in range(sol.spec.c + 1):
            assert abs(evaluate_p_aggregated(sol, n0, m) - marginal(sol, n0, m)) < 1e-10


def test_aggregated_m0_uses_unit_omega(sol_breakdown):
    assert np.allclose(sol_breakdown.aggregated.omega[:, 0], 1.0)
    val = sum(g * b for g, b in zip(sol_breakdown.gammas, sol_breakdown.aggregated.beta0))
    assert evaluate_p_aggregated(sol_breakdown, 1, 0) == pytest.approx(val.real, abs=1e-15)


def test_breakdown_aggregated_vs_oracle(sol_breakdown, breakdown, oracle_pi):
    pi = oracle_pi(breakdown)
    for n0 in range(21):
        for m in range(3):
            ref = sum(p for s, p in pi.items() if is_w_state(s) and s[0] == n0 and sum(s[1:]) == m)
            assert abs(evaluate_p_aggregated(sol_breakdown, n0, m) - ref) < 1e-8


def test_aggregated_needs_symmetry(sol_erlang):
    with pytest.raises(NotSymmetric):
        evaluate_p_aggregated(sol_erlang, 0, 0)


@pytest.mark.parametrize("bad", [(-1, 0, 0), (0, 2, 0), (0, 1), (0.5, 0, 0), "v:nothing"])
def test_state_out_of_domain(sol_erlang, bad):
    with pytest.raises(StateOutOfDomain):
        evaluate_p(sol_erlang, bad)


def test_boundary_state_lookup(sol_erlang):
    label = sol_erlang.spec.boundary.v_states[0]
    assert evaluate_p(sol_erlang, label) == sol_erlang.boundary_probs[label]


def test_degenerate_basis_rejected(degen, degen_basis):
    with pytest.raises(DegenerateBasisInput):
        assemble_boundary(degen, degen_basis.basis)


def test_singular_system_reported(erlang):
    tol = dataclasses.replace(DEFAULT_TOL, cond_max=1.0)
    sys = assemble_boundary(erlang, build_basis(erlang))
    with pytest.raises(SingularSystem) as info:
        solve_boundary(sys, tol)
    assert info.value.cond > 1.0


def test_wrong_basis_fails_omitted_check(erlang):
    basis = build_basis(erlang)
    gf = generating_functions(erlang)
    # shift the roots off the root equation; the forms stay valid quadratics
    # but no longer balance the interior, so the spare boundary equation breaks
    forms = tuple(beta_i(gf, f.beta0 * 0.97, f.signs) for f in basis.forms)
    fake = dataclasses.replace(basis, forms=forms)
    with pytest.raises(ResidualCheckFailed):
        solve_boundary(assemble_boundary(erlang, fake))


def test_solution_document_is_finite_json(sol_batch):
    doc = solution_document(sol_batch, 10)
    text = json.dumps(doc)
    assert "NaN" not in text and "Infinity" not in text
    assert len(doc["table"]) == 11 and len(doc["aggregated"]) == 6


def test_sweep_solutions(sweep):
    for spec in sweep[:20]:
        sol = solve_equilibrium(spec)
        assert abs(sol.normalization - 1) < 1e-10
        assert sol.omitted_residual < 1e-9
