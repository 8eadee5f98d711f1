import itertools
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import productform as pf
from productform.errors import (BestEffortIncomplete, DegenerateBasis, DegenerateDiscriminant, NoBracket,
                                NotSymmetric)
from productform.model import generating_functions
from productform.spectral import (SignVector, aggregate, beta_i, build_basis, dedup_roots, elementary_symmetric,
                                  product_polynomial, root_function, roots_k1, roots_symmetric, sign_vectors)


def _bisect_200(f, lo, hi):
    mp.mp.prec = 200
    lo, hi = mp.mpf(lo), mp.mpf(hi)
    flo = f(lo)
    for _ in range(400):
        mid = (lo + hi) / 2
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return float((lo + hi) / 2)


# c = 1, lambda = 1, mu = 3: A = 3z, B = C = 1, D = 3z^2, so disc = 36 z^3, R = 2 - 8z
@pytest.mark.parametrize("x", [1, -1])
def test_single_server_root_against_high_precision(x):
    spec = pf.erlang2_hetero(1.0, 3.0)
    rec = roots_k1(generating_functions(spec), SignVector((x,)))
    ref = _bisect_200(lambda z: x * 6 * z ** mp.mpf(1.5) + 2 - 8 * z, 1e-30, 1 - mp.mpf(10) ** -9)
    assert abs(rec.beta0 - ref) < 1e-12


def test_single_server_root_values():
    gf = generating_functions(pf.erlang2_hetero(1.0, 3.0))
    plus = roots_k1(gf, SignVector((1,))).beta0.real
    minus = roots_k1(gf, SignVector((-1,))).beta0.real
    assert plus == pytest.approx(((1 + math.sqrt(13)) / 6) ** 2, abs=1e-13)
    # the 0.19 root solves 3 t^3 + 4 t^2 - 1 = 0 with t^2 = beta0
    t = math.sqrt(minus)
    assert abs(3 * t**3 + 4 * t**2 - 1) < 1e-12
    assert minus == pytest.approx(0.19, abs=0.005)


def test_root_function_endpoints(sweep):
    for spec in sweep:
        gf = generating_functions(spec)
        h0 = sum(gf.B[i][0] + gf.C[i][0] for i in range(spec.c))
        for sv in sign_vectors(spec.c):
            assert root_function(gf, sv, 0.0).real == pytest.approx(h0, rel=1e-14)
        allplus = SignVector((1,) * spec.c)
        assert abs(root_function(gf, allplus, 1.0)) <= 1e-12 * float(np.max(gf.S))


def test_no_bracket_when_unstable():
    gf = generating_functions(pf.erlang2_hetero(5.0, [1.5, 2.5]))
    with pytest.raises(NoBracket):
        roots_k1(gf, SignVector((1, 1)))


def test_degenerate_batch_squared_polynomial(degen):
    # |eta| = 1: R^2 - disc = 1 - 18 z^2 + 65 z^4 - 48 z^5, with z = 1 removed
    hand = np.roots([-48, 65, 0, -18, 0, 1])
    hand = sorted(z.real for z in hand if abs(z) < 1 - 1e-9)
    gf = generating_functions(degen)
    recs = roots_symmetric(gf, 1.0, strict=False)
    got = sorted(r.beta0.real for r in recs)
    assert np.allclose(got, hand, atol=1e-9)
    assert np.allclose(got, [-1 / 3, -0.3189, 0.2639, 0.7425], atol=5e-4)


def test_degenerate_batch_eta_zero(degen):
    recs = roots_symmetric(generating_functions(degen), 0.0, strict=False)
    assert sorted(r.beta0.real for r in recs) == pytest.approx([-1 / 3, 1 / 3], abs=1e-12)
    assert all(r.multiplicity == 2 for r in recs)


def test_degenerate_batch_strict_raises(degen):
    with pytest.raises(DegenerateDiscriminant) as info:
        roots_symmetric(generating_functions(degen), 1.0)
    assert info.value.beta0 == pytest.approx(-1 / 3, abs=1e-6)


def test_degenerate_batch_sign_assignment(degen):
    recs = roots_symmetric(generating_functions(degen), -1.0, strict=False)
    by_root = {round(r.beta0.real, 4): set(r.solves) for r in recs}
    # eta = -1 is x = (1, 1)
    assert by_root[0.7425] == {-1.0}
    assert by_root[-0.3189] == {1.0} and by_root[0.2639] == {1.0}
    assert by_root[-0.3333] == {-1.0, 1.0}


def test_dedup_degenerate_batch(degen):
    gf = generating_functions(degen)
    recs = [r for e in (1.0, 0.0, -1.0) for r in roots_symmetric(gf, e, strict=False)]
    uniq = dedup_roots(recs, 2, 2)
    assert len(uniq) == 6
    vals = sorted(round(u.beta0.real, 2) for u in uniq)
    assert vals == [-0.33, -0.33, -0.32, 0.26, 0.33, 0.74]
    # duplicated input gives the same result
    again = dedup_roots(recs + recs, 2, 2)
    assert [u.beta0 for u in again] == [u.beta0 for u in uniq]


def test_dedup_single_server():
    gf = generating_functions(pf.erlang2_hetero(1.0, 3.0))
    recs = roots_symmetric(gf, 1.0) + roots_symmetric(gf, -1.0)
    assert len(dedup_roots(recs, 1, 1)) == 2


def test_eta_validation(degen):
    with pytest.raises(ValueError):
        roots_symmetric(generating_functions(degen), 0.5)


def test_roots_symmetric_needs_identical_planes(erlang):
    with pytest.raises(NotSymmetric):
        roots_symmetric(generating_functions(erlang), 1.0)


@pytest.mark.parametrize("b0,x,expect", [
    (0.74248, (1, 1), (3.77, 3.77)),
    (1 / 3, (-1, 1), (-1.24, 7.24)),
    (-1 / 3, (1, -1), (-3.0, -3.0)),
    (-1 / 3, (-1, -1), (-3.0, -3.0)),
])
def test_degenerate_batch_betas(degen, b0, x, expect):
    gf = generating_functions(degen)
    rec = min((r for e in (1.0, 0.0) for r in roots_symmetric(gf, e, strict=False)),
              key=lambda r: abs(r.beta0 - b0))
    form = beta_i(gf, rec.beta0, SignVector(x))
    assert np.allclose(np.real(form.betas), expect, atol=5e-3)


def test_erlang_four_forms(erlang):
    basis = build_basis(erlang)
    assert basis.mode == "k1"
    assert len(basis.forms) == 4
    assert {f.signs.x for f in basis.forms} == set(itertools.product((1, -1), repeat=2))


def test_degenerate_batch_degenerate(degen_basis):
    exc = degen_basis
    assert exc.n_distinct == 6 and exc.expected == 8
    assert len(exc.offending_roots) == 1
    assert abs(exc.offending_roots[0] + 1 / 3) < 1e-6
    assert exc.basis.degenerate


@pytest.mark.parametrize("K", [1, 2, 3])
@pytest.mark.parametrize("c", [1, 2, 3])
def test_erlang_symmetric_never_degenerate(K, c):
    spec = pf.hypo2_batch(c, [0.4 / K] * K, 2.0, 2.0)
    basis = build_basis(spec)
    assert len(basis.forms) == 2**c * K
    assert len(basis.unique_beta0) == K * (c + 1)
    assert not any(r.degenerate for r in basis.records)


def _check_conjugates(basis):
    vecs = [np.array([f.beta0, *f.betas]) for f in basis.forms]
    for v in vecs:
        assert min(np.max(np.abs(w - v.conj())) for w in vecs) < 1e-8


def test_conjugate_closure(sweep):
    for spec in sweep:
        _check_conjugates(build_basis(spec))


def test_roots_shared_across_eta(batch):
    gf = generating_functions(batch)
    key = (lambda z: (z.real, z.imag))
    for e in (1.0, 0.0):
        a = sorted((r.beta0 for r in roots_symmetric(gf, e)), key=key)
        b = sorted((r.beta0 for r in roots_symmetric(gf, -e)), key=key)
        assert np.allclose(a, b, atol=1e-8)


def test_k1_all_plus_is_maximal(sweep):
    for spec in sweep:
        if spec.K != 1:
            continue
        basis = build_basis(spec)
        top = max(basis.forms, key=lambda f: f.beta0.real)
        assert top.signs.x == (1,) * spec.c
        others = [f.beta0.real for f in basis.forms if f is not top]
        assert all(top.beta0.real > o for o in others)


def test_aggregate_breakdown(breakdown):
    agg = aggregate(build_basis(breakdown))
    assert len(agg.beta0) == 3
    assert np.allclose(agg.omega[:, 0], 1.0)


def test_aggregate_rejects_nonsymmetric(erlang):
    with pytest.raises(NotSymmetric):
        aggregate(build_basis(erlang))


def test_omega_small_cases():
    assert np.allclose(elementary_symmetric([-3.0, -3.0]), [1, -6, 9])
    for c in range(1, 8):
        assert np.allclose(elementary_symmetric([1.0] * c), [math.comb(c, m) for m in range(c + 1)])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False), min_size=1,
                max_size=10))
def test_omega_matches_subsets(values):
    e = elementary_symmetric(values)
    for m in range(len(values) + 1):
        direct = sum(np.prod(s) if s else 1.0 for s in itertools.combinations(values, m))
        assert abs(e[m] - direct) <= 1e-12 * max(1.0, sum(np.prod(np.abs(s)) if s else 1.0
                                                        for s in itertools.combinations(values, m)))


def test_best_effort_nonsymmetric_k2():
    spec = pf.hypo2_batch(2, [0.3, 0.3], [2.0, 2.5], [3.0, 3.5])
    try:
        basis = build_basis(spec)
    except BestEffortIncomplete as exc:  # allowed outcome, but must report counts
        assert exc.found < exc.expected
        return
    assert basis.mode == "best-effort"
    assert len(basis.forms) == 8
    assert max(f.residual_inner for f in basis.forms) < 1e-9


def test_product_polynomial_has_k1_roots(erlang):
    gf = generating_functions(erlang)
    poly = product_polynomial(gf)
    for f in build_basis(erlang).forms:
        assert abs(np.polynomial.polynomial.polyval(f.beta0, poly)) < 1e-8 * np.abs(poly).sum()


def test_independence_condition_finite(batch):
    basis = build_basis(batch)
    assert np.isfinite(basis.independence_condition)


def test_forms_sorted(batch):
    forms = build_basis(batch).forms
    keys = [(round(f.beta0.real, 12), round(f.beta0.imag, 12), f.signs.x) for f in forms]
    assert keys == sorted(keys)


def test_degenerate_basis_type(degen):
    with pytest.raises(DegenerateBasis):
        build_basis(degen)
