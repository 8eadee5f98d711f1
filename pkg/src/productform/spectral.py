"""Eigenvalues ``beta0`` and the product-form basis.

Each plane ``i`` contributes, for a trial ``beta0``, a quadratic in the
factor ``beta_i``; its two solutions are selected by a sign ``x_i``. The
level eigenvalue ``beta0`` then solves

    sum_i ( x_i sqrt(disc_i(beta0)) + R_i(beta0) ) = 0,

with ``disc_i = F_i^2 + 4 A_i D_i`` and ``R_i = B_i + C_i - beta0^K S_i``.
Three routes produce roots of this equation inside the unit disc:

* ``K = 1``: one real root in (0, 1) per sign vector, found by bracketing.
* symmetric planes: the equation only depends on ``eta = -sum(x)/c``;
  squaring gives a polynomial with ``2K`` roots in the disc per class.
* everything else: best effort, via the polynomial obtained by multiplying
  the equation over all sign vectors.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

from .config import DEFAULT_TOL, Tolerances
from .errors import (AssumptionViolation, BestEffortIncomplete, DegenerateBasis,
                     DegenerateDiscriminant, DVanishes, MultipleRoots, NoBracket,
                     NotSymmetric, ResidualTooLarge, RootCountMismatch, UniqueCountMismatch)
from .model import GeneratingFunctions, ProcessSpec, check_ergodicity, generating_functions


@dataclass(frozen=True)
class SignVector:
    x: tuple

    @property
    def c(self) -> int:
        return len(self.x)

    @property
    def total(self) -> int:
        return int(sum(self.x))

    @property
    def eta(self) -> float:
        return -self.total / self.c

    @property
    def plus(self) -> int:
        return sum(1 for v in self.x if v > 0)


def sign_vectors(c: int):
    """All ``2^c`` sign vectors, first coordinate varying fastest."""
    return [SignVector(tuple(reversed(p))) for p in itertools.product((1, -1), repeat=c)]


def _sum_of_eta(eta: float, c: int) -> int:
    s = int(round(-eta * c))
    if abs(-s / c - eta) > 1e-12 or (s + c) % 2 or abs(s) > c:
        raise ValueError(f"eta={eta} is not of the form -sum(x)/c for c={c}")
    return s


@dataclass(frozen=True)
class RootRecord:
    beta0: complex
    eta: float
    residual_unsquared: float
    residual_squared: float
    multiplicity: int = 1
    signs: SignVector | None = None
    solves: tuple = ()  # eta values whose unsquared equation holds at beta0
    degenerate: bool = False
    review: bool = False


@dataclass(frozen=True)
class ProductForm:
    beta0: complex
    betas: tuple
    signs: SignVector
    discriminants: tuple
    root_index: int = -1
    residual_coeff: float = 0.0
    residual_inner: float = 0.0

    def value(self, state) -> complex:
        out = self.beta0 ** state[0]
        for b, n in zip(self.betas, state[1:]):
            if n:
                out *= b
        return out

    def total_mass(self) -> complex:
        """Sum of the form over all of W."""
        return complex(np.prod([1.0 + b for b in self.betas]) / (1.0 - self.beta0))


@dataclass(frozen=True)
class ProductBasis:
    c: int
    K: int
    forms: tuple
    unique_beta0: tuple
    records: tuple
    mode: str  # "k1", "symmetric" or "best-effort"
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)
    independence_condition: float = float("nan")

    @property
    def symmetric(self) -> bool:
        return self.mode == "symmetric"

    @property
    def max_root(self) -> float:
        return max(abs(f.beta0) for f in self.forms)


@dataclass(frozen=True)
class AggregatedBasis:
    """One entry ``(beta0, omega)`` per permutation class of forms."""

    beta0: tuple
    omega: np.ndarray  # shape (n_entries, c + 1)
    members: tuple  # form indices merged into each entry


# ---------------------------------------------------------------------------
# helpers


def _scale(gf: GeneratingFunctions) -> float:
    return float(np.max(gf.S))


def _rel_poly_residual(coef, z) -> float:
    num = abs(P.polyval(z, coef))
    den = P.polyval(abs(z), np.abs(coef))
    return float(num / den) if den > 0 else float(num)


def _trim(coef, rel=1e-14):
    coef = np.asarray(coef, dtype=float)
    top = np.max(np.abs(coef))
    n = coef.size
    while n > 1 and abs(coef[n - 1]) <= rel * top:
        n -= 1
    return coef[:n]


def _polish(coef, z, iters=30):
    d = P.polyder(coef)
    best, best_r = z, abs(P.polyval(z, coef))
    for _ in range(iters):
        dv = P.polyval(z, d)
        if dv == 0 or best_r == 0:
            break
        z = z - P.polyval(z, coef) / dv
        r = abs(P.polyval(z, coef))
        if r < best_r:
            best, best_r = z, r
        elif r > 2 * best_r:
            break
    return complex(best)


def _conj_clean(roots, tol=1e-12):
    """Snap near-real roots to the real axis and make pairs exact conjugates."""
    out = [complex(z.real, 0.0) if abs(z.imag) <= tol * max(1.0, abs(z)) else complex(z) for z in roots]
    free = [i for i, z in enumerate(out) if z.imag < 0]
    for i, z in enumerate(out):
        if z.imag > 0 and free:
            j = min(free, key=lambda j: abs(out[j] - z.conjugate()))
            free.remove(j)
            out[j] = z.conjugate()
    return out


def _planes_identical(gf) -> bool:
    return all(np.array_equal(getattr(gf, n)[0], getattr(gf, n)[i]) for n in "ABCD" for i in range(gf.c))


def root_function(gf: GeneratingFunctions, signs: SignVector, z):
    """``sum_i x_i sqrt(disc_i(z)) + R_i(z)`` with the principal square root."""
    z = np.asarray(z)
    total = np.zeros(z.shape, dtype=complex)
    for i, x in enumerate(signs.x):
        disc = P.polyval(z, gf.disc_poly(i)).astype(complex)
        total += x * np.sqrt(disc) + P.polyval(z, gf.R_poly(i))
    return total


def elementary_symmetric(values) -> np.ndarray:
    """Elementary symmetric polynomials ``e_0..e_n`` of ``values``.

    Expands ``prod_i (1 + v_i t)`` one factor at a time.
    """
    e = np.zeros(len(values) + 1, dtype=complex)
    e[0] = 1.0
    for v in values:
        e[1:] = e[1:] + v * e[:-1]
    return e


# ---------------------------------------------------------------------------
# root finding


def roots_k1(gf: GeneratingFunctions, signs: SignVector, tol: Tolerances = DEFAULT_TOL) -> RootRecord:
    """The unique root in (0, 1) for one sign vector when ``K = 1``.

    The grid stops at ``1 - 1e-9``: for the all-plus vector the root
    function vanishes at 1 and is negative just below it.
    """
    if gf.K != 1:
        raise ValueError("roots_k1 requires K = 1")

    def h(z):
        return float(root_function(gf, signs, z).real)

    n = 1024
    for _ in range(2):
        grid = np.linspace(0.0, 1.0 - 1e-9, n)
        vals = root_function(gf, signs, grid).real
        changes = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        if len(changes) == 1:
            break
        n *= 4
    if len(changes) == 0:
        raise NoBracket(f"no sign change in (0, 1) for signs {signs.x}")
    if len(changes) > 1:
        raise MultipleRoots(f"{len(changes)} sign changes in (0, 1) for signs {signs.x}")
    i = changes[0]
    root = brentq(h, grid[i], grid[i + 1], xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    scale = _scale(gf)
    res = abs(h(root)) / scale
    if res > tol.root_tol:
        raise ResidualTooLarge(f"root {root} for signs {signs.x} has residual {res:.3e}")
    rsum = sum(P.polyval(root, gf.R_poly(i)) for i in range(gf.c))
    ssum = sum(x * np.sqrt(P.polyval(root, gf.disc_poly(i))) for i, x in enumerate(signs.x))
    return RootRecord(complex(root), signs.eta, res, float(abs(rsum**2 - ssum**2)) / scale**2,
                      signs=signs, solves=(signs.eta,))


def roots_symmetric(gf: GeneratingFunctions, eta: float, tol: Tolerances = DEFAULT_TOL,
                    strict: bool = True) -> list:
    """Roots in the unit disc of the squared symmetric equation for ``eta``.

    The squared polynomial ``R^2 - eta^2 disc`` is the same for ``eta`` and
    ``-eta``; each record notes which of the two unsquared equations
    actually holds (``solves``). For ``eta = 0`` the polynomial is ``R^2``
    and the roots of ``R`` are returned with multiplicity 2.

    With ``strict=False`` degenerate roots are flagged instead of raised.
    """
    if not _planes_identical(gf):
        raise NotSymmetric("roots_symmetric needs identical planes")
    c, K = gf.c, gf.K
    s = _sum_of_eta(eta, c)
    eta = -s / c
    R, disc = gf.R_poly(0), gf.disc_poly(0)
    if s == 0:
        base, mult = _trim(R), 2
    else:
        base, mult = _trim(P.polysub(P.polymul(R, R), eta**2 * disc)), 1
    roots = _conj_clean([_polish(base, z) for z in P.polyroots(base)])
    if abs(s) == c:
        # z = 1 always solves the |eta| = 1 equation; it is not a disc root
        one = min(range(len(roots)), key=lambda j: abs(roots[j] - 1.0))
        if abs(roots[one] - 1.0) < 1e-6:
            roots.pop(one)
    scale = _scale(gf)
    records = []
    for z in sorted(roots, key=lambda z: (z.real, z.imag)):
        if abs(z) >= 1.0:
            continue
        review = abs(z) >= 1.0 - tol.unit_margin
        d = P.polyval(z, gf.D[0])
        dsc = P.polyval(z, disc)
        sq = np.sqrt(complex(dsc))
        r = P.polyval(z, R)
        res = {e: abs(e * sq - r) / scale for e in sorted({eta, -eta})}
        solves = tuple(e for e, v in res.items() if v < tol.form_tol)
        degenerate = abs(dsc) < tol.degen_tol * scale**2
        if strict and abs(d) < tol.degen_tol * scale and not review:
            raise DVanishes(z)
        if strict and degenerate and not review:
            raise DegenerateDiscriminant(z)
        records.append(RootRecord(z, eta, min(res.values()), _rel_poly_residual(base, z), mult,
                                  solves=solves, degenerate=bool(degenerate), review=bool(review)))
    inside = sum(r.multiplicity for r in records if not r.review)
    if inside != 2 * K:
        raise RootCountMismatch(2 * K, inside, f"eta={eta:g}")
    return records


def dedup_roots(records, c: int, K: int, tol: Tolerances = DEFAULT_TOL) -> list:
    """Merge the records of ``eta`` and ``-eta`` that share a root.

    Roots are only merged within one ``|eta|`` class; the merged record
    solves the union of the member equations.
    """
    groups: dict = {}
    for r in records:
        groups.setdefault(abs(_sum_of_eta(r.eta, c)), []).append(r)
    out = []
    for key in sorted(groups):
        merged: list = []
        for r in groups[key]:
            for j, m in enumerate(merged):
                if abs(m.beta0 - r.beta0) <= tol.dedup_tol * max(1.0, abs(r.beta0)):
                    solves = tuple(sorted(set(m.solves) | set(r.solves)))
                    merged[j] = RootRecord(m.beta0, abs(m.eta), min(m.residual_unsquared, r.residual_unsquared),
                                           min(m.residual_squared, r.residual_squared),
                                           max(m.multiplicity, r.multiplicity), None, solves,
                                           m.degenerate or r.degenerate, m.review and r.review)
                    break
            else:
                merged.append(RootRecord(r.beta0, abs(r.eta), r.residual_unsquared, r.residual_squared,
                                         r.multiplicity, None, tuple(sorted(r.solves)), r.degenerate, r.review))
        out += sorted(merged, key=lambda m: (m.beta0.real, m.beta0.imag))
    expected = K * (c + 1)
    if len(out) != expected:
        raise UniqueCountMismatch(expected, len(out))
    return out


def beta_i(gf: GeneratingFunctions, beta0: complex, signs: SignVector, tol: Tolerances = DEFAULT_TOL,
           root_index: int = -1) -> ProductForm:
    """The factors ``beta_1..beta_c`` of the form with level root ``beta0``.

    Each factor is the solution of its plane's quadratic picked out by the
    sign ``x_i`` under the principal square root. Raises ``DVanishes`` if
    ``D_i(beta0)`` is numerically zero and ``ResidualTooLarge`` if the
    quadratic is not satisfied to ``form_tol``.
    """
    K = gf.K
    scale = _scale(gf)
    z = complex(beta0)
    zK = z**K
    betas, discs, X, Y = [], [], [], []
    coeff_res = 0.0
    for i, x in enumerate(signs.x):
        A, B, C, D = (P.polyval(z, getattr(gf, n)[i]) for n in "ABCD")
        A1, B1, C1, D1 = (getattr(gf, n)[i].sum() for n in "ABCD")
        if abs(D) < tol.degen_tol * scale:
            raise DVanishes(z, i + 1)
        F = P.polyval(z, gf.F_poly(i))
        dsc = F * F + 4 * A * D
        b = (F + x * np.sqrt(complex(dsc))) / (2 * D)
        betas.append(complex(b))
        discs.append(complex(dsc))
        if b != 0:
            coeff_res = max(coeff_res, abs(A / b - B + C - D * b + zK * (A1 + B1 - C1 - D1)) / scale)
        X.append(B + D * b - zK * (A1 + B1))
        Y.append((A / b if b != 0 else np.inf) + C - zK * (C1 + D1))
    if not coeff_res <= tol.form_tol:
        raise ResidualTooLarge(f"quadratic residual {coeff_res:.3e} at beta0={z}")
    # full inner-equation residual over every setting of (n_1..n_c)
    X, Y = np.array(X), np.array(Y)
    inner = 0.0
    for bits in itertools.product((0, 1), repeat=len(X)):
        m = np.array(bits, dtype=bool)
        inner = max(inner, abs(X[~m].sum() + Y[m].sum()) / scale)
    return ProductForm(z, tuple(betas), signs, tuple(discs), root_index, float(coeff_res), float(inner))


# ---------------------------------------------------------------------------
# basis assembly


def _symmetric_forms(gf, tol):
    c, K = gf.c, gf.K
    records = []
    for p in range(c + 1):
        records += roots_symmetric(gf, (c - 2 * p) / c, tol, strict=False)
    unique = dedup_roots(records, c, K, tol)
    forms = []
    svs = sign_vectors(c)
    for idx, rec in enumerate(unique):
        if rec.review:
            continue
        for sv in svs:
            if not any(_sum_of_eta(e, c) == sv.total for e in rec.solves):
                continue
            form = beta_i(gf, rec.beta0, sv, tol, idx)
            if form.residual_inner < tol.form_tol:
                forms.append(form)
    return forms, unique


def _k1_forms(gf, tol):
    forms, recs = [], []
    for idx, sv in enumerate(sign_vectors(gf.c)):
        rec = roots_k1(gf, sv, tol)
        recs.append(rec)
        form = beta_i(gf, rec.beta0, sv, tol, idx)
        if form.residual_inner >= tol.form_tol:
            raise ResidualTooLarge(f"inner residual {form.residual_inner:.3e} for signs {sv.x}", form)
        forms.append(form)
    return forms, recs


def product_polynomial(gf: GeneratingFunctions) -> np.ndarray:
    """``prod_x sum_i (x_i sqrt(disc_i) + R_i)`` over all sign vectors.

    The product is even in every square root and hence a polynomial; its
    coefficients are recovered exactly (up to rounding) from samples on the
    unit circle by an FFT.
    """
    c = gf.c
    deg = 2**c * gf.degree + 2
    M = 1 << int(np.ceil(np.log2(2 * (deg + 1))))
    z = np.exp(2j * np.pi * np.arange(M) / M)
    R = sum(P.polyval(z, gf.R_poly(i)) for i in range(c))
    sq = [np.sqrt(P.polyval(z, gf.disc_poly(i)).astype(complex)) for i in range(c)]
    vals = np.ones(M, dtype=complex)
    for sv in sign_vectors(c):
        vals *= R + sum(x * s for x, s in zip(sv.x, sq))
    return _trim(np.fft.fft(vals).real / M)


def _newton_signed(gf, sv, z, iters=40):
    dpolys = [(gf.disc_poly(i), P.polyder(gf.disc_poly(i)), gf.R_poly(i), P.polyder(gf.R_poly(i)))
              for i in range(gf.c)]

    def g_and_dg(z):
        g = dg = 0j
        for x, (dsc, ddsc, R, dR) in zip(sv.x, dpolys):
            s = np.sqrt(complex(P.polyval(z, dsc)))
            g += x * s + P.polyval(z, R)
            dg += (x * P.polyval(z, ddsc) / (2 * s) if s != 0 else 0) + P.polyval(z, dR)
        return g, dg

    best = z
    best_g = abs(g_and_dg(z)[0])
    for _ in range(iters):
        g, dg = g_and_dg(z)
        if dg == 0 or g == 0:
            break
        z = z - g / dg
        gz = abs(g_and_dg(z)[0])
        if gz < best_g:
            best, best_g = z, gz
    return complex(best), best_g


def _best_effort_forms(gf, tol):
    scale = _scale(gf)
    poly = product_polynomial(gf)
    cands = _conj_clean([_polish(poly, z) for z in P.polyroots(poly)])
    cands = [z for z in cands if abs(z) < 1.0 - tol.unit_margin and abs(z - 1.0) > 1e-6]
    forms, recs = [], []
    for sv in sign_vectors(gf.c):
        for z0 in cands:
            z, g = _newton_signed(gf, sv, z0)
            if g / scale >= tol.root_tol * 1e3 or abs(z - z0) > 1e-6 or abs(z) >= 1.0:
                continue
            if any(abs(f.beta0 - z) < tol.dedup_tol and f.signs == sv for f in forms):
                continue
            dsc = max(abs(complex(P.polyval(z, gf.disc_poly(i)))) for i in range(gf.c))
            recs.append(RootRecord(z, sv.eta, g / scale, _rel_poly_residual(poly, z), signs=sv,
                                   solves=(sv.eta,), degenerate=dsc < tol.degen_tol * scale**2))
            form = beta_i(gf, z, sv, tol, len(recs) - 1)
            if form.residual_inner < tol.form_tol:
                forms.append(form)
    return forms, recs


def _distinct_forms(forms, tol):
    reps: list = []
    for f in forms:
        vec = np.array([f.beta0, *f.betas])
        if not any(np.max(np.abs(vec - r)) <= tol.dedup_tol * max(1.0, np.max(np.abs(r))) for r in reps):
            reps.append(vec)
    return len(reps)


def independence_condition(forms, c: int) -> float:
    """Condition number of the forms sampled on a block of states.

    Levels ``0..M-1`` (``M`` distinct ``beta0`` values) times every
    ``(n_1..n_c)`` pattern; columns are normalized first. Infinite when
    the sampled matrix is rank deficient.
    """
    if not forms:
        return float("inf")
    levels = len({(round(f.beta0.real, 10), round(f.beta0.imag, 10)) for f in forms})
    states = [(n0, *bits) for n0 in range(levels) for bits in itertools.product((0, 1), repeat=c)]
    M = np.array([[f.value(s) for f in forms] for s in states])
    M = M / np.linalg.norm(M, axis=0)
    sv = np.linalg.svd(M, compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")


def build_basis(spec: ProcessSpec, gf: GeneratingFunctions | None = None,
                tol: Tolerances = DEFAULT_TOL) -> ProductBasis:
    """Assemble and validate the ``2^c K`` product forms of ``spec``.

    Symmetric specs use the per-``eta`` polynomial route, nonsymmetric
    ``K = 1`` specs the bracketing route; anything else runs in best-effort
    mode. Raises ``DegenerateBasis`` (carrying the deficient basis) when
    fewer than ``2^c K`` distinct forms exist.
    """
    gf = gf if gf is not None else generating_functions(spec)
    rep = check_ergodicity(gf, spec.symmetric)
    if not rep.ergodic:
        raise AssumptionViolation(f"process is not ergodic (drift {rep.drift:.6g})")
    if spec.symmetric:
        mode = "symmetric"
        forms, records = _symmetric_forms(gf, tol)
        unique = tuple(r.beta0 for r in records)
    elif spec.K == 1:
        mode = "k1"
        forms, records = _k1_forms(gf, tol)
        unique = tuple(r.beta0 for r in records)
    else:
        mode = "best-effort"
        forms, records = _best_effort_forms(gf, tol)
        unique = tuple(r.beta0 for r in records)
    forms = sorted(forms, key=lambda f: (round(f.beta0.real, 12), round(f.beta0.imag, 12), f.signs.x))
    expected = spec.n_forms
    n_distinct = _distinct_forms(forms, tol)
    offending = []
    for r in records:
        if r.degenerate and not any(abs(r.beta0 - z) <= tol.dedup_tol for z in offending):
            offending.append(r.beta0)
    diagnostics = {"n_candidates": len(forms), "n_distinct": n_distinct, "expected": expected,
                   "degenerate_roots": offending, "drift": rep.drift}
    basis = ProductBasis(spec.c, spec.K, tuple(forms), unique, tuple(records), mode,
                         n_distinct < expected, diagnostics, independence_condition(forms, spec.c))
    if n_distinct < expected:
        if mode == "best-effort" and not offending:
            raise BestEffortIncomplete(n_distinct, expected, basis)
        raise DegenerateBasis(basis, n_distinct, expected, offending)
    if len(forms) != expected:
        raise RootCountMismatch(expected, len(forms), "product forms")
    return basis


def aggregate(basis: ProductBasis) -> AggregatedBasis:
    """Collapse forms that differ by a permutation of their factors.

    For symmetric processes the ``2^c K`` forms fall into ``K(c+1)``
    classes; class ``j`` contributes ``beta0_j^n0 * omega_j(m)`` on the
    strip, where ``omega_j(m)`` is the degree-``m`` elementary symmetric
    polynomial of the factors.
    """
    if not basis.symmetric:
        raise NotSymmetric("aggregation needs a symmetric basis")
    if basis.degenerate:
        raise DegenerateBasis(basis, basis.diagnostics.get("n_distinct", 0), basis.c and 2**basis.c * basis.K,
                              basis.diagnostics.get("degenerate_roots", []))
    groups: dict = {}
    for j, f in enumerate(basis.forms):
        groups.setdefault((f.root_index, f.signs.plus), []).append(j)
    keys = sorted(groups, key=lambda k: (basis.forms[groups[k][0]].beta0.real,
                                         basis.forms[groups[k][0]].beta0.imag, k))
    beta0 = tuple(basis.forms[groups[k][0]].beta0 for k in keys)
    omega = np.array([elementary_symmetric(basis.forms[groups[k][0]].betas) for k in keys])
    return AggregatedBasis(beta0, omega, tuple(tuple(groups[k]) for k in keys))


def sign_table(basis: ProductBasis) -> list:
    """Rows ``(x, beta0, betas, degenerate)`` grouped by sign vector.

    Within a sign vector, regular roots come first by decreasing modulus,
    degenerate roots last.
    """
    degenerate = basis.diagnostics.get("degenerate_roots", [])

    def is_deg(z):
        return any(abs(z - d) < 1e-6 for d in degenerate)

    rows = []
    for sv in sign_vectors(basis.c):
        mine = [f for f in basis.forms if f.signs == sv]
        mine.sort(key=lambda f: (is_deg(f.beta0), -abs(f.beta0), -f.beta0.real, f.beta0.imag))
        rows += [(sv.x, f.beta0, f.betas, is_deg(f.beta0)) for f in mine]
    return rows
