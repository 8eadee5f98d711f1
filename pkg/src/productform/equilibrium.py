"""Boundary system, mixing weights and the stationary distribution.

On W the distribution is ``p(n) = sum_j alpha_j form_j(n)``. The balance
equations of states in W with ``n0 >= K`` hold for every form, so only the
equations of the boundary states (V and W states with ``n0 < K``) remain.
They are linear in the V probabilities and the weights; one of them is
redundant and is traded for the normalization condition.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOL, Tolerances
from .errors import (DegenerateBasisInput, NotSymmetric, NumericalError, ResidualCheckFailed,
                     SingularSystem, StateOutOfDomain)
from .model import ProcessSpec, generating_functions, is_w_state, out_transitions
from .spectral import AggregatedBasis, ProductBasis, aggregate, build_basis


def _state_key(s):
    return (1, s) if is_w_state(s) else (0, s)


def _conjugate_pairs(forms, tol=1e-8):
    """Group form indices into real singletons and conjugate pairs."""
    vecs = [np.array([f.beta0, *f.betas]) for f in forms]
    groups, used = [], set()
    for j, v in enumerate(vecs):
        if j in used:
            continue
        used.add(j)
        if np.max(np.abs(v.imag)) <= tol * max(1.0, np.max(np.abs(v))):
            groups.append((j,))
            continue
        partner = None
        for k in range(j + 1, len(vecs)):
            if k not in used and np.max(np.abs(vecs[k] - v.conj())) <= tol * max(1.0, np.max(np.abs(v))):
                partner = k
                break
        if partner is None:
            raise NumericalError(f"form {j} (beta0={forms[j].beta0:.6g}) has no conjugate partner")
        used.add(partner)
        groups.append((j, partner))
    return groups


@dataclass(frozen=True)
class BoundarySystem:
    spec: ProcessSpec
    basis: ProductBasis
    states: tuple  # boundary states, one equation each, sorted
    labels: tuple  # unknown labels
    matrix: np.ndarray  # balance rows, before the normalization swap
    norm_row: np.ndarray
    replaced_row: int
    groups: tuple  # conjugate grouping of forms, in unknown order
    rate_scale: float

    @property
    def n_v(self) -> int:
        return len(self.spec.boundary.v_states)

    def system(self):
        """The square system with the replaced row swapped for normalization."""
        M = self.matrix.copy()
        M[self.replaced_row] = self.norm_row
        rhs = np.zeros(M.shape[0])
        rhs[self.replaced_row] = 1.0
        return M, rhs


def assemble_boundary(spec: ProcessSpec, basis: ProductBasis, tol: Tolerances = DEFAULT_TOL) -> BoundarySystem:
    """Balance equations of V and of the W states below level ``K``."""
    if basis.degenerate or len(basis.forms) != spec.n_forms:
        raise DegenerateBasisInput(f"basis has {len(basis.forms)} forms, {spec.n_forms} required")
    forms = basis.forms
    v_states = list(spec.boundary.v_states)
    w_low = list(spec.w_states(spec.K - 1))
    states = sorted(v_states + w_low, key=_state_key)
    row_of = {s: r for r, s in enumerate(states)}
    groups = _conjugate_pairs(forms)

    labels = [f"p[{v}]" for v in v_states]
    for g in groups:
        if len(g) == 1:
            labels.append(f"alpha[{g[0]}]")
        else:
            labels += [f"re alpha[{g[0]}]", f"im alpha[{g[0]}]"]
    nv = len(v_states)

    def w_columns(state):
        """Coefficients of ``p(state)`` on the real unknowns of the weights."""
        vals = [f.value(state) for f in forms]
        cols = []
        for g in groups:
            phi = vals[g[0]]
            cols += [phi.real] if len(g) == 1 else [2 * phi.real, -2 * phi.imag]
        return np.array(cols)

    M = np.zeros((len(states), len(labels)))
    v_index = {v: i for i, v in enumerate(v_states)}
    scale = 0.0

    def add(source, coeff_row):
        out = out_transitions(spec, source)
        total = sum(out.values())
        nonlocal scale
        scale = max(scale, total)
        if source in row_of:
            M[row_of[source]] -= total * coeff_row
        for (target, _), rate in out.items():
            if target in row_of:
                M[row_of[target]] += rate * coeff_row

    for v in v_states:
        e = np.zeros(len(labels))
        e[v_index[v]] = 1.0
        add(v, e)
    for w in spec.w_states(spec.K + spec.L - 1):
        e = np.zeros(len(labels))
        e[nv:] = w_columns(w)
        add(w, e)

    norm = np.zeros(len(labels))
    norm[:nv] = 1.0
    masses = [f.total_mass() for f in forms]
    cols = []
    for g in groups:
        m = masses[g[0]]
        cols += [m.real] if len(g) == 1 else [2 * m.real, -2 * m.imag]
    norm[nv:] = cols
    return BoundarySystem(spec, basis, tuple(states), tuple(labels), M, norm, 0, tuple(groups), max(scale, 1.0))


@dataclass(frozen=True)
class EquilibriumSolution:
    spec: ProcessSpec
    basis: ProductBasis
    alphas: np.ndarray  # complex, one per form
    boundary_probs: dict
    normalization: float
    omitted_residual: float
    condition: float
    tol: Tolerances = DEFAULT_TOL
    aggregated: AggregatedBasis | None = None
    gammas: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def beta0(self) -> np.ndarray:
        return np.array([f.beta0 for f in self.basis.forms])

    def tail_rate(self) -> float:
        """Largest ``|beta0|`` among forms with a nonzero weight."""
        w = np.abs(self.alphas)
        live = w > 1e-14 * max(w.max(), 1e-300)
        return float(np.max(np.abs(self.beta0[live])))


def solve_boundary(sys: BoundarySystem, tol: Tolerances = DEFAULT_TOL) -> EquilibriumSolution:
    """Solve the boundary system and verify the omitted balance equation."""
    M, rhs = sys.system()
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > tol.cond_max:
        raise SingularSystem(cond)
    u = np.linalg.solve(M, rhs)
    omitted = float(abs(sys.matrix[sys.replaced_row] @ u)) / sys.rate_scale
    if omitted > tol.form_tol:
        raise ResidualCheckFailed(omitted)
    nv = sys.n_v
    probs = {v: float(u[i]) for i, v in enumerate(sys.spec.boundary.v_states)}
    alphas = np.zeros(len(sys.basis.forms), dtype=complex)
    pos = nv
    for g in sys.groups:
        if len(g) == 1:
            alphas[g[0]] = u[pos]
            pos += 1
        else:
            alphas[g[0]] = complex(u[pos], u[pos + 1])
            alphas[g[1]] = complex(u[pos], -u[pos + 1])
            pos += 2
    masses = np.array([f.total_mass() for f in sys.basis.forms])
    total = sum(probs.values()) + complex(alphas @ masses)
    aggregated = gammas = None
    if sys.basis.symmetric:
        aggregated = aggregate(sys.basis)
        gammas = np.array([alphas[list(idx)].sum() for idx in aggregated.members])
    return EquilibriumSolution(sys.spec, sys.basis, alphas, probs, float(total.real), omitted, cond, tol,
                               aggregated, gammas, {"labels": sys.labels, "replaced_state": sys.states[0]})


def solve_equilibrium(spec: ProcessSpec, tol: Tolerances = DEFAULT_TOL) -> EquilibriumSolution:
    """Basis, boundary system and solve in one call."""
    basis = build_basis(spec, generating_functions(spec), tol)
    return solve_boundary(assemble_boundary(spec, basis, tol), tol)


def _check_w(spec, n):
    if not (isinstance(n, tuple) and len(n) == spec.c + 1 and all(isinstance(x, (int, np.integer)) for x in n)
            and n[0] >= 0 and all(x in (0, 1) for x in n[1:])):
        raise StateOutOfDomain(f"{n!r} is not a state of this process")


def evaluate_p(sol: EquilibriumSolution, n) -> float:
    """Stationary probability of a W state (tuple) or a V state (label)."""
    if not is_w_state(n):
        if n not in sol.boundary_probs:
            raise StateOutOfDomain(f"{n!r} is not a boundary state")
        return sol.boundary_probs[n]
    _check_w(sol.spec, n)
    val = sum(a * f.value(n) for a, f in zip(sol.alphas, sol.basis.forms))
    if abs(val.imag) > sol.tol.imag_tol:
        raise NumericalError(f"p{n} has imaginary part {val.imag:.3e}")
    return float(val.real)


def evaluate_levels(sol: EquilibriumSolution, n0) -> np.ndarray:
    """``p(n0, bits)`` for an array of levels; columns follow the bit patterns
    in lexicographic order."""
    n0 = np.asarray(n0)
    bits = list(itertools.product((0, 1), repeat=sol.spec.c))
    out = np.zeros((n0.size, len(bits)), dtype=complex)
    for a, f in zip(sol.alphas, sol.basis.forms):
        lev = f.beta0 ** n0.ravel()
        for col, b in enumerate(bits):
            out[:, col] += a * lev * np.prod([bb for bb, on in zip(f.betas, b) if on])
    return out.real


def evaluate_p_aggregated(sol: EquilibriumSolution, n0: int, m: int) -> float:
    """``p(n0, m)``: total probability of level ``n0`` with ``m`` busy phases set."""
    if sol.aggregated is None:
        raise NotSymmetric("aggregated evaluation needs a symmetric solution")
    if n0 < 0 or not 0 <= m <= sol.spec.c:
        raise StateOutOfDomain(f"({n0}, {m}) is outside the strip")
    val = sum(g * b0**n0 * om[m] for g, b0, om in zip(sol.gammas, sol.aggregated.beta0, sol.aggregated.omega))
    if abs(val.imag) > sol.tol.imag_tol:
        raise NumericalError(f"p({n0}, {m}) has imaginary part {val.imag:.3e}")
    return float(val.real)


def marginal(sol: EquilibriumSolution, n0: int, m: int) -> float:
    """``p(n0, m)`` by summing ``evaluate_p``; works without symmetry."""
    c = sol.spec.c
    return sum(evaluate_p(sol, (n0, *b)) for b in itertools.product((0, 1), repeat=c) if sum(b) == m)


def inner_residual(sol: EquilibriumSolution, state) -> float:
    """Balance residual at a W state, relative to its total outflow."""
    spec = sol.spec
    out = out_transitions(spec, state)
    total = sum(out.values())
    lhs = total * evaluate_p(sol, state)
    inflow = 0.0
    lo = max(0, state[0] - spec.K)
    for src in spec.w_states(state[0] + spec.L):
        if src[0] < lo:
            continue
        for (tgt, _), r in out_transitions(spec, src).items():
            if tgt == state:
                inflow += r * evaluate_p(sol, src)
    if state[0] < spec.K:
        for v in spec.boundary.v_states:
            for (tgt, _), r in out_transitions(spec, v).items():
                if tgt == state:
                    inflow += r * sol.boundary_probs[v]
    return abs(lhs - inflow) / max(total, 1e-300)


def solution_document(sol: EquilibriumSolution, n_dump: int = 20) -> dict:
    """JSON-ready summary: weights, roots, boundary probabilities, p(n0, m)."""
    c = sol.spec.c
    forms = [{"beta0": [f.beta0.real, f.beta0.imag], "signs": list(f.signs.x),
              "betas": [[b.real, b.imag] for b in f.betas],
              "weight": [a.real, a.imag]} for f, a in zip(sol.basis.forms, sol.alphas)]
    doc = {
        "family": sol.spec.family,
        "c": c,
        "K": sol.spec.K,
        "forms": forms,
        "boundary_probs": {str(k): v for k, v in sol.boundary_probs.items()},
        "normalization": sol.normalization,
        "omitted_residual": sol.omitted_residual,
        "condition": sol.condition,
        "table": [[n0] + [marginal(sol, n0, m) for m in range(c + 1)] for n0 in range(n_dump + 1)],
    }
    if sol.gammas is not None:
        doc["aggregated"] = [{"beta0": [b.real, b.imag], "gamma": [g.real, g.imag],
                              "omega": [[w.real, w.imag] for w in om]}
                             for b, g, om in zip(sol.aggregated.beta0, sol.gammas, sol.aggregated.omega)]
    return doc


def dump_solution(sol: EquilibriumSolution, path, n_dump: int = 20) -> None:
    with open(path, "w") as fh:
        json.dump(solution_document(sol, n_dump), fh, indent=2, sort_keys=True)
        fh.write("\n")
