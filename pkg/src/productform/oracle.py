"""Brute-force references: truncated chain, transient passage times, simulation.

Nothing here uses the product-form machinery; the chain is built straight
from the rate planes and the boundary description.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.integrate import solve_ivp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .errors import AssumptionViolation, NotConverged, ReducibleChain
from .model import KIND_MOVES, KINDS, ProcessSpec, check_ergodicity, generating_functions, is_w_state


def transitions(spec: ProcessSpec, state):
    """Outgoing jumps of ``state`` as ``(target, rate, batch, k)`` tuples.

    ``k`` is the level change for W states and 0 for V states; self-loops
    are dropped.
    """
    out = []
    if is_w_state(state):
        n0 = state[0]
        for i, p in enumerate(spec.planes, start=1):
            for kind in KINDS:
                before, after = KIND_MOVES[kind]
                if state[i] != before:
                    continue
                for k, r in p.table(kind).items():
                    if k == 0 and before == after:
                        continue
                    if n0 + k < 0:
                        tgt = spec.boundary.routing[(state, i, kind, k)]
                    else:
                        tgt = state[:i] + (after,) + state[i + 1:]
                        tgt = (n0 + k,) + tgt[1:]
                    out.append((tgt, r, max(k, 0), k))
    else:
        for t in spec.boundary.v_generator:
            if t.source == state and t.target != state:
                out.append((t.target, t.rate, t.batch, 0))
        for t in spec.boundary.entry_rates:
            if t.source == state:
                out.append((t.target, t.rate, t.batch, 0))
    return out


@dataclass(frozen=True)
class TruncatedChain:
    """V plus the W states with ``n0 <= N``; upward jumps past ``N`` land on ``N``."""

    spec: ProcessSpec
    N: int
    states: tuple
    index: dict
    Q: sp.csr_matrix
    clipping: str = "upward jumps beyond the cap land on level N with the same phases"


def truncated_chain(spec: ProcessSpec, N: int) -> TruncatedChain:
    states = list(spec.boundary.v_states) + list(spec.w_states(N))
    index = {s: j for j, s in enumerate(states)}
    rows, cols, vals = [], [], []
    for s in states:
        j = index[s]
        for tgt, r, _, _ in transitions(spec, s):
            if is_w_state(tgt) and tgt[0] > N:
                tgt = (N,) + tgt[1:]
            if tgt == s:
                continue
            rows += [j, j]
            cols += [index[tgt], j]
            vals += [r, -r]
    n = len(states)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return TruncatedChain(spec, N, tuple(states), index, Q)


def _stationary(chain: TruncatedChain) -> np.ndarray:
    Q = chain.Q
    off = Q - sp.diags(Q.diagonal())
    ncomp, _ = connected_components(off, directed=True, connection="strong")
    if ncomp != 1:
        raise ReducibleChain(f"truncated chain has {ncomp} strongly connected classes")
    A = Q.T.tolil()
    A[0, :] = np.ones(Q.shape[0])
    rhs = np.zeros(Q.shape[0])
    rhs[0] = 1.0
    return spsolve(A.tocsc(), rhs)


def truncated_steady_state(spec: ProcessSpec, N: int = 400, tol: float = 1e-9) -> dict:
    """Stationary distribution of the chain truncated at level ``N``.

    The result is accepted only if doubling the cap moves no retained
    probability by more than ``tol``.
    """
    if N < 10 * spec.K:
        raise ValueError(f"N={N} is below 10*K")
    rep = check_ergodicity(generating_functions(spec), spec.symmetric)
    if not rep.ergodic:
        raise NotConverged(f"process is not ergodic (drift {rep.drift:.6g}); truncation cannot converge")
    small = truncated_chain(spec, N)
    big = truncated_chain(spec, 2 * N)
    pi_s, pi_b = _stationary(small), _stationary(big)
    idx = [big.index[s] for s in small.states]
    diff = float(np.max(np.abs(pi_s - pi_b[idx])))
    if not diff < tol:
        raise NotConverged(f"doubling N={N} changed probabilities by {diff:.3e}")
    return dict(zip(small.states, pi_s))


def _backward_operator(spec: ProcessSpec, N: int):
    """Generator of the passage problem on the W states with ``n0 <= N``.

    Upward jumps keep the level (only the phases move), V is absorbing.
    """
    states = list(spec.w_states(N))
    index = {s: j for j, s in enumerate(states)}
    rows, cols, vals = [], [], []
    for s in states:
        j = index[s]
        for tgt, r, _, k in transitions(spec, s):
            rows.append(j)
            cols.append(j)
            vals.append(-r)
            if is_w_state(tgt):
                if k > 0:
                    tgt = (s[0],) + tgt[1:]
                rows.append(j)
                cols.append(index[tgt])
                vals.append(r)
    n = len(states)
    return states, index, sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def passage_survival(spec: ProcessSpec, N: int, t_grid) -> tuple:
    """``G_s(t)``: probability that V is not yet reached by time ``t`` from W state ``s``.

    Returns ``(states, G)`` with ``G`` of shape ``(len(t_grid), len(states))``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    states, _, A = _backward_operator(spec, N)
    y0 = np.ones(len(states))
    if t_grid.size and t_grid.max() == 0.0:
        return states, np.ones((t_grid.size, len(states)))
    sol = solve_ivp(lambda t, y: A @ y, (0.0, float(t_grid.max())), y0, method="DOP853",
                    t_eval=np.sort(t_grid), rtol=1e-10, atol=1e-13)
    if not sol.success:
        raise NotConverged(f"passage integration failed: {sol.message}")
    order = np.argsort(t_grid)
    G = np.empty((t_grid.size, len(states)))
    G[order] = sol.y.T
    return states, G


def transient_F(spec: ProcessSpec, N: int, t_grid) -> np.ndarray:
    """``F[t, n0, m]`` on the aggregated strip of a symmetric spec.

    Each ``(n0, m)`` uses the representative state whose first ``m`` phases
    are set; symmetry makes the choice immaterial.
    """
    if not spec.symmetric:
        from .errors import NotSymmetric
        raise NotSymmetric("transient_F needs identical planes")
    states, G = passage_survival(spec, N, t_grid)
    index = {s: j for j, s in enumerate(states)}
    c = spec.c
    out = np.empty((G.shape[0], N + 1, c + 1))
    for n0 in range(N + 1):
        for m in range(c + 1):
            rep = (n0,) + (1,) * m + (0,) * (c - m)
            out[:, n0, m] = G[:, index[rep]]
    return out


def oracle_waiting_tail(spec: ProcessSpec, t_grid, N: int = 200, N_pi: int = 400) -> np.ndarray:
    """``sum_n pi(n) G_n(t)`` over W states with ``n0 <= N``."""
    pi = truncated_steady_state(spec, N_pi)
    states, G = passage_survival(spec, N, t_grid)
    weights = np.array([pi[s] for s in states])
    return G @ weights


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimEstimate:
    point: float
    half_width: float
    n: int
    seed: int

    @property
    def sigma(self) -> float:
        return self.half_width / 1.96


@njit(cache=True)
def _sim_kernel(indptr, targets, rates, batch, down, is_v, level, start, n_arrivals, warmup, n_batches, seed):
    np.random.seed(seed)
    n_states = is_v.size
    waits = np.full(n_arrivals, -1.0)
    occ = np.zeros((n_batches, n_states))
    cap = 1 << 20
    thr = np.zeros(cap, dtype=np.int64)
    t_arr = np.zeros(cap)
    slot = np.zeros(cap, dtype=np.int64)
    head = 0
    tail = 0
    down_total = 0
    state = start
    t = 0.0
    arrivals = 0
    recorded = 0
    while arrivals < warmup + n_arrivals or recorded < n_arrivals:
        lo, hi = indptr[state], indptr[state + 1]
        total = 0.0
        for e in range(lo, hi):
            total += rates[e]
        dt = -np.log(1.0 - np.random.random()) / total
        if arrivals >= warmup and arrivals < warmup + n_arrivals:
            occ[(arrivals - warmup) * n_batches // n_arrivals, state] += dt
        t += dt
        u = np.random.random() * total
        e = lo
        acc = rates[lo]
        while acc < u and e < hi - 1:
            e += 1
            acc += rates[e]
        if batch[e] > 0:
            j = arrivals - warmup
            if j >= 0 and j < n_arrivals:
                if is_v[state]:
                    waits[j] = 0.0
                    recorded += 1
                else:
                    # the batch leads once the jobs present now have moved
                    # the level below zero
                    thr[tail % cap] = level[state] + down_total
                    t_arr[tail % cap] = t
                    slot[tail % cap] = j
                    tail += 1
            arrivals += 1
        if down[e] > 0:
            down_total += down[e]
            while head < tail and thr[head % cap] < down_total:
                waits[slot[head % cap]] = t - t_arr[head % cap]
                recorded += 1
                head += 1
        state = targets[e]
    return waits, occ


def _sim_tables(spec: ProcessSpec, N: int):
    chain_states = list(spec.boundary.v_states) + list(spec.w_states(N))
    index = {s: j for j, s in enumerate(chain_states)}
    indptr, targets, rates, batch, down = [0], [], [], [], []
    for s in chain_states:
        for tgt, r, bt, k in transitions(spec, s):
            if is_w_state(tgt) and tgt[0] > N:
                tgt = (N,) + tgt[1:]
            targets.append(index[tgt])
            rates.append(r)
            batch.append(bt)
            down.append(-k if k < 0 else 0)
        indptr.append(len(targets))
    is_v = np.array([not is_w_state(s) for s in chain_states])
    level = np.array([s[0] if is_w_state(s) else 0 for s in chain_states], dtype=np.int64)
    return (chain_states, np.array(indptr, dtype=np.int64), np.array(targets, dtype=np.int64),
            np.array(rates), np.array(batch, dtype=np.int64), np.array(down, dtype=np.int64), is_v, level)


@dataclass(frozen=True)
class SimulationResult:
    states: tuple
    occupancy: np.ndarray  # (n_batches, n_states) fractions of time
    waits: np.ndarray
    n_batches: int
    seed: int

    def probability(self, select) -> SimEstimate:
        """Batch-means estimate of the stationary mass of states where ``select`` holds."""
        mask = np.array([bool(select(s)) for s in self.states])
        vals = self.occupancy[:, mask].sum(axis=1)
        return _batch_means(vals, self.waits.size, self.seed)

    def wait_tail(self, t) -> SimEstimate:
        """Batch-means estimate of P(wait > t)."""
        vals = np.array([np.mean(b > t) for b in np.array_split(self.waits, self.n_batches)])
        return _batch_means(vals, self.waits.size, self.seed)


def _batch_means(vals, n, seed) -> SimEstimate:
    sd = float(np.std(vals, ddof=1)) if vals.size > 1 else float("inf")
    hw = 1.96 * sd / np.sqrt(vals.size)
    return SimEstimate(float(np.mean(vals)), float(max(hw, np.finfo(float).tiny)), int(n), int(seed))


def simulate(spec: ProcessSpec, horizon: int = 10**6, seed: int = 0, t_grid=(), cap: int = 4000,
             n_batches: int = 50) -> SimulationResult:
    """Jump-by-jump simulation of the chain for ``horizon`` arrivals.

    Waiting times are recorded for the first job of every arriving batch
    (FCFS): the time until the jobs ahead of it have lowered the level below
    zero. Batches that arrive while the chain is in V wait zero. Estimates
    for individual grid points come from :meth:`SimulationResult.wait_tail`.
    """
    rep = check_ergodicity(generating_functions(spec), spec.symmetric)
    if not rep.ergodic:
        raise AssumptionViolation(f"process is not ergodic (drift {rep.drift:.6g})")
    states, indptr, targets, rates, batch, down, is_v, level = _sim_tables(spec, cap)
    warmup = max(horizon // 50, 1000)
    waits, occ = _sim_kernel(indptr, targets, rates, batch, down, is_v, level, 0, int(horizon), int(warmup),
                             int(n_batches), int(seed))
    occ = occ / occ.sum(axis=1, keepdims=True)
    return SimulationResult(tuple(states), occ, waits, int(n_batches), int(seed))
