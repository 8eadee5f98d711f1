"""Waiting time as a first passage to V, written as a mixture of exponentials.

On the aggregated strip ``(n0, m)`` the upward jumps of a tagged FCFS
customer's passage are inert when every upward jump matrix is a multiple
of the identity. The survival function is then a finite sum of
exponentials with one term per aggregated root.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionFourViolated, NotSymmetric, PositiveExponent
from .equilibrium import EquilibriumSolution
from .model import ProcessSpec

DIAG_TOL = 1e-13


@dataclass(frozen=True)
class LevelMatrices:
    """``Lambda_k``: rates from level ``n0`` to ``n0 + k`` between busy counts ``m``."""

    c: int
    K: int
    L: int
    lambda_: dict  # k -> (c+1, c+1) array
    arrival_rates: np.ndarray | None  # lambda_1..lambda_K when upward blocks are scalar
    scalar_upward: bool


def level_matrices(spec: ProcessSpec) -> LevelMatrices:
    if not spec.symmetric:
        raise NotSymmetric("level matrices need identical planes")
    p = spec.planes[0]
    c, K, L = spec.c, spec.K, spec.L
    mats = {k: np.zeros((c + 1, c + 1)) for k in range(-L, K + 1)}
    for m in range(c + 1):
        for k, r in p.a.items():
            if m < c:
                mats[k][m, m + 1] += r * (c - m)
        for k, r in p.b.items():
            mats[k][m, m] += r * (c - m)
        for k, r in p.c.items():
            mats[k][m, m] += r * m
        for k, r in p.d.items():
            if m > 0:
                mats[k][m, m - 1] += r * m
    # self-loop rates b_0, c_0 cancel; complete the diagonal of Lambda_0
    for m in range(c + 1):
        mats[0][m, m] = 0.0
        mats[0][m, m] = -sum(mats[k][m].sum() for k in mats)
    lam = np.zeros(K)
    ok = True
    for k in range(1, K + 1):
        M = mats[k]
        off = M - np.diag(np.diag(M))
        d = np.diag(M)
        if np.any(off != 0.0) or np.max(np.abs(d - d[0])) > DIAG_TOL * max(1.0, abs(d[0])):
            ok = False
        lam[k - 1] = d[0]
    return LevelMatrices(c, K, L, mats, lam if ok else None, ok)


@dataclass(frozen=True)
class WaitingTimeMixture:
    weights: np.ndarray
    rates: np.ndarray
    beta0: np.ndarray

    @property
    def t_max(self) -> float:
        return 20.0 / abs(float(np.max(self.rates.real)))

    def terms(self) -> list:
        return [{"weight": [w.real, w.imag], "rate": [r.real, r.imag]} for w, r in zip(self.weights, self.rates)]


def exponent(beta0, arrival_rates):
    """``sum_i (1 - beta0^-i) lambda_i``."""
    beta0 = np.asarray(beta0, dtype=complex)
    return sum((1.0 - beta0 ** (-i)) * lam for i, lam in enumerate(arrival_rates, start=1))


def waiting_time_mixture(sol: EquilibriumSolution, lm: LevelMatrices | None = None) -> WaitingTimeMixture:
    if sol.aggregated is None:
        raise NotSymmetric("the waiting-time mixture needs an aggregated solution")
    lm = lm if lm is not None else level_matrices(sol.spec)
    if not lm.scalar_upward:
        raise AssumptionFourViolated("an upward jump matrix is not a multiple of the identity")
    beta0 = np.array(sol.aggregated.beta0)
    weights = sol.gammas * sol.aggregated.omega.sum(axis=1) / (1.0 - beta0)
    rates = exponent(beta0, lm.arrival_rates)
    if np.any(rates.real >= 0):
        # a nonnegative exponent is harmless only when its weight vanishes
        raise PositiveExponent(f"exponents with nonnegative real part: {rates[rates.real >= 0]}")
    return WaitingTimeMixture(weights, rates, beta0)


def evaluate_F(mix: WaitingTimeMixture, t, return_raw: bool = False, imag_tol: float = 1e-9):
    """P(wait > t). Array input is evaluated elementwise; output is clamped to [0, 1]."""
    t = np.asarray(t, dtype=float)
    raw = (mix.weights[None, :] * np.exp(np.multiply.outer(t.ravel(), mix.rates))).sum(axis=1)
    if np.any(np.abs(raw.imag) > imag_tol):
        raise ValueError(f"F(t) has imaginary part up to {np.max(np.abs(raw.imag)):.3e}")
    raw = raw.real.reshape(t.shape)
    val = np.clip(raw, 0.0, 1.0)
    if t.ndim == 0:
        val, raw = float(val), float(raw)
    return (val, raw) if return_raw else val


def write_csv(mix: WaitingTimeMixture, path, n_points: int = 200, t_max: float | None = None) -> None:
    t_max = mix.t_max if t_max is None else t_max
    t = np.linspace(0.0, t_max, n_points)
    F = evaluate_F(mix, t)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "F"])
        for ti, fi in zip(t, F):
            w.writerow([f"{ti:.12g}", f"{fi:.12g}"])
