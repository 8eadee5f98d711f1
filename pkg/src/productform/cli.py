"""Command-line front end.

    productform --model MODEL.json --command {check,roots,solve,waiting-time,validate}
                [--N INT] [--tol FLOAT] [--out DIR] [--format json|csv] [--seed INT] [--levels INT]

Exit codes: 0 success, 2 assumption violation, 3 degenerate basis,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import DEFAULT_TOL
from .equilibrium import (assemble_boundary, evaluate_levels, evaluate_p, solution_document,
                          solve_boundary)
from .errors import (AssumptionError, DegenerateBasis, DegeneracyError, NumericalError, ProductFormError)
from .model import check_ergodicity, generating_functions, is_w_state, load_model_file
from .oracle import oracle_waiting_tail, simulate, truncated_steady_state
from .passage import evaluate_F, level_matrices, waiting_time_mixture
from .spectral import build_basis, sign_table

COMMANDS = ("check", "roots", "solve", "waiting-time", "validate")
EXIT = {AssumptionError: 2, DegeneracyError: 3, NumericalError: 4}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: str
    command: str
    N: int = 400
    tol: float | None = None
    out: str | None = None
    format: str = "json"
    seed: int = 0
    levels: int = 20


def parse_args(argv=None) -> RunConfig:
    ap = argparse.ArgumentParser(prog="productform", description=__doc__.split("\n\n")[0])
    ap.add_argument("--model", required=True, help="model document (JSON)")
    ap.add_argument("--command", required=True, choices=COMMANDS)
    ap.add_argument("--N", type=int, default=400, help="truncation level for the oracle")
    ap.add_argument("--tol", type=float, default=None, help="form residual tolerance")
    ap.add_argument("--out", default=None, help="directory for output files")
    ap.add_argument("--format", choices=("json", "csv"), default="json")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--levels", type=int, default=20, help="levels in the solution table")
    ns = ap.parse_args(argv)
    if ns.N < 1:
        ap.error("--N must be at least 1")
    return RunConfig(ns.model, ns.command, ns.N, ns.tol, ns.out, ns.format, ns.seed, ns.levels)


def _check_finite(obj, where="output"):
    if isinstance(obj, dict):
        for v in obj.values():
            _check_finite(v, where)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _check_finite(v, where)
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise NumericalError(f"non-finite value in {where}")


def _fmt2(z) -> str:
    z = complex(z)
    if abs(z.imag) < 5e-3:
        return f"{z.real:.2f}"
    return f"{z.real:.2f}{z.imag:+.2f}i"


def table_view(basis) -> str:
    """Sign vectors, roots and factors rounded to two decimals."""
    c = basis.c
    head = [f"x{i + 1}" for i in range(c)] + ["beta0"] + [f"beta{i + 1}" for i in range(c)] + ["degen"]
    rows = [[str(v) for v in x] + [_fmt2(b0)] + [_fmt2(b) for b in bs] + (["*"] if deg else [""])
            for x, b0, bs, deg in sign_table(basis)]
    width = max(len(s) for r in rows + [head] for s in r)
    lines = ["  ".join(s.rjust(width) for s in head)]
    lines += ["  ".join(s.rjust(width) for s in r) for r in rows]
    return "\n".join(lines)


def _basis_document(basis) -> dict:
    return {
        "mode": basis.mode,
        "degenerate": basis.degenerate,
        "n_distinct": basis.diagnostics.get("n_distinct"),
        "expected": basis.diagnostics.get("expected"),
        "independence_condition": basis.independence_condition if math.isfinite(basis.independence_condition)
        else None,
        "unique_beta0": [[z.real, z.imag] for z in basis.unique_beta0],
        "forms": [{"signs": list(f.signs.x), "beta0": [f.beta0.real, f.beta0.imag],
                   "betas": [[b.real, b.imag] for b in f.betas],
                   "residual_coeff": f.residual_coeff, "residual_inner": f.residual_inner}
                  for f in basis.forms],
    }


class _Writer:
    def __init__(self, cfg: RunConfig):
        self.dir = Path(cfg.out) if cfg.out else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def json(self, name, doc):
        _check_finite(doc, name)
        if self.dir:
            (self.dir / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def csv(self, name, header, rows):
        for r in rows:
            _check_finite(list(r), name)
        if self.dir:
            with open(self.dir / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for r in rows:
                    w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in r])


def _cmd_check(spec, cfg, out, tol):
    rep = check_ergodicity(generating_functions(spec), spec.symmetric)
    doc = {"drift": rep.drift, "ergodic": rep.ergodic, "boundary": rep.boundary,
           "symmetric": spec.symmetric,
           "per_plane": [{"pi0": a, "pi1": b, "contribution": d} for a, b, d in rep.per_plane]}
    if rep.symmetric_drift is not None:
        doc["symmetric_drift"] = rep.symmetric_drift
    out.json("check", doc)
    print(f"drift {rep.drift:.12g}: {'ergodic' if rep.ergodic else 'not ergodic'}"
          + (" (on the boundary)" if rep.boundary else ""))
    return 0


def _cmd_roots(spec, cfg, out, tol):
    try:
        basis = build_basis(spec, tol=tol)
        note = None
    except DegenerateBasis as exc:
        basis = exc.basis
        note = str(exc)
    out.json("roots", _basis_document(basis))
    if cfg.format == "csv":
        rows = [(*x, b0.real, b0.imag, *[v for b in bs for v in (b.real, b.imag)])
                for x, b0, bs, _ in sign_table(basis)]
        head = [f"x{i + 1}" for i in range(spec.c)] + ["beta0_re", "beta0_im"]
        head += [f"beta{i + 1}_{p}" for i in range(spec.c) for p in ("re", "im")]
        out.csv("roots", head, rows)
    print(table_view(basis))
    if note:
        print(f"degenerate basis: {note}", file=sys.stderr)
    return 0


def _solve(spec, tol):
    basis = build_basis(spec, tol=tol)
    return solve_boundary(assemble_boundary(spec, basis, tol), tol)


def _cmd_solve(spec, cfg, out, tol):
    sol = _solve(spec, tol)
    doc = solution_document(sol, cfg.levels)
    out.json("solution", doc)
    if cfg.format == "csv":
        out.csv("solution", ["n0"] + [f"m{m}" for m in range(spec.c + 1)],
                [(r[0], *r[1:]) for r in doc["table"]])
    print(f"solved: {len(sol.basis.forms)} forms, boundary mass {sum(sol.boundary_probs.values()):.12g}, "
          f"omitted residual {sol.omitted_residual:.3e}, condition {sol.condition:.3e}")
    return 0


def _cmd_waiting(spec, cfg, out, tol):
    sol = _solve(spec, tol)
    mix = waiting_time_mixture(sol, level_matrices(spec))
    out.json("mixture", {"terms": mix.terms(), "t_max": mix.t_max})
    t = np.linspace(0.0, mix.t_max, 200)
    out.csv("waiting_time", ["t", "F"], list(zip(t.tolist(), evaluate_F(mix, t).tolist())))
    print(f"P(wait > 0) = {evaluate_F(mix, 0.0):.12g}; {len(mix.rates)} exponential terms")
    return 0


def _cmd_validate(spec, cfg, out, tol):
    sol = _solve(spec, tol)
    pi = truncated_steady_state(spec, cfg.N)
    levels = min(20, cfg.N)
    dev_p = 0.0
    for s, p in pi.items():
        if not is_w_state(s) or s[0] <= levels:
            dev_p = max(dev_p, abs(evaluate_p(sol, s) - p))
    doc = {"N": cfg.N, "levels_compared": levels, "max_abs_dev_p": dev_p,
           "normalization": sol.normalization, "omitted_residual": sol.omitted_residual}
    lv = evaluate_levels(sol, np.arange(0, 101))
    doc["min_p_levels_0_100"] = float(lv.min())
    ok = dev_p < 1e-8
    if spec.symmetric:
        lm = level_matrices(spec)
        if lm.scalar_upward:
            mix = waiting_time_mixture(sol, lm)
            tg = np.array([0.25, 0.5, 1.0, 2.0, 5.0])
            ref = oracle_waiting_tail(spec, tg, N=min(200, cfg.N), N_pi=cfg.N)
            dev_F = float(np.max(np.abs(evaluate_F(mix, tg) - ref)))
            doc["max_abs_dev_F"] = dev_F
            ok = ok and dev_F < 1e-6
    sim = simulate(spec, 10**5, seed=cfg.seed)
    est = sim.probability(lambda s: not is_w_state(s))
    v_mass = sum(sol.boundary_probs.values())
    doc["simulation"] = {"boundary_mass": est.point, "half_width": est.half_width,
                         "analytic": v_mass, "seed": cfg.seed, "arrivals": est.n}
    doc["pass"] = bool(ok)
    out.json("validate", doc)
    print(f"max |p - oracle| on levels <= {levels}: {dev_p:.3e}")
    if "max_abs_dev_F" in doc:
        print(f"max |F - oracle|: {doc['max_abs_dev_F']:.3e}")
    print(f"boundary mass: analytic {v_mass:.6f}, simulated {est.point:.6f} +- {est.half_width:.6f}")
    return 0 if ok else 4


HANDLERS = {"check": _cmd_check, "roots": _cmd_roots, "solve": _cmd_solve,
            "waiting-time": _cmd_waiting, "validate": _cmd_validate}


def run(cfg: RunConfig) -> int:
    tol = DEFAULT_TOL if cfg.tol is None else dataclasses.replace(DEFAULT_TOL, form_tol=cfg.tol)
    try:
        spec = load_model_file(cfg.model)
        return HANDLERS[cfg.command](spec, cfg, _Writer(cfg), tol)
    except ProductFormError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        for cls, code in EXIT.items():
            if isinstance(exc, cls):
                return code
        return 4
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: cannot read model: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return run(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
