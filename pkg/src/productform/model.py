"""Process description: rate planes, boundary set, presets and ergodicity.

A process lives on ``V ∪ W``. ``V`` is a finite set of boundary states
(string labels); ``W`` holds the states ``(n0, n1, ..., nc)`` with
``n0 >= 0`` and binary ``n_i``. Each plane ``i`` carries four rate tables
indexed by the jump size ``k`` of the ``n0`` coordinate:

    a: n_i 0 -> 1     b: n_i 0 -> 0     c: n_i 1 -> 1     d: n_i 1 -> 0

W states are tuples of ints, V states are strings, and plane numbers
are 1-based so that plane ``i`` acts on ``state[i]``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, NamedTuple

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import AssumptionViolation, BadParams, InconsistentK

KINDS = ("a", "b", "c", "d")
# (n_i before, n_i after) for each rate kind
KIND_MOVES = {"a": (0, 1), "b": (0, 0), "c": (1, 1), "d": (1, 0)}

FAMILIES = ("erlang2-hetero", "mxmc-breakdown", "hypo2-batch")


def _freeze(rates) -> Mapping[int, float]:
    return MappingProxyType({int(k): float(v) for k, v in sorted(rates.items()) if float(v) != 0.0})


@dataclass(frozen=True)
class RatePlane:
    """Rate tables of one ``(n0, n_i)`` plane, keyed by jump size."""

    a: Mapping[int, float]
    b: Mapping[int, float]
    c: Mapping[int, float]
    d: Mapping[int, float]

    @classmethod
    def from_tables(cls, a=None, b=None, c=None, d=None) -> "RatePlane":
        return cls(_freeze(a or {}), _freeze(b or {}), _freeze(c or {}), _freeze(d or {}))

    def table(self, kind: str) -> Mapping[int, float]:
        return getattr(self, kind)

    @property
    def max_down(self) -> int:
        keys = [k for kind in KINDS for k in self.table(kind)]
        return max([0] + [-k for k in keys])

    @property
    def max_up(self) -> int:
        keys = [k for kind in KINDS for k in self.table(kind)]
        return max([0] + keys)

    def __eq__(self, other):
        if not isinstance(other, RatePlane):
            return NotImplemented
        return all(dict(self.table(k)) == dict(other.table(k)) for k in KINDS)

    def __hash__(self):
        return hash(tuple(tuple(self.table(k).items()) for k in KINDS))


class VTransition(NamedTuple):
    source: str
    target: object  # V label or W tuple
    rate: float
    batch: int = 0  # size of the arriving batch, 0 when not an arrival


@dataclass(frozen=True)
class BoundarySpec:
    """The finite set ``V`` and all transitions touching it.

    ``v_generator`` holds V -> V rates, ``entry_rates`` the V -> W rates
    (targets must have ``n0 < K``), and ``routing`` sends each W -> V jump,
    keyed by ``(w_state, plane, kind, k)``, to a V label.
    """

    v_states: tuple
    v_generator: tuple = ()
    entry_rates: tuple = ()
    routing: Mapping = field(default_factory=lambda: MappingProxyType({}))


@dataclass(frozen=True)
class ProcessSpec:
    c: int
    K: int
    planes: tuple
    boundary: BoundarySpec
    symmetric: bool
    family: str = "raw"
    params: Mapping = field(default_factory=lambda: MappingProxyType({}))

    @property
    def L(self) -> int:
        return max(p.max_down for p in self.planes)

    @property
    def n_forms(self) -> int:
        return 2**self.c * self.K

    def w_states(self, max_level: int):
        """All W states with ``n0 <= max_level`` in lexicographic order."""
        for n0 in range(max_level + 1):
            for bits in itertools.product((0, 1), repeat=self.c):
                yield (n0, *bits)


def is_w_state(state) -> bool:
    return isinstance(state, tuple)


def build_spec(planes, boundary: BoundarySpec, K: int | None = None, family="raw", params=None) -> ProcessSpec:
    """Validate rate planes and a boundary description into a ProcessSpec.

    Raises
    ------
    InconsistentK
        If the planes disagree on the largest upward jump, or a rate uses
        a jump beyond the declared ``K``.
    AssumptionViolation
        Listing every failed clause of the rate assumptions.
    """
    planes = tuple(p if isinstance(p, RatePlane) else RatePlane.from_tables(**p) for p in planes)
    if not planes:
        raise BadParams("at least one plane is required")
    ups = [p.max_up for p in planes]
    if K is None:
        if len(set(ups)) != 1:
            raise InconsistentK(f"planes disagree on K: {ups}")
        K = ups[0]
    if any(u > K for u in ups):
        raise InconsistentK(f"declared K={K} but planes jump up by {max(ups)}")
    if K < 1:
        raise InconsistentK(f"K must be a positive integer, got {K}")

    problems = []
    for i, p in enumerate(planes, start=1):
        for kind in KINDS:
            if any(v < 0 or not np.isfinite(v) for v in p.table(kind).values()):
                problems.append(f"plane {i}: negative or non-finite {kind}-rate")
        if sum(p.a.values()) <= 0:
            problems.append(f"plane {i}: A_i(1) > 0 fails")
        if sum(p.d.values()) <= 0:
            problems.append(f"plane {i}: D_i(1) > 0 fails")
        if p.a.get(K, 0.0) != 0.0 and p.d.get(K, 0.0) != 0.0:
            problems.append(f"plane {i}: a_K = 0 or d_K = 0 fails")
        if p.b.get(K, 0.0) != p.c.get(K, 0.0) or p.b.get(K, 0.0) == 0.0:
            problems.append(f"plane {i}: b_K = c_K != 0 fails")
    c = len(planes)
    problems += _boundary_problems(boundary, c, K, max(p.max_down for p in planes), planes)
    if problems:
        raise AssumptionViolation(problems)
    symmetric = all(p == planes[0] for p in planes)
    return ProcessSpec(c, K, planes, boundary, symmetric, family, MappingProxyType(dict(params or {})))


def _boundary_problems(bnd: BoundarySpec, c, K, L, planes):
    problems = []
    vset = set(bnd.v_states)
    if len(vset) != len(bnd.v_states):
        problems.append("boundary: duplicate V labels")
    for t in bnd.v_generator:
        if t.source not in vset or t.target not in vset:
            problems.append(f"boundary: V transition {t.source}->{t.target} leaves V")
        if t.rate < 0:
            problems.append(f"boundary: negative rate {t.source}->{t.target}")
    for t in bnd.entry_rates:
        tgt = t.target
        if t.source not in vset:
            problems.append(f"boundary: entry transition from unknown state {t.source}")
        if not (is_w_state(tgt) and len(tgt) == c + 1 and all(x in (0, 1) for x in tgt[1:])):
            problems.append(f"boundary: entry target {tgt} is not a W state")
        elif not 0 <= tgt[0] < K:
            problems.append(f"boundary: V state {t.source} reaches level {tgt[0]} >= K")
        if t.rate < 0:
            problems.append(f"boundary: negative rate {t.source}->{tgt}")
    # every W -> V jump needs a destination
    for n0 in range(L):
        for bits in itertools.product((0, 1), repeat=c):
            w = (n0, *bits)
            for i, p in enumerate(planes, start=1):
                for kind in KINDS:
                    if KIND_MOVES[kind][0] != w[i]:
                        continue
                    for k in p.table(kind):
                        if n0 + k < 0:
                            dest = bnd.routing.get((w, i, kind, k))
                            if dest is None:
                                problems.append(f"boundary: no routing for {w} plane {i} {kind}[{k}]")
                            elif dest not in vset:
                                problems.append(f"boundary: routing target {dest} not in V")
    return problems


def out_transitions(spec: ProcessSpec, state) -> dict:
    """Outgoing rates of ``state`` as ``{(target, batch): rate}``.

    Self-loops (``b_0``, ``c_0``) are dropped. Positive ``n0`` jumps from
    W are tagged with their size in ``batch``.
    """
    out: dict = {}
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
                        target = spec.boundary.routing[(state, i, kind, k)]
                    else:
                        target = list(state)
                        target[0] = n0 + k
                        target[i] = after
                        target = tuple(target)
                    key = (target, max(k, 0))
                    out[key] = out.get(key, 0.0) + r
    else:
        for t in spec.boundary.v_generator:
            if t.source == state and t.target != state:
                key = (t.target, t.batch)
                out[key] = out.get(key, 0.0) + t.rate
        for t in spec.boundary.entry_rates:
            if t.source == state:
                key = (t.target, t.batch)
                out[key] = out.get(key, 0.0) + t.rate
    return out


# ---------------------------------------------------------------------------
# presets


def _per_server(value, c, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, c)
    if arr.size != c:
        raise BadParams(f"{name} needs 1 or c={c} values, got {arr.size}")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise BadParams(f"{name} must be positive")
    return arr


def _batch_rates(lam, K=None):
    if isinstance(lam, Mapping):
        top = max(int(k) for k in lam)
        K = K or top
        vec = np.zeros(K)
        for k, v in lam.items():
            if not 1 <= int(k) <= K:
                raise BadParams(f"batch size {k} outside 1..{K}")
            vec[int(k) - 1] = float(v)
    else:
        vec = np.atleast_1d(np.asarray(lam, dtype=float))
        if K is not None and vec.size != K:
            raise BadParams(f"lam has {vec.size} entries but K={K}")
    if vec.size < 1:
        raise BadParams("K < 1")
    if np.any(vec < 0) or not np.all(np.isfinite(vec)):
        raise BadParams("batch arrival rates must be nonnegative")
    if vec[-1] <= 0:
        raise BadParams("the rate of the largest batch size must be positive")
    return vec


def _split(lam, c, split):
    K = lam.size
    if split is None:
        return np.tile(lam / c, (c, 1))
    split = np.asarray(split, dtype=float).reshape(c, K)
    if np.any(split < 0) or not np.allclose(split.sum(axis=0), lam, rtol=1e-12, atol=0):
        raise BadParams("per-plane arrival rates must be nonnegative and add up to lam")
    return split


def hypo2_batch(c, lam, mu1, mu2, K=None, split=None) -> ProcessSpec:
    """Heterogeneous servers with two-phase service and Poisson batches.

    ``n0`` counts waiting jobs and ``n_i`` the completed phases at server
    ``i``. V holds every configuration with an idle server; an arriving
    batch fills idle servers in index order and the rest queue.
    """
    c = int(c)
    if c < 1:
        raise BadParams("c must be positive")
    lam = _batch_rates(lam, K)
    K = lam.size
    mu1 = _per_server(mu1, c, "mu1")
    mu2 = _per_server(mu2, c, "mu2")
    lam_i = _split(lam, c, split)
    planes = []
    for i in range(c):
        arr = {k + 1: lam_i[i, k] for k in range(K) if lam_i[i, k] > 0}
        planes.append(RatePlane.from_tables(a={0: mu1[i]}, b=arr, c=arr, d={-1: mu2[i]}))

    def label(conf):
        return "v:" + "".join(conf)

    v_states, v_gen, entry = [], [], []
    for conf in itertools.product("I01", repeat=c):
        if "I" not in conf:
            continue
        src = label(conf)
        v_states.append(src)
        for i, s in enumerate(conf):
            if s == "0":
                v_gen.append(VTransition(src, label(conf[:i] + ("1",) + conf[i + 1:]), mu1[i]))
            elif s == "1":
                v_gen.append(VTransition(src, label(conf[:i] + ("I",) + conf[i + 1:]), mu2[i]))
        idle = [i for i, s in enumerate(conf) if s == "I"]
        for k in range(1, K + 1):
            if lam[k - 1] <= 0:
                continue
            new = list(conf)
            for i in idle[:k]:
                new[i] = "0"
            if k < len(idle):
                v_gen.append(VTransition(src, label(new), lam[k - 1], k))
            else:
                w = (k - len(idle), *(int(s) for s in new))
                entry.append(VTransition(src, w, lam[k - 1], k))
    routing = {}
    for bits in itertools.product((0, 1), repeat=c):
        for i in range(c):
            if bits[i] == 1:
                conf = tuple("I" if j == i else str(b) for j, b in enumerate(bits))
                routing[((0, *bits), i + 1, "d", -1)] = label(conf)
    bnd = BoundarySpec(tuple(v_states), tuple(v_gen), tuple(entry), MappingProxyType(routing))
    params = {"c": c, "K": K, "lam": lam.tolist(), "mu1": mu1.tolist(), "mu2": mu2.tolist(),
              "split": lam_i.tolist()}
    return build_spec(planes, bnd, K=K, family="hypo2-batch", params=params)


def erlang2_hetero(lam, mu, c=None, split=None) -> ProcessSpec:
    """Heterogeneous servers with Erlang-2 service and single arrivals."""
    mu_arr = np.atleast_1d(np.asarray(mu, dtype=float))
    c = int(c) if c is not None else mu_arr.size
    lam = float(lam)
    if lam <= 0:
        raise BadParams("lam must be positive")
    spec = hypo2_batch(c, [lam], mu_arr, mu_arr, split=None if split is None else np.reshape(split, (c, 1)))
    params = {"c": c, "lam": lam, "mu": _per_server(mu_arr, c, "mu").tolist(),
              "split": [row[0] for row in spec.params["split"]]}
    return ProcessSpec(spec.c, spec.K, spec.planes, spec.boundary, spec.symmetric,
                       "erlang2-hetero", MappingProxyType(params))


def mxmc_breakdown(c, lam, mu, theta, nu, K=None) -> ProcessSpec:
    """Identical servers subject to breakdowns, batch Poisson arrivals.

    ``n_i = 1`` when server ``i`` is operative. Servers fail and get
    repaired independently of their load. In V (fewer than ``c`` jobs
    present) jobs are not bound to servers and ``min(n, #up)`` are served.
    """
    c = int(c)
    if c < 1:
        raise BadParams("c must be positive")
    lam = _batch_rates(lam, K)
    K = lam.size
    for name, v in (("mu", mu), ("theta", theta), ("nu", nu)):
        if not float(v) > 0:
            raise BadParams(f"{name} must be positive")
    mu, theta, nu = float(mu), float(theta), float(nu)
    arr = {k + 1: lam[k] / c for k in range(K) if lam[k] > 0}
    plane = RatePlane.from_tables(a={0: nu}, b=arr, c={**arr, -1: mu}, d={0: theta})

    def label(n, s):
        return f"v:{n}:" + "".join(map(str, s))

    v_states, v_gen, entry = [], [], []
    for n in range(c):
        for s in itertools.product((0, 1), repeat=c):
            src = label(n, s)
            v_states.append(src)
            for i in range(c):
                flip = s[:i] + (1 - s[i],) + s[i + 1:]
                v_gen.append(VTransition(src, label(n, flip), theta if s[i] else nu))
            for k in range(1, K + 1):
                if lam[k - 1] <= 0:
                    continue
                if n + k < c:
                    v_gen.append(VTransition(src, label(n + k, s), lam[k - 1], k))
                else:
                    entry.append(VTransition(src, (n + k - c, *s), lam[k - 1], k))
            busy = min(n, sum(s))
            if busy > 0:
                v_gen.append(VTransition(src, label(n - 1, s), mu * busy))
    routing = {}
    for s in itertools.product((0, 1), repeat=c):
        for i in range(c):
            if s[i] == 1:
                routing[((0, *s), i + 1, "c", -1)] = label(c - 1, s)
    bnd = BoundarySpec(tuple(v_states), tuple(v_gen), tuple(entry), MappingProxyType(routing))
    params = {"c": c, "K": K, "lam": lam.tolist(), "mu": mu, "theta": theta, "nu": nu}
    return build_spec([plane] * c, bnd, K=K, family="mxmc-breakdown", params=params)


def preset(family: str, **params) -> ProcessSpec:
    """Build one of the built-in queueing models by family name."""
    builders = {"erlang2-hetero": erlang2_hetero, "mxmc-breakdown": mxmc_breakdown,
                "hypo2-batch": hypo2_batch}
    if family not in builders:
        raise BadParams(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    try:
        return builders[family](**params)
    except TypeError as exc:
        raise BadParams(str(exc)) from exc


# ---------------------------------------------------------------------------
# structured-text documents


def _w_key(raw):
    return tuple(int(x) for x in raw)


def load_model(doc: Mapping) -> ProcessSpec:
    """Build a spec from a parsed model document (see README for the schema)."""
    family = doc.get("family")
    if family != "raw":
        return preset(family, **dict(doc.get("params", {})))
    planes = []
    for p in doc["planes"]:
        planes.append(RatePlane.from_tables(**{kind: {int(k): float(v) for k, v in p.get(kind, {}).items()}
                                               for kind in KINDS}))
    b = doc.get("boundary", {})

    def vt(entry, w_target=False):
        tgt = _w_key(entry["to"]) if w_target else entry["to"]
        return VTransition(entry["from"], tgt, float(entry["rate"]), int(entry.get("batch", 0)))

    routing = {(_w_key(r["from"]), int(r["plane"]), r["kind"], int(r["k"])): r["to"]
               for r in b.get("routing", [])}
    bnd = BoundarySpec(tuple(b.get("v_states", [])),
                       tuple(vt(e) for e in b.get("v_generator", [])),
                       tuple(vt(e, True) for e in b.get("entry_rates", [])),
                       MappingProxyType(routing))
    if "c" in doc and int(doc["c"]) != len(planes):
        raise BadParams(f"c={doc['c']} but {len(planes)} planes given")
    return build_spec(planes, bnd, K=doc.get("K"))


def load_model_file(path) -> ProcessSpec:
    return load_model(json.loads(Path(path).read_text(encoding="utf-8")))


def spec_to_document(spec: ProcessSpec) -> dict:
    """Serialize any spec in the ``raw`` document form."""
    bnd = spec.boundary
    return {
        "family": "raw",
        "c": spec.c,
        "K": spec.K,
        "planes": [{kind: {str(k): v for k, v in p.table(kind).items()} for kind in KINDS}
                   for p in spec.planes],
        "boundary": {
            "v_states": list(bnd.v_states),
            "v_generator": [{"from": t.source, "to": t.target, "rate": t.rate, "batch": t.batch}
                            for t in bnd.v_generator],
            "entry_rates": [{"from": t.source, "to": list(t.target), "rate": t.rate, "batch": t.batch}
                            for t in bnd.entry_rates],
            "routing": [{"from": list(w), "plane": i, "kind": kind, "k": k, "to": v}
                        for (w, i, kind, k), v in bnd.routing.items()],
        },
    }


# ---------------------------------------------------------------------------
# generating functions and ergodicity


@dataclass(frozen=True)
class GeneratingFunctions:
    """Polynomial coefficients of ``A_i, B_i, C_i, D_i`` in ascending powers.

    Row ``i`` of ``A`` holds plane ``i+1``; ``A[i, K-k]`` is ``a_{k,i}``.
    """

    K: int
    L: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @property
    def c(self) -> int:
        return self.A.shape[0]

    @property
    def degree(self) -> int:
        return self.K + self.L

    def at1(self, name):
        return getattr(self, name).sum(axis=1)

    def deriv1(self, name):
        return getattr(self, name) @ np.arange(self.degree + 1, dtype=float)

    @property
    def S(self) -> np.ndarray:
        return self.A.sum(1) + self.B.sum(1) + self.C.sum(1) + self.D.sum(1)

    def _zK(self, scale):
        out = np.zeros(self.degree + 1)
        out[self.K] = scale
        return out

    def F_poly(self, i) -> np.ndarray:
        s = self.A[i].sum() + self.B[i].sum() - self.C[i].sum() - self.D[i].sum()
        return self._zK(s) - self.B[i] + self.C[i]

    def disc_poly(self, i) -> np.ndarray:
        F = self.F_poly(i)
        return P.polyadd(P.polymul(F, F), 4.0 * P.polymul(self.A[i], self.D[i]))

    def R_poly(self, i) -> np.ndarray:
        """``B_i + C_i - z^K S_i``: the sign-free part of the root equation."""
        return self.B[i] + self.C[i] - self._zK(self.S[i])

    def eval(self, name, i, z):
        return P.polyval(z, getattr(self, name)[i])


def generating_functions(spec: ProcessSpec) -> GeneratingFunctions:
    K, L = spec.K, spec.L
    arrays = {kind: np.zeros((spec.c, K + L + 1)) for kind in KINDS}
    for i, p in enumerate(spec.planes):
        for kind in KINDS:
            for k, r in p.table(kind).items():
                arrays[kind][i, K - k] = r
    return GeneratingFunctions(K, L, arrays["a"], arrays["b"], arrays["c"], arrays["d"])


@dataclass(frozen=True)
class ErgodicityReport:
    drift: float
    ergodic: bool
    boundary: bool
    per_plane: tuple  # (pi0, pi1, contribution) per plane
    symmetric_drift: float | None = None


def check_ergodicity(gf: GeneratingFunctions, symmetric: bool | None = None) -> ErgodicityReport:
    """Mean-drift test. ``drift > 0`` means the level process drifts down.

    The per-plane contribution is weighted by the plane's own stationary
    phase distribution ``pi_i = (D_i(1), A_i(1)) / (A_i(1) + D_i(1))``.
    """
    K = gf.K
    A1, B1, C1, D1 = (gf.at1(n) for n in "ABCD")
    dA, dB, dC, dD = (gf.deriv1(n) for n in "ABCD")
    up = dA - K * A1 + dB - K * B1
    down = dC - K * C1 + dD - K * D1
    contrib = (D1 * up + A1 * down) / (A1 + D1)
    drift = float(contrib.sum())
    scale = float(np.max(gf.S)) * max(K + gf.L, 1)
    boundary = abs(drift) <= 1e-12 * scale
    per_plane = tuple((float(D1[i] / (A1[i] + D1[i])), float(A1[i] / (A1[i] + D1[i])), float(contrib[i]))
                      for i in range(gf.c))
    if symmetric is None:
        symmetric = all(np.array_equal(getattr(gf, n)[0], getattr(gf, n)[i]) for n in "ABCD" for i in range(gf.c))
    sym = float(D1[0] * up[0] + A1[0] * down[0]) if symmetric else None
    return ErgodicityReport(drift, bool(drift > 0 and not boundary), bool(boundary), per_plane, sym)
