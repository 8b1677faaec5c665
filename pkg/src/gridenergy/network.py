"""Network data model and case-file ingestion.

A Network is an immutable graph of buses and lines in per unit. Lines in
the lossless model carry a single positive parameter b (the negated series
susceptance); lossy lines additionally carry a conductance g. Injections
follow the generation-positive sign convention, so loads are negative.
"""
from __future__ import annotations

import enum
import json
import re
import warnings
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .errors import ParseError


class BusKind(enum.Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_inj: float = 0.0
    q_inj: float = 0.0
    v_set: float = 1.0


@dataclass(frozen=True)
class Line:
    i: int  # from-bus id
    j: int  # to-bus id
    b: float  # negated series susceptance, > 0
    g: float = 0.0  # conductance, >= 0 (0 when lossless)


@dataclass(frozen=True)
class IncidenceMatrix:
    """Bus-by-oriented-edge incidence: +1 at the from end, -1 at the to end."""

    matrix: np.ndarray

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.matrix))


class Network:
    """Immutable bus/line model with derived index arrays.

    Derived attributes (all positional, buses kept in input order):
      pq, pv, ns     index arrays of PQ, PV and non-slack buses
      slack_index    position of the slack bus
      edges          (m, 2) endpoint positions per line
      b, g           per-line parameters
      b_total        per-bus sum of incident b (B_i)
      lossy_ratio    g/b when uniform across lines (0.0 when lossless),
                     None when the ratio varies
    """

    def __init__(self, buses, lines):
        buses = tuple(buses)
        lines = tuple(lines)
        if not buses:
            raise ParseError("network has no buses")
        ids = [b.id for b in buses]
        if len(set(ids)) != len(ids):
            raise ParseError("duplicate bus ids")
        slack = [b for b in buses if b.kind is BusKind.SLACK]
        if len(slack) != 1:
            raise ParseError(f"expected exactly one slack bus, found {len(slack)}")
        for b in buses:
            if not (np.isfinite(b.p_inj) and np.isfinite(b.q_inj)):
                raise ParseError(f"bus {b.id}: non-finite injection")
            if b.kind is not BusKind.PQ and not b.v_set > 0:
                raise ParseError(f"bus {b.id}: voltage set-point must be positive")

        index = {bid: k for k, bid in enumerate(ids)}
        seen_pairs = set()
        for ln in lines:
            if ln.i not in index or ln.j not in index:
                raise ParseError(f"line {ln.i}-{ln.j}: unknown bus id")
            if ln.i == ln.j:
                raise ParseError(f"line {ln.i}-{ln.j}: self loop")
            if not (np.isfinite(ln.b) and ln.b > 0):
                raise ParseError(f"line {ln.i}-{ln.j}: b must be positive, got {ln.b}")
            if not (np.isfinite(ln.g) and ln.g >= 0):
                raise ParseError(f"line {ln.i}-{ln.j}: g must be nonnegative")
            pair = frozenset((ln.i, ln.j))
            if pair in seen_pairs:
                raise ParseError(
                    f"line {ln.i}-{ln.j}: duplicate pair (merge parallel lines first)")
            seen_pairs.add(pair)

        self.buses = buses
        self.lines = lines
        self.index = index
        n = len(buses)
        self.n_bus = n
        self.slack_index = index[slack[0].id]
        self.slack = slack[0].id
        kinds = [b.kind for b in buses]
        self.pq = np.array([k for k, kd in enumerate(kinds) if kd is BusKind.PQ], dtype=int)
        self.pv = np.array([k for k, kd in enumerate(kinds) if kd is BusKind.PV], dtype=int)
        self.ns = np.array([k for k in range(n) if k != self.slack_index], dtype=int)
        self.p_inj = np.array([b.p_inj for b in buses])
        self.q_inj = np.array([b.q_inj for b in buses])
        self.v_set = np.array([b.v_set for b in buses])
        self.edges = np.array([[index[ln.i], index[ln.j]] for ln in lines], dtype=int)
        self.edges = self.edges.reshape(len(lines), 2)
        self.b = np.array([ln.b for ln in lines])
        self.g = np.array([ln.g for ln in lines])
        self.b_total = np.zeros(n)
        if lines:
            np.add.at(self.b_total, self.edges[:, 0], self.b)
            np.add.at(self.b_total, self.edges[:, 1], self.b)

        self._check_connected()
        self.lossy_ratio = self._uniform_ratio()
        # Position of each pq bus within the pq ordering, -1 elsewhere.
        self.pq_index_of = np.full(n, -1, dtype=int)
        self.pq_index_of[self.pq] = np.arange(len(self.pq))

    def _check_connected(self):
        n = self.n_bus
        seen = np.zeros(n, dtype=bool)
        seen[self.slack_index] = True
        stack = [self.slack_index]
        adj = [[] for _ in range(n)]
        for f, t in self.edges:
            adj[f].append(t)
            adj[t].append(f)
        while stack:
            k = stack.pop()
            for nb in adj[k]:
                if not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
        if not seen.all():
            missing = [self.buses[k].id for k in np.flatnonzero(~seen)]
            raise ParseError(f"network is disconnected; unreachable buses {missing}")

    def _uniform_ratio(self):
        if len(self.lines) == 0 or np.all(self.g == 0.0):
            return 0.0
        ratios = self.g / self.b
        kappa = float(ratios[0])
        if np.max(np.abs(ratios - kappa)) <= 1e-9:
            return kappa
        return None

    @property
    def is_lossless(self) -> bool:
        return self.lossy_ratio == 0.0

    def bus_at(self, pos: int) -> Bus:
        return self.buses[pos]

    def with_buses(self, buses) -> "Network":
        return Network(buses, self.lines)

    def __repr__(self):
        return (f"Network(n_bus={self.n_bus}, n_line={len(self.lines)}, "
                f"slack={self.slack})")


def _merge_parallel(lines) -> list[Line]:
    merged: dict[frozenset, Line] = {}
    order: list[frozenset] = []
    for ln in lines:
        key = frozenset((ln.i, ln.j))
        if key in merged:
            old = merged[key]
            merged[key] = replace(old, b=old.b + ln.b, g=old.g + ln.g)
        else:
            merged[key] = ln
            order.append(key)
    return [merged[k] for k in order]


# ---------------------------------------------------------------------------
# native JSON format

_KINDS = {"slack": BusKind.SLACK, "pv": BusKind.PV, "pq": BusKind.PQ}


def parse_native(text: str) -> Network:
    """Parse the native JSON case format (see serialize_native)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "buses" not in doc or "lines" not in doc:
        raise ParseError("document must contain 'buses' and 'lines'")
    buses = []
    for k, rec in enumerate(doc["buses"]):
        try:
            kind = _KINDS[rec["kind"]]
            buses.append(Bus(id=int(rec["id"]), kind=kind,
                             p_inj=float(rec.get("p", 0.0)),
                             q_inj=float(rec.get("q", 0.0)),
                             v_set=float(rec.get("v", 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"buses[{k}]: {exc}") from exc
    lines = []
    for k, rec in enumerate(doc["lines"]):
        try:
            lines.append(Line(i=int(rec["from"]), j=int(rec["to"]),
                              b=float(rec["b"]), g=float(rec.get("g", 0.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"lines[{k}]: {exc}") from exc
    return Network(buses, _merge_parallel(lines))


def serialize_native(n: Network) -> str:
    doc = {
        "buses": [
            {"id": b.id, "kind": b.kind.value, "p": b.p_inj, "q": b.q_inj,
             "v": b.v_set}
            for b in n.buses
        ],
        "lines": [
            {"from": ln.i, "to": ln.j, "b": ln.b, "g": ln.g} for ln in n.lines
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# MATPOWER subset

_MATRIX_RE = r"mpc\.%s\s*=\s*\[(.*?)\];"

# Standard column positions.
_BUS_I, _BUS_TYPE, _PD, _QD = 0, 1, 2, 3
_GS, _BS = 4, 5
_GEN_BUS, _PG, _QG, _VG, _GEN_STATUS = 0, 1, 2, 5, 7
_F_BUS, _T_BUS, _BR_R, _BR_X, _BR_B, _TAP, _SHIFT, _BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10


def _read_matrix(text: str, name: str) -> list[list[float]]:
    m = re.search(_MATRIX_RE % name, text, re.DOTALL)
    if m is None:
        raise ParseError(f"mpc.{name} matrix not found")
    rows = []
    for rn, raw in enumerate(m.group(1).split(";")):
        raw = raw.split("%")[0].strip()
        if not raw:
            continue
        try:
            rows.append([float(v) for v in raw.replace(",", " ").split()])
        except ValueError as exc:
            raise ParseError(f"mpc.{name} row {rn + 1}: {exc}") from exc
    return rows


def parse_matpower(text: str) -> Network:
    """Parse the MATPOWER m-file subset: baseMVA plus bus/gen/branch matrices.

    Shunts, taps, phase shifts and line charging are outside the line model
    and are dropped with a warning. Branch parameters become b = X/(R^2+X^2)
    and g = R/(R^2+X^2); loads are negated into injections.
    """
    text = "\n".join(ln.split("%")[0] for ln in text.splitlines())
    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9eE().+-]+)\s*;", text)
    if m is None:
        raise ParseError("mpc.baseMVA not found")
    base = float(m.group(1))
    if base <= 0:
        raise ParseError(f"baseMVA must be positive, got {base}")

    bus_rows = _read_matrix(text, "bus")
    gen_rows = _read_matrix(text, "gen")
    branch_rows = _read_matrix(text, "branch")

    gens: dict[int, list[list[float]]] = {}
    for rn, row in enumerate(gen_rows):
        if len(row) <= _GEN_STATUS:
            raise ParseError(f"gen row {rn + 1}: too few columns")
        if row[_GEN_STATUS] <= 0:
            continue
        gens.setdefault(int(row[_GEN_BUS]), []).append(row)

    buses = []
    kinds_seen = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
    n_slack = 0
    for rn, row in enumerate(bus_rows):
        if len(row) <= _QD:
            raise ParseError(f"bus row {rn + 1}: too few columns")
        bid = int(row[_BUS_I])
        btype = int(row[_BUS_TYPE])
        if btype not in kinds_seen:
            raise ParseError(f"bus {bid}: unsupported type {btype}")
        kind = kinds_seen[btype]
        if kind is BusKind.SLACK:
            n_slack += 1
        if len(row) > _BS and (row[_GS] != 0 or row[_BS] != 0):
            warnings.warn(f"bus {bid}: shunt element ignored", stacklevel=2)
        pg = sum(g[_PG] for g in gens.get(bid, []))
        qg = sum(g[_QG] for g in gens.get(bid, []))
        v_set = 1.0
        if kind is not BusKind.PQ:
            vgs = [g[_VG] for g in gens.get(bid, [])]
            if vgs:
                if max(vgs) - min(vgs) > 1e-9:
                    raise ParseError(f"bus {bid}: generators disagree on VG")
                v_set = vgs[0]
        buses.append(Bus(id=bid, kind=kind,
                         p_inj=(pg - row[_PD]) / base,
                         q_inj=(qg - row[_QD]) / base,
                         v_set=v_set))
    if n_slack != 1:
        raise ParseError(f"expected exactly one slack bus, found {n_slack}")

    lines = []
    tap_warned = charge_warned = False
    for rn, row in enumerate(branch_rows):
        if len(row) <= _BR_X:
            raise ParseError(f"branch row {rn + 1}: too few columns")
        if len(row) > _BR_STATUS and row[_BR_STATUS] == 0:
            continue
        r, x = row[_BR_R], row[_BR_X]
        if x == 0:
            raise ParseError(f"branch row {rn + 1}: zero reactance")
        if not tap_warned and len(row) > _SHIFT and (
                (row[_TAP] not in (0.0, 1.0)) or row[_SHIFT] != 0.0):
            warnings.warn("transformer tap/shift columns ignored", stacklevel=2)
            tap_warned = True
        if not charge_warned and len(row) > _BR_B and row[_BR_B] != 0.0:
            warnings.warn("line-charging susceptance ignored", stacklevel=2)
            charge_warned = True
        den = r * r + x * x
        lines.append(Line(i=int(row[_F_BUS]), j=int(row[_T_BUS]),
                          b=x / den, g=r / den))
    return Network(buses, _merge_parallel(lines))


# ---------------------------------------------------------------------------
# transformations

def losslessify(n: Network) -> Network:
    """Zero out all conductances; susceptances are kept as they are."""
    return Network(n.buses, [replace(ln, g=0.0) for ln in n.lines])


def absorb_setpoints(n: Network) -> Network:
    """Rescale line susceptances by the fixed-voltage set-points they touch.

    Every PV/slack set-point becomes 1 and each line b is replaced by
    b * v_i * v_j, with v = 1 at PQ ends. The active power balances of the
    rescaled network match the original exactly; the reactive self terms at
    PQ buses next to non-unit set-points are rescaled along with the line,
    which is the standard flat-set-point normalization of this model.
    """
    v_eff = {b.id: (b.v_set if b.kind is not BusKind.PQ else 1.0) for b in n.buses}
    buses = [replace(b, v_set=1.0) if b.kind is not BusKind.PQ else b
             for b in n.buses]
    lines = [replace(ln, b=ln.b * v_eff[ln.i] * v_eff[ln.j]) for ln in n.lines]
    return Network(buses, lines)


def incidence(n: Network) -> IncidenceMatrix:
    a = np.zeros((n.n_bus, len(n.lines)))
    for k, (f, t) in enumerate(n.edges):
        a[f, k] = 1.0
        a[t, k] = -1.0
    return IncidenceMatrix(a)


def is_tree(n: Network) -> bool:
    return len(n.lines) == n.n_bus - 1


def scale_injections(n: Network, kappa: float, delta: float = 1.0) -> Network:
    """Scale active injections by kappa at every non-slack bus and reactive
    injections by delta*kappa at PQ buses."""
    buses = []
    for b in n.buses:
        if b.kind is BusKind.SLACK:
            buses.append(b)
        elif b.kind is BusKind.PV:
            buses.append(replace(b, p_inj=kappa * b.p_inj))
        else:
            buses.append(replace(b, p_inj=kappa * b.p_inj,
                                 q_inj=delta * kappa * b.q_inj))
    return Network(buses, n.lines)


# ---------------------------------------------------------------------------
# bundled cases

BUNDLED_CASES = ("twobus", "threebus", "threebus-tree", "ieee14", "ieee118")


def load_case(name_or_path: str) -> Network:
    """Load a bundled case by name or any case file by path.

    Files ending in .m are read as MATPOWER text, everything else as the
    native JSON format.
    """
    if name_or_path in BUNDLED_CASES:
        fname = {"twobus": "twobus.json",
                 "threebus": "threebus.json",
                 "threebus-tree": "threebus_tree.json",
                 "ieee14": "case14.m",
                 "ieee118": "case118.m"}[name_or_path]
        text = resources.files("gridenergy.cases").joinpath(fname).read_text()
        path = fname
    else:
        try:
            with open(name_or_path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ParseError(f"cannot read case file: {exc}") from exc
        path = name_or_path
    if path.endswith(".m"):
        return parse_matpower(text)
    return parse_native(text)
