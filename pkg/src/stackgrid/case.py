"""Power-system case data: parsing, validation and canonical per-unit form.

Two on-disk formats are understood:

* a native JSON document (layout in ``docs/formats.md``), and
* MATPOWER-style ``.m`` case text (``baseMVA``, ``bus``, ``gen``, ``branch``).

Both produce the same immutable :class:`PowerSystemCase`. Demands, generation
and bus shunts are divided by ``base_mva`` at parse time; every downstream
module only ever sees per-unit quantities. Buses are stored load-first
(ascending id), followed by generator and slack buses (ascending id).
"""

from __future__ import annotations

import json
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

log = logging.getLogger(__name__)

SLACK = "slack"
GENERATOR = "generator"
LOAD = "load"
BUS_KINDS = (SLACK, GENERATOR, LOAD)

_MATPOWER_KIND = {1: LOAD, 2: GENERATOR, 3: SLACK}
_KIND_MATPOWER = {v: k for k, v in _MATPOWER_KIND.items()}


class CaseError(ValueError):
    """Raised when case data is malformed or violates a case invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p_demand: float = 0.0
    q_demand: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    v_setpoint: float = 1.0
    v_min: float = 0.9
    v_max: float = 1.1
    p_gen: float = 0.0

    @property
    def is_load(self) -> bool:
        return self.kind == LOAD


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0


@dataclass(frozen=True)
class PowerSystemCase:
    """A validated network in canonical load-first order."""

    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    _index: dict[int, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {b.id: i for i, b in enumerate(self.buses)})

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_loads(self) -> int:
        """K, the number of load (PQ) buses."""
        return sum(1 for b in self.buses if b.is_load)

    @property
    def n_generators(self) -> int:
        """M, the number of generator buses including the slack."""
        return self.n_buses - self.n_loads

    @property
    def load_ids(self) -> list[int]:
        return [b.id for b in self.buses if b.is_load]

    @property
    def generator_ids(self) -> list[int]:
        return [b.id for b in self.buses if not b.is_load]

    @property
    def slack_id(self) -> int:
        return next(b.id for b in self.buses if b.kind == SLACK)

    def index_of(self, bus_id: int) -> int:
        """Internal 0-based index of an external bus id."""
        try:
            return self._index[bus_id]
        except KeyError:
            raise CaseError(f"unknown bus id {bus_id}") from None

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.index_of(bus_id)]

    def load_position(self, bus_id: int) -> int:
        """Position of a load bus within the K-vector of loads."""
        i = self.index_of(bus_id)
        if not self.buses[i].is_load:
            raise CaseError(f"bus {bus_id} is not a load bus")
        return i

    @property
    def q_load(self) -> np.ndarray:
        """Nominal reactive demands of the K load buses, pu."""
        return np.array([b.q_demand for b in self.buses if b.is_load], dtype=float)

    @property
    def v_gen(self) -> np.ndarray:
        """Voltage setpoints of the M generator buses, pu."""
        return np.array([b.v_setpoint for b in self.buses if not b.is_load], dtype=float)

    def with_buses(self, buses: Iterable[Bus], name: str | None = None) -> "PowerSystemCase":
        return make_case(name or self.name, self.base_mva, buses, self.branches)


def _canonical_order(buses: Iterable[Bus]) -> tuple[Bus, ...]:
    buses = list(buses)
    return tuple(sorted(buses, key=lambda b: (not b.is_load, b.id)))


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    unreachable: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return bool(self.errors or self.warnings)

    def __iter__(self):
        yield from self.errors
        yield from self.warnings


def _check(buses: list[Bus], branches: list[Branch]) -> ValidationReport:
    rep = ValidationReport()
    seen: dict[int, int] = {}
    for b in buses:
        seen[b.id] = seen.get(b.id, 0) + 1
        if b.kind not in BUS_KINDS:
            rep.errors.append(f"bus {b.id}: unknown kind {b.kind!r}")
        if b.id <= 0:
            rep.errors.append(f"bus {b.id}: id must be a positive integer")
        if not b.v_min < b.v_max:
            rep.errors.append(f"bus {b.id}: v_min {b.v_min} must be below v_max {b.v_max}")
        if b.kind != LOAD and not b.v_min <= b.v_setpoint <= b.v_max:
            rep.errors.append(
                f"bus {b.id}: voltage setpoint {b.v_setpoint} outside [{b.v_min}, {b.v_max}]"
            )
        if b.kind == LOAD and b.q_demand < 0:
            rep.warnings.append(f"bus {b.id}: capacitive reactive demand {b.q_demand:g} pu")
    dups = sorted(i for i, n in seen.items() if n > 1)
    if dups:
        rep.errors.append(f"duplicate bus ids: {dups}")
    slacks = sorted(b.id for b in buses if b.kind == SLACK)
    if len(slacks) != 1:
        rep.errors.append(f"exactly one slack bus required, found {len(slacks)}: {slacks}")
    ids = set(seen)
    adj: dict[int, set[int]] = {i: set() for i in ids}
    for n, br in enumerate(branches):
        tag = f"branch {n} ({br.from_bus}-{br.to_bus})"
        bad = [e for e in (br.from_bus, br.to_bus) if e not in ids]
        if bad:
            rep.errors.append(f"{tag}: references unknown bus {bad}")
            continue
        if br.from_bus == br.to_bus:
            rep.errors.append(f"{tag}: from_bus equals to_bus")
        if br.x == 0:
            rep.errors.append(f"{tag}: zero reactance")
        if br.tap_ratio <= 0:
            rep.errors.append(f"{tag}: tap ratio must be positive")
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    if ids:
        start = slacks[0] if slacks else min(ids)
        reached = {start}
        todo = deque([start])
        while todo:
            for nb in adj[todo.popleft()]:
                if nb not in reached:
                    reached.add(nb)
                    todo.append(nb)
        rep.unreachable = sorted(ids - reached)
        if rep.unreachable:
            rep.errors.append(f"network disconnected; unreachable buses: {rep.unreachable}")
    if not any(b.kind == LOAD for b in buses):
        rep.errors.append("case has no load buses")
    return rep


def validate_case(case: PowerSystemCase) -> ValidationReport:
    """Collect invariant violations without raising or mutating ``case``."""
    return _check(list(case.buses), list(case.branches))


def make_case(
    name: str, base_mva: float, buses: Iterable[Bus], branches: Iterable[Branch]
) -> PowerSystemCase:
    """Build a case, raising :class:`CaseError` on any invariant violation."""
    buses = list(buses)
    branches = list(branches)
    if not base_mva > 0:
        raise CaseError(f"base_mva must be positive, got {base_mva}")
    rep = _check(buses, branches)
    if rep.errors:
        raise CaseError("; ".join(rep.errors))
    for w in rep.warnings:
        log.debug("%s: %s", name, w)
    return PowerSystemCase(name, float(base_mva), _canonical_order(buses), tuple(branches))


# --- native JSON --------------------------------------------------------------

_TOP_KEYS = {"name", "base_mva", "buses", "branches"}
_BUS_KEYS = {"id", "kind", "pd", "qd", "gs", "bs", "vset", "vmin", "vmax", "pg"}
_BUS_REQUIRED = {"id", "kind"}
_BRANCH_KEYS = {"from", "to", "r", "x", "b", "tap"}
_BRANCH_REQUIRED = {"from", "to", "r", "x"}


def _num(obj: dict, key: str, where: str, default: float | None = None) -> float:
    if key not in obj:
        if default is None:
            raise CaseError(f"{where}: missing field {key!r}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseError(f"{where}: field {key!r} must be a number, got {type(v).__name__}")
    return float(v)


def _keys(obj: Any, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise CaseError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise CaseError(f"{where}: unknown keys {unknown}")
    missing = sorted(required - set(obj))
    if missing:
        raise CaseError(f"{where}: missing field(s) {missing}")


def parse_native_case(text: str) -> PowerSystemCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"malformed JSON: {exc}") from None
    _keys(doc, _TOP_KEYS, _TOP_KEYS, "document")
    if not isinstance(doc["name"], str):
        raise CaseError("document: field 'name' must be a string")
    base = _num(doc, "base_mva", "document")
    if not isinstance(doc["buses"], list) or not isinstance(doc["branches"], list):
        raise CaseError("document: 'buses' and 'branches' must be arrays")
    buses = []
    for n, ob in enumerate(doc["buses"]):
        where = f"buses[{n}]"
        _keys(ob, _BUS_KEYS, _BUS_REQUIRED, where)
        if isinstance(ob["id"], bool) or not isinstance(ob["id"], int):
            raise CaseError(f"{where}: field 'id' must be an integer")
        if ob["kind"] not in BUS_KINDS:
            raise CaseError(f"{where}: field 'kind' must be one of {BUS_KINDS}")
        buses.append(
            Bus(
                id=ob["id"],
                kind=ob["kind"],
                p_demand=_num(ob, "pd", where, 0.0) / base,
                q_demand=_num(ob, "qd", where, 0.0) / base,
                shunt_g=_num(ob, "gs", where, 0.0) / base,
                shunt_b=_num(ob, "bs", where, 0.0) / base,
                v_setpoint=_num(ob, "vset", where, 1.0),
                v_min=_num(ob, "vmin", where, 0.9),
                v_max=_num(ob, "vmax", where, 1.1),
                p_gen=_num(ob, "pg", where, 0.0) / base,
            )
        )
    branches = []
    for n, ob in enumerate(doc["branches"]):
        where = f"branches[{n}]"
        _keys(ob, _BRANCH_KEYS, _BRANCH_REQUIRED, where)
        for key in ("from", "to"):
            if isinstance(ob[key], bool) or not isinstance(ob[key], int):
                raise CaseError(f"{where}: field {key!r} must be an integer")
        branches.append(
            Branch(
                ob["from"],
                ob["to"],
                _num(ob, "r", where),
                _num(ob, "x", where),
                _num(ob, "b", where, 0.0),
                _num(ob, "tap", where, 1.0) or 1.0,
            )
        )
    return make_case(doc["name"], base, buses, branches)


def _mw(v: float, base: float) -> float:
    # rounding keeps parse(serialize(case)) exact for data entered in MW
    return round(v * base, 10) + 0.0


def serialize_native_case(case: PowerSystemCase) -> str:
    base = case.base_mva
    buses = []
    for b in sorted(case.buses, key=lambda b: b.id):
        buses.append(
            {
                "id": b.id,
                "kind": b.kind,
                "pd": _mw(b.p_demand, base),
                "qd": _mw(b.q_demand, base),
                "gs": _mw(b.shunt_g, base),
                "bs": _mw(b.shunt_b, base),
                "pg": _mw(b.p_gen, base),
                "vset": b.v_setpoint,
                "vmin": b.v_min,
                "vmax": b.v_max,
            }
        )
    branches = [
        {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b_charging,
         "tap": br.tap_ratio}
        for br in case.branches
    ]
    doc = {"name": case.name, "base_mva": base, "buses": buses, "branches": branches}
    return json.dumps(doc, indent=1) + "\n"


# --- MATPOWER -----------------------------------------------------------------

_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")
# minimum column counts of the standard layout
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix(body: str, block: str) -> list[list[float]]:
    rows = []
    for n, raw in enumerate(re.split(r"[;\n]", body)):
        raw = raw.strip()
        if not raw:
            continue
        try:
            vals = [float(tok) for tok in raw.replace(",", " ").split()]
        except ValueError:
            raise CaseError(f"mpc.{block}: non-numeric entry in row {raw!r}") from None
        rows.append(vals)
    if not rows:
        raise CaseError(f"mpc.{block}: empty block")
    width = len(rows[0])
    if width < _MIN_COLS[block]:
        raise CaseError(f"mpc.{block}: expected at least {_MIN_COLS[block]} columns, got {width}")
    for row in rows:
        if len(row) != width:
            raise CaseError(
                f"mpc.{block}: row {row} has {len(row)} columns, expected {width}"
            )
    return rows


def parse_matpower_case(text: str, name: str | None = None) -> PowerSystemCase:
    text = _strip_comments(text)
    scalars = dict(_SCALAR_RE.findall(text))
    if "baseMVA" not in scalars:
        raise CaseError("missing block: mpc.baseMVA")
    base = float(scalars["baseMVA"])
    blocks = {k: v for k, v in _BLOCK_RE.findall(text)}
    for req in ("bus", "gen", "branch"):
        if req not in blocks:
            raise CaseError(f"missing block: mpc.{req}")
    for other in sorted(set(blocks) - {"bus", "gen", "branch"}):
        log.debug("ignoring mpc.%s block", other)
    if name is None:
        m = re.search(r"function\s+\w+\s*=\s*(\w+)", text)
        name = m.group(1) if m else "case"

    gen_v: dict[int, float] = {}
    gen_p: dict[int, float] = {}
    for row in _matrix(blocks["gen"], "gen"):
        if row[7] <= 0:
            continue
        bus = int(row[0])
        gen_v.setdefault(bus, row[5])
        gen_p[bus] = gen_p.get(bus, 0.0) + row[1]

    buses = []
    for row in _matrix(blocks["bus"], "bus"):
        bid, btype = int(row[0]), int(row[1])
        if btype not in _MATPOWER_KIND:
            raise CaseError(f"bus {bid}: unsupported bus type {btype}")
        kind = _MATPOWER_KIND[btype]
        is_gen = kind != LOAD
        buses.append(
            Bus(
                id=bid,
                kind=kind,
                p_demand=row[2] / base,
                q_demand=row[3] / base,
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
                v_setpoint=gen_v.get(bid, row[7]) if is_gen else row[7],
                v_min=row[12],
                v_max=row[11],
                p_gen=gen_p.get(bid, 0.0) / base if is_gen else 0.0,
            )
        )

    branches = []
    for row in _matrix(blocks["branch"], "branch"):
        f, t = int(row[0]), int(row[1])
        if row[10] == 0:
            log.debug("skipping out-of-service branch %d-%d", f, t)
            continue
        if row[9] != 0:
            raise CaseError(
                f"branch {f}-{t}: phase shift {row[9]} deg unsupported (phase shifters rejected)"
            )
        branches.append(Branch(f, t, row[2], row[3], row[4], row[8] or 1.0))
    return make_case(name, base, buses, branches)


def serialize_matpower_case(case: PowerSystemCase) -> str:
    base = case.base_mva
    out = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {base:g};", ""]
    out.append("%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin")
    out.append("mpc.bus = [")
    for b in sorted(case.buses, key=lambda b: b.id):
        out.append(
            f"\t{b.id}\t{_KIND_MATPOWER[b.kind]}\t{_mw(b.p_demand, base):.10g}\t"
            f"{_mw(b.q_demand, base):.10g}\t{_mw(b.shunt_g, base):.10g}\t"
            f"{_mw(b.shunt_b, base):.10g}\t1\t{b.v_setpoint:.10g}\t0\t345\t1\t"
            f"{b.v_max:.10g}\t{b.v_min:.10g};"
        )
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for b in sorted(case.buses, key=lambda b: b.id):
        if not b.is_load:
            out.append(
                f"\t{b.id}\t{_mw(b.p_gen, base):.10g}\t0\t9999\t-9999\t{b.v_setpoint:.10g}"
                f"\t{base:g}\t1\t9999\t0;"
            )
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax",
            "mpc.branch = ["]
    for br in case.branches:
        tap = 0 if br.tap_ratio == 1.0 else br.tap_ratio
        out.append(
            f"\t{br.from_bus}\t{br.to_bus}\t{br.r:.10g}\t{br.x:.10g}\t{br.b_charging:.10g}"
            f"\t0\t0\t0\t{tap:.10g}\t0\t1\t-360\t360;"
        )
    out += ["];", ""]
    return "\n".join(out)


def load_case(path, fmt: str = "auto") -> PowerSystemCase:
    """Read a case file; ``fmt`` is ``native``, ``matpower`` or ``auto`` (by suffix)."""
    from pathlib import Path

    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if fmt == "auto":
        fmt = "matpower" if path.suffix.lower() == ".m" else "native"
    if fmt == "native":
        return parse_native_case(text)
    if fmt == "matpower":
        return parse_matpower_case(text, name=path.stem)
    raise CaseError(f"unknown case format {fmt!r}")
