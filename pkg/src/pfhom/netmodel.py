"""Power-system network model and its JSON file format.

All quantities are per unit. A network is immutable once built; derived
counts (number of buses, generators, parameterized buses) are computed on
demand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

BUS_KINDS = ("slack", "pv", "pq")

_BUS_KEYS = {"id", "kind", "vset", "pgen", "pload", "qload", "injection"}
_INJ_KEYS = {"param", "unit_p", "unit_q"}
_BRANCH_KEYS = {"from", "to", "r", "x"}
_TOP_KEYS = {"base_mva", "buses", "branches"}


class NetworkError(ValueError):
    """Raised for malformed or semantically invalid network descriptions."""


class NetworkSyntaxError(NetworkError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"syntax error at line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Injection:
    """Parameter-scaled power injection: ``lambda * (unit_p + j unit_q)``.

    On PV buses only ``unit_p`` is used, the reactive power there is an
    unknown of the power flow. On PQ buses both components apply.
    """

    param: str
    unit_p: float = 0.0
    unit_q: float = 0.0


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    vset: float = 0.0
    pgen: float = 0.0
    pload: float = 0.0
    qload: float = 0.0
    injection: Injection | None = None

    @property
    def is_generator(self) -> bool:
        return self.kind in ("slack", "pv")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    _adm: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        validate(self)
        adm = {}
        for br in self.branches:
            y = br.admittance
            adm[(br.from_bus, br.to_bus)] = y
            adm[(br.to_bus, br.from_bus)] = y
        object.__setattr__(self, "_adm", adm)

    @property
    def N(self) -> int:
        return len(self.buses)

    @property
    def n(self) -> int:
        """Number of generator buses (slack plus PV)."""
        return sum(1 for b in self.buses if b.is_generator)

    @property
    def n_r(self) -> int:
        return sum(1 for b in self.buses if b.injection is not None)

    @property
    def slack(self) -> Bus:
        return next(b for b in self.buses if b.kind == "slack")

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def neighbors(self, bus_id: int) -> list[int]:
        out = []
        for br in self.branches:
            if br.from_bus == bus_id:
                out.append(br.to_bus)
            elif br.to_bus == bus_id:
                out.append(br.from_bus)
        return sorted(out)

    def param_names(self) -> list[str]:
        """Distinct parameter names in bus order of first appearance."""
        names: list[str] = []
        for b in self.buses:
            if b.injection is not None and b.injection.param not in names:
                names.append(b.injection.param)
        return names


def validate(net: Network) -> None:
    ids = [b.id for b in net.buses]
    seen = set()
    for b in net.buses:
        if not isinstance(b.id, int) or b.id <= 0:
            raise NetworkError(f"bus {b.id!r}: id must be a positive integer")
        if b.id in seen:
            raise NetworkError(f"duplicate bus id {b.id}")
        seen.add(b.id)
        if b.kind not in BUS_KINDS:
            raise NetworkError(f"bus {b.id}: unknown kind {b.kind!r}")
        if b.is_generator and not b.vset > 0:
            raise NetworkError(f"bus {b.id}: vset must be positive")
        if b.injection is not None and b.kind == "slack":
            raise NetworkError(f"bus {b.id}: injection not allowed on the slack bus")
        for name in ("vset", "pgen", "pload", "qload"):
            if not math.isfinite(getattr(b, name)):
                raise NetworkError(f"bus {b.id}: {name} is not finite")
    slacks = [b for b in net.buses if b.kind == "slack"]
    if len(slacks) != 1:
        raise NetworkError(f"exactly one slack bus required, found {len(slacks)}")
    if slacks[0].vset != 1.0:
        raise NetworkError(f"slack bus {slacks[0].id}: vset must be 1")
    if not net.base_mva > 0:
        raise NetworkError("base_mva must be positive")

    pairs = set()
    for br in net.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise NetworkError(
                    f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus}: self loop")
        if br.r == 0 and br.x == 0:
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus}: zero impedance")
        key = frozenset((br.from_bus, br.to_bus))
        if key in pairs:
            raise NetworkError(
                f"branch {br.from_bus}-{br.to_bus}: parallel branch, combine first")
        pairs.add(key)

    # connectivity
    adj: dict[int, set[int]] = {i: set() for i in ids}
    for br in net.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    stack, reached = [ids[0]], {ids[0]}
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in reached:
                reached.add(nb)
                stack.append(nb)
    if len(reached) != len(ids):
        missing = sorted(set(ids) - reached)
        raise NetworkError(f"network is disconnected; unreachable buses {missing}")


def branch_admittance(net: Network, j: int, k: int) -> complex:
    """Series admittance between buses ``j`` and ``k``, exactly 0 if unconnected."""
    if j == k:
        raise ValueError("branch_admittance needs two distinct buses")
    return net._adm.get((j, k), 0j)


def bus_injections(net: Network, voltages: dict[int, complex]) -> dict[int, complex]:
    """Net complex power injected at every bus, ``V_j conj(sum_k y_jk (V_j - V_k))``."""
    out = {}
    for b in net.buses:
        vj = voltages[b.id]
        cur = sum(branch_admittance(net, b.id, k) * (vj - voltages[k])
                  for k in net.neighbors(b.id))
        out[b.id] = vj * np.conj(cur)
    return out


def _num(obj: dict, key: str, where: str) -> float:
    v = obj.get(key, 0.0)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise NetworkError(f"{where}: {key} must be a number")
    return float(v)


def _check_keys(obj: Any, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise NetworkError(f"{where}: expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise NetworkError(f"{where}: unknown keys {extra}")


def network_from_dict(doc: dict) -> Network:
    _check_keys(doc, _TOP_KEYS, "network")
    buses = []
    for pos, raw in enumerate(doc.get("buses", [])):
        where = f"bus #{pos}" if not isinstance(raw, dict) else f"bus {raw.get('id', '#' + str(pos))}"
        _check_keys(raw, _BUS_KEYS, where)
        bid = raw.get("id")
        if isinstance(bid, bool) or not isinstance(bid, int):
            raise NetworkError(f"{where}: id must be an integer")
        inj = None
        if raw.get("injection") is not None:
            ri = raw["injection"]
            _check_keys(ri, _INJ_KEYS, f"{where} injection")
            if not isinstance(ri.get("param"), str) or not ri["param"]:
                raise NetworkError(f"{where} injection: param must be a non-empty string")
            inj = Injection(ri["param"], _num(ri, "unit_p", where), _num(ri, "unit_q", where))
        buses.append(Bus(
            id=bid,
            kind=raw.get("kind"),
            vset=_num(raw, "vset", where),
            pgen=_num(raw, "pgen", where),
            pload=_num(raw, "pload", where),
            qload=_num(raw, "qload", where),
            injection=inj,
        ))
    branches = []
    for pos, raw in enumerate(doc.get("branches", [])):
        where = f"branch #{pos}"
        _check_keys(raw, _BRANCH_KEYS, where)
        f, t = raw.get("from"), raw.get("to")
        if not isinstance(f, int) or not isinstance(t, int):
            raise NetworkError(f"{where}: from/to must be bus ids")
        branches.append(Branch(f, t, _num(raw, "r", where), _num(raw, "x", where)))
    return Network(tuple(buses), tuple(branches), _num(doc, "base_mva", "network") or 100.0)


def parse_network(text: str) -> Network:
    """Parse and validate the JSON network format."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return network_from_dict(doc)


def load_network(path: str | Path) -> Network:
    return parse_network(Path(path).read_text(encoding="utf-8"))


def network_to_dict(net: Network) -> dict:
    buses = []
    for b in net.buses:
        d: dict[str, Any] = {"id": b.id, "kind": b.kind}
        if b.is_generator:
            d["vset"] = b.vset
        if b.pgen:
            d["pgen"] = b.pgen
        if b.pload:
            d["pload"] = b.pload
        if b.qload:
            d["qload"] = b.qload
        if b.injection is not None:
            d["injection"] = {"param": b.injection.param,
                              "unit_p": b.injection.unit_p,
                              "unit_q": b.injection.unit_q}
        buses.append(d)
    branches = [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x}
                for br in net.branches]
    return {"base_mva": net.base_mva, "buses": buses, "branches": branches}


def serialize_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2) + "\n"


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture, e.g. ``fixture_path("three_bus")``."""
    return Path(__file__).parent / "data" / f"{name}.json"


def load_fixture(name: str) -> Network:
    return load_network(fixture_path(name))
