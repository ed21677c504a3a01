"""DER day-ahead offering instance: devices, feeder, offer grid, file I/O.

Instances are immutable after construction and safe to share across
concurrent solves.  The on-disk format is a YAML key/value tree with an
explicit ``schema_version`` field; the price chain and uncertainty set are
stored inside the same file.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .uncertainty import BudgetedUncertaintySet, MarkovPriceChain

SCHEMA_VERSION = 1


class InstanceError(ValueError):
    """Validation failure; the message starts with the offending field path."""


@dataclass(frozen=True)
class Battery:
    power_limit: float  # MW
    energy_limit: float  # MWh
    efficiency: float  # round-trip, in (0, 1]
    initial_energy: float  # MWh

    @staticmethod
    def none() -> "Battery":
        return Battery(power_limit=0.0, energy_limit=0.0, efficiency=1.0, initial_energy=0.0)


@dataclass(frozen=True)
class Line:
    parent: int
    child: int
    resistance: float  # p.u. on the network s_base
    reactance: float  # p.u.
    flow_limit: float  # MW


@dataclass(frozen=True)
class FeederNetwork:
    """Radial feeder rooted at bus 0 (the substation)."""

    bus_count: int
    lines: tuple
    v_min: float  # squared voltage magnitude bounds (p.u.^2)
    v_max: float
    pv_bus: int
    battery_bus: int
    load_fraction: np.ndarray  # per-bus share of the hourly load, sums to 1
    s_base: float = 10.0  # MVA
    reactive_ratio: float = 0.3286  # Q load = ratio * P load (pf 0.95)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(
            self, "load_fraction", np.asarray(self.load_fraction, dtype=float)
        )

    def parent_of(self) -> dict[int, Line]:
        return {ln.child: ln for ln in self.lines}

    def children_of(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {b: [] for b in range(self.bus_count)}
        for ln in self.lines:
            out[ln.parent].append(ln.child)
        return out

    def subtree_masks(self) -> dict[int, np.ndarray]:
        """For each line (keyed by child bus), the buses fed through it."""
        kids = self.children_of()
        masks = {}

        def collect(b):
            acc = [b]
            for ch in kids[b]:
                acc.extend(collect(ch))
            return acc

        for ln in self.lines:
            mask = np.zeros(self.bus_count, dtype=bool)
            mask[collect(ln.child)] = True
            masks[ln.child] = mask
        return masks

    def path_to_root(self, bus: int) -> list[Line]:
        parents = self.parent_of()
        path = []
        b = bus
        while b != 0:
            ln = parents[b]
            path.append(ln)
            b = ln.parent
        return path


@dataclass(frozen=True)
class OfferInstance:
    horizon: int
    price_grid: tuple  # per hour, ascending offer price points ($/MWh)
    q_max: np.ndarray  # per hour offer capacity (MW)
    pv_forecast: np.ndarray  # per hour nominal PV availability (MW)
    battery: Battery
    load: np.ndarray  # per hour total demand (MW)
    network: FeederNetwork
    penalty_price: float  # deviation penalty ($/MWh)
    rt_price_adder: float = 0.10  # real-time price = (1 + adder) * day-ahead
    uncertainty: BudgetedUncertaintySet | None = None
    chain: MarkovPriceChain | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "price_grid", tuple(np.asarray(g, dtype=float) for g in self.price_grid)
        )
        object.__setattr__(self, "q_max", np.asarray(self.q_max, dtype=float))
        object.__setattr__(self, "pv_forecast", np.asarray(self.pv_forecast, dtype=float))
        object.__setattr__(self, "load", np.asarray(self.load, dtype=float))
        validate_instance(self)

    @property
    def block_counts(self) -> list[int]:
        return [g.size for g in self.price_grid]

    @property
    def n_first_stage(self) -> int:
        return sum(self.block_counts)

    def with_uncertainty(self, uncertainty: BudgetedUncertaintySet) -> "OfferInstance":
        return replace(self, uncertainty=uncertainty)


def validate_instance(inst: OfferInstance) -> None:
    T = inst.horizon
    if T <= 0:
        raise InstanceError("horizon: must be positive")
    for name, arr in (("q_max", inst.q_max), ("pv_forecast", inst.pv_forecast), ("load", inst.load)):
        if arr.shape != (T,):
            raise InstanceError(f"{name}: expected length {T}, got {arr.shape}")
        if np.any(arr < 0):
            raise InstanceError(f"{name}: entries must be nonnegative")
    if len(inst.price_grid) != T:
        raise InstanceError(f"price_grid: expected {T} hourly grids, got {len(inst.price_grid)}")
    for t, grid in enumerate(inst.price_grid):
        if grid.size == 0:
            raise InstanceError(f"price_grid[{t}]: at least one offer block required")
        if np.any(np.diff(grid) <= 0):
            raise InstanceError(f"price_grid[{t}]: offer prices must be strictly increasing")
    bat = inst.battery
    if not 0 < bat.efficiency <= 1:
        raise InstanceError("battery.efficiency: must lie in (0, 1]")
    if bat.power_limit < 0 or bat.energy_limit < 0:
        raise InstanceError("battery: power and energy limits must be nonnegative")
    if not 0 <= bat.initial_energy <= bat.energy_limit + 1e-12:
        raise InstanceError("battery.initial_energy: must lie in [0, energy_limit]")
    if inst.penalty_price < 0:
        raise InstanceError("penalty_price: must be nonnegative")
    _validate_network(inst.network)


def _validate_network(net: FeederNetwork) -> None:
    B = net.bus_count
    if B < 2:
        raise InstanceError("network.bus_count: at least substation plus one bus required")
    if len(net.lines) != B - 1:
        raise InstanceError(
            f"network.lines: a tree on {B} buses needs {B - 1} lines, got {len(net.lines)}"
        )
    seen_children = set()
    for i, ln in enumerate(net.lines):
        if not (0 <= ln.parent < B and 0 < ln.child < B):
            raise InstanceError(f"network.lines[{i}]: bus index out of range")
        if ln.child in seen_children:
            raise InstanceError(f"network.lines[{i}]: bus {ln.child} has two parents")
        if ln.flow_limit <= 0:
            raise InstanceError(f"network.lines[{i}].flow_limit: must be positive")
        if ln.resistance < 0 or ln.reactance < 0:
            raise InstanceError(f"network.lines[{i}]: impedances must be nonnegative")
        seen_children.add(ln.child)
    # connectivity: walk up from every bus; cycles or orphans fail
    parents = {ln.child: ln.parent for ln in net.lines}
    for b in range(1, B):
        hops, cur = 0, b
        while cur != 0:
            if cur not in parents or hops > B:
                raise InstanceError("network.lines: feeder must be a tree rooted at bus 0")
            cur = parents[cur]
            hops += 1
    if not 0 < net.v_min < net.v_max:
        raise InstanceError("network.v_min/v_max: need 0 < v_min < v_max")
    if not (0 < net.pv_bus < B and 0 < net.battery_bus < B):
        raise InstanceError("network.pv_bus/battery_bus: must be non-substation buses")
    if net.load_fraction.shape != (B,):
        raise InstanceError(f"network.load_fraction: expected length {B}")
    if np.any(net.load_fraction < 0) or abs(net.load_fraction.sum() - 1.0) > 1e-9:
        raise InstanceError("network.load_fraction: nonnegative entries summing to 1 required")
    if net.load_fraction[0] != 0:
        raise InstanceError("network.load_fraction[0]: substation carries no load")
    if net.s_base <= 0:
        raise InstanceError("network.s_base: must be positive")


# ----------------------------------------------------------------------
# file I/O
# ----------------------------------------------------------------------

def save_instance(inst: OfferInstance, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "horizon": int(inst.horizon),
        "price_grid": [[float(v) for v in g] for g in inst.price_grid],
        "q_max": [float(v) for v in inst.q_max],
        "pv_forecast": [float(v) for v in inst.pv_forecast],
        "load": [float(v) for v in inst.load],
        "penalty_price": float(inst.penalty_price),
        "rt_price_adder": float(inst.rt_price_adder),
        "battery": {
            "power_limit": float(inst.battery.power_limit),
            "energy_limit": float(inst.battery.energy_limit),
            "efficiency": float(inst.battery.efficiency),
            "initial_energy": float(inst.battery.initial_energy),
        },
        "network": {
            "bus_count": int(inst.network.bus_count),
            "v_min": float(inst.network.v_min),
            "v_max": float(inst.network.v_max),
            "s_base": float(inst.network.s_base),
            "reactive_ratio": float(inst.network.reactive_ratio),
            "pv_bus": int(inst.network.pv_bus),
            "battery_bus": int(inst.network.battery_bus),
            "load_fraction": [float(v) for v in inst.network.load_fraction],
            "lines": [
                {
                    "parent": int(ln.parent),
                    "child": int(ln.child),
                    "resistance": float(ln.resistance),
                    "reactance": float(ln.reactance),
                    "flow_limit": float(ln.flow_limit),
                }
                for ln in inst.network.lines
            ],
        },
    }
    if inst.uncertainty is not None:
        doc["uncertainty"] = {
            "xi_bar": [float(v) for v in inst.uncertainty.xi_bar],
            "xi_hat": [float(v) for v in inst.uncertainty.xi_hat],
            "gamma": int(inst.uncertainty.gamma),
        }
    if inst.chain is not None:
        doc["chain"] = {
            "states": [float(v) for v in inst.chain.states],
            "transition": [[float(v) for v in row] for row in inst.chain.transition],
            "initial": [float(v) for v in inst.chain.initial],
        }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_instance(path) -> OfferInstance:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise InstanceError("document: expected a key/value tree")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InstanceError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")

    def need(key):
        if key not in doc:
            raise InstanceError(f"{key}: required field is missing")
        return doc[key]

    if "battery" in doc:
        b = doc["battery"]
        battery = Battery(
            power_limit=_num(b, "battery.power_limit", "power_limit"),
            energy_limit=_num(b, "battery.energy_limit", "energy_limit"),
            efficiency=_num(b, "battery.efficiency", "efficiency"),
            initial_energy=_num(b, "battery.initial_energy", "initial_energy"),
        )
    else:
        warnings.warn("instance has no battery section; assuming zero-capacity battery")
        battery = Battery.none()

    netdoc = need("network")
    lines = tuple(
        Line(
            parent=int(_num(ld, f"network.lines[{i}].parent", "parent")),
            child=int(_num(ld, f"network.lines[{i}].child", "child")),
            resistance=_num(ld, f"network.lines[{i}].resistance", "resistance"),
            reactance=_num(ld, f"network.lines[{i}].reactance", "reactance"),
            flow_limit=_num(ld, f"network.lines[{i}].flow_limit", "flow_limit"),
        )
        for i, ld in enumerate(netdoc.get("lines", []))
    )
    network = FeederNetwork(
        bus_count=int(_num(netdoc, "network.bus_count", "bus_count")),
        lines=lines,
        v_min=_num(netdoc, "network.v_min", "v_min"),
        v_max=_num(netdoc, "network.v_max", "v_max"),
        s_base=float(netdoc.get("s_base", 10.0)),
        reactive_ratio=float(netdoc.get("reactive_ratio", 0.3286)),
        pv_bus=int(_num(netdoc, "network.pv_bus", "pv_bus")),
        battery_bus=int(_num(netdoc, "network.battery_bus", "battery_bus")),
        load_fraction=np.asarray(netdoc.get("load_fraction", []), dtype=float),
    )

    uncertainty = None
    if "uncertainty" in doc:
        u = doc["uncertainty"]
        uncertainty = BudgetedUncertaintySet(
            xi_bar=np.asarray(u["xi_bar"], dtype=float),
            xi_hat=np.asarray(u["xi_hat"], dtype=float),
            gamma=int(u["gamma"]),
        )
    chain = None
    if "chain" in doc:
        c = doc["chain"]
        chain = MarkovPriceChain(
            states=np.asarray(c["states"], dtype=float),
            transition=np.asarray(c["transition"], dtype=float),
            initial=np.asarray(c["initial"], dtype=float),
        )

    try:
        return OfferInstance(
            horizon=int(need("horizon")),
            price_grid=tuple(np.asarray(g, dtype=float) for g in need("price_grid")),
            q_max=np.asarray(need("q_max"), dtype=float),
            pv_forecast=np.asarray(need("pv_forecast"), dtype=float),
            battery=battery,
            load=np.asarray(need("load"), dtype=float),
            network=network,
            penalty_price=float(need("penalty_price")),
            rt_price_adder=float(doc.get("rt_price_adder", 0.10)),
            uncertainty=uncertainty,
            chain=chain,
        )
    except InstanceError:
        raise
    except (TypeError, KeyError) as exc:
        raise InstanceError(f"document: malformed field ({exc})") from exc


def _num(mapping, path, key):
    if not isinstance(mapping, dict) or key not in mapping:
        raise InstanceError(f"{path}: required field is missing")
    try:
        return float(mapping[key])
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{path}: expected a number, got {mapping[key]!r}") from exc
