"""Per-organism DC energy-sharing bus.

Every organism is a single electrical node. Modules whose sharing switch is
ON export battery current through an ideal diode and a per-module current
limiter; modules with the switch OFF only ever take current in (recharge),
and only while the bus sits above their own open-circuit voltage. Consumer
loads draw constant power from the node.

The bus voltage is the unique stable operating point: the highest voltage
at which limited supply meets demand. Supply minus demand is piecewise
smooth and concave between diode/limiter breakpoints, so the solver scans
segments from the top of the voltage range and bisects inside the first
segment that crosses zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import (
    BatteryModel,
    ModuleState,
    STANDARD_BATTERY,
    World,
    connected_components,
)


class PowerBusError(Exception):
    def __init__(self, message: str, organism: tuple[str, ...] = ()):
        super().__init__(message)
        self.organism = organism


class NoSupplier(PowerBusError):
    """Demand exists but nothing on the bus is willing to export."""


class InsufficientSupply(PowerBusError):
    """Even maximum limited supply cannot meet demand (brown-out)."""


def open_circuit_voltage(soc: float, battery: BatteryModel = STANDARD_BATTERY) -> float:
    """Open-circuit pack voltage for a state of charge in [0, 1]."""
    return battery.voltage(soc)


@dataclass
class BusSolution:
    """Solved electrical state of one organism for one step."""

    organism: tuple[str, ...]
    bus_voltage: float
    supplier_current: dict[str, float] = field(default_factory=dict)  # A, export
    charge_current: dict[str, float] = field(default_factory=dict)    # A, intake
    load_current: dict[str, float] = field(default_factory=dict)      # A, consumption
    limiter_tripped: dict[str, bool] = field(default_factory=dict)
    port_currents: dict[str, list[float]] = field(default_factory=dict)  # signed, + = outflow

    @property
    def total_supply_a(self) -> float:
        return sum(self.supplier_current.values())

    @property
    def total_demand_a(self) -> float:
        return sum(self.load_current.values()) + sum(self.charge_current.values())


@dataclass(frozen=True)
class _Source:
    module_id: str
    v_oc: float
    resistance: float


def _effective_load_w(state: ModuleState) -> float:
    # A drained pack takes the module down; battery-less blocks stay on the bus.
    cap = state.spec.battery.energy_full_wh
    if cap > 0 and state.soc <= 0.0:
        return 0.0
    return max(0.0, state.load_draw_w)


def solve_bus(
    world: World,
    organism: tuple[str, ...] | None = None,
    *,
    min_supplier_stored_wh: float = 0.0,
    charge_headroom_wh: float = 0.0,
) -> BusSolution:
    """Find the organism's bus voltage and all module currents.

    Suppliers are members with the sharing switch on and charge left;
    demand is the members' load draw plus (when recharging is enabled)
    intake of switched-off members sitting below the bus voltage. Raises
    :class:`NoSupplier` or :class:`InsufficientSupply` when no operating
    point exists.
    """
    cfg = world.config
    if organism is None:
        members = tuple(sorted(world.modules))
    else:
        members = tuple(sorted(organism))
    states = [world.modules[mid] for mid in members]

    suppliers: list[_Source] = []
    chargers: list[_Source] = []
    for st in states:
        battery = st.spec.battery
        if battery.energy_full_wh <= 0:
            continue
        if st.sharing_on:
            if st.stored_wh > 0 and st.stored_wh >= min_supplier_stored_wh:
                suppliers.append(_Source(st.module_id, battery.voltage(st.soc), battery.internal_resistance))
        elif cfg.recharge_enabled:
            if st.stored_wh <= battery.energy_full_wh - charge_headroom_wh:
                chargers.append(_Source(st.module_id, battery.voltage(st.soc), battery.internal_resistance))

    load_w = {st.module_id: _effective_load_w(st) for st in states}
    total_load_w = sum(load_w.values())

    if not suppliers:
        if total_load_w > 0:
            raise NoSupplier(
                f"demand {total_load_w:.3f} W with no exporting module", members)
        return _zero_solution(members, states, bus_voltage=0.0)

    limit = cfg.current_limit_a
    cap = cfg.recharge_max_a
    v_hi = max(s.v_oc for s in suppliers)
    v_lo = min(world.modules[s.module_id].spec.battery.v_empty for s in suppliers)

    def supply(v: float) -> float:
        return sum(min(max((s.v_oc - v) / s.resistance, 0.0), limit) for s in suppliers)

    def charge_demand(v: float) -> float:
        return sum(min(max((v - c.v_oc) / c.resistance, 0.0), cap) for c in chargers)

    def balance(v: float) -> float:
        return supply(v) - total_load_w / v - charge_demand(v)

    active_chargers = [c for c in chargers if c.v_oc < v_hi]
    if total_load_w == 0 and not active_chargers:
        # Open circuit: the node floats at the strongest source.
        return _zero_solution(members, states, bus_voltage=v_hi)

    v_star = _largest_root(balance, suppliers, chargers, v_lo, v_hi,
                           limit, cap, total_load_w)
    if v_star is None:
        raise InsufficientSupply(
            f"demand {total_load_w:.3f} W exceeds limited supply", members)

    solution = BusSolution(organism=members, bus_voltage=v_star)
    for st in states:
        mid = st.module_id
        solution.load_current[mid] = load_w[mid] / v_star if load_w[mid] > 0 else 0.0
        solution.supplier_current[mid] = 0.0
        solution.charge_current[mid] = 0.0
        solution.limiter_tripped[mid] = False
    for s in suppliers:
        current = min(max((s.v_oc - v_star) / s.resistance, 0.0), limit)
        solution.supplier_current[s.module_id] = current
        solution.limiter_tripped[s.module_id] = current >= limit - 1e-12
    for c in chargers:
        solution.charge_current[c.module_id] = min(
            max((v_star - c.v_oc) / c.resistance, 0.0), cap)
    _attach_port_currents(world, solution)
    return solution


def _zero_solution(members, states, bus_voltage: float) -> BusSolution:
    solution = BusSolution(organism=members, bus_voltage=bus_voltage)
    for st in states:
        solution.supplier_current[st.module_id] = 0.0
        solution.charge_current[st.module_id] = 0.0
        solution.load_current[st.module_id] = 0.0
        solution.limiter_tripped[st.module_id] = False
        solution.port_currents[st.module_id] = [0.0] * st.spec.num_ports
    return solution


def _largest_root(balance, suppliers, chargers, v_lo, v_hi, limit, cap,
                  total_load_w) -> float | None:
    """Highest voltage in [v_lo, v_hi] where supply meets demand, or None."""
    points = {v_lo, v_hi}
    for s in suppliers:
        points.add(s.v_oc)
        points.add(s.v_oc - limit * s.resistance)
    for c in chargers:
        points.add(c.v_oc)
        points.add(c.v_oc + cap * c.resistance)
    breakpoints = sorted(p for p in points if v_lo <= p <= v_hi)

    if balance(v_hi) >= 0.0:
        return v_hi

    def conducting_slope(v_mid: float) -> float:
        slope = 0.0
        for s in suppliers:
            if 0.0 < (s.v_oc - v_mid) / s.resistance < limit:
                slope += 1.0 / s.resistance
        for c in chargers:
            if 0.0 < (v_mid - c.v_oc) / c.resistance < cap:
                slope += 1.0 / c.resistance
        return slope

    # Scan segments from the top; inside each one the balance is concave,
    # so checking both ends plus the single interior critical point decides
    # whether the segment crosses zero.
    for i in range(len(breakpoints) - 1, 0, -1):
        lo, hi = breakpoints[i - 1], breakpoints[i]
        if hi - lo < 1e-15:
            continue
        candidates = [lo]
        slope = conducting_slope((lo + hi) / 2.0)
        if total_load_w > 0 and slope > 0:
            v_crit = math.sqrt(total_load_w / slope)
            if lo < v_crit < hi:
                candidates.append(v_crit)
        bracket_lo = None
        for v in sorted(candidates, reverse=True):
            if balance(v) >= 0.0:
                bracket_lo = v
                break
        if bracket_lo is None:
            continue
        return _bisect(balance, bracket_lo, hi)
    return None


def _bisect(balance, lo: float, hi: float) -> float:
    """Bisection keeping balance(lo) >= 0 > balance(hi), far past the
    nominal 1e-6 V tolerance so current mismatch stays below 1e-9 A."""
    for _ in range(200):
        if hi - lo <= 1e-13:
            break
        mid = (lo + hi) / 2.0
        if mid <= lo or mid >= hi:
            break
        if balance(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def _attach_port_currents(world: World, solution: BusSolution) -> None:
    """Distribute each module's net injection over a spanning tree of the
    organism's docking graph; the single-node model leaves per-port flow
    free, so this picks the deterministic tree assignment."""
    members = solution.organism
    v = solution.bus_voltage
    for mid in members:
        solution.port_currents[mid] = [0.0] * world.modules[mid].spec.num_ports
    if v <= 0 or len(members) == 1:
        return
    member_set = set(members)
    edges = [
        conn for conn in world.connections.values()
        if conn.module_a in member_set and conn.module_b in member_set
    ]
    neighbors: dict[str, list[tuple[str, int, int]]] = {mid: [] for mid in members}
    for conn in sorted(edges, key=lambda c: c.key):
        neighbors[conn.module_a].append((conn.module_b, conn.port_a, conn.port_b))
        neighbors[conn.module_b].append((conn.module_a, conn.port_b, conn.port_a))

    root = members[0]
    parent: dict[str, tuple[str, int, int] | None] = {root: None}
    order = [root]
    queue = [root]
    while queue:
        current = queue.pop(0)
        for nxt, own_port, peer_port in sorted(neighbors[current]):
            if nxt in parent:
                continue
            parent[nxt] = (current, own_port, peer_port)  # (parent, parent port, child port)
            order.append(nxt)
            queue.append(nxt)

    net = {
        mid: solution.supplier_current[mid]
        - solution.load_current[mid]
        - solution.charge_current[mid]
        for mid in members
    }
    subtree = dict(net)
    for mid in reversed(order):
        link = parent.get(mid)
        if link is None:
            continue
        up, parent_port, child_port = link
        flow = subtree[mid]  # surplus flowing from child toward the root
        solution.port_currents[mid][child_port] += flow
        solution.port_currents[up][parent_port] -= flow
        subtree[up] += flow


def step_energy(world: World, dt: float) -> World:
    """Advance every organism's batteries by ``dt`` seconds.

    Suppliers are drained by their open-circuit voltage times exported
    current; recharging members gain their open-circuit voltage times
    intake. The difference against what the loads received is booked as
    resistive loss, so stored energy, delivered load energy and loss always
    sum to zero. A battery close enough to a bound that one step could
    cross it sits the step out, which keeps the accounting exact.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0: {dt}")
    cfg = world.config
    hours = dt / 3600.0
    # Solve every organism before touching any battery, so a brown-out on
    # one organism leaves the whole world untouched (the engine may shed
    # loads and retry the step).
    solutions = []
    for members in connected_components(world):
        reserve = max(
            (world.modules[mid].spec.battery.v_full * cfg.current_limit_a * hours
             for mid in members), default=0.0)
        headroom = max(
            (world.modules[mid].spec.battery.v_full * cfg.recharge_max_a * hours
             for mid in members), default=0.0)
        solutions.append(solve_bus(
            world,
            members,
            min_supplier_stored_wh=reserve,
            charge_headroom_wh=headroom,
        ))
    for solution in solutions:
        v = solution.bus_voltage
        for mid in solution.organism:
            st = world.modules[mid]
            battery = st.spec.battery
            exported = solution.supplier_current[mid]
            intake = solution.charge_current[mid]
            if exported > 0:
                v_oc = battery.voltage(st.soc)
                st.set_stored_wh(st.stored_wh - v_oc * exported * hours)
                world.resistive_loss_wh += (v_oc - v) * exported * hours
            elif intake > 0:
                v_oc = battery.voltage(st.soc)
                st.set_stored_wh(st.stored_wh + v_oc * intake * hours)
                world.resistive_loss_wh += (v - v_oc) * intake * hours
            load = solution.load_current[mid] * v
            world.delivered_load_wh += load * hours
    return world


def total_available_energy(world: World, organism: tuple[str, ...] | None = None) -> float:
    """Stored energy of an organism in Wh (state of charge times capacity)."""
    members = organism if organism is not None else tuple(world.modules)
    return sum(
        world.modules[mid].soc * world.modules[mid].spec.battery.energy_full_wh
        for mid in members
    )


def total_stored_energy(world: World) -> float:
    """Stored energy of every module in the world, in Wh."""
    return total_available_energy(world, tuple(world.modules))
