"""Circuit-graph model of a phasor network and its power-flow maps.

A network is a connected graph of buses with exactly one ground bus. Lossless
lines (reactance x > 0, coupling B = 1/x) join non-ground buses; constant-power
branches and dynamic shunts run from a bus to ground. Loads are declared
consumption-positive in input files; every quantity computed here is
generation-positive (power injected from the shunt side into the network),
with the sign conversion happening in exactly one place
(:attr:`ConstantPowerBranch.p0_gen`).

The model is immutable after construction and all evaluation functions are
pure, so they are thread-safe. Branch reductions iterate in declaration order
so repeated runs are bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "BusKind",
    "Bus",
    "LosslessLine",
    "ConstantPowerBranch",
    "DynamicShunt",
    "NetworkModel",
    "NetworkError",
    "BusState",
    "power_injection",
    "injection_partials",
    "branch_currents_oracle",
    "kcl_residual",
    "tellegen_sum",
]

DENSE_BUS_LIMIT = 64  # dense susceptance fallback below this size


class NetworkError(ValueError):
    """Raised when a network description violates a structural invariant."""


class BusKind(Enum):
    GROUND = "ground"
    DYNAMIC = "dynamic"
    PASSIVE = "passive"


@dataclass(frozen=True)
class Bus:
    id: str
    kind: BusKind
    component_id: str | None = None


@dataclass(frozen=True)
class LosslessLine:
    """Series branch with admittance y = -j/x (susceptance b = -1/x).

    The coupling value used throughout is B = 1/x = -b. A conductance field
    is accepted by the file format for the standalone path-dependence
    experiment but must be zero here.
    """

    from_bus: str
    to_bus: str
    x: float

    @property
    def coupling(self) -> float:
        return 1.0 / self.x

    @property
    def susceptance(self) -> float:
        return -1.0 / self.x

    @property
    def admittance(self) -> complex:
        return complex(0.0, self.susceptance)


@dataclass(frozen=True)
class ConstantPowerBranch:
    """Constant-power shunt; p0/q0 are declared consumption-positive."""

    bus: str
    p0: float
    q0: float

    @property
    def p0_gen(self) -> float:
        return -self.p0

    @property
    def q0_gen(self) -> float:
        return -self.q0


@dataclass(frozen=True)
class DynamicShunt:
    """Shunt slot occupied by a dynamic component; always runs to ground."""

    bus: str
    component_id: str


@dataclass
class NetworkModel:
    """Validated bus/branch graph with derived adjacency structure."""

    buses: list[Bus]
    lines: list[LosslessLine]
    constant_power: list[ConstantPowerBranch]
    dynamic_shunts: list[DynamicShunt]

    # derived, filled by __post_init__
    bus_index: dict[str, int] = field(default_factory=dict, repr=False)
    non_ground: list[str] = field(default_factory=list, repr=False)
    node_index: dict[str, int] = field(default_factory=dict, repr=False)
    adjacency: list[list[tuple[int, float]]] = field(default_factory=list, repr=False)
    cp_at: list[list[ConstantPowerBranch]] = field(default_factory=list, repr=False)
    shunt_at: list[DynamicShunt | None] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self._validate_ids()
        self._validate_branches()
        self._build_derived()
        self._validate_connected()

    # -- validation -------------------------------------------------------

    def _validate_ids(self) -> None:
        seen: set[str] = set()
        for bus in self.buses:
            if bus.id in seen:
                raise NetworkError(f"duplicate bus id {bus.id!r}")
            seen.add(bus.id)
        grounds = [b for b in self.buses if b.kind is BusKind.GROUND]
        if len(grounds) != 1:
            raise NetworkError(
                f"exactly one ground bus required, found {len(grounds)}"
            )
        comp_ids: set[str] = set()
        for shunt in self.dynamic_shunts:
            if shunt.component_id in comp_ids:
                raise NetworkError(
                    f"duplicate dynamic component id {shunt.component_id!r}"
                )
            comp_ids.add(shunt.component_id)

    def _validate_branches(self) -> None:
        ids = {b.id for b in self.buses}
        ground = self.ground_id
        for line in self.lines:
            if line.from_bus not in ids or line.to_bus not in ids:
                raise NetworkError(
                    f"line {line.from_bus!r}-{line.to_bus!r} references unknown bus"
                )
            if line.x <= 0.0:
                raise NetworkError(
                    f"line {line.from_bus!r}-{line.to_bus!r} has zero reactance"
                    if line.x == 0.0
                    else f"line {line.from_bus!r}-{line.to_bus!r} has negative reactance {line.x}"
                )
            if ground in (line.from_bus, line.to_bus):
                raise NetworkError(
                    f"line {line.from_bus!r}-{line.to_bus!r} may not touch ground"
                )
            if line.from_bus == line.to_bus:
                raise NetworkError(f"line at {line.from_bus!r} is a self-loop")
        for cp in self.constant_power:
            if cp.bus not in ids:
                raise NetworkError(f"constant-power branch at unknown bus {cp.bus!r}")
            if cp.bus == ground:
                raise NetworkError("constant-power branch may not sit on ground")
        kind_of = {b.id: b.kind for b in self.buses}
        comp_of = {b.id: b.component_id for b in self.buses}
        for shunt in self.dynamic_shunts:
            if shunt.bus not in ids:
                raise NetworkError(f"dynamic shunt at unknown bus {shunt.bus!r}")
            if kind_of[shunt.bus] is not BusKind.DYNAMIC:
                raise NetworkError(
                    f"dynamic shunt {shunt.component_id!r} must sit on a dynamic bus"
                )
            if comp_of[shunt.bus] != shunt.component_id:
                raise NetworkError(
                    f"bus {shunt.bus!r} does not carry component {shunt.component_id!r}"
                )
        dynamic_buses = {b.id for b in self.buses if b.kind is BusKind.DYNAMIC}
        shunted = {s.bus for s in self.dynamic_shunts}
        missing = dynamic_buses - shunted
        if missing:
            raise NetworkError(
                f"dynamic bus(es) without a component: {sorted(missing)}"
            )

    def _build_derived(self) -> None:
        self.bus_index = {b.id: i for i, b in enumerate(self.buses)}
        self.non_ground = [b.id for b in self.buses if b.kind is not BusKind.GROUND]
        self.node_index = {bid: i for i, bid in enumerate(self.non_ground)}
        n = len(self.non_ground)
        self.adjacency = [[] for _ in range(n)]
        for line in self.lines:
            i = self.node_index[line.from_bus]
            k = self.node_index[line.to_bus]
            coupling = line.coupling
            self.adjacency[i].append((k, coupling))
            self.adjacency[k].append((i, coupling))
        self.cp_at = [[] for _ in range(n)]
        for cp in self.constant_power:
            self.cp_at[self.node_index[cp.bus]].append(cp)
        self.shunt_at = [None] * n
        for shunt in self.dynamic_shunts:
            self.shunt_at[self.node_index[shunt.bus]] = shunt

    def _validate_connected(self) -> None:
        # Shunt branches connect their bus to ground, so the graph over all
        # buses uses lines plus shunts.
        neighbors: dict[str, set[str]] = {b.id: set() for b in self.buses}
        for line in self.lines:
            neighbors[line.from_bus].add(line.to_bus)
            neighbors[line.to_bus].add(line.from_bus)
        ground = self.ground_id
        for cp in self.constant_power:
            neighbors[cp.bus].add(ground)
            neighbors[ground].add(cp.bus)
        for shunt in self.dynamic_shunts:
            neighbors[shunt.bus].add(ground)
            neighbors[ground].add(shunt.bus)
        if not self.buses:
            raise NetworkError("network has no buses")
        stack = [self.buses[0].id]
        seen = {self.buses[0].id}
        while stack:
            for nxt in neighbors[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        unreached = [b.id for b in self.buses if b.id not in seen]
        if unreached:
            raise NetworkError(f"graph is not connected; unreachable: {unreached}")

    # -- accessors ---------------------------------------------------------

    @property
    def ground_id(self) -> str:
        for b in self.buses:
            if b.kind is BusKind.GROUND:
                return b.id
        raise NetworkError("no ground bus")

    @property
    def n_nodes(self) -> int:
        return len(self.non_ground)

    def dynamic_nodes(self) -> list[int]:
        return [i for i, s in enumerate(self.shunt_at) if s is not None]

    def passive_nodes(self) -> list[int]:
        return [i for i, s in enumerate(self.shunt_at) if s is None]

    def susceptance_matrix(self) -> np.ndarray:
        """Symmetric coupling matrix with B[i, k] = 1/x for connected pairs.

        Dense; intended for eigenanalysis and solver assembly on systems
        below DENSE_BUS_LIMIT buses.
        """
        n = self.n_nodes
        if n > DENSE_BUS_LIMIT:
            raise NetworkError(
                f"dense susceptance matrix limited to {DENSE_BUS_LIMIT} buses"
            )
        b = np.zeros((n, n))
        for line in self.lines:
            i = self.node_index[line.from_bus]
            k = self.node_index[line.to_bus]
            b[i, k] += line.coupling
            b[k, i] += line.coupling
        return b

    def with_scaled_line(self, line_idx: int, factor: float) -> "NetworkModel":
        """Copy of the network with one line's coupling scaled by `factor`."""
        if not 0 <= line_idx < len(self.lines):
            raise NetworkError(f"line index {line_idx} out of range")
        if factor <= 0.0:
            raise NetworkError(f"line scale factor must be positive, got {factor}")
        old = self.lines[line_idx]
        lines = list(self.lines)
        # scaling coupling B = 1/x by `factor` divides the reactance
        lines[line_idx] = LosslessLine(old.from_bus, old.to_bus, old.x / factor)
        return NetworkModel(self.buses, lines, list(self.constant_power), list(self.dynamic_shunts))

    def with_load_delta(self, bus: str, dp: float, dq: float) -> "NetworkModel":
        """Copy with a consumption-positive delta added to the load at `bus`."""
        if bus not in self.node_index:
            raise NetworkError(f"load step at unknown bus {bus!r}")
        hit = [i for i, cp in enumerate(self.constant_power) if cp.bus == bus]
        if not hit:
            raise NetworkError(f"load step at bus {bus!r} with no constant-power branch")
        cps = list(self.constant_power)
        old = cps[hit[0]]
        cps[hit[0]] = ConstantPowerBranch(old.bus, old.p0 + dp, old.q0 + dq)
        return NetworkModel(self.buses, list(self.lines), cps, list(self.dynamic_shunts))


@dataclass
class BusState:
    """Voltage magnitude/angle per non-ground bus, in network node order.

    V entries must stay positive (log V is taken downstream); theta entries
    are unwrapped radians.
    """

    V: np.ndarray
    theta: np.ndarray

    def __post_init__(self) -> None:
        self.V = np.asarray(self.V, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.V.shape != self.theta.shape:
            raise ValueError("V and theta must have the same length")
        if np.any(self.V <= 0.0):
            raise ValueError("bus voltage magnitudes must be positive")

    def phasors(self) -> np.ndarray:
        return self.V * np.exp(1j * self.theta)


# -- evaluation ------------------------------------------------------------


def power_injection(net: NetworkModel, V, theta) -> tuple[list[float], list[float]]:
    """Net power injected from the shunt side into the network at each bus.

    Closed form over lines: P_i = sum_k B_ik V_i V_k sin(theta_i - theta_k),
    Q_i = sum_k B_ik (V_i^2 - V_i V_k cos(theta_i - theta_k)). Generation
    convention; returns plain lists in node order.
    """
    n = net.n_nodes
    p = [0.0] * n
    q = [0.0] * n
    for i in range(n):
        vi = V[i]
        ti = theta[i]
        pi = 0.0
        qi = 0.0
        for k, coupling in net.adjacency[i]:
            d = ti - theta[k]
            vv = vi * V[k]
            pi += coupling * vv * math.sin(d)
            qi += coupling * (vi * vi - vv * math.cos(d))
        p[i] = pi
        q[i] = qi
    return p, q


def injection_partials(
    net: NetworkModel, V, theta
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Analytic partials (dP/dtheta, dP/dV, dQ/dtheta, dQ/dV) as dense arrays."""
    n = net.n_nodes
    dp_dt = np.zeros((n, n))
    dp_dv = np.zeros((n, n))
    dq_dt = np.zeros((n, n))
    dq_dv = np.zeros((n, n))
    for i in range(n):
        vi = V[i]
        ti = theta[i]
        for k, b in net.adjacency[i]:
            d = ti - theta[k]
            s = math.sin(d)
            c = math.cos(d)
            vk = V[k]
            dp_dt[i, i] += b * vi * vk * c
            dp_dt[i, k] -= b * vi * vk * c
            dp_dv[i, i] += b * vk * s
            dp_dv[i, k] += b * vi * s
            dq_dt[i, i] += b * vi * vk * s
            dq_dt[i, k] -= b * vi * vk * s
            dq_dv[i, i] += b * (2.0 * vi - vk * c)
            dq_dv[i, k] -= b * vi * c
    return dp_dt, dp_dv, dq_dt, dq_dv


def branch_currents_oracle(
    net: NetworkModel,
    state: BusState,
    dynamic_injections: dict[str, tuple[float, float]] | None = None,
) -> dict[str, complex]:
    """Branch currents by direct complex arithmetic, associated reference
    direction (current flows from the first terminal through the branch).

    Lines and constant-power branches follow their own laws; a dynamic
    shunt's current comes from the supplied generation pair, or, when none
    is given, from nodal balance (which makes the current set satisfy KCL
    exactly). Keys are "line:<from>-<to>:<idx>", "cp:<bus>:<idx>" and
    "dyn:<component>".
    """
    vbar = state.phasors()
    currents: dict[str, complex] = {}
    nodal = [0j] * net.n_nodes
    for idx, line in enumerate(net.lines):
        i = net.node_index[line.from_bus]
        k = net.node_index[line.to_bus]
        cur = line.admittance * (vbar[i] - vbar[k])
        currents[f"line:{line.from_bus}-{line.to_bus}:{idx}"] = cur
        nodal[i] += cur
        nodal[k] -= cur
    for idx, cp in enumerate(net.constant_power):
        i = net.node_index[cp.bus]
        # associated direction out of the bus: conj((p0 + j q0) / Vbar)
        cur = (complex(cp.p0, cp.q0) / vbar[i]).conjugate()
        currents[f"cp:{cp.bus}:{idx}"] = cur
        nodal[i] += cur
    for shunt in net.dynamic_shunts:
        i = net.node_index[shunt.bus]
        if dynamic_injections is not None and shunt.component_id in dynamic_injections:
            gp, gq = dynamic_injections[shunt.component_id]
            cur = -(complex(gp, gq) / vbar[i]).conjugate()
        else:
            cur = -nodal[i]
        currents[f"dyn:{shunt.component_id}"] = cur
    return currents


def kcl_residual(
    net: NetworkModel,
    state: BusState,
    dynamic_injections: dict[str, tuple[float, float]] | None = None,
) -> list[complex]:
    """Complex nodal current-balance residual per non-ground bus.

    Shunt components contribute injected current conj((P + jQ)/Vbar) with
    generation-positive (P, Q); constant-power branches contribute
    conj(-(p0 + j q0)/Vbar); line currents are subtracted. A solved state
    has residual ~0 everywhere.
    """
    dynamic_injections = dynamic_injections or {}
    vbar = state.phasors()
    res = [0j] * net.n_nodes
    for i in range(net.n_nodes):
        acc = 0j
        shunt = net.shunt_at[i]
        if shunt is not None:
            gp, gq = dynamic_injections.get(shunt.component_id, (0.0, 0.0))
            acc += (complex(gp, gq) / vbar[i]).conjugate()
        for cp in net.cp_at[i]:
            # BusState enforces V > 0, so the 1/Vbar here cannot be singular
            acc += (complex(cp.p0_gen, cp.q0_gen) / vbar[i]).conjugate()
        res[i] = acc
    for line in net.lines:
        i = net.node_index[line.from_bus]
        k = net.node_index[line.to_bus]
        cur = line.admittance * (vbar[i] - vbar[k])
        res[i] -= cur
        res[k] += cur
    return res


def tellegen_sum(
    net: NetworkModel,
    state: BusState,
    dynamic_injections: dict[str, tuple[float, float]] | None = None,
) -> complex:
    """Sum over all branches of Vbar_mu * conj(I_mu).

    Vanishes whenever the currents satisfy KCL and the voltages KVL; with
    dynamic currents taken from nodal balance this is an orthogonality
    identity, and with explicit injections it measures their imbalance.
    """
    vbar = state.phasors()
    currents = branch_currents_oracle(net, state, dynamic_injections)
    total = 0j
    for idx, line in enumerate(net.lines):
        i = net.node_index[line.from_bus]
        k = net.node_index[line.to_bus]
        v_branch = vbar[i] - vbar[k]
        total += v_branch * currents[f"line:{line.from_bus}-{line.to_bus}:{idx}"].conjugate()
    for idx, cp in enumerate(net.constant_power):
        i = net.node_index[cp.bus]
        total += vbar[i] * currents[f"cp:{cp.bus}:{idx}"].conjugate()
    for shunt in net.dynamic_shunts:
        i = net.node_index[shunt.bus]
        total += vbar[i] * currents[f"dyn:{shunt.component_id}"].conjugate()
    return total
