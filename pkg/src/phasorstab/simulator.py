"""Semi-explicit index-1 DAE transient simulation with streaming diagnostics.

Differential states (the dynamic components' states) advance with classical
four-stage Runge-Kutta; the algebraic unknowns (voltage magnitude and angle
of every passive bus) are re-solved by a warm-started Newton iteration at
every stage evaluation, so each accepted state is algebraically consistent.
An implicit trapezoidal integrator is available for stiff parameter sets.

Scenarios perturb component states, step loads, or scale line couplings at
times aligned with the integration grid. Path integrals are accumulated with
the trapezoid rule at every integration step (second-order in the step
size); the remaining diagnostics are evaluated at output samples only.

A single simulation is a sequential state recurrence over plain Python
floats in fixed iteration order, so repeated runs are bitwise identical.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .components import (
    Anchor,
    CertificateUnavailable,
    Component,
    SupplyConvention,
    supply_rate,
)
from .equilibrium import EquilibriumProblem, EquilibriumSolution, solve_equilibrium
from .network import NetworkModel
from .potential import BregmanDivergence, eval_vp

__all__ = [
    "SimulationError",
    "ScenarioError",
    "StatePerturbation",
    "LoadStep",
    "LineScale",
    "Scenario",
    "SolverConfig",
    "Trajectory",
    "simulate",
]

GRID_ALIGN_TOL = 1e-9


class SimulationError(RuntimeError):
    """Inner Newton failure or voltage collapse, with time and residual."""


class ScenarioError(ValueError):
    """Scenario fields violate their invariants."""


# -- scenario ----------------------------------------------------------------


@dataclass(frozen=True)
class StatePerturbation:
    at: float
    component: str
    delta: dict[str, float]  # state label -> additive increment


@dataclass(frozen=True)
class LoadStep:
    at: float
    bus: str
    dp: float  # consumption-positive deltas
    dq: float
    duration: float | None = None


@dataclass(frozen=True)
class LineScale:
    at: float
    line_index: int
    factor: float
    duration: float | None = None


Disturbance = StatePerturbation | LoadStep | LineScale


@dataclass
class Scenario:
    horizon: float
    output_period: float = 0.01
    initial: str = "equilibrium"  # or "explicit"
    explicit_states: dict[str, dict[str, float]] | None = None
    disturbances: list[Disturbance] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.horizon < 0.0:
            raise ScenarioError(f"horizon must be nonnegative, got {self.horizon}")
        if self.output_period <= 0.0:
            raise ScenarioError("output period must be positive")
        if self.initial not in ("equilibrium", "explicit"):
            raise ScenarioError(f"unknown initial condition source {self.initial!r}")
        if self.initial == "explicit" and not self.explicit_states:
            raise ScenarioError("explicit initial condition requires explicit_states")
        for d in self.disturbances:
            if d.at < 0.0 or d.at > self.horizon:
                raise ScenarioError(
                    f"disturbance time {d.at} outside horizon [0, {self.horizon}]"
                )
            if isinstance(d, LineScale) and d.factor <= 0.0:
                raise ScenarioError(f"line scale factor must be positive, got {d.factor}")
            duration = getattr(d, "duration", None)
            if duration is not None and duration <= 0.0:
                raise ScenarioError("disturbance duration must be positive")

    def network_events(self) -> bool:
        return any(isinstance(d, (LoadStep, LineScale)) for d in self.disturbances)


@dataclass(frozen=True)
class SolverConfig:
    step_size: float = 1e-3
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    integrator: str = "rk4"  # or "trapezoid"
    convention: SupplyConvention = SupplyConvention.NEGATED

    def __post_init__(self) -> None:
        if self.step_size <= 0.0:
            raise ScenarioError("step size must be positive")
        if self.integrator not in ("rk4", "trapezoid"):
            raise ScenarioError(f"unknown integrator {self.integrator!r}")


# -- trajectory ----------------------------------------------------------------


@dataclass
class Trajectory:
    """Uniformly sampled simulation output with per-sample diagnostics.

    Angle/voltage columns are per non-ground bus in network order; component
    series are keyed by component id. ``vp`` is relative to the trajectory's
    initial point; ``w`` is the divergence anchored at the equilibrium under
    test. ``supply`` is recorded under the run's convention and
    ``integral`` holds the deviation path integrals.
    """

    times: np.ndarray
    bus_ids: list[str]
    V: np.ndarray
    theta: np.ndarray
    comp_states: dict[str, np.ndarray]
    comp_labels: dict[str, tuple[str, ...]]
    P: dict[str, np.ndarray]
    Q: dict[str, np.ndarray]
    vp: np.ndarray
    w: np.ndarray
    storage: dict[str, np.ndarray]
    storage_rate: dict[str, np.ndarray]
    supply: dict[str, np.ndarray]
    integral: dict[str, np.ndarray]
    unshifted_integral: np.ndarray
    convention: SupplyConvention
    anchors: dict[str, Anchor]
    equilibrium: EquilibriumSolution
    network: NetworkModel
    components: dict[str, Component]
    config: SolverConfig
    scenario: Scenario
    network_changed: bool

    @property
    def n_samples(self) -> int:
        return len(self.times)

    def component_ids(self) -> list[str]:
        return [s.component_id for s in self.network.dynamic_shunts]

    def columns(self) -> list[str]:
        cols = ["t"]
        for bus in self.bus_ids:
            cols.extend([f"{bus}_V", f"{bus}_theta"])
        for cid in self.component_ids():
            cols.extend(f"{cid}_{label}" for label in self.comp_labels[cid])
            cols.extend([f"{cid}_P", f"{cid}_Q"])
        cols.extend(["Vp", "W"])
        for cid in self.component_ids():
            cols.extend([f"{cid}_storage", f"{cid}_supply", f"{cid}_integral"])
        return cols

    def rows(self):
        for s in range(self.n_samples):
            row = [self.times[s]]
            for b in range(len(self.bus_ids)):
                row.extend([self.V[s, b], self.theta[s, b]])
            for cid in self.component_ids():
                row.extend(self.comp_states[cid][s])
                row.extend([self.P[cid][s], self.Q[cid][s]])
            row.extend([self.vp[s], self.w[s]])
            for cid in self.component_ids():
                row.extend(
                    [self.storage[cid][s], self.supply[cid][s], self.integral[cid][s]]
                )
            yield row

    def to_csv(self, path: str) -> None:
        """Write the sample table; repr() of each float round-trips exactly."""
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(",".join(self.columns()) + "\n")
            for row in self.rows():
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        os.replace(tmp, path)

    def manifest(self, source: str = "<memory>") -> dict:
        return {
            "source": source,
            "samples": int(self.n_samples),
            "horizon": float(self.scenario.horizon),
            "output_period": float(self.scenario.output_period),
            "step_size": float(self.config.step_size),
            "integrator": self.config.integrator,
            "newton_tol": float(self.config.newton_tol),
            "convention": self.convention.value,
            "columns": self.columns(),
            "network_changed_during_run": self.network_changed,
            "buses": list(self.bus_ids),
            "components": self.component_ids(),
        }

    def write_manifest(self, path: str, source: str = "<memory>") -> None:
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(self.manifest(source), fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)


# -- engine --------------------------------------------------------------------


class _Engine:
    """Flattened, loop-friendly view of the system for the hot stepping path."""

    def __init__(
        self,
        net: NetworkModel,
        components: dict[str, Component],
        config: SolverConfig,
    ) -> None:
        self.base_net = net
        self.config = config
        self.comp_ids = [s.component_id for s in net.dynamic_shunts]
        self.comps = [components[cid] for cid in self.comp_ids]
        self.comp_node = [net.node_index[s.bus] for s in net.dynamic_shunts]
        self.n_nodes = net.n_nodes
        self.passive_nodes = net.passive_nodes()
        self.passive_slot = {node: j for j, node in enumerate(self.passive_nodes)}
        # Y layout: per component, its states contiguously
        self.offsets: list[int] = []
        off = 0
        for comp in self.comps:
            self.offsets.append(off)
            off += comp.nstates
        self.ny = off
        self.theta_idx = [
            self.offsets[c] + self.comps[c].state_labels.index("theta")
            for c in range(len(self.comps))
        ]
        self.v_idx = [
            self.offsets[c] + self.comps[c].state_labels.index("v")
            for c in range(len(self.comps))
        ]
        self.active_mods: list[Disturbance] = []
        self._bind_network(net)

    # network binding ---------------------------------------------------------

    def _bind_network(self, net: NetworkModel) -> None:
        self.net = net
        self.lines_flat = [
            (net.node_index[ln.from_bus], net.node_index[ln.to_bus], ln.coupling)
            for ln in net.lines
        ]
        self.adjacency = net.adjacency
        self.p0 = [0.0] * self.n_nodes
        self.q0 = [0.0] * self.n_nodes
        for i in range(self.n_nodes):
            self.p0[i] = sum(cp.p0 for cp in net.cp_at[i])
            self.q0[i] = sum(cp.q0 for cp in net.cp_at[i])

    def rebuild_with_mods(self) -> None:
        net = self.base_net
        for mod in self.active_mods:
            if isinstance(mod, LoadStep):
                net = net.with_load_delta(mod.bus, mod.dp, mod.dq)
            elif isinstance(mod, LineScale):
                net = net.with_scaled_line(mod.line_index, mod.factor)
        self._bind_network(net)

    # evaluation ----------------------------------------------------------------

    def injections(self, V: list[float], th: list[float]) -> tuple[list[float], list[float]]:
        p = [0.0] * self.n_nodes
        q = [0.0] * self.n_nodes
        for i, k, b in self.lines_flat:
            vi = V[i]
            vk = V[k]
            d = th[i] - th[k]
            vv = vi * vk
            flow = b * vv * math.sin(d)
            cross = vv * math.cos(d)
            p[i] += flow
            p[k] -= flow
            q[i] += b * (vi * vi - cross)
            q[k] += b * (vk * vk - cross)
        return p, q

    def scatter_terminals(self, y: list[float], V: list[float], th: list[float]) -> None:
        for c in range(len(self.comps)):
            node = self.comp_node[c]
            th[node] = y[self.theta_idx[c]]
            V[node] = y[self.v_idx[c]]

    def solve_algebraic(
        self, V: list[float], th: list[float], t: float
    ) -> None:
        """Newton-solve passive-bus (theta, V) in place; V/th carry the warm start."""
        m = len(self.passive_nodes)
        if m == 0:
            return
        tol = self.config.newton_tol
        for it in range(self.config.newton_max_iter):
            p, q = self.injections(V, th)
            worst = 0.0
            for node in self.passive_nodes:
                rp = p[node] + self.p0[node]
                rq = q[node] + self.q0[node]
                if abs(rp) > worst:
                    worst = abs(rp)
                if abs(rq) > worst:
                    worst = abs(rq)
            if worst <= tol:
                return
            if m == 1:
                node = self.passive_nodes[0]
                j00 = j01 = j10 = j11 = 0.0
                vi = V[node]
                ti = th[node]
                for k, b in self.adjacency[node]:
                    d = ti - th[k]
                    s = math.sin(d)
                    c = math.cos(d)
                    vk = V[k]
                    j00 += b * vi * vk * c       # dP/dtheta_j
                    j01 += b * vk * s            # dP/dV_j
                    j10 += b * vi * vk * s       # dQ/dtheta_j
                    j11 += b * (2.0 * vi - vk * c)  # dQ/dV_j
                rp = p[node] + self.p0[node]
                rq = q[node] + self.q0[node]
                det = j00 * j11 - j01 * j10
                if det == 0.0:
                    raise SimulationError(
                        f"algebraic Jacobian singular at t = {t:.6g}"
                    )
                dth = (-rp * j11 + rq * j01) / det
                dv = (-j00 * rq + j10 * rp) / det
                scale = 1.0
                while V[node] + scale * dv <= 0.0:
                    scale *= 0.5
                    if scale < 1e-12:
                        raise SimulationError(
                            f"voltage collapse at bus {self.net.non_ground[node]!r}, "
                            f"t = {t:.6g}"
                        )
                th[node] += scale * dth
                V[node] += scale * dv
            else:
                jac = np.zeros((2 * m, 2 * m))
                rhs = np.zeros(2 * m)
                for j, node in enumerate(self.passive_nodes):
                    vi = V[node]
                    ti = th[node]
                    rhs[2 * j] = -(p[node] + self.p0[node])
                    rhs[2 * j + 1] = -(q[node] + self.q0[node])
                    for k, b in self.adjacency[node]:
                        d = ti - th[k]
                        s = math.sin(d)
                        c = math.cos(d)
                        vk = V[k]
                        jac[2 * j, 2 * j] += b * vi * vk * c
                        jac[2 * j, 2 * j + 1] += b * vk * s
                        jac[2 * j + 1, 2 * j] += b * vi * vk * s
                        jac[2 * j + 1, 2 * j + 1] += b * (2.0 * vi - vk * c)
                        slot = self.passive_slot.get(k)
                        if slot is not None:
                            jac[2 * j, 2 * slot] -= b * vi * vk * c
                            jac[2 * j, 2 * slot + 1] += b * vi * s
                            jac[2 * j + 1, 2 * slot] -= b * vi * vk * s
                            jac[2 * j + 1, 2 * slot + 1] -= b * vi * c
                try:
                    delta = np.linalg.solve(jac, rhs)
                except np.linalg.LinAlgError as exc:
                    raise SimulationError(
                        f"algebraic Jacobian singular at t = {t:.6g}: {exc}"
                    ) from exc
                scale = 1.0
                while any(
                    V[node] + scale * delta[2 * j + 1] <= 0.0
                    for j, node in enumerate(self.passive_nodes)
                ):
                    scale *= 0.5
                    if scale < 1e-12:
                        raise SimulationError(f"voltage collapse at t = {t:.6g}")
                for j, node in enumerate(self.passive_nodes):
                    th[node] += scale * delta[2 * j]
                    V[node] += scale * delta[2 * j + 1]
        p, q = self.injections(V, th)
        worst = max(
            max(abs(p[n] + self.p0[n]), abs(q[n] + self.q0[n]))
            for n in self.passive_nodes
        )
        if worst > tol:
            raise SimulationError(
                f"inner Newton failed at t = {t:.6g} (residual {worst:.3e})"
            )

    def derivative(
        self, y: list[float], p: list[float], q: list[float]
    ) -> list[float]:
        dy = [0.0] * self.ny
        for c, comp in enumerate(self.comps):
            node = self.comp_node[c]
            off = self.offsets[c]
            x = y[off : off + comp.nstates]
            f = comp.derivative(x, (p[node], q[node]))
            for j, val in enumerate(f):
                dy[off + j] = val
        return dy

    def consistent_eval(
        self, y: list[float], V: list[float], th: list[float], t: float
    ) -> tuple[list[float], list[float], list[float]]:
        """Scatter terminals, solve algebraic in place, return (dy, P, Q)."""
        self.scatter_terminals(y, V, th)
        for c in range(len(self.comps)):
            if y[self.v_idx[c]] <= 0.0:
                raise SimulationError(
                    f"voltage collapse in component {self.comp_ids[c]!r} at t = {t:.6g}"
                )
        self.solve_algebraic(V, th, t)
        p, q = self.injections(V, th)
        return self.derivative(y, p, q), p, q

    # integrators ---------------------------------------------------------------

    def rk4_step(
        self,
        y: list[float],
        dy0: list[float],
        V: list[float],
        th: list[float],
        h: float,
        t: float,
    ) -> list[float]:
        ny = self.ny
        half = 0.5 * h
        y2 = [y[j] + half * dy0[j] for j in range(ny)]
        k2, _, _ = self.consistent_eval(y2, V, th, t + half)
        y3 = [y[j] + half * k2[j] for j in range(ny)]
        k3, _, _ = self.consistent_eval(y3, V, th, t + half)
        y4 = [y[j] + h * k3[j] for j in range(ny)]
        k4, _, _ = self.consistent_eval(y4, V, th, t + h)
        sixth = h / 6.0
        return [
            y[j] + sixth * (dy0[j] + 2.0 * (k2[j] + k3[j]) + k4[j])
            for j in range(ny)
        ]

    def trapezoid_step(
        self,
        y: list[float],
        dy0: list[float],
        V: list[float],
        th: list[float],
        h: float,
        t: float,
    ) -> list[float]:
        """Implicit trapezoid on the differential states, Newton by finite
        differences on G(y') = y' - y - h/2 (f(y) + f(y')); fallback for
        stiff parameter sets."""
        ny = self.ny
        y_new = list(y)
        for _ in range(self.config.newton_max_iter):
            f_new, _, _ = self.consistent_eval(y_new, V, th, t + h)
            g = [
                y_new[j] - y[j] - 0.5 * h * (dy0[j] + f_new[j]) for j in range(ny)
            ]
            worst = max(abs(v) for v in g)
            if worst <= self.config.newton_tol:
                return y_new
            jac = np.zeros((ny, ny))
            step = 1e-7
            for j in range(ny):
                y_pert = list(y_new)
                y_pert[j] += step
                f_pert, _, _ = self.consistent_eval(y_pert, V, th, t + h)
                for r in range(ny):
                    jac[r, j] = (
                        (1.0 if r == j else 0.0)
                        - 0.5 * h * (f_pert[r] - f_new[r]) / step
                    )
            delta = np.linalg.solve(jac, -np.array(g))
            for j in range(ny):
                y_new[j] += float(delta[j])
        raise SimulationError(f"trapezoid Newton failed at t = {t:.6g}")


# -- driver --------------------------------------------------------------------


def _snap_to_grid(value: float, h: float, what: str) -> int:
    steps = round(value / h)
    if abs(value - steps * h) > GRID_ALIGN_TOL:
        raise ScenarioError(
            f"{what} = {value} does not align with the step grid (h = {h})"
        )
    return steps


def simulate(
    net: NetworkModel,
    components: dict[str, Component],
    scenario: Scenario,
    config: SolverConfig = SolverConfig(),
    equilibrium: EquilibriumSolution | None = None,
) -> Trajectory:
    """Run a scenario and return the sampled trajectory with diagnostics.

    The reference equilibrium (solved here unless supplied) anchors the
    divergence, the component storages, and the deviation integrals; with
    ``initial="equilibrium"`` it is also the pre-disturbance initial state.
    Deterministic for fixed inputs and step size.
    """
    if equilibrium is None:
        equilibrium = solve_equilibrium(EquilibriumProblem(net, components))
    h = config.step_size
    n_steps_total = _snap_to_grid(scenario.horizon, h, "horizon")
    sample_every = _snap_to_grid(scenario.output_period, h, "output period")
    if sample_every <= 0:
        raise ScenarioError("output period shorter than one step")
    if scenario.horizon > 0 and n_steps_total % sample_every != 0:
        raise ScenarioError("horizon must be a whole number of output periods")

    engine = _Engine(net, components, config)
    comp_ids = engine.comp_ids

    # anchors: solved-equilibrium terminal state and injections per component
    anchors: dict[str, Anchor] = {}
    for cid, comp in zip(comp_ids, engine.comps):
        node = net.node_index[comp.bus]
        anchors[cid] = Anchor(
            P=equilibrium.injections_P[cid],
            Q=equilibrium.injections_Q[cid],
            V=float(equilibrium.state.V[node]),
            theta=float(equilibrium.state.theta[node]),
        )
    bregman = BregmanDivergence(
        net, equilibrium.state.V.copy(), equilibrium.state.theta.copy()
    )
    storage_ok: dict[str, bool] = {}
    for cid, comp in zip(comp_ids, engine.comps):
        try:
            comp.require_stiffness(anchors[cid])
            storage_ok[cid] = True
        except CertificateUnavailable:
            # storage diagnostics degrade to NaN; flows and integrals stay valid
            storage_ok[cid] = False

    # initial differential state
    y: list[float] = [0.0] * engine.ny
    if scenario.initial == "equilibrium":
        for c, cid in enumerate(comp_ids):
            xs = equilibrium.component_states[cid]
            off = engine.offsets[c]
            for j, val in enumerate(xs):
                y[off + j] = float(val)
    else:
        for c, (cid, comp) in enumerate(zip(comp_ids, engine.comps)):
            given = scenario.explicit_states.get(cid)
            if given is None:
                raise ScenarioError(f"explicit initial state missing for {cid!r}")
            off = engine.offsets[c]
            for j, label in enumerate(comp.state_labels):
                if label not in given:
                    raise ScenarioError(
                        f"explicit state for {cid!r} missing field {label!r}"
                    )
                y[off + j] = float(given[label])

    # event schedule: step index -> list of callables on the engine/state
    events: dict[int, list[Disturbance]] = {}
    for d in scenario.disturbances:
        idx = _snap_to_grid(d.at, h, "disturbance time")
        events.setdefault(idx, []).append(d)
        duration = getattr(d, "duration", None)
        if duration is not None:
            end_idx = _snap_to_grid(d.at + duration, h, "disturbance end time")
            events.setdefault(end_idx, []).append(("revert", d))  # type: ignore[arg-type]

    def apply_events(step_idx: int) -> tuple[bool, bool]:
        """Mutates y/engine; returns (anything applied, network modified)."""
        if step_idx not in events:
            return False, False
        network_dirty = False
        for entry in events[step_idx]:
            if isinstance(entry, tuple):  # revert marker
                _, dist = entry
                engine.active_mods.remove(dist)
                network_dirty = True
                continue
            if isinstance(entry, StatePerturbation):
                if entry.component not in comp_ids:
                    raise ScenarioError(f"unknown component {entry.component!r}")
                c = comp_ids.index(entry.component)
                comp = engine.comps[c]
                for label, delta in entry.delta.items():
                    if label not in comp.state_labels:
                        raise ScenarioError(
                            f"component {entry.component!r} has no state {label!r}"
                        )
                    y[engine.offsets[c] + comp.state_labels.index(label)] += delta
            else:
                engine.active_mods.append(entry)
                network_dirty = True
        if network_dirty:
            engine.rebuild_with_mods()
        return True, network_dirty

    # working buffers start at the equilibrium bus state
    V = [float(equilibrium.state.V[i]) for i in range(net.n_nodes)]
    th = [float(equilibrium.state.theta[i]) for i in range(net.n_nodes)]

    _, network_changed = apply_events(0)
    dy, p, q = engine.consistent_eval(y, V, th, 0.0)
    vp_ref = eval_vp(net, V, th)  # base-network potential at the initial point

    # accumulators (advanced every integration step)
    shifted = {cid: 0.0 for cid in comp_ids}
    unshifted = 0.0

    n_samples = n_steps_total // sample_every + 1 if n_steps_total else 1
    times = np.zeros(n_samples)
    bus_v = np.zeros((n_samples, net.n_nodes))
    bus_t = np.zeros((n_samples, net.n_nodes))
    comp_states = {
        cid: np.zeros((n_samples, comp.nstates))
        for cid, comp in zip(comp_ids, engine.comps)
    }
    series_p = {cid: np.zeros(n_samples) for cid in comp_ids}
    series_q = {cid: np.zeros(n_samples) for cid in comp_ids}
    vp_series = np.zeros(n_samples)
    w_series = np.zeros(n_samples)
    storage_series = {cid: np.zeros(n_samples) for cid in comp_ids}
    wdot_series = {cid: np.zeros(n_samples) for cid in comp_ids}
    supply_series = {cid: np.zeros(n_samples) for cid in comp_ids}
    integral_series = {cid: np.zeros(n_samples) for cid in comp_ids}
    unshifted_series = np.zeros(n_samples)

    def record(sample: int, t: float) -> None:
        times[sample] = t
        for i in range(net.n_nodes):
            bus_v[sample, i] = V[i]
            bus_t[sample, i] = th[i]
        va = np.array(V)
        ta = np.array(th)
        vp_series[sample] = eval_vp(net, va, ta) - vp_ref
        w_series[sample] = bregman.value(va, ta)
        for c, (cid, comp) in enumerate(zip(comp_ids, engine.comps)):
            off = engine.offsets[c]
            x = y[off : off + comp.nstates]
            node = engine.comp_node[c]
            u = (p[node], q[node])
            comp_states[cid][sample, :] = x
            series_p[cid][sample] = u[0]
            series_q[cid][sample] = u[1]
            anchor = anchors[cid]
            if storage_ok[cid]:
                storage_series[cid][sample] = comp.storage(x, anchor)
                wdot_series[cid][sample] = comp.storage_rate(x, u, anchor)
            else:
                storage_series[cid][sample] = math.nan
                wdot_series[cid][sample] = math.nan
            f = comp.derivative(x, u)
            theta_dot = f[comp.state_labels.index("theta")]
            v_dot = f[comp.state_labels.index("v")]
            supply_series[cid][sample] = supply_rate(
                u[0] - anchor.P,
                u[1] - anchor.Q,
                theta_dot,
                x[comp.state_labels.index("v")],
                v_dot,
                config.convention,
            )
            integral_series[cid][sample] = shifted[cid]
        unshifted_series[sample] = unshifted

    record(0, 0.0)

    stepper = engine.rk4_step if config.integrator == "rk4" else engine.trapezoid_step

    prev_theta = [y[engine.theta_idx[c]] for c in range(len(comp_ids))]
    prev_lnv = [math.log(y[engine.v_idx[c]]) for c in range(len(comp_ids))]
    prev_p = [p[engine.comp_node[c]] for c in range(len(comp_ids))]
    prev_q = [q[engine.comp_node[c]] for c in range(len(comp_ids))]

    for step in range(n_steps_total):
        t = step * h
        y = stepper(y, dy, V, th, h, t)
        t_next = (step + 1) * h
        dy, p, q = engine.consistent_eval(y, V, th, t_next)
        # trapezoid accumulation over this step
        for c, cid in enumerate(comp_ids):
            theta_c = y[engine.theta_idx[c]]
            lnv_c = math.log(y[engine.v_idx[c]])
            node = engine.comp_node[c]
            p_mid = 0.5 * (prev_p[c] + p[node])
            q_mid = 0.5 * (prev_q[c] + q[node])
            d_theta = theta_c - prev_theta[c]
            d_lnv = lnv_c - prev_lnv[c]
            unshifted += p_mid * d_theta + q_mid * d_lnv
            anchor = anchors[cid]
            shifted[cid] += (p_mid - anchor.P) * d_theta + (q_mid - anchor.Q) * d_lnv
            prev_theta[c] = theta_c
            prev_lnv[c] = lnv_c
            prev_p[c] = p[node]
            prev_q[c] = q[node]
        applied, net_dirty = apply_events(step + 1)
        if applied:
            network_changed = network_changed or net_dirty
            dy, p, q = engine.consistent_eval(y, V, th, t_next)
            for c in range(len(comp_ids)):
                # refresh accumulator endpoints across the discontinuity
                prev_theta[c] = y[engine.theta_idx[c]]
                prev_lnv[c] = math.log(y[engine.v_idx[c]])
                prev_p[c] = p[engine.comp_node[c]]
                prev_q[c] = q[engine.comp_node[c]]
        if (step + 1) % sample_every == 0:
            record((step + 1) // sample_every, t_next)

    return Trajectory(
        times=times,
        bus_ids=list(net.non_ground),
        V=bus_v,
        theta=bus_t,
        comp_states=comp_states,
        comp_labels={
            cid: comp.state_labels for cid, comp in zip(comp_ids, engine.comps)
        },
        P=series_p,
        Q=series_q,
        vp=vp_series,
        w=w_series,
        storage=storage_series,
        storage_rate=wdot_series,
        supply=supply_series,
        integral=integral_series,
        unshifted_integral=unshifted_series,
        convention=config.convention,
        anchors=anchors,
        equilibrium=equilibrium,
        network=net,
        components=dict(components),
        config=config,
        scenario=scenario,
        network_changed=network_changed,
    )
