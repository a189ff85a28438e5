"""Damped-Newton steady-state solver and setpoint back-solver.

The steady-state system stacks, per non-ground bus, either the component's
equilibrium relations (dynamic bus) or the constant-power balance (passive
bus), over unknowns (theta_i, V_i). When no component anchors the absolute
angle the system is invariant under uniform angle shifts; in that case the
reference bus's angle-type row is replaced by a pin to its setpoint and the
replaced relation is checked after convergence, so inconsistent setpoints
are reported rather than silently absorbed.

The Jacobian is assembled from the same closed-form injection partials used
by the power-flow map; a finite-difference Jacobian is available as a debug
oracle. Solves are deterministic and independent of each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .components import Component, Setpoints
from .network import (
    BusKind,
    BusState,
    NetworkModel,
    injection_partials,
    power_injection,
)

__all__ = [
    "EquilibriumError",
    "InconsistentInput",
    "EquilibriumProblem",
    "EquilibriumSolution",
    "SetpointSolution",
    "solve_equilibrium",
    "solve_setpoints",
    "steady_state_residual",
    "fd_jacobian",
]

CONSISTENCY_TOL = 1e-8       # tolerance on a pinned-out steady-state relation
LOAD_MATCH_TOL = 1e-2        # declared vs implied load when back-solving


class EquilibriumError(RuntimeError):
    """Newton failure: non-convergence or singular Jacobian."""


class InconsistentInput(ValueError):
    """Setpoints or operating point incompatible with the network."""


@dataclass
class EquilibriumProblem:
    net: NetworkModel
    components: dict[str, Component]  # keyed by component id
    reference_bus: str | None = None  # defaults to the first dynamic bus
    initial_V: np.ndarray | None = None
    initial_theta: np.ndarray | None = None
    tol: float = 1e-10
    max_iter: int = 50

    def __post_init__(self) -> None:
        for shunt in self.net.dynamic_shunts:
            if shunt.component_id not in self.components:
                raise InconsistentInput(
                    f"no component supplied for id {shunt.component_id!r}"
                )
        if self.reference_bus is None:
            dyn = [b.id for b in self.net.buses if b.kind is BusKind.DYNAMIC]
            self.reference_bus = dyn[0] if dyn else self.net.non_ground[0]
        if self.reference_bus not in self.net.node_index:
            raise InconsistentInput(
                f"reference bus {self.reference_bus!r} is not a non-ground bus"
            )


@dataclass
class EquilibriumSolution:
    state: BusState
    component_states: dict[str, tuple[float, ...]]
    injections_P: dict[str, float]  # generation-positive, keyed by component id
    injections_Q: dict[str, float]
    residual_norm: float
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    pinned_reference: bool = False
    pin_consistency_residual: float = 0.0


@dataclass
class SetpointSolution:
    setpoints: dict[str, Setpoints]            # keyed by component id
    implied_loads: dict[str, tuple[float, float]]  # consumption-positive, by bus
    load_mismatch: dict[str, tuple[float, float]]  # declared minus implied


def _component_at(net: NetworkModel, components: dict[str, Component], node: int) -> Component:
    shunt = net.shunt_at[node]
    assert shunt is not None
    return components[shunt.component_id]


def steady_state_residual(
    net: NetworkModel,
    components: dict[str, Component],
    V,
    theta,
) -> np.ndarray:
    """Stacked steady-state residual, two rows per non-ground bus.

    Dynamic bus: the component's equilibrium relations evaluated at the bus
    injections. Passive bus: generation balance P_i + p0 = 0, Q_i + q0 = 0
    (loads consumption-positive, so an empty bus balances at zero flow).
    """
    n = net.n_nodes
    p, q = power_injection(net, V, theta)
    res = np.zeros(2 * n)
    for i in range(n):
        shunt = net.shunt_at[i]
        if shunt is not None:
            comp = components[shunt.component_id]
            f1, f2 = comp.steady_state_residual(theta[i], V[i], p[i], q[i])
            res[2 * i] = f1
            res[2 * i + 1] = f2
        else:
            p0 = sum(cp.p0 for cp in net.cp_at[i])
            q0 = sum(cp.q0 for cp in net.cp_at[i])
            res[2 * i] = p[i] + p0
            res[2 * i + 1] = q[i] + q0
    return res


def _jacobian(
    net: NetworkModel,
    components: dict[str, Component],
    V,
    theta,
) -> np.ndarray:
    """Analytic Jacobian of the steady-state residual w.r.t. (theta_i, V_i)."""
    n = net.n_nodes
    dp_dt, dp_dv, dq_dt, dq_dv = injection_partials(net, V, theta)
    jac = np.zeros((2 * n, 2 * n))
    for i in range(n):
        shunt = net.shunt_at[i]
        if shunt is not None:
            comp = components[shunt.component_id]
            rows = comp.steady_state_partials()
            for r, (d_theta, d_v, d_p, d_q) in enumerate(rows):
                row = 2 * i + r
                jac[row, 2 * i] += d_theta
                jac[row, 2 * i + 1] += d_v
                for k in range(n):
                    jac[row, 2 * k] += d_p * dp_dt[i, k] + d_q * dq_dt[i, k]
                    jac[row, 2 * k + 1] += d_p * dp_dv[i, k] + d_q * dq_dv[i, k]
        else:
            for k in range(n):
                jac[2 * i, 2 * k] = dp_dt[i, k]
                jac[2 * i, 2 * k + 1] = dp_dv[i, k]
                jac[2 * i + 1, 2 * k] = dq_dt[i, k]
                jac[2 * i + 1, 2 * k + 1] = dq_dv[i, k]
    return jac


def fd_jacobian(
    net: NetworkModel,
    components: dict[str, Component],
    V,
    theta,
    step: float = 1e-7,
) -> np.ndarray:
    """Central finite-difference Jacobian; debug oracle for the analytic one."""
    n = net.n_nodes
    jac = np.zeros((2 * n, 2 * n))
    v = np.array(V, dtype=float)
    t = np.array(theta, dtype=float)
    for k in range(n):
        for sel, col in ((0, 2 * k), (1, 2 * k + 1)):
            tv, vv = t.copy(), v.copy()
            if sel == 0:
                tv[k] += step
            else:
                vv[k] += step
            r_plus = steady_state_residual(net, components, vv, tv)
            tv, vv = t.copy(), v.copy()
            if sel == 0:
                tv[k] -= step
            else:
                vv[k] -= step
            r_minus = steady_state_residual(net, components, vv, tv)
            jac[:, col] = (r_plus - r_minus) / (2.0 * step)
    return jac


def _rotation_symmetric(net: NetworkModel, components: dict[str, Component]) -> bool:
    """True when no component's steady state depends on absolute angle."""
    return not any(
        components[s.component_id].anchors_angle for s in net.dynamic_shunts
    )


def solve_equilibrium(problem: EquilibriumProblem) -> EquilibriumSolution:
    """Newton solve of the whole-system steady state.

    Starts from the supplied guess (flat V = 1, theta = 0 by default), damps
    by halving on residual increase, and stops at max-norm residual <= tol.
    For rotation-symmetric systems the reference angle row is pinned; its
    displaced relation is then verified against CONSISTENCY_TOL.
    """
    net = problem.net
    comps = problem.components
    n = net.n_nodes
    v = (
        np.array(problem.initial_V, dtype=float)
        if problem.initial_V is not None
        else np.ones(n)
    )
    t = (
        np.array(problem.initial_theta, dtype=float)
        if problem.initial_theta is not None
        else np.zeros(n)
    )
    if v.shape != (n,) or t.shape != (n,):
        raise InconsistentInput("initial guess has wrong length")

    pin = _rotation_symmetric(net, comps)
    ref = net.node_index[problem.reference_bus]
    ref_row = 2 * ref  # the angle-type relation of the reference bus
    ref_shunt = net.shunt_at[ref]
    if pin:
        if ref_shunt is not None:
            theta_pin = comps[ref_shunt.component_id].setpoints.theta_e
        else:
            theta_pin = 0.0
        t[ref] = theta_pin

    def residual(vv, tt) -> np.ndarray:
        res = steady_state_residual(net, comps, vv, tt)
        if pin:
            res[ref_row] = tt[ref] - theta_pin
        return res

    res = residual(v, t)
    norm = float(np.max(np.abs(res)))
    history = [norm]
    iterations = 0
    while norm > problem.tol:
        if iterations >= problem.max_iter:
            raise EquilibriumError(
                f"Newton did not converge in {problem.max_iter} iterations "
                f"(residual {norm:.3e})"
            )
        jac = _jacobian(net, comps, v, t)
        if pin:
            jac[ref_row, :] = 0.0
            jac[ref_row, 2 * ref] = 1.0
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise EquilibriumError(
                f"Jacobian singular at iteration {iterations}: {exc}"
            ) from exc
        scale = 1.0
        for _ in range(30):
            t_new = t + scale * step[0::2]
            v_new = v + scale * step[1::2]
            if np.any(v_new <= 0.0):
                scale *= 0.5
                continue
            res_new = residual(v_new, t_new)
            norm_new = float(np.max(np.abs(res_new)))
            if norm_new < norm or norm_new <= problem.tol:
                break
            scale *= 0.5
        else:
            raise EquilibriumError(
                f"Newton stalled at iteration {iterations} (residual {norm:.3e})"
            )
        v, t, res, norm = v_new, t_new, res_new, norm_new
        history.append(norm)
        iterations += 1

    pin_resid = 0.0
    if pin:
        full = steady_state_residual(net, comps, v, t)
        pin_resid = float(abs(full[ref_row]))
        if pin_resid > CONSISTENCY_TOL:
            raise InconsistentInput(
                f"setpoints inconsistent: pinned relation at bus "
                f"{problem.reference_bus!r} has residual {pin_resid:.3e}"
            )

    state = BusState(V=v, theta=t)
    p, q = power_injection(net, v, t)
    comp_states: dict[str, tuple[float, ...]] = {}
    inj_p: dict[str, float] = {}
    inj_q: dict[str, float] = {}
    for shunt in net.dynamic_shunts:
        i = net.node_index[shunt.bus]
        comp = comps[shunt.component_id]
        comp_states[shunt.component_id] = comp.equilibrium_state(t[i], v[i])
        inj_p[shunt.component_id] = p[i]
        inj_q[shunt.component_id] = q[i]
    return EquilibriumSolution(
        state=state,
        component_states=comp_states,
        injections_P=inj_p,
        injections_Q=inj_q,
        residual_norm=norm,
        iterations=iterations,
        residual_history=history,
        pinned_reference=pin,
        pin_consistency_residual=pin_resid,
    )


def solve_setpoints(
    net: NetworkModel,
    components: dict[str, Component],
    V,
    theta,
    load_tol: float = LOAD_MATCH_TOL,
) -> SetpointSolution:
    """Back-solve component setpoints from a target operating point.

    Given bus voltages and angles, the natural setpoint choice
    (P_e, Q_e, V_e, theta_e) = (P_i, Q_i, V_i, theta_i) makes every
    steady-state relation vanish identically. Declared constant-power loads
    are compared against the implied ones; a mismatch beyond `load_tol`
    (for example a target voltage that violates the load balance) is
    reported as inconsistent input.
    """
    n = net.n_nodes
    if len(V) != n or len(theta) != n:
        raise InconsistentInput("operating point has wrong length")
    if any(val <= 0.0 for val in V):
        raise InconsistentInput("operating point voltages must be positive")
    p, q = power_injection(net, V, theta)
    setpoints: dict[str, Setpoints] = {}
    implied: dict[str, tuple[float, float]] = {}
    mismatch: dict[str, tuple[float, float]] = {}
    for shunt in net.dynamic_shunts:
        i = net.node_index[shunt.bus]
        setpoints[shunt.component_id] = Setpoints(
            P_e=p[i], Q_e=q[i], V_e=V[i], theta_e=theta[i]
        )
    bad: list[str] = []
    for i in net.passive_nodes():
        bus = net.non_ground[i]
        implied[bus] = (-p[i], -q[i])  # consumption-positive
        declared_p = sum(cp.p0 for cp in net.cp_at[i])
        declared_q = sum(cp.q0 for cp in net.cp_at[i])
        dp = declared_p - implied[bus][0]
        dq = declared_q - implied[bus][1]
        mismatch[bus] = (dp, dq)
        if abs(dp) > load_tol or abs(dq) > load_tol:
            bad.append(
                f"{bus}: declared ({declared_p:.6g}, {declared_q:.6g}) vs "
                f"implied ({implied[bus][0]:.6g}, {implied[bus][1]:.6g})"
            )
    if bad:
        raise InconsistentInput(
            "operating point violates constant-power balance: " + "; ".join(bad)
        )
    return SetpointSolution(
        setpoints=setpoints, implied_loads=implied, load_mismatch=mismatch
    )
