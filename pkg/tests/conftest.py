"""Shared fixtures: the packaged 3-bus case and small constructed networks."""

from __future__ import annotations

import math

import numpy as np
import pytest

from phasorstab.cli import resolve_case_path
from phasorstab.components import DroopComponent, Setpoints, VsgComponent
from phasorstab.equilibrium import EquilibriumProblem, solve_equilibrium, solve_setpoints
from phasorstab.netfile import load_case
from phasorstab.network import (
    Bus,
    BusKind,
    ConstantPowerBranch,
    DynamicShunt,
    LosslessLine,
    NetworkModel,
)
from phasorstab.simulator import simulate


@pytest.fixture(scope="session")
def case3bus():
    """Packaged 3-bus case with setpoints back-solved from its operating point."""
    case = load_case(resolve_case_path("case3bus"))
    v = [case.operating_point[b][0] for b in case.net.non_ground]
    th = [case.operating_point[b][1] for b in case.net.non_ground]
    sp = solve_setpoints(case.net, case.components, v, th)
    for cid in case.components:
        case.components[cid] = case.components[cid].with_setpoints(sp.setpoints[cid])
    return case


@pytest.fixture(scope="session")
def case3bus_solution(case3bus):
    guess_v = np.array([case3bus.operating_point[b][0] for b in case3bus.net.non_ground])
    guess_t = np.array([case3bus.operating_point[b][1] for b in case3bus.net.non_ground])
    return solve_equilibrium(
        EquilibriumProblem(
            case3bus.net,
            case3bus.components,
            initial_V=guess_v,
            initial_theta=guess_t,
        )
    )


@pytest.fixture(scope="session")
def traj_default(case3bus, case3bus_solution):
    """The shipped default scenario (state perturbation, 40 s)."""
    return simulate(
        case3bus.net,
        case3bus.components,
        case3bus.scenario,
        case3bus.solver,
        case3bus_solution,
    )


def make_vsg_pair():
    """Two swing sources over one line; rotation-symmetric, closed-form angle."""
    net = NetworkModel(
        buses=[
            Bus("a", BusKind.DYNAMIC, "vsg_a"),
            Bus("b", BusKind.DYNAMIC, "vsg_b"),
            Bus("gnd", BusKind.GROUND),
        ],
        lines=[LosslessLine("a", "b", 1.0)],
        constant_power=[],
        dynamic_shunts=[DynamicShunt("a", "vsg_a"), DynamicShunt("b", "vsg_b")],
    )
    q_c = 1.0 - math.sqrt(0.99)  # reactive flow consistent with the 0.1 pu transfer
    comps = {
        "vsg_a": VsgComponent(
            id="vsg_a", bus="a", M=0.2, Dp=0.1, Dq=0.05, tau_q=0.5,
            setpoints=Setpoints(P_e=0.1, Q_e=q_c, V_e=1.0, theta_e=0.0),
        ),
        "vsg_b": VsgComponent(
            id="vsg_b", bus="b", M=0.3, Dp=0.12, Dq=0.04, tau_q=0.4,
            setpoints=Setpoints(P_e=-0.1, Q_e=q_c, V_e=1.0, theta_e=0.0),
        ),
    }
    return net, comps


def make_vsg_with_empty_bus():
    """Swing source feeding an unloaded bus: zero flow at all times."""
    net = NetworkModel(
        buses=[
            Bus("gen", BusKind.DYNAMIC, "vsg1"),
            Bus("far", BusKind.PASSIVE),
            Bus("gnd", BusKind.GROUND),
        ],
        lines=[LosslessLine("gen", "far", 0.5)],
        constant_power=[],
        dynamic_shunts=[DynamicShunt("gen", "vsg1")],
    )
    comps = {
        "vsg1": VsgComponent(
            id="vsg1", bus="gen", M=0.16, Dp=0.076, Dq=0.03, tau_q=0.3,
            setpoints=Setpoints(P_e=0.0, Q_e=0.0, V_e=1.0, theta_e=0.0),
        )
    }
    return net, comps


def make_compensated_load_case():
    """Swing source with zero reactive setpoint feeding a compensated load.

    The load bus voltage is 1/cos(alpha), which puts the source exactly at
    zero reactive output, so its storage certificate is exact.
    """
    alpha, x = 0.1, 0.5
    v2 = 1.0 / math.cos(alpha)
    p_load = math.tan(alpha) / x
    q_load = -(v2 * v2 - v2 * math.cos(alpha)) / x  # injects reactive power
    net = NetworkModel(
        buses=[
            Bus("gen", BusKind.DYNAMIC, "vsg1"),
            Bus("load", BusKind.PASSIVE),
            Bus("gnd", BusKind.GROUND),
        ],
        lines=[LosslessLine("gen", "load", x)],
        constant_power=[ConstantPowerBranch("load", p_load, q_load)],
        dynamic_shunts=[DynamicShunt("gen", "vsg1")],
    )
    comps = {
        "vsg1": VsgComponent(id="vsg1", bus="gen", M=0.2, Dp=0.1, Dq=0.05, tau_q=0.5)
    }
    sp = solve_setpoints(net, comps, [1.0, v2], [0.0, -alpha])
    comps["vsg1"] = comps["vsg1"].with_setpoints(sp.setpoints["vsg1"])
    return net, comps


def make_mixed_pair():
    """Swing source and droop source over one line, no passive buses."""
    net = NetworkModel(
        buses=[
            Bus("a", BusKind.DYNAMIC, "vsg_a"),
            Bus("b", BusKind.DYNAMIC, "droop_b"),
            Bus("gnd", BusKind.GROUND),
        ],
        lines=[LosslessLine("a", "b", 0.8)],
        constant_power=[],
        dynamic_shunts=[DynamicShunt("a", "vsg_a"), DynamicShunt("b", "droop_b")],
    )
    comps = {
        "vsg_a": VsgComponent(
            id="vsg_a", bus="a", M=0.2, Dp=0.1, Dq=0.05, tau_q=0.5,
            setpoints=Setpoints(P_e=0.0, Q_e=0.0, V_e=1.0, theta_e=0.0),
        ),
        "droop_b": DroopComponent(
            id="droop_b", bus="b", tau_p=2.0, tau_q=3.0, Dp=0.04, Dq=0.02,
            setpoints=Setpoints(P_e=0.0, Q_e=0.0, V_e=1.0, theta_e=0.0),
        ),
    }
    return net, comps


@pytest.fixture()
def vsg_pair():
    return make_vsg_pair()


@pytest.fixture()
def vsg_empty_bus():
    return make_vsg_with_empty_bus()


@pytest.fixture()
def compensated_load_case():
    return make_compensated_load_case()


@pytest.fixture()
def mixed_pair():
    return make_mixed_pair()
