"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Heavy runs (the step sweep and the fine-step transient) are shared through
session fixtures; their wall time is bounded by the runtime criteria.
Criterion 5 is expected to fail: the load-term sign that the trajectory
identities force on the potential leaves the divergence Hessian with one
small negative eigenvalue at this operating point (the lossless-line energy
is indefinite in these coordinates between buses of unequal magnitude).
The criterion is asserted as stated rather than weakened.
"""

import cmath
import math
import time

import numpy as np
import pytest

from phasorstab.certify import (
    certify,
    check_integral_criterion,
    check_storage_criterion,
    identity_residuals,
)
from phasorstab.components import SupplyConvention
from phasorstab.equilibrium import EquilibriumProblem, solve_equilibrium
from phasorstab.network import BusState, branch_currents_oracle, power_injection, tellegen_sum
from phasorstab.potential import (
    convexity_check,
    eval_vp,
    grad_vp,
    hessian_vp,
    path_dependence_experiment,
    rectangle_contour_pair,
)
from phasorstab.simulator import Scenario, SolverConfig, StatePerturbation, simulate

from conftest import make_vsg_with_empty_bus


def report(criterion: int, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {status} - {detail}")


def kicked_scenario(horizon, period):
    return Scenario(
        horizon=horizon,
        output_period=period,
        disturbances=[
            StatePerturbation(at=0.0, component="vsg1", delta={"omega": 0.1}),
            StatePerturbation(at=0.0, component="droop2", delta={"v": -0.02}),
        ],
    )


@pytest.fixture(scope="session")
def identity_sweep(case3bus, case3bus_solution):
    """10 s transient over three step halvings plus the fine h = 1e-4 run."""
    start = time.perf_counter()
    rows = []
    for h in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        traj = simulate(
            case3bus.net, case3bus.components, kicked_scenario(10.0, 0.1),
            SolverConfig(step_size=h), case3bus_solution,
        )
        potential_gap, divergence_gap = identity_residuals(traj)
        rows.append((h, potential_gap, divergence_gap))
    fine = simulate(
        case3bus.net, case3bus.components, kicked_scenario(10.0, 0.1),
        SolverConfig(step_size=1e-4), case3bus_solution,
    )
    fine_potential, fine_divergence = identity_residuals(fine)
    elapsed = time.perf_counter() - start
    return {
        "rows": rows,
        "fine": (fine_potential, fine_divergence),
        "elapsed": elapsed,
    }


def fitted_slope(rows, column):
    hs = [math.log(r[0]) for r in rows]
    vals = [math.log(r[column]) for r in rows]
    return float(np.polyfit(hs, vals, 1)[0])


def test_criterion_01_equilibrium_reproduction(case3bus):
    guess_v = np.array([case3bus.operating_point[b][0] for b in case3bus.net.non_ground])
    guess_t = np.array([case3bus.operating_point[b][1] for b in case3bus.net.non_ground])
    start = time.perf_counter()
    sol = solve_equilibrium(
        EquilibriumProblem(
            case3bus.net, case3bus.components,
            initial_V=guess_v, initial_theta=guess_t,
        )
    )
    elapsed = time.perf_counter() - start
    v_ok = all(
        abs(sol.state.V[i] - case3bus.operating_point[b][0]) <= 5e-3
        for i, b in enumerate(case3bus.net.non_ground)
    )
    t_ok = all(
        abs(sol.state.theta[i] - case3bus.operating_point[b][1]) <= 5e-4
        for i, b in enumerate(case3bus.net.non_ground)
    )
    ok = v_ok and t_ok and sol.residual_norm <= 1e-10 and elapsed < 1.0
    report(
        1, ok,
        f"V = {np.round(sol.state.V, 5)}, theta = {np.round(sol.state.theta, 6)}, "
        f"residual {sol.residual_norm:.2e}, {elapsed*1e3:.0f} ms",
    )
    assert v_ok and t_ok
    assert sol.residual_norm <= 1e-10
    assert elapsed < 1.0


def test_criterion_02_operating_point_load_consistency(case3bus):
    v = [case3bus.operating_point[b][0] for b in case3bus.net.non_ground]
    th = [case3bus.operating_point[b][1] for b in case3bus.net.non_ground]
    p, q = power_injection(case3bus.net, v, th)
    load = case3bus.net.node_index["bus3"]
    ok = abs(p[load] - (-0.03)) <= 0.01 and abs(q[load] - (-0.55)) <= 0.01
    report(2, ok, f"bus3 injection ({p[load]:.6f}, {q[load]:.6f}) vs (-0.03, -0.55)")
    assert ok


def test_criterion_03_energy_balance_identity(identity_sweep):
    slope = fitted_slope(identity_sweep["rows"], 1)
    fine = identity_sweep["fine"][0]
    elapsed = identity_sweep["elapsed"]
    ok = fine <= 1e-6 and 1.8 <= slope <= 2.2 and elapsed < 30.0
    report(
        3, ok,
        f"residual {fine:.2e} at h=1e-4 (tol 1e-6), order {slope:.2f}, "
        f"sweep wall time {elapsed:.1f} s",
    )
    assert fine <= 1e-6
    assert 1.8 <= slope <= 2.2
    assert elapsed < 30.0


def test_criterion_04_divergence_identity(identity_sweep):
    slope = fitted_slope(identity_sweep["rows"], 2)
    fine = identity_sweep["fine"][1]
    ok = fine <= 1e-6 and 1.8 <= slope <= 2.2
    report(4, ok, f"residual {fine:.2e} at h=1e-4 (tol 1e-6), order {slope:.2f}")
    assert fine <= 1e-6
    assert 1.8 <= slope <= 2.2


def test_criterion_05_convexity_membership(case3bus, case3bus_solution):
    h = hessian_vp(
        case3bus.net, case3bus_solution.state.V, case3bus_solution.state.theta
    )
    rep = convexity_check(h, zero_tol=1e-8, pos_tol=1e-10)
    eigs = np.linalg.eigvalsh(h)
    ok = rep.member
    report(
        5, ok,
        f"eigenvalues {np.round(eigs, 6)}; {rep.detail} "
        "(known conflict: the load-term sign fixed by the trajectory "
        "identities makes this Hessian indefinite; membership holds only "
        "under the opposite sign, which breaks those identities)",
    )
    assert rep.member, (
        "the divergence Hessian has a negative eigenvalue "
        f"{eigs[0]:.4e}; membership requires the sign-flipped load term, "
        "which the trajectory identities exclude"
    )


def test_criterion_06_qualitative_transient(traj_default, case3bus_solution):
    dev_v = np.abs(traj_default.V - case3bus_solution.state.V[None, :])
    dev_t = np.abs(traj_default.theta - case3bus_solution.state.theta[None, :])
    norm = np.sqrt((dev_v ** 2 + dev_t ** 2).sum(axis=1))
    ratio = norm[-1] / norm.max()
    per_bus_ok = True
    for b in range(dev_v.shape[1]):
        for dev in (dev_v[:, b], dev_t[:, b]):
            peak = dev.max()
            if peak > 1e-9:
                per_bus_ok = per_bus_ok and dev[-1] <= 0.01 * peak
    w_final = traj_default.w[-1]
    integral = check_integral_criterion(traj_default, 1e-6)
    all_hold = all(v.satisfied for v in integral.values())
    if all_hold:
        _, divergence_gap = identity_residuals(traj_default)
        w_lens_ok = np.max(traj_default.w - traj_default.w[0]) <= 10 * divergence_gap
    else:
        w_lens_ok = True  # antecedent false: the implication holds vacuously
    ok = ratio <= 0.01 and per_bus_ok and w_final <= 1e-4 and w_lens_ok
    report(
        6, ok,
        f"deviation ratio {ratio:.4f} (<= 0.01), W final {w_final:.2e} (<= 1e-4), "
        f"integral criteria all hold: {all_hold}",
    )
    assert ratio <= 0.01
    assert per_bus_ok
    assert w_final <= 1e-4
    assert w_lens_ok


def test_criterion_07_path_dependence(case3bus):
    contour_a, contour_b = rectangle_contour_pair(1.0, 1.0)
    lossless = path_dependence_experiment(0.0, -1.7, contour_a, contour_b)
    resistive = path_dependence_experiment(2.3, 0.0, contour_a, contour_b)
    unit = path_dependence_experiment(1.0, 0.0, contour_a, contour_b)
    ok = (
        abs(lossless.im_diff) <= 1e-8
        and abs(resistive.re_diff) <= 1e-8
        and abs(unit.im_diff - 2.0) <= 1e-6
    )
    report(
        7, ok,
        f"g=0: im_diff {lossless.im_diff:.2e}; b=0: re_diff {resistive.re_diff:.2e}; "
        f"g=1 unit area: im_diff {unit.im_diff:.9f}",
    )
    assert abs(lossless.im_diff) <= 1e-8
    assert abs(resistive.re_diff) <= 1e-8
    assert abs(unit.im_diff - 2.0) <= 1e-6


def test_criterion_08_oracle_equivalence(case3bus, traj_default):
    net = case3bus.net
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        v = rng.uniform(0.5, 1.5, size=3)
        th = rng.uniform(-math.pi, math.pi, size=3)
        p, q = power_injection(net, v, th)
        vbar = [v[i] * cmath.exp(1j * th[i]) for i in range(3)]
        currents = branch_currents_oracle(net, BusState(v, th))
        nodal = [0j] * 3
        for idx, line in enumerate(net.lines):
            cur = currents[f"line:{line.from_bus}-{line.to_bus}:{idx}"]
            nodal[net.node_index[line.from_bus]] += cur
            nodal[net.node_index[line.to_bus]] -= cur
        for i in range(3):
            s = vbar[i] * nodal[i].conjugate()
            scale = max(abs(s.real), abs(s.imag), 1.0)
            worst = max(
                worst, abs(p[i] - s.real) / scale, abs(q[i] - s.imag) / scale
            )
    tellegen_worst = 0.0
    for s in range(traj_default.n_samples):
        state = BusState(traj_default.V[s].copy(), traj_default.theta[s].copy())
        inj = {
            cid: (traj_default.P[cid][s], traj_default.Q[cid][s])
            for cid in traj_default.component_ids()
        }
        tellegen_worst = max(tellegen_worst, abs(tellegen_sum(net, state, inj)))
    ok = worst <= 1e-12 and tellegen_worst <= 1e-9
    report(
        8, ok,
        f"worst closed-form/oracle relative gap {worst:.2e} over 1000 states; "
        f"max orthogonality sum {tellegen_worst:.2e} over {traj_default.n_samples} samples",
    )
    assert worst <= 1e-12
    assert tellegen_worst <= 1e-9


def test_criterion_09_certificate_engine(case3bus, case3bus_solution, traj_default):
    net, comps = make_vsg_with_empty_bus()
    sol = solve_equilibrium(EquilibriumProblem(net, comps))
    scen = Scenario(
        horizon=10.0,
        output_period=0.01,
        disturbances=[StatePerturbation(at=0.0, component="vsg1", delta={"omega": 0.2})],
    )
    traj = simulate(net, comps, scen, SolverConfig(step_size=1e-3), sol)
    dp = comps["vsg1"].Dp
    omega = traj.comp_states["vsg1"][:, 1]
    margin = traj.storage_rate["vsg1"] - traj.supply["vsg1"]  # negated convention
    analytic_gap = float(np.max(np.abs(margin - (-dp * omega * omega))))
    verdict = check_storage_criterion(traj, comps, SupplyConvention.NEGATED, 1e-6)
    toy_ok = verdict["vsg1"].satisfied and analytic_gap <= 1e-9

    full = certify(
        case3bus.net, case3bus.components, case3bus_solution, traj_default, tol=1e-6
    )
    recorded = all(
        full.storage[conv][cid].worst_margin is not None
        for conv in SupplyConvention
        for cid in ("vsg1", "droop2")
    )
    ok = toy_ok and recorded
    report(
        9, ok,
        f"analytic margin gap {analytic_gap:.2e} (tol 1e-9); both-convention "
        f"verdicts recorded for the case study: {recorded}",
    )
    assert toy_ok
    assert recorded


def test_criterion_10_numerical_hygiene(tmp_path, case3bus, case3bus_solution):
    net = case3bus.net
    n = net.n_nodes
    rng = np.random.default_rng(77)
    worst_grad = 0.0
    worst_hess = 0.0
    for _ in range(5):
        v = rng.uniform(0.7, 1.3, size=3)
        th = rng.uniform(-0.5, 0.5, size=3)
        z = np.concatenate([th, np.log(v)])

        def vp_of(zz):
            return eval_vp(net, np.exp(zz[n:]), zz[:n])

        g = grad_vp(net, v, th)
        eps = 1e-6
        for j in range(2 * n):
            zp, zm = z.copy(), z.copy()
            zp[j] += eps
            zm[j] -= eps
            fd = (vp_of(zp) - vp_of(zm)) / (2 * eps)
            worst_grad = max(worst_grad, abs(g[j] - fd) / max(1.0, abs(fd)))
        h_mat = hessian_vp(net, v, th)
        eps = 1e-4
        for a in range(2 * n):
            for b in range(2 * n):
                zpp = z.copy(); zpp[a] += eps; zpp[b] += eps
                zpm = z.copy(); zpm[a] += eps; zpm[b] -= eps
                zmp = z.copy(); zmp[a] -= eps; zmp[b] += eps
                zmm = z.copy(); zmm[a] -= eps; zmm[b] -= eps
                fd = (vp_of(zpp) - vp_of(zpm) - vp_of(zmp) + vp_of(zmm)) / (
                    4 * eps * eps
                )
                worst_hess = max(worst_hess, abs(h_mat[a, b] - fd) / max(1.0, abs(fd)))

    comp = case3bus.components["vsg1"]
    anchor_x = comp.equilibrium_state(0.0, 1.0)
    eps = 1e-6
    worst_storage = 0.0
    for j in range(comp.nstates):
        xp = list(anchor_x); xp[j] += eps
        xm = list(anchor_x); xm[j] -= eps
        fd = (comp.storage(tuple(xp)) - comp.storage(tuple(xm))) / (2 * eps)
        g_j = comp.storage_gradient(anchor_x)[j]
        worst_storage = max(worst_storage, abs(fd - g_j))

    outputs = []
    for run in range(2):
        traj = simulate(
            case3bus.net, case3bus.components, kicked_scenario(0.5, 0.01),
            SolverConfig(step_size=1e-3), case3bus_solution,
        )
        path = tmp_path / f"hygiene{run}.csv"
        traj.to_csv(str(path))
        outputs.append(path.read_bytes())
    deterministic = outputs[0] == outputs[1]

    ok = (
        worst_grad <= 1e-6
        and worst_hess <= 1e-6
        and worst_storage <= 1e-6
        and deterministic
    )
    report(
        10, ok,
        f"gradient gap {worst_grad:.2e}, Hessian gap {worst_hess:.2e}, "
        f"storage-gradient gap {worst_storage:.2e}, bitwise deterministic: {deterministic}",
    )
    assert worst_grad <= 1e-6
    assert worst_hess <= 1e-6
    assert worst_storage <= 1e-6
    assert deterministic
