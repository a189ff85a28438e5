"""JSON network description files: schema validation and model assembly.

A file describes buses, branches, dynamic components (with parameters and
optional setpoints), an optional target operating point for back-solving
setpoints, an optional scenario, and optional solver settings. Unknown
fields are rejected with the path of the offending entry so typos cannot
silently change a study.

Loads are consumption-positive by default; a branch may declare
``"convention": "generation"`` to flip the reading of its (p0, q0) pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from .components import Component, DroopComponent, Setpoints, SupplyConvention, VsgComponent
from .network import (
    Bus,
    BusKind,
    ConstantPowerBranch,
    DynamicShunt,
    LosslessLine,
    NetworkError,
    NetworkModel,
)
from .simulator import (
    LineScale,
    LoadStep,
    Scenario,
    SolverConfig,
    StatePerturbation,
)

__all__ = ["NetworkFileError", "CaseDefinition", "load_case", "parse_case"]


class NetworkFileError(ValueError):
    """Schema violation, reported with its location in the document."""


@dataclass
class CaseDefinition:
    """Everything a command needs, parsed and validated."""

    name: str
    net: NetworkModel
    components: dict[str, Component]
    operating_point: dict[str, tuple[float, float]] | None  # bus -> (V, theta)
    scenario: Scenario | None
    solver: SolverConfig
    setpoints_declared: bool
    source: str = "<memory>"


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise NetworkFileError(f"{where}: missing required field {key!r}")
    return obj[key]


def _check_fields(obj: Any, allowed: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise NetworkFileError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise NetworkFileError(f"{where}: unknown field(s) {sorted(unknown)}")

def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkFileError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _parse_buses(raw: Any) -> list[Bus]:
    if not isinstance(raw, list) or not raw:
        raise NetworkFileError("buses: expected a non-empty array")
    buses = []
    for idx, entry in enumerate(raw):
        where = f"buses[{idx}]"
        _check_fields(entry, {"id", "kind"}, where)
        bus_id = _require(entry, "id", where)
        kind_raw = _require(entry, "kind", where)
        try:
            kind = BusKind(kind_raw)
        except ValueError:
            raise NetworkFileError(
                f"{where}: kind must be one of ground/dynamic/passive, got {kind_raw!r}"
            ) from None
        buses.append(Bus(id=str(bus_id), kind=kind))
    return buses


def _parse_branches(
    raw: Any, ground_id: str
) -> tuple[list[LosslessLine], list[ConstantPowerBranch]]:
    if not isinstance(raw, list):
        raise NetworkFileError("branches: expected an array")
    lines: list[LosslessLine] = []
    cps: list[ConstantPowerBranch] = []
    for idx, entry in enumerate(raw):
        where = f"branches[{idx}]"
        kind = _require(entry, "kind", where)
        if kind == "line":
            _check_fields(entry, {"from", "to", "kind", "x", "g"}, where)
            x = _number(_require(entry, "x", where), f"{where}.x")
            g = _number(entry.get("g", 0.0), f"{where}.g")
            if x <= 0.0:
                raise NetworkFileError(
                    f"{where}: zero reactance" if x == 0.0 else f"{where}: negative reactance {x}"
                )
            if g != 0.0:
                raise NetworkFileError(
                    f"{where}: lossy lines are not supported in the network model "
                    "(conductance is only meaningful to the standalone path experiment)"
                )
            lines.append(
                LosslessLine(str(_require(entry, "from", where)), str(_require(entry, "to", where)), x)
            )
        elif kind == "constant_power":
            _check_fields(entry, {"from", "to", "kind", "p0", "q0", "convention"}, where)
            frm = str(_require(entry, "from", where))
            to = str(_require(entry, "to", where))
            if to != ground_id:
                raise NetworkFileError(
                    f"{where}: constant-power branch must terminate at ground "
                    f"({ground_id!r}), got {to!r}"
                )
            p0 = _number(_require(entry, "p0", where), f"{where}.p0")
            q0 = _number(_require(entry, "q0", where), f"{where}.q0")
            convention = entry.get("convention", "consumption")
            if convention not in ("consumption", "generation"):
                raise NetworkFileError(
                    f"{where}: convention must be consumption or generation"
                )
            if convention == "generation":
                p0, q0 = -p0, -q0
            cps.append(ConstantPowerBranch(bus=frm, p0=p0, q0=q0))
        else:
            raise NetworkFileError(
                f"{where}: unknown branch kind {kind!r} (line | constant_power)"
            )
    return lines, cps


_COMPONENT_PARAMS = {
    "vsg": {"M", "Dp", "Dq", "tau_q"},
    "droop": {"tau_p", "tau_q", "Dp", "Dq"},
}


def _parse_components(
    raw: Any,
) -> tuple[list[DynamicShunt], dict[str, Component], bool]:
    if not isinstance(raw, list):
        raise NetworkFileError("components: expected an array")
    shunts: list[DynamicShunt] = []
    comps: dict[str, Component] = {}
    all_have_setpoints = True
    for idx, entry in enumerate(raw):
        where = f"components[{idx}]"
        _check_fields(entry, {"id", "bus", "model", "params", "setpoints"}, where)
        model = _require(entry, "model", where)
        if model not in _COMPONENT_PARAMS:
            raise NetworkFileError(f"{where}: model must be vsg or droop, got {model!r}")
        cid = str(entry.get("id", f"{model}_{idx}"))
        bus = str(_require(entry, "bus", where))
        params = _require(entry, "params", where)
        expected = _COMPONENT_PARAMS[model]
        _check_fields(params, expected, f"{where}.params")
        missing = expected - set(params)
        if missing:
            raise NetworkFileError(f"{where}.params: missing {sorted(missing)}")
        values = {k: _number(v, f"{where}.params.{k}") for k, v in params.items()}
        setpoints = None
        if "setpoints" in entry:
            sp_where = f"{where}.setpoints"
            _check_fields(entry["setpoints"], {"P_e", "Q_e", "V_e", "theta_e"}, sp_where)
            setpoints = Setpoints(
                P_e=_number(_require(entry["setpoints"], "P_e", sp_where), sp_where),
                Q_e=_number(_require(entry["setpoints"], "Q_e", sp_where), sp_where),
                V_e=_number(_require(entry["setpoints"], "V_e", sp_where), sp_where),
                theta_e=_number(_require(entry["setpoints"], "theta_e", sp_where), sp_where),
            )
        else:
            all_have_setpoints = False
        try:
            if model == "vsg":
                comp: Component = VsgComponent(
                    id=cid, bus=bus, M=values["M"], Dp=values["Dp"],
                    Dq=values["Dq"], tau_q=values["tau_q"], setpoints=setpoints,
                )
            else:
                comp = DroopComponent(
                    id=cid, bus=bus, tau_p=values["tau_p"], tau_q=values["tau_q"],
                    Dp=values["Dp"], Dq=values["Dq"], setpoints=setpoints,
                )
        except ValueError as exc:
            raise NetworkFileError(f"{where}: {exc}") from exc
        if cid in comps:
            raise NetworkFileError(f"{where}: duplicate component id {cid!r}")
        comps[cid] = comp
        shunts.append(DynamicShunt(bus=bus, component_id=cid))
    return shunts, comps, all_have_setpoints


def _parse_disturbance(entry: Any, where: str):
    kind = _require(entry, "kind", where)
    at = _number(_require(entry, "at", where), f"{where}.at")
    if kind == "state_perturbation":
        _check_fields(entry, {"at", "kind", "component", "delta"}, where)
        delta = _require(entry, "delta", where)
        if not isinstance(delta, dict) or not delta:
            raise NetworkFileError(f"{where}.delta: expected a non-empty object")
        return StatePerturbation(
            at=at,
            component=str(_require(entry, "component", where)),
            delta={str(k): _number(v, f"{where}.delta.{k}") for k, v in delta.items()},
        )
    if kind == "load_step":
        _check_fields(entry, {"at", "kind", "bus", "dp", "dq", "duration"}, where)
        return LoadStep(
            at=at,
            bus=str(_require(entry, "bus", where)),
            dp=_number(_require(entry, "dp", where), f"{where}.dp"),
            dq=_number(_require(entry, "dq", where), f"{where}.dq"),
            duration=(
                _number(entry["duration"], f"{where}.duration")
                if "duration" in entry
                else None
            ),
        )
    if kind == "line_scale":
        _check_fields(entry, {"at", "kind", "line", "factor", "duration"}, where)
        return LineScale(
            at=at,
            line_index=int(_require(entry, "line", where)),
            factor=_number(_require(entry, "factor", where), f"{where}.factor"),
            duration=(
                _number(entry["duration"], f"{where}.duration")
                if "duration" in entry
                else None
            ),
        )
    raise NetworkFileError(
        f"{where}: unknown disturbance kind {kind!r} "
        "(state_perturbation | load_step | line_scale)"
    )


def _parse_scenario(raw: Any) -> Scenario:
    where = "scenario"
    _check_fields(
        raw,
        {"horizon", "output_period", "initial", "explicit_states", "disturbances"},
        where,
    )
    disturbances = [
        _parse_disturbance(entry, f"{where}.disturbances[{i}]")
        for i, entry in enumerate(raw.get("disturbances", []))
    ]
    try:
        return Scenario(
            horizon=_number(_require(raw, "horizon", where), f"{where}.horizon"),
            output_period=_number(raw.get("output_period", 0.01), f"{where}.output_period"),
            initial=str(raw.get("initial", "equilibrium")),
            explicit_states=raw.get("explicit_states"),
            disturbances=disturbances,
        )
    except ValueError as exc:
        raise NetworkFileError(f"{where}: {exc}") from exc


def _parse_solver(raw: Any) -> SolverConfig:
    where = "solver"
    _check_fields(
        raw,
        {"step_size", "newton_tol", "newton_max_iter", "integrator", "convention"},
        where,
    )
    convention_raw = raw.get("convention", "negated")
    try:
        convention = SupplyConvention(convention_raw)
    except ValueError:
        raise NetworkFileError(
            f"{where}.convention: must be printed or negated, got {convention_raw!r}"
        ) from None
    try:
        return SolverConfig(
            step_size=_number(raw.get("step_size", 1e-3), f"{where}.step_size"),
            newton_tol=_number(raw.get("newton_tol", 1e-10), f"{where}.newton_tol"),
            newton_max_iter=int(raw.get("newton_max_iter", 25)),
            integrator=str(raw.get("integrator", "rk4")),
            convention=convention,
        )
    except ValueError as exc:
        raise NetworkFileError(f"{where}: {exc}") from exc


def parse_case(doc: Any, source: str = "<memory>") -> CaseDefinition:
    """Validate a parsed JSON document and assemble the case."""
    _check_fields(
        doc,
        {"name", "buses", "branches", "components", "operating_point", "scenario", "solver"},
        "document",
    )
    buses = _parse_buses(_require(doc, "buses", "document"))
    ground = [b for b in buses if b.kind is BusKind.GROUND]
    if len(ground) != 1:
        raise NetworkFileError(
            f"buses: exactly one ground bus required, found {len(ground)}"
        )
    lines, cps = _parse_branches(_require(doc, "branches", "document"), ground[0].id)
    shunts, comps, setpoints_declared = _parse_components(doc.get("components", []))

    # bind component ids onto their buses
    comp_bus = {s.bus: s.component_id for s in shunts}
    bound = []
    for bus in buses:
        if bus.id in comp_bus:
            if bus.kind is not BusKind.DYNAMIC:
                raise NetworkFileError(
                    f"bus {bus.id!r} carries a component but is declared {bus.kind.value!r}"
                )
            bound.append(Bus(id=bus.id, kind=bus.kind, component_id=comp_bus[bus.id]))
        else:
            if bus.kind is BusKind.DYNAMIC:
                raise NetworkFileError(
                    f"bus {bus.id!r} is declared dynamic but no component sits on it"
                )
            bound.append(bus)
    try:
        net = NetworkModel(bound, lines, cps, shunts)
    except NetworkError as exc:
        raise NetworkFileError(str(exc)) from exc

    operating_point = None
    if "operating_point" in doc:
        raw_op = doc["operating_point"]
        if not isinstance(raw_op, dict):
            raise NetworkFileError("operating_point: expected an object")
        operating_point = {}
        for bus_id, entry in raw_op.items():
            where = f"operating_point.{bus_id}"
            if bus_id not in net.node_index:
                raise NetworkFileError(f"{where}: unknown non-ground bus")
            _check_fields(entry, {"V", "theta"}, where)
            operating_point[bus_id] = (
                _number(_require(entry, "V", where), f"{where}.V"),
                _number(_require(entry, "theta", where), f"{where}.theta"),
            )
        missing = set(net.non_ground) - set(operating_point)
        if missing:
            raise NetworkFileError(
                f"operating_point: missing bus(es) {sorted(missing)}"
            )
    if not setpoints_declared and operating_point is None and comps:
        raise NetworkFileError(
            "components without setpoints require an operating_point to back-solve"
        )

    scenario = _parse_scenario(doc["scenario"]) if "scenario" in doc else None
    solver = _parse_solver(doc.get("solver", {}))
    return CaseDefinition(
        name=str(doc.get("name", "unnamed")),
        net=net,
        components=comps,
        operating_point=operating_point,
        scenario=scenario,
        solver=solver,
        setpoints_declared=setpoints_declared,
        source=source,
    )


def load_case(path: str) -> CaseDefinition:
    """Parse a case from a JSON file, reporting parse errors with position."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise NetworkFileError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise NetworkFileError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_case(doc, source=path)
