"""Versioned JSON case files and solution output (JSON / CSV)."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Literal

import jsonschema
import numpy as np

from .network import Branch, Bus, SinglePhaseNetwork, VoltageState, validate_network
from .newton import PowerFlowSolution
from .threephase import PHASES, Branch3, Bus3, PhaseIndex, ThreePhaseNetwork, ZipLoad, validate_network3

FORMAT_VERSION = "1.0"


class CaseError(ValueError):
    """Base for everything parse_case can raise; ``location`` points into the input."""

    def __init__(self, message: str, location: str):
        self.location = location
        super().__init__(f"{location}: {message}")


class CaseSyntaxError(CaseError):
    pass


class CaseSchemaError(CaseError):
    pass


class CaseSemanticError(CaseError):
    def __init__(self, violations):
        self.violations = list(violations)
        first = self.violations[0]
        extra = f" (+{len(self.violations) - 1} more)" if len(self.violations) > 1 else ""
        super().__init__(first.message + extra, first.path)


_num = {"type": "number"}
_matrix = {
    "type": "array",
    "minItems": 3,
    "maxItems": 3,
    "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": _num},
}
_cblock = {
    "type": "object",
    "required": ["re", "im"],
    "additionalProperties": False,
    "properties": {"re": _matrix, "im": _matrix},
}
_zip = {
    "type": "object",
    "additionalProperties": False,
    "properties": {k: _num for k in ("p_p", "p_i", "p_z", "q_p", "q_i", "q_z")},
}
_phases = {"type": "string", "pattern": "^(a?b?c?)$", "minLength": 1}

SINGLE_PHASE_SCHEMA = {
    "type": "object",
    "required": ["base_mva", "buses", "branches"],
    "additionalProperties": False,
    "properties": {
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "buses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "kind": {"enum": ["slack", "pv", "pq"]},
                    "p_load": _num,
                    "q_load": _num,
                    "p_gen": _num,
                    "v_setpoint": _num,
                    "shunt_g": _num,
                    "shunt_b": _num,
                },
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "r", "x"],
                "additionalProperties": False,
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "r": _num,
                    "x": _num,
                    "b_charging": _num,
                },
            },
        },
    },
}

THREE_PHASE_SCHEMA = {
    "type": "object",
    "required": ["source_bus", "buses", "branches"],
    "additionalProperties": False,
    "properties": {
        "source_bus": {"type": "integer"},
        "source_vm": {"type": "number", "exclusiveMinimum": 0},
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "base_kv": {"type": "number", "exclusiveMinimum": 0},
        "buses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "phases": _phases,
                    "loads": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {p: _zip for p in PHASES},
                    },
                },
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "y_series"],
                "additionalProperties": False,
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "phases": _phases,
                    "y_series": _cblock,
                    "y_shunt_from": _cblock,
                    "y_shunt_to": _cblock,
                },
            },
        },
    },
}

CASE_SCHEMA = {
    "type": "object",
    "required": ["format_version", "kind", "network"],
    "additionalProperties": False,
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "kind": {"enum": ["single_phase", "three_phase"]},
        "metadata": {"type": "object"},
        "network": {"type": "object"},
    },
}


@dataclass
class CaseFile:
    kind: Literal["single_phase", "three_phase"]
    network: Any
    metadata: dict = field(default_factory=dict)
    format_version: str = FORMAT_VERSION

    @property
    def name(self) -> str:
        return self.metadata.get("name", "")


def _json_path(path) -> str:
    out = "$"
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _validate(obj, schema, prefix=()):
    v = jsonschema.Draft202012Validator(schema)
    errors = sorted(v.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise CaseSchemaError(e.message, _json_path(list(prefix) + list(e.absolute_path)))


def _check_finite(obj, path="$"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise CaseSchemaError("number is not finite", path)
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")


def _reject_constant(token):
    raise ValueError(f"{token} is not allowed")


def _cmatrix(d) -> np.ndarray:
    return np.array(d["re"], dtype=float) + 1j * np.array(d["im"], dtype=float)


def _network_single(d) -> SinglePhaseNetwork:
    buses = [
        Bus(
            id=b["id"],
            kind=b["kind"],
            p_load=float(b.get("p_load", 0.0)),
            q_load=float(b.get("q_load", 0.0)),
            p_gen=float(b.get("p_gen", 0.0)),
            v_setpoint=float(b.get("v_setpoint", 1.0)),
            shunt_g=float(b.get("shunt_g", 0.0)),
            shunt_b=float(b.get("shunt_b", 0.0)),
        )
        for b in d["buses"]
    ]
    branches = [
        Branch(br["from"], br["to"], float(br["r"]), float(br["x"]), float(br.get("b_charging", 0.0)))
        for br in d["branches"]
    ]
    return SinglePhaseNetwork(buses, branches, float(d["base_mva"]))


def _network_three(d) -> ThreePhaseNetwork:
    buses = []
    for b in d["buses"]:
        loads = {p: ZipLoad(**{k: float(v) for k, v in ld.items()}) for p, ld in b.get("loads", {}).items()}
        buses.append(Bus3(b["id"], b.get("phases", "abc"), loads))
    branches = [
        Branch3(
            br["from"],
            br["to"],
            _cmatrix(br["y_series"]),
            br.get("phases", "abc"),
            _cmatrix(br["y_shunt_from"]) if "y_shunt_from" in br else None,
            _cmatrix(br["y_shunt_to"]) if "y_shunt_to" in br else None,
        )
        for br in d["branches"]
    ]
    return ThreePhaseNetwork(
        buses,
        branches,
        d["source_bus"],
        float(d.get("source_vm", 1.0)),
        float(d.get("base_mva", 1.0)),
        float(d.get("base_kv", 1.0)),
    )


def parse_case(text: str) -> CaseFile:
    """Parse and fully validate a case file.

    Raises :class:`CaseSyntaxError` (line/column), :class:`CaseSchemaError`
    or :class:`CaseSemanticError` (JSON-path locations).
    """
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise CaseSyntaxError(exc.msg, f"line {exc.lineno} column {exc.colno} (offset {exc.pos})") from None
    except ValueError as exc:
        raise CaseSyntaxError(str(exc), "$") from None
    _validate(obj, CASE_SCHEMA)
    _check_finite(obj)
    if obj["kind"] == "single_phase":
        _validate(obj["network"], SINGLE_PHASE_SCHEMA, ("network",))
        net = _network_single(obj["network"])
        problems = validate_network(net, "$.network")
    else:
        _validate(obj["network"], THREE_PHASE_SCHEMA, ("network",))
        net = _network_three(obj["network"])
        problems = validate_network3(net, "$.network")
    if problems:
        raise CaseSemanticError(problems)
    return CaseFile(obj["kind"], net, obj.get("metadata", {}), obj["format_version"])


def _cdump(a: np.ndarray) -> dict:
    return {"re": [[float(x) for x in row] for row in a.real], "im": [[float(x) for x in row] for row in a.imag]}


def case_to_dict(c: CaseFile) -> dict:
    net = c.network
    if c.kind == "single_phase":
        payload = {
            "base_mva": float(net.base_mva),
            "buses": [
                {
                    "id": int(b.id),
                    "kind": b.kind,
                    "p_load": float(b.p_load),
                    "q_load": float(b.q_load),
                    "p_gen": float(b.p_gen),
                    "v_setpoint": float(b.v_setpoint),
                    "shunt_g": float(b.shunt_g),
                    "shunt_b": float(b.shunt_b),
                }
                for b in net.buses
            ],
            "branches": [
                {"from": int(br.from_bus), "to": int(br.to_bus), "r": float(br.r), "x": float(br.x), "b_charging": float(br.b_charging)}
                for br in net.branches
            ],
        }
    else:
        buses = []
        for b in net.buses:
            entry = {"id": int(b.id), "phases": b.phases}
            loads = {p: {k: float(getattr(ld, k)) for k in ("p_p", "p_i", "p_z", "q_p", "q_i", "q_z")} for p, ld in b.loads.items()}
            if loads:
                entry["loads"] = loads
            buses.append(entry)
        branches = []
        for br in net.branches:
            entry = {"from": int(br.from_bus), "to": int(br.to_bus), "phases": br.phases, "y_series": _cdump(br.y_series)}
            if np.any(br.y_shunt_from != 0):
                entry["y_shunt_from"] = _cdump(br.y_shunt_from)
            if np.any(br.y_shunt_to != 0):
                entry["y_shunt_to"] = _cdump(br.y_shunt_to)
            branches.append(entry)
        payload = {
            "source_bus": int(net.source_bus),
            "source_vm": float(net.source_vm),
            "base_mva": float(net.base_mva),
            "base_kv": float(net.base_kv),
            "buses": buses,
            "branches": branches,
        }
    return {"format_version": c.format_version, "kind": c.kind, "metadata": c.metadata, "network": payload}


def write_case(c: CaseFile) -> str:
    """Canonical text: sorted keys, shortest round-trip floats, one-space indent."""
    return json.dumps(case_to_dict(c), sort_keys=True, indent=1, allow_nan=False) + "\n"


def load_case(path) -> CaseFile:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


def bundled_case(name: str) -> CaseFile:
    """Load one of the fixtures shipped in ``gridflow/data`` (``ieee30``, ``lv_feeder``, ...)."""
    text = resources.files("gridflow").joinpath("data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return parse_case(text)


def bus_count(c: CaseFile) -> int:
    """Buses excluding the three-phase source, which is not a solved node."""
    n = c.network.n_buses
    return n - 1 if c.kind == "three_phase" else n


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------


def _rows(sol: PowerFlowSolution, net) -> list[tuple]:
    if isinstance(sol.state, VoltageState):
        return [
            (b.id, "", float(sol.state.magnitude[k]), float(np.degrees(sol.state.angle[k])))
            for k, b in enumerate(net.buses)
        ]
    idx: PhaseIndex = sol.state.index
    v = sol.state.v
    return [
        (net.buses[idx.bus[p]].id, PHASES[idx.phase[p]], float(abs(v[p])), float(np.degrees(np.angle(v[p]))))
        for p in range(idx.size)
    ]


def _finite(x: float) -> float | None:
    """A diverged run can leave inf or nan, which JSON cannot carry."""
    return float(x) if math.isfinite(x) else None


def write_solution(sol: PowerFlowSolution, net, fmt: Literal["json", "csv"] = "json") -> str:
    """CSV columns: ``bus,vm_pu,va_deg`` (single-phase) or ``bus,phase,vm_pu,va_deg``."""
    rows = _rows(sol, net)
    three = not isinstance(sol.state, VoltageState)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if three:
            w.writerow(["bus", "phase", "vm_pu", "va_deg"])
            for bus, ph, vm, va in rows:
                w.writerow([bus, ph, f"{vm:.6f}", f"{va:.3f}"])
        else:
            w.writerow(["bus", "vm_pu", "va_deg"])
            for bus, _, vm, va in rows:
                w.writerow([bus, f"{vm:.6f}", f"{va:.3f}"])
        return buf.getvalue()
    if fmt != "json":
        raise ValueError(f"unknown solution format {fmt!r}")
    if three:
        voltages = [{"bus": b, "phase": ph, "vm_pu": _finite(vm), "va_deg": _finite(va)} for b, ph, vm, va in rows]
    else:
        voltages = [{"bus": b, "vm_pu": _finite(vm), "va_deg": _finite(va)} for b, _, vm, va in rows]
    doc = {
        "converged": bool(sol.converged),
        "iterations": int(sol.iterations),
        "solver": sol.solver,
        "fallbacks": int(sol.fallbacks),
        "mismatch_history": [_finite(x) for x in sol.mismatch_history],
        "timings": {k: float(v) for k, v in sol.timings.items()},
        "voltages": voltages,
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"
