"""JSON model files and per-step field dumps.

A model file describes the structure, the reference load pattern, the load
path and optional solver settings::

    {
      "kind": "truss",
      "nodes": [[0, 0], [1, 0]],
      "elements": [{"nodes": [0, 1], "E": 1, "A": 1, "R": 0.5}],
      "supports": [[0, 0], [0, 1], [1, 1]],
      "load": [[1, 0, 1.0]],
      "path": [0.3],
      "solver": {"mode": "accel-restart", "tol": 1e-10}
    }

``kind`` is ``truss`` or ``cst2d``.  CST elements carry ``E``, ``nu``,
``kappa`` and optionally ``thickness``.  Either element type may give an
explicit ``criterion`` object instead of ``R``/``kappa``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import constitutive
from .driver import LoadPath
from .fem import Model, ModelError, assemble_cst2d, assemble_truss
from .solver import SolverConfig

MODE_ALIASES = {
    "plain": "plain",
    "accel": "accelerated",
    "accelerated": "accelerated",
    "accel-restart": "accelerated_restart",
    "accelerated_restart": "accelerated_restart",
}

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_INDEX = {"type": "integer", "minimum": 0}

CRITERION_SCHEMA = {
    "oneOf": [
        {"type": "object", "properties": {"type": {"const": "elastic"}},
         "required": ["type"], "additionalProperties": False},
        {"type": "object", "properties": {"type": {"const": "truss_box"}, "R": _POSITIVE},
         "required": ["type", "R"], "additionalProperties": False},
        {"type": "object", "properties": {"type": {"const": "von_mises"}, "kappa": _POSITIVE},
         "required": ["type", "kappa"], "additionalProperties": False},
    ]
}

TRUSS_ELEMENT = {
    "type": "object",
    "properties": {
        "nodes": {"type": "array", "items": _INDEX, "minItems": 2, "maxItems": 2},
        "E": _POSITIVE, "A": _POSITIVE, "R": _POSITIVE,
        "criterion": CRITERION_SCHEMA,
    },
    "required": ["nodes", "E", "A"],
    "oneOf": [{"required": ["R"]}, {"required": ["criterion"]}],
    "additionalProperties": False,
}

CST_ELEMENT = {
    "type": "object",
    "properties": {
        "nodes": {"type": "array", "items": _INDEX, "minItems": 3, "maxItems": 3},
        "E": _POSITIVE,
        "nu": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 0.5},
        "kappa": _POSITIVE, "thickness": _POSITIVE,
        "criterion": CRITERION_SCHEMA,
    },
    "required": ["nodes", "E", "nu"],
    "oneOf": [{"required": ["kappa"]}, {"required": ["criterion"]}],
    "additionalProperties": False,
}

_LOAD_LIST = {
    "type": "array",
    "items": {"type": "array", "prefixItems": [_INDEX, _INDEX, {"type": "number"}],
              "items": False, "minItems": 3},
}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "kind": {"enum": ["truss", "cst2d"]},
        "nodes": {"type": "array", "minItems": 1,
                  "items": {"type": "array", "items": {"type": "number"},
                            "minItems": 2, "maxItems": 3}},
        "elements": {"type": "array", "minItems": 1},
        "thickness": _POSITIVE,
        "supports": {"type": "array", "minItems": 1,
                     "items": {"type": "array", "prefixItems": [_INDEX, _INDEX],
                               "items": False, "minItems": 2}},
        "load": _LOAD_LIST,
        "path": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "step_loads": {"type": "array", "items": _LOAD_LIST, "minItems": 1},
        "solver": {
            "type": "object",
            "properties": {
                "mode": {"enum": sorted(MODE_ALIASES)},
                "tol": _POSITIVE, "tol_du": _POSITIVE, "tol_eps": _POSITIVE,
                "max_iters": {"type": "integer", "minimum": 1},
                "alpha_scale": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "monitor": {"type": "array",
                    "items": {"type": "array", "prefixItems": [_INDEX, _INDEX],
                              "items": False, "minItems": 2}},
    },
    "required": ["kind", "nodes", "elements", "supports", "load", "path"],
    "additionalProperties": False,
}


class ModelFileError(ValueError):
    """Model or state file that cannot be parsed, validated or assembled."""


@dataclass
class ModelFile:
    model: Model
    path: LoadPath
    solver: dict = field(default_factory=dict)
    monitor: list | None = None
    name: str = ""
    raw: dict = field(default_factory=dict)

    def solver_config(self, **overrides) -> SolverConfig:
        fields = dict(self.solver)
        fields.update({k: v for k, v in overrides.items() if v is not None})
        tol = fields.pop("tol", None)
        if tol is not None:
            fields.setdefault("tol_du", tol)
            fields.setdefault("tol_eps", tol)
        if "mode" in fields:
            fields["mode"] = MODE_ALIASES[fields["mode"]]
        return SolverConfig(**fields)


def _validate(instance, schema, where=()):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in (*where, *e.absolute_path)) or "<root>"
        raise ModelFileError(f"{path}: {e.message}")


def parse_model(doc: dict, name: str = "") -> ModelFile:
    """Validate a decoded model document and assemble it."""
    _validate(doc, MODEL_SCHEMA)
    kind = doc["kind"]
    element_schema = TRUSS_ELEMENT if kind == "truss" else CST_ELEMENT
    for i, elem in enumerate(doc["elements"]):
        _validate(elem, element_schema, ("elements", i))
    n_nodes = len(doc["nodes"])
    for i, elem in enumerate(doc["elements"]):
        bad = [n for n in elem["nodes"] if n >= n_nodes]
        if bad:
            raise ModelFileError(f"elements/{i}/nodes: node {bad[0]} does not exist")
    for key in ("supports", "load", "monitor"):
        for i, entry in enumerate(doc.get(key, [])):
            if entry[0] >= n_nodes:
                raise ModelFileError(f"{key}/{i}: node {entry[0]} does not exist")
    if "step_loads" in doc and len(doc["step_loads"]) != len(doc["path"]):
        raise ModelFileError("step_loads: need one load list per path entry")

    criteria = None
    if any("criterion" in e for e in doc["elements"]):
        default = "R" if kind == "truss" else "kappa"
        ctype = "truss_box" if kind == "truss" else "von_mises"
        criteria = [constitutive.from_dict(e["criterion"]) if "criterion" in e
                    else constitutive.from_dict({"type": ctype, default: e[default]})
                    for e in doc["elements"]]
        if kind == "truss" and any(isinstance(c, constitutive.VonMises) for c in criteria):
            raise ModelFileError("elements: von_mises criterion needs continuum elements")
        if kind == "cst2d" and any(isinstance(c, constitutive.TrussBox) for c in criteria):
            raise ModelFileError("elements: truss_box criterion needs truss elements")
    supports = [tuple(s) for s in doc["supports"]]
    loads = [tuple(l) for l in doc["load"]]
    try:
        if kind == "truss":
            model = assemble_truss(doc["nodes"], doc["elements"], supports, loads,
                                   criteria=criteria)
        else:
            model = assemble_cst2d(doc["nodes"], doc["elements"], doc.get("thickness", 1.0),
                                   supports, loads, criteria=criteria)
    except ModelError as exc:
        raise ModelFileError(str(exc)) from None

    explicit = None
    if "step_loads" in doc:
        try:
            explicit = [_explicit_load(model, entries) for entries in doc["step_loads"]]
        except ModelError as exc:
            raise ModelFileError(f"step_loads: {exc}") from None
    path = LoadPath([float(v) for v in doc["path"]], q_ref=model.load.copy(), loads=explicit)
    monitor = [tuple(p) for p in doc["monitor"]] if "monitor" in doc else None
    return ModelFile(model, path, dict(doc.get("solver", {})), monitor,
                     doc.get("name", name), doc)


def _explicit_load(model, entries):
    q = np.zeros(model.d)
    for node, direction, value in entries:
        k = model.dof_map[node, direction]
        if k < 0:
            raise ModelError(f"load applied on supported dof ({node}, {direction})")
        q[k] += value
    return q


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFileError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_model(path) -> ModelFile:
    return parse_model(read_json(path), name=Path(path).stem)


# field dumps


def dump_fields(path, model: Model, factor: float, du, eps_p, sigma=None):
    """Write one step's state; ``sigma0`` and ``load`` pin the step's problem."""
    doc = {
        "lambda": float(factor),
        "load": model.load.tolist(),
        "sigma0": model.sigma0.tolist(),
        "du": np.asarray(du).tolist(),
        "eps_p": np.asarray(eps_p).tolist(),
    }
    if sigma is not None:
        doc["sigma"] = np.asarray(sigma).tolist()
    Path(path).write_text(json.dumps(doc, indent=1))


STATE_SCHEMA = {
    "type": "object",
    "properties": {
        "lambda": {"type": "number"},
        "load": {"type": "array", "items": {"type": "number"}},
        "sigma0": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "du": {"type": "array", "items": {"type": "number"}},
        "eps_p": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "sigma": {"type": "array"},
    },
    "required": ["du", "eps_p"],
    "additionalProperties": False,
}


def load_state(path, model: Model):
    """Read a field dump; returns ``(step_model, du, eps_p)``.

    Without ``load``/``sigma0`` entries the model's own are used.
    """
    doc = read_json(path)
    _validate(doc, STATE_SCHEMA, ("state",))
    try:
        du = np.array(doc["du"], dtype=float)
        eps_p = np.array(doc["eps_p"], dtype=float)
        load = np.array(doc["load"], dtype=float) if "load" in doc else model.load
        sigma0 = np.array(doc["sigma0"], dtype=float) if "sigma0" in doc else model.sigma0
    except ValueError as exc:
        raise ModelFileError(f"state: ragged array ({exc})") from None
    if du.shape != (model.d,) or eps_p.shape != (model.m, model.ncomp):
        raise ModelFileError(
            f"state dimensions du{du.shape} eps_p{eps_p.shape} do not match model "
            f"(d={model.d}, m={model.m}, ncomp={model.ncomp})")
    try:
        step_model = model.replace(load=load, sigma0=sigma0)
    except ModelError as exc:
        raise ModelFileError(f"state: {exc}") from None
    return step_model, du, eps_p
