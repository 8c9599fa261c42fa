"""Run configuration: JSON schema, defaults and loading."""

import copy
import json

import jsonschema

from .errors import ConfigError

__all__ = ["SCHEMA", "DEFAULTS", "load_config", "resolve"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "system": {"oneOf": [
        _obj({"name": {"type": "string"}, "params": {"type": "object"}}, ["name"]),
        _obj({"table": {"type": "string"}}, ["table"]),
    ]},
    "window": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
    "integrator": _obj({"step": _pos, "tol": _pos, "escape_radius": _pos}),
    "mu_grid": _obj({"step": _pos, "padding": _pos, "subwindow": _int, "gap": _pos}),
    "dichotomy": _obj({"fit_range": _int, "max_lag": _int, "norm_horizon": _int,
                       "lookahead": _int, "eps_cap": _pos}),
    "lp": _obj({"n_tail": _int, "max_iter": _int, "tol_fp": _pos, "tol_conj": _pos,
                "tau": {"type": ["number", "null"]},
                "mode": {"enum": ["auto", "bounded", "smooth"]},
                "K": {"type": ["number", "null"]}}),
    "alpha": {"type": ["number", "null"]},
    "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "budget": _obj({"delta_cap": _pos}),
    "audit": _obj({"samples": _int, "radius": {"type": ["number", "null"]},
                   "t_range": _pos, "t_samples": _int}),
    "verify": _obj({"samples": _int, "times": {"type": "array", "items": _num, "minItems": 1},
                    "horizon": _pos, "radius": _pos, "tol": _pos, "pairs": _int,
                    "orbits": _int, "dump_indices": {"type": "array",
                                                     "items": {"type": "integer"}},
                    "dump_samples": _int}),
    "foliation": _obj({"enabled": {"type": "boolean"}, "window": _int, "n_max": _int,
                       "max_iter": _int}),
    "seed": {"type": "integer", "minimum": 0},
    "output": {"type": "string"},
}, ["system"])

DEFAULTS = {
    "window": [0, 200],
    "integrator": {"step": 1e-3, "tol": 1e-10, "escape_radius": 1e8},
    "mu_grid": {"step": 1e-3, "padding": 0.2, "subwindow": 20, "gap": 0.05},
    "dichotomy": {"fit_range": 10, "max_lag": 15, "norm_horizon": 40, "lookahead": 40,
                  "eps_cap": 0.5},
    "lp": {"n_tail": 40, "max_iter": 200, "tol_fp": 1e-13, "tol_conj": 1e-6, "tau": None,
           "mode": "auto", "K": None},
    "alpha": None,
    "rho": 0.1,
    "budget": {"delta_cap": 1.0},
    "audit": {"samples": 2000, "radius": None, "t_range": 10.0, "t_samples": 21},
    "verify": {"samples": 200, "times": [0.0, 1.5, 3.7], "horizon": 5.0, "radius": 1e-2,
               "tol": 1e-4, "pairs": 400, "orbits": 20, "dump_indices": [0, 1, 2],
               "dump_samples": 50},
    "foliation": {"enabled": True, "window": 12, "n_max": 12, "max_iter": 60},
    "seed": 0,
    "output": "out",
}


def resolve(cfg):
    """Validate ``cfg`` and fill defaults (nested one level)."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {exc.message}") from exc
    out = copy.deepcopy(DEFAULTS)
    for k, v in cfg.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = copy.deepcopy(v)
    if out["window"][1] - out["window"][0] < 40:
        raise ConfigError("window must span at least 40 indices")
    return out


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return resolve(cfg)
