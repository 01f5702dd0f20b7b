"""Scenario configuration: JSON loading, schema validation, defaults and ``--set`` overrides.

A user config is deep-merged over the builtin config of the same
``scenario`` kind, except for the ``controller`` and ``cells`` sections,
which must be given in full so that no controller parameter is silently
defaulted.
"""
import copy
import json
from importlib import resources

import jsonschema

from .errors import ConfigError

KINDS = ("integrator", "bench", "racing", "sets")
EXPLICIT_SECTIONS = ("controller", "cells")

_pos = {"type": "number", "exclusiveMinimum": 0}
_num = {"type": "number"}
_rate = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
_posint = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": _num}
_vec4 = {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props, required=(), extra=False):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": extra}


_common = {
    "scenario": {"enum": list(KINDS)},
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
    "solver": _obj({"opt_tol": _pos, "feas_tol": _pos, "max_iter": _posint,
                    "penalty_max": _pos}),
    "output": _obj({"timing": {"enum": ["wall", "none"]}, "trajectories": {"type": "boolean"},
                    "every": _posint}),
}

_problem = _obj({
    "dt": _pos, "x0": _vec4, "goal": _vec4, "q": {"type": "number", "minimum": 0},
    "r": _pos, "p": {"type": "number", "minimum": 0}, "x_max": _pos, "u_max": _pos,
    "obstacle": _obj({"x": _num, "y": _num, "r": _pos}, ["x", "y", "r"]),
}, ["dt", "x0", "goal", "q", "r", "p", "x_max", "u_max", "obstacle"])

# controller kinds that need a CBF rate
_needs_gamma = {"if": {"properties": {"kind": {"enum": ["mpc_cbf", "dclf_dcbf"]}}},
                "then": {"required": ["gamma"]}}
_needs_N = {"if": {"properties": {"kind": {"enum": ["mpc_cbf", "mpc_dc"]}}},
            "then": {"required": ["N"]}}
_controller = {
    **_obj({"kind": {"enum": ["mpc_cbf", "mpc_dc", "dclf_dcbf"]}, "N": _posint, "gamma": _rate,
            "clf_slack_weight": _pos, "clf_rate": _rate}, ["kind"]),
    "allOf": [_needs_gamma, _needs_N],
}
_run_sim = _obj({"max_steps": _posint, "goal_tol": _pos, "stop_at_goal": {"type": "boolean"}})

SCHEMAS = {
    "integrator": _obj({**_common, "problem": _problem, "controller": _controller,
                        "run": _run_sim}, ["scenario", "problem", "controller", "run"]),
    "bench": _obj({**_common, "problem": _problem,
                   "cells": {"type": "array", "items": _controller, "minItems": 1},
                   "run": _run_sim}, ["scenario", "problem", "cells", "run"]),
    "racing": _obj({
        **_common,
        "track": _obj({
            "segments": {"type": "array", "minItems": 1, "items": {
                "type": "array", "minItems": 2, "maxItems": 3,
                "prefixItems": [{"enum": ["straight", "arc"]}, _pos, _num]}},
            "half_width": _pos}, ["segments", "half_width"]),
        "vehicle": _obj({k: _pos for k in ("m", "Iz", "lf", "lr", "Df", "Dr")}
                        | {k: _num for k in ("Bf", "Br", "Cf", "Cr")},
                        ["m", "Iz", "lf", "lr", "Bf", "Br", "Cf", "Cr", "Df", "Dr"]),
        "pid": _obj({"k1": _num, "k2": _num, "k3": _num}, ["k1", "k2", "k3"]),
        "identification": _obj({"laps": _pos, "v_mean": _pos, "v_amp": _num, "v_period": _pos,
                                "ey_amp": _num, "ey_period": _pos, "dither": _vec2,
                                "holdout_seed_offset": {"type": "integer", "minimum": 1}}),
        "controller": _obj({"N": _posint, "gamma": _rate, "v_t": _pos, "u_lb": _vec2,
                            "u_ub": _vec2, "l1": _pos, "l2": _pos,
                            "cbf_margin": {"type": "number", "minimum": 0}},
                           ["N", "gamma", "v_t", "u_lb", "u_ub", "l1", "l2"]),
        "ego": _obj({"v0": _pos, "s0": _num, "e_y": _num}, ["v0"]),
        "opponents": {"type": "array", "items": _obj({"speed": _num, "e_y": _num, "s0": _num},
                                                     ["speed", "e_y", "s0"])},
        "run": _obj({"laps": _pos, "ctrl_rate": _pos, "sim_rate": _pos,
                     "max_time": _pos}, ["laps", "ctrl_rate", "sim_rate"]),
    }, ["scenario", "track", "vehicle", "pid", "controller", "opponents", "run"]),
    "sets": _obj({
        **_common, "problem": _problem,
        "grid": _obj({"lower": _vec2, "upper": _vec2,
                      "counts": {"type": "array", "items": {"type": "integer", "minimum": 2},
                                 "minItems": 2, "maxItems": 2}},
                     ["lower", "upper", "counts"]),
        "gammas": {"type": "array", "items": _rate, "minItems": 1},
        "anchors": {"type": "array", "items": _vec4},
        "reachable": _obj({"x_t": _vec4, "ks": {"type": "array",
                                                "items": {"type": "integer", "minimum": 0}},
                           "samples": _posint, "levels": {"type": "integer", "minimum": 2}}),
    }, ["scenario", "problem", "grid", "gammas"]),
}


def builtin_config(kind):
    """The shipped config for ``kind`` as a dict."""
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}", "scenario")
    text = resources.files("safempc.configs").joinpath(f"{kind}.json").read_text()
    return json.loads(text)


def read_config_file(path):
    """Parse a JSON config file, or a builtin name such as ``integrator``."""
    if path in KINDS:
        return builtin_config(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Apply one ``dotted.path=value`` assignment; integers index into lists."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"override key {key!r} is malformed")
    node = cfg
    for i, p in enumerate(parts[:-1]):
        nxt = parts[i + 1]
        if isinstance(node, list):
            node = node[_list_index(node, p, key)]
        else:
            if p not in node:
                node[p] = [] if nxt.isdigit() else {}
            node = node[p]
    last = parts[-1]
    value = _parse_value(text)
    if isinstance(node, list):
        idx = int(last) if last.isdigit() else None
        if idx is None or idx > len(node):
            raise ConfigError(f"override {key!r}: bad list index", key)
        if idx == len(node):
            node.append(value)
        else:
            node[idx] = value
    else:
        node[last] = value
    return cfg


def _list_index(node, p, key):
    if not p.isdigit() or int(p) >= len(node):
        raise ConfigError(f"override {key!r}: bad list index {p!r}", key)
    return int(p)


def _error_field(err):
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = [r for r in err.validator_value if r not in err.instance]
        if missing:
            return f"{path}.{missing[0]}" if path else missing[0]
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        if extra:
            return f"{path}.{extra[0]}" if path else extra[0]
    return path or "<root>"


def validate(cfg):
    """Validate a resolved config; raises :class:`ConfigError` naming the first bad field."""
    kind = cfg.get("scenario")
    if kind not in KINDS:
        raise ConfigError(f"scenario must be one of {', '.join(KINDS)}; got {kind!r}", "scenario")
    validator = jsonschema.Draft202012Validator(SCHEMAS[kind])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        # descend into conditional schemas for a precise message
        while err.context:
            err = sorted(err.context, key=lambda e: list(e.absolute_path))[0]
        field = _error_field(err)
        raise ConfigError(f"invalid config at {field}: {err.message}", field)
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg):
    kind = cfg["scenario"]
    if kind == "racing":
        run = cfg["run"]
        ratio = run["sim_rate"] / run["ctrl_rate"]
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("run.sim_rate must be an integer multiple of run.ctrl_rate",
                              "run.sim_rate")
        hw = cfg["track"]["half_width"]
        for i, o in enumerate(cfg["opponents"]):
            if abs(o["e_y"]) > hw:
                raise ConfigError(f"opponents.{i}.e_y exceeds the track half-width",
                                  f"opponents.{i}.e_y")
        for seg in cfg["track"]["segments"]:
            if seg[0] == "arc" and len(seg) != 3:
                raise ConfigError("arc segments need [\"arc\", radius, angle]", "track.segments")
    if kind == "sets":
        lo, hi = cfg["grid"]["lower"], cfg["grid"]["upper"]
        if any(a >= b for a, b in zip(lo, hi)):
            raise ConfigError("grid.lower must be below grid.upper", "grid.lower")


def resolve(user_cfg, overrides=(), seed=None, output_dir=None):
    """Merge over the builtin defaults, apply overrides, validate; returns the resolved dict."""
    kind = user_cfg.get("scenario")
    if kind not in KINDS:
        raise ConfigError(f"scenario must be one of {', '.join(KINDS)}; got {kind!r}", "scenario")
    base = builtin_config(kind)
    for sec in EXPLICIT_SECTIONS:
        base.pop(sec, None)
    cfg = deep_merge(base, user_cfg)
    for a in overrides:
        apply_override(cfg, a)
    if seed is not None:
        cfg["seed"] = int(seed)
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    return validate(cfg)


def load_config(path, overrides=(), seed=None, output_dir=None):
    return resolve(read_config_file(path), overrides, seed, output_dir)
