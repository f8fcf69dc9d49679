"""YAML experiment configuration with line-anchored validation.

A run is configured by layering the user's file over the template shipped
for the chosen experiment (``configs/<experiment>.yaml``), so every physical
default lives in a versioned file rather than in code.  Validation errors
name the file and line of the offending key.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

EXPERIMENTS = ("classical-train", "quantum-not", "mode-learn", "jarzynski", "kramers",
               "absorption-scan")
OUT_DIR_ENV = "PHOTOPERCEPTRON_OUT_DIR"


class ConfigError(Exception):
    def __init__(self, message: str, path: tuple = (), source: str | None = None,
                 line: int | None = None):
        super().__init__(message)
        self.message = message
        self.path = tuple(path)
        self.source = source
        self.line = line

    def __str__(self):
        where = self.source or "<config>"
        if self.line is not None:
            where += f":{self.line}"
        key = ".".join(str(p) for p in self.path)
        return f"{where}: {key + ': ' if key else ''}{self.message}"


@dataclass
class Document:
    data: dict
    lines: dict
    source: str

    def locate(self, path: tuple) -> int | None:
        """Line of the deepest known prefix of path."""
        for n in range(len(path), -1, -1):
            if path[:n] in self.lines:
                return self.lines[path[:n]]
        return None


def _record_lines(node, path: tuple, lines: dict) -> None:
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            p = path + (key.value,)
            lines[p] = key.start_mark.line + 1
            _record_lines(value, p, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            p = path + (i,)
            lines[p] = item.start_mark.line + 1
            _record_lines(item, p, lines)


def parse_yaml(text: str, source: str) -> Document:
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = None if mark is None else mark.line + 1
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", source=source,
                          line=line) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", source=source, line=1)
    lines: dict = {(): 1}
    _record_lines(root, (), lines)
    return Document(data, lines, source)


def load_file(path) -> Document:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(p)) from None
    return parse_yaml(text, str(p))


def template_text(experiment: str) -> str:
    return resources.files("photoperceptron").joinpath("configs", f"{experiment}.yaml").read_text()


def load_template(experiment: str) -> Document:
    return parse_yaml(template_text(experiment), f"<template {experiment}.yaml>")


# ---------------------------------------------------------------- field checks

class Field:
    def check(self, value, path):
        raise NotImplementedError


class Float(Field):
    def __init__(self, lo=None, hi=None, lo_open=False):
        self.lo, self.hi, self.lo_open = lo, hi, lo_open

    def check(self, value, path):
        # PyYAML reads "1e-3" (no dot) as a string, so numeric strings are accepted
        if isinstance(value, bool):
            raise ConfigError(f"expected a number, got {value!r}", path)
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a number, got {value!r}", path) from None
        if not math.isfinite(v):
            raise ConfigError(f"must be finite, got {value!r}", path)
        if self.lo is not None and (v < self.lo or (self.lo_open and v == self.lo)):
            raise ConfigError(f"must be {'>' if self.lo_open else '>='} {self.lo}, got {v}", path)
        if self.hi is not None and v > self.hi:
            raise ConfigError(f"must be <= {self.hi}, got {v}", path)
        return v


class Int(Field):
    def __init__(self, lo=None, hi=None):
        self.lo, self.hi = lo, hi

    def check(self, value, path):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            else:
                raise ConfigError(f"expected an integer, got {value!r}", path)
        if self.lo is not None and value < self.lo:
            raise ConfigError(f"must be >= {self.lo}, got {value}", path)
        if self.hi is not None and value > self.hi:
            raise ConfigError(f"must be <= {self.hi}, got {value}", path)
        return value


class Bool(Field):
    def check(self, value, path):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", path)
        return value


class Str(Field):
    def check(self, value, path):
        if not isinstance(value, str) or not value:
            raise ConfigError(f"expected a non-empty string, got {value!r}", path)
        return value


class Choice(Field):
    def __init__(self, *options):
        self.options = options

    def check(self, value, path):
        if value not in self.options:
            raise ConfigError(f"must be one of {', '.join(map(str, self.options))}; got {value!r}",
                              path)
        return value


class Optional(Field):
    def __init__(self, inner: Field):
        self.inner = inner

    def check(self, value, path):
        return None if value is None else self.inner.check(value, path)


class FloatList(Field):
    def __init__(self, item: Field, min_len=1):
        self.item, self.min_len = item, min_len

    def check(self, value, path):
        if not isinstance(value, list) or len(value) < self.min_len:
            raise ConfigError(f"expected a list of at least {self.min_len} numbers", path)
        return [self.item.check(v, path + (i,)) for i, v in enumerate(value)]


class ComplexList(Field):
    """Coefficients given as numbers or [re, im] pairs."""

    def check(self, value, path):
        if not isinstance(value, list) or not value:
            raise ConfigError("expected a non-empty list of coefficients", path)
        out = []
        num = Float()
        for i, v in enumerate(value):
            p = path + (i,)
            if isinstance(v, list):
                if len(v) != 2:
                    raise ConfigError("complex coefficient must be [re, im]", p)
                out.append(complex(num.check(v[0], p), num.check(v[1], p)))
            else:
                out.append(complex(num.check(v, p)))
        if not any(abs(c) > 0 for c in out):
            raise ConfigError("coefficients must not all vanish", path)
        return out


class Block(Field):
    def __init__(self, fields: dict):
        self.fields = fields

    def check(self, value, path):
        if not isinstance(value, dict):
            raise ConfigError("expected a mapping", path)
        for key in value:
            if key not in self.fields:
                raise ConfigError(f"unknown key (allowed: {', '.join(self.fields)})",
                                  path + (key,))
        out = {}
        for key, field in self.fields.items():
            if key not in value:
                raise ConfigError(f"missing required key {key!r}", path)
            out[key] = field.check(value[key], path + (key,))
        return out


class BlockList(Field):
    def __init__(self, block: Block, min_len=1):
        self.block, self.min_len = block, min_len

    def check(self, value, path):
        if not isinstance(value, list) or len(value) < self.min_len:
            raise ConfigError(f"expected a list of at least {self.min_len} entries", path)
        return [self.block.check(v, path + (i,)) for i, v in enumerate(value)]


POS = Float(0.0, lo_open=True)
MODELS = Choice("ideal", "raman")

WELL = Block({"barrier": POS, "x0": POS, "gamma": POS, "beta": POS})

SCHEMAS = {
    "classical-train": Block({
        "beta": POS, "sigma_init": POS, "epochs": Int(1), "trials_per_epoch": Int(1),
        "task": Choice("NOT", "COPY"), "gain": POS, "w_init": Optional(Float()),
        "backend": Choice("exact", "sampled", "langevin"), "restarts": Int(1),
        "error_threshold": Float(0.0, 1.0),
        "langevin": Block({"barrier": POS, "x0": POS, "gamma": POS, "window": POS,
                           "ramp_time": POS}),
    }),
    "quantum-not": Block({
        "model": MODELS, "trials_per_epoch": Int(1), "epochs": Int(1), "learning_rate": POS,
        "fd_delta": POS, "sigma": POS, "g": Float(0.0), "sigma_init": POS,
        "objective": Choice("min_absorption", "max_absorption"), "w_init": Optional(Float()),
        "w_bound": POS, "wrap_weight": Bool(), "exact_gradient": Bool(), "restarts": Int(1),
        "success_tolerance": POS, "omega_a": Optional(POS),
    }),
    "mode-learn": Block({
        "model": MODELS, "trials_per_epoch": Int(1), "epochs": Int(1), "learning_rate": POS,
        "fd_delta": POS, "sigma": POS, "g": Float(0.0), "n_modes": Int(2, 64),
        "target": Optional(ComplexList()), "initial": Optional(ComplexList()),
        "restarts": Int(1), "stall_patience": Optional(Int(1)), "stall_factor": POS,
        "fidelity_threshold": Float(0.0, 1.0), "omega_a": Optional(POS),
    }),
    "jarzynski": Block({
        "well": WELL, "dt": Optional(POS), "n_trajectories": Int(2),
        "quadrature_points": Int(101),
        "protocols": BlockList(Block({
            "name": Str(), "kind": Choice("ramp", "cyclic", "constant"), "start": Float(),
            "stop": Float(), "duration": POS,
        })),
    }),
    "kramers": Block({
        "well": Block({"barrier": POS, "x0": POS, "gamma": POS}),
        "betas": FloatList(POS, min_len=2), "n_trajectories": Int(2), "dt": Optional(POS),
        "max_steps": Int(1),
    }),
    "absorption-scan": Block({
        "g_min": Float(0.0), "g_max": POS, "n_points": Int(2), "sigma": POS,
        "photon": ComplexList(), "refine": Bool(),
    }),
}

TOP = {"experiment": Choice(*EXPERIMENTS), "seed": Int(0, 2 ** 64 - 1), "out_dir": Str(),
       "workers": Int(1, 1024)}


def _merge(base, over):
    if isinstance(base, dict) and isinstance(over, dict):
        out = dict(base)
        for k, v in over.items():
            out[k] = _merge(base[k], v) if k in base else copy.deepcopy(v)
        return out
    return copy.deepcopy(over)


def _depth(doc: Document | None, path: tuple) -> int:
    if doc is None:
        return -1
    return max((n for n in range(len(path) + 1) if path[:n] in doc.lines), default=0)


def _anchor(err: ConfigError, user: Document | None, template: Document) -> ConfigError:
    """Point err at whichever file spells out more of its key path; ties go to the user."""
    if err.source is None:
        doc = user if _depth(user, err.path) >= _depth(template, err.path) else template
        err.source, err.line = doc.source, doc.locate(err.path)
    return err


def resolve(experiment: str, user: Document | None = None, overrides: dict | None = None) -> dict:
    """Validated config: template for `experiment`, then the user's file, then overrides."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    template = load_template(experiment)
    data = template.data
    if user is not None:
        named = user.data.get("experiment", experiment)
        if named != experiment:
            raise _anchor(ConfigError(f"config is for {named!r} but {experiment!r} was requested",
                                      ("experiment",)), user, template)
        for key in user.data:
            if key not in TOP and key != experiment:
                hint = ("belongs to another experiment" if key in EXPERIMENTS
                        else f"allowed: {', '.join(list(TOP) + [experiment])}")
                raise _anchor(ConfigError(f"unknown top-level key ({hint})", (key,)),
                              user, template)
        data = _merge(data, user.data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        out = {key: field.check(data.get(key), (key,)) for key, field in TOP.items()}
        out[experiment] = SCHEMAS[experiment].check(data.get(experiment), (experiment,))
    except ConfigError as err:
        raise _anchor(err, user, template) from None
    return out


def located_error(message: str, path: tuple, user: Document | None, experiment: str) -> ConfigError:
    """A ConfigError for a cross-field check, anchored like the schema errors."""
    return _anchor(ConfigError(message, path), user, load_template(experiment))
