"""Scenario files, environment overrides and their precedence.

A scenario file is YAML with an explicit ``schema_version``. Every setting has a
dotted name (``mode``, ``links.F1-U.security``, ``keys.E1``, ``output.csv``) and
can be set in four layers, highest first: command-line flag, ``RANSEC_*``
environment variable, file, built-in default. Unknown fields fail closed.

Example::

    schema_version: 1
    experiment: up-echo
    mode: disaggregated
    repetitions: 20000
    links:
      Uu: {security: NIA2+NEA2}
      F1-U: {security: AES-GCM-128, transport: udp-loopback}
    keys:
      F1-U: 000102030405060708090a0b0c0d0e0f
"""

from __future__ import annotations

import os
from typing import Mapping, Optional

import yaml

from .errors import ConfigError, RansecError, UnknownSuite
from .scenario import (EXPERIMENTS, INTERFACES, MODES, TRANSPORTS, LinkSpec, ScenarioConfig,
                       interfaces_for, parse_secure)

SCHEMA_VERSION = 1
ENV_PREFIX = "RANSEC_"

_TOP = {
    "name": str, "experiment": str, "mode": str, "repetitions": int, "payload_size": int,
    "warmup": int, "seed": int,
}
_LINK = {"security": str, "transport": str, "added_delay_us": float, "port": int,
         "ciphering": bool}
_OUTPUT = {"csv": str, "samples": str}


def field_names() -> list[str]:
    """Every overridable setting, dotted."""
    names = list(_TOP)
    names += [f"links.{i}.{f}" for i in INTERFACES for f in _LINK]
    names += [f"keys.{i}" for i in INTERFACES]
    names += [f"output.{f}" for f in _OUTPUT]
    return names


def env_name(field: str) -> str:
    """``links.F1-U.security`` -> ``RANSEC_LINK_F1_U_SECURITY``."""
    parts = field.split(".")
    if parts[0] == "links":
        parts[0] = "link"
    elif parts[0] == "keys":
        parts[0] = "key"
    return ENV_PREFIX + "_".join(p.replace("-", "_").replace("+", "_") for p in parts).upper()


def _type_of(field: str):
    if field == "schema_version":
        return int
    parts = field.split(".")
    if parts[0] in _TOP and len(parts) == 1:
        return _TOP[parts[0]]
    if parts[0] == "links" and len(parts) == 3:
        return _LINK[parts[2]]
    if parts[0] == "keys":
        return bytes
    return _OUTPUT[parts[1]]


def coerce(field: str, value, line: Optional[int] = None):
    """Convert a raw value (YAML scalar or string from env/flag) to the field's type."""
    kind = _type_of(field)
    try:
        if value is None:
            if kind is str and field.endswith(".security"):
                return None
            raise ValueError("value is empty")
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {value!r}")
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"expected an integer, got {value!r}")
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError(f"expected a number, got {value!r}")
            return float(value)
        if kind is bytes:
            return bytes.fromhex(str(value))
        return str(value)
    except ValueError as exc:
        raise ConfigError(str(exc), field=field, line=line) from None


# -- file layer -------------------------------------------------------------------

def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node, field):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError("expected a single value", field=field, line=_line(node))
    if node.style is not None:
        return node.value
    if _type_of(field) in (str, bytes):
        # raw text: a hex key like 00112233 must not turn into an integer
        return None if node.value in ("", "~", "null") else node.value
    return yaml.safe_load(node.value)


def _mapping(node, field):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("expected a mapping", field=field, line=_line(node))
    seen = set()
    for key_node, value_node in node.value:
        key = key_node.value
        if key in seen:
            raise ConfigError("duplicate key", field=f"{field}.{key}" if field else key,
                              line=_line(key_node))
        seen.add(key)
        yield key, key_node, value_node


def parse_scenario_text(text: str) -> dict:
    """Validate a scenario document; returns ``{dotted field: (value, line)}``."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    if root is None:
        raise ConfigError("empty scenario file", field="schema_version")
    out: dict = {}
    version = None
    for key, key_node, value in _mapping(root, ""):
        if key == "schema_version":
            version = _scalar(value, key)
            if version != SCHEMA_VERSION:
                raise ConfigError(f"unsupported schema_version {version!r}; this build reads "
                                  f"{SCHEMA_VERSION}", field=key, line=_line(value))
        elif key in _TOP:
            out[key] = (coerce(key, _scalar(value, key), _line(value)), _line(value))
        elif key == "links":
            for iface, iface_node, spec in _mapping(value, "links"):
                if iface not in INTERFACES:
                    raise ConfigError(f"unknown interface; expected one of {', '.join(INTERFACES)}",
                                      field=f"links.{iface}", line=_line(iface_node))
                for fname, fnode, fvalue in _mapping(spec, f"links.{iface}"):
                    dotted = f"links.{iface}.{fname}"
                    if fname not in _LINK:
                        raise ConfigError(f"unknown link field; expected one of "
                                          f"{', '.join(_LINK)}", field=dotted, line=_line(fnode))
                    out[dotted] = (coerce(dotted, _scalar(fvalue, dotted), _line(fvalue)),
                                   _line(fvalue))
        elif key == "keys":
            for iface, iface_node, hexkey in _mapping(value, "keys"):
                if iface not in INTERFACES:
                    raise ConfigError("unknown interface", field=f"keys.{iface}",
                                      line=_line(iface_node))
                dotted = f"keys.{iface}"
                out[dotted] = (coerce(dotted, _scalar(hexkey, dotted), _line(hexkey)),
                               _line(hexkey))
        elif key == "output":
            for fname, fnode, fvalue in _mapping(value, "output"):
                dotted = f"output.{fname}"
                if fname not in _OUTPUT:
                    raise ConfigError("unknown output field", field=dotted, line=_line(fnode))
                out[dotted] = (coerce(dotted, _scalar(fvalue, dotted), _line(fvalue)),
                               _line(fvalue))
        else:
            raise ConfigError("unknown field", field=key, line=_line(key_node))
    if version is None:
        raise ConfigError("missing schema_version", field="schema_version")
    return out


def load_scenario_file(path) -> dict:
    with open(path) as fh:
        return parse_scenario_text(fh.read())


# -- env and flag layers ------------------------------------------------------------

def env_layer(environ: Mapping[str, str] = os.environ) -> dict:
    """``RANSEC_*`` variables as dotted fields. ``RANSEC_SECURE`` and
    ``RANSEC_TRANSPORT`` expand to per-link fields (mode-dependent, resolved later)."""
    out = {}
    for name in field_names():
        var = env_name(name)
        if var in environ:
            out[name] = coerce(name, environ[var])
    for short in ("SECURE", "TRANSPORT"):
        if ENV_PREFIX + short in environ:
            out["@" + short.lower()] = environ[ENV_PREFIX + short]
    return out


def _expand(layer: dict, mode: str) -> dict:
    """Resolve ``@secure``/``@transport`` shorthands into per-link fields.

    Explicit per-link fields in the same layer win over the shorthand.
    """
    out = {}
    if "@secure" in layer:
        chosen = parse_secure(layer["@secure"], mode)
        for iface in interfaces_for(mode):
            out[f"links.{iface}.security"] = chosen.get(iface)
    if "@transport" in layer:
        for iface in interfaces_for(mode):
            out[f"links.{iface}.transport"] = layer["@transport"]
    out.update({k: v for k, v in layer.items() if not k.startswith("@")})
    return out


def resolve(file_layer: Optional[dict] = None, env: Optional[dict] = None,
            flags: Optional[dict] = None) -> tuple[ScenarioConfig, dict]:
    """Merge layers (flag > env > file > default) into a scenario plus output settings."""
    file_values = {k: v for k, (v, _) in (file_layer or {}).items()}
    lines = {k: line for k, (_, line) in (file_layer or {}).items()}
    env, flags = env or {}, flags or {}
    mode = flags.get("mode", env.get("mode", file_values.get("mode", "disaggregated")))
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}",
                          field="mode", line=lines.get("mode"))
    merged = {}
    for layer in (file_values, _expand(env, mode), _expand(flags, mode)):
        merged.update(layer)

    def fail(exc, field):
        raise ConfigError(str(exc), field=field, line=lines.get(field)) from None

    exp = merged.get("experiment", "up-echo")
    if exp not in EXPERIMENTS:
        fail(f"unknown experiment {exp!r}; expected one of {', '.join(EXPERIMENTS)}",
             "experiment")
    links = {}
    for iface in INTERFACES:
        fields = {f: merged[f"links.{iface}.{f}"] for f in _LINK
                  if f"links.{iface}.{f}" in merged}
        if fields.get("transport", TRANSPORTS[0]) not in TRANSPORTS:
            fail(f"unknown transport; expected one of {', '.join(TRANSPORTS)}",
                 f"links.{iface}.transport")
        if not fields and iface not in interfaces_for(mode):
            continue
        try:
            links[iface] = LinkSpec(iface, **fields)
        except UnknownSuite as exc:
            fail(str(exc), f"links.{iface}.security")
        except (RansecError, ValueError) as exc:
            bad = next((f for f in ("security", "added_delay_us", "port") if f in fields),
                       "security")
            fail(exc, f"links.{iface}.{bad}")
    keys = {k.split(".", 1)[1]: v for k, v in merged.items() if k.startswith("keys.")}
    for name in ("repetitions", "payload_size", "warmup"):
        value = merged.get(name)
        if value is not None and value < (1 if name == "repetitions" else 0):
            fail(f"must be {'>= 1' if name == 'repetitions' else '>= 0'}", name)
    try:
        scenario = ScenarioConfig(
            mode=mode, links=links, experiment=exp, repetitions=merged.get("repetitions"),
            payload_size=merged.get("payload_size", 1024), warmup=merged.get("warmup", 100),
            seed=merged.get("seed", 0), keys=keys, name=merged.get("name"))
    except RansecError as exc:
        iface = next((i for i in INTERFACES if i in str(exc)), None)
        fail(exc, f"links.{iface}.security" if iface else "mode")
    outputs = {k.split(".", 1)[1]: v for k, v in merged.items() if k.startswith("output.")}
    return scenario, outputs


def effective_values(scenario: ScenarioConfig, outputs: dict) -> dict:
    """Dotted view of a resolved scenario; used by tests and ``run --show-config``."""
    out = {name: getattr(scenario, name) for name in _TOP}
    out["mode"] = scenario.mode
    for iface, spec in scenario.links.items():
        for f in _LINK:
            value = getattr(spec, f)
            out[f"links.{iface}.{f}"] = value
    for iface, key in scenario.keys.items():
        out[f"keys.{iface}"] = key
    for f, value in outputs.items():
        out[f"output.{f}"] = value
    return out
