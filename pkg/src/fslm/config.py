"""Run configuration and run manifests for the command-line tool.

A run configuration is one JSON document: ``{"schema": "fslm-runconfig-v1",
"command": <name>, "params": {...}}``.  Validation happens before any compute
and reports *every* violation at once; unknown parameter names are rejected.
Resolution fills defaults and applies the ``FSLM_SEED`` environment override,
and every command writes the resolved copy next to its outputs so a run can
be repeated from artifacts alone.

A run manifest records what a finished run did: tool version, the resolved
configuration and its hash, checksums of all inputs and outputs, wall-clock
time per phase, the seed ledger, and the compute backend.  Manifests are
written atomically.  Re-invoking a command from the embedded configuration
reproduces the data outputs byte for byte; only the manifest's own timing
fields vary between runs.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Any

from fslm._util import read_json, sha256_bytes, sha256_file, write_json
from fslm._version import __version__

CONFIG_SCHEMA = "fslm-runconfig-v1"
MANIFEST_SCHEMA = "fslm-runmanifest-v1"


class ConfigError(ValueError):
    """Invalid run configuration; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"invalid run configuration:\n{lines}")


@dataclass(frozen=True)
class _Param:
    name: str
    kind: str  # int | float | str | bool | path | list-str | list-int
    required: bool = False
    default: Any = None
    choices: tuple[Any, ...] | None = None
    minimum: float | None = None


def _sampler_params(n_draws: int, thin: int, burn_fraction: float) -> tuple[_Param, ...]:
    return (
        _Param("method", "str", default="mcmc", choices=("mcmc", "rejection")),
        _Param("n_draws", "int", default=n_draws, minimum=1),
        _Param("chains", "int", default=20, minimum=2),
        _Param("thin", "int", default=thin, minimum=1),
        _Param("burn_fraction", "float", default=burn_fraction, minimum=1e-9),
    )


_COMMON: tuple[_Param, ...] = (
    _Param("out", "str", required=True),
    _Param("seed", "int", default=0, minimum=0),
    _Param("force", "bool", default=False),
    _Param("threads", "int", default=1, minimum=1),
)

COMMAND_PARAMS: dict[str, tuple[_Param, ...]] = {
    "simulate": _COMMON
    + (
        _Param("model", "str", required=True, choices=("lgm", "hh")),
        _Param("n", "int", required=True, minimum=1),
        _Param("restrict_with", "path"),
    ),
    "train": _COMMON
    + (
        _Param("data", "path", required=True),
        _Param("n_components", "int", default=10, minimum=1),
        _Param("hidden", "list-int", default=[50, 50, 50]),
        _Param("max_epochs", "int", default=400, minimum=1),
        _Param("batch_size", "int", default=256, minimum=1),
        _Param("learning_rate", "float", default=1e-3, minimum=1e-12),
        _Param("val_fraction", "float", default=0.1, minimum=1e-9),
        _Param("patience", "int", default=20, minimum=1),
    ),
    "posterior": _COMMON
    + (
        _Param("model", "path", required=True),
        _Param("obs", "path", required=True),
        _Param("prior", "str", required=True, choices=("lgm", "hh")),
        _Param("keep", "list-str"),
        _Param("calibration", "path"),
    )
    + _sampler_params(n_draws=1000, thin=30, burn_fraction=0.25),
    "rank": _COMMON
    + (
        _Param("model", "path", required=True),
        _Param("obs", "path", required=True),
        _Param("prior", "str", required=True, choices=("lgm", "hh")),
        _Param("mode", "str", default="fslm", choices=("fslm", "brute")),
        _Param("data", "path"),
        _Param("calibration", "path"),
        _Param("plotdata", "bool", default=False),
    )
    + _sampler_params(n_draws=500, thin=30, burn_fraction=0.25),
    "greedy": _COMMON
    + (
        _Param("model", "path", required=True),
        _Param("obs", "path", required=True),
        _Param("prior", "str", required=True, choices=("lgm", "hh")),
        _Param("k", "int", required=True, minimum=1),
        _Param("beam", "int", default=1, minimum=1),
        _Param("baseline", "str", default="none", choices=("none", "random")),
        _Param("runs", "int", default=1, minimum=1),
        _Param("calibration", "path"),
        _Param("plotdata", "bool", default=False),
    )
    + _sampler_params(n_draws=500, thin=30, burn_fraction=0.25),
    "kl": _COMMON
    + (
        _Param("x", "path", required=True),
        _Param("y", "path", required=True),
    ),
    "reproduce": _COMMON
    + (
        _Param(
            "experiment",
            "str",
            required=True,
            choices=("lgm-fig2", "lgm-table1", "hh-fig3", "hh-fig4"),
        ),
        _Param("budget", "str", default="small", choices=("small", "paper")),
    ),
}


def _check_kind(param: _Param, value: Any, problems: list[str]) -> Any:
    """Type-check one value; returns the normalized value."""
    name, kind = param.name, param.kind
    if kind == "bool":
        if not isinstance(value, bool):
            problems.append(f"{name}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{name}: expected an integer, got {value!r}")
            return value
    elif kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{name}: expected a number, got {value!r}")
            return value
        value = float(value)
    elif kind in ("str", "path"):
        if not isinstance(value, str):
            problems.append(f"{name}: expected a string, got {value!r}")
            return value
        if kind == "path" and not os.path.exists(value):
            problems.append(f"{name}: input path does not exist: {value}")
    elif kind == "list-str":
        if not (isinstance(value, list) and all(isinstance(v, str) for v in value)):
            problems.append(f"{name}: expected a list of strings, got {value!r}")
            return value
    elif kind == "list-int":
        if not (
            isinstance(value, list)
            and value
            and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        ):
            problems.append(f"{name}: expected a non-empty list of integers, got {value!r}")
            return value
    else:  # pragma: no cover - schema table bug
        raise AssertionError(f"unknown param kind {kind!r}")
    if param.choices is not None and value not in param.choices:
        problems.append(
            f"{name}: {value!r} is not one of {', '.join(map(repr, param.choices))}"
        )
    if param.minimum is not None and isinstance(value, (int, float)):
        if value < param.minimum:
            problems.append(f"{name}: {value!r} is below the minimum {param.minimum}")
    return value


def _cross_checks(command: str, params: dict[str, Any], problems: list[str]) -> None:
    if command == "rank" and params.get("mode") == "brute" and not params.get("data"):
        problems.append("data: required when mode is 'brute' (retraining needs the training set)")
    if command == "simulate" and params.get("restrict_with") and params.get("model") == "lgm":
        problems.append("restrict_with: only supported for the hh model")
    if command == "posterior" and params.get("keep") == []:
        problems.append("keep: must name at least one feature when given")


def resolve_config(command: str, params: dict[str, Any]) -> dict[str, Any]:
    """Validate ``params`` for ``command`` and return the resolved copy.

    Resolution fills defaults and applies the ``FSLM_SEED`` environment
    override.  Every violation is collected; nothing is computed unless the
    whole document is clean.
    """
    problems: list[str] = []
    if command not in COMMAND_PARAMS:
        raise ConfigError(
            [f"unknown command {command!r}; expected one of {', '.join(sorted(COMMAND_PARAMS))}"]
        )
    spec = {p.name: p for p in COMMAND_PARAMS[command]}
    for key in sorted(set(params) - set(spec)):
        problems.append(f"{key}: unknown parameter for command {command!r}")
    resolved: dict[str, Any] = {}
    for param in COMMAND_PARAMS[command]:
        if param.name in params and params[param.name] is not None:
            resolved[param.name] = _check_kind(param, params[param.name], problems)
        elif param.required:
            problems.append(f"{param.name}: required parameter is missing")
        else:
            resolved[param.name] = param.default
    env_seed = os.environ.get("FSLM_SEED")
    if env_seed is not None and "seed" in spec:
        try:
            resolved["seed"] = int(env_seed)
        except ValueError:
            problems.append(f"seed: FSLM_SEED environment override {env_seed!r} is not an integer")
    _cross_checks(command, resolved, problems)
    if problems:
        raise ConfigError(problems)
    return resolved


def config_document(command: str, params: dict[str, Any]) -> dict[str, Any]:
    return {"schema": CONFIG_SCHEMA, "command": command, "params": params}


def load_config(path: str | os.PathLike) -> tuple[str, dict[str, Any]]:
    """Read a config JSON document; returns ``(command, raw params)``."""
    doc = read_json(path)
    problems = []
    if not isinstance(doc, dict):
        problems.append("config document must be a JSON object")
    else:
        if doc.get("schema") != CONFIG_SCHEMA:
            problems.append(
                f"schema: expected {CONFIG_SCHEMA!r}, got {doc.get('schema')!r}"
            )
        if not isinstance(doc.get("command"), str):
            problems.append("command: missing or not a string")
        if not isinstance(doc.get("params"), dict):
            problems.append("params: missing or not an object")
    if problems:
        raise ConfigError(problems)
    return doc["command"], doc["params"]


def config_hash(resolved: dict[str, Any]) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return sha256_bytes(canonical.encode("utf-8"))


def checksum_tree(path: str | os.PathLike) -> dict[str, str]:
    """Checksums for a file (one entry) or every file under a directory."""
    path = os.fspath(path)
    if os.path.isfile(path):
        return {os.path.basename(path): sha256_file(path)}
    sums: dict[str, str] = {}
    for root, _dirs, files in os.walk(path):
        for name in sorted(files):
            full = os.path.join(root, name)
            sums[os.path.relpath(full, path)] = sha256_file(full)
    return sums


@dataclass
class RunManifest:
    """What a finished run did, with enough detail to repeat it exactly."""

    command: str
    config: dict[str, Any]
    inputs: dict[str, dict[str, str]] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    phases: dict[str, float] = field(default_factory=dict)
    seeds: dict[str, Any] = field(default_factory=dict)
    backend: str = ""
    tool_version: str = __version__

    def to_document(self) -> dict[str, Any]:
        return {
            "schema": MANIFEST_SCHEMA,
            "tool_version": self.tool_version,
            "command": self.command,
            "config": self.config,
            "config_sha256": config_hash(self.config),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "phases": self.phases,
            "seeds": self.seeds,
            "backend": self.backend,
        }

    def save(self, path: str | os.PathLike) -> None:
        write_json(path, self.to_document())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunManifest":
        doc = read_json(path)
        if not isinstance(doc, dict) or doc.get("schema") != MANIFEST_SCHEMA:
            raise ConfigError(
                [f"not a run manifest (expected schema {MANIFEST_SCHEMA!r}): {path}"]
            )
        return cls(
            command=doc["command"],
            config=doc["config"],
            inputs=doc.get("inputs", {}),
            outputs=doc.get("outputs", {}),
            phases=doc.get("phases", {}),
            seeds=doc.get("seeds", {}),
            backend=doc.get("backend", ""),
            tool_version=doc.get("tool_version", ""),
        )


class PhaseTimer:
    """Collects per-phase wall-clock seconds for the manifest."""

    def __init__(self) -> None:
        self.phases: dict[str, float] = {}

    def time(self, name: str) -> "_PhaseContext":
        return _PhaseContext(self, name)


class _PhaseContext:
    def __init__(self, timer: PhaseTimer, name: str) -> None:
        self._timer = timer
        self._name = name

    def __enter__(self) -> None:
        self._t0 = time.perf_counter()

    def __exit__(self, *exc: Any) -> None:
        self._timer.phases[self._name] = self._timer.phases.get(self._name, 0.0) + (
            time.perf_counter() - self._t0
        )
