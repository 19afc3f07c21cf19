"""Kirkwood-Salsburg distribution functions and their derivatives with respect to the pair potential.

Configurations are the same JSON documents the ``ksd`` command reads; every
function accepts a dict, a JSON string or a path to a JSON file.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Union

from . import _ksd
from ._ksd import BudgetError, ConfigError, GateError, KsdError, activity_bound, grid_nodes, set_threads

__version__ = _ksd.__version__

Config = Union[dict, str, os.PathLike]


def _text(config: Config) -> str:
    if isinstance(config, dict):
        return json.dumps(config)
    if isinstance(config, os.PathLike) or (isinstance(config, str) and not config.lstrip().startswith("{")):
        return Path(config).read_text()
    return config


def check(config: Config) -> dict[str, Any]:
    """Regularity constants, z_max and the admissibility verdict."""
    return json.loads(_ksd.check(_text(config)))


def solve(config: Config, override_admissibility: bool = False) -> dict[str, Any]:
    """rho^(1..m_max) as arrays of shape (G,)*m plus the solver report."""
    out = _ksd.solve(_text(config), override_admissibility)
    out["report"] = json.loads(out["report"])
    return out


def derivative(config: Config, override_admissibility: bool = False) -> dict[str, Any]:
    """rho and its derivative in the configured perturbation direction."""
    out = _ksd.derivative(_text(config), override_admissibility)
    out["report"] = json.loads(out["report"])
    return out


def oracle(config: Config, override_admissibility: bool = False) -> dict[str, Any]:
    """Brute-force grand-canonical sums on the same grid."""
    return _ksd.oracle(_text(config), override_admissibility)


def config_hash(config: Config) -> str:
    return format(_ksd.config_hash(_text(config)), "016x")


def run(command: str, config: os.PathLike | str, out: os.PathLike | str | None = None,
        override_admissibility: bool = False, seed: int = 12345) -> tuple[int, str, str]:
    """Runs a CLI command in-process; returns (exit code, stdout, stderr)."""
    return _ksd.run(command, os.fspath(config), None if out is None else os.fspath(out),
                    override_admissibility, seed)


__all__ = [
    "BudgetError", "ConfigError", "GateError", "KsdError",
    "activity_bound", "check", "config_hash", "derivative", "grid_nodes", "oracle", "run", "set_threads", "solve",
]
