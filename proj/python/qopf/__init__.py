"""Python bindings for the qopf hybrid quantum-classical AC-OPF toolkit."""

import json as _json

from . import _core
from ._core import (
    Model,
    density_expectations,
    n_weights,
    noise_spec,
    param_shift_grad,
    statevector_expectations,
)

__version__ = _core.__version__

__all__ = [
    "Model",
    "case_summary",
    "compact_model",
    "density_expectations",
    "n_weights",
    "noise_spec",
    "param_shift_grad",
    "run_cli",
    "solve",
    "statevector_expectations",
]


def case_summary(path):
    """Bus, generator and branch counts plus demand totals of a MATPOWER case."""
    return _json.loads(_core.case_summary_json(path))


def compact_model(path):
    """The compact quadratic-form AC-OPF model of a case as a dict."""
    return _json.loads(_core.compact_json(path))


def solve(path, demand_scale=1.0, objective="linear"):
    """Interior-point AC-OPF at scaled nominal demand."""
    return _core.solve(path, demand_scale, objective)


def run_cli(*args):
    """Runs a `qopf` command; returns (exit_code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])
