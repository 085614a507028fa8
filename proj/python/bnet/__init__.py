"""Differentiable logic gate networks: train relaxed gate mixtures, then
compile, prune and execute the discrete Boolean circuit.

The heavy lifting lives in the :mod:`bnet._bnet` extension; this package
re-exports its surface.
"""

from ._bnet import (
    compile_checkpoint,
    eval_boolean,
    eval_relaxed,
    evaluate_checkpoint,
    gate_class,
    netlist_accuracy,
    preset_config,
    preset_names,
    prune_netlist,
    relaxed_partials,
    train,
)

__all__ = [
    "compile_checkpoint",
    "eval_boolean",
    "eval_relaxed",
    "evaluate_checkpoint",
    "gate_class",
    "netlist_accuracy",
    "preset_config",
    "preset_names",
    "prune_netlist",
    "relaxed_partials",
    "train",
]
