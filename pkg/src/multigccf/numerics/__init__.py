from .params import (
    NumericsError,
    Parameter,
    ParameterStore,
    adam_step,
    load_checkpoint,
    neighborhood_dropout,
    save_checkpoint,
    xavier_init,
)
from .tape import DimensionError, Node, Tape

__all__ = [
    "DimensionError",
    "Node",
    "NumericsError",
    "Parameter",
    "ParameterStore",
    "Tape",
    "adam_step",
    "load_checkpoint",
    "neighborhood_dropout",
    "save_checkpoint",
    "xavier_init",
]
