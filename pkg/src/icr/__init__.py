"""Iterative conditional replacement (ICR) for conditionally specified models."""

from .cycles import UpdateCycle, check_edge, enumerate_cycles, make_cycle
from .engine import IcrConfig, IcrRun, StationarySet, project, run_all, run_icr, stationary_set
from .errors import *  # noqa: F401,F403
from .model import (
    ConditionalBlock,
    CsmModel,
    derive_csm_from_joint,
    load_model,
    make_block,
    make_variables,
    parse_model,
    serialize_model,
)
from .tensor import Distribution, Variable, compose, condition, kl, marginalize, sym_kl, uniform

__version__ = "0.1.0"
