"""Confidential ledger with a TEE-backed operator anchored to a public chain."""

from .client import Client
from .operator import Operator, OperatorConfig
from .scenario import load_scenario, run_scenario
from .world import World

__all__ = ["Client", "Operator", "OperatorConfig", "World", "load_scenario", "run_scenario"]
__version__ = "0.1.0"
