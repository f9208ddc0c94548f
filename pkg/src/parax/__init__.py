"""Deterministic simulator for a DAG-fed, committee-validated ledger with
three-stage certificates, cross-chain flash swaps and a friction fee economy."""

from .audit import AuditResult, audit_bytes, audit_dir
from .chain import Chain, ChainParams
from .config import ScenarioConfig, load_preset, parse_config, validate_config
from .errors import ParaxError
from .scenario import RunReport, World, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AuditResult",
    "Chain",
    "ChainParams",
    "ParaxError",
    "RunReport",
    "ScenarioConfig",
    "World",
    "audit_bytes",
    "audit_dir",
    "load_preset",
    "parse_config",
    "run_scenario",
    "validate_config",
]
