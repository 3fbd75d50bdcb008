"""Bamboo early lock retire and 2PL baselines over an in-memory store."""

from .errors import AbortTxn, ConfigError, ProtocolMisuse, ScriptError, TemplateError
from .locking import (
    EX,
    SH,
    AbortCause,
    LockEntry,
    LockManager,
    LockMode,
    Outcome,
    Policy,
    ProtocolPolicy,
    TimestampSource,
    conflict,
)
from .engine import Engine, Status, TxnHandle
from .storage import LogSink, Table, TableSpec, load_table

__all__ = [
    "AbortCause", "AbortTxn", "ConfigError", "EX", "Engine", "LockEntry",
    "LockManager", "LockMode", "LogSink", "Outcome", "Policy", "ProtocolMisuse",
    "ProtocolPolicy", "SH", "ScriptError", "Status", "Table", "TableSpec",
    "TemplateError", "TimestampSource", "TxnHandle", "conflict", "load_table",
]
