"""Incremental data plane verification over equivalence-class models."""

from .action import (
    Deliver,
    Drop,
    Forward,
    MerkleVectors,
    NOUPDATE,
    PlainVectors,
    forward,
)
from .engine import ModelManager, Strategy
from .model import InverseModel, identity_model, model_overwrite
from .predicate import Predicate, PredicateStore
from .rules import BatchUpdate, Rule, RuleTable, make_rule
from .verify import Topology, Verifier

__all__ = [
    "BatchUpdate",
    "Deliver",
    "Drop",
    "Forward",
    "InverseModel",
    "MerkleVectors",
    "ModelManager",
    "NOUPDATE",
    "PlainVectors",
    "Predicate",
    "PredicateStore",
    "Rule",
    "RuleTable",
    "Strategy",
    "Topology",
    "Verifier",
    "forward",
    "identity_model",
    "make_rule",
    "model_overwrite",
]

__version__ = "0.1.0"
