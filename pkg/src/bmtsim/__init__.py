"""Bonsai Merkle tree integrity-verification simulator."""

from .cache import CacheConfig, EvictionRecord, MetadataCache
from .controllers import (
    ControllerPoisoned,
    IntegrityViolation,
    Request,
    make_controller,
)
from .memory import MainMemory, Replay, Splice, Spoof
from .merkle import NodeId, RootRegister, TreeGeometry, build_tree

__all__ = [
    "CacheConfig",
    "ControllerPoisoned",
    "EvictionRecord",
    "IntegrityViolation",
    "MainMemory",
    "MetadataCache",
    "NodeId",
    "Replay",
    "Request",
    "RootRegister",
    "Splice",
    "Spoof",
    "TreeGeometry",
    "build_tree",
    "make_controller",
]
