"""Simulator for offloading dependent storage reads into kernel dispatch hooks."""

from .blockdev import BlockStore, DeviceConfig, create_device
from .btree import TreeImage, build, compile_lookup, lookup_user
from .iostack import ChainResult, LatencyProfile, Mode, Stack, chain_latency, layout, path_cost
from .xcache import ExtentMap

__all__ = [
    "BlockStore", "ChainResult", "DeviceConfig", "ExtentMap", "LatencyProfile", "Mode", "Stack",
    "TreeImage", "build", "chain_latency", "compile_lookup", "create_device", "layout",
    "lookup_user", "path_cost",
]
