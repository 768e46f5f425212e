"""Flat ``key = value`` run configuration, read with configparser.

The file has no sections; ``#`` and ``;`` start comments.  Every key has a
default, so an empty file describes the 3-level, 8-ary tree with split
1KB/448B/64B 4-way caches.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .cache import CacheConfig
from .controllers import POLICIES
from .merkle import TreeGeometry
from .pipeline import SCENARIOS, LatencyParams
from .tamper import TAMPER_KINDS
from .workloads import RstSpec

WORKLOADS = ("rst", "scenario", "bound", "tamper", "replay")


class ConfigError(ValueError):
    pass


def _int(text: str) -> int:
    return int(text, 0)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_int(part) for part in text.replace(" ", "").split(",") if part)


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(part for part in text.replace(" ", "").split(",") if part)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    # geometry
    arity: int = 8
    levels: int = 3
    counter_blocks: int = 0
    # cache
    cache_mode: str = "split"
    cache_sizes: tuple[int, ...] = (1024, 448, 64)
    cache_total: int = 1536
    ways: int = 4
    # policy and timing
    policy: str = "hmt"
    t_hash: int = 40
    t_mem: int = 100
    t_cache: int = 2
    t_aes: int = 0
    t_hmac: int = 0
    issue_width: int = 1
    max_inflight: int = 8
    speculative_sharing: bool = True
    # workload
    workload: str = "rst"
    stride: int = 64
    count: int = 10_000
    read_fraction: float = 1.0
    base: int = 0
    bytes_per_counter: int = 512
    address_space: int = 2 * 1024 * 1024
    sweep_min: int = 0
    sweep_max: int = 16
    sweep_policies: tuple[str, ...] = ("lazy", "hmt", "insecure")
    hit_level: str = "all_miss"
    tamper_kinds: tuple[str, ...] = TAMPER_KINDS
    trials: int = 1000
    trace_file: str = ""
    flush: bool = True
    events: bool = False
    # run
    seed: int = 0
    out_dir: str = "results"
    tag: str = ""

    _PARSERS = {
        "cache_sizes": _int_list,
        "sweep_policies": _str_list,
        "tamper_kinds": _str_list,
        "speculative_sharing": _bool,
        "flush": _bool,
        "events": _bool,
        "read_fraction": float,
    }

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def set(self, key: str, text: str) -> None:
        key = key.strip().replace("-", "_")
        if key not in self.keys():
            raise ConfigError(f"unknown config key {key!r}")
        parse = self._PARSERS.get(key)
        if parse is None:
            parse = _int if isinstance(getattr(self, key), int) else str
        try:
            value = parse(text.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        setattr(self, key, value)

    @classmethod
    def load(cls, path: Optional[str | Path] = None, overrides: Optional[list[str]] = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
            try:
                parser.read_string("[run]\n" + text, source=str(path))
            except configparser.Error as exc:
                raise ConfigError(str(exc)) from None
            extra = [name for name in parser.sections() if name != "run"]
            if extra:
                raise ConfigError(f"{path}: config is flat, found section [{extra[0]}]")
            for key, value in parser["run"].items():
                cfg.set(key, value)
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            cfg.set(key, value)
        cfg.validate()
        return cfg

    # -- derived objects ---------------------------------------------------------

    def geometry(self) -> TreeGeometry:
        return TreeGeometry(self.arity, self.levels, 64, self.counter_blocks or None)

    def cache_config(self) -> CacheConfig:
        if self.cache_mode == "split":
            return CacheConfig.split(self.cache_sizes, self.ways)
        return CacheConfig.unified(self.cache_total, self.ways)

    def latency(self) -> LatencyParams:
        return LatencyParams(
            t_hash=self.t_hash,
            t_mem=self.t_mem,
            t_cache=self.t_cache,
            t_aes=self.t_aes,
            t_hmac=self.t_hmac,
            issue_width=self.issue_width,
            max_inflight=self.max_inflight,
            speculative_sharing=self.speculative_sharing,
        )

    def rst(self, stride: Optional[int] = None) -> RstSpec:
        return RstSpec(
            stride=self.stride if stride is None else stride,
            count=self.count,
            read_fraction=self.read_fraction,
            base=self.base,
            bytes_per_counter=self.bytes_per_counter,
            address_space=self.address_space,
        )

    def validate(self) -> None:
        """Check every size against every other before anything runs."""
        try:
            g = self.geometry()
            self.cache_config().validate(g)
            self.latency().validate()
            if self.workload == "rst":
                self.rst().validate(g)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.cache_mode not in ("split", "unified"):
            raise ConfigError(f"cache_mode must be split or unified, got {self.cache_mode!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        for pol in self.sweep_policies:
            if pol not in POLICIES:
                raise ConfigError(f"unknown sweep policy {pol!r}")
        if self.workload not in WORKLOADS:
            raise ConfigError(f"workload must be one of {WORKLOADS}, got {self.workload!r}")
        if self.hit_level not in SCENARIOS:
            raise ConfigError(f"hit_level must be one of {SCENARIOS}")
        for kind in self.tamper_kinds:
            if kind not in TAMPER_KINDS:
                raise ConfigError(f"unknown tamper kind {kind!r}")
        if not 0 <= self.sweep_min <= self.sweep_max:
            raise ConfigError("need 0 <= sweep_min <= sweep_max")
        if self.trials < 0 or self.count < 0:
            raise ConfigError("trials and count must be >= 0")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.workload == "replay" and not self.trace_file:
            raise ConfigError("the replay workload needs trace_file")

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

