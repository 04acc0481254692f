"""Fail-closed INI run configuration.

Sections::

    [profile]        crossing syscall fs bio driver device sfunc_exec   (ns)
    [device]         parallelism max_iops queue_bound seed
    [bench]          modes depths workers interface batch duration_us seed
                     cores hop_limit lookups invalidate_mean_us file
    [file.<name>]    path scatter page_size

Values are integers except mode, interface and path names. ``modes``,
``depths``, ``workers`` and ``batch`` take comma separated lists and the
bench expands their cross product. Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .blockdev import DeviceConfig
from .iostack import LatencyProfile, Mode

PROFILE_KEYS = {"crossing": "crossing_ns", "syscall": "syscall_ns", "fs": "fs_ns",
                "bio": "bio_ns", "driver": "driver_ns", "device": "device_ns",
                "sfunc_exec": "sfunc_exec_ns"}
DEVICE_KEYS = {"parallelism", "max_iops", "queue_bound", "seed"}
BENCH_INT = {"seed", "cores", "hop_limit", "lookups", "duration_us", "invalidate_mean_us"}
BENCH_LISTS = {"modes", "depths", "workers", "batch"}
FILE_KEYS = {"path", "scatter", "page_size"}


class ConfigError(ValueError):
    pass


@dataclass
class FileSpec:
    name: str
    path: Path
    scatter: int = 1
    page_size: int = 512


@dataclass
class RunConfig:
    profile: LatencyProfile = field(default_factory=LatencyProfile)
    device: DeviceConfig | None = None
    modes: list[Mode] = field(default_factory=lambda: [Mode.BASELINE])
    depths: list[int] | None = None  # None: the image depth, or 3
    workers: list[int] = field(default_factory=lambda: [1])
    batch: list[int] | None = None
    interface: str = "sync"
    duration_us: int = 5000
    seed: int = 0
    cores: int = 6
    hop_limit: int = 16
    lookups: int | None = None
    invalidate_mean_us: int | None = None
    file: str | None = None
    files: dict[str, FileSpec] = field(default_factory=dict)


def _int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw.strip(), 0)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None


def _int_list(section: str, key: str, raw: str) -> list[int]:
    items = [x for x in raw.replace(",", " ").split() if x]
    if not items:
        raise ConfigError(f"[{section}] {key}: empty list")
    return [_int(section, key, x) for x in items]


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                  inline_comment_prefixes=("#",))
    p.optionxform = str  # keys are case sensitive
    return p


def read_profile(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    """Parse a config file, overlaying its values on ``base``."""
    p = _parser()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}") from None
    try:
        p.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    return apply(p, base or RunConfig(), path.parent)


def apply(p: configparser.ConfigParser, cfg: RunConfig, root: Path = Path(".")) -> RunConfig:
    for section in p.sections():
        items = dict(p.items(section))
        if section == "profile":
            vals = {}
            for k, v in items.items():
                if k not in PROFILE_KEYS:
                    raise ConfigError(f"[profile] unknown key {k!r}")
                vals[PROFILE_KEYS[k]] = _int(section, k, v)
            cur = cfg.profile
            merged = {f: getattr(cur, f) for f in PROFILE_KEYS.values()}
            merged.update(vals)
            try:
                cfg.profile = LatencyProfile(**merged)
            except ValueError as e:
                raise ConfigError(f"[profile] {e}") from None
        elif section == "device":
            vals = {}
            for k, v in items.items():
                if k not in DEVICE_KEYS:
                    raise ConfigError(f"[device] unknown key {k!r}")
                vals[k] = _int(section, k, v)
            cur = cfg.device or DeviceConfig()
            cfg.device = DeviceConfig(
                service_ns=cur.service_ns,
                parallelism=vals.get("parallelism", cur.parallelism),
                max_iops=vals.get("max_iops", cur.max_iops),
                queue_bound=vals.get("queue_bound", cur.queue_bound),
                seed=vals.get("seed", cur.seed))
            try:
                cfg.device.validate()
            except ValueError as e:
                raise ConfigError(f"[device] {e}") from None
        elif section == "bench":
            _apply_bench(items, cfg)
        elif section.startswith("file.") and len(section) > 5:
            name = section[5:]
            for k in items:
                if k not in FILE_KEYS:
                    raise ConfigError(f"[{section}] unknown key {k!r}")
            if "path" not in items:
                raise ConfigError(f"[{section}] missing key 'path'")
            fpath = Path(items["path"].strip())
            if not fpath.is_absolute():
                fpath = root / fpath
            scatter = _int(section, "scatter", items["scatter"]) if "scatter" in items else 1
            if scatter < 1:
                raise ConfigError(f"[{section}] scatter must be >= 1")
            page = (_int(section, "page_size", items["page_size"])
                    if "page_size" in items else 512)
            if page < 512 or page % 512:
                raise ConfigError(f"[{section}] page_size must be a positive multiple of 512")
            cfg.files[name] = FileSpec(name, fpath, scatter, page)
        else:
            raise ConfigError(f"unknown section [{section}]")
    if cfg.device is not None:
        cfg.device = DeviceConfig(cfg.profile.device_ns, cfg.device.parallelism,
                                  cfg.device.max_iops, cfg.device.queue_bound, cfg.device.seed)
    if cfg.file is not None and cfg.file not in cfg.files:
        raise ConfigError(f"[bench] file {cfg.file!r} has no [file.{cfg.file}] section")
    return cfg


def _apply_bench(items: dict[str, str], cfg: RunConfig) -> None:
    for k, v in items.items():
        if k == "modes":
            try:
                cfg.modes = [Mode.parse(x) for x in v.replace(",", " ").split()]
            except ValueError:
                raise ConfigError(f"[bench] modes: unknown mode in {v!r}") from None
            if not cfg.modes:
                raise ConfigError("[bench] modes: empty list")
        elif k in BENCH_LISTS:
            setattr(cfg, k, _int_list("bench", k, v))
        elif k in BENCH_INT:
            setattr(cfg, k, _int("bench", k, v))
        elif k == "interface":
            cfg.interface = v.strip()
            if cfg.interface not in ("sync", "uring"):
                raise ConfigError(f"[bench] interface must be sync or uring, got {v!r}")
        elif k == "file":
            cfg.file = v.strip()
        else:
            raise ConfigError(f"[bench] unknown key {k!r}")
    if cfg.interface == "sync" and cfg.batch is not None:
        raise ConfigError("[bench] batch only applies to interface = uring")
    if cfg.interface == "uring" and cfg.batch is None:
        raise ConfigError("[bench] interface = uring needs batch")
    if cfg.duration_us <= 0:
        raise ConfigError("[bench] duration_us must be > 0")
