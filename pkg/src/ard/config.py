"""Experiment configuration: dotted-key text files, overrides, and the
named seed substreams that keep every stage reproducible from one root seed.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .active import ActiveConfig
from .data import DataError, SyntheticSpec, VariantSpec
from .lof import LofConfig
from .represent import ReprConfig

SUBSTREAMS = ("synthetic", "variant", "init", "split", "loop")


def substream_seed(root_seed: int, name: str) -> int:
    """Deterministic per-stage seed derived from the root seed and a name."""
    if name not in SUBSTREAMS:
        raise ValueError(f"unknown substream {name!r}")
    ss = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class PathsConfig:
    train: str = ""
    test: str = ""
    out_dir: str = "runs/latest"


@dataclass(frozen=True)
class SplitConfig:
    train_frac: float = 0.4
    stratified: bool = True


@dataclass(frozen=True)
class ServeConfig:
    exemplars: int = 3
    bind: str = "127.0.0.1"
    port: int = 8321
    ui_dir: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    mode: str = "oracle"
    seeds: tuple[int, ...] = (0, 1, 2)
    use_lof: bool = True
    variant: VariantSpec = field(default_factory=lambda: VariantSpec(kind="original"))
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    repr: ReprConfig = field(default_factory=ReprConfig)
    lof: LofConfig = field(default_factory=LofConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    active: ActiveConfig = field(default_factory=ActiveConfig)
    serve: ServeConfig = field(default_factory=ServeConfig)

    def __post_init__(self):
        if self.mode not in ("oracle", "serve"):
            raise DataError(f"unknown mode {self.mode!r}")
        if not self.seeds:
            raise DataError("at least one seed is required")


_SECTIONS = {
    "paths": PathsConfig,
    "variant": VariantSpec,
    "synthetic": SyntheticSpec,
    "repr": ReprConfig,
    "lof": LofConfig,
    "split": SplitConfig,
    "active": ActiveConfig,
    "serve": ServeConfig,
}

_TOP_KEYS = ("mode", "seeds", "use_lof")


def _parse_scalar(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise DataError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _parse_value(raw: str, f):
    kind = f.type if isinstance(f.type, type) else None
    name = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    if kind is None:
        if name.startswith("dict"):
            table = {}
            for part in raw.split(","):
                part = part.strip()
                if not part:
                    continue
                if ":" not in part:
                    raise DataError(f"discard table entry {part!r} is not name:prob")
                rel, prob = part.rsplit(":", 1)
                table[rel.strip()] = float(prob)
            return table
        if name.startswith("tuple[int"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if name in ("int", "float", "str", "bool"):
            return _parse_scalar(raw, {"int": int, "float": float, "str": str, "bool": bool}[name])
        raise DataError(f"cannot parse config field of type {name!r}")
    return _parse_scalar(raw, kind)


def parse_kv_text(text: str) -> dict[str, str]:
    """key = value lines; '#' starts a comment; later keys win."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"config line {lineno}: expected key = value, got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_from_kv(kv: dict[str, str]) -> ExperimentConfig:
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    top: dict[str, object] = {}
    for key, raw in kv.items():
        if key in _TOP_KEYS:
            if key == "seeds":
                top["seeds"] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif key == "use_lof":
                top["use_lof"] = _parse_scalar(raw, bool)
            else:
                top["mode"] = raw
            continue
        if "." not in key:
            raise DataError(f"unknown config key {key!r}")
        section, fname = key.split(".", 1)
        if section not in _SECTIONS:
            raise DataError(f"unknown config section {section!r}")
        cls = _SECTIONS[section]
        matching = [f for f in fields(cls) if f.name == fname]
        if not matching:
            raise DataError(f"unknown config key {key!r}")
        sections[section][fname] = _parse_value(raw, matching[0])
    if "kind" not in sections["variant"]:
        sections["variant"]["kind"] = "original"
    built = {name: cls(**sections[name]) for name, cls in _SECTIONS.items()}
    return ExperimentConfig(
        paths=built["paths"],
        variant=built["variant"],
        synthetic=built["synthetic"],
        repr=built["repr"],
        lof=built["lof"],
        split=built["split"],
        active=built["active"],
        serve=built["serve"],
        **top,
    )


def load_config(path=None, overrides=None) -> ExperimentConfig:
    kv: dict[str, str] = {}
    if path:
        kv.update(parse_kv_text(Path(path).read_text(encoding="utf-8")))
    for item in overrides or []:
        if "=" not in item:
            raise DataError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        kv[key.strip()] = value.strip()
    return config_from_kv(kv)


def config_to_kv(cfg: ExperimentConfig) -> dict[str, str]:
    """Flatten back to dotted keys (the run-directory snapshot format)."""
    out: dict[str, str] = {
        "mode": cfg.mode,
        "seeds": ",".join(str(s) for s in cfg.seeds),
        "use_lof": str(cfg.use_lof).lower(),
    }
    for section, value in (
        ("paths", cfg.paths), ("variant", cfg.variant), ("synthetic", cfg.synthetic),
        ("repr", cfg.repr), ("lof", cfg.lof), ("split", cfg.split),
        ("active", cfg.active), ("serve", cfg.serve),
    ):
        for f in fields(value):
            v = getattr(value, f.name)
            if isinstance(v, dict):
                v = ",".join(f"{k}:{p}" for k, p in sorted(v.items()))
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            out[f"{section}.{f.name}"] = str(v)
    return out


def write_config_snapshot(cfg: ExperimentConfig, path) -> None:
    kv = config_to_kv(cfg)
    lines = [f"{k} = {kv[k]}" for k in sorted(kv)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
