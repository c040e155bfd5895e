"""Run configuration.

Values come from three layers: built-in defaults, a ``key=value`` file and
command-line overrides, later layers winning.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

CONFIG_ENV = "SIGR_CONFIG"


@dataclass(frozen=True)
class Config:
    codebook_k: int = 256
    grid_detect: int = 14
    grid_match: int = 30
    patch: int = 16
    spm_levels: int = 3
    svm_gamma: float = 1.0
    svm_c: float = 1.0
    harris_k: float = 0.04
    harris_sigma: float = 1.5
    harris_rel_threshold: float = 0.01
    dbscan_min_points: int = 3
    filter_k_min: float = 4.0
    crop_detect: int = 128
    crop_match: int = 256
    seed: int = 0

    # not part of the documented defaults table
    normalize_histograms: bool = True
    binarize_median: int = 3
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-4
    kmeans_max_samples: int = 60000
    svm_l2_input: bool = True
    svm_tol: float = 1e-3
    svm_max_epochs: int = 200
    svm_cache_mb: float = 256.0
    cluster_pad: int = 2
    grouping_iterations: int = 10
    separate_bg_codebook: bool = False
    reservoir_blocks: bool = False
    spearman: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if f.name == "seed":
                if v < 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif v <= 0:
                raise ValueError(f"config value {f.name} must be positive, got {v}")
        if self.spm_levels != 3:
            raise ValueError("only 3-level pyramids are supported")

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    if typ in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"bad boolean for {name}: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    return float(raw)


def parse_config_text(text: str, base: Config | None = None) -> Config:
    base = base or Config()
    types = {f.name: f.type for f in fields(Config)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        changes[key] = _coerce(key, val, types[key])
    return base.replace(**changes)


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> Config:
    """Defaults <- file (explicit path, else ``$SIGR_CONFIG``) <- overrides."""
    cfg = Config()
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is not None:
        cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), cfg)
    if overrides:
        cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    return cfg
