"""Run configuration, validation and the experiment presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

MODES = ("monolithic", "fedavg", "fedavg_hc", "fedavg_dp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LevelPolicy:
    """``fixed:<l>``, ``sampled`` or ``sampled:<p>,<L>``."""

    fixed: int | None = None
    p: float | None = None
    max_level: int | None = None

    @classmethod
    def parse(cls, text: str) -> "LevelPolicy":
        kind, _, arg = text.partition(":")
        try:
            if kind == "fixed":
                return cls(fixed=int(arg))
            if kind == "sampled":
                if not arg:
                    return cls()
                p, L = arg.split(",")
                return cls(p=float(p), max_level=int(L))
        except ValueError:
            pass
        raise ConfigError(f"bad level policy {text!r}; use fixed:<l>, sampled or sampled:<p>,<L>")

    def __str__(self) -> str:
        if self.fixed is not None:
            return f"fixed:{self.fixed}"
        return "sampled" if self.p is None else f"sampled:{self.p},{self.max_level}"


@dataclass
class DPBlock:
    epsilon: float = 2.0
    delta: float = 1e-3
    clip: float | None = 2.0
    q: float = 0.008
    updates: int = 1
    sigma2: float | None = None


@dataclass
class RunConfig:
    dataset: str | None = None
    label: str = "-1"
    positive_label: str | None = None
    mode: str = "monolithic"
    level: str = "fixed:8"
    epochs: int = 25_000
    epochs_per_round: int = 1_000
    rounds: int = 40
    nodes: int = 4
    fraction: float = 0.25
    resample: bool = True
    eta: float = 0.05
    seed: int = 1
    test_fraction: float = 0.25
    max_level: int = 16
    target_mean: float = 8.0
    weight_range: tuple[float, float] = (-0.5, 0.5)
    threshold: int | None = None
    dp: DPBlock | None = None
    privacy_report: bool = False
    timing: bool = True
    workers: int = 1
    out: str = "runs/latest"

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if not self.dataset:
            raise ConfigError("a dataset path is required")
        for name in ("epochs", "epochs_per_round", "rounds", "nodes", "max_level", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if not 0 < self.fraction <= 1:
            raise ConfigError("fraction must lie in (0, 1]")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        lo, hi = self.weight_range
        if not lo < hi:
            raise ConfigError("weight_range must be increasing")
        if self.mode == "fedavg_hc":
            policy = self.level_policy
            top = policy.max_level or self.max_level
            if policy.fixed is not None and not 1 <= policy.fixed <= top:
                raise ConfigError(f"fixed level {policy.fixed} outside [1, {top}]")
            if policy.p is not None and not 0 < policy.p <= 1:
                raise ConfigError("sampled p must lie in (0, 1]")
            if policy.p is None and not 0 < self.target_mean < top:
                raise ConfigError(f"target_mean must lie in (0, {top})")
            if self.threshold is not None and self.nodes < 2 * self.threshold + 1:
                raise ConfigError("negotiation needs nodes >= 2 * threshold + 1")
        if self.mode == "fedavg_dp":
            if self.dp is None:
                raise ConfigError("fedavg_dp needs a dp block")
            if self.dp.sigma2 is None:
                if self.dp.epsilon <= 0 or not 0 < self.dp.delta < 1:
                    raise ConfigError("dp needs epsilon > 0 and 0 < delta < 1")
                if not 1.25 * self.dp.q / self.dp.delta > 1:
                    raise ConfigError("dp needs 1.25 q / delta > 1")
            elif self.dp.sigma2 < 0:
                raise ConfigError("dp sigma2 must be non-negative")
        return self

    @property
    def level_policy(self) -> LevelPolicy:
        return LevelPolicy.parse(self.level)

    @property
    def federated(self) -> bool:
        return self.mode != "monolithic"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if isinstance(data.get("dp"), dict):
            try:
                data["dp"] = DPBlock(**data["dp"])
            except TypeError as exc:
                raise ConfigError(f"bad dp block: {exc}") from None
        if "weight_range" in data:
            data["weight_range"] = tuple(data["weight_range"])
        if "label" in data:
            data["label"] = str(data["label"])
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None


# --------------------------------------------------------------------------
# Presets: monolithic baselines, bounded-round and incremental-round
# federations, and the comparison against Gaussian DP.
# --------------------------------------------------------------------------

DATASETS = {
    "spam": {"label": "spam"},
    "iot23-okiru": {"label": "label", "positive_label": "Malicious"},
    "iot23-hps": {"label": "label", "positive_label": "Malicious"},
    "coronary": {"label": "cardio"},
}

_MONOLITHIC_EPOCHS = {"spam": 25_000, "iot23-okiru": 10_000, "iot23-hps": 40_000, "coronary": 12_000}
_BOUNDED = {"spam": (6_000, 4), "iot23-okiru": (2_500, 4), "iot23-hps": (12_000, 4), "coronary": (3_000, 4)}
_INCREMENTAL = {"spam": (1_000, 40), "iot23-okiru": (1_000, 14), "iot23-hps": (1_000, 60), "coronary": (1_000, 26)}


def _variant(name: str) -> dict:
    if name == "nohc":
        return {"mode": "fedavg"}
    if name == "dp":
        return {"mode": "fedavg_dp", "dp": asdict(DPBlock())}
    return {"mode": "fedavg_hc", "level": f"fixed:{int(name[2:])}"}


def _build_presets() -> dict[str, dict]:
    presets: dict[str, dict] = {}
    for ds, meta in DATASETS.items():
        presets[f"monolithic/{ds}"] = {**meta, "mode": "monolithic", "epochs": _MONOLITHIC_EPOCHS[ds]}
        epochs, rounds = _BOUNDED[ds]
        for v in ("nohc", "hc4", "hc6", "hc8", "hc10"):
            presets[f"bounded/{ds}/{v}"] = {**meta, **_variant(v), "epochs_per_round": epochs, "rounds": rounds}
        epochs, rounds = _INCREMENTAL[ds]
        for v in ("nohc", "hc6", "hc8", "hc10"):
            presets[f"incremental/{ds}/{v}"] = {**meta, **_variant(v), "epochs_per_round": epochs, "rounds": rounds}
        for v in ("nohc", "dp", "hc8"):
            presets[f"dp-compare/{ds}/{v}"] = {**meta, **_variant(v), "epochs_per_round": epochs, "rounds": rounds}
    return presets


PRESETS = _build_presets()


def preset(name: str) -> dict:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}") from None
