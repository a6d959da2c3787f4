"""Declarative experiment configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import ConfigError


class Method(str, Enum):
    VQEL = "VQEL"
    GS_ST = "GS_ST"
    REINFORCE = "REINFORCE"


class Variant(str, Enum):
    SP_S = "SP_S"
    SP_S_MP = "SP_S_MP"
    SP_R = "SP_R"
    SP_R_MP = "SP_R_MP"
    SP_SR_MP = "SP_SR_MP"
    MP_ONLY = "MP_only"

    @property
    def sender_self_play(self) -> bool:
        return self in (Variant.SP_S, Variant.SP_S_MP, Variant.SP_SR_MP)

    @property
    def receiver_self_play(self) -> bool:
        return self in (Variant.SP_R, Variant.SP_R_MP, Variant.SP_SR_MP)

    @property
    def mutual_play(self) -> bool:
        return self not in (Variant.SP_S, Variant.SP_R)


_ENUM_FIELDS = {
    "method": Method,
    "variant": Variant,
    "sender_update": ("Frozen", "RL", "RLPres"),
    "receiver_update": ("Frozen", "FineTuned"),
    "metric": ("Cosine", "Euclidean"),
}

# fields that do not influence any numeric result
_NON_NUMERIC = {"output_dir", "seeds"}


@dataclass
class ExperimentConfig:
    method: str = "VQEL"
    variant: str = "SP_S_MP"
    sender_update: str = "RL"
    receiver_update: str = "FineTuned"
    metric: str = "Cosine"
    K: int = 10
    L: int = 4
    d: int = 64
    beta: float = 0.25
    lr: float = 1e-3
    lr_mutual: float | None = None
    weight_decay: float = 1e-5
    tau_sample: float = 0.1
    tau0: float = 1.0
    t_sim: float = 0.1
    epochs_self: int = 50
    epochs_mutual: int = 50
    epochs_baseline: int = 100
    batch: int = 32
    eval_batch: int = 100
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    split_seed: int = 0
    ema_decay: float = 0.99
    ema_eps: float = 1e-5
    expiry_threshold: float | None = None
    expiry_every: int = 100
    expiry_warmup: int = 200
    rl_baseline: bool = True
    topsim_sample: int = 500
    output_dir: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name, allowed in _ENUM_FIELDS.items():
            value = getattr(self, name)
            if isinstance(value, Enum):
                value = value.value
                setattr(self, name, value)
            options = [m.value for m in allowed] if isinstance(allowed, type) else list(allowed)
            if value not in options:
                raise ConfigError(f"{name} must be one of {options}, got {value!r}")
        for name in ("K", "L", "d", "batch", "eval_batch", "topsim_sample"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        for name in ("epochs_self", "epochs_mutual", "epochs_baseline"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("lr", "tau_sample", "tau0", "t_sim"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr_mutual is not None and not self.lr_mutual > 0:
            raise ConfigError("lr_mutual must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.method != "VQEL":
            if self.variant != "MP_only":
                raise ConfigError(f"{self.method} has no self-play phase; use variant MP_only")
            if self.sender_update != "RL":
                raise ConfigError("baseline senders are always trained (sender_update RL)")
        if self.variant == "MP_only" and self.sender_update == "Frozen":
            raise ConfigError("MP_only cannot freeze an untrained sender")
        if self.variant in ("SP_R_MP",) and self.sender_update == "Frozen":
            raise ConfigError("SP_R_MP trains a fresh sender; sender_update cannot be Frozen")
        if (self.variant != "SP_R_MP" and self.receiver_update == "Frozen"
                and Variant(self.variant).mutual_play):
            raise ConfigError("a frozen receiver is only meaningful after receiver self-play")

    # -- conversion -----------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a flat key-value object")
        raw.update(overrides or {})
        return cls.from_dict(raw)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def fingerprint(self, exclude: set[str] | None = None) -> str:
        skip = _NON_NUMERIC | (exclude or set())
        payload = {k: v for k, v in self.to_dict().items() if k not in skip}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def mutual_lr(self) -> float:
        return self.lr if self.lr_mutual is None else self.lr_mutual
