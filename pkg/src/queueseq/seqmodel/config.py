from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


def _from_dict(cls, d: dict):
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    return cls(**d)


@dataclass
class ModelConfig:
    """Architecture of the event-table transformer.

    Defaults are the desk-scale sizes; the full-size architecture is
    ``d_model=64, d_hidden=512, n_heads=4, n_layers=8``.

    ``time_head`` is ``"exponential"`` (one rate per step) or ``"riemann"``
    (``riemann_bins`` bins of width ``riemann_width`` plus a half-normal
    tail). ``toy_linear`` builds a layer-free model with squared-error
    losses, whose loss is quadratic in every single coordinate; it exists to
    check gradients against finite differences to round-off.
    """

    n_event_types: int
    n_classes: int = 1
    d_model: int = 32
    d_hidden: int = 128
    n_heads: int = 2
    n_layers: int = 2
    time_head: str = "exponential"
    riemann_width: float = 0.1
    riemann_bins: int = 100
    tail_scale: float | None = None
    max_events: int = 400
    use_state_token: bool = False
    state_dim: int = 0
    max_queue: int = 100
    use_policy_token: bool = False
    max_policy_n: int = 32
    positional: str = "sinusoidal"
    init_std: float = 0.02
    toy_linear: bool = False

    def __post_init__(self):
        if self.d_model % max(self.n_heads, 1):
            raise ConfigError("d_model must be divisible by n_heads")
        if self.time_head not in ("exponential", "riemann"):
            raise ConfigError(f"unknown time head {self.time_head!r}")
        if self.positional not in ("sinusoidal", "learned"):
            raise ConfigError(f"unknown positional encoding {self.positional!r}")
        if self.toy_linear and (self.n_layers or self.time_head != "exponential"):
            raise ConfigError("toy_linear needs n_layers=0 and the exponential time head")
        if self.use_state_token and self.state_dim <= 0:
            raise ConfigError("state token needs state_dim > 0")

    @property
    def has_classes(self) -> bool:
        return self.n_classes > 1

    @property
    def period(self) -> int:
        return 3 if self.has_classes else 2

    @property
    def n_prefix(self) -> int:
        # BOS is replaced by the state token when one is used
        return 1 + int(self.use_policy_token)

    @property
    def max_seq_len(self) -> int:
        return self.n_prefix + self.period * self.max_events

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return _from_dict(cls, d)


@dataclass
class TrainConfig:
    """Optimizer and schedule.

    The learning rate warms up linearly from ``lr_start`` to ``lr`` over
    ``warmup`` units and then follows a cosine to ``lr_end`` at the end of
    training. ``schedule_unit`` is ``"epoch"`` (full-size runs) or
    ``"step"`` (short desk runs, where 30 warmup epochs would be most of the
    budget).
    """

    epochs: int = 10
    batch_size: int = 32
    lr: float = 5e-4
    lr_start: float = 1e-7
    lr_end: float = 5e-6
    warmup: int = 30
    schedule_unit: str = "epoch"
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    validation_fraction: float = 0.0
    time_budget: float | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.schedule_unit not in ("epoch", "step"):
            raise ConfigError(f"unknown schedule unit {self.schedule_unit!r}")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d)
