from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass

from dgz.errors import ConfigError
from dgz.tensor_core import Rng, mix64

DIST_KINDS = ("GEN", "SVG", "LVG", "SCG", "GC_SCG")
CLS_LOSSES = ("revised", "incremental", "vanilla")
GEN_REGULARIZERS = ("none", "l2", "fgm")


@dataclass
class TrainConfig:
    """Hyper-parameters of every pipeline.

    Network widths default to a desk-scale size; :meth:`paper_scale`
    switches to the 4096/2048 generator, 4096 critic and 1024 mapping net.
    """

    tau: float = 0.04
    sigma: float = 0.08
    lam0: float = 10.0
    lam1: float = 0.005
    lam2: float = 1.0
    per_class_gen: int = 50
    batch_size: int = 512
    lr: float = 1e-4
    gan_beta1: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    critic_iters: int = 5
    g_ema: float = 0.0
    gen_epochs: int = 30
    cls_epochs: int = 100
    mapper_epochs: int = 30
    seed: int = 0
    dist_kind: str = "GEN"
    cls_loss: str = "revised"
    indicator: str = "code"
    use_mapping_net: bool = True
    g_hidden: tuple = (256, 256)
    d_hidden: tuple = (256,)
    m_hidden: tuple = (256,)
    mapper_hidden: tuple = (256,)
    noise_dim: int = -1
    use_prior: bool = True
    output_relu: bool = False
    slope: float = 0.2
    gen_reg: str = "none"
    l2_coeff: float = 0.001
    fgm_step: float = 0.08
    resample_pseudo: bool = False
    mapper_squared: bool = True
    svg_scale: float = 0.1
    lvg_scale: float = 3.0
    covariance: str = "pooled"
    dtype: str = "float64"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        for name in ("sigma", "lam0", "lam1", "lam2", "l2_coeff", "fgm_step"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("per_class_gen", "batch_size", "critic_iters"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("gen_epochs", "cls_epochs", "mapper_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.g_ema < 1.0:
            raise ConfigError("g_ema must lie in [0, 1)")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.dist_kind not in DIST_KINDS:
            raise ConfigError(f"dist_kind must be one of {DIST_KINDS}")
        if self.cls_loss not in CLS_LOSSES:
            raise ConfigError(f"cls_loss must be one of {CLS_LOSSES}")
        if self.indicator not in ("code", "paper"):
            raise ConfigError("indicator must be 'code' or 'paper'")
        if self.gen_reg not in GEN_REGULARIZERS:
            raise ConfigError(f"gen_reg must be one of {GEN_REGULARIZERS}")
        if self.covariance not in ("pooled", "global"):
            raise ConfigError("covariance must be 'pooled' or 'global'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def paper_scale(self):
        return self.replace(g_hidden=(4096, 2048), d_hidden=(4096,), m_hidden=(1024,), mapper_hidden=(1024,))

    def rng(self, stage):
        """Stream for a named stage, independent of every other stage."""
        return Rng(mix64(self.seed) ^ zlib.crc32(stage.encode()))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values, base=None):
        """Build from string (or typed) values, e.g. a parsed key=value file."""
        return apply_overrides(base or cls(), values)


def apply_overrides(obj, values):
    """Copy of dataclass ``obj`` with ``values`` parsed to each field's type."""
    known = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _coerce(key, getattr(obj, key), raw)
    return dataclasses.replace(obj, **changes)


def _coerce(key, current, raw):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(current, tuple) else raw
    text = raw.strip()
    try:
        if isinstance(current, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return text
