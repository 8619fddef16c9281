from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from ..errors import ConfigError

FAMILIES = ("e3net", "convtasnet")
CONDITIONING = ("concat", "film_utt", "mca_additive", "mca_film", "none")
SOURCES = ("fbank", "dvector", "layered")


@dataclass(frozen=True)
class SeparatorConfig:
    """Architecture of one separator.

    ``L``/``S`` are the encoder frame length and hop in ms, ``N`` the encoder
    width, ``B`` the bottleneck width, ``R`` the LSTM layers (e3net) or TCN
    repeats (convtasnet) and ``X`` the conv blocks per repeat.
    """

    family: str = "e3net"
    L: float = 20.0
    S: float = 10.0
    N: int = 64
    B: int = 32
    R: int = 2
    X: int = 4
    conditioning: str = "concat"
    embedding_source: str = "fbank"
    fine_tune_upstream: bool = False
    embedding_dim: int | None = None  # raw upstream width; derived from the source when None
    adapter_bn: bool = True
    cond_dim: int = 256
    adapter_hidden: int = 256
    head: str | None = None  # "direct" | "mask"; family default when None
    width_multiplier: float = 1.0  # e3net LSTM width relative to B
    hidden: int | None = None  # convtasnet block width, 2B when None
    kernel: int = 3
    mca_heads: int = 4
    mca_d_model: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.conditioning not in CONDITIONING:
            raise ConfigError(f"conditioning must be one of {CONDITIONING}, got {self.conditioning!r}")
        if self.embedding_source not in SOURCES:
            raise ConfigError(f"embedding_source must be one of {SOURCES}, got {self.embedding_source!r}")
        if self.head not in (None, "direct", "mask"):
            raise ConfigError(f"head must be 'direct' or 'mask', got {self.head!r}")
        if min(self.N, self.B, self.R) < 1 or (self.family == "convtasnet" and self.X < 1):
            raise ConfigError("N, B, R (and X for convtasnet) must be positive")
        if self.frame_samples < self.hop_samples or self.hop_samples < 1:
            raise ConfigError(f"need 0 < S <= L, got L={self.L} ms, S={self.S} ms")
        if self.embedding_source == "layered" and self.embedding_dim is None:
            raise ConfigError("layered embeddings need an explicit embedding_dim")

    @property
    def frame_samples(self) -> int:
        return int(round(self.L * self.sample_rate / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.S * self.sample_rate / 1000))

    @property
    def level(self) -> str | None:
        """Enrollment level the conditioning consumes (None when ablated)."""
        if self.conditioning in ("concat", "film_utt"):
            return "utterance"
        if self.conditioning.startswith("mca"):
            return "frame"
        return None

    @property
    def input_dim(self) -> int:
        if self.embedding_dim is not None:
            return self.embedding_dim
        if self.embedding_source == "dvector":
            return 256
        return 80 if self.level == "frame" else 160

    @property
    def output_head(self) -> str:
        return self.head or ("direct" if self.family == "e3net" else "mask")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SeparatorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown separator keys: {unknown}")
        return cls(**data)

    def with_(self, **changes) -> "SeparatorConfig":
        return replace(self, **changes)


PRESETS = {
    "paper_e3net": SeparatorConfig("e3net", L=20, S=10, N=2048, B=256, R=4),
    "paper_convtasnet": SeparatorConfig("convtasnet", L=10, S=5, N=1024, B=256, R=2, X=8, conditioning="film_utt"),
    "desk_e3net": SeparatorConfig("e3net", L=20, S=10, N=64, B=32, R=2, head="mask"),
    "desk_convtasnet": SeparatorConfig("convtasnet", L=10, S=5, N=64, B=32, R=2, X=4, conditioning="film_utt"),
}


def preset(name: str, **overrides) -> SeparatorConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name].with_(**overrides)


PAPER_PEAK_LR = {"e3net": 1e-4, "convtasnet": 5e-4}


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    peak_lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    precision: str = "float32"
    grad_clip: float = 5.0
    log_every: int = 50
    checkpoint_every: int = 0
    prefetch: int = 0  # batches buffered by a sampler thread; 0 samples inline

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if not self.peak_lr > 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown train keys: {unknown}")
        data = dict(data)
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(**data)
