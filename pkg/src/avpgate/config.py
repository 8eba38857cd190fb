"""Flat ``section.key = value`` run configuration.

Every section mirrors one module's config dataclass. Unknown keys are
rejected, values are coerced to the type of the field's default, and the
assembled dataclasses run their own validation before any work starts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .descriptors import DescriptorConfig, feature_dim
from .errors import ConfigError, FormatError
from .model import ModelConfig
from .objective import ContrastConfig
from .train import TrainConfig


@dataclass(frozen=True)
class MetricsConfig:
    composition_eps: float = 1e-6

    def __post_init__(self):
        if self.composition_eps <= 0:
            raise ConfigError("metrics.composition_eps must be > 0")


@dataclass(frozen=True)
class PathsConfig:
    # Empty on purpose: embeddings must be chosen explicitly.
    embedder: str = ""


SECTIONS = {
    "descriptor": DescriptorConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "contrast": ContrastConfig,
    "metrics": MetricsConfig,
    "paths": PathsConfig,
}

DOCS = {
    "descriptor.cksaagp_max_gap": "largest gap for grouped k-spaced pairs",
    "descriptor.distpair_max_dist": "largest distance for reduced-alphabet pairs",
    "descriptor.paac_lambda": "pseudo amino acid correlation tiers",
    "descriptor.paac_weight": "weight of the PAAC correlation terms",
    "descriptor.qso_nlag": "quasi-sequence-order lags",
    "descriptor.qso_weight": "weight of the QSOrder coupling terms",
    "descriptor.binary_max_len": "padded length of the one-hot block",
    "augment.n_fragments": "fragments per augmented sequence",
    "augment.m_steps": "edit steps per fragment",
    "augment.insert_prob": "per-step insertion probability",
    "augment.delete_prob": "per-step deletion probability",
    "augment.mutate_prob": "per-residue substitution probability",
    "augment.tta_variants": "mutation variants averaged at prediction time",
    "augment.tta_mutate_prob": "per-residue substitution probability for TTA",
    "model.embed_dim": "per-residue embedding width",
    "model.descriptor_dim": "descriptor vector width (must match the descriptor section)",
    "model.conv_kernels": "comma-separated convolution widths",
    "model.conv_channels": "filters per convolution",
    "model.lstm_hidden": "hidden size per LSTM direction",
    "model.attn_dim": "attention projection width",
    "model.gate_hidden": "hidden width of the gating network",
    "model.mlp_hidden": "comma-separated classifier hidden widths",
    "model.class_count": "number of output classes",
    "model.dropout": "dropout rate in the classifier",
    "model.fmatch": "projection of the BiLSTM summary: linear or identity",
    "model.gate_per_dim": "one gate value per feature dimension",
    "model.init_temperature": "initial contrastive temperature",
    "train.stage": "1 for pre-training, 2 for fine-tuning",
    "train.lr_peak": "peak learning rate",
    "train.weight_decay": "decoupled weight decay",
    "train.beta1": "Adam first-moment decay",
    "train.beta2": "Adam second-moment decay",
    "train.eps": "Adam denominator guard",
    "train.warmup_epochs": "linear warmup length",
    "train.max_epochs": "epoch budget",
    "train.batch_size": "micro-batch size",
    "train.accum_steps": "micro-batches per optimiser step",
    "train.patience": "early-stopping patience in epochs",
    "train.monitor": "validation metric: mcc, acc or macro_f",
    "train.seed": "seed for splits, shuffling, augmentation and init",
    "train.val_fraction": "validation share carved from training data",
    "contrast.pos_capacity": "positive queue length",
    "contrast.neg_capacity": "negative queue length",
    "contrast.k_neg": "hard negatives per anchor",
    "contrast.sharpness": "softmax sharpness of hard-negative sampling",
    "contrast.lambda1": "weight of the contrastive term",
    "contrast.lambda2": "weight of the consistency term",
    "contrast.focal_gamma": "focal loss focusing exponent",
    "metrics.composition_eps": "pseudo-count in composition fold changes",
    "paths.embedder": "embedder spec, e.g. fallback:dim=64:seed=0 or file:emb.pemb",
}


@dataclass(frozen=True)
class RunConfig:
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        want = feature_dim(self.descriptor)
        if self.model.descriptor_dim != want:
            raise ConfigError(f"model.descriptor_dim is {self.model.descriptor_dim} but the descriptor "
                              f"section yields {want}")

    def with_overrides(self, **sections):
        """Replace individual fields: ``with_overrides(train={"seed": 3})``."""
        parts = {name: replace(getattr(self, name), **vals) for name, vals in sections.items()}
        return replace(self, **parts)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip()) if raw.strip() else ()
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw


def dump(cfg=None, comments=True):
    cfg = cfg if cfg is not None else RunConfig()
    lines = []
    for section in SECTIONS:
        lines.append(f"# [{section}]")
        for name, value in asdict(getattr(cfg, section)).items():
            key = f"{section}.{name}"
            if isinstance(value, list):
                value = tuple(value)
            if comments:
                lines.append(f"# {DOCS[key]}")
            lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


def parse(text):
    values = {s: {} for s in SECTIONS}
    defaults = {s: cls() for s, cls in SECTIONS.items()}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'section.key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if name in values[section]:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[section][name] = _coerce(key, val, getattr(defaults[section], name))
    return RunConfig(**{s: SECTIONS[s](**v) for s, v in values.items()})


def load(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from None
    return parse(text)
