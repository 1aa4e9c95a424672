"""Run configuration: flat key = value files, CLI overrides, defaults.

Precedence is defaults < file < command line.  The effective
configuration is rendered into every run log so artifacts record their
own provenance.
"""

import os
from dataclasses import dataclass, fields

from .errors import UsageError
from .network import tiny_vgg
from .optim import Hyperparams

MODES = ("stochastic", "deterministic-fullbatch")
VARIANTS = ("plain", "momentum", "baseline")


@dataclass(frozen=True)
class RunConfig:
    data: str = ""
    out: str = "run"
    arch: str = "tinyvgg"
    widths: tuple = (8, 16)
    activation: str = "softplus"
    pool: str = "softmax"
    sharpness: float = 10.0
    lam: float = 0.0045
    beta: float = 100.0
    alpha: float = 10.0
    epochs: int = 160
    batch_size: int = 16
    variant: str = "plain"
    momentum: float = 0.9
    weight_decay: float = 0.0
    xi_every_batch: bool = False
    seed: int = 0
    mode: str = "stochastic"
    diagnostics: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.variant not in VARIANTS:
            raise UsageError(
                f"variant must be one of {VARIANTS}, got {self.variant!r}"
            )


_BOOLS = {"true": True, "1": True, "yes": True, "false": False, "0": False,
          "no": False}


def _convert(name, kind, raw):
    if isinstance(raw, kind) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            return _BOOLS[text.lower()]
        if kind is tuple:
            return tuple(int(p) for p in text.split(",") if p)
        return kind(text)
    except (KeyError, ValueError):
        raise UsageError(f"config key {name}: cannot parse {raw!r}") from None


def parse_config_file(path):
    """Flat key = value lines; # starts a comment; blanks ignored."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, _, value = body.partition("=")
            out[key.strip()] = value.strip()
    return out


def build_config(file_values=None, overrides=None):
    """Merge defaults, config-file values, and CLI overrides."""
    spec = {f.name: f for f in fields(RunConfig)}
    merged = {}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in spec:
                raise UsageError(f"unknown config key {key!r}")
            kind = type(spec[key].default)
            merged[key] = _convert(key, kind, value)
    return RunConfig(**merged)


def render_config(cfg):
    """One key = value line per field, in declaration order."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(p) for p in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def hyperparams_from(cfg, epochs=None):
    variant = "plain" if cfg.variant == "baseline" else cfg.variant
    return Hyperparams(
        lam=cfg.lam,
        beta=cfg.beta,
        alpha=cfg.alpha,
        epochs=cfg.epochs if epochs is None else epochs,
        batch_size=cfg.batch_size,
        variant=variant,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        xi_every_batch=cfg.xi_every_batch,
    )


def network_from(cfg, in_shape, classes):
    if cfg.arch != "tinyvgg":
        raise UsageError(f"unknown architecture {cfg.arch!r}")
    return tiny_vgg(
        in_shape=in_shape,
        classes=classes,
        widths=cfg.widths,
        activation=cfg.activation,
        pool=cfg.pool,
        sharpness=cfg.sharpness,
    )
