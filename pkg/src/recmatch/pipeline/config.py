"""Run configuration: one INI file, sections per module, typed values.

The file schema mirrors the dataclasses field-for-field:

    [net]      -> netcore.NetConfig
    [train]    -> TrainConfig (this module)
    [dataset]  -> synth.DatasetConfig (scene handled by its own section)
    [scene]    -> synth.SceneConfig
    [eval]     -> EvalConfig (this module)

Values are parsed by the type of the field's default: ints, floats, strings,
booleans (true/false/yes/no/on/off/1/0), and comma-separated tuples.
Unknown sections or keys are rejected loudly — a typo must not silently
train with defaults.  CLI overrides use the same "section.key=value" naming.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Tuple

from ..netcore import NetConfig
from ..synth import DatasetConfig, SceneConfig


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "matching"            # "matching" (stage 1) or "uncertainty" (stage 2)
    lr: float = 2e-4                   # peak step size; cosine-decays to 5% of this
    weight_decay: float = 1e-5
    batch_size: int = 2
    total_steps: int = 2000
    decay_steps: int = 0               # cosine horizon; 0 means total_steps
    mixture: Tuple[float, ...] = (1.0,)  # dataset mixing weights, one per manifest
    seed: int = 0
    checkpoint_every: int = 500
    grad_clip: float = 1.0
    resolution: Tuple[int, int] = (64, 96)  # (H, W) training resolution

    def __post_init__(self):
        if self.stage not in ("matching", "uncertainty"):
            raise ValueError(f"stage must be 'matching' or 'uncertainty', got {self.stage!r}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if self.batch_size < 1 or self.total_steps < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size, total_steps, checkpoint_every must be >= 1")
        if self.decay_steps < 0:
            raise ValueError("decay_steps must be >= 0 (0 = total_steps)")
        if len(self.mixture) == 0 or any(w < 0 for w in self.mixture) or sum(self.mixture) <= 0:
            raise ValueError("mixture weights must be non-negative and not all zero")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        h, w = self.resolution
        if h % 8 or w % 8 or h < 16 or w < 16:
            raise ValueError(f"training resolution must be divisible by 8, got {self.resolution}")


@dataclass(frozen=True)
class EvalConfig:
    pck_thresholds: Tuple[float, ...] = (1.0, 3.0, 5.0)
    auc_thresholds: Tuple[float, ...] = (5.0, 10.0, 20.0)
    confidence_threshold: float = 0.5  # sparsification cutoff for pose matches
    max_matches: int = 512
    seed: int = 0
    full_iterations: bool = False      # evaluate with the heavier {12,12,2} schedule
    plots: bool = False

    def __post_init__(self):
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ValueError("confidence_threshold must lie in (0, 1)")
        if self.max_matches < 8:
            raise ValueError("max_matches must be >= 8")
        if any(t <= 0 for t in self.pck_thresholds) or any(t <= 0 for t in self.auc_thresholds):
            raise ValueError("metric thresholds must be positive")


@dataclass(frozen=True)
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def stage2_defaults(base: TrainConfig | None = None) -> TrainConfig:
    """Stage-two training defaults: 1000 steps, batch size 4, step size 1e-4."""
    t = base if base is not None else TrainConfig()
    return replace(t, stage="uncertainty", lr=1e-4, batch_size=4, total_steps=1000)


_SECTIONS = ("net", "train", "dataset", "scene", "eval")


def _tuple_item_type(default: tuple):
    if default and all(isinstance(v, int) and not isinstance(v, bool) for v in default):
        return int
    return float


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, str):
        return text
    if isinstance(default, tuple):
        if not text:
            return ()
        item = _tuple_item_type(default)
        return tuple(item(part.strip()) for part in text.split(","))
    raise ValueError(f"unsupported config value type {type(default).__name__}")


def _section_defaults(cfg: RunConfig, section: str):
    if section == "net":
        return cfg.net
    if section == "train":
        return cfg.train
    if section == "dataset":
        return cfg.dataset
    if section == "scene":
        return cfg.dataset.scene
    if section == "eval":
        return cfg.eval
    raise ValueError(f"unknown config section [{section}] (expected one of {_SECTIONS})")


def _updated(cfg: RunConfig, section: str, updates: dict) -> RunConfig:
    if not updates:
        return cfg
    if section == "net":
        return replace(cfg, net=replace(cfg.net, **updates))
    if section == "train":
        return replace(cfg, train=replace(cfg.train, **updates))
    if section == "dataset":
        return replace(cfg, dataset=replace(cfg.dataset, **updates))
    if section == "scene":
        return replace(cfg, dataset=replace(cfg.dataset, scene=replace(cfg.dataset.scene, **updates)))
    if section == "eval":
        return replace(cfg, eval=replace(cfg.eval, **updates))
    raise ValueError(f"unknown config section [{section}]")


def _collect(cfg: RunConfig, section: str, pairs) -> dict:
    base = _section_defaults(cfg, section)
    names = {f.name: getattr(base, f.name) for f in fields(base) if f.name != "scene"}
    updates = {}
    for key, raw in pairs:
        if key not in names:
            raise ValueError(f"unknown key {key!r} in section [{section}] "
                             f"(known: {', '.join(sorted(names))})")
        try:
            updates[key] = _parse_value(raw, names[key])
        except ValueError as e:
            raise ValueError(f"[{section}] {key}: {e}") from None
    return updates


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Parse an INI run configuration on top of `base` (defaults if omitted)."""
    cfg = base if base is not None else RunConfig()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    read = parser.read(str(path))
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}] in {path}")
        updates = _collect(cfg, section, parser.items(section))
        cfg = _updated(cfg, section, updates)
    return cfg


def apply_overrides(cfg: RunConfig, assignments) -> RunConfig:
    """Apply "section.key=value" strings (CLI overrides) on top of a config."""
    for text in assignments:
        if "=" not in text or "." not in text.split("=", 1)[0]:
            raise ValueError(f"override must look like section.key=value, got {text!r}")
        target, raw = text.split("=", 1)
        section, key = target.split(".", 1)
        updates = _collect(cfg, section.strip(), [(key.strip(), raw)])
        cfg = _updated(cfg, section.strip(), updates)
    return cfg


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    return str(v)


def save_config(cfg: RunConfig, path) -> None:
    """Write the fully resolved configuration, every key explicit."""
    lines = []
    for section in _SECTIONS:
        obj = _section_defaults(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(obj):
            if f.name == "scene":
                continue  # serialized as its own section
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def preset(name: str) -> RunConfig:
    """Named configuration bundles.

    toy: smallest end-to-end smoke setup.
    overfit: the architecture-sanity setup (64x96, widths 96/64/32,
      iterations 7/4/2, radii 4/4/2, 20 pairs).
    paper-defaults: published constants, including the 512x704 training
      resolution and the heavier test-time iteration schedule; far beyond
      desk-scale training budgets.
    """
    if name == "toy":
        return RunConfig(
            net=NetConfig(widths=(48, 32, 16), iterations=(2, 2, 1), radii=(2, 2, 1),
                          corr_levels=1, window=4, hidden_dim=32, context_dim=32),
            train=TrainConfig(total_steps=60, batch_size=2, lr=3e-4,
                              checkpoint_every=30, resolution=(48, 64)),
            dataset=DatasetConfig(pairs=4, pairs_per_scene=2,
                                  scene=SceneConfig(resolution=(48, 64))),
            eval=EvalConfig(max_matches=128),
        )
    if name == "overfit":
        return RunConfig(
            net=NetConfig(),  # widths (96, 64, 32), iterations (7, 4, 2), radii (4, 4, 2)
            train=TrainConfig(total_steps=2000, batch_size=2, lr=4e-4,
                              checkpoint_every=500, resolution=(64, 96)),
            dataset=DatasetConfig(pairs=20, pairs_per_scene=5,
                                  scene=SceneConfig(resolution=(64, 96))),
            eval=EvalConfig(),
        )
    if name == "paper-defaults":
        return RunConfig(
            net=NetConfig(),
            train=TrainConfig(total_steps=100000, batch_size=4, lr=2e-4,
                              checkpoint_every=5000, resolution=(512, 704)),
            dataset=DatasetConfig(pairs=4000, pairs_per_scene=5,
                                  scene=SceneConfig(resolution=(512, 704))),
            eval=EvalConfig(full_iterations=True),
        )
    raise ValueError(f"unknown preset {name!r} (known: toy, overfit, paper-defaults)")
