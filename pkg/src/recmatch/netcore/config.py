"""Network configuration and its canonical fingerprint."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from typing import Tuple

SCALES = (8, 4, 2)  # denominators: feature maps live at 1/8, 1/4, 1/2


@dataclass(frozen=True)
class NetConfig:
    widths: Tuple[int, int, int] = (96, 64, 32)      # channels at 1/8, 1/4, 1/2
    iterations: Tuple[int, int, int] = (7, 4, 2)     # refinement steps per scale
    radii: Tuple[int, int, int] = (4, 4, 2)          # lookup radius per scale
    corr_levels: int = 2                             # pooled levels past the full volume
    window: int = 4                                  # attention window (feature pixels)
    hidden_dim: int = 64
    context_dim: int = 64
    gamma: float = 0.8                               # per-iterate loss decay
    lookup_window: str = "square"                    # "square" (2r+1)^2 or "l1" ball

    def __post_init__(self):
        if len(self.widths) != 3 or any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be three positive ints, got {self.widths}")
        if len(self.iterations) != 3 or any(n < 1 for n in self.iterations):
            raise ValueError(f"iteration counts must be >= 1, got {self.iterations}")
        if len(self.radii) != 3 or any(r < 0 for r in self.radii):
            raise ValueError(f"radii must be >= 0, got {self.radii}")
        if self.corr_levels < 0:
            raise ValueError("corr_levels must be >= 0")
        if self.window < 1:
            raise ValueError("attention window must be >= 1")
        if self.lookup_window not in ("square", "l1"):
            raise ValueError(f"lookup_window must be 'square' or 'l1', got {self.lookup_window!r}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    def with_full_iterations(self) -> "NetConfig":
        """The heavier refinement schedule used at test time."""
        return replace(self, iterations=(12, 12, 2))

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(d: dict) -> NetConfig:
    kwargs = dict(d)
    for key in ("widths", "iterations", "radii"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return NetConfig(**kwargs)


def config_fingerprint(config: NetConfig) -> str:
    """sha256 of the canonical JSON form; stable across runs and processes."""
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()
