"""Single pipeline configuration shared by every CLI subcommand.

Loaded from a JSON file (``--config`` or ``$BREPSEQ_CONFIG``), then patched by
per-command flags. The hash of the effective config is written into every
artifact so that runs with different layouts cannot be mixed silently.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParamError, SchemaError
from .sequencer import EDGE_STRATEGIES, FACE_STRATEGIES, VocabLayout

ENV_VAR = "BREPSEQ_CONFIG"


@dataclass(frozen=True)
class Config:
    L: int = 2048
    N_geo: int = 4096
    n_max: int = 50
    n_classes: int = 4
    face_strategy: str = "DFS"
    edge_strategy: str = "MAX-IDX-A"
    tau_merge: float = 0.1
    top_p: float = 0.9
    max_len: int = 1024
    seeds: dict = field(default_factory=lambda: {"dataset": 0, "codebook": 0, "tokenize": 0, "model": 0, "sample": 0})
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.L < 2:
            raise ParamError("L must be at least 2")
        if self.N_geo < 1 or self.n_max < 1 or self.n_classes < 0:
            raise ParamError("N_geo and n_max must be positive, n_classes non-negative")
        if self.face_strategy not in FACE_STRATEGIES:
            raise ParamError(f"unknown face strategy {self.face_strategy!r}")
        if self.edge_strategy not in EDGE_STRATEGIES:
            raise ParamError(f"unknown edge strategy {self.edge_strategy!r}")
        if self.tau_merge <= 0:
            raise ParamError("tau_merge must be positive")
        if not 0.0 < self.top_p <= 1.0:
            raise ParamError("top_p must lie in (0, 1]")

    @property
    def layout(self) -> VocabLayout:
        return VocabLayout(n_max=self.n_max, n_geo=self.N_geo, L=self.L, n_classes=self.n_classes)

    def seed(self, name: str) -> int:
        return int(self.seeds.get(name, 0))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        # paths say where things live, not what they are
        d = self.to_dict()
        d.pop("paths")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **overrides) -> "Config":
        """Copy with the non-None overrides applied."""
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_config(path=None) -> Config:
    """Read ``path``, else ``$BREPSEQ_CONFIG``, else return the defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return Config()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    known = {f.name for f in dataclasses.fields(Config)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise SchemaError(f"{path}: unknown config keys {unknown}")
    seeds = {**Config().seeds, **raw.pop("seeds", {})}
    return Config(seeds=seeds, **raw)
