"""Pipeline configuration: one JSON document covering every stage.

Paper-fidelity notes (not the toy defaults): pillar resolution 0.1 m,
Adam learning rate 2e-6, 150 training epochs.  The desk-scale defaults
below (0.2 m cells on a 64x64 grid, lr 1e-3) train in minutes on a CPU.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .bev import GridSpec
from .errors import ConfigInvalid
from .labels import LabelParams
from .model import ModelConfig
from .preprocess import DenoiseParams, GroundParams
from .synth import SceneConfig


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 2  # gradient-accumulation window per Adam step
    lr: float = 1e-3  # toy default; the reference value is 2e-6 at full scale
    seed: int = 1  # epoch shuffling
    bucket_source: str = "pred"  # pred | gt, speed-bucket basis
    holdout: int = 0  # trailing samples reserved for evaluation

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigInvalid("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigInvalid("lr must be positive")
        if self.bucket_source not in ("pred", "gt"):
            raise ConfigInvalid("bucket_source must be 'pred' or 'gt'")


@dataclass
class PipelineConfig:
    seed: int = 0
    grid: GridSpec = field(default_factory=lambda: GridSpec((-6.4, -6.4), 0.2, 64, 64))
    ground: GroundParams = field(default_factory=GroundParams)
    denoise: DenoiseParams = field(default_factory=DenoiseParams)
    labels: LabelParams = field(default_factory=LabelParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    n_scenes: int = 8  # synth: number of frame pairs to generate

    def validate(self):
        self.grid.validate()
        self.ground.validate()
        self.denoise.validate()
        self.labels.validate()
        self.model.validate()
        self.scene.validate()
        self.training.validate()
        if self.n_scenes < 1:
            raise ConfigInvalid("n_scenes must be >= 1")
        extent_cells = self.scene.extent / self.grid.resolution
        if abs(extent_cells - round(extent_cells)) > 1e-9:
            raise ConfigInvalid("scene extent must be divisible by grid resolution")

    # -- JSON round trip -----------------------------------------------------

    def to_dict(self) -> dict:
        def enc(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: enc(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, tuple):
                return list(obj)
            if isinstance(obj, dict):
                return {k: enc(v) for k, v in obj.items()}
            return obj
        return enc(self)

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        def build(cls, sub: dict):
            kwargs = {}
            for f in dataclasses.fields(cls):
                if f.name not in sub:
                    continue
                v = sub[f.name]
                if f.name in _NESTED:
                    kwargs[f.name] = build(_NESTED[f.name], v)
                elif f.name in _TUPLES:
                    kwargs[f.name] = tuple(v)
                else:
                    kwargs[f.name] = v
            return cls(**kwargs)
        cfg = build(PipelineConfig, d)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @staticmethod
    def load(path: Optional[str]) -> "PipelineConfig":
        if path is None:
            cfg = PipelineConfig()
            cfg.validate()
            return cfg
        with open(path) as f:
            try:
                return PipelineConfig.from_dict(json.load(f))
            except (TypeError, KeyError, ValueError) as exc:
                raise ConfigInvalid(f"{path}: {exc}") from exc


_NESTED = {"grid": GridSpec, "ground": GroundParams, "denoise": DenoiseParams,
           "labels": LabelParams, "model": ModelConfig, "scene": SceneConfig,
           "training": TrainingConfig}
_TUPLES = {"origin", "unet_widths", "outlier_arv"}
