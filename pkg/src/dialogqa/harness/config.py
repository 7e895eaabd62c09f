"""Run configuration: JSON-backed settings for the pipeline commands."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..corpus import SyntheticSpec
from ..encoder import EncoderConfig
from ..streams import EPISODE_STREAMS, STREAM_KINDS, TrainConfig, WindowConfig


class ConfigError(ValueError):
    pass


@dataclass
class FusionTrainConfig:
    epochs: int = 40
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta: float = 0.7  # modality-weighting loss mix
    seed: int = 0


@dataclass
class RunConfig:
    corpus: str = "corpus.jsonl"
    plots: str | None = None
    out: str = "runs/out"
    seed: int = 0
    streams: list[str] = field(default_factory=lambda: [
        "video_description", "scene_summary", "episode_summary"])
    fusion: str = "multi_stream_attention"
    vocab_size: int = 2000
    stage_states: int = 4
    encoder: dict = field(default_factory=lambda: {
        "n_blocks": 2, "n_heads": 2, "dim": 32, "ffn_hidden": 64,
        "emb_init": 0.5, "qk_identity_init": 1.0})
    window: dict = field(default_factory=lambda: {
        "k_scene": 48, "k_video": 32, "k_episode": 48,
        "stride": 24, "n_parts": 6, "temperature": 1.0})
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=25))
    fusion_train: FusionTrainConfig = field(default_factory=FusionTrainConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self):
        for kind in self.streams:
            if kind not in STREAM_KINDS:
                raise ConfigError(f"unknown stream {kind!r} in config")
        if not self.streams:
            raise ConfigError("at least one stream is required")

    def window_for(self, kind: str) -> WindowConfig:
        w = self.window
        if kind in EPISODE_STREAMS:
            k = w["k_episode"]
        elif kind == "video_description":
            k = w.get("k_video", w["k_scene"])
        else:
            k = w["k_scene"]
        return WindowConfig(k=k, stride=w["stride"], n_parts=w["n_parts"],
                            temperature=w["temperature"])

    def encoder_for(self, kind: str, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size,
                             max_len=self.window_for(kind).k, **self.encoder)

    def train_for(self, kind: str, seed_offset: int = 0) -> TrainConfig:
        cfg = TrainConfig(**{**asdict(self.train)})
        cfg.seed = self.seed + seed_offset
        return cfg


def _merge_dataclass(cls, base, overrides: dict):
    values = asdict(base)
    for key, value in overrides.items():
        if key not in values:
            raise ConfigError(f"unknown config field {key!r} for {cls.__name__}")
        values[key] = value
    return cls(**values)


def load_config(path: str | Path | None = None, seed: int | None = None,
                out: str | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus CLI overrides."""
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    cfg = RunConfig()
    for key, value in data.items():
        if key == "train":
            cfg.train = _merge_dataclass(TrainConfig, cfg.train, value)
        elif key == "fusion_train":
            cfg.fusion_train = _merge_dataclass(FusionTrainConfig,
                                                cfg.fusion_train, value)
        elif key == "synthetic":
            cfg.synthetic = _merge_dataclass(SyntheticSpec, cfg.synthetic, value)
        elif key in ("encoder", "window"):
            merged = dict(getattr(cfg, key))
            for sub_key, sub_value in value.items():
                if sub_key not in merged:
                    raise ConfigError(f"unknown {key} field {sub_key!r}")
                merged[sub_key] = sub_value
            setattr(cfg, key, merged)
        elif hasattr(cfg, key):
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"unknown config field {key!r}")
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    cfg.__post_init__()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n"
