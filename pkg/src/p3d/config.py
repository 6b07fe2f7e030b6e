"""Run configuration: a YAML document with model, train, data and output sections.

Example::

    model:
      ensemble: middle
    train:
      epochs: 50
      batch_size: 64
    data:
      synthetic: {num_classes: 8, samples_per_class: 16, test_per_class: 8}
    output_dir: runs/demo

Empty ``model`` and ``train`` sections give the default hyperparameters.
``data`` holds either ``manifest: PATH`` (relative paths resolve against the
config file) or ``synthetic: {...}`` with :class:`SyntheticSpec` keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .model import ModelConfig
from .pose.io import Dataset, load_dataset
from .pose.sequence import PoseSequence
from .pose.synthetic import SyntheticSpec, generate_sequences, spec_to_dict
from .training import TrainConfig

TOP_LEVEL_KEYS = ("model", "train", "data", "output_dir")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configurations."""


def _check_keys(section: str, d, allowed) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(map(str, unknown))}")
    return dict(d)


@dataclass
class DataConfig:
    manifest: Path | None = None
    synthetic: SyntheticSpec | None = None

    @classmethod
    def from_dict(cls, d: dict | None, base_dir: Path) -> "DataConfig":
        d = _check_keys("data", d, ("manifest", "synthetic"))
        if "manifest" in d and "synthetic" in d:
            raise ConfigError("data: give either 'manifest' or 'synthetic', not both")
        if "manifest" in d:
            path = Path(d["manifest"])
            return cls(manifest=path if path.is_absolute() else base_dir / path)
        syn = d.get("synthetic") or {}
        syn = _check_keys("data.synthetic", syn, [f.name for f in fields(SyntheticSpec)])
        spec = SyntheticSpec(**syn)
        try:
            spec.validate()
        except ValueError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None
        return cls(synthetic=spec)

    def to_dict(self) -> dict:
        if self.manifest is not None:
            return {"manifest": str(Path(self.manifest).resolve())}
        return {"synthetic": spec_to_dict(self.synthetic)}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=lambda: DataConfig(synthetic=SyntheticSpec()))
    output_dir: Path = Path("runs/default")

    @classmethod
    def from_dict(cls, d: dict | None, base_dir: Path | str = ".") -> "RunConfig":
        """Build a config, filling in data-dependent model keys left unset.

        ``num_classes`` and, for synthetic data, the joint layout follow the
        dataset unless the model section sets them.
        """
        base_dir = Path(base_dir)
        d = _check_keys("config", d, TOP_LEVEL_KEYS)
        data = DataConfig.from_dict(d.get("data"), base_dir)
        model_d = _check_keys("model", d.get("model"), [f.name for f in fields(ModelConfig)])
        if "num_classes" not in model_d:
            model_d["num_classes"] = _data_num_classes(data)
        if data.synthetic is not None:
            model_d.setdefault("joints_per_part", dict(data.synthetic.joints_per_part))
            model_d.setdefault("expression_width", data.synthetic.expression_width)
        try:
            model = ModelConfig.from_dict(model_d)
            train = TrainConfig.from_dict(_check_keys("train", d.get("train"), [f.name for f in fields(TrainConfig)]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        out = Path(d.get("output_dir", "runs/default"))
        return cls(model, train, data, out if out.is_absolute() else base_dir / out)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data.to_dict(),
            "output_dir": str(Path(self.output_dir).resolve()),
        }

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    def load_split(self, split: str) -> list[PoseSequence]:
        if self.data.manifest is not None:
            return self.dataset().load_split(split)
        seqs = generate_sequences(self.data.synthetic)
        if split not in seqs:
            raise ConfigError(f"unknown split {split!r}")
        return seqs[split]

    def dataset(self) -> Dataset:
        if self.data.manifest is None:
            raise ConfigError("data section has no manifest")
        if not self.data.manifest.exists():
            raise FileNotFoundError(f"manifest not found: {self.data.manifest}")
        return load_dataset(self.data.manifest)


def _data_num_classes(data: DataConfig) -> int:
    if data.synthetic is not None:
        return data.synthetic.num_classes
    if not data.manifest.exists():
        raise FileNotFoundError(f"manifest not found: {data.manifest}")
    return load_dataset(data.manifest).num_classes


def load_run_config(path=None) -> RunConfig:
    """Read a YAML run config; ``None`` gives the all-default run."""
    if path is None:
        return RunConfig.from_dict({})
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return RunConfig.from_dict(raw, path.parent)
