"""
Run Configuration
=================

Config files hold one ``key: value`` pair per line with dotted section
prefixes. Values are JSON scalars or lists; a bare word is read as a string.
Lines starting with ``#`` are comments. Parsing is strict: an unknown key,
a duplicate key or a value of the wrong type is a :class:`ConfigError`
naming the key. An empty file yields the defaults below.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

from .atomic import atomic_write_text
from .clips import SamplerConfig
from .errors import ConfigError, InvalidArgumentError
from .kitti_eval import DEFAULT_LENGTHS, DEFAULT_STRIDE, AlignmentMode
from .losses import LossConfig
from .model import ModelConfig
from .optim import OptimizerConfig
from .synthetic import SyntheticSpec

logger = logging.getLogger(__name__)

TRAIN_SEQUENCES = ("00", "02", "08", "09")
TEST_SEQUENCES = ("01", "03", "04", "05", "06", "07", "10")
MODEL_PRESETS: Dict[str, Callable[[], ModelConfig]] = {"toy": ModelConfig.toy, "full": ModelConfig.full_size}
_BARE_WORD = re.compile(r"^[A-Za-z0-9_.\-/]+$")


@dataclass(frozen=True)
class DataConfig:
    gt_dir: Optional[str] = None
    train_sequences: Tuple[str, ...] = TRAIN_SEQUENCES
    test_sequences: Tuple[str, ...] = TEST_SEQUENCES
    synthetic: SyntheticSpec = SyntheticSpec()
    test_frames: int = 40


@dataclass(frozen=True)
class EvalConfig:
    align: str = "7dof"
    stride: int = DEFAULT_STRIDE
    lengths: Tuple[float, ...] = tuple(float(x) for x in DEFAULT_LENGTHS)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model_preset: str = "toy"
    model: ModelConfig = ModelConfig()
    sampler: SamplerConfig = SamplerConfig()
    loss: LossConfig = LossConfig()
    optim: OptimizerConfig = OptimizerConfig()
    data: DataConfig = DataConfig()
    eval: EvalConfig = EvalConfig()

    def with_overrides(self, **changes: Any) -> RunConfig:
        """Copy with ``alpha``/``seed`` or whole sections replaced."""
        if "alpha" in changes:
            changes["loss"] = dataclasses.replace(self.loss, alpha=changes.pop("alpha"))
        if "seed" in changes:
            changes["sampler"] = dataclasses.replace(self.sampler, shuffle_seed=changes["seed"])
            synthetic = dataclasses.replace(self.data.synthetic, seed=changes["seed"])
            changes["data"] = dataclasses.replace(self.data, synthetic=synthetic)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        """Flat ``key -> value`` mapping in file order."""
        return {key: spec.get(self) for key, spec in KEYS.items()}

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> RunConfig:
        unknown = sorted(set(values) - set(KEYS))
        if unknown:
            raise ConfigError(unknown[0], "unknown key")
        checked = {key: KEYS[key].check(key, value) for key, value in values.items()}
        return _build(checked)


@dataclass(frozen=True)
class _Key:
    kind: str
    get: Callable[[RunConfig], Any]

    def check(self, key: str, value: Any) -> Any:
        kind = self.kind
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(key, f"expected an integer, got {value!r}")
            return value
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, f"expected a number, got {value!r}")
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ConfigError(key, f"expected a string, got {value!r}")
            return value
        if kind == "path":
            if value is None:
                return None
            if not isinstance(value, str):
                raise ConfigError(key, f"expected a path string, got {value!r}")
            if not Path(value).exists():
                raise ConfigError(key, f"path does not exist: {value}")
            return value
        if kind == "str_list":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError(key, f"expected a list of strings, got {value!r}")
            return tuple(value)
        if kind == "float_list":
            if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
            ):
                raise ConfigError(key, f"expected a list of numbers, got {value!r}")
            return tuple(float(v) for v in value)
        msg = f"unknown key kind {kind}"
        raise AssertionError(msg)


KEYS: Dict[str, _Key] = {
    "seed": _Key("int", lambda c: c.seed),
    "alpha": _Key("float", lambda c: c.loss.alpha),
    "loss.mc_reduction": _Key("str", lambda c: c.loss.mc_reduction),
    "model.preset": _Key("str", lambda c: c.model_preset),
    "model.n_frames": _Key("int", lambda c: c.model.n_frames),
    "model.channels": _Key("int", lambda c: c.model.channels),
    "model.height": _Key("int", lambda c: c.model.height),
    "model.width": _Key("int", lambda c: c.model.width),
    "model.patch": _Key("int", lambda c: c.model.patch),
    "model.embed_dim": _Key("int", lambda c: c.model.embed_dim),
    "model.depth": _Key("int", lambda c: c.model.depth),
    "model.heads": _Key("int", lambda c: c.model.heads),
    "model.mlp_ratio": _Key("int", lambda c: c.model.mlp_ratio),
    "model.pixel_mean": _Key("float_list", lambda c: list(c.model.pixel_mean)),
    "model.pixel_std": _Key("float_list", lambda c: list(c.model.pixel_std)),
    "sampler.stride": _Key("int", lambda c: c.sampler.stride),
    "sampler.batch_size": _Key("int", lambda c: c.sampler.batch_size),
    "optim.lr": _Key("float", lambda c: c.optim.lr),
    "optim.beta1": _Key("float", lambda c: c.optim.beta1),
    "optim.beta2": _Key("float", lambda c: c.optim.beta2),
    "optim.eps": _Key("float", lambda c: c.optim.eps),
    "optim.steps": _Key("int", lambda c: c.optim.steps),
    "optim.dtype": _Key("str", lambda c: c.optim.dtype),
    "data.gt_dir": _Key("path", lambda c: c.data.gt_dir),
    "data.train_sequences": _Key("str_list", lambda c: list(c.data.train_sequences)),
    "data.test_sequences": _Key("str_list", lambda c: list(c.data.test_sequences)),
    "data.synthetic.shape": _Key("str", lambda c: c.data.synthetic.shape),
    "data.synthetic.n_frames": _Key("int", lambda c: c.data.synthetic.n_frames),
    "data.synthetic.step": _Key("float", lambda c: c.data.synthetic.step),
    "data.synthetic.curvature": _Key("float", lambda c: c.data.synthetic.curvature),
    "data.synthetic.noise_std": _Key("float", lambda c: c.data.synthetic.noise_std),
    "data.synthetic.test_frames": _Key("int", lambda c: c.data.test_frames),
    "eval.align": _Key("str", lambda c: c.eval.align),
    "eval.stride": _Key("int", lambda c: c.eval.stride),
    "eval.lengths": _Key("float_list", lambda c: list(c.eval.lengths)),
}


def _section(values: Mapping[str, Any], prefix: str) -> Dict[str, Any]:
    """Entries directly under ``prefix`` with the prefix stripped."""
    return {
        key[len(prefix) :]: value
        for key, value in values.items()
        if key.startswith(prefix) and "." not in key[len(prefix) :]
    }


def _construct(key: str, factory: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
    try:
        return factory(*args, **kwargs)
    except InvalidArgumentError as exc:
        raise ConfigError(key, str(exc)) from None


def _build(values: Mapping[str, Any]) -> RunConfig:
    seed = values.get("seed", 0)
    preset = values.get("model.preset", "toy")
    if preset not in MODEL_PRESETS:
        raise ConfigError("model.preset", f"unknown preset {preset!r}, expected one of {sorted(MODEL_PRESETS)}")
    base = MODEL_PRESETS[preset]()
    model_fields = _section(values, "model.")
    model_fields.pop("preset", None)
    model = _construct("model", dataclasses.replace, base, **model_fields)
    sampler = _construct(
        "sampler",
        SamplerConfig,
        n_frames=model.n_frames,
        shuffle_seed=seed,
        **_section(values, "sampler."),
    )
    loss = _construct(
        "alpha",
        LossConfig,
        alpha=values.get("alpha", 1.0),
        mc_reduction=values.get("loss.mc_reduction", "mean"),
    )
    optim = _construct("optim", OptimizerConfig, **_section(values, "optim."))
    synth_fields = _section(values, "data.synthetic.")
    test_frames = synth_fields.pop("test_frames", 40)
    synthetic = _construct("data.synthetic", SyntheticSpec, seed=seed, **synth_fields)
    data_fields = _section(values, "data.")
    data = DataConfig(synthetic=synthetic, test_frames=test_frames, **data_fields)
    overlap = sorted(set(data.train_sequences) & set(data.test_sequences))
    if overlap:
        raise ConfigError("data.test_sequences", f"sequences used for both training and testing: {overlap}")
    if test_frames < 2:
        raise ConfigError("data.synthetic.test_frames", f"must be >= 2, got {test_frames}")
    eval_fields = _section(values, "eval.")
    if "align" in eval_fields:
        _construct("eval.align", AlignmentMode.parse, eval_fields["align"])
    evaluation = EvalConfig(**eval_fields)
    if evaluation.stride < 1:
        raise ConfigError("eval.stride", f"must be >= 1, got {evaluation.stride}")
    if not evaluation.lengths or any(length <= 0 for length in evaluation.lengths):
        raise ConfigError("eval.lengths", "must be a non-empty list of positive lengths")
    return RunConfig(
        seed=seed,
        model_preset=preset,
        model=model,
        sampler=sampler,
        loss=loss,
        optim=optim,
        data=data,
        eval=evaluation,
    )


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if _BARE_WORD.match(raw):
            return raw
        raise


def parse_config(text: str, path: Union[str, Path] = "<string>") -> RunConfig:
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition(":")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(key or f"line {lineno}", f"{path}:{lineno}: expected 'key: value'")
        if key in values:
            raise ConfigError(key, f"{path}:{lineno}: duplicate key")
        if key not in KEYS:
            raise ConfigError(key, f"{path}:{lineno}: unknown key")
        try:
            values[key] = _parse_value(raw.strip())
        except json.JSONDecodeError:
            raise ConfigError(key, f"{path}:{lineno}: cannot parse value {raw.strip()!r}") from None
    return RunConfig.from_dict(values)


def read_config(path: Union[str, Path]) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path} ({exc.strerror})") from None
    cfg = parse_config(text, path)
    logger.debug("config loaded", extra={"fields": {"path": str(path)}})
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines: List[str] = []
    for key, value in cfg.to_dict().items():
        if value is None:
            continue
        lines.append(f"{key}: {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    atomic_write_text(path, format_config(cfg))
