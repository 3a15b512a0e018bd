"""Linear model description: a sequence of layers with byte sizes and profiled times.

Sizes are stored in bytes so the planner never has to guess a dtype.  Models with
distinct layer groups (Swin-style stages, encoder/decoder stacks) are expressed by
varying the per-layer fields.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import ValidationError


@dataclass(frozen=True)
class LayerSpec:
    id: int
    param_bytes: int
    activation_bytes_per_sample: int
    fwd_time_per_sample_ms: float
    name: Optional[str] = None

    def __post_init__(self):
        for attr in ("param_bytes", "activation_bytes_per_sample", "fwd_time_per_sample_ms"):
            value = getattr(self, attr)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValidationError(f"layer {self.id}: {attr} must be a number, got {value!r}")
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"layer {self.id}: {attr} must be >= 0, got {value!r}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    dtype_bytes: int = 4
    description: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValidationError("layers: model needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.id != i:
                raise ValidationError(f"layers[{i}].id: expected {i}, got {layer.id}")
        if self.dtype_bytes <= 0:
            raise ValidationError(f"dtype_bytes: must be > 0, got {self.dtype_bytes}")

    def __len__(self):
        return len(self.layers)

    @property
    def total_param_bytes(self) -> int:
        return sum(layer.param_bytes for layer in self.layers)

    @property
    def total_activation_bytes_per_sample(self) -> int:
        return sum(layer.activation_bytes_per_sample for layer in self.layers)

    def to_dict(self) -> dict:
        out = {"dtype_bytes": self.dtype_bytes}
        if self.description:
            out["description"] = self.description
        out["layers"] = []
        for layer in self.layers:
            entry = {}
            if layer.name is not None:
                entry["name"] = layer.name
            entry["param_bytes"] = layer.param_bytes
            entry["activation_bytes_per_sample"] = layer.activation_bytes_per_sample
            entry["fwd_time_per_sample_ms"] = layer.fwd_time_per_sample_ms
            out["layers"].append(entry)
        return out


_LAYER_FIELDS = ("param_bytes", "activation_bytes_per_sample", "fwd_time_per_sample_ms")


def model_from_dict(data: dict) -> ModelSpec:
    if not isinstance(data, dict):
        raise ValidationError("model: top level must be a JSON object")
    if "layers" not in data:
        raise ValidationError("layers: missing")
    raw_layers = data["layers"]
    if not isinstance(raw_layers, list):
        raise ValidationError("layers: must be a list")
    layers = []
    for i, raw in enumerate(raw_layers):
        if not isinstance(raw, dict):
            raise ValidationError(f"layers[{i}]: must be an object")
        for key in _LAYER_FIELDS:
            if key not in raw:
                raise ValidationError(f"layers[{i}].{key}: missing")
        for key in _LAYER_FIELDS:
            if not _is_num(raw[key]):
                raise ValidationError(f"layers[{i}].{key}: must be a number, got {raw[key]!r}")
        for key in ("param_bytes", "activation_bytes_per_sample"):
            if isinstance(raw[key], float) and not raw[key].is_integer():
                raise ValidationError(f"layers[{i}].{key}: must be an integer byte count")
        try:
            layers.append(LayerSpec(
                id=i,
                param_bytes=int(raw["param_bytes"]),
                activation_bytes_per_sample=int(raw["activation_bytes_per_sample"]),
                fwd_time_per_sample_ms=float(raw["fwd_time_per_sample_ms"]),
                name=raw.get("name"),
            ))
        except ValidationError as exc:
            raise ValidationError(f"layers[{i}]: {exc}") from None
    return ModelSpec(layers=tuple(layers), dtype_bytes=int(data.get("dtype_bytes", 4)),
                     description=data.get("description"))


def _is_num(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def load_model(path) -> ModelSpec:
    """Read and validate a model JSON file.

    Raises ValidationError for unparseable JSON as well as for schema or
    invariant violations; the message names the offending field.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from None
    return model_from_dict(data)


def save_model(model: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def uniform_model(num_layers: int, param_bytes: int, act_bytes: int, fwd_ms: float,
                  dtype_bytes: int = 4) -> ModelSpec:
    if num_layers < 1:
        raise ValidationError(f"num_layers: must be >= 1, got {num_layers}")
    layers = [LayerSpec(i, param_bytes, act_bytes, fwd_ms) for i in range(num_layers)]
    return ModelSpec(layers=tuple(layers), dtype_bytes=dtype_bytes)


def model_from_layers(specs: Sequence[tuple], dtype_bytes: int = 4) -> ModelSpec:
    """Build a model from (param_bytes, act_bytes, fwd_ms) triples."""
    layers = [LayerSpec(i, p, a, t) for i, (p, a, t) in enumerate(specs)]
    return ModelSpec(layers=tuple(layers), dtype_bytes=dtype_bytes)
