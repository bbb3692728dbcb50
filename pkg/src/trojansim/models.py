"""Model architecture specs, forward execution with per-layer taps, and
deterministic weight seeding.

Layer kinds are conv, maxpool, relu, flatten, and dense. A dense layer's tap
is its raw output; activations are separate relu layers, so profiling a dense
layer by name always observes pre-activation values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .rng import Xoshiro256StarStar
from .tensor import FLOAT32, FixedFormat, Kernel, Tensor

PARAMETERIZED_KINDS = ("conv", "dense")


@dataclass(frozen=True, eq=False)
class LayerSpec:
    name: str
    kind: str
    hyperparams: dict
    params: Kernel | None = None

    def __post_init__(self):
        if self.kind not in ("conv", "maxpool", "relu", "flatten", "dense"):
            raise ConfigError(f"unknown layer kind {self.kind!r} in layer {self.name!r}")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate layer names in model {self.name!r}: {names}")
        if not any(layer.kind == "dense" for layer in self.layers):
            raise ConfigError(f"model {self.name!r} has no dense layer")
        # walking the shapes validates layer-to-layer compatibility
        list(iter_layer_shapes(self))

    def layer_names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def get_layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise ConfigError(f"no layer {name!r} in model {self.name!r}; valid: {self.layer_names()}")


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    final_label: int
    taps: dict[str, Tensor]


def output_shape_of(kind: str, hyperparams: dict, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape propagation rule for one layer."""
    if kind == "conv":
        if len(in_shape) != 3:
            raise DimensionError(f"conv expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        k = hyperparams["kernelSize"]
        s = hyperparams.get("stride", 1)
        if k > h or k > w:
            raise DimensionError(f"conv kernel {k} larger than input {in_shape}")
        return (hyperparams["outChannels"], (h - k) // s + 1, (w - k) // s + 1)
    if kind == "maxpool":
        if len(in_shape) != 3:
            raise DimensionError(f"maxpool expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        win = hyperparams["window"]
        s = hyperparams.get("stride", win)
        if win > h or win > w:
            raise DimensionError(f"pool window {win} larger than input {in_shape}")
        return (c, (h - win) // s + 1, (w - win) // s + 1)
    if kind == "relu":
        return in_shape
    if kind == "flatten":
        return (int(np.prod(in_shape, dtype=np.int64)),)
    if kind == "dense":
        if len(in_shape) != 1:
            raise DimensionError(f"dense expects 1-D input, got {in_shape}")
        return (hyperparams["units"],)
    raise ConfigError(f"unknown layer kind {kind!r}")


def iter_layer_shapes(model: ModelSpec) -> Iterator[tuple[LayerSpec, tuple[int, ...], tuple[int, ...]]]:
    """Yield (layer, input_shape, output_shape) down the pipeline."""
    shape = model.input_shape
    for layer in model.layers:
        out = output_shape_of(layer.kind, layer.hyperparams, shape)
        yield layer, shape, out
        shape = out


def layer_output_shapes(model: ModelSpec) -> dict[str, tuple[int, ...]]:
    return {layer.name: out for layer, _, out in iter_layer_shapes(model)}


def build_lenet() -> ModelSpec:
    """LeNet-5 style MNIST classifier: 1x28x28 in, 10 classes out.

    Valid 5x5 convolutions and 2x2 pools give the classic 24/12/8/4 spatial
    progression and a 256-long flatten into fc1.
    """
    return ModelSpec(
        name="lenet",
        input_shape=(1, 28, 28),
        layers=(
            LayerSpec("conv1", "conv", {"outChannels": 6, "kernelSize": 5, "stride": 1}),
            LayerSpec("relu1", "relu", {}),
            LayerSpec("pool1", "maxpool", {"window": 2, "stride": 2}),
            LayerSpec("conv2", "conv", {"outChannels": 16, "kernelSize": 5, "stride": 1}),
            LayerSpec("relu2", "relu", {}),
            LayerSpec("pool2", "maxpool", {"window": 2, "stride": 2}),
            LayerSpec("flatten", "flatten", {}),
            LayerSpec("fc1", "dense", {"units": 120}),
            LayerSpec("relu3", "relu", {}),
            LayerSpec("fc2", "dense", {"units": 84}),
            LayerSpec("relu4", "relu", {}),
            LayerSpec("fc3", "dense", {"units": 10}),
        ),
    )


def build_cifar_net() -> ModelSpec:
    """Small CIFAR-10 classifier: 3x32x32 in, 10 classes out."""
    return ModelSpec(
        name="cifar",
        input_shape=(3, 32, 32),
        layers=(
            LayerSpec("conv1", "conv", {"outChannels": 32, "kernelSize": 5, "stride": 1}),
            LayerSpec("relu1", "relu", {}),
            LayerSpec("pool1", "maxpool", {"window": 2, "stride": 2}),
            LayerSpec("conv2", "conv", {"outChannels": 32, "kernelSize": 5, "stride": 1}),
            LayerSpec("relu2", "relu", {}),
            LayerSpec("pool2", "maxpool", {"window": 2, "stride": 2}),
            LayerSpec("flatten", "flatten", {}),
            LayerSpec("fc1", "dense", {"units": 64}),
            LayerSpec("relu3", "relu", {}),
            LayerSpec("fc2", "dense", {"units": 10}),
        ),
    )


def build_model(name: str) -> ModelSpec:
    if name == "lenet":
        return build_lenet()
    if name == "cifar":
        return build_cifar_net()
    raise ConfigError(f"unknown model name {name!r}; expected 'lenet' or 'cifar'")


def model_numeric_dtype(model: ModelSpec):
    """dtype of the model's parameters; None when no params are attached."""
    for layer in model.layers:
        if layer.kind in PARAMETERIZED_KINDS and layer.params is not None:
            return layer.params.dtype
    return None


def run_layers(layers: tuple[LayerSpec, ...], x: Tensor) -> dict[str, Tensor]:
    """Execute a contiguous layer slice, returning the tap for every layer."""
    taps: dict[str, Tensor] = {}
    for layer in layers:
        if layer.kind in PARAMETERIZED_KINDS and layer.params is None:
            raise ConfigError(f"layer {layer.name!r} has no parameters loaded")
        if layer.kind == "conv":
            x = T.conv2d(x, layer.params, layer.hyperparams.get("stride", 1))
        elif layer.kind == "maxpool":
            hp = layer.hyperparams
            x = T.maxpool2d(x, hp["window"], hp.get("stride", hp["window"]))
        elif layer.kind == "relu":
            x = T.relu(x)
        elif layer.kind == "flatten":
            x = x.reshaped((x.size,))
        else:
            x = T.dense(x, layer.params)
        taps[layer.name] = x
    return taps


def forward(model: ModelSpec, image: Tensor) -> ForwardTrace:
    """Run one image through the model, tapping every layer output."""
    if image.shape != model.input_shape:
        raise DimensionError(
            f"image shape {image.shape} does not match model input {model.input_shape}"
        )
    mode = model_numeric_dtype(model)
    if isinstance(mode, FixedFormat) and image.dtype == FLOAT32:
        image = T.quantize(image, mode)
    taps = run_layers(model.layers, image)
    last = taps[model.layers[-1].name]
    return ForwardTrace(final_label=T.argmax(last), taps=taps)


def seed_weights(model: ModelSpec, seed: int) -> ModelSpec:
    """Fill all conv/dense parameters from one xoshiro256** stream.

    Tensors are filled in layer order, weights before bias, flat row-major,
    with values uniform in [-s, s] where s = 1/sqrt(fan_in) evaluated in
    float32. The same seed always reproduces the same bits.
    """
    rng = Xoshiro256StarStar(seed)
    new_layers = []
    for layer, in_shape, _ in iter_layer_shapes(model):
        if layer.kind not in PARAMETERIZED_KINDS:
            new_layers.append(layer)
            continue
        if layer.kind == "conv":
            k = layer.hyperparams["kernelSize"]
            out_ch = layer.hyperparams["outChannels"]
            in_ch = in_shape[0]
            w_shape = (out_ch, in_ch, k, k)
            fan_in = in_ch * k * k
        else:
            units = layer.hyperparams["units"]
            w_shape = (units, in_shape[0])
            fan_in = in_shape[0]
        s = float(np.float32(1.0 / math.sqrt(fan_in)))
        n_w = int(np.prod(w_shape, dtype=np.int64))
        w_vals = np.array([rng.uniform(-s, s) for _ in range(n_w)], dtype=np.float32)
        b_vals = np.array([rng.uniform(-s, s) for _ in range(w_shape[0])], dtype=np.float32)
        kernel = Kernel(
            weights=Tensor(w_shape, FLOAT32, w_vals),
            bias=Tensor((w_shape[0],), FLOAT32, b_vals),
        )
        new_layers.append(replace(layer, params=kernel))
    return ModelSpec(model.name, model.input_shape, tuple(new_layers))


def quantize_model(model: ModelSpec, fmt: FixedFormat) -> ModelSpec:
    """Convert all attached parameters to a fixed-point format."""
    new_layers = []
    for layer in model.layers:
        if layer.kind in PARAMETERIZED_KINDS and layer.params is not None:
            kernel = Kernel(
                weights=T.quantize(layer.params.weights, fmt),
                bias=T.quantize(layer.params.bias, fmt),
            )
            new_layers.append(replace(layer, params=kernel))
        else:
            new_layers.append(layer)
    return ModelSpec(model.name, model.input_shape, tuple(new_layers))


def apply_weights(model: ModelSpec, params: dict[str, Tensor]) -> ModelSpec:
    """Attach `name.weight` / `name.bias` tensors to their layers."""
    used = set()
    new_layers = []
    for layer, in_shape, _ in iter_layer_shapes(model):
        if layer.kind not in PARAMETERIZED_KINDS:
            new_layers.append(layer)
            continue
        w_key, b_key = f"{layer.name}.weight", f"{layer.name}.bias"
        if w_key not in params or b_key not in params:
            raise ConfigError(f"missing weights for layer {layer.name!r} ({w_key}, {b_key})")
        used.update((w_key, b_key))
        weights, bias = params[w_key], params[b_key]
        expected = _expected_param_shape(layer, in_shape)
        if weights.shape != expected:
            raise DimensionError(
                f"layer {layer.name!r} expects weights {expected}, file has {weights.shape}"
            )
        new_layers.append(replace(layer, params=Kernel(weights=weights, bias=bias)))
    extra = set(params) - used
    if extra:
        raise ConfigError(f"weight entries do not match any layer: {sorted(extra)}")
    return ModelSpec(model.name, model.input_shape, tuple(new_layers))


def _expected_param_shape(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    if layer.kind == "conv":
        k = layer.hyperparams["kernelSize"]
        return (layer.hyperparams["outChannels"], in_shape[0], k, k)
    return (layer.hyperparams["units"], in_shape[0])


def model_params(model: ModelSpec) -> dict[str, Tensor]:
    """Collect attached parameters as `name.weight` / `name.bias` entries."""
    out: dict[str, Tensor] = {}
    for layer in model.layers:
        if layer.kind in PARAMETERIZED_KINDS:
            if layer.params is None:
                raise ConfigError(f"layer {layer.name!r} has no parameters to save")
            out[f"{layer.name}.weight"] = layer.params.weights
            out[f"{layer.name}.bias"] = layer.params.bias
    return out


def model_to_json(model: ModelSpec) -> dict:
    """Architecture record; parameters travel separately in weight files."""
    return {
        "name": model.name,
        "inputShape": list(model.input_shape),
        "layers": [
            {"name": l.name, "kind": l.kind, "hyperparams": dict(l.hyperparams), "params": None}
            for l in model.layers
        ],
    }


def model_from_json(obj: dict) -> ModelSpec:
    try:
        layers = tuple(
            LayerSpec(l["name"], l["kind"], dict(l["hyperparams"])) for l in obj["layers"]
        )
        return ModelSpec(obj["name"], tuple(obj["inputShape"]), layers)
    except KeyError as e:
        raise ConfigError(f"model JSON missing field {e}") from e
