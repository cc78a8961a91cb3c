"""MLP split into a backbone (producing the representation z) and a linear head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fedmr import autodiff as ad
from fedmr.autodiff import Tensor
from fedmr.errors import ContractError, DimensionError


@dataclass(frozen=True)
class MlpSpec:
    """``layer_sizes`` runs input -> hidden... -> feature_dim -> num_classes."""

    layer_sizes: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ContractError("layer_sizes needs input, at least one hidden layer and the head")
        if any(s < 1 for s in sizes):
            raise ContractError(f"all layer extents must be >= 1, got {sizes}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def feature_dim(self) -> int:
        return self.layer_sizes[-2]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class Slot:
    layer: int
    kind: str  # "weight" | "bias"
    start: int
    stop: int
    shape: tuple[int, ...]


@dataclass(frozen=True)
class Layout:
    spec: MlpSpec
    slots: tuple[Slot, ...]

    @classmethod
    def of(cls, spec: MlpSpec) -> "Layout":
        slots = []
        offset = 0
        sizes = spec.layer_sizes
        for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            slots.append(Slot(layer, "weight", offset, offset + fan_in * fan_out, (fan_in, fan_out)))
            offset += fan_in * fan_out
            slots.append(Slot(layer, "bias", offset, offset + fan_out, (fan_out,)))
            offset += fan_out
        return cls(spec, tuple(slots))

    @property
    def size(self) -> int:
        return self.slots[-1].stop

    def slot(self, layer: int, kind: str) -> Slot:
        for s in self.slots:
            if s.layer == layer and s.kind == kind:
                return s
        raise KeyError((layer, kind))


@dataclass
class ModelParams:
    """Flat parameter vector plus the layout mapping (layer, kind) to offsets."""

    layout: Layout
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise DimensionError(f"expected {self.layout.size} parameters, got {self.values.shape}")

    @property
    def spec(self) -> MlpSpec:
        return self.layout.spec

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, self.values.copy())

    def view(self, layer: int, kind: str) -> np.ndarray:
        s = self.layout.slot(layer, kind)
        return self.values[s.start:s.stop].reshape(s.shape)

    def __len__(self) -> int:
        return self.layout.size


def param_count(spec: MlpSpec) -> int:
    sizes = spec.layer_sizes
    return int(np.sum([i * o + o for i, o in zip(sizes[:-1], sizes[1:])]))


def init_params(spec: MlpSpec) -> ModelParams:
    """Glorot-uniform weights, zero biases; a pure function of ``spec.seed``."""
    layout = Layout.of(spec)
    rng = np.random.default_rng(spec.seed)
    values = np.zeros(layout.size)
    for s in layout.slots:
        if s.kind == "weight":
            fan_in, fan_out = s.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            values[s.start:s.stop] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return ModelParams(layout, values)


def forward_tensor(layout: Layout, flat: Tensor, batch) -> tuple[Tensor, Tensor]:
    """Differentiable forward pass with the parameters held in one flat tensor.

    ReLU follows every layer except the linear head, so ``z`` is the
    post-activation output of the layer of width ``feature_dim``.
    """
    x = ad.as_tensor(batch)
    spec = layout.spec
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"batch shape {x.shape} does not match input width {spec.input_dim}")
    num_layers = len(spec.layer_sizes) - 1
    h = x
    for layer in range(num_layers):
        w = layout.slot(layer, "weight")
        b = layout.slot(layer, "bias")
        h = ad.matmul(h, ad.slice_view(flat, w.start, w.stop, w.shape))
        h = ad.add(h, ad.slice_view(flat, b.start, b.stop, b.shape))
        if layer < num_layers - 1:
            h = ad.relu(h)
        if layer == num_layers - 2:
            z = h
    return z, h


def forward(params: ModelParams, batch) -> tuple[Tensor, Tensor]:
    return forward_tensor(params.layout, Tensor(params.values), batch)


def features(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Representation z as a plain array (no graph)."""
    return forward(params, x)[0].data


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[1].data.argmax(axis=1)
