"""Backbone registry: named feature extractors consumed by branch models.

A backbone maps (N, size, size, 3) images to a feature volume.  The
self-contained "tiny-cnn" (three conv/pool blocks, geometry checked against
the shape calculator) trains in minutes on a CPU and is the desk-scale
default.  "densenet121" and "inceptionv3" are registered with their
canonical 224-input output volumes so configurations naming them validate,
but this package ships no pretrained weights: building them raises, with
register_backbone as the extension point for plugging real extractors in.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .errors import BackboneUnavailableError, UnknownBackboneError
from .shapecalc import ConvSpec, PoolSpec, VolumeShape, same_padding, validate_chain


@dataclass(frozen=True)
class BackboneSpec:
    """A registered backbone plus how to use it: pretrained or not, which
    fraction of its parameterized layers stays frozen, and the input size."""

    name: str
    pretrained: bool
    frozen_fraction: float
    input_size: int
    output_shape: VolumeShape

    def __post_init__(self):
        if not (0.0 <= self.frozen_fraction <= 1.0):
            raise ValueError(f"frozen_fraction must be in [0, 1], got {self.frozen_fraction}")


@dataclass(frozen=True)
class _Entry:
    output_shape_fn: Callable[[int], VolumeShape]
    build_fn: Callable[[int, np.random.Generator], list[nn.Layer]] | None
    pretrained_available: bool


_TINY_CHANNELS = (8, 16, 32)


def _tiny_cnn_chain():
    layers = []
    for ch in _TINY_CHANNELS:
        layers.append(ConvSpec(filter_size=3, num_filters=ch, padding=same_padding(3), stride=1))
        layers.append(PoolSpec(window=2, stride=2))
    return layers


def _tiny_cnn_shape(input_size: int) -> VolumeShape:
    shapes = validate_chain(VolumeShape(input_size, input_size, 3), _tiny_cnn_chain())
    return shapes[-1]


def _tiny_cnn_build(input_size: int, rng: np.random.Generator) -> list[nn.Layer]:
    _tiny_cnn_shape(input_size)  # raises early if the geometry cannot work
    layers: list[nn.Layer] = []
    in_ch = 3
    for ch in _TINY_CHANNELS:
        layers.append(nn.Conv2D(in_ch, ch, filter_size=3, stride=1, padding=1, rng=rng))
        layers.append(nn.ReLU())
        layers.append(nn.MaxPool2D(window=2, stride=2))
        in_ch = ch
    return layers


def _fixed_shape(name: str, shape: VolumeShape) -> Callable[[int], VolumeShape]:
    def fn(input_size: int) -> VolumeShape:
        if input_size != 224:
            raise ValueError(f"{name} is registered for 224x224 input, got {input_size}")
        return shape

    return fn


_REGISTRY: dict[str, _Entry] = {
    "tiny-cnn": _Entry(_tiny_cnn_shape, _tiny_cnn_build, pretrained_available=False),
    "densenet121": _Entry(
        _fixed_shape("densenet121", VolumeShape(7, 7, 1024)), None, pretrained_available=True
    ),
    "inceptionv3": _Entry(
        _fixed_shape("inceptionv3", VolumeShape(5, 5, 2048)), None, pretrained_available=True
    ),
}


def register_backbone(
    name: str,
    output_shape_fn: Callable[[int], VolumeShape],
    build_fn: Callable[[int, np.random.Generator], list[nn.Layer]],
    pretrained_available: bool = False,
) -> None:
    """Add (or replace) a backbone.  build_fn(input_size, rng) must return
    the nn layers; output_shape_fn(input_size) their resulting volume."""
    _REGISTRY[name] = _Entry(output_shape_fn, build_fn, pretrained_available)


def registered_backbones() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def backbone_spec(
    name: str,
    pretrained: bool | None = None,
    frozen_fraction: float | None = None,
    input_size: int = 224,
) -> BackboneSpec:
    """Resolve a name into a full spec with the registry's declared shape.

    Defaults: pretrained backbones stay fully frozen (general early features
    are preserved); non-pretrained ones train end to end.
    """
    entry = _lookup(name)
    if pretrained is None:
        pretrained = entry.pretrained_available
    if frozen_fraction is None:
        frozen_fraction = 1.0 if pretrained else 0.0
    return BackboneSpec(
        name=name,
        pretrained=pretrained,
        frozen_fraction=frozen_fraction,
        input_size=input_size,
        output_shape=entry.output_shape_fn(input_size),
    )


def build_backbone_layers(spec: BackboneSpec, rng: np.random.Generator) -> list[nn.Layer]:
    """Materialize the backbone's layers, freezing the first
    floor(frozen_fraction * n_parameterized) of them."""
    entry = _lookup(spec.name)
    if entry.build_fn is None:
        raise BackboneUnavailableError(
            f"backbone '{spec.name}' has no bundled weights; use 'tiny-cnn' for "
            f"self-contained runs or plug an extractor in via register_backbone()"
        )
    layers = entry.build_fn(spec.input_size, rng)
    parameterized = [layer for layer in layers if layer.params]
    n_frozen = int(np.floor(spec.frozen_fraction * len(parameterized) + 1e-9))
    for layer in parameterized[:n_frozen]:
        layer.frozen = True
    return layers


def _lookup(name: str) -> _Entry:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownBackboneError(
            f"unknown backbone '{name}'; registered: {', '.join(registered_backbones())}"
        ) from None
