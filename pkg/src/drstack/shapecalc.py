"""Output-volume arithmetic for convolution / pooling layer chains.

Implements the standard floor-division output-size formulas and a chain
validator used to sanity-check every architecture before any training
happens.  Widths and heights are counted in pixels, depth in channels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .errors import (
    DenseBeforeFlattenError,
    FilterTooLargeError,
    LayerOrderError,
    WindowTooLargeError,
)


@dataclass(frozen=True)
class VolumeShape:
    """Spatial extent (width, height) plus channel depth of a feature volume."""

    width: int
    height: int
    depth: int

    def __post_init__(self):
        if min(self.width, self.height, self.depth) < 1:
            raise ValueError(f"volume dimensions must be >= 1, got {self}")

    @property
    def flat_size(self) -> int:
        return self.width * self.height * self.depth


@dataclass(frozen=True)
class ConvSpec:
    """Convolution geometry: filter extent, filter count, zero padding, stride."""

    filter_size: int
    num_filters: int
    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.filter_size < 1 or self.num_filters < 1 or self.stride < 1:
            raise ValueError(f"filter_size, num_filters and stride must be >= 1, got {self}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self}")


@dataclass(frozen=True)
class PoolSpec:
    """Max-pooling geometry: window extent and stride (no padding)."""

    window: int
    stride: int

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ValueError(f"window and stride must be >= 1, got {self}")


@dataclass(frozen=True)
class Flatten:
    """Marker: collapse a volume into a feature vector."""


@dataclass(frozen=True)
class Dense:
    """Marker: fully connected layer of the given width (needs a flat input)."""

    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"dense width must be >= 1, got {self.width}")


ChainLayer = Union[ConvSpec, PoolSpec, Flatten, Dense]


def conv_output_shape(shape: VolumeShape, spec: ConvSpec) -> VolumeShape:
    """Output volume of a convolution layer.

    width/height shrink to floor((n + 2P - F) / S) + 1, depth becomes the
    filter count.  Raises FilterTooLargeError when the padded input cannot
    hold even one filter placement.
    """
    f, p, s = spec.filter_size, spec.padding, spec.stride
    if shape.width + 2 * p < f or shape.height + 2 * p < f:
        raise FilterTooLargeError(
            f"filter {f} exceeds padded input {shape.width}x{shape.height} (P={p})"
        )
    return VolumeShape(
        width=(shape.width + 2 * p - f) // s + 1,
        height=(shape.height + 2 * p - f) // s + 1,
        depth=spec.num_filters,
    )


def pool_output_shape(shape: VolumeShape, spec: PoolSpec) -> VolumeShape:
    """Output volume of a max-pooling layer: floor((n - F) / S) + 1, depth kept."""
    f, s = spec.window, spec.stride
    if shape.width < f or shape.height < f:
        raise WindowTooLargeError(
            f"pool window {f} exceeds input {shape.width}x{shape.height}"
        )
    return VolumeShape(
        width=(shape.width - f) // s + 1,
        height=(shape.height - f) // s + 1,
        depth=shape.depth,
    )


def same_padding(filter_size: int) -> int:
    """Padding that preserves spatial extent at stride 1 (odd filters only)."""
    if filter_size % 2 == 0:
        raise ValueError(f"same padding needs an odd filter size, got {filter_size}")
    return (filter_size - 1) // 2


def validate_chain(
    input_shape: VolumeShape, layers: list[ChainLayer]
) -> list[VolumeShape | int]:
    """Walk a layer chain and return the shape after every layer.

    Volumes are reported as VolumeShape; once a Flatten is crossed, shapes
    are plain ints (vector widths).  Raises on any geometric impossibility:
    oversized filters/windows, Dense before Flatten, or a spatial layer
    after the volume was flattened.
    """
    if not layers:
        raise ValueError("layer chain must be non-empty")
    shapes: list[VolumeShape | int] = []
    current: VolumeShape | int = input_shape
    for i, layer in enumerate(layers):
        if isinstance(layer, (ConvSpec, PoolSpec, Flatten)):
            if not isinstance(current, VolumeShape):
                raise LayerOrderError(f"layer {i} ({layer}) applied after flatten")
            if isinstance(layer, ConvSpec):
                current = conv_output_shape(current, layer)
            elif isinstance(layer, PoolSpec):
                current = pool_output_shape(current, layer)
            else:
                current = current.flat_size
        elif isinstance(layer, Dense):
            if isinstance(current, VolumeShape):
                raise DenseBeforeFlattenError(
                    f"layer {i}: dense({layer.width}) needs a flattened input, got {current}"
                )
            current = layer.width
        else:
            raise TypeError(f"unsupported chain layer: {layer!r}")
        shapes.append(current)
    return shapes
