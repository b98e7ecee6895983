"""Convolution / pooling output-volume arithmetic and chain validation.

The same floor-division formulas that size real CNN layers, applied to a
few classic geometries, then used to validate (and reject) whole layer
chains before any weights exist.

Usage: python demos/03_layer_shape_arithmetic.py
"""
from drstack import (
    ConvSpec,
    Dense,
    Flatten,
    PoolSpec,
    VolumeShape,
    conv_output_shape,
    pool_output_shape,
    validate_chain,
)
from drstack.errors import DenseBeforeFlattenError, FilterTooLargeError

print("single layers:")
stem = conv_output_shape(VolumeShape(224, 224, 3), ConvSpec(7, 64, padding=3, stride=2))
print(f"  224x224x3 --conv(F=7,K=64,P=3,S=2)--> {stem.width}x{stem.height}x{stem.depth}")
halved = pool_output_shape(stem, PoolSpec(2, 2))
print(f"  {stem.width}x{stem.height}x{stem.depth} --maxpool(2,2)--> "
      f"{halved.width}x{halved.height}x{halved.depth}")

print("\na full chain, one shape per layer:")
chain = [
    ConvSpec(3, 8, padding=1, stride=1),
    PoolSpec(2, 2),
    ConvSpec(3, 16, padding=1, stride=1),
    PoolSpec(2, 2),
    ConvSpec(3, 32, padding=1, stride=1),
    PoolSpec(2, 2),
    Flatten(),
    Dense(256),
    Dense(4),
]
shapes = validate_chain(VolumeShape(64, 64, 3), chain)
current = "64x64x3"
for layer, shape in zip(chain, shapes):
    name = type(layer).__name__
    pretty = f"{shape.width}x{shape.height}x{shape.depth}" if hasattr(shape, "width") else str(shape)
    print(f"  {current:>10s} --{name:<8s}--> {pretty}")
    current = pretty

print("\nimpossible chains are rejected up front:")
try:
    validate_chain(VolumeShape(4, 4, 1), [ConvSpec(9, 2)])
except FilterTooLargeError as err:
    print(f"  FilterTooLargeError: {err}")
try:
    validate_chain(VolumeShape(8, 8, 2), [Dense(10)])
except DenseBeforeFlattenError as err:
    print(f"  DenseBeforeFlattenError: {err}")
