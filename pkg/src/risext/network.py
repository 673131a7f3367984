"""Model assembly: head conv, a stack of blocks, tail conv; parameter
accounting and binary checkpointing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .blocks import BLOCK_KINDS, make_block
from .engine import ConvLayer

CHECKPOINT_MAGIC = b"RISNET01"

ARCHS = tuple(BLOCK_KINDS)


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "rk3"
    channels: int = 128
    blocks: int = 4
    head_kernel: int = 5
    inner_kernel: int = 3
    io_channels: int = 2
    shared_rk3_stages: bool = False

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if self.channels < 1 or self.blocks < 1:
            raise ValueError("channels and blocks must be >= 1")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch, "channels": self.channels, "blocks": self.blocks,
            "head_kernel": self.head_kernel, "inner_kernel": self.inner_kernel,
            "io_channels": self.io_channels,
            "shared_rk3_stages": self.shared_rk3_stages,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            arch=d["arch"], channels=int(d["channels"]), blocks=int(d["blocks"]),
            head_kernel=int(d["head_kernel"]), inner_kernel=int(d["inner_kernel"]),
            io_channels=int(d["io_channels"]),
            shared_rk3_stages=bool(d.get("shared_rk3_stages", False)),
        )


class Model:
    """Head conv (no activation) -> blocks -> tail conv (no activation)."""

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        c = spec.channels
        self.head = ConvLayer(spec.head_kernel, spec.head_kernel,
                              spec.io_channels, c, rng)
        kwargs = {"shared": True} if (spec.arch == "rk3"
                                      and spec.shared_rk3_stages) else {}
        self.blocks = [make_block(spec.arch, c, rng, **kwargs)
                       for _ in range(spec.blocks)]
        self.tail = ConvLayer(spec.inner_kernel, spec.inner_kernel,
                              c, spec.io_channels, rng)

    def forward(self, x):
        x = self.head.forward(x)
        for block in self.blocks:
            x = block.forward(x)
        return self.tail.forward(x)

    def backward(self, grad):
        grad = self.tail.backward(grad)
        for block in reversed(self.blocks):
            grad = block.backward(grad)
        return self.head.backward(grad)

    def params(self):
        out = self.head.params()
        for block in self.blocks:
            out.extend(block.params())
        out.extend(self.tail.params())
        return out

    def conv_layer_count(self) -> int:
        return 2 + sum(b.conv_layers for b in self.blocks)


def build_model(spec: ModelSpec, seed: int) -> Model:
    return Model(spec, seed)


def conv_param_count(spec: ModelSpec) -> int:
    """Closed-form census of convolutional weights and biases."""
    c, io = spec.channels, spec.io_channels
    head = spec.head_kernel ** 2 * io * c + c
    # shared rk3 keeps a single two-conv G' reused by all three stages
    inner_sets = 2 if (spec.arch == "rk3" and spec.shared_rk3_stages) else 6
    per_conv = spec.inner_kernel ** 2 * c * c + c
    inner = spec.blocks * inner_sets * per_conv
    tail = spec.inner_kernel ** 2 * c * io + io
    return head + inner + tail


def multiplier_count(spec: ModelSpec) -> int:
    """Extra learnable scalars beyond the conv census (LF/Euler multipliers)."""
    return spec.blocks * 6 if spec.arch in ("lf", "euler") else 0


def param_count(model: Model) -> int:
    return sum(p.size for p in model.params())


def save_model(path, model: Model) -> None:
    """Checkpoint: magic, length-prefixed JSON manifest, then per-parameter
    value/m/v payloads in params() order, little-endian float64.
    """
    params = model.params()
    manifest = {
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "shapes": [list(p.value.shape) for p in params],
        "steps": [p.step for p in params],
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(4, "little"))
        f.write(blob)
        for p in params:
            for arr in (p.value, p.m, p.v):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as f:
        if f.read(8) != CHECKPOINT_MAGIC:
            raise CheckpointFormatError("bad checkpoint magic")
        length = int.from_bytes(f.read(4), "little")
        blob = f.read(length)
        if len(blob) != length:
            raise CheckpointFormatError("truncated checkpoint manifest")
        manifest = json.loads(blob)
        model = Model(ModelSpec.from_dict(manifest["spec"]), int(manifest["seed"]))
        params = model.params()
        if len(params) != len(manifest["shapes"]):
            raise CheckpointFormatError("parameter count mismatch")
        for p, shape, step in zip(params, manifest["shapes"], manifest["steps"]):
            if list(p.value.shape) != shape:
                raise CheckpointFormatError(
                    f"shape mismatch: {p.value.shape} vs {shape}")
            for name in ("value", "m", "v"):
                raw = f.read(p.size * 8)
                if len(raw) != p.size * 8:
                    raise CheckpointFormatError("truncated parameter payload")
                setattr(p, name,
                        np.frombuffer(raw, dtype="<f8").reshape(p.value.shape).copy())
            p.step = int(step)
    return model
