"""Extract the VGG-16 convolutional prefix into an SFW1 weight file.

The exported slice runs through relu3_1: five 3x3 convolutions and two
2x2 max-pools, ending at the 256-channel activation. SFW1 is the weight
format the inpainting tool loads; this module writes those bytes itself
so the file format stays the only contract between the two packages.

Weights come either from a local PyTorch checkpoint (a state dict, or a
dict wrapping one under "state_dict") or from the torchvision model zoo.
All validation happens before the output path is opened, so a rejected
export never leaves a partial file behind.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

SFW1_MAGIC = b"SFW1"
SFW1_VERSION = 1
KIND_CONV = 0
KIND_RELU = 1
KIND_MAXPOOL = 2

# Structural layer plan: (manifest name, index in torchvision's
# vgg16().features, out channels, in channels). Pools carry no weights.
VGG_PREFIX = (
    ("conv1_1", 0, 64, 3),
    ("conv1_2", 2, 64, 64),
    ("pool1", None, None, None),
    ("conv2_1", 5, 128, 64),
    ("conv2_2", 7, 128, 128),
    ("pool2", None, None, None),
    ("conv3_1", 10, 256, 128),
)
TAP_NAME = "relu3_1"
ZOO_SOURCE = "torchvision:vgg16/IMAGENET1K_V1"


class ExportError(Exception):
    """Checkpoint unusable: missing keys, wrong shapes, wrong dtypes."""


class ChecksumError(ExportError):
    """Checkpoint bytes do not match the expected SHA-256."""


@dataclass
class ExportManifest:
    source: str
    layers: list[str]
    sha256: str
    tap: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def sha256_of_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_checkpoint(path, expected_sha256: str | None = None) -> dict:
    """Read a local checkpoint into a {key: float32 ndarray} dict."""
    import torch

    p = Path(path)
    if not p.is_file():
        raise ExportError(f"checkpoint not found: {path}")
    if expected_sha256 is not None:
        actual = sha256_of_file(p)
        if actual != expected_sha256.lower():
            raise ChecksumError(
                f"checkpoint checksum mismatch: expected {expected_sha256}, "
                f"got {actual}")
    try:
        obj = torch.load(p, map_location="cpu", weights_only=True)
    except Exception as e:
        raise ExportError(f"cannot read checkpoint {path}: {e}")
    if isinstance(obj, dict) and "state_dict" in obj:
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        raise ExportError("checkpoint does not contain a state dict")

    state = {}
    for key, val in obj.items():
        if not torch.is_tensor(val):
            continue
        if val.dtype != torch.float32:
            raise ExportError(
                f"{key}: expected float32 weights, got {val.dtype}")
        state[key] = val.detach().cpu().numpy()
    return state


def fetch_pretrained() -> dict:
    """Pull the ImageNet VGG-16 state dict through torchvision's cache."""
    import torch
    from torchvision.models import VGG16_Weights, vgg16

    model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
    return {k: v.detach().cpu().numpy().astype(np.float32, copy=False)
            for k, v in model.state_dict().items()
            if torch.is_tensor(v)}


def build_sfw1_bytes(state: dict) -> bytes:
    """Serialize the prefix; raises ExportError before producing any bytes
    if a required tensor is missing or has the wrong shape."""
    for name, idx, out_c, in_c in VGG_PREFIX:
        if idx is None:
            continue
        for suffix, shape in (("weight", (out_c, in_c, 3, 3)),
                              ("bias", (out_c,))):
            key = f"features.{idx}.{suffix}"
            if key not in state:
                raise ExportError(f"missing weight {key} ({name})")
            got = tuple(state[key].shape)
            if got != shape:
                raise ExportError(
                    f"{key} ({name}): expected shape {shape}, got {got}")

    buf = bytearray()
    buf += SFW1_MAGIC
    n_layers = sum(1 if idx is None else 2 for _, idx, _, _ in VGG_PREFIX)
    buf += struct.pack("<II", SFW1_VERSION, n_layers)
    for name, idx, out_c, in_c in VGG_PREFIX:
        if idx is None:
            buf += struct.pack("<B", KIND_MAXPOOL)
            buf += struct.pack("<II", 2, 2)
            continue
        w = np.ascontiguousarray(state[f"features.{idx}.weight"], dtype="<f4")
        b = np.ascontiguousarray(state[f"features.{idx}.bias"], dtype="<f4")
        buf += struct.pack("<B", KIND_CONV)
        buf += struct.pack("<6I", out_c, in_c, 3, 3, 1, 1)
        buf += w.tobytes()
        buf += b.tobytes()
        buf += struct.pack("<B", KIND_RELU)
    buf += struct.pack("<I", n_layers - 1)  # tap at the final relu
    return bytes(buf)


def export_vgg_prefix(output_path, checkpoint=None,
                      expected_sha256: str | None = None,
                      manifest_path=None) -> ExportManifest:
    """Write the SFW1 file plus its JSON manifest; returns the manifest.

    Without ``checkpoint`` the weights come from the torchvision zoo,
    which may download them on first use.
    """
    if checkpoint is not None:
        state = load_checkpoint(checkpoint, expected_sha256)
        source = f"checkpoint:{Path(checkpoint).name}"
    else:
        state = fetch_pretrained()
        source = ZOO_SOURCE

    payload = build_sfw1_bytes(state)
    out = Path(output_path)
    out.write_bytes(payload)

    manifest = ExportManifest(
        source=source,
        layers=[name for name, _, _, _ in VGG_PREFIX],
        sha256=hashlib.sha256(payload).hexdigest(),
        tap=TAP_NAME,
    )
    mpath = Path(manifest_path) if manifest_path else out.with_suffix(
        out.suffix + ".manifest.json")
    mpath.write_text(manifest.to_json())
    return manifest
