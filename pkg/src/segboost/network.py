"""Shared U-Net backbone, checkpointing, and weight transfer.

One architecture serves denoising, 3-class segmentation and the
star-convex head; only the final 1x1 convolution differs. Checkpoints
are single .npz archives of named tensors plus a JSON metadata manifest,
with keys partitioned into body (encoder/decoder) and head (final conv).
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

HEADS = ("denoise", "joint", "star")

# joint head: channels 0..2 are class logits (bg, fg, border), channel 3
# regresses denoised intensities. star head: channels 0..n_rays-1 are
# rectified radial distances, the last channel is the object-probability
# logit.
JOINT_CLASS_CHANNELS = slice(0, 3)
JOINT_REGRESSION_CHANNEL = 3

HEAD_PREFIX = "head_conv."


@dataclass
class NetworkSpec:
    """Architecture configuration for the shared U-Net."""

    depth: int = 2
    base_features: int = 32
    head: str = "joint"
    n_rays: int = 32
    batch_norm: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_features < 1:
            raise ValueError(f"base_features must be >= 1, got {self.base_features}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")

    @property
    def out_channels(self) -> int:
        if self.head == "denoise":
            return 1
        if self.head == "joint":
            return 4
        return self.n_rays + 1


@dataclass
class WeightSnapshot:
    """Named parameter/buffer tensors plus provenance metadata."""

    tensors: dict
    meta: dict = field(default_factory=dict)

    def body_keys(self):
        return [k for k in self.tensors if not k.startswith(HEAD_PREFIX)]

    def head_keys(self):
        return [k for k in self.tensors if k.startswith(HEAD_PREFIX)]

    @property
    def spec(self) -> NetworkSpec:
        return NetworkSpec(**self.meta["spec"])

    def save(self, path):
        payload = {k: v for k, v in self.tensors.items()}
        payload["__meta__"] = np.frombuffer(
            json.dumps(self.meta).encode(), dtype=np.uint8
        )
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path) -> "WeightSnapshot":
        try:
            with np.load(path) as data:
                tensors = {k: data[k] for k in data.files if k != "__meta__"}
                meta = json.loads(data["__meta__"].tobytes().decode())
        except Exception as exc:
            raise IOError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls(tensors=tensors, meta=meta)


class _ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch, batch_norm=True):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm1 = nn.BatchNorm2d(out_ch) if batch_norm else nn.Identity()
        self.norm2 = nn.BatchNorm2d(out_ch) if batch_norm else nn.Identity()

    def forward(self, x):
        x = F.relu(self.norm1(self.conv1(x)))
        return F.relu(self.norm2(self.conv2(x)))


class UNet(nn.Module):
    """U-Net with same-padding convs; output spatial shape equals input.

    Star-head distance channels pass through a rectifier inside forward;
    class/probability channels stay as logits (softmax/sigmoid are
    applied at inference).
    """

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        feats = [spec.base_features * 2 ** d for d in range(spec.depth + 1)]
        self.encoders = nn.ModuleList()
        in_ch = 1
        for f in feats[:-1]:
            self.encoders.append(_ConvBlock(in_ch, f, spec.batch_norm))
            in_ch = f
        self.bottom = _ConvBlock(feats[-2], feats[-1], spec.batch_norm)
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for f in reversed(feats[:-1]):
            self.upsamplers.append(nn.ConvTranspose2d(f * 2, f, 2, stride=2))
            self.decoders.append(_ConvBlock(f * 2, f, spec.batch_norm))
        self.head_conv = nn.Conv2d(feats[0], spec.out_channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        factor = 2 ** self.spec.depth
        if h < factor or w < factor:
            raise ValueError(
                f"input {h}x{w} smaller than 2^depth={factor}; pad first"
            )
        if h % factor or w % factor:
            raise ValueError(
                f"input {h}x{w} not divisible by 2^depth={factor}; pad first"
            )
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottom(x)
        for up, dec, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        out = self.head_conv(x)
        if self.spec.head == "star":
            dist = F.relu(out[:, :self.spec.n_rays])
            out = torch.cat([dist, out[:, self.spec.n_rays:]], dim=1)
        return out


def build_unet(spec: NetworkSpec, seed: int) -> UNet:
    """Construct a U-Net with deterministic, seed-controlled initialization."""
    torch.manual_seed(seed)
    return UNet(spec)


def snapshot(model: UNet, **meta) -> WeightSnapshot:
    """Capture all parameters and buffers of a model as numpy arrays."""
    tensors = {
        k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()
    }
    full_meta = {"spec": asdict(model.spec)}
    full_meta.update(meta)
    return WeightSnapshot(tensors=tensors, meta=full_meta)


def restore(snap: WeightSnapshot) -> UNet:
    """Rebuild a model from a snapshot; exact parameter round trip."""
    model = UNet(snap.spec)
    state = {k: torch.from_numpy(np.array(v)) for k, v in snap.tensors.items()}
    model.load_state_dict(state)
    return model


def _head_channel_map(src_spec: NetworkSpec, dst_spec: NetworkSpec):
    """Mapping of compatible head output channels, src -> dst."""
    if src_spec.head == dst_spec.head and src_spec.out_channels == dst_spec.out_channels:
        return list(zip(range(src_spec.out_channels), range(src_spec.out_channels)))
    if src_spec.head == "denoise" and dst_spec.head == "joint":
        return [(0, JOINT_REGRESSION_CHANNEL)]
    if src_spec.head == "joint" and dst_spec.head == "denoise":
        return [(JOINT_REGRESSION_CHANNEL, 0)]
    return []


def transfer_weights(src: WeightSnapshot, dst: UNet,
                     policy: str = "body_only") -> UNet:
    """Copy weights from a snapshot into a model.

    Body tensors are copied exactly and must match in shape. With policy
    'body_and_compatible_head', head channels are additionally copied
    where a semantic mapping exists (the denoising regression channel
    maps onto the joint head's regression channel); remaining head
    channels keep their fresh initialization.
    """
    if policy not in ("body_only", "body_and_compatible_head"):
        raise ValueError(f"unknown transfer policy {policy!r}")
    state = dst.state_dict()
    src_body = set(src.body_keys())
    dst_body = {k for k in state if not k.startswith(HEAD_PREFIX)}
    for key in sorted(dst_body | src_body):
        if key not in src_body or key not in dst_body:
            raise ValueError(f"body layer {key} missing on one side of the transfer")
        if tuple(src.tensors[key].shape) != tuple(state[key].shape):
            raise ValueError(
                f"body layer {key} shape mismatch: "
                f"{tuple(src.tensors[key].shape)} vs {tuple(state[key].shape)}"
            )
    for key in sorted(src_body):
        state[key] = torch.from_numpy(np.array(src.tensors[key]))
    if policy == "body_and_compatible_head":
        src_spec = src.spec
        for s_ch, d_ch in _head_channel_map(src_spec, dst.spec):
            for suffix in ("weight", "bias"):
                key = HEAD_PREFIX + suffix
                if key in src.tensors and key in state:
                    t = state[key].clone()
                    t[d_ch] = torch.from_numpy(np.array(src.tensors[key][s_ch]))
                    state[key] = t
    dst.load_state_dict(state)
    return dst


def pad_to_factor(image: np.ndarray, depth: int):
    """Reflect-pad a 2-D image so both dims divide 2^depth.

    Returns the padded image and the original (h, w) for cropping back.
    """
    h, w = image.shape
    factor = 2 ** depth
    pad_h = (factor - h % factor) % factor
    pad_w = (factor - w % factor) % factor
    if pad_h or pad_w:
        # reflect needs pad < dim; fall back to edge for tiny inputs
        mode = "reflect" if pad_h < h and pad_w < w else "edge"
        image = np.pad(image, ((0, pad_h), (0, pad_w)), mode=mode)
    return image, (h, w)
