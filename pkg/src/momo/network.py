"""Motion / structure / view encoders, the 3D decoder, and the sequence discriminator.

All networks are temporal convolution stacks over ``(batch, channels, time)``
tensors. A 2D sequence of ``N`` joints enters as ``2N`` channels ordered
``x0, y0, x1, y1, ...``; the decoder emits ``3N`` channels ``x0, y0, z0, ...``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    conv1d,
    leaky_relu,
    maxpool_time,
    pad_reflect,
    upsample_nearest,
)
from .autodiff.tensor import getitem, tsum

DOWNSAMPLE = 8


@dataclass(frozen=True)
class ArchConfig:
    n_joints: int = 15
    motion_channels: tuple[int, ...] = (64, 96, 128)
    structure_channels: tuple[int, ...] = (64, 128, 256)
    view_channels: tuple[int, ...] = (16, 16, 8)
    decoder_channels: tuple[int, ...] = (256, 128, 64)
    disc_channels: tuple[int, ...] = (64, 96, 128)
    enc_kernel: int = 8
    enc_padding: int = 3
    dec_kernel: int = 7
    slope: float = 0.2

    def __post_init__(self):
        for name in ("motion_channels", "structure_channels", "view_channels",
                     "decoder_channels", "disc_channels"):
            chans = tuple(int(c) for c in getattr(self, name))
            if len(chans) != 3:
                raise ValueError(f"{name} needs three stages (x8 temporal resampling), got {chans}")
            object.__setattr__(self, name, chans)
        if self.dec_kernel % 2 != 1:
            raise ValueError("dec_kernel must be odd to preserve length")

    @property
    def motion_dim(self) -> int:
        return self.motion_channels[-1]

    @property
    def structure_dim(self) -> int:
        return self.structure_channels[-1]

    @property
    def view_dim(self) -> int:
        return self.view_channels[-1]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class LatentCodes:
    """Codes for a batch: motion ``(B, C_m, M)``, pre-pooling structure/view
    sequences ``(B, C, M)`` and their temporal max ``(B, C)``."""

    motion: Tensor
    structure_seq: Tensor
    structure: Tensor
    view_seq: Tensor
    view: Tensor


def _param_shapes(cfg: ArchConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 2 * cfg.n_joints
    for stack, chans in (("motion", cfg.motion_channels), ("structure", cfg.structure_channels),
                         ("view", cfg.view_channels), ("disc", cfg.disc_channels)):
        prev = c_in
        for i, c in enumerate(chans):
            shapes[f"{stack}.{i}.weight"] = (c, prev, cfg.enc_kernel)
            shapes[f"{stack}.{i}.bias"] = (c,)
            prev = c
    shapes["disc.head.weight"] = (1, cfg.disc_channels[-1], 1)
    shapes["disc.head.bias"] = (1,)
    prev = cfg.motion_dim + cfg.structure_dim + cfg.view_dim
    for i, c in enumerate(cfg.decoder_channels):
        shapes[f"decoder.{i}.weight"] = (c, prev, cfg.dec_kernel)
        shapes[f"decoder.{i}.bias"] = (c,)
        prev = c
    shapes["decoder.out.weight"] = (3 * cfg.n_joints, prev, 1)
    shapes["decoder.out.bias"] = (3 * cfg.n_joints,)
    return shapes


def init_params(cfg: ArchConfig, seed: int = 0) -> dict[str, Tensor]:
    """Kaiming-uniform weights (leaky-ReLU gain, fan-in), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith("bias"):
            data = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2]
            bound = np.sqrt(6.0 / ((1.0 + cfg.slope ** 2) * fan_in))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


@dataclass
class RetargetNet:
    """Parameter container plus the forward passes of every sub-network."""

    config: ArchConfig = field(default_factory=ArchConfig)
    params: dict[str, Tensor] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.params:
            self.params = init_params(self.config, self.seed)
        expected = _param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ValueError(f"parameter set mismatch: missing={missing} unexpected={extra}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name}: shape {self.params[name].shape} != expected {shape}")

    # parameter groups -----------------------------------------------------
    def generator_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if not k.startswith("disc.")}

    def discriminator_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("disc.")}

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # building blocks ----------------------------------------------------------
    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 3 or x.shape[1] != 2 * self.config.n_joints:
            raise ValueError(f"expected (B, {2 * self.config.n_joints}, T) input, got {x.shape}")
        if x.shape[2] % DOWNSAMPLE:
            raise ValueError(f"sequence length {x.shape[2]} is not divisible by {DOWNSAMPLE}")

    def _down_stack(self, stack: str, x: Tensor, n_layers: int, final_activation: bool) -> Tensor:
        cfg = self.config
        h = x
        for i in range(n_layers):
            h = pad_reflect(h, cfg.enc_padding)
            h = conv1d(h, self.params[f"{stack}.{i}.weight"], self.params[f"{stack}.{i}.bias"], stride=2)
            if i < n_layers - 1 or final_activation:
                h = leaky_relu(h, cfg.slope)
        return h

    # public forward passes ----------------------------------------------------
    def encode_motion(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return self._down_stack("motion", x, 3, final_activation=False)

    def encode_structure_seq(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return self._down_stack("structure", x, 3, final_activation=False)

    def encode_view_seq(self, x: Tensor) -> Tensor:
        self._check_input(x)
        return self._down_stack("view", x, 3, final_activation=False)

    def encode(self, x: Tensor) -> LatentCodes:
        s_seq = self.encode_structure_seq(x)
        v_seq = self.encode_view_seq(x)
        return LatentCodes(
            motion=self.encode_motion(x),
            structure_seq=s_seq,
            structure=maxpool_time(s_seq),
            view_seq=v_seq,
            view=maxpool_time(v_seq),
        )

    def decode(self, motion: Tensor, structure: Tensor, view: Tensor) -> Tensor:
        """3D sequence ``(B, 3N, 8M)`` from motion ``(B, C_m, M)`` and pooled codes.

        The pooled codes are conceptually broadcast over time and concatenated with
        the motion channels. Nearest upsampling and reflection padding keep such
        constant channels constant, so their contribution to the first convolution
        is folded into a per-sequence bias (identical result, far fewer FLOPs).
        """
        cfg = self.config
        B, C_m, M = motion.shape
        if C_m != cfg.motion_dim or structure.shape != (B, cfg.structure_dim) or view.shape != (B, cfg.view_dim):
            raise ValueError(
                f"code shapes {motion.shape}, {structure.shape}, {view.shape} do not match "
                f"(B, {cfg.motion_dim}, M), (B, {cfg.structure_dim}), (B, {cfg.view_dim})")
        pad = cfg.dec_kernel // 2
        w0 = self.params["decoder.0.weight"]
        cond = concat([structure, view], axis=1)
        w_motion = getitem(w0, (slice(None), slice(0, C_m)))
        w_cond = tsum(getitem(w0, (slice(None), slice(C_m, None))), axis=2)
        h = conv1d(pad_reflect(upsample_nearest(motion, 2), pad), w_motion, self.params["decoder.0.bias"])
        h = h + (cond @ w_cond.transpose(1, 0)).reshape(B, -1, 1)
        h = leaky_relu(h, cfg.slope)
        for i in (1, 2):
            h = pad_reflect(upsample_nearest(h, 2), pad)
            h = leaky_relu(conv1d(h, self.params[f"decoder.{i}.weight"], self.params[f"decoder.{i}.bias"]),
                           cfg.slope)
        return conv1d(h, self.params["decoder.out.weight"], self.params["decoder.out.bias"])

    def decode_concat(self, motion: Tensor, structure: Tensor, view: Tensor) -> Tensor:
        """Reference decoder that materialises the broadcast-and-concatenate input."""
        cfg = self.config
        B, _, M = motion.shape
        pad = cfg.dec_kernel // 2
        cond = concat([structure, view], axis=1).reshape(B, -1, 1)
        ones = Tensor(np.ones((1, 1, M)))
        h = concat([motion, cond * ones], axis=1)
        for i in range(3):
            h = pad_reflect(upsample_nearest(h, 2), pad)
            h = leaky_relu(conv1d(h, self.params[f"decoder.{i}.weight"], self.params[f"decoder.{i}.bias"]),
                           cfg.slope)
        return conv1d(h, self.params["decoder.out.weight"], self.params["decoder.out.bias"])

    def discriminate(self, x: Tensor) -> Tensor:
        """Unnormalised realism scores ``(B, M)`` (sigmoid applied by the loss)."""
        self._check_input(x)
        h = leaky_relu(self._down_stack("disc", x, 3, final_activation=False), self.config.slope)
        out = conv1d(h, self.params["disc.head.weight"], self.params["disc.head.bias"])
        return out.reshape(out.shape[0], out.shape[2])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}
