"""The denoising network: a transformer encoder predicts a primitive clean
motion from (x_t, t, c), then a relation-intervention stage corrects the
object channels from human-centric kinematic relations.

Intervention recomputes the rotation/translation relations of the primitive
prediction, feeds each through its own lightweight transformer encoder, and
adds the predicted residuals back onto the object rotation and translation.
Human channels always pass through unchanged; residual output projections are
zero-initialized so intervention starts as an exact identity.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .encoders import ConditionEmbedding

CHECKPOINT_MAGIC = b"HDCK"
CHECKPOINT_VERSION = 1


@dataclass
class DenoiserConfig:
    joint_count: int = 22
    layers_primary: int = 8
    layers_intervention: int = 2
    hidden: int = 512
    feedforward: int = 1024
    heads: int = 4
    dropout: float = 0.1
    cond_dim: int = 512
    intervention: bool = True
    intervention_hidden: int = 156
    intervention_feedforward: int = 128
    step_emb_per_frame: bool = False   # default: step embedding on the condition token only
    intervention_step_emb: bool = False

    def __post_init__(self):
        if self.hidden % self.heads or self.intervention_hidden % self.heads:
            raise ValueError("hidden sizes must be divisible by head count")
        if min(self.layers_primary, self.hidden, self.feedforward, self.heads) <= 0:
            raise ValueError("architecture sizes must be positive")

    @property
    def frame_width(self) -> int:
        return 6 * self.joint_count + 6


REDUCED_CONFIG_OVERRIDES = dict(hidden=128, feedforward=256,
                                intervention_hidden=64, intervention_feedforward=64)


def sinusoidal_embedding(t: torch.Tensor, dim: int,
                         max_period: float = 10000.0) -> torch.Tensor:
    """Standard sin/cos embedding of (possibly batched) step indices."""
    t = torch.as_tensor(t)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    t = t.reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period)
                      * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def positional_encoding(length: int, dim: int, dtype, device) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype, device=device)
    return sinusoidal_embedding(pos, dim).to(dtype)


def _encoder(hidden, heads, feedforward, dropout, layers):
    layer = nn.TransformerEncoderLayer(
        d_model=hidden, nhead=heads, dim_feedforward=feedforward,
        dropout=dropout, activation="gelu", batch_first=True)
    return nn.TransformerEncoder(layer, num_layers=layers)


class Normalizer(nn.Module):
    """Per-channel affine map between physical motion space and the unit-scale
    space the diffusion chain runs in."""

    def __init__(self, width: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(width))
        self.register_buffer("std", torch.ones(width))

    def fit(self, frames: torch.Tensor, floor: float = 1e-3):
        # frames: [*, F] stacked over every frame of the training set
        flat = frames.reshape(-1, frames.shape[-1])
        self.mean.copy_(flat.mean(dim=0))
        self.std.copy_(flat.std(dim=0).clamp_min(floor))

    def norm(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std

    def denorm(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.std + self.mean


class InterventionEncoder(nn.Module):
    """Maps per-frame relation features [B, N, J*3] to per-frame 3-vector
    residuals through a small transformer; output projection zero-initialized."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        width = config.joint_count * 3
        h = config.intervention_hidden
        self.in_proj = nn.Linear(width, h)
        self.encoder = _encoder(h, config.heads, config.intervention_feedforward,
                                config.dropout, config.layers_intervention)
        self.out_proj = nn.Linear(h, 3)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, relations: torch.Tensor,
                step_emb: torch.Tensor | None = None) -> torch.Tensor:
        tokens = self.in_proj(relations)
        if step_emb is not None:
            tokens = tokens + step_emb[:, None, :]
        tokens = tokens + positional_encoding(
            tokens.shape[1], tokens.shape[2], tokens.dtype, tokens.device)
        return self.out_proj(self.encoder(tokens))


class Denoiser(nn.Module):
    """x0-predicting network G(x_t, t, c) operating on normalized motion."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        F = config.frame_width
        self.normalizer = Normalizer(F)
        self.input_proj = nn.Linear(F, config.hidden)
        self.cond_proj = nn.Linear(config.cond_dim, config.hidden)
        self.step_mlp = nn.Sequential(
            nn.Linear(config.hidden, config.hidden), nn.GELU(),
            nn.Linear(config.hidden, config.hidden))
        self.encoder = _encoder(config.hidden, config.heads, config.feedforward,
                                config.dropout, config.layers_primary)
        self.output_proj = nn.Linear(config.hidden, F)
        if config.intervention:
            self.rotation_encoder = InterventionEncoder(config)
            self.position_encoder = InterventionEncoder(config)
            self._check_intervention_budget()
            if config.intervention_step_emb:
                h = config.intervention_hidden
                self.intervention_step_mlp = nn.Sequential(
                    nn.Linear(h, h), nn.GELU(), nn.Linear(h, h))
        else:
            self.rotation_encoder = None
            self.position_encoder = None

    def _check_intervention_budget(self):
        primary = sum(p.numel() for n, p in self.named_parameters()
                      if not n.startswith(("rotation_encoder", "position_encoder")))
        side = sum(p.numel() for n, p in self.named_parameters()
                   if n.startswith(("rotation_encoder", "position_encoder")))
        if side >= 0.15 * primary:
            raise ValueError(
                f"intervention encoders too large: {side} params vs primary {primary}")

    # -- primitive stage ---------------------------------------------------

    def primitive_denoise(self, x_t: torch.Tensor, t,
                          cond: ConditionEmbedding) -> torch.Tensor:
        """Transformer pass over [condition token | frame tokens]."""
        if x_t.ndim != 3 or x_t.shape[-1] != self.config.frame_width:
            raise ValueError(f"expected [B, N, {self.config.frame_width}], got {tuple(x_t.shape)}")
        B = x_t.shape[0]
        step = sinusoidal_embedding(self._step_tensor(t, B, x_t), self.config.hidden)
        step = self.step_mlp(step.to(x_t.dtype))

        tokens = self.input_proj(x_t)
        cond_tok = self.cond_proj(cond.c.to(x_t.dtype)) + step
        if self.config.step_emb_per_frame:
            tokens = tokens + step[:, None, :]
        seq = torch.cat([cond_tok[:, None, :], tokens], dim=1)
        seq = seq + positional_encoding(seq.shape[1], seq.shape[2], seq.dtype, seq.device)
        out = self.encoder(seq)[:, 1:]  # condition-token output discarded
        return self.output_proj(out)

    @staticmethod
    def _step_tensor(t, batch, like):
        if isinstance(t, int):
            return torch.full((batch,), t, dtype=like.dtype, device=like.device)
        return torch.as_tensor(t, dtype=like.dtype, device=like.device)

    # -- intervention stage --------------------------------------------------

    def split_channels(self, x: torch.Tensor):
        """(q, j, r, o) views of a flat motion tensor [B, N, F]."""
        J = self.config.joint_count
        return (x[..., : 3 * J], x[..., 3 * J: 6 * J],
                x[..., 6 * J: 6 * J + 3], x[..., 6 * J + 3:])

    def intervene(self, x0_tilde: torch.Tensor, t=None) -> torch.Tensor:
        """Correct object channels with relation-derived residuals; human
        channels pass through untouched (physical-space tensor in and out)."""
        if self.rotation_encoder is None:
            return x0_tilde
        q, j, r, o = self.split_channels(x0_tilde)
        B, N = x0_tilde.shape[:2]
        J = self.config.joint_count
        gamma = (q.reshape(B, N, J, 3) - r[:, :, None, :]).reshape(B, N, 3 * J)
        tau = (j.reshape(B, N, J, 3) - o[:, :, None, :]).reshape(B, N, 3 * J)
        step_emb = None
        if self.config.intervention_step_emb and t is not None:
            raw = sinusoidal_embedding(self._step_tensor(t, B, x0_tilde),
                                       self.config.intervention_hidden)
            step_emb = self.intervention_step_mlp(raw.to(x0_tilde.dtype))
        delta_r = self.rotation_encoder(gamma, step_emb)
        delta_o = self.position_encoder(tau, step_emb)
        return torch.cat([q, j, r + delta_r, o + delta_o], dim=-1)

    # -- full pass -----------------------------------------------------------

    def denoise_physical(self, z_t: torch.Tensor, t, cond: ConditionEmbedding):
        """(x0_hat, x0_tilde) in physical units, from a normalized z_t."""
        z0_tilde = self.primitive_denoise(z_t, t, cond)
        x0_tilde = self.normalizer.denorm(z0_tilde)
        x0_hat = self.intervene(x0_tilde, t)
        return x0_hat, x0_tilde

    def denoise(self, z_t: torch.Tensor, t, cond: ConditionEmbedding) -> torch.Tensor:
        """Normalized-space x0 prediction (the G used by guidance/sampling)."""
        if self.rotation_encoder is None:
            return self.primitive_denoise(z_t, t, cond)
        x0_hat, _ = self.denoise_physical(z_t, t, cond)
        return self.normalizer.norm(x0_hat)

    forward = denoise


# ---------------------------------------------------------------------------
# named-tensor checkpoint archive
# ---------------------------------------------------------------------------

def save_checkpoint(path, tensors: dict, config: dict, extra: dict | None = None):
    """Versioned archive: magic, u32 version, u32 header length, UTF-8 JSON
    header (config echo + tensor table), then little-endian f32 payloads."""
    entries = []
    payloads = []
    offset = 0
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) \
            else np.asarray(value)
        arr = arr.astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += len(payloads[-1])
    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "config": config,
        "extra": extra or {},
        "tensors": entries,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for blob in payloads:
            f.write(blob)


def load_checkpoint(path):
    """-> (tensors: dict[str, np.ndarray], config: dict, extra: dict)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint {path}: magic {magic!r}")
        version, header_len = struct.unpack("<II", f.read(8))
        if version > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version} newer than supported")
        header = json.loads(f.read(header_len).decode("utf-8"))
        payload = f.read()
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()
    return tensors, header["config"], header.get("extra", {})


def save_model(path, model: Denoiser, extra: dict | None = None,
               optimizer_state: dict | None = None):
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer_state:
        tensors.update({f"opt.{k}": v for k, v in optimizer_state.items()})
    save_checkpoint(path, tensors, config=asdict(model.config), extra=extra)


def load_model(path) -> tuple[Denoiser, dict, dict]:
    """-> (model, extra, optimizer tensors)."""
    tensors, config, extra = load_checkpoint(path)
    model = Denoiser(DenoiserConfig(**config))
    state = {k[len("model."):]: torch.from_numpy(v)
             for k, v in tensors.items() if k.startswith("model.")}
    model.load_state_dict(state)
    opt_state = {k[len("opt."):]: v for k, v in tensors.items() if k.startswith("opt.")}
    return model, extra, opt_state
