"""Conditional diffusion transformer for motion generation.

A DDPM over motion sequences (expression + pose channels) denoised by a
transformer whose blocks run self-attention, dual cross-attention (per-frame
audio tokens and a single style token), spatial-temporal hierarchical
modulation of the two attention outputs, and a feed-forward stage, all with
residual connections.

Regions are realized as channel groups of the hidden state: the first half of
``d_model`` carries the upper-face expression dims, the second half the
lower-face dims plus pose, enforced by split input/output projections. The
modulation computes, per region and denoising timestep, cosine projections of
the audio- and style-conditioned feature maps onto their sum, turns their gap
into a dominance factor D = sigmoid(P_a - P_s), and rescales the two streams
piecewise: upper region Z_s / D + Z_a, lower region Z_a * D + Z_s.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import save_checkpoint, load_checkpoint, config_hash
from .corpus import CorpusManifest, PseudoAudioFeatures
from .motion import MotionSequence
from .nets import TrainingError, seed_everything, state_to_numpy, load_state_from_numpy, timestep_embedding
from .style import StyleCheckpoint, embed_style

__all__ = [
    "NoiseSchedule",
    "linear_schedule",
    "ConditionBundle",
    "ModulationTelemetry",
    "DiffusionConfig",
    "DiffusionCheckpoint",
    "forward_diffuse",
    "denoising_loss",
    "region_projection_scores",
    "dominance",
    "modulate",
    "train_diffusion",
    "sample_motion",
    "save_diffusion",
    "load_diffusion",
]


# ---------------------------------------------------------------------------
# Noise schedule and the forward process


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta schedule with cached alphas and cumulative alpha-bar products."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty 1-D array")
        if not ((betas > 0).all() and (betas < 1).all()):
            raise ValueError("betas must lie strictly in (0, 1)")
        if (np.diff(betas) < 0).any():
            raise ValueError("betas must be non-decreasing")
        object.__setattr__(self, "betas", betas)

    @property
    def T_steps(self) -> int:
        return int(self.betas.size)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)


def linear_schedule(T_steps: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    return NoiseSchedule(np.linspace(beta_start, beta_end, T_steps))


def forward_diffuse(
    x0: torch.Tensor | np.ndarray,
    t: int,
    noise: torch.Tensor | np.ndarray,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Closed-form forward marginal x_t = sqrt(abar_t) x_0 + sqrt(1-abar_t) eps."""
    if not 1 <= t <= schedule.T_steps:
        raise ValueError(f"timestep {t} out of range [1, {schedule.T_steps}]")
    x0 = torch.as_tensor(x0)
    noise = torch.as_tensor(noise)
    if x0.shape != noise.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != noise shape {tuple(noise.shape)}")
    ab = float(schedule.alpha_bars[t - 1])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


# ---------------------------------------------------------------------------
# Conditions and telemetry


@dataclass
class ConditionBundle:
    """Audio tokens (B, T, d_model) and a style token (B, 1, d_model).

    ``pos_offset`` optionally holds the absolute clip position (B,) of each
    sequence's first frame, so crops keep clip-aligned positional rows.
    """

    audio_tokens: torch.Tensor
    style_token: torch.Tensor
    pos_offset: torch.Tensor | None = None
    audio_null: bool = False
    style_null: bool = False

    def __post_init__(self):
        if self.audio_tokens.ndim != 3 or self.style_token.ndim != 3:
            raise ValueError("conditions must be (B, T, d) tensors")
        if self.style_token.shape[1] != 1:
            raise ValueError("style condition must be a single token")
        if self.audio_tokens.shape[0] != self.style_token.shape[0]:
            raise ValueError("condition batch sizes differ")


@dataclass
class ModulationRecord:
    block: int
    timestep: int
    region: str
    P_a: float
    P_s: float
    D: float
    zero_norm: bool = False


@dataclass
class ModulationTelemetry:
    """Flat record stream of per-block/timestep/region modulation scalars."""

    records: list[ModulationRecord] = field(default_factory=list)

    def add(self, rec: ModulationRecord) -> None:
        self.records.append(rec)

    def d_values(self, region: str | None = None) -> np.ndarray:
        return np.array(
            [r.D for r in self.records if region is None or r.region == region]
        )

    def mean_dominance(self) -> dict[str, float]:
        return {
            region: float(self.d_values(region).mean()) if len(self.d_values(region)) else float("nan")
            for region in ("upper", "lower")
        }

    def to_json_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "mean_dominance": self.mean_dominance(),
        }


# ---------------------------------------------------------------------------
# Modulation primitives


def _region_slices(d_model: int) -> dict[str, slice]:
    half = d_model // 2
    return {"upper": slice(0, half), "lower": slice(half, d_model)}


def region_projection_scores(
    Z_a: torch.Tensor, Z_s: torch.Tensor
) -> dict[str, tuple[torch.Tensor, torch.Tensor, bool]]:
    """Per-region cosine projections of each stream onto the combined map.

    ``Z_a``/``Z_s`` are (T, d) or (B, T, d). The combined map is Z = Z_a + Z_s;
    for each channel-half region the flattened region slice of each stream is
    projected onto the flattened slice of Z. A zero-norm flatten yields a
    score of exactly 0 together with a telemetry flag.

    Returns {region: (P_a, P_s, zero_flag)} with P tensors of shape (B,) (or
    scalars for unbatched input).
    """
    if Z_a.shape != Z_s.shape:
        raise ValueError("Z_a and Z_s must share a shape")
    squeeze = Z_a.ndim == 2
    if squeeze:
        Z_a, Z_s = Z_a[None], Z_s[None]
    Z = Z_a + Z_s
    out = {}
    for region, sl in _region_slices(Z_a.shape[-1]).items():
        flat_a = Z_a[..., sl].flatten(start_dim=1)
        flat_s = Z_s[..., sl].flatten(start_dim=1)
        flat_z = Z[..., sl].flatten(start_dim=1)
        with torch.no_grad():
            zero = bool(
                min(float(f.norm(dim=1).min()) for f in (flat_a, flat_s, flat_z)) == 0.0
            )

        def _cos(u, w):
            nu, nw = u.norm(dim=1), w.norm(dim=1)
            raw = (u * w).sum(dim=1) / (nu * nw).clamp(min=1e-30)
            return torch.where((nu == 0) | (nw == 0), torch.zeros_like(raw), raw)

        P_a, P_s = _cos(flat_a, flat_z), _cos(flat_s, flat_z)
        if squeeze:
            P_a, P_s = P_a[0], P_s[0]
        out[region] = (P_a, P_s, zero)
    return out


def dominance(P_a: torch.Tensor | float, P_s: torch.Tensor | float) -> torch.Tensor:
    """Relative audio-over-style dominance D = sigmoid(P_a - P_s)."""
    diff = torch.as_tensor(P_a) - torch.as_tensor(P_s)
    if not diff.dtype.is_floating_point:
        diff = diff.float()
    return torch.sigmoid(diff)


def modulate(
    Z_a: torch.Tensor,
    Z_s: torch.Tensor,
    D_u: torch.Tensor | float,
    D_l: torch.Tensor | float,
) -> torch.Tensor:
    """Piecewise region rescaling: upper Z_s/D_u + Z_a, lower Z_a*D_l + Z_s.

    ``D_u``/``D_l`` are scalars or (B,) tensors matching a leading batch dim.
    """
    if Z_a.shape != Z_s.shape:
        raise ValueError("Z_a and Z_s must share a shape")
    D_u = torch.as_tensor(D_u, dtype=Z_a.dtype)
    D_l = torch.as_tensor(D_l, dtype=Z_a.dtype)
    if (D_u <= 0).any() or (D_l <= 0).any():
        raise ValueError("dominance factors must be positive")
    while D_u.ndim < Z_a.ndim:
        D_u, D_l = D_u.unsqueeze(-1), D_l.unsqueeze(-1)
    slices = _region_slices(Z_a.shape[-1])
    out = torch.empty_like(Z_a)
    su, sl_ = slices["upper"], slices["lower"]
    out[..., su] = Z_s[..., su] / D_u + Z_a[..., su]
    out[..., sl_] = Z_a[..., sl_] * D_l + Z_s[..., sl_]
    return out


# ---------------------------------------------------------------------------
# Model


class DualCrossAttention(nn.Module):
    """Two cross-attention passes sharing the query stream."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.audio_attn = nn.MultiheadAttention(d_model, heads, batch_first=True)
        self.style_attn = nn.MultiheadAttention(d_model, heads, batch_first=True)

    def forward(self, hidden: torch.Tensor, conditions: ConditionBundle) -> tuple[torch.Tensor, torch.Tensor]:
        if conditions.audio_tokens.shape[1] != hidden.shape[1]:
            raise ValueError(
                f"audio token count {conditions.audio_tokens.shape[1]} does not match "
                f"sequence length {hidden.shape[1]}"
            )
        Z_a, _ = self.audio_attn(hidden, conditions.audio_tokens, conditions.audio_tokens)
        Z_s, _ = self.style_attn(hidden, conditions.style_token, conditions.style_token)
        return Z_a, Z_s


class DiTBlock(nn.Module):
    """Self-attention -> dual cross-attention -> modulation -> feed-forward."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.self_attn = nn.MultiheadAttention(d_model, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.cross = DualCrossAttention(d_model, heads)
        self.norm3 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, 2 * d_model), nn.GELU(), nn.Linear(2 * d_model, d_model)
        )

    def forward(
        self,
        h: torch.Tensor,
        conditions: ConditionBundle,
        timestep: int,
        block_index: int,
        use_hscales: bool,
        telemetry: ModulationTelemetry | None,
    ) -> torch.Tensor:
        q = self.norm1(h)
        attn, _ = self.self_attn(q, q, q)
        h = h + attn
        Z_a, Z_s = self.cross(self.norm2(h), conditions)
        if use_hscales:
            scores = region_projection_scores(Z_a, Z_s)
            P_au, P_su, flag_u = scores["upper"]
            P_al, P_sl, flag_l = scores["lower"]
            D_u = dominance(P_au, P_su)
            D_l = dominance(P_al, P_sl)
            if telemetry is not None:
                for region, (P_a, P_s, flag, D) in {
                    "upper": (P_au, P_su, flag_u, D_u),
                    "lower": (P_al, P_sl, flag_l, D_l),
                }.items():
                    telemetry.add(
                        ModulationRecord(
                            block=block_index,
                            timestep=timestep,
                            region=region,
                            P_a=float(torch.as_tensor(P_a).mean()),
                            P_s=float(torch.as_tensor(P_s).mean()),
                            D=float(torch.as_tensor(D).mean()),
                            zero_norm=flag,
                        )
                    )
            fused = modulate(Z_a, Z_s, D_u, D_l)
        else:
            fused = Z_a + Z_s
        h = h + fused
        h = h + self.ff(self.norm3(h))
        return h


class DiTModel(nn.Module):
    """Noise predictor over motion channels with region-split projections.

    ``upper_dims`` index the motion channels assigned to the upper-face
    region (first half of d_model); all remaining channels (lower face and
    pose) map to the lower region (second half).
    """

    def __init__(
        self,
        motion_dim: int,
        audio_dim: int,
        style_dim: int,
        upper_dims: tuple[int, ...],
        config: "DiffusionConfig",
    ):
        super().__init__()
        d = config.d_model
        if d % 2:
            raise ValueError("d_model must be even to split region channels")
        self.motion_dim = motion_dim
        self.upper_dims = tuple(upper_dims)
        self.lower_dims = tuple(i for i in range(motion_dim) if i not in self.upper_dims)
        half = d // 2
        self.in_upper = nn.Linear(len(self.upper_dims), half)
        self.in_lower = nn.Linear(len(self.lower_dims), half)
        self.audio_proj = nn.Linear(audio_dim, d)
        self.style_proj = nn.Linear(style_dim, d)
        self.time_mlp = nn.Sequential(nn.Linear(d, 2 * d), nn.GELU(), nn.Linear(2 * d, d))
        # Sinusoidal init at full scale: position must be legible to the
        # cross-attention against O(1) noisy queries from step zero.
        self.pos = nn.Parameter(timestep_embedding(torch.arange(config.max_len), d))
        self.blocks = nn.ModuleList(DiTBlock(d, config.heads) for _ in range(config.blocks))
        self.final_norm = nn.LayerNorm(d)
        self.out_upper = nn.Linear(half, len(self.upper_dims))
        self.out_lower = nn.Linear(half, len(self.lower_dims))

    def position_rows(self, T: int, pos_offset: torch.Tensor | None) -> torch.Tensor:
        """Positional rows for a length-T window starting at ``pos_offset``.

        Positions are absolute within the source clip, not window-relative:
        slow periodic structure (the upper-face style oscillations) is only
        predictable when a crop knows where in the clip it sits.
        """
        if pos_offset is None:
            return self.pos[:T][None]
        idx = pos_offset[:, None] + torch.arange(T)
        return self.pos[idx]

    def conditions(
        self,
        audio_feats: torch.Tensor,
        style_vec: torch.Tensor,
        pos_offset: torch.Tensor | None = None,
    ) -> ConditionBundle:
        """Project raw per-frame audio features and a style embedding.

        Audio tokens share the query positional table so cross-attention can
        align frame t with audio frame t. The style embedding is L2-normalized
        before projection: the style encoder's output scale is not controlled
        by its losses, and an unbounded token destabilizes the denoiser.
        """
        style_vec = F.normalize(style_vec, dim=-1, eps=1e-12)
        return ConditionBundle(
            audio_tokens=self.audio_proj(audio_feats)
            + self.position_rows(audio_feats.shape[1], pos_offset),
            style_token=self.style_proj(style_vec)[:, None, :],
            pos_offset=pos_offset,
        )

    def forward(
        self,
        x_t: torch.Tensor,
        conditions: ConditionBundle,
        t: int,
        use_hscales: bool = True,
        telemetry: ModulationTelemetry | None = None,
    ) -> torch.Tensor:
        # x_t: (B, T, motion_dim)
        h = torch.cat(
            [self.in_upper(x_t[..., list(self.upper_dims)]), self.in_lower(x_t[..., list(self.lower_dims)])],
            dim=-1,
        )
        temb = self.time_mlp(timestep_embedding(torch.full((x_t.shape[0],), t), h.shape[-1]))
        # Style enters globally (added to every frame, like the timestep
        # embedding) in addition to the per-block cross-attention stream:
        # a single cross-attended token is too weak a signal for the
        # denoiser to carry speaker-wide amplitude and phase structure.
        style = conditions.style_token[:, 0, :]
        h = h + self.position_rows(h.shape[1], conditions.pos_offset) + (temb + style)[:, None, :]
        for i, block in enumerate(self.blocks):
            h = block(h, conditions, t, i, use_hscales, telemetry)
        h = self.final_norm(h)
        half = h.shape[-1] // 2
        eps = torch.empty_like(x_t)
        eps[..., list(self.upper_dims)] = self.out_upper(h[..., :half])
        eps[..., list(self.lower_dims)] = self.out_lower(h[..., half:])
        return eps


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class DiffusionConfig:
    d_model: int = 64
    blocks: int = 4
    heads: int = 4
    T_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    steps: int = 1500
    batch_size: int = 16
    crop_len: int = 48
    lr: float = 4e-4
    use_hscales: bool = True
    max_len: int = 512
    eval_every: int = 250
    seed: int = 0

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T_steps, self.beta_start, self.beta_end)


@dataclass
class DiffusionCheckpoint:
    model: DiTModel
    config: DiffusionConfig
    motion_dim: int
    audio_dim: int
    style_dim: int
    upper_dims: tuple[int, ...]
    channel_mean: np.ndarray
    channel_std: np.ndarray
    corpus_fingerprint: str
    val_losses: list[float] = field(default_factory=list)
    telemetry: ModulationTelemetry = field(default_factory=ModulationTelemetry)

    @property
    def schedule(self) -> NoiseSchedule:
        return self.config.schedule()


def denoising_loss(
    model,
    x0: torch.Tensor,
    conditions: ConditionBundle,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    t: int | None = None,
    noise: torch.Tensor | None = None,
    use_hscales: bool = True,
    telemetry: ModulationTelemetry | None = None,
) -> torch.Tensor:
    """Eq-of-motion DDPM objective: MSE between sampled and predicted noise."""
    if x0.ndim != 3:
        raise ValueError("x0 must be (B, T, C)")
    if t is None:
        t = int(rng.integers(1, schedule.T_steps + 1))
    if noise is None:
        noise = torch.as_tensor(
            rng.standard_normal(tuple(x0.shape)).astype(np.float32)
        )
    if noise.shape != x0.shape:
        raise ValueError("noise shape must match x0")
    x_t = forward_diffuse(x0, t, noise, schedule)
    pred = model(x_t, conditions, t, use_hscales=use_hscales, telemetry=telemetry)
    if pred.shape != noise.shape:
        raise ValueError("model output shape must match the noise shape")
    return F.mse_loss(pred, noise)


def _motion_matrix(seq: MotionSequence) -> np.ndarray:
    return np.concatenate([seq.expression, seq.pose], axis=1).astype(np.float32)


def _training_arrays(manifest: CorpusManifest, split: str):
    motions, audios, exprs, speakers = [], [], [], []
    for entry in manifest.by_split(split):
        seq = manifest.sequence(entry)
        motions.append(_motion_matrix(seq))
        audios.append(manifest.audio(entry).features.astype(np.float32))
        exprs.append(seq.expression.astype(np.float32))
        speakers.append(entry.speaker_id)
    return motions, audios, exprs, speakers


def train_diffusion(
    manifest: CorpusManifest,
    style_ckpt: StyleCheckpoint,
    config: DiffusionConfig = DiffusionConfig(),
) -> DiffusionCheckpoint:
    """Train the conditional DiT noise predictor on the corpus train split.

    The style encoder is frozen: style tokens come from ``embed_style`` under
    ``no_grad``; only the projection from style space to d_model is trained.
    """
    motions, audios, exprs, speakers = _training_arrays(manifest, "train")
    if not motions:
        raise ValueError("corpus train split is empty")
    schedule = config.schedule()
    rng = seed_everything(config.seed)

    stacked = np.concatenate(motions)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0) + 1e-6
    motions = [(m - mean) / std for m in motions]

    upper_dims = tuple(manifest.config.upper_indices)
    model = DiTModel(
        motion_dim=motions[0].shape[1],
        audio_dim=audios[0].shape[1],
        style_dim=style_ckpt.config.style_dim,
        upper_dims=upper_dims,
        config=config,
    )
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    style_cache = [embed_style(e, style_ckpt) for e in exprs]
    vmotions, vaudios, vexprs, _ = _training_arrays(manifest, "val")
    vmotions = [(m - mean) / std for m in vmotions]
    vstyles = [embed_style(e, style_ckpt) for e in vexprs]

    def batch(rng, motions, audios, styles, size):
        idx = rng.integers(len(motions), size=size)
        T = config.crop_len
        xs, aus, sts, offs = [], [], [], []
        for i in idx:
            s = int(rng.integers(max(motions[i].shape[0] - T, 0) + 1))
            xs.append(motions[i][s : s + T])
            aus.append(audios[i][s : s + T])
            sts.append(styles[i])
            offs.append(s)
        return (
            torch.as_tensor(np.stack(xs)),
            torch.as_tensor(np.stack(aus)),
            torch.as_tensor(np.stack(sts)),
            torch.as_tensor(np.array(offs, dtype=np.int64)),
        )

    def val_loss(telemetry=None):
        vrng = np.random.default_rng(9999)
        model.eval()
        losses = []
        with torch.no_grad():
            for _ in range(8):
                x0, au, st, offs = batch(
                    vrng, vmotions, vaudios, vstyles, config.batch_size
                )
                cond = model.conditions(au, st, pos_offset=offs)
                losses.append(
                    float(
                        denoising_loss(
                            model, x0, cond, schedule, vrng,
                            use_hscales=config.use_hscales, telemetry=telemetry,
                        )
                    )
                )
        model.train()
        return float(np.mean(losses))

    val_losses = [val_loss()]
    last_good = copy.deepcopy(model.state_dict())
    for step in range(config.steps):
        x0, au, st, offs = batch(rng, motions, audios, style_cache, config.batch_size)
        cond = model.conditions(au, st, pos_offset=offs)
        loss = denoising_loss(model, x0, cond, schedule, rng, use_hscales=config.use_hscales)
        if not torch.isfinite(loss):
            model.load_state_dict(last_good)
            raise TrainingError(
                f"diffusion training diverged at step {step}", last_good_state=last_good
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        last_good = copy.deepcopy(model.state_dict())
        if (step + 1) % config.eval_every == 0:
            val_losses.append(val_loss())

    telemetry = ModulationTelemetry()
    final_val = val_loss(telemetry=telemetry if config.use_hscales else None)
    if val_losses[-1] != final_val:
        val_losses.append(final_val)
    model.eval()
    return DiffusionCheckpoint(
        model=model,
        config=config,
        motion_dim=motions[0].shape[1],
        audio_dim=audios[0].shape[1],
        style_dim=style_ckpt.config.style_dim,
        upper_dims=upper_dims,
        channel_mean=mean,
        channel_std=std,
        corpus_fingerprint=config_hash(asdict(manifest.config)),
        val_losses=val_losses,
        telemetry=telemetry,
    )


# ---------------------------------------------------------------------------
# Sampling


def sample_motion(
    audio: PseudoAudioFeatures,
    style_ref: MotionSequence,
    diffusion_ckpt: DiffusionCheckpoint,
    style_ckpt: StyleCheckpoint,
    steps: int | None = None,
    seed: int = 0,
) -> tuple[MotionSequence, ModulationTelemetry]:
    """Ancestral DDPM sampling conditioned on audio and a style reference.

    The full reverse chain is always run; ``steps`` may restate T_steps but
    subsampled (shorter) chains are not supported by this sampler.
    """
    schedule = diffusion_ckpt.schedule
    if steps is None:
        steps = schedule.T_steps
    if steps > schedule.T_steps:
        raise ValueError(f"steps {steps} exceeds schedule length {schedule.T_steps}")
    if steps != schedule.T_steps:
        raise ValueError(
            "subsampled reverse chains are not supported; "
            f"steps must equal T_steps ({schedule.T_steps})"
        )
    T = audio.num_frames
    model = diffusion_ckpt.model
    if T < 1:
        raise ValueError("audio has no frames")
    rng = seed_everything(seed)
    style_vec = torch.as_tensor(embed_style(style_ref, style_ckpt))[None]
    feats = torch.as_tensor(audio.features.astype(np.float32))[None]
    telemetry = ModulationTelemetry()
    with torch.no_grad():
        cond = model.conditions(feats, style_vec)
        x = torch.as_tensor(rng.standard_normal((1, T, diffusion_ckpt.motion_dim)).astype(np.float32))
        betas, alphas, abars = schedule.betas, schedule.alphas, schedule.alpha_bars
        for t in range(schedule.T_steps, 0, -1):
            eps = model(
                x, cond, t,
                use_hscales=diffusion_ckpt.config.use_hscales,
                telemetry=telemetry if diffusion_ckpt.config.use_hscales else None,
            )
            a, ab, b = float(alphas[t - 1]), float(abars[t - 1]), float(betas[t - 1])
            x = (x - b / math.sqrt(1.0 - ab) * eps) / math.sqrt(a)
            if t > 1:
                z = torch.as_tensor(rng.standard_normal(tuple(x.shape)).astype(np.float32))
                x = x + math.sqrt(b) * z
    out = x[0].numpy() * diffusion_ckpt.channel_std + diffusion_ckpt.channel_mean
    n_expr = style_ref.expression.shape[1]
    seq = MotionSequence(
        shape=np.zeros_like(style_ref.shape),
        expression=out[:, :n_expr].astype(np.float64),
        pose=out[:, n_expr:].astype(np.float64),
        fps=style_ref.fps,
    )
    return seq, telemetry


# ---------------------------------------------------------------------------
# Serialization


def save_diffusion(ckpt: DiffusionCheckpoint, directory: str | Path) -> None:
    tensors = state_to_numpy(ckpt.model)
    tensors["channel_mean"] = ckpt.channel_mean.astype(np.float32)
    tensors["channel_std"] = ckpt.channel_std.astype(np.float32)
    save_checkpoint(
        directory,
        tensors,
        config={
            **asdict(ckpt.config),
            "motion_dim": ckpt.motion_dim,
            "audio_dim": ckpt.audio_dim,
            "style_dim": ckpt.style_dim,
            "upper_dims": list(ckpt.upper_dims),
            "kind": "diffusion",
        },
        extra={
            "corpus_fingerprint": ckpt.corpus_fingerprint,
            "val_losses": ckpt.val_losses,
            "telemetry": ckpt.telemetry.to_json_dict(),
        },
    )


def load_diffusion(directory: str | Path) -> DiffusionCheckpoint:
    tensors, config, extra = load_checkpoint(directory)
    mean = tensors.pop("channel_mean").astype(np.float64)
    std = tensors.pop("channel_std").astype(np.float64)
    motion_dim = config.pop("motion_dim")
    audio_dim = config.pop("audio_dim")
    style_dim = config.pop("style_dim")
    upper_dims = tuple(config.pop("upper_dims"))
    config.pop("kind", None)
    cfg = DiffusionConfig(**config)
    model = DiTModel(motion_dim, audio_dim, style_dim, upper_dims, cfg)
    load_state_from_numpy(model, tensors)
    model.eval()
    telemetry = ModulationTelemetry(
        records=[ModulationRecord(**r) for r in extra.get("telemetry", {}).get("records", [])]
    )
    return DiffusionCheckpoint(
        model=model,
        config=cfg,
        motion_dim=motion_dim,
        audio_dim=audio_dim,
        style_dim=style_dim,
        upper_dims=upper_dims,
        channel_mean=mean,
        channel_std=std,
        corpus_fingerprint=extra.get("corpus_fingerprint", ""),
        val_losses=list(extra.get("val_losses", [])),
        telemetry=telemetry,
    )
