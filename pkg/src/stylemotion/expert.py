"""Audio-semantic motion expert.

Two small temporal-convolution towers (audio features, lower-face motion) are
trained contrastively on time-aligned window pairs, with temporally offset and
cross-sequence windows as negatives, using binary cross-entropy on the cosine
similarity. The trained audio tower supplies semantic target embeddings for
the visual semantic encoder, and the pair of towers yields the sync-confidence
proxy score.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import save_checkpoint, load_checkpoint, config_hash
from .corpus import CorpusManifest, PseudoAudioFeatures
from .motion import MotionSequence, RegionPartition
from .nets import TrainingError, seed_everything, state_to_numpy, load_state_from_numpy, window_normalize

__all__ = [
    "ExpertConfig",
    "ExpertCheckpoint",
    "train_expert",
    "embed_audio",
    "embed_motion",
    "sync_confidence",
    "save_expert",
    "load_expert",
]


@dataclass(frozen=True)
class ExpertConfig:
    window: int = 16
    embed_dim: int = 32
    hidden: int = 64
    steps: int = 300
    batch_size: int = 64
    lr: float = 2e-3
    min_offset: int = 5
    cross_sequence_fraction: float = 0.5
    negatives_per_positive: int = 1
    logit_scale: float = 10.0
    seed: int = 0


class _Tower(nn.Module):
    """Temporal conv stack + mean pool + linear head, L2-normalized output."""

    def __init__(self, in_channels: int, hidden: int, embed_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(in_channels, hidden, kernel_size=3, padding=1),
            nn.GELU(),
            nn.Conv1d(hidden, hidden, kernel_size=3, padding=1),
            nn.GELU(),
        )
        self.head = nn.Linear(hidden, embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, C); normalized per window so positive input scaling cancels
        x = window_normalize(x)
        h = self.net(x.transpose(1, 2)).mean(dim=2)
        return F.normalize(self.head(h), dim=-1)


class ExpertModel(nn.Module):
    def __init__(self, audio_dim: int, motion_dim: int, config: ExpertConfig):
        super().__init__()
        self.audio_tower = _Tower(audio_dim, config.hidden, config.embed_dim)
        self.motion_tower = _Tower(motion_dim, config.hidden, config.embed_dim)
        self.logit_scale = nn.Parameter(torch.tensor(config.logit_scale))
        self.logit_bias = nn.Parameter(torch.tensor(0.0))


@dataclass
class ExpertCheckpoint:
    model: ExpertModel
    config: ExpertConfig
    audio_dim: int
    motion_dim: int
    corpus_fingerprint: str
    val_sync_accuracy: float = float("nan")
    final_loss: float = float("nan")


def _clip_arrays(manifest: CorpusManifest, split: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-clip (audio (T,F), lower-face motion (T, n_lo)) float32 arrays."""
    lower = list(manifest.config.lower_indices)
    audios, motions = [], []
    for entry in manifest.by_split(split):
        seq = manifest.sequence(entry)
        audios.append(manifest.audio(entry).features.astype(np.float32))
        motions.append(seq.expression[:, lower].astype(np.float32))
    return audios, motions


def _sample_windows(
    rng: np.random.Generator,
    audios: list[np.ndarray],
    motions: list[np.ndarray],
    n: int,
    window: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    idx = rng.integers(len(audios), size=n)
    starts = np.array([rng.integers(audios[i].shape[0] - window + 1) for i in idx])
    a = np.stack([audios[i][s : s + window] for i, s in zip(idx, starts)])
    m = np.stack([motions[i][s : s + window] for i, s in zip(idx, starts)])
    return a, m, idx, starts


def _sample_negatives(
    rng: np.random.Generator,
    audios: list[np.ndarray],
    motions: list[np.ndarray],
    idx: np.ndarray,
    starts: np.ndarray,
    config: ExpertConfig,
) -> np.ndarray:
    """Motion windows mismatched with the given audio windows."""
    window = config.window
    out = []
    for i, s in zip(idx, starts):
        T = motions[i].shape[0]
        if rng.random() < config.cross_sequence_fraction and len(motions) > 1:
            j = rng.integers(len(motions))
            while j == i:
                j = rng.integers(len(motions))
            s2 = rng.integers(motions[j].shape[0] - window + 1)
            out.append(motions[j][s2 : s2 + window])
        else:
            candidates = [
                s2
                for s2 in range(T - window + 1)
                if abs(s2 - s) >= config.min_offset
            ]
            s2 = candidates[rng.integers(len(candidates))]
            out.append(motions[i][s2 : s2 + window])
    return np.stack(out)


def _pair_cosines(model: ExpertModel, a: np.ndarray, m: np.ndarray) -> torch.Tensor:
    ea = model.audio_tower(torch.as_tensor(a))
    em = model.motion_tower(torch.as_tensor(m))
    return (ea * em).sum(dim=-1)


def train_expert(manifest: CorpusManifest, config: ExpertConfig = ExpertConfig()) -> ExpertCheckpoint:
    """Train the two towers contrastively on the corpus train split."""
    if config.negatives_per_positive < 1:
        raise ValueError("contrastive training needs at least one negative per positive")
    audios, motions = _clip_arrays(manifest, "train")
    if not audios:
        raise ValueError("corpus train split is empty")
    if min(a.shape[0] for a in audios) < config.window + config.min_offset:
        raise ValueError("sequences too short for the configured window and offset")

    rng = seed_everything(config.seed)
    model = ExpertModel(audios[0].shape[1], motions[0].shape[1], config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    bce = nn.BCEWithLogitsLoss()
    last_good = copy.deepcopy(model.state_dict())
    loss_val = float("nan")
    for step in range(config.steps):
        a, m, idx, starts = _sample_windows(rng, audios, motions, config.batch_size, config.window)
        negs = [
            _sample_negatives(rng, audios, motions, idx, starts, config)
            for _ in range(config.negatives_per_positive)
        ]
        m_all = np.concatenate([m, *negs])
        a_all = np.concatenate([a] * (1 + config.negatives_per_positive))
        labels = torch.cat(
            [
                torch.ones(config.batch_size),
                torch.zeros(config.batch_size * config.negatives_per_positive),
            ]
        )
        cos = _pair_cosines(model, a_all, m_all)
        loss = bce(model.logit_scale * cos + model.logit_bias, labels)
        if not torch.isfinite(loss):
            model.load_state_dict(last_good)
            raise TrainingError(
                f"expert training diverged at step {step}", last_good_state=last_good
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        last_good = copy.deepcopy(model.state_dict())
        loss_val = float(loss.detach())

    model.eval()
    ckpt = ExpertCheckpoint(
        model=model,
        config=config,
        audio_dim=audios[0].shape[1],
        motion_dim=motions[0].shape[1],
        corpus_fingerprint=config_hash(asdict(manifest.config)),
        final_loss=loss_val,
    )
    ckpt.val_sync_accuracy = _sync_accuracy(ckpt, manifest, split="val")
    return ckpt


def _sync_accuracy(ckpt: ExpertCheckpoint, manifest: CorpusManifest, split: str = "val", offset: int = 10) -> float:
    """Fraction of windows where the aligned pair out-scores an offset pair."""
    audios, motions = _clip_arrays(manifest, split)
    if not audios:
        return float("nan")
    window = ckpt.config.window
    wins = 0
    total = 0
    with torch.no_grad():
        for a, m in zip(audios, motions):
            T = a.shape[0]
            for s in range(0, T - window - offset, window // 2):
                aligned = _pair_cosines(ckpt.model, a[None, s : s + window], m[None, s : s + window])
                shifted = _pair_cosines(
                    ckpt.model, a[None, s : s + window], m[None, s + offset : s + offset + window]
                )
                wins += int(aligned.item() > shifted.item())
                total += 1
    return wins / max(total, 1)


def _check_window(start: int, end: int, T: int) -> None:
    if not (0 <= start < end <= T):
        raise ValueError(f"window [{start}, {end}) invalid for sequence of length {T}")


def embed_audio(
    ckpt: ExpertCheckpoint, audio: PseudoAudioFeatures, window: tuple[int, int] | None = None
) -> np.ndarray:
    """Unit-norm audio-semantic embedding of an audio window."""
    feats = audio.features.astype(np.float32)
    start, end = window if window is not None else (0, feats.shape[0])
    _check_window(start, end, feats.shape[0])
    with torch.no_grad():
        emb = ckpt.model.audio_tower(torch.as_tensor(feats[None, start:end]))
    return emb[0].numpy()


def embed_motion(
    ckpt: ExpertCheckpoint,
    lower_motion: np.ndarray,
    window: tuple[int, int] | None = None,
) -> np.ndarray:
    """Unit-norm motion-semantic embedding of a lower-face motion window."""
    feats = np.asarray(lower_motion, dtype=np.float32)
    start, end = window if window is not None else (0, feats.shape[0])
    _check_window(start, end, feats.shape[0])
    with torch.no_grad():
        emb = ckpt.model.motion_tower(torch.as_tensor(feats[None, start:end]))
    return emb[0].numpy()


def sync_confidence(
    ckpt: ExpertCheckpoint,
    audio: PseudoAudioFeatures,
    motion: MotionSequence,
    partition: RegionPartition,
    stride: int = 4,
) -> float:
    """Mean cosine between audio and motion embeddings over sliding windows."""
    if audio.num_frames != motion.num_frames:
        raise ValueError(
            f"length mismatch: audio T={audio.num_frames}, motion T={motion.num_frames}"
        )
    window = ckpt.config.window
    lower = motion.expression[:, list(partition.lower_indices)].astype(np.float32)
    feats = audio.features.astype(np.float32)
    T = feats.shape[0]
    if T < window:
        raise ValueError(f"sequence shorter than expert window ({T} < {window})")
    starts = list(range(0, T - window + 1, stride))
    a = np.stack([feats[s : s + window] for s in starts])
    m = np.stack([lower[s : s + window] for s in starts])
    with torch.no_grad():
        cos = _pair_cosines(ckpt.model, a, m)
    return float(cos.mean())


def save_expert(ckpt: ExpertCheckpoint, directory: str | Path) -> None:
    save_checkpoint(
        directory,
        state_to_numpy(ckpt.model),
        config={
            **asdict(ckpt.config),
            "audio_dim": ckpt.audio_dim,
            "motion_dim": ckpt.motion_dim,
            "kind": "expert",
        },
        extra={
            "corpus_fingerprint": ckpt.corpus_fingerprint,
            "val_sync_accuracy": ckpt.val_sync_accuracy,
            "final_loss": ckpt.final_loss,
        },
    )


def load_expert(directory: str | Path) -> ExpertCheckpoint:
    tensors, config, extra = load_checkpoint(directory)
    audio_dim = config.pop("audio_dim")
    motion_dim = config.pop("motion_dim")
    config.pop("kind", None)
    cfg = ExpertConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in config.items()})
    model = ExpertModel(audio_dim, motion_dim, cfg)
    load_state_from_numpy(model, tensors)
    model.eval()
    return ExpertCheckpoint(
        model=model,
        config=cfg,
        audio_dim=audio_dim,
        motion_dim=motion_dim,
        corpus_fingerprint=extra.get("corpus_fingerprint", ""),
        val_sync_accuracy=extra.get("val_sync_accuracy", float("nan")),
        final_loss=extra.get("final_loss", float("nan")),
    )
