"""Stage 2: the style encoder and its disentanglement training.

A transformer backbone with frame-level attention pooling maps an expression
sequence to a style embedding. Training combines a decoupling loss against
the frozen stage-1 semantic embeddings (batch orthogonality plus an HSIC
independence penalty) with a triplet loss over speaker identities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import save_checkpoint, load_checkpoint, config_hash
from .corpus import CorpusManifest
from .motion import MotionSequence
from .nets import TrainingError, seed_everything, state_to_numpy, load_state_from_numpy
from .semantic import SemanticCheckpoint, embed_semantic

__all__ = [
    "StyleConfig",
    "StyleCheckpoint",
    "attention_pool",
    "hsic",
    "decouple_loss",
    "triplet_loss",
    "embed_style",
    "train_sdse",
    "save_style",
    "load_style",
]


def attention_pool(frame_vectors: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Softmax-weighted sum of per-frame vectors.

    ``frame_vectors`` is (T, d) or (B, T, d); ``logits`` is (T,) or (B, T).
    The softmax is computed with max-subtraction for stability.
    """
    frame_vectors = torch.as_tensor(frame_vectors)
    logits = torch.as_tensor(logits)
    if frame_vectors.shape[-2] == 0:
        raise ValueError("attention_pool needs at least one frame")
    weights = torch.softmax(logits - logits.max(dim=-1, keepdim=True).values, dim=-1)
    return (weights.unsqueeze(-1) * frame_vectors).sum(dim=-2)


def _pairwise_sq_dists(x: torch.Tensor) -> torch.Tensor:
    sq = (x**2).sum(dim=1)
    d = sq[:, None] + sq[None, :] - 2 * x @ x.T
    return d.clamp(min=0)


def _gaussian_kernel(x: torch.Tensor) -> torch.Tensor:
    d2 = _pairwise_sq_dists(x)
    # Median pairwise distance heuristic; held constant w.r.t. gradients.
    with torch.no_grad():
        n = x.shape[0]
        off = ~torch.eye(n, dtype=torch.bool)
        med = torch.sqrt(d2[off]).median()
        if med <= 0:
            warnings.warn("all rows identical; HSIC bandwidth falls back to 1.0")
            med = torch.tensor(1.0, dtype=x.dtype)
    return torch.exp(-d2 / (2 * med**2))


def hsic(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Biased HSIC estimator with Gaussian kernels: trace(KHLH)/(n-1)^2."""
    x = torch.as_tensor(x)
    y = torch.as_tensor(y)
    n = x.shape[0]
    if n < 4:
        raise ValueError(f"HSIC needs at least 4 samples, got {n}")
    if y.shape[0] != n:
        raise ValueError("x and y must have the same number of rows")
    K = _gaussian_kernel(x)
    L = _gaussian_kernel(y)
    H = torch.eye(n, dtype=K.dtype) - 1.0 / n
    return torch.trace(K @ H @ L @ H) / (n - 1) ** 2


def decouple_loss(
    style_batch: torch.Tensor,
    semantic_batch: torch.Tensor,
    lam_orth: float = 1.0,
    lam_hsic: float = 0.5,
) -> torch.Tensor:
    """Orthogonality + HSIC penalty between normalized style and semantic rows.

    Both batches are centered on their batch mean before row normalization, so
    the penalty targets the variation across the batch rather than a shared
    mean direction: the uncentered cross product can be made small by steering
    the common mean while leaving per-row structure correlated. The
    orthogonality term is the squared Frobenius norm of the centered cross
    product divided by n^2 so that lambda values are batch-size independent.
    Gradient flows only through the style batch.
    """
    if style_batch.shape[0] != semantic_batch.shape[0]:
        raise ValueError("style and semantic batches must be row-aligned")
    n = style_batch.shape[0]
    s = F.normalize(style_batch - style_batch.mean(dim=0, keepdim=True), dim=-1, eps=1e-12)
    v = semantic_batch.detach()
    v = F.normalize(v - v.mean(dim=0, keepdim=True), dim=-1, eps=1e-12)
    orth = (s.T @ v).pow(2).sum() / n**2
    return lam_orth * orth + lam_hsic * hsic(s, v)


def triplet_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    margin: float = 0.2,
) -> torch.Tensor:
    """max(0, margin + ||a-p||^2 - ||a-n||^2), averaged over a leading batch dim."""
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    anchor = torch.as_tensor(anchor)
    positive = torch.as_tensor(positive)
    negative = torch.as_tensor(negative)
    if not anchor.shape == positive.shape == negative.shape:
        raise ValueError("anchor, positive and negative must share a shape")
    dp = ((anchor - positive) ** 2).sum(dim=-1)
    dn = ((anchor - negative) ** 2).sum(dim=-1)
    return torch.clamp(margin + dp - dn, min=0).mean()


class StyleEncoder(nn.Module):
    """Transformer over expression frames with attention pooling to one vector."""

    def __init__(self, input_dim: int, style_dim: int, hidden: int = 64, layers: int = 2, heads: int = 4, max_len: int = 512):
        super().__init__()
        self.input_proj = nn.Linear(input_dim, hidden)
        self.pos = nn.Parameter(0.02 * torch.randn(max_len, hidden))
        layer = nn.TransformerEncoderLayer(
            d_model=hidden, nhead=heads, dim_feedforward=2 * hidden,
            batch_first=True, dropout=0.0, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)
        self.frame_head = nn.Linear(hidden, style_dim)
        self.logit_head = nn.Linear(hidden, 1)
        # Linear stem from the temporal mean of the raw input; keeps first-order
        # input statistics reachable by the output head from step zero.
        self.skip = nn.Linear(input_dim, style_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, E) -> (B, d_s)
        h = self.encoder(self.input_proj(x) + self.pos[: x.shape[1]][None])
        pooled = attention_pool(self.frame_head(h), self.logit_head(h).squeeze(-1))
        return pooled + self.skip(x.mean(dim=-2))


@dataclass(frozen=True)
class StyleConfig:
    style_dim: int = 16
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    lam_orth: float = 1.0
    lam_hsic: float = 0.5
    margin: float = 0.05
    use_triplet: bool = True
    steps: int = 300
    batch_triplets: int = 16
    crop_len: int = 64
    min_window: int = 8
    lr: float = 5e-4
    seed: int = 0


@dataclass
class StyleCheckpoint:
    encoder: StyleEncoder
    config: StyleConfig
    input_dim: int
    corpus_fingerprint: str
    speaker_probe_accuracy: float = float("nan")
    content_probe_accuracy: float = float("nan")
    final_loss: float = float("nan")


def embed_style(seq: MotionSequence | np.ndarray, ckpt: StyleCheckpoint) -> np.ndarray:
    """Style embedding of an expression sequence; deterministic at inference."""
    expr = seq.expression if isinstance(seq, MotionSequence) else np.asarray(seq)
    expr = expr.astype(np.float32)
    if expr.shape[0] < ckpt.config.min_window:
        raise ValueError(
            f"sequence of {expr.shape[0]} frames is shorter than the minimum window "
            f"{ckpt.config.min_window}"
        )
    if expr.shape[1] != ckpt.input_dim:
        raise ValueError(f"expected {ckpt.input_dim} expression dims, got {expr.shape[1]}")
    with torch.no_grad():
        return ckpt.encoder(torch.as_tensor(expr[None]))[0].numpy()


def _grouped_clips(manifest: CorpusManifest, split: str):
    """Expression arrays grouped with labels: (exprs, speaker_ids, content_ids)."""
    exprs, spk, cnt = [], [], []
    for entry in manifest.by_split(split):
        exprs.append(manifest.sequence(entry).expression.astype(np.float32))
        spk.append(entry.speaker_id)
        cnt.append(entry.content_id)
    return exprs, np.array(spk), np.array(cnt)


def _crop(expr: np.ndarray, crop_len: int, rng: np.random.Generator) -> np.ndarray:
    T = expr.shape[0]
    if T <= crop_len:
        return expr
    s = int(rng.integers(T - crop_len + 1))
    return expr[s : s + crop_len]


def _probe_accuracy(feats_train, y_train, feats_eval, y_eval) -> float:
    from sklearn.linear_model import LogisticRegression

    if len(set(y_train)) < 2:
        return float("nan")
    probe = LogisticRegression(max_iter=2000)
    probe.fit(feats_train, y_train)
    return float(probe.score(feats_eval, y_eval))


def probe_accuracies(
    ckpt: StyleCheckpoint,
    manifest: CorpusManifest,
) -> tuple[float, float]:
    """(speaker, content) linear-probe accuracies on held-out clips.

    Probes are fitted on full-sequence style embeddings of the train split.
    The speaker probe is scored on held-out clips whose speaker was seen in
    training; the content probe on held-out clips whose content was seen.
    """
    cfg = manifest.config
    seen_speakers = set(range(cfg.n_speakers - cfg.n_held_out_speakers))
    seen_contents = set(range(cfg.n_contents - cfg.n_held_out_contents))

    def featurize(entries):
        feats, ys, yc = [], [], []
        for entry in entries:
            expr = manifest.sequence(entry).expression.astype(np.float32)
            feats.append(embed_style(expr, ckpt))
            ys.append(entry.speaker_id)
            yc.append(entry.content_id)
        return np.stack(feats), np.array(ys), np.array(yc)

    Xtr, str_, ctr = featurize(manifest.by_split("train"))
    held = manifest.by_split("val") + manifest.by_split("test")
    spk_eval = [e for e in held if e.speaker_id in seen_speakers]
    cnt_eval = [e for e in held if e.content_id in seen_contents]
    Xs, ss, _ = featurize(spk_eval)
    Xc, _, cc = featurize(cnt_eval)
    return (
        _probe_accuracy(Xtr, str_, Xs, ss),
        _probe_accuracy(Xtr, ctr, Xc, cc),
    )


def train_sdse(
    manifest: CorpusManifest,
    semantic_ckpt: SemanticCheckpoint,
    config: StyleConfig = StyleConfig(),
) -> StyleCheckpoint:
    """Train the style encoder with the frozen stage-1 semantic encoder."""
    exprs, spk, cnt = _grouped_clips(manifest, "train")
    if len(exprs) == 0:
        raise ValueError("corpus train split is empty")
    speakers = np.unique(spk)
    if len(speakers) < 2:
        raise ValueError("triplet construction needs at least 2 speakers")
    by_speaker = {s: np.flatnonzero(spk == s) for s in speakers}
    if any(len(np.unique(cnt[idx])) < 2 for idx in by_speaker.values()):
        raise ValueError("every speaker needs at least 2 contents for triplets")

    rng = seed_everything(config.seed)
    input_dim = exprs[0].shape[1]
    encoder = StyleEncoder(input_dim, config.style_dim, config.hidden, config.layers, config.heads)
    opt = torch.optim.Adam(encoder.parameters(), lr=config.lr)

    final_loss = float("nan")
    for step in range(config.steps):
        anchors, positives, negatives = [], [], []
        for _ in range(config.batch_triplets):
            s = speakers[rng.integers(len(speakers))]
            a_idx, p_idx = rng.choice(by_speaker[s], size=2, replace=False)
            while cnt[a_idx] == cnt[p_idx]:
                p_idx = rng.choice(by_speaker[s])
            s_neg = speakers[rng.integers(len(speakers))]
            while s_neg == s:
                s_neg = speakers[rng.integers(len(speakers))]
            n_idx = rng.choice(by_speaker[s_neg])
            anchors.append(a_idx)
            positives.append(p_idx)
            negatives.append(n_idx)
        batch_idx = anchors + positives + negatives
        crops = [_crop(exprs[i], config.crop_len, rng) for i in batch_idx]
        batch = torch.as_tensor(np.stack(crops))
        emb = encoder(batch)
        B = config.batch_triplets
        loss = torch.zeros(())
        if config.use_triplet:
            loss = loss + triplet_loss(emb[:B], emb[B : 2 * B], emb[2 * B :], config.margin)
        if config.lam_orth > 0 or config.lam_hsic > 0:
            sem = np.stack([embed_semantic(semantic_ckpt, c) for c in crops])
            loss = loss + decouple_loss(
                emb, torch.as_tensor(sem), config.lam_orth, config.lam_hsic
            )
        if not torch.isfinite(loss):
            raise TrainingError(f"SDSE training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        final_loss = float(loss.detach())

    encoder.eval()
    ckpt = StyleCheckpoint(
        encoder=encoder,
        config=config,
        input_dim=input_dim,
        corpus_fingerprint=config_hash(asdict(manifest.config)),
        final_loss=final_loss,
    )
    ckpt.speaker_probe_accuracy, ckpt.content_probe_accuracy = probe_accuracies(ckpt, manifest)
    return ckpt


def save_style(ckpt: StyleCheckpoint, directory: str | Path) -> None:
    save_checkpoint(
        directory,
        state_to_numpy(ckpt.encoder),
        config={**asdict(ckpt.config), "input_dim": ckpt.input_dim, "kind": "style"},
        extra={
            "corpus_fingerprint": ckpt.corpus_fingerprint,
            "speaker_probe_accuracy": ckpt.speaker_probe_accuracy,
            "content_probe_accuracy": ckpt.content_probe_accuracy,
            "final_loss": ckpt.final_loss,
        },
    )


def load_style(directory: str | Path) -> StyleCheckpoint:
    tensors, config, extra = load_checkpoint(directory)
    input_dim = config.pop("input_dim")
    config.pop("kind", None)
    cfg = StyleConfig(**config)
    encoder = StyleEncoder(input_dim, cfg.style_dim, cfg.hidden, cfg.layers, cfg.heads)
    load_state_from_numpy(encoder, tensors)
    encoder.eval()
    return StyleCheckpoint(
        encoder=encoder,
        config=cfg,
        input_dim=input_dim,
        corpus_fingerprint=extra.get("corpus_fingerprint", ""),
        speaker_probe_accuracy=extra.get("speaker_probe_accuracy", float("nan")),
        content_probe_accuracy=extra.get("content_probe_accuracy", float("nan")),
        final_loss=extra.get("final_loss", float("nan")),
    )
