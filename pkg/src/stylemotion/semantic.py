"""Stage 1: visual semantic encoder trained by cross-modal structural alignment.

The encoder maps expression windows to embeddings whose pairwise cosine
structure matches that of the frozen audio expert's embeddings. Memory banks
of past (audio, visual) embedding pairs enlarge the pair set; bank slots are
refreshed by replacing the most redundant audio entries, keeping both banks
slot-aligned.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import save_checkpoint, load_checkpoint, config_hash
from .corpus import CorpusManifest
from .expert import ExpertCheckpoint
from .nets import TrainingError, seed_everything, state_to_numpy, load_state_from_numpy

__all__ = [
    "MemoryBankPair",
    "SemanticConfig",
    "SemanticCheckpoint",
    "redundancy_scores",
    "select_replace_indices",
    "update_banks",
    "global_structural_loss",
    "train_semantic_encoder",
    "embed_semantic",
    "save_semantic",
    "load_semantic",
]


@dataclass(frozen=True)
class MemoryBankPair:
    """Aligned audio/visual embedding banks with redundancy bookkeeping."""

    bank_a: np.ndarray  # (N, d) unit rows
    bank_v: np.ndarray  # (N, d) unit rows, slot-aligned with bank_a
    clip_ids: np.ndarray  # (N,) provenance of each slot
    slot_age: np.ndarray  # (N,) steps since the slot was written

    def __post_init__(self):
        a = np.asarray(self.bank_a, dtype=np.float64)
        v = np.asarray(self.bank_v, dtype=np.float64)
        if a.shape != v.shape:
            raise ValueError(f"bank shapes differ: {a.shape} vs {v.shape}")
        object.__setattr__(self, "bank_a", a)
        object.__setattr__(self, "bank_v", v)
        object.__setattr__(self, "clip_ids", np.asarray(self.clip_ids, dtype=np.int64))
        object.__setattr__(self, "slot_age", np.asarray(self.slot_age, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.bank_a.shape[0]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def redundancy_scores(bank_a: np.ndarray) -> np.ndarray:
    """Mean cosine similarity of each bank row to all other rows."""
    bank_a = np.asarray(bank_a, dtype=np.float64)
    N = bank_a.shape[0]
    if N < 2:
        raise ValueError(f"redundancy needs at least 2 bank entries, got {N}")
    sim = bank_a @ bank_a.T
    return (sim.sum(axis=1) - np.diag(sim)) / (N - 1)


def select_replace_indices(rho: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k most redundant entries; ties broken by smallest index."""
    rho = np.asarray(rho)
    if not 1 <= k <= rho.shape[0]:
        raise ValueError(f"k={k} out of range for {rho.shape[0]} entries")
    order = np.argsort(-rho, kind="stable")
    return np.sort(order[:k])


def update_banks(
    banks: MemoryBankPair,
    batch_a: np.ndarray,
    batch_v: np.ndarray,
    clip_ids: np.ndarray | None = None,
) -> MemoryBankPair:
    """Replace the most redundant slots (judged on the audio bank) in both banks."""
    batch_a = np.atleast_2d(np.asarray(batch_a, dtype=np.float64))
    batch_v = np.atleast_2d(np.asarray(batch_v, dtype=np.float64))
    if batch_a.shape != batch_v.shape:
        raise ValueError(f"batch shapes differ: {batch_a.shape} vs {batch_v.shape}")
    k = batch_a.shape[0]
    if k == 0:
        return banks
    if k > banks.size:
        raise ValueError(f"batch of {k} exceeds bank size {banks.size}")
    if clip_ids is None:
        clip_ids = np.full(k, -1, dtype=np.int64)
    rho = redundancy_scores(banks.bank_a)
    idx = select_replace_indices(rho, k)
    new_a = banks.bank_a.copy()
    new_v = banks.bank_v.copy()
    new_ids = banks.clip_ids.copy()
    new_age = banks.slot_age.copy() + 1
    new_a[idx] = _normalize_rows(batch_a)
    new_v[idx] = _normalize_rows(batch_v)
    new_ids[idx] = clip_ids
    new_age[idx] = 0
    return MemoryBankPair(new_a, new_v, new_ids, new_age)


def _cosine_matrix(x: torch.Tensor) -> torch.Tensor:
    xn = F.normalize(x, dim=-1, eps=1e-12)
    return xn @ xn.T


def global_structural_loss(
    v_batch: torch.Tensor,
    a_batch: torch.Tensor,
    banks: MemoryBankPair | None = None,
) -> torch.Tensor:
    """Sum over unordered entry pairs of squared cosine-structure mismatch.

    Entries are the current batch plus (optionally) both banks' rows; only
    ``v_batch`` carries gradient.
    """
    if v_batch.shape != a_batch.shape:
        raise ValueError(f"batch shapes differ: {tuple(v_batch.shape)} vs {tuple(a_batch.shape)}")
    a_batch = a_batch.detach()
    vs, als = [v_batch], [a_batch]
    if banks is not None and banks.size > 0:
        vs.append(torch.as_tensor(banks.bank_v, dtype=v_batch.dtype))
        als.append(torch.as_tensor(banks.bank_a, dtype=a_batch.dtype))
    V = torch.cat(vs)
    A = torch.cat(als)
    n = V.shape[0]
    if n < 2:
        raise ValueError("structural loss needs at least 2 entries")
    diff = _cosine_matrix(V) - _cosine_matrix(A)
    return torch.triu(diff**2, diagonal=1).sum()


class SemanticEncoder(nn.Module):
    """Temporal self-attention encoder: expression frames -> unit embedding."""

    def __init__(self, input_dim: int, embed_dim: int, hidden: int = 64, layers: int = 2, heads: int = 4, max_len: int = 512):
        super().__init__()
        self.input_proj = nn.Linear(input_dim, hidden)
        self.pos = nn.Parameter(0.02 * torch.randn(max_len, hidden))
        layer = nn.TransformerEncoderLayer(
            d_model=hidden, nhead=heads, dim_feedforward=2 * hidden,
            batch_first=True, dropout=0.0, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)
        self.head = nn.Linear(hidden, embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, E)
        h = self.input_proj(x) + self.pos[: x.shape[1]][None]
        h = self.encoder(h).mean(dim=1)
        return F.normalize(self.head(h), dim=-1)


@dataclass(frozen=True)
class SemanticConfig:
    embed_dim: int = 32  # must match the expert's embedding dim
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    window: int = 16
    bank_size: int = 256
    batch_size: int = 32
    steps: int = 250
    lr: float = 1e-3
    use_memory_bank: bool = True
    seed: int = 0


@dataclass
class SemanticCheckpoint:
    encoder: SemanticEncoder
    config: SemanticConfig
    input_dim: int
    banks: MemoryBankPair | None
    corpus_fingerprint: str
    val_alignment: float = float("nan")  # mean |cos(v_i,v_j) - cos(a_i,a_j)| held out
    val_alignment_random_init: float = float("nan")
    val_structural_loss: float = float("nan")  # mean squared cosine mismatch held out
    val_structural_loss_random_init: float = float("nan")
    final_loss: float = float("nan")


def _window_dataset(manifest: CorpusManifest, expert: ExpertCheckpoint, split: str):
    """All (expression window, audio embedding, clip id) triples of a split."""
    window = expert.config.window
    exprs, audio_embs, clip_ids = [], [], []
    with torch.no_grad():
        for clip_id, entry in enumerate(manifest.by_split(split)):
            seq = manifest.sequence(entry)
            audio = manifest.audio(entry).features.astype(np.float32)
            expr = seq.expression.astype(np.float32)
            starts = range(0, expr.shape[0] - window + 1, window // 2)
            a = np.stack([audio[s : s + window] for s in starts])
            emb = expert.model.audio_tower(torch.as_tensor(a)).numpy()
            for j, s in enumerate(starts):
                exprs.append(expr[s : s + window])
                audio_embs.append(emb[j])
                clip_ids.append(clip_id)
    return np.stack(exprs), np.stack(audio_embs), np.array(clip_ids)


def _alignment_score(
    encoder: SemanticEncoder, exprs: np.ndarray, audio_embs: np.ndarray
) -> tuple[float, float]:
    """(mean |cosine mismatch|, mean squared cosine mismatch) on held-out pairs."""
    with torch.no_grad():
        v = encoder(torch.as_tensor(exprs))
    cv = _cosine_matrix(v).numpy()
    ca = _normalize_rows(audio_embs) @ _normalize_rows(audio_embs).T
    iu = np.triu_indices(cv.shape[0], k=1)
    diff = cv[iu] - ca[iu]
    return float(np.abs(diff).mean()), float((diff**2).mean())


def train_semantic_encoder(
    manifest: CorpusManifest,
    expert: ExpertCheckpoint,
    config: SemanticConfig = SemanticConfig(),
) -> SemanticCheckpoint:
    """Train the visual semantic encoder against the frozen audio expert."""
    if config.embed_dim != expert.config.embed_dim:
        raise ValueError(
            f"semantic embed_dim {config.embed_dim} must match expert {expert.config.embed_dim}"
        )
    if config.use_memory_bank and config.bank_size < config.batch_size:
        raise ValueError(
            f"bank size {config.bank_size} must be >= batch size {config.batch_size}"
        )
    rng = seed_everything(config.seed)
    exprs, audio_embs, clip_ids = _window_dataset(manifest, expert, "train")
    if len(exprs) == 0:
        raise ValueError("corpus train split is empty")
    input_dim = exprs.shape[2]
    encoder = SemanticEncoder(
        input_dim, config.embed_dim, config.hidden, config.layers, config.heads
    )
    random_init_state = copy.deepcopy(encoder.state_dict())
    opt = torch.optim.Adam(encoder.parameters(), lr=config.lr)

    banks = None
    if config.use_memory_bank:
        n0 = min(config.bank_size, len(exprs))
        with torch.no_grad():
            v0 = encoder(torch.as_tensor(exprs[:n0])).numpy()
        banks = MemoryBankPair(
            bank_a=_normalize_rows(audio_embs[:n0]),
            bank_v=_normalize_rows(v0),
            clip_ids=clip_ids[:n0],
            slot_age=np.zeros(n0, dtype=np.int64),
        )

    final_loss = float("nan")
    for step in range(config.steps):
        sel = rng.integers(len(exprs), size=config.batch_size)
        a = torch.as_tensor(audio_embs[sel])
        v = encoder(torch.as_tensor(exprs[sel]))
        n_entries = config.batch_size + (banks.size if banks is not None else 0)
        loss = global_structural_loss(v, a, banks) / (n_entries * (n_entries - 1) / 2)
        if not torch.isfinite(loss):
            raise TrainingError(f"semantic encoder diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        final_loss = float(loss.detach())
        if banks is not None:
            banks = update_banks(banks, a.numpy(), v.detach().numpy(), clip_ids[sel])

    encoder.eval()
    ckpt = SemanticCheckpoint(
        encoder=encoder,
        config=config,
        input_dim=input_dim,
        banks=banks,
        corpus_fingerprint=config_hash(asdict(manifest.config)),
        final_loss=final_loss,
    )
    val = _window_dataset(manifest, expert, "val")
    if len(val[0]):
        ckpt.val_alignment, ckpt.val_structural_loss = _alignment_score(
            encoder, val[0][:256], val[1][:256]
        )
        ref = SemanticEncoder(input_dim, config.embed_dim, config.hidden, config.layers, config.heads)
        ref.load_state_dict(random_init_state)
        ckpt.val_alignment_random_init, ckpt.val_structural_loss_random_init = _alignment_score(
            ref, val[0][:256], val[1][:256]
        )
    return ckpt


def embed_semantic(ckpt: SemanticCheckpoint, expression: np.ndarray) -> np.ndarray:
    """Unit-norm semantic embedding of a full expression sequence (T, E)."""
    expr = np.asarray(expression, dtype=np.float32)
    if expr.ndim != 2 or expr.shape[1] != ckpt.input_dim:
        raise ValueError(f"expected (T, {ckpt.input_dim}) expression matrix, got {expr.shape}")
    with torch.no_grad():
        return ckpt.encoder(torch.as_tensor(expr[None]))[0].numpy()


def save_semantic(ckpt: SemanticCheckpoint, directory: str | Path) -> None:
    tensors = state_to_numpy(ckpt.encoder, prefix="encoder.")
    if ckpt.banks is not None:
        tensors["banks.bank_a"] = ckpt.banks.bank_a
        tensors["banks.bank_v"] = ckpt.banks.bank_v
        tensors["banks.clip_ids"] = ckpt.banks.clip_ids.astype(np.float32)
        tensors["banks.slot_age"] = ckpt.banks.slot_age.astype(np.float32)
    save_checkpoint(
        directory,
        tensors,
        config={**asdict(ckpt.config), "input_dim": ckpt.input_dim, "kind": "semantic"},
        extra={
            "corpus_fingerprint": ckpt.corpus_fingerprint,
            "val_alignment": ckpt.val_alignment,
            "val_alignment_random_init": ckpt.val_alignment_random_init,
            "val_structural_loss": ckpt.val_structural_loss,
            "val_structural_loss_random_init": ckpt.val_structural_loss_random_init,
            "final_loss": ckpt.final_loss,
        },
    )


def load_semantic(directory: str | Path) -> SemanticCheckpoint:
    tensors, config, extra = load_checkpoint(directory)
    input_dim = config.pop("input_dim")
    config.pop("kind", None)
    cfg = SemanticConfig(**config)
    encoder = SemanticEncoder(input_dim, cfg.embed_dim, cfg.hidden, cfg.layers, cfg.heads)
    load_state_from_numpy(encoder, {k: v for k, v in tensors.items() if k.startswith("encoder.")}, "encoder.")
    encoder.eval()
    banks = None
    if "banks.bank_a" in tensors:
        banks = MemoryBankPair(
            bank_a=tensors["banks.bank_a"],
            bank_v=tensors["banks.bank_v"],
            clip_ids=tensors["banks.clip_ids"].astype(np.int64),
            slot_age=tensors["banks.slot_age"].astype(np.int64),
        )
    return SemanticCheckpoint(
        encoder=encoder,
        config=cfg,
        input_dim=input_dim,
        banks=banks,
        corpus_fingerprint=extra.get("corpus_fingerprint", ""),
        val_alignment=extra.get("val_alignment", float("nan")),
        val_alignment_random_init=extra.get("val_alignment_random_init", float("nan")),
        val_structural_loss=extra.get("val_structural_loss", float("nan")),
        val_structural_loss_random_init=extra.get("val_structural_loss_random_init", float("nan")),
        final_loss=extra.get("final_loss", float("nan")),
    )
