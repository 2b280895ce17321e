"""Synthetic labeled corpus generator.

Motion is composed additively: a semantic component driven by a discrete
pseudo-phoneme track on the lower-face dims, plus a speaker-style component
(slow oscillations and offsets on the upper-face dims, an articulation gain
and offset on the lower-face dims), plus observation noise. Pseudo-audio
features are generated from the same phoneme track, so audio and lower-face
motion share content by construction while upper-face motion carries style
only. Ground-truth factors are therefore available for every clip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .motion import MotionSequence, RegionPartition, save_sequence, load_sequence

__all__ = [
    "CorpusConfig",
    "SpeakerStyle",
    "ContentScript",
    "PseudoAudioFeatures",
    "CorpusEntry",
    "CorpusManifest",
    "sample_speaker",
    "neutral_style",
    "sample_script",
    "render_motion",
    "semantic_lower_trajectory",
    "build_corpus",
    "load_manifest",
    "load_audio",
]


@dataclass(frozen=True)
class CorpusConfig:
    """Dimensions and generator ranges for the synthetic corpus."""

    expression_dim: int = 12
    pose_dim: int = 4
    shape_dim: int = 4
    audio_dim: int = 13
    vocab_size: int = 10
    fps: int = 25
    num_frames: int = 96
    n_speakers: int = 8
    n_contents: int = 10
    upper_indices: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    lower_indices: tuple[int, ...] = (6, 7, 8, 9, 10, 11)
    noise_sigma: float = 0.02
    # speaker style ranges
    osc_amp_range: tuple[float, float] = (0.25, 1.0)
    osc_freq_range: tuple[float, float] = (0.3, 2.0)  # Hz, must stay < fps/2
    offset_range: tuple[float, float] = (-0.5, 0.5)
    gain_range: tuple[float, float] = (0.6, 1.6)
    style_separation: float = 0.2
    # content script
    min_run: int = 3
    max_run: int = 8
    phoneme_amp: float = 1.0
    articulation_bias_scale: float = 0.6
    transition_width: int = 5
    audio_noise_sigma: float = 0.05
    # splits
    n_held_out_speakers: int = 2
    n_held_out_contents: int = 2
    val_fraction: float = 0.2
    master_seed: int = 0

    @property
    def partition(self) -> RegionPartition:
        return RegionPartition(self.upper_indices, self.lower_indices)

    def validate(self) -> None:
        self.partition.validate(self.expression_dim)
        for name, (lo, hi) in (
            ("osc_amp_range", self.osc_amp_range),
            ("osc_freq_range", self.osc_freq_range),
            ("offset_range", self.offset_range),
            ("gain_range", self.gain_range),
        ):
            if not lo < hi:
                raise ValueError(f"{name} is empty: {(lo, hi)}")
        if self.osc_freq_range[1] >= self.fps / 2:
            raise ValueError("oscillation frequencies must stay below fps/2")
        if self.osc_amp_range[0] <= 0 or self.gain_range[0] <= 0:
            raise ValueError("amplitude scales and gains must be positive")
        if self.style_separation > self.osc_amp_range[1] - self.osc_amp_range[0]:
            raise ValueError(
                "style_separation exceeds the amplitude range width; "
                "distinct speakers cannot be guaranteed"
            )
        if self.min_run < 2:
            raise ValueError("phoneme runs must last at least 2 frames")
        if self.n_speakers <= self.n_held_out_speakers:
            raise ValueError("need more speakers than the held-out test speakers")
        if self.n_contents <= self.n_held_out_contents:
            raise ValueError("need more contents than the held-out test contents")


@dataclass(frozen=True)
class SpeakerStyle:
    """Ground-truth style factors for one synthetic speaker."""

    speaker_id: int
    osc_amp: np.ndarray  # (|upper|,) oscillation amplitude per upper dim
    osc_freq: np.ndarray  # (|upper|,) Hz
    osc_phase: np.ndarray  # (|upper|,) radians
    upper_offset: np.ndarray  # (|upper|,)
    lower_offset: np.ndarray  # (|lower|,)
    articulation_gain: np.ndarray  # (|lower|,) multiplicative, > 0 for real speakers
    shape: np.ndarray  # (S,) static identity vector

    def params_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.osc_amp,
                self.osc_freq,
                self.osc_phase,
                self.upper_offset,
                self.lower_offset,
                self.articulation_gain,
            ]
        )


@dataclass(frozen=True)
class ContentScript:
    """A pseudo-phoneme track standing in for spoken content.

    Besides the frame-level track, each script carries a constant articulation
    bias on the lower-face dims (scripts differ in overall mouth statistics,
    not only in their phoneme order).
    """

    content_id: int
    phoneme_track: np.ndarray  # (T,) ints in [0, V)
    articulation_bias: np.ndarray  # (|lower|,) constant lower-face offset

    def __post_init__(self):
        track = np.asarray(self.phoneme_track, dtype=np.int64)
        object.__setattr__(self, "phoneme_track", track)
        object.__setattr__(
            self, "articulation_bias", np.asarray(self.articulation_bias, dtype=np.float64)
        )

    def run_lengths(self) -> list[int]:
        runs, count = [], 1
        t = self.phoneme_track
        for a, b in zip(t[:-1], t[1:]):
            if a == b:
                count += 1
            else:
                runs.append(count)
                count = 1
        runs.append(count)
        return runs


@dataclass(frozen=True)
class PseudoAudioFeatures:
    """Frame-aligned MFCC-like features driving the synthesis."""

    features: np.ndarray  # (T, F)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a (T, F) matrix")
        if not np.isfinite(feats).all():
            raise ValueError("audio features contain non-finite entries")
        object.__setattr__(self, "features", feats)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


def sample_speaker(seed: int, config: CorpusConfig, speaker_id: int | None = None) -> SpeakerStyle:
    """Draw one speaker's style factors. Deterministic in (seed, config)."""
    config.validate()
    rng = _rng(config.master_seed, 1, seed)
    n_up, n_lo = len(config.upper_indices), len(config.lower_indices)
    amp_lo, amp_hi = config.osc_amp_range
    # Amplitudes live on a lattice: each upper dim gets one of n_slots bins
    # chosen by the base-n_slots digits of the seed, with jitter small enough
    # that different bins stay >= style_separation apart. Any two seeds below
    # n_slots**n_up are then guaranteed to differ in at least one amplitude.
    slot_width = max(config.style_separation + 1e-9, (amp_hi - amp_lo) / 8)
    n_slots = max(2, int((amp_hi - amp_lo) // slot_width))
    jitter_width = slot_width - config.style_separation
    digits = np.array([(seed // n_slots**d) % n_slots for d in range(n_up)])
    base = amp_lo + digits * slot_width + rng.uniform(0, max(jitter_width, 0), size=n_up)
    return SpeakerStyle(
        speaker_id=seed if speaker_id is None else speaker_id,
        osc_amp=base,
        osc_freq=rng.uniform(*config.osc_freq_range, size=n_up),
        osc_phase=rng.uniform(0, 2 * np.pi, size=n_up),
        upper_offset=rng.uniform(*config.offset_range, size=n_up),
        lower_offset=rng.uniform(*config.offset_range, size=n_lo),
        articulation_gain=rng.uniform(*config.gain_range, size=n_lo),
        shape=rng.normal(size=config.shape_dim),
    )


def neutral_style(config: CorpusConfig) -> SpeakerStyle:
    """The zero style: no oscillation, no offsets, unit articulation gain."""
    n_up, n_lo = len(config.upper_indices), len(config.lower_indices)
    return SpeakerStyle(
        speaker_id=-1,
        osc_amp=np.zeros(n_up),
        osc_freq=np.full(n_up, 1.0),
        osc_phase=np.zeros(n_up),
        upper_offset=np.zeros(n_up),
        lower_offset=np.zeros(n_lo),
        articulation_gain=np.ones(n_lo),
        shape=np.zeros(config.shape_dim),
    )


def sample_script(seed: int, config: CorpusConfig, content_id: int | None = None) -> ContentScript:
    """Draw a pseudo-phoneme track with run lengths in [min_run, max_run]."""
    config.validate()
    rng = _rng(config.master_seed, 2, seed)
    track = np.empty(config.num_frames, dtype=np.int64)
    t = 0
    prev = -1
    while t < config.num_frames:
        run = int(rng.integers(config.min_run, config.max_run + 1))
        run = min(run, config.num_frames - t)
        if run < config.min_run and t > 0:
            # Absorb a too-short tail into the previous run.
            track[t:] = track[t - 1]
            break
        ph = int(rng.integers(config.vocab_size))
        while ph == prev:
            ph = int(rng.integers(config.vocab_size))
        track[t : t + run] = ph
        prev = ph
        t += run
    bias = config.articulation_bias_scale * rng.uniform(-1, 1, size=len(config.lower_indices))
    return ContentScript(
        content_id=seed if content_id is None else content_id,
        phoneme_track=track,
        articulation_bias=bias,
    )


def _phoneme_tables(config: CorpusConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-phoneme lower-face motion targets (V, |lower|+P) and audio templates (V, F)."""
    rng = _rng(config.master_seed, 3)
    n_lo = len(config.lower_indices)
    motion_targets = config.phoneme_amp * rng.uniform(
        -1.0, 1.0, size=(config.vocab_size, n_lo + config.pose_dim)
    )
    audio_templates = rng.uniform(-1.0, 1.0, size=(config.vocab_size, config.audio_dim))
    return motion_targets, audio_templates


def _smooth_transitions(traj: np.ndarray, width: int) -> np.ndarray:
    """Moving-average smoothing of piecewise-constant phoneme targets."""
    if width <= 1:
        return traj
    kernel = np.ones(width) / width
    padded = np.pad(traj, ((width // 2, width - 1 - width // 2), (0, 0)), mode="edge")
    return np.stack(
        [np.convolve(padded[:, c], kernel, mode="valid") for c in range(traj.shape[1])], axis=1
    )


def semantic_lower_trajectory(script: ContentScript, config: CorpusConfig) -> np.ndarray:
    """The pure semantic component: (T, |lower|+P) smoothed phoneme trajectory."""
    motion_targets, _ = _phoneme_tables(config)
    raw = motion_targets[script.phoneme_track]
    out = _smooth_transitions(raw, config.transition_width)
    out[:, : len(config.lower_indices)] += script.articulation_bias
    return out


def render_motion(
    style: SpeakerStyle,
    script: ContentScript,
    noise_seed: int = 0,
    config: CorpusConfig | None = None,
    noise_sigma: float | None = None,
) -> tuple[MotionSequence, PseudoAudioFeatures]:
    """Realize the additive motion model for one (speaker, content) pair."""
    if config is None:
        config = CorpusConfig()
    config.validate()
    sigma = config.noise_sigma if noise_sigma is None else noise_sigma
    T = config.num_frames
    if script.phoneme_track.shape[0] != T:
        raise ValueError(
            f"script length {script.phoneme_track.shape[0]} does not match corpus T={T}"
        )
    n_up, n_lo = len(config.upper_indices), len(config.lower_indices)
    if style.osc_amp.shape[0] != n_up or style.articulation_gain.shape[0] != n_lo:
        raise ValueError("style dims do not match corpus partition")

    semantic = semantic_lower_trajectory(script, config)  # (T, n_lo + P)
    sem_lower, sem_pose = semantic[:, :n_lo], semantic[:, n_lo:]

    t_axis = np.arange(T) / config.fps
    upper = (
        style.upper_offset[None, :]
        + style.osc_amp[None, :]
        * np.sin(2 * np.pi * style.osc_freq[None, :] * t_axis[:, None] + style.osc_phase[None, :])
    )
    lower = style.articulation_gain[None, :] * sem_lower + style.lower_offset[None, :]
    pose = 0.5 * sem_pose

    _, audio_templates = _phoneme_tables(config)
    audio = audio_templates[script.phoneme_track]

    rng = _rng(config.master_seed, 4, noise_seed)
    expression = np.empty((T, config.expression_dim))
    expression[:, list(config.upper_indices)] = upper
    expression[:, list(config.lower_indices)] = lower
    if sigma > 0:
        expression = expression + sigma * rng.normal(size=expression.shape)
        pose = pose + sigma * rng.normal(size=pose.shape)
    if config.audio_noise_sigma > 0 and sigma > 0:
        audio = audio + config.audio_noise_sigma * rng.normal(size=audio.shape)

    seq = MotionSequence(shape=style.shape, expression=expression, pose=pose, fps=config.fps)
    return seq, PseudoAudioFeatures(audio)


@dataclass(frozen=True)
class CorpusEntry:
    speaker_id: int
    content_id: int
    path: str  # sequence directory, relative to corpus root
    split: str  # train | val | test


@dataclass(frozen=True)
class CorpusManifest:
    root: str
    config: CorpusConfig
    entries: tuple[CorpusEntry, ...]

    def by_split(self, split: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.split == split]

    def sequence(self, entry: CorpusEntry) -> MotionSequence:
        return load_sequence(Path(self.root) / entry.path)

    def audio(self, entry: CorpusEntry) -> PseudoAudioFeatures:
        return load_audio(Path(self.root) / entry.path / "audio.f32", self.config)


def _assign_split(speaker: int, content: int, config: CorpusConfig) -> str:
    held_spk = speaker >= config.n_speakers - config.n_held_out_speakers
    held_cnt = content >= config.n_contents - config.n_held_out_contents
    if held_spk or held_cnt:
        return "test"
    # Deterministic validation holdout among seen speakers x seen contents.
    n_train_combos = (config.n_speakers - config.n_held_out_speakers) * (
        config.n_contents - config.n_held_out_contents
    )
    stride = max(2, round(1.0 / max(config.val_fraction, 1e-9)))
    idx = speaker * (config.n_contents - config.n_held_out_contents) + content
    return "val" if idx % stride == stride - 1 and n_train_combos > stride else "train"


def build_corpus(config: CorpusConfig, out_dir: str | Path) -> CorpusManifest:
    """Generate and serialize the full corpus; deterministic in config."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for spk in range(config.n_speakers):
        style = sample_speaker(spk, config)
        for cnt in range(config.n_contents):
            script = sample_script(cnt, config)
            noise_seed = spk * config.n_contents + cnt
            seq, audio = render_motion(style, script, noise_seed=noise_seed, config=config)
            rel = f"spk{spk:03d}_cnt{cnt:03d}"
            seq_dir = out_dir / rel
            try:
                save_sequence(seq, seq_dir, speaker_id=spk, content_id=cnt)
                np.ascontiguousarray(audio.features, dtype="<f4").tofile(seq_dir / "audio.f32")
            except OSError as exc:
                raise OSError(f"failed writing sequence under {seq_dir}: {exc}") from exc
            entries.append(
                CorpusEntry(spk, cnt, rel, _assign_split(spk, cnt, config))
            )
    manifest = CorpusManifest(root=str(out_dir), config=config, entries=tuple(entries))
    payload = {
        "config": asdict(config),
        "entries": [asdict(e) for e in entries],
    }
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return manifest


def load_manifest(corpus_dir: str | Path) -> CorpusManifest:
    corpus_dir = Path(corpus_dir)
    payload = json.loads((corpus_dir / "manifest.json").read_text())
    cfg = payload["config"]
    for key in ("upper_indices", "lower_indices"):
        cfg[key] = tuple(cfg[key])
    for key in ("osc_amp_range", "osc_freq_range", "offset_range", "gain_range"):
        cfg[key] = tuple(cfg[key])
    config = CorpusConfig(**cfg)
    entries = tuple(CorpusEntry(**e) for e in payload["entries"])
    return CorpusManifest(root=str(corpus_dir), config=config, entries=entries)


def load_audio(path: str | Path, config: CorpusConfig) -> PseudoAudioFeatures:
    arr = np.fromfile(path, dtype="<f4")
    if arr.size % config.audio_dim:
        raise ValueError(f"{path}: size {arr.size} not divisible by F={config.audio_dim}")
    return PseudoAudioFeatures(arr.reshape(-1, config.audio_dim))
