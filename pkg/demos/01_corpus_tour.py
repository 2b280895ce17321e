"""
A tour of the synthetic talking-face corpus
===========================================

Every clip in the corpus is a (T, 12) expression trajectory plus a (T, 4)
pose track and a frame-aligned pseudo-MFCC audio matrix. Two independent
factors generate the data:

* a *speaker style*: slow oscillations and offsets on the upper-face dims,
  plus a multiplicative articulation gain and offset on the lower-face dims;
* a *content script*: a pseudo-phoneme track that drives the lower-face
  dims and the audio features.

Because the factors are known exactly, downstream claims ("the style
embedding ignores content") can be tested instead of eyeballed.

Run:  python demos/01_corpus_tour.py
Outputs land in demos/out/corpus_tour/.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stylemotion import (
    CorpusConfig,
    build_corpus,
    render_motion,
    sample_script,
    sample_speaker,
    savgol_smooth,
)

OUT = Path(__file__).parent / "out" / "corpus_tour"
OUT.mkdir(parents=True, exist_ok=True)

config = CorpusConfig()

# --- one speaker, two scripts -------------------------------------------
# The upper-face rows are identical across the two clips (pure style);
# the lower-face rows differ (content plus the speaker's articulation).
speaker = sample_speaker(3, config)
clip_a, audio_a = render_motion(speaker, sample_script(0, config), noise_seed=0, config=config)
clip_b, _ = render_motion(speaker, sample_script(1, config), noise_seed=1, config=config)

fig, axes = plt.subplots(2, 2, figsize=(10, 5), sharex=True)
for col, (clip, title) in enumerate([(clip_a, "script 0"), (clip_b, "script 1")]):
    axes[0, col].plot(clip.expression[:, list(config.upper_indices)], lw=0.8)
    axes[0, col].set_title(f"{title}: upper face (style only)")
    axes[1, col].plot(clip.expression[:, list(config.lower_indices)], lw=0.8)
    axes[1, col].set_title(f"{title}: lower face (content x style)")
fig.tight_layout()
fig.savefig(OUT / "one_speaker_two_scripts.svg")
plt.close(fig)

upper = list(config.upper_indices)
gap = np.abs(clip_a.expression[:, upper] - clip_b.expression[:, upper]).mean()
print(f"mean upper-face difference between the two scripts: {gap:.4f} (noise-level)")

# --- audio/motion coupling ----------------------------------------------
# The audio features are phoneme templates plus noise, so lower-face motion
# and audio move together frame by frame.
fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(10, 4), sharex=True)
ax1.imshow(audio_a.features.T, aspect="auto", origin="lower")
ax1.set_ylabel("audio feature")
ax2.plot(clip_a.expression[:, list(config.lower_indices)], lw=0.8)
ax2.set_ylabel("lower face")
ax2.set_xlabel("frame")
fig.tight_layout()
fig.savefig(OUT / "audio_motion_alignment.svg")
plt.close(fig)

# --- smoothing ----------------------------------------------------------
# The Savitzky-Golay smoother is the post-processing step for generated
# motion; on the clean corpus it is close to a no-op, on noisy input it
# strips high-frequency jitter without lagging the trajectory.
noisy = clip_a
smooth = savgol_smooth(noisy, window=9, polyorder=2)
fig, ax = plt.subplots(figsize=(10, 3))
ax.plot(noisy.expression[:, 6], lw=0.8, label="raw")
ax.plot(smooth.expression[:, 6], lw=1.2, label="savgol(9, 2)")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "savgol.svg")
plt.close(fig)

# --- the full corpus ----------------------------------------------------
manifest = build_corpus(config, OUT / "corpus")
splits = {s: len(manifest.by_split(s)) for s in ("train", "val", "test")}
print(f"built {len(manifest.entries)} clips: {splits}")
print(f"figures written to {OUT}")
