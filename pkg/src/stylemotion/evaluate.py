"""Evaluation proxies and the ablation harness.

All metrics operate in motion-parameter space: region-restricted landmark
distances become per-frame L2 distances over expression/pose channels, sync
confidence comes from the trained audio-motion expert, and style similarity
compares style-probe embeddings against a speaker's reference centroid. The
style probe is a second style encoder trained with a different seed than the
one used for conditioning, so the generator is never graded by its own
conditioning encoder.

The ablation harness trains the five Table-style variants (full,
no_memory_bank, no_dis_module, no_triplet, no_hscales) end-to-end per seed,
reusing artifacts shared between variants, and emits a JSON report, a text
table, and an optional bar chart.
"""

from __future__ import annotations

import dataclasses
import json
import traceback
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .checkpoint import config_hash
from .corpus import CorpusManifest
from .expert import ExpertCheckpoint, ExpertConfig, train_expert, sync_confidence
from .motion import MotionSequence, RegionPartition
from .semantic import SemanticConfig, train_semantic_encoder
from .style import StyleCheckpoint, StyleConfig, train_sdse, embed_style
from .diffusion import DiffusionCheckpoint, DiffusionConfig, train_diffusion, sample_motion

__all__ = [
    "EvalReport",
    "AblationSpec",
    "ABLATION_VARIANTS",
    "mlmd_proxy",
    "flmd_proxy",
    "stylesim_proxy",
    "evaluate_generation",
    "run_ablations",
    "render_table",
]

METRICS = ("mlmd_proxy", "flmd_proxy", "sync_proxy", "stylesim_proxy")
# Directions for ranking: False -> lower is better, True -> higher is better.
HIGHER_BETTER = {"mlmd_proxy": False, "flmd_proxy": False, "sync_proxy": True, "stylesim_proxy": True}


# ---------------------------------------------------------------------------
# Metrics


def _check_compatible(gen: MotionSequence, gt: MotionSequence) -> None:
    if gen.num_frames != gt.num_frames:
        raise ValueError(
            f"sequence length mismatch: gen T={gen.num_frames}, gt T={gt.num_frames}"
        )
    if gen.expression.shape[1] != gt.expression.shape[1]:
        raise ValueError("expression dimensionality mismatch")


def mlmd_proxy(gen: MotionSequence, gt: MotionSequence, partition: RegionPartition) -> float:
    """Mouth-region motion distance: mean per-frame L2 over lower expression dims."""
    _check_compatible(gen, gt)
    lower = list(partition.lower_indices)
    diff = gen.expression[:, lower] - gt.expression[:, lower]
    return float(np.linalg.norm(diff, axis=1).mean())


def flmd_proxy(gen: MotionSequence, gt: MotionSequence) -> float:
    """Whole-face motion distance: mean per-frame L2 over expression + pose dims."""
    _check_compatible(gen, gt)
    if gen.pose.shape[1] != gt.pose.shape[1]:
        raise ValueError("pose dimensionality mismatch")
    diff = np.concatenate([gen.expression - gt.expression, gen.pose - gt.pose], axis=1)
    return float(np.linalg.norm(diff, axis=1).mean())


def stylesim_proxy(
    gen: MotionSequence,
    reference_speaker_clips: list[MotionSequence],
    probe: StyleCheckpoint,
) -> float:
    """Cosine between probe embedding of gen and the reference centroid."""
    if not reference_speaker_clips:
        raise ValueError("reference clip list is empty")
    e = embed_style(gen, probe)
    refs = np.stack([embed_style(c, probe) for c in reference_speaker_clips])
    centroid = refs.mean(axis=0)
    denom = np.linalg.norm(e) * np.linalg.norm(centroid)
    if denom == 0:
        return 0.0
    return float(np.dot(e, centroid) / denom)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class EvalReport:
    per_clip: dict[str, list[float]]
    aggregates: dict[str, float]
    config_hash: str = ""
    corpus_fingerprint: str = ""
    variant: str = ""
    seed: int = 0
    split: str = "test"
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_per_clip(cls, per_clip: dict[str, list[float]], **kwargs) -> "EvalReport":
        aggregates = {k: float(np.mean(v)) for k, v in per_clip.items()}
        return cls(per_clip=per_clip, aggregates=aggregates, **kwargs)

    def to_json_dict(self) -> dict:
        return asdict(self)


def _style_reference(manifest: CorpusManifest, entry) -> MotionSequence:
    """Deterministic same-speaker, different-content reference clip."""
    candidates = [
        e
        for e in manifest.entries
        if e.speaker_id == entry.speaker_id and e.content_id != entry.content_id
    ]
    if not candidates:
        raise ValueError(f"no style reference available for speaker {entry.speaker_id}")
    return manifest.sequence(candidates[0])


def _speaker_references(manifest: CorpusManifest, entry, limit: int = 4) -> list[MotionSequence]:
    refs = [
        manifest.sequence(e)
        for e in manifest.entries
        if e.speaker_id == entry.speaker_id and e.path != entry.path
    ][:limit]
    if not refs:
        raise ValueError(f"no reference clips for speaker {entry.speaker_id}")
    return refs


def evaluate_generation(
    manifest: CorpusManifest,
    diffusion_ckpt: DiffusionCheckpoint,
    style_ckpt: StyleCheckpoint,
    expert_ckpt: ExpertCheckpoint,
    probe_ckpt: StyleCheckpoint,
    split: str = "test",
    max_clips: int | None = None,
    seed: int = 0,
    variant: str = "full",
) -> EvalReport:
    """Generate for each clip of a split and score all four proxies."""
    partition = RegionPartition(
        upper_indices=tuple(manifest.config.upper_indices),
        lower_indices=tuple(manifest.config.lower_indices),
    )
    entries = manifest.by_split(split)
    if max_clips is not None:
        entries = entries[:max_clips]
    per_clip: dict[str, list[float]] = {m: [] for m in METRICS}
    for entry in entries:
        gt = manifest.sequence(entry)
        audio = manifest.audio(entry)
        ref = _style_reference(manifest, entry)
        gen, _ = sample_motion(audio, ref, diffusion_ckpt, style_ckpt, seed=seed)
        per_clip["mlmd_proxy"].append(mlmd_proxy(gen, gt, partition))
        per_clip["flmd_proxy"].append(flmd_proxy(gen, gt))
        per_clip["sync_proxy"].append(sync_confidence(expert_ckpt, audio, gen, partition))
        per_clip["stylesim_proxy"].append(
            stylesim_proxy(gen, _speaker_references(manifest, entry), probe_ckpt)
        )
    return EvalReport.from_per_clip(
        per_clip,
        config_hash=config_hash(asdict(diffusion_ckpt.config)),
        corpus_fingerprint=config_hash(asdict(manifest.config)),
        variant=variant,
        seed=seed,
        split=split,
    )


# ---------------------------------------------------------------------------
# Ablations


@dataclass(frozen=True)
class AblationSpec:
    variant: str
    description: str


ABLATION_VARIANTS = (
    AblationSpec("full", "complete pipeline"),
    AblationSpec("no_memory_bank", "stage-1 structural loss without memory banks"),
    AblationSpec("no_dis_module", "style training without the decoupling losses"),
    AblationSpec("no_triplet", "style training without the triplet loss"),
    AblationSpec("no_hscales", "diffusion without hierarchical modulation"),
)
_VARIANT_IDS = tuple(s.variant for s in ABLATION_VARIANTS)


@dataclass
class AblationResult:
    seed: int
    reports: dict[str, EvalReport]

    def ranking(self, metric: str) -> list[str]:
        """Variant ids ordered best-first on a metric (failed rows excluded)."""
        rows = [
            (v, r.aggregates[metric])
            for v, r in self.reports.items()
            if r.error is None
        ]
        rows.sort(key=lambda kv: kv[1], reverse=HIGHER_BETTER[metric])
        return [v for v, _ in rows]


def _train_variant_artifacts(
    manifest: CorpusManifest,
    seed: int,
    expert_config: ExpertConfig,
    semantic_config: SemanticConfig,
    style_config: StyleConfig,
    diffusion_config: DiffusionConfig,
):
    """Train every artifact needed by the five variants for one seed.

    Shared pieces are trained once: one expert, two semantic encoders (with
    and without banks), four style encoders, one independent style probe and
    five diffusion models.
    """
    expert = train_expert(manifest, dataclasses.replace(expert_config, seed=seed))
    semantic = train_semantic_encoder(
        manifest, expert, dataclasses.replace(semantic_config, seed=seed)
    )
    semantic_nobank = train_semantic_encoder(
        manifest, expert, dataclasses.replace(semantic_config, seed=seed, use_memory_bank=False)
    )
    sdse = {
        "full": train_sdse(manifest, semantic, dataclasses.replace(style_config, seed=seed)),
        "no_memory_bank": train_sdse(
            manifest, semantic_nobank, dataclasses.replace(style_config, seed=seed)
        ),
        "no_dis_module": train_sdse(
            manifest,
            semantic,
            dataclasses.replace(style_config, seed=seed, lam_orth=0.0, lam_hsic=0.0),
        ),
        "no_triplet": train_sdse(
            manifest, semantic, dataclasses.replace(style_config, seed=seed, use_triplet=False)
        ),
    }
    probe = train_sdse(manifest, semantic, dataclasses.replace(style_config, seed=seed + 1000))
    diffusion = {}
    for variant in _VARIANT_IDS:
        conditioning = sdse["full"] if variant in ("full", "no_hscales") else sdse[variant]
        cfg = dataclasses.replace(
            diffusion_config, seed=seed, use_hscales=variant != "no_hscales"
        )
        diffusion[variant] = train_diffusion(manifest, conditioning, cfg)
    return expert, sdse, probe, diffusion


def run_ablations(
    manifest: CorpusManifest,
    seeds: tuple[int, ...] = (0, 1, 2),
    out_dir: str | Path | None = None,
    expert_config: ExpertConfig = ExpertConfig(),
    semantic_config: SemanticConfig = SemanticConfig(),
    style_config: StyleConfig = StyleConfig(),
    diffusion_config: DiffusionConfig = DiffusionConfig(),
    max_clips: int | None = 16,
) -> list[AblationResult]:
    """Train and evaluate all five variants for each seed.

    A variant whose training or evaluation raises is recorded as a failed row
    (the exception text in ``EvalReport.error``) and the harness continues.
    """
    results = []
    for seed in seeds:
        reports: dict[str, EvalReport] = {}
        try:
            expert, sdse, probe, diffusion = _train_variant_artifacts(
                manifest, seed, expert_config, semantic_config, style_config, diffusion_config
            )
        except Exception:
            err = traceback.format_exc()
            for variant in _VARIANT_IDS:
                reports[variant] = EvalReport(
                    per_clip={}, aggregates={}, variant=variant, seed=seed, error=err
                )
            results.append(AblationResult(seed=seed, reports=reports))
            continue
        for variant in _VARIANT_IDS:
            conditioning = sdse["full"] if variant in ("full", "no_hscales") else sdse[variant]
            try:
                reports[variant] = evaluate_generation(
                    manifest,
                    diffusion[variant],
                    conditioning,
                    expert,
                    probe,
                    max_clips=max_clips,
                    seed=seed,
                    variant=variant,
                )
                reports[variant].extra = {
                    "speaker_probe_accuracy": conditioning.speaker_probe_accuracy,
                    "content_probe_accuracy": conditioning.content_probe_accuracy,
                }
            except Exception:
                reports[variant] = EvalReport(
                    per_clip={},
                    aggregates={},
                    variant=variant,
                    seed=seed,
                    error=traceback.format_exc(),
                )
        results.append(AblationResult(seed=seed, reports=reports))
    if out_dir is not None:
        write_ablation_outputs(results, out_dir)
    return results


def render_table(results: list[AblationResult]) -> str:
    """Text table shaped like an ablation comparison, one block per seed."""
    lines = []
    header = f"{'variant':<16}" + "".join(f"{m:>16}" for m in METRICS)
    for res in results:
        lines.append(f"seed {res.seed} (test split, parameter-space proxies)")
        lines.append(header)
        for variant in _VARIANT_IDS:
            rep = res.reports[variant]
            if rep.error is not None:
                lines.append(f"{variant:<16}{'FAILED':>16}")
                continue
            lines.append(
                f"{variant:<16}"
                + "".join(f"{rep.aggregates[m]:>16.4f}" for m in METRICS)
            )
        lines.append("")
    return "\n".join(lines)


def write_ablation_outputs(results: list[AblationResult], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = [
        {"seed": r.seed, "reports": {v: rep.to_json_dict() for v, rep in r.reports.items()}}
        for r in results
    ]
    (out / "ablations.json").write_text(json.dumps(payload, indent=2))
    (out / "ablations.txt").write_text(render_table(results))
    try:
        _plot_ablations(results, out / "ablations.svg")
    except Exception:
        pass  # plotting is best-effort; the JSON/table are the record


def _plot_ablations(results: list[AblationResult], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3.2))
    x = np.arange(len(_VARIANT_IDS))
    width = 0.8 / max(len(results), 1)
    for ax, metric in zip(axes, METRICS):
        for k, res in enumerate(results):
            vals = [
                res.reports[v].aggregates.get(metric, np.nan)
                if res.reports[v].error is None
                else np.nan
                for v in _VARIANT_IDS
            ]
            ax.bar(x + k * width, vals, width, label=f"seed {res.seed}")
        ax.set_title(metric)
        ax.set_xticks(x + width * (len(results) - 1) / 2)
        ax.set_xticklabels(_VARIANT_IDS, rotation=45, ha="right", fontsize=7)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
