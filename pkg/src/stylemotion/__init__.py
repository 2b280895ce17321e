"""Style-disentangled facial motion synthesis on a synthetic parameter corpus.

Pipeline: a synthetic corpus with known speaker-style and speech-content
factors; a contrastive audio-motion expert; a stage-1 semantic encoder
aligned to the expert's audio space through a memory-bank structural loss; a
stage-2 style encoder disentangled from semantics; a conditional diffusion
transformer with dual cross-attention and per-region hierarchical
modulation; and a proxy-metric evaluation suite with an ablation harness.
"""

from .motion import (
    MotionFrame,
    MotionSequence,
    RegionPartition,
    SmoothingSkippedWarning,
    savgol_smooth,
    split_regions,
    merge_regions,
    save_sequence,
    load_sequence,
)
from .corpus import (
    CorpusConfig,
    CorpusManifest,
    CorpusEntry,
    PseudoAudioFeatures,
    SpeakerStyle,
    ContentScript,
    sample_speaker,
    sample_script,
    render_motion,
    build_corpus,
    load_manifest,
    load_audio,
)
from .expert import (
    ExpertConfig,
    ExpertCheckpoint,
    train_expert,
    embed_audio,
    embed_motion,
    sync_confidence,
    save_expert,
    load_expert,
)
from .semantic import (
    SemanticConfig,
    SemanticCheckpoint,
    MemoryBankPair,
    redundancy_scores,
    select_replace_indices,
    update_banks,
    global_structural_loss,
    train_semantic_encoder,
    embed_semantic,
    save_semantic,
    load_semantic,
)
from .style import (
    StyleConfig,
    StyleCheckpoint,
    attention_pool,
    hsic,
    decouple_loss,
    triplet_loss,
    embed_style,
    train_sdse,
    probe_accuracies,
    save_style,
    load_style,
)
from .diffusion import (
    NoiseSchedule,
    linear_schedule,
    ConditionBundle,
    ModulationTelemetry,
    DiffusionConfig,
    DiffusionCheckpoint,
    forward_diffuse,
    denoising_loss,
    region_projection_scores,
    dominance,
    modulate,
    train_diffusion,
    sample_motion,
    save_diffusion,
    load_diffusion,
)
from .evaluate import (
    EvalReport,
    AblationSpec,
    ABLATION_VARIANTS,
    mlmd_proxy,
    flmd_proxy,
    stylesim_proxy,
    evaluate_generation,
    run_ablations,
    render_table,
)
from .config import RunConfig, ConfigError, load_run_config
from .nets import TrainingError

__version__ = "0.1.0"
