"""Command-line entry point orchestrating the full pipeline.

Subcommands: synth-data, train {expert|semantic|sdse|diffusion}, generate,
eval, ablate. Every artifact lands under ``<output_root>/<stage>/<hash>/``
where the hash folds in the configuration of the stage and everything
upstream of it, so retraining with changed settings never overwrites old
artifacts. Exit codes: 0 success, 1 operational error, 2 refused overwrite.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .checkpoint import config_hash
from .config import RunConfig, ConfigError, load_run_config, default_config_dict
from .corpus import build_corpus, load_manifest, load_audio
from .motion import load_sequence, save_sequence
from .expert import train_expert, load_expert, save_expert
from .semantic import train_semantic_encoder, load_semantic, save_semantic
from .style import train_sdse, load_style, save_style
from .diffusion import sample_motion, train_diffusion, load_diffusion, save_diffusion
from .evaluate import evaluate_generation, run_ablations, render_table

__all__ = ["main"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REFUSED = 2


class CliError(RuntimeError):
    """Operational failure; message is printed and exit code 1 returned."""


class RefusedOverwrite(RuntimeError):
    """Target artifacts exist and --force was not given; exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are operational errors (exit 1)
        raise CliError(f"argument error: {message}")


def _build_parser() -> _Parser:
    p = _Parser(prog="stylemotion", description=__doc__)
    p.add_argument("--config", help="run config JSON (defaults used when omitted)")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("show-config", help="print the fully merged configuration")

    sp = sub.add_parser("synth-data", help="generate the synthetic corpus")
    sp.add_argument("--force", action="store_true")

    tp = sub.add_parser("train", help="train one pipeline stage")
    tp.add_argument("stage", choices=["expert", "semantic", "sdse", "diffusion"])
    tp.add_argument("--force", action="store_true")
    tp.add_argument("--seed", type=int, help="override the stage seed")
    tp.add_argument(
        "--as-probe",
        action="store_true",
        help="(sdse only) train the independent style probe used by eval",
    )

    gp = sub.add_parser("generate", help="sample motion for an audio clip")
    gp.add_argument("--audio", required=True, help="clip directory or audio.f32 file")
    gp.add_argument("--style-ref", required=True, help="style reference clip directory")
    gp.add_argument("--out", required=True)
    gp.add_argument("--steps", type=int, default=None)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--force", action="store_true")
    gp.add_argument("--allow-mismatch", action="store_true")
    gp.add_argument("--plot", action="store_true", help="write trajectory plots")

    ep = sub.add_parser("eval", help="evaluate generation on the test split")
    ep.add_argument("--split", default="test")
    ep.add_argument("--max-clips", type=int, default=None)
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--force", action="store_true")
    ep.add_argument("--allow-mismatch", action="store_true")

    ap = sub.add_parser("ablate", help="train and evaluate all ablation variants")
    ap.add_argument("--seeds", default=None, help="comma-separated, e.g. 0,1,2")
    ap.add_argument("--max-clips", type=int, default=16)
    ap.add_argument("--force", action="store_true")
    return p


# ---------------------------------------------------------------------------
# helpers


def _require(path: Path, what: str, hint: str) -> Path:
    if not path.exists():
        raise CliError(f"missing {what} at {path} — {hint}")
    return path


def _check_target(directory: Path, force: bool) -> Path:
    if directory.exists() and any(directory.iterdir()) and not force:
        raise RefusedOverwrite(
            f"{directory} already contains artifacts; pass --force to overwrite"
        )
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _load_corpus(cfg: RunConfig):
    corpus_dir = cfg.stage_dir("corpus")
    _require(
        corpus_dir / "manifest.json",
        "corpus manifest",
        "run `stylemotion synth-data` first",
    )
    return load_manifest(corpus_dir)


def _check_fingerprints(cfg: RunConfig, allow_mismatch: bool, **ckpts) -> None:
    expected = config_hash(asdict(cfg.corpus))
    for name, ckpt in ckpts.items():
        fp = getattr(ckpt, "corpus_fingerprint", "")
        if fp and fp != expected:
            msg = (
                f"{name} checkpoint was trained on a different corpus "
                f"(fingerprint {fp} != {expected})"
            )
            if not allow_mismatch:
                raise CliError(msg + "; pass --allow-mismatch to proceed")
            print(f"warning: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_show_config(cfg: RunConfig, args) -> int:
    merged = default_config_dict()
    for section in ("corpus", "expert", "semantic", "style", "diffusion"):
        merged[section] = asdict(getattr(cfg, section))
    merged["output_root"] = cfg.output_root
    merged["ablation_seeds"] = list(cfg.ablation_seeds)
    print(json.dumps(merged, indent=2))
    return EXIT_OK


def cmd_synth_data(cfg: RunConfig, args) -> int:
    target = cfg.stage_dir("corpus")
    if (target / "manifest.json").exists() and not args.force:
        raise RefusedOverwrite(
            f"corpus already exists at {target}; pass --force to regenerate"
        )
    target.mkdir(parents=True, exist_ok=True)
    manifest = build_corpus(cfg.corpus, target)
    print(f"wrote {len(manifest.entries)} clips to {target}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    if args.as_probe and args.stage != "sdse":
        raise CliError("--as-probe only applies to the sdse stage")
    manifest = _load_corpus(cfg)
    stage = "style_probe" if args.as_probe else args.stage

    def stage_config(name):
        c = getattr(cfg, name)
        if args.seed is not None:
            c = dataclasses.replace(c, seed=args.seed)
        return c

    if args.stage == "expert":
        target = _check_target(cfg.stage_dir("expert"), args.force)
        ckpt = train_expert(manifest, stage_config("expert"))
        save_expert(ckpt, target)
        curve = {"final_loss": ckpt.final_loss, "val_sync_accuracy": ckpt.val_sync_accuracy}
    elif args.stage == "semantic":
        expert = load_expert(
            _require(cfg.stage_dir("expert"), "expert checkpoint", "semantic training requires the expert stage")
        )
        target = _check_target(cfg.stage_dir("semantic"), args.force)
        ckpt = train_semantic_encoder(manifest, expert, stage_config("semantic"))
        save_semantic(ckpt, target)
        curve = {
            "final_loss": ckpt.final_loss,
            "val_structural_loss": ckpt.val_structural_loss,
            "val_structural_loss_random_init": ckpt.val_structural_loss_random_init,
        }
    elif args.stage == "sdse":
        semantic = load_semantic(
            _require(cfg.stage_dir("semantic"), "semantic checkpoint", "sdse training requires the semantic stage")
        )
        style_cfg = stage_config("style")
        if args.as_probe:
            style_cfg = dataclasses.replace(
                style_cfg, seed=style_cfg.seed + cfg.probe_seed_offset
            )
        target = _check_target(cfg.stage_dir(stage), args.force)
        ckpt = train_sdse(manifest, semantic, style_cfg)
        save_style(ckpt, target)
        curve = {
            "final_loss": ckpt.final_loss,
            "speaker_probe_accuracy": ckpt.speaker_probe_accuracy,
            "content_probe_accuracy": ckpt.content_probe_accuracy,
        }
    else:  # diffusion
        _require(cfg.stage_dir("expert"), "expert checkpoint", "diffusion training requires the expert stage")
        style = load_style(
            _require(cfg.stage_dir("sdse"), "sdse checkpoint", "diffusion training requires the sdse stage")
        )
        target = _check_target(cfg.stage_dir("diffusion"), args.force)
        ckpt = train_diffusion(manifest, style, stage_config("diffusion"))
        save_diffusion(ckpt, target)
        curve = {"val_losses": ckpt.val_losses}
    (target / "training_curve.json").write_text(json.dumps(curve, indent=2))
    print(f"{stage} checkpoint written to {target}")
    return EXIT_OK


def cmd_generate(cfg: RunConfig, args) -> int:
    style = load_style(
        _require(cfg.stage_dir("sdse"), "sdse checkpoint", "train the sdse stage first")
    )
    diffusion = load_diffusion(
        _require(cfg.stage_dir("diffusion"), "diffusion checkpoint", "train the diffusion stage first")
    )
    _check_fingerprints(cfg, args.allow_mismatch, sdse=style, diffusion=diffusion)
    if args.steps is not None and args.steps != diffusion.config.T_steps:
        raise CliError(
            f"--steps {args.steps} not supported: only the full ancestral chain "
            f"({diffusion.config.T_steps} steps) is implemented"
        )
    audio_path = Path(args.audio)
    if audio_path.is_dir():
        audio_path = audio_path / "audio.f32"
    audio = load_audio(_require(audio_path, "audio features", "expected an audio.f32 file"), cfg.corpus)
    style_ref = load_sequence(
        _require(Path(args.style_ref), "style reference clip", "expected a clip directory")
    )
    out = _check_target(Path(args.out), args.force)
    seq, telemetry = sample_motion(audio, style_ref, diffusion, style, seed=args.seed)
    save_sequence(seq, out)
    (out / "telemetry.json").write_text(json.dumps(telemetry.to_json_dict(), indent=2))
    if args.plot:
        _plot_trajectories(seq, out / "trajectories.svg")
    print(f"generated {seq.num_frames} frames to {out}")
    return EXIT_OK


def _plot_trajectories(seq, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for d in range(seq.expression.shape[1]):
        ax1.plot(seq.expression[:, d], lw=0.8, label=f"e{d}")
    for d in range(seq.pose.shape[1]):
        ax2.plot(seq.pose[:, d], lw=0.8, label=f"p{d}")
    ax1.set_ylabel("expression")
    ax2.set_ylabel("pose")
    ax2.set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_eval(cfg: RunConfig, args) -> int:
    manifest = _load_corpus(cfg)
    expert = load_expert(
        _require(cfg.stage_dir("expert"), "expert checkpoint", "train the expert stage first")
    )
    style = load_style(
        _require(cfg.stage_dir("sdse"), "sdse checkpoint", "train the sdse stage first")
    )
    diffusion = load_diffusion(
        _require(cfg.stage_dir("diffusion"), "diffusion checkpoint", "train the diffusion stage first")
    )
    probe = load_style(
        _require(
            cfg.stage_dir("style_probe"),
            "probe checkpoint",
            "train it with `stylemotion train sdse --as-probe`",
        )
    )
    _check_fingerprints(
        cfg, args.allow_mismatch, expert=expert, sdse=style, diffusion=diffusion, probe=probe
    )
    report = evaluate_generation(
        manifest, diffusion, style, expert, probe,
        split=args.split, max_clips=args.max_clips, seed=args.seed,
    )
    out = Path(cfg.output_root) / "eval" / cfg.stage_hash("diffusion")
    if (out / "eval_report.json").exists() and not args.force:
        raise RefusedOverwrite(f"{out} already holds a report; pass --force")
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(json.dumps(report.to_json_dict(), indent=2))
    print(json.dumps(report.aggregates, indent=2))
    print(f"report written to {out}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    manifest = _load_corpus(cfg)
    seeds = cfg.ablation_seeds
    if args.seeds:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(","))
        except ValueError as exc:
            raise CliError(f"bad --seeds value: {exc}") from exc
    out = Path(cfg.output_root) / "ablations" / cfg.stage_hash("diffusion")
    if (out / "ablations.json").exists() and not args.force:
        raise RefusedOverwrite(f"{out} already holds ablation results; pass --force")
    results = run_ablations(
        manifest,
        seeds=seeds,
        out_dir=out,
        expert_config=cfg.expert,
        semantic_config=cfg.semantic,
        style_config=cfg.style,
        diffusion_config=cfg.diffusion,
        max_clips=args.max_clips,
    )
    print(render_table(results))
    print(f"results written to {out}")
    return EXIT_OK


_COMMANDS = {
    "show-config": cmd_show_config,
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_run_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except RefusedOverwrite as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (CliError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
