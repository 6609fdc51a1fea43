"""Command-line entry point: reproducible experiment runs.

Subcommands: synth, train, eval, perturb, point, export-attn. Every run
resolves its configuration (file values overridden by flags), writes the
resolved config plus a run manifest into a fresh output directory, and
exits 0 on success. Failures print one machine-parseable JSON line to
stderr and exit 2 (configuration), 3 (data), or 4 (runtime).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from . import tensor as tt
from .data import SynthConfig, generate_synthetic, load_dataset
from .errors import (ConfigurationError, ContractError, DataLoadError,
                     DimensionError, FormatError, StanlabError)
from .explain import (PerturbConfig, dataset_perturbation_curve,
                      export_attention, pointing_game_mae)
from .metrics import compute_all
from .model import (StanConfig, forward, load_checkpoint, predict_proba,
                    save_checkpoint)
from .training import TrainConfig, train

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config file {p}: {exc}") from exc


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigurationError(f"config section {name!r} must be a table/object")
    return dict(sec)


def _build(cls, section: dict, overrides: dict, what: str):
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        obj = cls(**merged)
    except TypeError as exc:
        raise ConfigurationError(f"bad {what} settings: {exc}") from exc
    obj.validate()
    return obj


def _prepare_run_dir(out: str | None, command: str) -> Path:
    run_dir = Path(out) if out else Path("runs") / command
    if run_dir.exists() and any(run_dir.iterdir()):
        raise ConfigurationError(
            f"run directory {run_dir} already exists and is not empty")
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_run_manifest(run_dir: Path, command: str, inputs: dict,
                        config: dict, seed: int | None) -> None:
    doc = {"command": command, "inputs": inputs, "config": config,
           "seed": seed, "version": __version__}
    (run_dir / "run_manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _model_config_for(manifest, splits, doc: dict, args) -> StanConfig:
    clip = splits["train"][0] if splits.get("train") else next(
        c for v in splits.values() for c in v)
    t, d_a = clip.audio.shape
    _, h, w, d_v = clip.visual.shape
    section = _section(doc, "model")
    section.setdefault("k", manifest.k)
    section.setdefault("t", t)
    section.setdefault("h", h)
    section.setdefault("w", w)
    section.setdefault("d_a", d_a)
    section.setdefault("d_v", d_v)
    section.setdefault("d", 32)
    overrides = {"mode": getattr(args, "mode", None)}
    return _build(StanConfig, section, overrides, "model")


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    doc = _load_config_file(args.config)
    cfg = _build(SynthConfig, _section(doc, "synth"), {"seed": args.seed}, "synth")
    run_dir = _prepare_run_dir(args.out, "synth")
    manifest = generate_synthetic(cfg, run_dir)
    _write_run_manifest(run_dir, "synth", {}, {"synth": asdict(cfg)}, cfg.seed)
    counts = {s: len(v) for s, v in manifest.splits.items()}
    print(f"dataset '{manifest.name}' k={manifest.k} clips={counts} -> {run_dir}")
    return 0


def cmd_train(args) -> int:
    doc = _load_config_file(args.config)
    manifest, splits = load_dataset(args.manifest)
    stan_cfg = _model_config_for(manifest, splits, doc, args)
    train_cfg = _build(TrainConfig, _section(doc, "train"), {"seed": args.seed}, "train")
    run_dir = _prepare_run_dir(args.out, "train")

    result = train(splits, stan_cfg, train_cfg)

    ckpt = run_dir / "checkpoint.stan"
    save_checkpoint(ckpt, result.params, stan_cfg)
    with open(run_dir / "train_log.jsonl", "w", encoding="utf-8") as f:
        for entry in result.log:
            f.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
    resolved = {"model": stan_cfg.to_dict(), "train": asdict(train_cfg)}
    (run_dir / "config.resolved.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_run_manifest(run_dir, "train", {"manifest": str(args.manifest)},
                        resolved, train_cfg.seed)
    last = result.log[-1]
    best = "" if result.best_epoch is None else f" best_epoch={result.best_epoch}"
    print(f"trained {stan_cfg.mode} {train_cfg.epochs} epochs "
          f"loss={last.loss_total:.4f}{best} -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    params, stan_cfg = load_checkpoint(args.checkpoint)
    manifest, splits = load_dataset(args.manifest)
    if args.split not in splits:
        raise DataLoadError(f"manifest has no split {args.split!r}")
    clips = splits[args.split]
    labels = np.stack([c.labels for c in clips])
    probs = predict_proba(clips, params, stan_cfg)
    report = compute_all(probs, labels)

    run_dir = _prepare_run_dir(args.out, "eval")
    (run_dir / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (run_dir / "metrics.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    _write_run_manifest(run_dir, "eval",
                        {"checkpoint": str(args.checkpoint),
                         "manifest": str(args.manifest), "split": args.split},
                        {"model": stan_cfg.to_dict()}, None)
    print(report.to_table())
    return 0


def cmd_perturb(args) -> int:
    doc = _load_config_file(args.config)
    params, stan_cfg = load_checkpoint(args.checkpoint)
    manifest, splits = load_dataset(args.manifest)
    if args.split not in splits:
        raise DataLoadError(f"manifest has no split {args.split!r}")
    clips = splits[args.split]
    if args.limit:
        clips = clips[:args.limit]

    section = _section(doc, "perturb")
    if args.sigmas:
        try:
            section["sigmas"] = tuple(float(s) for s in args.sigmas.split(","))
        except ValueError as exc:
            raise ConfigurationError(f"bad --sigmas value: {args.sigmas!r}") from exc
    targets = ("relevant", "irrelevant") if args.target == "both" else (args.target,)

    run_dir = _prepare_run_dir(args.out, "perturb")
    resolved = {}
    for target in targets:
        cfg = _build(PerturbConfig, section,
                     {"seed": args.seed, "target": target}, "perturb")
        curve = dataset_perturbation_curve(clips, params, stan_cfg, cfg)
        curve.to_csv(run_dir / f"perturb_{target}.csv")
        resolved[target] = asdict(cfg)
        print(f"{target}: tvd(sigma={cfg.sigmas[-1]}) = {curve.mean_tvd[-1]:.4f} "
              f"over {len(clips)} clips")
    _write_run_manifest(run_dir, "perturb",
                        {"checkpoint": str(args.checkpoint),
                         "manifest": str(args.manifest), "split": args.split},
                        {"perturb": resolved}, args.seed)
    return 0


def cmd_point(args) -> int:
    params, stan_cfg = load_checkpoint(args.checkpoint)
    manifest, splits = load_dataset(args.manifest)
    if args.split not in splits:
        raise DataLoadError(f"manifest has no split {args.split!r}")
    clips = [c for c in splits[args.split] if c.grounding is not None]
    if not clips:
        raise DataLoadError(f"split {args.split!r} has no grounding masks")

    maes = []
    baseline = []
    with tt.no_grad():
        for clip in clips:
            out = forward(clip, params, stan_cfg)
            a_t = out.attention.a_t.numpy()
            maes.append(pointing_game_mae(a_t, clip.grounding, args.attention))
            baseline.append(pointing_game_mae(
                np.full_like(clip.grounding, 0.5), clip.grounding, args.attention))
    report = {"split": args.split, "mode": args.attention,
              "mae": float(np.mean(maes)),
              "constant_half_baseline": float(np.mean(baseline)),
              "n": len(clips)}

    run_dir = _prepare_run_dir(args.out, "point")
    (run_dir / "pointing.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_run_manifest(run_dir, "point",
                        {"checkpoint": str(args.checkpoint),
                         "manifest": str(args.manifest), "split": args.split},
                        {"mode": args.attention}, None)
    print(f"pointing-game MAE ({args.attention}) on {args.split}: "
          f"{report['mae']:.4f} (constant-0.5 baseline {report['constant_half_baseline']:.4f}, "
          f"n={report['n']})")
    return 0


def cmd_export_attn(args) -> int:
    params, stan_cfg = load_checkpoint(args.checkpoint)
    manifest, splits = load_dataset(args.manifest)
    clip = next((c for v in splits.values() for c in v if c.id == args.clip), None)
    if clip is None:
        raise DataLoadError(f"no clip with id {args.clip!r} in the manifest")
    run_dir = _prepare_run_dir(args.out, "export-attn")
    with tt.no_grad():
        out = forward(clip, params, stan_cfg)
    files = export_attention(clip.id, out.attention, run_dir,
                             size=(args.size, args.size))
    _write_run_manifest(run_dir, "export-attn",
                        {"checkpoint": str(args.checkpoint),
                         "manifest": str(args.manifest), "clip": args.clip},
                        {"size": args.size}, None)
    print(f"wrote {len(files)} attention files to {run_dir}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stanlab",
        description="Train and probe the space-time attention event recognizer.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default=True):
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", help="run directory (must be empty or absent)")

    p = sub.add_parser("synth", help="generate a planted-event dataset")
    common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["audio", "visual", "audio-visual"])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="compute recognition metrics for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("perturb", help="perturbation-robustness curves")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--target", choices=["relevant", "irrelevant", "both"],
                   default="both")
    p.add_argument("--sigmas", help="comma-separated noise levels, e.g. 0,0.5,1")
    p.add_argument("--limit", type=int, default=0,
                   help="cap the number of clips (0 = all)")
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("point", help="pointing game against grounding masks")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--attention", choices=["soft", "binary"], default="soft")
    p.set_defaults(fn=cmd_point)

    p = sub.add_parser("export-attn", help="write one clip's attention maps")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--clip", required=True, help="clip id")
    p.add_argument("--size", type=int, default=224, help="PGM upsample size")
    p.set_defaults(fn=cmd_export_attn)
    return parser


def _fail(category: str, exc: Exception, code: int) -> int:
    sys.stderr.write(json.dumps(
        {"error": category, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, DimensionError, ContractError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (DataLoadError, FormatError, FileNotFoundError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except StanlabError as exc:
        return _fail("runtime", exc, EXIT_RUNTIME)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        return _fail("runtime", exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
