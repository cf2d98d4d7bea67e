"""Command-line entry points.

Subcommands::

    train          fit a model from a key=value config file
    prune          magnitude-prune a finished run (optionally retrain)
    sweep          grid over penalty strength x sparsity target x seeds
    verify-theory  sample random problem instances and check the convexity
                   certificate for the jointly-trained penalty
    analyze        sparsity/representation reports for a finished run

Exit codes: 0 success; 1 usage or configuration problems; 2 numeric failure
(training divergence, solver breakdown, a convexity counterexample); 3 file
or format problems.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, config, figures, pruning, theory
from .errors import ConfigError, FormatError, SolverError, TrainingDiverged
from .models import (build_model, collect_activations, evaluate,
                     load_checkpoint, save_checkpoint)
from .optim import RunRecord, train
from .penalties import TRAINABLE_LAMBDA_KINDS, PenaltyConfig


def _parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _load_run_config(run_dir: str) -> dict:
    path = os.path.join(run_dir, "config.txt")
    if not os.path.exists(path):
        raise ConfigError(f"{run_dir} has no config.txt; is it a run directory?")
    return config.resolve(config.read_config(path))


def _write_run(run_dir: str, cfg: dict, model, record: RunRecord) -> None:
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.txt"), "w") as f:
        f.write(config.echo_text(cfg))
    record.write(run_dir)
    save_checkpoint(model, os.path.join(run_dir, "model.ckpt"))
    figures.training_curves(record.epochs, os.path.join(run_dir, "curves.png"))


def _print_summary(record: RunRecord) -> None:
    s = record.summary
    parts = [f"epochs={s['epochs']}", f"train_loss={s['final_train_loss']:.4f}"]
    if s.get("final_train_acc") is not None:
        parts.append(f"train_acc={s['final_train_acc']:.4f}")
    if s.get("final_test_acc") is not None:
        parts.append(f"test_acc={s['final_test_acc']:.4f}")
    if s.get("final_sparsity_at_threshold") is not None:
        parts.append(f"sparsity={s['final_sparsity_at_threshold']:.4f}")
    parts.append(f"config_hash={s['config_hash']}")
    print(" ".join(parts))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = config.resolve(config.read_config(args.config), _parse_overrides(args.set))
    spec = config.build_spec(cfg)
    model = build_model(spec, seed=cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(model, os.path.join(args.out, "init.ckpt"))

    train_set, test_set = config.build_datasets(cfg)
    model, record = train(
        model, train_set, config.build_penalty(cfg), config.build_optim(cfg),
        test_set=test_set, report_threshold=cfg["report_threshold"],
    )
    _write_run(args.out, cfg, model, record)

    if cfg["capture_probe"]:
        probe = config.probe_inputs(cfg, train_set)
        acts = collect_activations(model, probe)
        np.savez(os.path.join(args.out, "probe_activations.npz"),
                 **{f"layer_{i}": a for i, a in enumerate(acts)})
    _print_summary(record)
    print(f"run directory: {args.out}")
    return 0


# ---------------------------------------------------------------------------
# prune
# ---------------------------------------------------------------------------


def cmd_prune(args) -> int:
    if (args.target is None) == (args.threshold is None):
        raise ConfigError("pass exactly one of --target or --threshold")
    cfg = _load_run_config(args.run_dir)
    model = load_checkpoint(os.path.join(args.run_dir, "model.ckpt"))

    if args.target is not None:
        mask = pruning.global_mask(model, args.target, stage=args.mode)
    else:
        mask = pruning.mask_from_threshold(
            model.penalized_magnitudes(), args.threshold, stage=args.mode)

    out = args.out or os.path.join(args.run_dir, f"prune_{args.mode}")
    os.makedirs(out, exist_ok=True)
    pruning.save_mask(os.path.join(out, "mask.bin"), mask)

    if args.mode == "threshold":
        pruning.apply_mask(model, mask)
        save_checkpoint(model, os.path.join(out, "model.ckpt"))
        _, test_set = config.build_datasets(cfg)
        line = f"mode=threshold sparsity={mask.sparsity():.4f}"
        if test_set is not None:
            test_loss, test_acc = evaluate(model, test_set)
            line += f" test_loss={test_loss:.4f}"
            if test_acc is not None:
                line += f" test_acc={test_acc:.4f}"
        print(line)
        print(f"pruned model: {out}")
        return 0

    # lottery / random: rewind or redraw, then masked retrain (penalty off)
    if args.mode == "lottery":
        init_path = os.path.join(args.run_dir, "init.ckpt")
        if not os.path.exists(init_path):
            raise ConfigError(
                f"{args.run_dir} has no init.ckpt; lottery rewind needs the "
                "initial weights saved by `train`"
            )
        retrain_model = load_checkpoint(init_path)
    else:
        retrain_model = build_model(config.build_spec(cfg), seed=cfg["seed"] + 1)
    pruning.apply_mask(retrain_model, mask)

    train_set, test_set = config.build_datasets(cfg)
    ocfg = config.build_optim(cfg)
    retrain_model, record = train(
        retrain_model, train_set, PenaltyConfig(kind="none"), ocfg,
        test_set=test_set, report_threshold=cfg["report_threshold"],
    )
    _write_run(out, cfg, retrain_model, record)
    print(f"mode={args.mode} sparsity={mask.sparsity():.4f}")
    _print_summary(record)
    print(f"retrained run directory: {out}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    raw = config.read_config(args.config)
    overrides = _parse_overrides(args.set)
    base = config.resolve(raw, overrides)
    if base["penalty"] == "none":
        raise ConfigError("sweep needs a penalty kind in the base config")
    xis = [float(v) for v in args.xi.split(",") if v.strip()]
    targets = [float(v) for v in args.targets.split(",") if v.strip()]
    seeds = [int(v) for v in args.seeds.split(",") if v.strip()]
    if not xis or not targets or not seeds:
        raise ConfigError("--xi, --targets, and --seeds all need at least one value")

    os.makedirs(args.out, exist_ok=True)
    rows = []
    scores = np.full((len(xis), len(targets), len(seeds)), np.nan)
    for si, seed in enumerate(seeds):
        for xi_i, xi in enumerate(xis):
            over = dict(overrides)
            over["xi"] = repr(xi)
            if base["penalty"] in TRAINABLE_LAMBDA_KINDS:
                over["psi"] = repr(xi)
            over["seed"] = str(seed)
            cfg = config.resolve(raw, over)
            train_set, test_set = config.build_datasets(cfg)
            if test_set is None:
                raise ConfigError("sweep needs a test split to score against")
            model = build_model(config.build_spec(cfg), seed=cfg["seed"])
            model, record = train(
                model, train_set, config.build_penalty(cfg), config.build_optim(cfg),
                test_set=test_set, report_threshold=cfg["report_threshold"],
            )
            for ti, target in enumerate(targets):
                pruned = model.copy()
                mask = pruning.global_mask(pruned, target)
                pruning.apply_mask(pruned, mask)
                test_loss, test_acc = evaluate(pruned, test_set)
                score = test_acc if test_acc is not None else -test_loss
                scores[xi_i, ti, si] = score
                rows.append((xi, target, seed, mask.sparsity(),
                             float(test_loss),
                             float("nan") if test_acc is None else float(test_acc)))
                print(f"xi={xi:g} target={target:g} seed={seed} "
                      f"test_loss={test_loss:.4f}"
                      + ("" if test_acc is None else f" test_acc={test_acc:.4f}"))

    import hashlib
    grid_doc = config.echo_text(base) + f"xi_grid={xis}\ntargets={targets}\nseeds={seeds}\n"
    base_hash = hashlib.sha256(grid_doc.encode()).hexdigest()[:12]
    analysis.write_metric_csv(
        os.path.join(args.out, "sweep.csv"), "sweep", base_hash,
        ["xi", "target", "seed", "sparsity", "test_loss", "test_acc"], rows)
    medians = np.median(scores, axis=2)
    analysis.write_metric_csv(
        os.path.join(args.out, "sweep_medians.csv"), "sweep_medians", base_hash,
        ["xi"] + [f"target_{t:g}" for t in targets],
        [(xi, *[float(medians[i, j]) for j in range(len(targets))])
         for i, xi in enumerate(xis)])
    figures.sweep_heatmap(xis, targets, medians,
                          os.path.join(args.out, "sweep_heatmap.png"))
    print(f"sweep results: {args.out}")
    return 0


# ---------------------------------------------------------------------------
# verify-theory
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    report = theory.verify_convexity(
        samples=args.samples, seed=args.seed,
        tol=args.tol, loss_scale=args.loss_scale,
    )
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    ok = not report["counterexamples"] and report["weyl_bounds_hold"]
    print(f"instances inside region: {report['inside_tested']} "
          f"(rejected draws: {report['rejected_draws']})")
    if report["min_eig_inside"] is not None:
        print(f"worst relative eigenvalue inside: {report['min_eig_inside']:.3e}")
    print(f"interlacing bounds hold: {report['weyl_bounds_hold']}")
    print(f"counterexamples: {len(report['counterexamples'])}")
    print("certificate check:", "PASS" if ok else "FAIL")
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

METRICS = ("monotonic", "layers", "energy", "overlap", "gap", "timeline")


def _analyze_monotonic(out, model, chash):
    lam = model.penalized_lambdas()
    mags = model.penalized_magnitudes()
    both = analysis.monotonic_trend_both(lam, mags)
    analysis.write_metric_csv(
        os.path.join(out, "monotonic.csv"), "monotonic", chash,
        ["pairing", "spearman"],
        [("lambda_vs_magnitude", both["spearman_lambda"]),
         ("h_lambda_vs_magnitude", both["spearman_h"])])
    figures.lambda_magnitude_scatter(lam, mags, os.path.join(out, "lambda_scatter.png"))
    print(f"monotonic: spearman(lambda, |w|)={both['spearman_lambda']:.4f} "
          f"spearman(h, |w|)={both['spearman_h']:.4f}")


def _analyze_layers(out, model, chash, threshold):
    idx, frac, size = analysis.layer_sparsity_profile(model, threshold)
    analysis.write_metric_csv(
        os.path.join(out, "layer_sparsity.csv"), "layer_sparsity", chash,
        ["layer", "fraction", "size"],
        list(zip(idx.tolist(), frac.tolist(), size.tolist())))
    figures.layer_profile_bars(idx, frac, os.path.join(out, "layer_sparsity.png"))
    print("layer sparsity: " + " ".join(f"{i}:{f:.3f}" for i, f in zip(idx, frac)))


def _analyze_energy(out, run_dir, chash, level):
    probe_path = os.path.join(run_dir, "probe_activations.npz")
    if not os.path.exists(probe_path):
        raise ConfigError(
            f"{run_dir} has no probe_activations.npz; rerun training with "
            "capture_probe=true"
        )
    with np.load(probe_path) as npz:
        layers = sorted(npz.files, key=lambda k: int(k.split("_")[1]))
        profiles, rows = {}, []
        for name in layers:
            prof = analysis.feature_energy(npz[name])
            comp = analysis.components_for(prof, level)
            profiles[name] = prof.fractions
            rows.append((int(name.split("_")[1]), comp, prof.fractions.size,
                         int(prof.degenerate)))
    analysis.write_metric_csv(
        os.path.join(out, "feature_energy.csv"), "feature_energy", chash,
        ["layer", f"components_{level:g}", "features", "degenerate"], rows)
    figures.energy_curve(profiles, os.path.join(out, "feature_energy.png"), level)
    print("feature energy components: "
          + " ".join(f"{r[0]}:{r[1]}/{r[2]}" for r in rows))


def _analyze_overlap(out, model, chash, compare_dir, threshold):
    other = load_checkpoint(os.path.join(compare_dir, "model.ckpt"))
    a = model.penalized_magnitudes() > threshold
    b = other.penalized_magnitudes() > threshold
    if a.size != b.size:
        raise ConfigError(
            f"cannot compare runs: {a.size} vs {b.size} penalized weights"
        )
    j = analysis.sparsity_overlap(a, b)
    analysis.write_metric_csv(
        os.path.join(out, "sparsity_overlap.csv"), "sparsity_overlap", chash,
        ["compare_run", "jaccard_zero_sets"], [(compare_dir, j)])
    print(f"sparsity overlap (zero sets): {j:.4f}")


def _analyze_gap(out, epochs_rows, chash):
    for row in epochs_rows:
        if row.get("train_acc") is None or row.get("test_acc") is None:
            raise ConfigError(
                "generalization gap needs a classification run with a test split"
            )
    gaps, final = analysis.generalization_gap(epochs_rows)
    analysis.write_metric_csv(
        os.path.join(out, "generalization_gap.csv"), "generalization_gap", chash,
        ["epoch", "gap"],
        [(r["epoch"], float(g)) for r, g in zip(epochs_rows, gaps)])
    print(f"final generalization gap: {final:.4f}")


def _analyze_timeline(out, run_dir, chash, percentile):
    snap_path = os.path.join(run_dir, "snapshots.npz")
    if not os.path.exists(snap_path):
        raise ConfigError(
            f"{run_dir} has no snapshots.npz; rerun training with "
            "snapshot_every>0"
        )
    with np.load(snap_path) as npz:
        epochs, absw = npz["epochs"], npz["absw"]
    ep, frac, tau = analysis.sparsity_during_training(
        epochs, absw, absw[-1], percentile)
    analysis.write_metric_csv(
        os.path.join(out, "sparsity_timeline.csv"), "sparsity_timeline", chash,
        ["epoch", "fraction", "tau"],
        [(int(e), float(f), float(tau)) for e, f in zip(ep, frac)])
    figures.sparsity_timeline(ep, frac, os.path.join(out, "sparsity_timeline.png"))
    print("sparsity timeline: " + " ".join(f"{int(e)}:{f:.3f}" for e, f in zip(ep, frac)))


def cmd_analyze(args) -> int:
    if args.metrics == "all":
        wanted = list(METRICS)
        if args.compare_run is None:
            wanted.remove("overlap")
            print("note: skipping overlap (needs --compare-run)")
    else:
        wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
        unknown = sorted(set(wanted) - set(METRICS))
        if unknown:
            raise ConfigError(
                f"unknown metrics: {', '.join(unknown)} "
                f"(choose from {', '.join(METRICS)})"
            )
    if "overlap" in wanted and args.compare_run is None:
        raise ConfigError("overlap needs --compare-run")

    cfg = _load_run_config(args.run_dir)
    model = load_checkpoint(os.path.join(args.run_dir, "model.ckpt"))
    epochs_rows, summary = RunRecord.read_jsonl(
        os.path.join(args.run_dir, "record.jsonl"))
    chash = summary.get("config_hash", "unknown")
    threshold = cfg["report_threshold"] if args.threshold is None else args.threshold

    out = args.out or os.path.join(args.run_dir, "analysis")
    os.makedirs(out, exist_ok=True)
    for metric in wanted:
        if metric == "monotonic":
            _analyze_monotonic(out, model, chash)
        elif metric == "layers":
            _analyze_layers(out, model, chash, threshold)
        elif metric == "energy":
            _analyze_energy(out, args.run_dir, chash, args.level)
        elif metric == "overlap":
            _analyze_overlap(out, model, chash, args.compare_run, threshold)
        elif metric == "gap":
            _analyze_gap(out, epochs_rows, chash)
        elif metric == "timeline":
            _analyze_timeline(out, args.run_dir, chash, args.percentile)
    print(f"analysis output: {out}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shrinknet",
        description="Sparse network training with jointly learned shrinkage coefficients.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prune", help="magnitude-prune a finished run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--target", type=float, help="global sparsity target in [0, 1]")
    p.add_argument("--threshold", type=float, help="explicit magnitude threshold")
    p.add_argument("--mode", choices=("threshold", "lottery", "random"),
                   default="threshold",
                   help="threshold: mask only; lottery: rewind to init and retrain; "
                        "random: reinitialize and retrain")
    p.add_argument("--out", help="output directory (default: RUN_DIR/prune_MODE)")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("sweep", help="penalty strength x sparsity target x seed grid")
    p.add_argument("--config", required=True, help="base config file")
    p.add_argument("--xi", required=True, help="comma list of penalty strengths")
    p.add_argument("--targets", required=True, help="comma list of sparsity targets")
    p.add_argument("--seeds", default="0", help="comma list of seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-theory",
                       help="sample problem instances and check the convexity certificate")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--loss-scale", type=float, default=1.0, choices=(1.0, 2.0),
                   help="1: plain least squares; 2: doubled quadratic form")
    p.add_argument("--out", help="write the full JSON report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("analyze", help="sparsity/representation reports for a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--metrics", default="all",
                   help="'all' or a comma list of: " + ", ".join(METRICS))
    p.add_argument("--out", help="output directory (default: RUN_DIR/analysis)")
    p.add_argument("--compare-run", help="second run directory (overlap metric)")
    p.add_argument("--threshold", type=float,
                   help="magnitude threshold (default: the run's report_threshold)")
    p.add_argument("--percentile", type=float, default=95.0,
                   help="reference percentile for the sparsity timeline")
    p.add_argument("--level", type=float, default=0.95,
                   help="cumulative energy level for component counts")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses status 2 for usage errors; fold that into 1
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, SolverError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
