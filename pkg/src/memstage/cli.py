"""Command-line surface: generate, train, eval, gradcheck.

Configuration comes from a key=value text file plus a few flag overrides
(flags win).  Every command writes a JSON run manifest atomically at the
end; re-running a command with the manifest's config and seed reproduces
its metric outputs byte for byte.  Errors print machine-parseable
``error_code=`` lines on stderr and exit nonzero.
"""

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .clustering import ari, kmeans, nmi, pca_project, purity
from .data import (
    SyntheticConfig,
    generate_synthetic,
    impute,
    load_long_csv,
    normalization_stats,
    normalize,
    split,
    write_long_csv,
)
from .exceptions import ArgumentError, CompatibilityError, ConfigError, MemstageError
from .model import (
    ModelConfig,
    ModelParams,
    backward_sequence,
    forward_sequence,
    load_checkpoint,
    representation_for_clustering,
    save_checkpoint,
)
from .nn import gradcheck
from .training import TrainConfig, format_epoch_record, sequence_losses, train

GRADCHECK_PARAM_LIMIT = 50_000

_GENERATE_KEYS = {
    "n_patients": int, "visits_min": int, "visits_max": int, "n_features": int,
    "n_stages": int, "noise_scale": float, "missing_rate": float,
    "stage_separation": float, "advance_prob": float, "seed": int,
}
_TRAIN_KEYS = {
    "mode": str, "learning_rate": float, "batch_size": int, "epochs": int,
    "hidden_size": int, "latent_size": int, "memory_slots": int,
    "memory_width": int, "label_dim": int, "clusters": int,
    "kl_anneal_steps": int, "seed": int, "score_mode": str,
    "prior_mode": str, "global_memory": str, "workers": int,
}


def read_config_file(path, schema):
    """Parse a key=value file against a known key set; unknown keys are errors."""
    values = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in schema:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            try:
                values[key] = schema[key](value)
            except ValueError:
                raise ConfigError(f"{path}:{line_no}: bad value for {key}: {value!r}") from None
    return values


def write_manifest(path, payload):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _manifest(command, seed, config, inputs, outputs, timings):
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "timings": {k: round(v, 6) for k, v in timings.items()},
    }


def cmd_generate(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    values = read_config_file(args.config, _GENERATE_KEYS) if args.config else {}
    values.update(overrides)
    config = SyntheticConfig(**values)
    out = args.out or "cohort.csv"
    t0 = time.perf_counter()
    cohort = generate_synthetic(config)
    t1 = time.perf_counter()
    write_long_csv(out, cohort)
    t2 = time.perf_counter()
    fields = {f.name: getattr(config, f.name) for f in dataclasses.fields(config)
              if f.name not in ("transition", "stage_means")}
    write_manifest(out + ".manifest.json", _manifest(
        "generate", config.seed, fields, [], [out],
        {"generate": t1 - t0, "write": t2 - t1, "total": t2 - t0},
    ))
    n_rows = sum(s.n_visits for s in cohort.sequences)
    print(f"wrote {out}: {len(cohort.sequences)} patients, {n_rows} visits")
    return 0


def _prepare_for_training(cohort, seed):
    train_c, val_c, test_c = split(cohort, ratios=(3, 1, 1), seed=seed)
    mean, std, count = normalization_stats(train_c)
    parts = []
    for part in (train_c, val_c, test_c):
        part = impute(part, mean, observed_counts=count)
        parts.append(normalize(part, mean, std))
    return parts, mean, std


def cmd_train(args):
    values = read_config_file(args.config, _TRAIN_KEYS) if args.config else {}
    if args.mode is not None:
        values["mode"] = args.mode
    if args.seed is not None:
        values["seed"] = args.seed
    if args.workers is not None:
        values["workers"] = args.workers
    if args.k is not None:
        values["clusters"] = args.k
    config = TrainConfig(**values)
    out = args.out or "model.ckpt"
    t0 = time.perf_counter()
    cohort = load_long_csv(args.data)
    if config.mode == "supervised" and cohort.n_labels == 0:
        raise ConfigError("supervised mode requires a label column in the data")
    (train_c, val_c, _), mean, std = _prepare_for_training(cohort, config.seed)
    t1 = time.perf_counter()
    log_path = out + ".log"
    with open(log_path, "w") as log_fh:
        def log_fn(record):
            log_fh.write(format_epoch_record(record) + "\n")
        params, records = train(config, train_c.sequences, val_c.sequences, log_fn=log_fn)
    t2 = time.perf_counter()
    meta = {
        "feature_names": cohort.feature_names,
        "n_labels": cohort.n_labels,
        "norm_mean": [float(v) for v in mean],
        "norm_std": [float(v) for v in std],
        "split_seed": config.seed,
        "train_config": dataclasses.asdict(config),
    }
    save_checkpoint(out, params, meta=meta)
    t3 = time.perf_counter()
    write_manifest(out + ".manifest.json", _manifest(
        "train", config.seed, dataclasses.asdict(config), [args.data],
        [out, log_path],
        {"data": t1 - t0, "train": t2 - t1, "save": t3 - t2, "total": t3 - t0},
    ))
    final = records[-1]
    print(f"wrote {out}: {len(records)} epochs, "
          f"final train loss {final.loss.total:.6f}, best val {min(r.val_loss for r in records):.6f}")
    return 0


_SVG_COLORS = [
    "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951",
    "#ff8ab7", "#a463f2", "#97bbf5", "#9c6b4e", "#9498a0",
]


def svg_scatter(path, points, clusters, title):
    """Minimal self-contained SVG scatter of the first two columns."""
    width = height = 640
    pad = 40
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
    ]
    for (x, y), c in zip(pts, clusters):
        px = pad + (x - lo[0]) / span[0] * (width - 2 * pad)
        py = height - pad - (y - lo[1]) / span[1] * (height - 2 * pad)
        color = _SVG_COLORS[int(c) % len(_SVG_COLORS)]
        lines.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{color}" fill-opacity="0.7"/>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_eval(args):
    t0 = time.perf_counter()
    params, meta = load_checkpoint(args.checkpoint)
    cohort = load_long_csv(args.data)
    if cohort.feature_names != meta["feature_names"]:
        raise CompatibilityError(
            f"checkpoint features {meta['feature_names']} != data features {cohort.feature_names}"
        )
    if params.config.mode == "supervised" and cohort.n_labels == 0:
        raise CompatibilityError("supervised checkpoint needs labelled data for its patient bank")
    mean = np.asarray(meta["norm_mean"])
    std = np.asarray(meta["norm_std"])
    if args.split == "test":
        _, _, part = split(cohort, ratios=(3, 1, 1), seed=int(meta["split_seed"]))
    else:
        part = cohort
    part = normalize(impute(part, mean), mean, std)
    t1 = time.perf_counter()

    workers = args.workers or 1
    if workers > 1:
        # read-only params; per-patient forwards are independent and ordered
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(lambda s: forward_sequence(params, s), part.sequences))
    else:
        traces = [forward_sequence(params, seq) for seq in part.sequences]
    reps = []
    rows = []
    for seq, trace in zip(part.sequences, traces):
        reps.append(representation_for_clustering(trace, args.repr))
        for t in range(seq.n_visits):
            rows.append((seq.patient_id, int(seq.visit_index[t])))
    points = np.concatenate(reps, axis=0)
    k = args.k if args.k is not None else int(meta["train_config"]["clusters"])
    seed = args.seed if args.seed is not None else 0
    result = kmeans(points, k, seed=seed, restarts=10)
    projected, ratios = pca_project(points, dims=2)
    t2 = time.perf_counter()

    labels = None
    if all(s.labels is not None for s in part.sequences):
        labels = np.concatenate([s.labels for s in part.sequences])

    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.txt")
    with open(metrics_path, "w") as fh:
        if labels is not None:
            fh.write(f"metric=purity value={purity(result.assignments, labels)!r} "
                     f"k={k} n={len(points)}\n")
            fh.write(f"metric=nmi value={nmi(result.assignments, labels)!r} "
                     f"k={k} n={len(points)}\n")
            fh.write(f"metric=ari value={ari(result.assignments, labels)!r} "
                     f"k={k} n={len(points)}\n")
        fh.write(f"metric=inertia value={result.inertia!r} k={k} n={len(points)}\n")
    table_path = os.path.join(args.out, "assignments.csv")
    with open(table_path, "w") as fh:
        fh.write("patient_id,visit_index,cluster,pc1,pc2\n")
        for (pid, visit), cluster, (pc1, pc2) in zip(rows, result.assignments, projected):
            fh.write(f"{pid},{visit},{int(cluster)},{float(pc1)!r},{float(pc2)!r}\n")
    plot_path = os.path.join(args.out, "clusters.svg")
    svg_scatter(plot_path, projected, result.assignments,
                f"per-visit representations, k={k} (pc1/pc2 "
                f"{ratios[0]:.2f}/{ratios[1]:.2f} of variance)")
    t3 = time.perf_counter()
    write_manifest(os.path.join(args.out, "manifest.json"), _manifest(
        "eval", seed,
        {"k": k, "repr": args.repr, "split": args.split},
        [args.checkpoint, args.data],
        [metrics_path, table_path, plot_path],
        {"load": t1 - t0, "model": t2 - t1, "write": t3 - t2, "total": t3 - t0},
    ))
    with open(metrics_path) as fh:
        sys.stdout.write(fh.read())
    return 0


def _gradcheck_data(n_features, n_patients, n_visits, seed):
    config = SyntheticConfig(
        n_patients=max(n_patients, 5), visits_min=n_visits, visits_max=n_visits,
        n_features=n_features, n_stages=3, missing_rate=0.2,
        stage_separation=2.0, seed=seed,
    )
    cohort = generate_synthetic(config)
    mean, std, count = normalization_stats(cohort)
    cohort = normalize(impute(cohort, mean, observed_counts=count), mean, std)
    return cohort.sequences[:n_patients]


def run_model_gradcheck(mode, hidden=6, latent=4, slots=3, width=6, n_features=5,
                        n_visits=4, n_patients=2, kl_weight=0.7, step=1e-5, tol=1e-4,
                        seed=11, score_mode="add", prior_mode="learned", corrupt=None):
    """Full-model finite-difference suite on a toy configuration."""
    config = ModelConfig(
        n_features=n_features, n_hidden=hidden, latent_size=latent,
        memory_slots=slots, memory_width=width, mode=mode,
        n_labels=3 if mode == "supervised" else 0,
        score_mode=score_mode, prior_mode=prior_mode,
    )
    params = ModelParams(config, seed=seed)
    total = params.n_parameters()
    if total >= GRADCHECK_PARAM_LIMIT:
        raise ConfigError(
            f"gradcheck refuses {total} parameters (limit {GRADCHECK_PARAM_LIMIT}); "
            f"shrink hidden/latent/memory sizes"
        )
    seqs = _gradcheck_data(n_features, n_patients, n_visits, seed)
    eps = [
        np.random.default_rng(np.random.SeedSequence([seed, 31, i]))
        .standard_normal((n_visits, latent))
        for i in range(len(seqs))
    ]

    def loss_fn(want_grad):
        total_loss = 0.0
        for i, seq in enumerate(seqs):
            trace = forward_sequence(params, seq, eps=eps[i])
            kl, task = sequence_losses(trace, seq)
            total_loss += (kl_weight * kl + task) / len(seqs)
            if want_grad:
                backward_sequence(params, trace, seq, kl_weight, upstream=1.0 / len(seqs))
        return total_loss

    tamper = None
    if corrupt is not None:
        def tamper(analytic):
            if corrupt not in analytic:
                raise ArgumentError(f"no tensor named {corrupt!r} to corrupt")
            analytic[corrupt] += 1e-2
    return gradcheck(loss_fn, params.tensors(), step=step, tol=tol, grad_tamper=tamper)


def cmd_gradcheck(args):
    values = read_config_file(args.config, _TRAIN_KEYS) if args.config else {}
    kwargs = {}
    if "hidden_size" in values:
        kwargs["hidden"] = values["hidden_size"]
    if "latent_size" in values:
        kwargs["latent"] = values["latent_size"]
    if "memory_slots" in values:
        kwargs["slots"] = values["memory_slots"]
    if "memory_width" in values:
        kwargs["width"] = values["memory_width"]
    if "score_mode" in values:
        kwargs["score_mode"] = values["score_mode"]
    if "prior_mode" in values:
        kwargs["prior_mode"] = values["prior_mode"]
    if args.seed is not None:
        kwargs["seed"] = args.seed
    modes = [args.mode] if args.mode else ["unsupervised", "supervised"]
    t0 = time.perf_counter()
    failed = False
    for mode in modes:
        report = run_model_gradcheck(mode, corrupt=args.corrupt_tensor, **kwargs)
        print(f"# mode={mode}")
        print(report.format())
        name, err = report.worst
        verdict = "PASS" if report.passed else "FAIL"
        print(f"{verdict} mode={mode} worst_tensor={name} max_rel_err={err:.3e} tol={report.tol}")
        if not report.passed:
            failed = True
            worst_failures = sorted(report.failures, key=lambda f: -f[4])[:3]
            for tensor, idx, a, n, rel in worst_failures:
                print(f"  mismatch tensor={tensor} index={idx} analytic={a!r} "
                      f"numeric={n!r} rel_err={rel:.3e}")
    if args.out:
        write_manifest(args.out, _manifest(
            "gradcheck", args.seed or 0, kwargs, [], [],
            {"total": time.perf_counter() - t0},
        ))
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="memstage",
        description="Memory-augmented variational staging of longitudinal patient data",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic cohort CSV")
    p.add_argument("--config", help="key=value synthetic config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV path (default cohort.csv)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train on a cohort CSV, write a checkpoint")
    p.add_argument("--data", required=True, help="long-format cohort CSV")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--mode", choices=["supervised", "unsupervised"])
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="cluster count stored for eval")
    p.add_argument("--workers", type=int, help="parallel patients per batch")
    p.add_argument("--out", help="checkpoint path (default model.ckpt)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="cluster representations and report metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, help="cluster count (default: from checkpoint)")
    p.add_argument("--seed", type=int, help="k-means seed (default 0)")
    p.add_argument("--split", choices=["test", "all"], default="test")
    p.add_argument("--repr", choices=["mu_e", "z"], default="mu_e")
    p.add_argument("--workers", type=int, help="parallel patients for representations")
    p.add_argument("--out", default="eval_out", help="output directory")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--config", help="training config supplying toy model sizes")
    p.add_argument("--mode", choices=["supervised", "unsupervised"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="optional manifest path")
    p.add_argument("--corrupt-tensor", help="fault injection: corrupt this tensor's "
                                            "analytic gradient (self-test)")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except MemstageError as exc:
        print(f"error_code={exc.code} {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error_code=io_error {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
