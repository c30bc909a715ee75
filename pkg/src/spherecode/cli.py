"""Command-line driver for the full pipeline.

Subcommands mirror the pipeline stages:

    init-vectors   dataset manifest + initial code vectors
    optimize       spread code vectors over the sphere
    tokenize       cluster vectors into a code tree + identity codes
    train          fit backbone/heads on the frozen codes
    collapse       long-tail vs balanced centroid separation study
    cost           classifier size/compute scaling table

Every run resolves one JSON config, stamps its sha256 into the artifacts,
and writes into ``--out-dir``.  Report-style commands render matplotlib
figures next to their CSV/NDJSON outputs.  Exit codes: 0 success, 2
configuration/input error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import config as cfgmod
from . import costs, data, fileio, model, plots, sphere, tokenizer
from .errors import ConfigError, NumericAbort


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spherecode",
        description="Code-vector pipeline: spread, tokenize, train, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--out-dir", help="artifact directory")
        p.add_argument("--threads", type=int, help="worker threads for pairwise math")
        return p

    p = common(sub.add_parser("init-vectors", help="dataset + initial code vectors"))
    p.add_argument("--init", choices=["mean", "random"], help="override vectors.init")

    p = common(sub.add_parser("optimize", help="spread code vectors on the sphere"))
    p.add_argument("--in", dest="infile", help="input vectors (default: out-dir/vectors_init.cvm)")

    p = common(sub.add_parser("tokenize", help="build code tree and identity codes"))
    p.add_argument("--in", dest="infile", help="input vectors (default: out-dir/vectors.cvm)")
    p.add_argument(
        "--assignment", choices=["tree", "shuffled"],
        help="override tokenizer.assignment (shuffled = ablation)",
    )

    p = common(sub.add_parser("train", help="train backbone and token heads"))
    p.add_argument("--gamma-balance", type=float, help="override training.gamma_balance")

    common(sub.add_parser("collapse", help="long-tail vs balanced separation study"))
    common(sub.add_parser("cost", help="classifier scaling table"))
    return parser


def _resolve_config(args) -> tuple[cfgmod.ExperimentConfig, str]:
    cfg = cfgmod.load_config(args.config)
    cfgmod.apply_env_overrides(cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.threads is not None:
        cfg.threads = args.threads
    if getattr(args, "init", None) is not None:
        cfg.vectors.init = args.init
    if getattr(args, "assignment", None) is not None:
        cfg.tokenizer.assignment = args.assignment
    if getattr(args, "gamma_balance", None) is not None:
        cfg.training.gamma_balance = args.gamma_balance
    cfgmod.validate(cfg)
    return cfg, cfgmod.config_hash(cfg)


def _out_dir(cfg) -> Path:
    out = Path(cfg.out_dir)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(cfg) -> data.LongTailDataset:
    d = cfg.data
    if d.mode == "synthetic":
        feat_dim = d.feature_dim or d.d
        sampler = data.gen_identities(d.m, feat_dim, d.dispersion, seed=cfg.seed)
        return data.sample_longtail(
            sampler, d.head_fraction, d.head_count, d.tail_count, seed=cfg.seed
        )
    reader = (
        fileio.read_embeddings_csv if d.mode == "csv" else fileio.read_embeddings_binary
    )
    ids, labels, vectors = reader(d.embeddings)
    counts = np.bincount(labels)
    if counts.size < 2 or (counts == 0).any():
        raise ConfigError(
            f"{d.embeddings}: labels must be dense in 0..m-1 with every "
            "identity present"
        )
    return data.LongTailDataset(
        features=vectors,
        labels=labels,
        sample_ids=ids,
        counts=counts,
        head_fraction=1.0,
        head_count=int(counts.max()),
        tail_count=int(counts.min()),
    )


# ------------------------------------------------------------- subcommands

def cmd_init_vectors(args) -> int:
    cfg, chash = _resolve_config(args)
    out = _out_dir(cfg)
    ds = _load_dataset(cfg)
    fileio.write_manifest(out / "dataset_manifest.txt", ds.counts, config_hash=chash)

    if cfg.vectors.init == "mean":
        if ds.features.shape[1] != cfg.data.d:
            raise ConfigError(
                f"mean init needs embeddings of width d={cfg.data.d}, "
                f"got {ds.features.shape[1]}"
            )
        provider = data.EmbeddingProvider.from_features(ds)
        h0 = data.per_class_mean_init(provider, ds)
    else:
        h0 = bl.init_centroids(ds.m, cfg.data.d, seed=cfg.seed)
    fileio.write_code_vectors(out / "vectors_init.cvm", h0, config_hash=chash)

    rep = sphere.separation_metrics(h0, threads=cfg.threads)
    print(
        f"init-vectors: m={ds.m} d={cfg.data.d} init={cfg.vectors.init} "
        f"min/mean/max dist = {rep.min_dist:.4f}/{rep.mean_dist:.4f}/{rep.max_dist:.4f}"
    )
    print(f"wrote {out / 'vectors_init.cvm'} (config {chash[:12]})")
    return 0


def cmd_optimize(args) -> int:
    cfg, chash = _resolve_config(args)
    out = _out_dir(cfg)
    src = Path(args.infile) if args.infile else out / "vectors_init.cvm"
    h0 = fileio.read_code_vectors(src)

    ucfg = sphere.UniformityConfig(
        t=cfg.vectors.t,
        row_batch=cfg.vectors.row_batch,
        lr=cfg.vectors.lr,
        epochs=cfg.vectors.epochs,
        seed=cfg.seed,
    )
    epochs_logged = [0]
    reports = [sphere.separation_metrics(h0, threads=cfg.threads)]
    stride = max(1, cfg.vectors.epochs // 20)

    def log(epoch, h):
        if (epoch + 1) % stride == 0 or epoch + 1 == cfg.vectors.epochs:
            epochs_logged.append(epoch + 1)
            reports.append(sphere.separation_metrics(h, threads=cfg.threads))

    h = sphere.optimize_code_vectors(h0, ucfg, on_epoch=log)
    loss0 = sphere.uniformity_loss(h0, t=cfg.vectors.t)
    loss1 = sphere.uniformity_loss(h, t=cfg.vectors.t)

    fileio.write_code_vectors(out / "vectors.cvm", h, config_hash=chash)
    fileio.write_separation_csv(
        out / "separation.csv", reports, epochs=epochs_logged, config_hash=chash
    )
    plots.plot_separation_trajectories(
        {"uniformity optimization": (epochs_logged, reports)},
        out / "figures" / "optimize_separation.png",
    )
    plots.plot_separation_summary(
        reports[-1], out / "figures" / "vectors_separation.png"
    )
    print(
        f"optimize: loss {loss0:.6f} -> {loss1:.6f}; "
        f"min dist {reports[0].min_dist:.4f} -> {reports[-1].min_dist:.4f}"
    )
    print(f"wrote {out / 'vectors.cvm'}, {out / 'separation.csv'} (config {chash[:12]})")
    return 0


def cmd_tokenize(args) -> int:
    cfg, chash = _resolve_config(args)
    out = _out_dir(cfg)
    src = Path(args.infile) if args.infile else out / "vectors.cvm"
    h = fileio.read_code_vectors(src)
    m = h.shape[0]

    if cfg.tokenizer.l is not None:
        l, v = cfg.tokenizer.l, cfg.tokenizer.v
    else:
        shape = tokenizer.suggest_length(m)
        l, v = shape.l, shape.v
        note = "" if shape.in_band else " (no alphabet in preferred band)"
        print(f"tokenize: suggested code shape l={l}, v={v}{note}")

    tcfg = tokenizer.TokenizerConfig(
        l=l, v=v, seed=cfg.seed,
        kmeans_iters=cfg.tokenizer.kmeans_iters,
        restarts=cfg.tokenizer.restarts,
    )
    tree = tokenizer.build_code_tree(h, tcfg)
    codes = tokenizer.assign_codes(tree)
    if cfg.tokenizer.assignment == "shuffled":
        perm = np.random.default_rng(cfg.seed).permutation(m)
        codes = {ident: codes[int(perm[ident])] for ident in range(m)}
        print("tokenize: code assignments shuffled (ablation mode)")

    fileio.save_tree(out / "tree.json", tree, config_hash=chash)
    fileio.write_codes(out / "codes.txt", codes, l, v, config_hash=chash)
    print(
        f"tokenize: m={m} -> codes of length {l} over alphabet {v} "
        f"(capacity {v ** l})"
    )
    print(f"wrote {out / 'codes.txt'}, {out / 'tree.json'} (config {chash[:12]})")
    return 0


def cmd_train(args) -> int:
    cfg, chash = _resolve_config(args)
    out = _out_dir(cfg)
    h = fileio.read_code_vectors(out / "vectors.cvm")
    codes, l, v = fileio.read_codes(out / "codes.txt")
    ds = _load_dataset(cfg)

    # Refuse inconsistent inputs rather than train a silently wrong model.
    if len(codes) != h.shape[0]:
        raise ConfigError(
            f"codes file has m={len(codes)} identities but vectors file has "
            f"m={h.shape[0]}"
        )
    if h.shape[0] != ds.m:
        raise ConfigError(
            f"vectors file has m={h.shape[0]} but the dataset has m={ds.m}"
        )
    if h.shape[1] != cfg.data.d:
        raise ConfigError(
            f"vectors file has d={h.shape[1]} but config data.d={cfg.data.d}"
        )
    if cfg.tokenizer.l is not None and (cfg.tokenizer.l, cfg.tokenizer.v) != (l, v):
        raise ConfigError(
            f"config requests l={cfg.tokenizer.l}, v={cfg.tokenizer.v} but "
            f"codes file carries l={l}, v={v}"
        )

    tr = cfg.training
    tcfg = model.TrainConfig(
        epochs=tr.epochs,
        batch_size=tr.batch_size,
        lr=tr.lr,
        momentum=tr.momentum,
        scale=tr.scale,
        gamma_balance=tr.gamma_balance,
        lambdas=tuple(tr.lambdas) if tr.lambdas else None,
        backbone_hidden=tuple(tr.backbone_hidden),
        head_hidden_layers=tr.head_hidden_layers,
        seed=cfg.seed,
    )
    trained = model.train_code_model(ds.features, ds.labels, h, codes, tcfg, l=l, v=v)

    z = model.embed(trained.backbone, ds.features)
    tree = fileio.load_tree(out / "tree.json")
    idents, direct = model.predict_identities(trained.heads, z, tree, codes)
    accuracy = float(np.mean(idents == ds.labels))
    align = model.mean_alignment(trained.backbone, ds.features, ds.labels, h)

    fileio.write_metrics_ndjson(out / "metrics.ndjson", trained.metrics, config_hash=chash)
    model.save_checkpoint(
        out / "checkpoint.npz", trained.backbone, trained.heads,
        config_hash=chash, extra={"l": l, "v": v, "m": ds.m},
    )
    summary = {
        "accuracy": accuracy,
        "mean_alignment": align,
        "fallback_fraction": float(1.0 - np.mean(direct)),
        "l": l, "v": v, "m": ds.m,
        "config": chash,
    }
    (out / "train_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    plots.plot_training_metrics(
        trained.metrics, out / "figures" / "training_metrics.png"
    )
    print(
        f"train: closed-set accuracy {accuracy:.4f}, mean alignment {align:.4f}, "
        f"fallback fraction {summary['fallback_fraction']:.4f}"
    )
    print(f"wrote {out / 'metrics.ndjson'}, {out / 'checkpoint.npz'} (config {chash[:12]})")
    return 0


def cmd_collapse(args) -> int:
    cfg, chash = _resolve_config(args)
    out = _out_dir(cfg)
    d = cfg.data
    if d.mode != "synthetic":
        raise ConfigError("collapse study requires data.mode='synthetic'")
    feat_dim = d.feature_dim or d.d
    if feat_dim != d.d:
        raise ConfigError(
            "collapse study trains centroids directly on embeddings; "
            f"feature_dim must equal d, got {feat_dim} != {d.d}"
        )
    sampler = data.gen_identities(d.m, d.d, d.dispersion, seed=cfg.seed)
    longtail = data.sample_longtail(
        sampler, d.head_fraction, d.head_count, d.tail_count, seed=cfg.seed
    )
    balanced = data.sample_longtail(
        sampler, 1.0, d.head_count, d.head_count, seed=cfg.seed
    )

    bcfg = bl.BaselineConfig(
        lr=cfg.baseline.lr,
        momentum=cfg.baseline.momentum,
        batch_size=cfg.baseline.batch_size,
        scale=cfg.baseline.scale,
        seed=cfg.seed,
    )
    w0 = bl.init_centroids(d.m, d.d, seed=cfg.seed)
    run_lt = bl.train_baseline(longtail, w0, cfg.baseline.epochs, bcfg)
    run_bal = bl.train_baseline(balanced, w0, cfg.baseline.epochs, bcfg)

    # Code-vector route: depends only on (m, d, seed), not on label counts,
    # so the long-tail and balanced datasets share it by construction.
    ucfg = sphere.UniformityConfig(
        t=cfg.vectors.t, row_batch=cfg.vectors.row_batch,
        lr=cfg.vectors.lr, epochs=cfg.vectors.epochs, seed=cfg.seed,
    )
    h = sphere.optimize_code_vectors(
        bl.init_centroids(d.m, d.d, seed=cfg.seed), ucfg
    )
    h_rep = sphere.separation_metrics(h, threads=cfg.threads)

    fileio.write_separation_csv(
        out / "collapse_longtail.csv", run_lt.trajectory, config_hash=chash
    )
    fileio.write_separation_csv(
        out / "collapse_balanced.csv", run_bal.trajectory, config_hash=chash
    )
    fileio.write_separation_csv(
        out / "collapse_codevectors.csv", [h_rep], config_hash=chash
    )
    epochs = list(range(len(run_lt.trajectory)))
    plots.plot_separation_trajectories(
        {
            "softmax CE, long-tail": (epochs, run_lt.trajectory),
            "softmax CE, balanced": (epochs, run_bal.trajectory),
            "code vectors (either)": ([0, epochs[-1]], [h_rep, h_rep]),
        },
        out / "figures" / "collapse.png",
    )
    lt_min = run_lt.trajectory[-1].min_dist
    bal_min = run_bal.trajectory[-1].min_dist
    summary = {
        "longtail_min_dist": lt_min,
        "balanced_min_dist": bal_min,
        "ratio": lt_min / bal_min if bal_min > 0 else float("inf"),
        "codevector_min_dist": h_rep.min_dist,
        "config": chash,
    }
    (out / "collapse_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"collapse: baseline min dist long-tail {lt_min:.4f} vs balanced "
        f"{bal_min:.4f} (ratio {summary['ratio']:.3f}); "
        f"code vectors {h_rep.min_dist:.4f} for both"
    )
    print(f"wrote collapse_*.csv + figures/collapse.png (config {chash[:12]})")
    return 0


def cmd_cost(args) -> int:
    cfg, chash = _resolve_config(args)
    out = _out_dir(cfg)
    rows = costs.scaling_table(cfg.cost.ms, cfg.cost.d, alpha=cfg.cost.alpha)
    costs.write_cost_csv(out / "cost.csv", rows, config_hash=chash)
    plots.plot_cost_scaling(rows, out / "figures" / "cost_scaling.png")
    for line in costs.cost_csv_lines(rows):
        print(line)
    print(f"wrote {out / 'cost.csv'} (config {chash[:12]})")
    return 0


_COMMANDS = {
    "init-vectors": cmd_init_vectors,
    "optimize": cmd_optimize,
    "tokenize": cmd_tokenize,
    "train": cmd_train,
    "collapse": cmd_collapse,
    "cost": cmd_cost,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
