"""Command line entry point: ``icare {gen,train,eval,ablate,report,reference,verify}``.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 missing prerequisite.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from icare.config import RunConfig, load_config, save_config
from icare.errors import ConfigurationError, FormatError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MISSING = 0, 2, 3, 4


class MissingDependency(Exception):
    pass


def _require(path, what):
    if not path:
        raise MissingDependency(f"missing {what}: pass it explicitly")
    if not os.path.exists(path):
        raise MissingDependency(f"missing {what}: {path} does not exist")
    return path


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _base_config(args, dataset_flags=False):
    """Config file (if any) overlaid with command-line flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    if dataset_flags:
        for flag, key in (("seed", "seed"), ("scenes", "n_scenes"), ("data", "data_dir"), ("out", "out_dir")):
            if getattr(args, flag, None) is not None:
                overrides[key] = getattr(args, flag)
    return cfg.replace(**overrides)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _load_dataset(path):
    from icare.scenegen.dataset import Dataset

    _require(os.path.join(path, "manifest.json") if path else None, f"dataset in {path!r}")
    return Dataset.load(path)


# -- commands -------------------------------------------------------------------------


def cmd_gen(args):
    from icare.scenegen.dataset import generate_dataset

    if args.scenes <= 0:
        raise UsageError("--scenes must be positive")
    cfg = _base_config(args, dataset_flags=True)
    ds = generate_dataset(cfg.n_scenes, cfg.seed, cfg.scene_config(), out_dir=args.out,
                          write_rasters=not args.no_rasters)
    save_config(os.path.join(args.out, "config.txt"), cfg)
    splits = ds.manifest["splits"]
    stats = ds.manifest["stats"]
    print(f"scenes {ds.manifest['n_scenes']}  seed {cfg.seed}")
    print(f"train/test fraction {stats['train_fraction']:.3f}/{stats['test_fraction']:.3f}")
    print("splits " + "  ".join(f"{k} {len(v)}" for k, v in sorted(splits.items())))
    print(f"positive rate {stats['positive_rate']:.3f} (alt {stats['positive_rate_alt']:.3f}), "
          f"annotator disagreement {stats['annotator_disagreement']:.3f}")
    return EXIT_OK


def cmd_train(args):
    cfg = _base_config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.stage == "fusion":
        if not args.mode:
            raise UsageError("train fusion requires --mode {A,B,C,D}")
        _require(args.proposer, "proposer checkpoint (--proposer)")
        if args.mode == "C":
            _require(args.pathnet, "pathnet checkpoint (--pathnet)")
    ds = _load_dataset(args.data)
    lr = args.lr
    if args.seed is not None:
        cfg = cfg.replace(path_seed=args.seed, proposer_seed=args.seed)
    if args.stage == "path":
        from icare.pathnet import save_pathnet, train_pathnet

        cfg = cfg.replace(**{k: v for k, v in (("path_epochs", args.epochs), ("path_lr", lr)) if v is not None})
        res = train_pathnet(ds, cfg.pathnet_config(), seed=cfg.path_seed, log=_log)
        save_pathnet(os.path.join(args.out, "pathnet.icre"), res.net)
        _write_rows(os.path.join(args.out, "pathnet_trace.csv"), ["epoch", "train_mse", "val_mse"],
                    [(e, repr(a), repr(b)) for e, (a, b) in enumerate(zip(res.train_mse, res.val_mse))])
    elif args.stage == "proposer":
        from icare.proposer import save_proposer, train_proposer

        cfg = cfg.replace(**{k: v for k, v in (("proposer_epochs", args.epochs), ("proposer_lr", lr)) if v is not None})
        res = train_proposer(ds, cfg.proposer_config(), seed=cfg.proposer_seed, log=_log)
        save_proposer(os.path.join(args.out, "proposer.icre"), res.net)
        _write_rows(os.path.join(args.out, "proposer_trace.csv"), ["epoch", "loss", "val_recall"],
                    [(e, repr(a), repr(b)) for e, (a, b) in enumerate(zip(res.loss_trace, res.val_recall))])
    else:
        from icare.fusion import make_training_samples, save_fusion, train_fusion
        from icare.pathnet import load_pathnet
        from icare.proposer import load_proposer

        cfg = cfg.replace(**{k: v for k, v in (("fusion_epochs", args.epochs), ("fusion_lr", lr)) if v is not None})
        proposer = load_proposer(args.proposer)
        pathnet = load_pathnet(args.pathnet) if args.pathnet else None
        train = make_training_samples(ds, ds.ids("train"), proposer, cfg.proposal_source, args.mode, pathnet)
        val = make_training_samples(ds, ds.ids("val"), proposer, cfg.proposal_source, args.mode, pathnet)
        seed = args.seed if args.seed is not None else 0
        res = train_fusion(train, args.mode, cfg.fusion_config(), seed=seed, val_samples=val or None, log=_log)
        save_fusion(os.path.join(args.out, f"fusion_{args.mode}.icre"), res)
        _write_rows(os.path.join(args.out, f"fusion_{args.mode}_trace.csv"), ["epoch", "loss", "val_f1"],
                    [(e, repr(a), repr(b)) for e, (a, b) in enumerate(zip(res.loss_trace, res.val_f1))])
    save_config(os.path.join(args.out, f"config_{args.stage}.txt"), cfg)
    return EXIT_OK


def cmd_eval(args):
    from icare import evaluation
    from icare.fusion import MODE_FIELDS, load_fusion, make_training_samples
    from icare.pathnet import load_pathnet
    from icare.pipeline import path_report
    from icare.proposer import load_proposer

    cfg = _base_config(args)
    _require(args.fusion, "fusion checkpoint (--fusion)")
    _require(args.proposer, "proposer checkpoint (--proposer)")
    ds = _load_dataset(args.data)
    pathnet = load_pathnet(_require(args.pathnet, "pathnet checkpoint (--pathnet)")) if args.pathnet else None
    net, mode = load_fusion(args.fusion, pathnet.context_dim if pathnet else None)
    if "context" in MODE_FIELDS[mode] and pathnet is None:
        raise MissingDependency(f"missing pathnet checkpoint (--pathnet): mode {mode} needs context")
    proposer = load_proposer(args.proposer)
    test_ids = ds.ids("test")
    if args.subset == "annotated":
        test_ids = evaluation.annotated_ids(ds, test_ids, args.annotator)
    bundles = make_training_samples(ds, test_ids, proposer, cfg.proposal_source, mode, pathnet)
    rep = evaluation.evaluate_fusion(net, mode, ds, test_ids, bundles, args.annotator, args.subset)
    if pathnet is not None:
        rep.path_errors = path_report(pathnet, ds)["path_errors"]
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(evaluation.dumps_json(rep.to_dict()))
    with open(os.path.join(args.out, "pr_points.csv"), "w") as fh:
        fh.write(evaluation.pr_points_csv([rep]))
    save_config(os.path.join(args.out, "config.txt"), cfg)
    print(f"mode {mode} annotator {rep.annotator} subset {rep.subset}: f1_max {rep.f1_max:.4f} "
          f"f1@0.5 {rep.f1_at_half:.4f} AP {rep.average_precision:.4f}")
    return EXIT_OK


def cmd_ablate(args):
    from icare import evaluation
    from icare.pathnet import load_pathnet
    from icare.proposer import load_proposer

    cfg = _base_config(args)
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    cfg = cfg.replace(modes=modes, seeds=tuple(range(args.seeds)))
    _require(args.proposer, "proposer checkpoint (--proposer)")
    if "C" in modes:
        _require(args.pathnet, "pathnet checkpoint (--pathnet)")
    ds = _load_dataset(args.data)
    proposer = load_proposer(args.proposer)
    pathnet = load_pathnet(args.pathnet) if args.pathnet else None
    workers = max(1, int(os.environ.get("ICARE_THREADS", "1") or 1))
    table = evaluation.run_ablation(ds, proposer, pathnet, cfg.modes, cfg.seeds, cfg.proposal_source,
                                    cfg.fusion_config(), log=_log, workers=workers)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "ablation.json"), "w") as fh:
        fh.write(evaluation.dumps_json(table.to_dict()))
    cross_modes = tuple(m for m in ("A", "C") if m in modes)
    if cross_modes:
        with open(os.path.join(args.out, "cross_annotator.json"), "w") as fh:
            fh.write(evaluation.dumps_json(evaluation.cross_annotator_eval(table, cross_modes).to_dict()))
    with open(os.path.join(args.out, "pr_points.csv"), "w") as fh:
        fh.write(evaluation.pr_points_csv(table.reports.values()))
    save_config(os.path.join(args.out, "config.txt"), cfg)
    print(f"{len(table.rows)} runs")
    for mode in table.modes():
        print(f"mode {mode}: f1 {table.mean(mode):.4f} +- {table.std(mode):.4f}  "
              f"annotated {table.mean(mode, 'f1_annotated'):.4f}  alt {table.mean(mode, 'f1_alt_all'):.4f}")
    return EXIT_OK


def cmd_report(args):
    from icare.report import render_pr_figures

    csv_path = _require(os.path.join(args.input, "pr_points.csv"), f"pr_points.csv in {args.input!r}")
    for path in render_pr_figures(csv_path, args.out, args.annotator, args.subset):
        print(path)
    return EXIT_OK


def cmd_reference(args):
    from icare.pipeline import load_or_generate, run_reference

    cfg = _base_config(args, dataset_flags=True)
    ds = load_or_generate(cfg, _log)
    res = run_reference(cfg, args.out or cfg.out_dir, dataset=ds, log=_log)
    print(json.dumps({"path_errors": res["path"]["path_errors"], "recall": res["proposer"]["recall"],
                      "ablation": res["ablation"].summary(), "cross": res["cross"].to_dict()}, indent=1))
    return EXIT_OK


def cmd_verify(args):
    from icare.pipeline import sha256_file, verify_reports
    from icare.scenegen.dataset import MANIFEST_FILE, RASTER_FILE, SCENES_FILE, Dataset, scene_config_from_dict

    target = args.input
    if os.path.exists(os.path.join(target, "digests.json")):
        result = verify_reports(target, log=_log)
    elif os.path.exists(os.path.join(target, MANIFEST_FILE)):
        with open(os.path.join(target, MANIFEST_FILE)) as fh:
            manifest = json.load(fh)
        fresh = os.path.join(target, "verify")
        ds = Dataset.generate(manifest["n_scenes"], manifest["seed"], scene_config_from_dict(manifest["config"]))
        ds.save(fresh, write_rasters=os.path.exists(os.path.join(target, RASTER_FILE)))
        names = [n for n in (SCENES_FILE, MANIFEST_FILE, RASTER_FILE) if os.path.exists(os.path.join(target, n))]
        result = {n: sha256_file(os.path.join(target, n)) == sha256_file(os.path.join(fresh, n)) for n in names}
    else:
        raise MissingDependency(f"missing digests.json or manifest.json in {target!r}")
    for name, ok in result.items():
        print(f"{'ok  ' if ok else 'DIFF'} {name}")
    return EXIT_OK if all(result.values()) else 1


# -- parser ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="icare", description="Road-user importance estimation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--no-rasters", action="store_true", help="skip the raster bundle (recomputed on load)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("stage", choices=("path", "proposer", "fusion"))
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--mode", choices=("A", "B", "C", "D"))
    t.add_argument("--proposer")
    t.add_argument("--pathnet")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a fusion checkpoint on the test split")
    e.add_argument("--data", required=True)
    e.add_argument("--fusion")
    e.add_argument("--proposer")
    e.add_argument("--pathnet")
    e.add_argument("--annotator", choices=("main", "alt"), default="main")
    e.add_argument("--subset", choices=("all", "annotated"), default="all")
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score every (mode, seed) arm")
    a.add_argument("--data", required=True)
    a.add_argument("--proposer")
    a.add_argument("--pathnet")
    a.add_argument("--modes", default="A,B,C,D")
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="render PR curves from pr_points.csv to SVG")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--annotator", choices=("main", "alt"), default="main")
    r.add_argument("--subset", choices=("all", "annotated"), default="all")
    r.set_defaults(func=cmd_report)

    f = sub.add_parser("reference", help="full reference run (all stages, all reports)")
    f.add_argument("--config")
    f.add_argument("--data")
    f.add_argument("--out")
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_reference)

    v = sub.add_parser("verify", help="re-derive a dataset or run directory and compare digests")
    v.add_argument("--in", dest="input", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MissingDependency as exc:
        _log(f"error: {exc}")
        return EXIT_MISSING
    except (UsageError, ConfigurationError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except FormatError as exc:
        _log(f"error: {exc}")
        return EXIT_IO
    except OSError as exc:
        _log(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
