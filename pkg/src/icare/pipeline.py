"""End-to-end reference run: corpus, three training stages, reports on disk."""
from __future__ import annotations

import hashlib
import json
import os
import time

import numpy as np
from scipy.stats import spearmanr

from icare import evaluation
from icare.config import RunConfig, save_config
from icare.fusion import train_fusion
from icare.pathnet import constant_path_mse, path_error_by_step, predict_dataset, save_pathnet, train_pathnet
from icare.proposer import proposal_recall, save_proposer, train_proposer
from icare.scenegen.dataset import Dataset, scene_config_to_dict

REPORT_FILES = ("path_report.json", "proposer_report.json", "ablation.json", "cross_annotator.json", "pr_points.csv")
LR_CANDIDATES = (0.01, 0.005, 0.001)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def path_report(net, dataset, result=None):
    test, train = dataset.ids("test"), dataset.ids("train")
    errors = path_error_by_step(net, dataset, test)
    preds, _ = predict_dataset(net, dataset, test)
    gt = np.stack([dataset.scenes[i].gt_path for i in test])
    rho = spearmanr(np.arange(1, len(errors) + 1), errors).statistic
    report = {
        "path_errors": [float(e) for e in errors],
        "spearman": float(rho),
        "test_mse_deg2": float(np.mean((preds - gt) ** 2)),
        "constant_mse_deg2": constant_path_mse(dataset, train, test),
        "n_test": len(test),
    }
    if result is not None:
        report.update(train_mse=result.train_mse, val_mse=result.val_mse, best_epoch=result.best_epoch)
    return report


def select_fusion_lr(samples, cfg: RunConfig, candidates=LR_CANDIDATES, mode="A", seed=0):
    """Validation F1 of mode ``mode`` for each candidate lr; returns (best lr, {lr: f1})."""
    train = [b.restrict(mode) for b in samples["train"]]
    val = [b.restrict(mode) for b in samples["val"]]
    scores = {}
    for lr in candidates:
        res = train_fusion(train, mode, cfg.replace(fusion_lr=lr).fusion_config(), seed=seed, val_samples=val)
        scores[lr] = max(res.val_f1)
    best = max(candidates, key=lambda lr: (scores[lr], -candidates.index(lr)))
    return best, scores


def load_or_generate(cfg: RunConfig, log=None):
    manifest = os.path.join(cfg.data_dir, "manifest.json")
    if os.path.exists(manifest):
        ds = Dataset.load(cfg.data_dir)
        wanted = json.loads(json.dumps(scene_config_to_dict(cfg.scene_config())))
        m = ds.manifest
        if m.get("seed") == cfg.seed and m.get("n_scenes") == cfg.n_scenes and m.get("config") == wanted:
            return ds
        if log:
            log(f"{cfg.data_dir} holds a different corpus; regenerating in memory")
    return Dataset.generate(cfg.n_scenes, cfg.seed, cfg.scene_config())


def run_reference(cfg: RunConfig, out_dir=None, dataset=None, log=None):
    """Train every stage from ``cfg`` and write the report files; returns a dict of in-memory results."""
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    save_config(os.path.join(out_dir, "config.txt"), cfg)
    timings = {}
    ds = dataset if dataset is not None else Dataset.generate(cfg.n_scenes, cfg.seed, cfg.scene_config())

    t = time.process_time()
    path_res = train_pathnet(ds, cfg.pathnet_config(), seed=cfg.path_seed, log=log)
    save_pathnet(os.path.join(out_dir, "pathnet.icre"), path_res.net)
    p_report = path_report(path_res.net, ds, path_res)
    _write(os.path.join(out_dir, "path_report.json"), evaluation.dumps_json(p_report))
    timings["path"] = time.process_time() - t

    t = time.process_time()
    prop_res = train_proposer(ds, cfg.proposer_config(), seed=cfg.proposer_seed, log=log)
    save_proposer(os.path.join(out_dir, "proposer.icre"), prop_res.net)
    recall = proposal_recall(prop_res.net, ds, ds.ids("test"), cfg.recall_top_k, 0.0, 0.5, cfg.nms_iou)
    r_report = {"recall": recall, "top_k": cfg.recall_top_k, "conf_threshold": 0.0, "iou_match": 0.5,
                "loss_trace": prop_res.loss_trace, "val_recall": prop_res.val_recall,
                "best_epoch": prop_res.best_epoch}
    _write(os.path.join(out_dir, "proposer_report.json"), evaluation.dumps_json(r_report))
    timings["proposer"] = time.process_time() - t

    t = time.process_time()
    samples = evaluation.build_split_samples(ds, prop_res.net, path_res.net, cfg.proposal_source)
    table = evaluation.run_ablation(ds, prop_res.net, path_res.net, cfg.modes, cfg.seeds, cfg.proposal_source,
                                    cfg.fusion_config(), samples=samples, log=log)
    _write(os.path.join(out_dir, "ablation.json"), evaluation.dumps_json(table.to_dict()))
    cross_modes = tuple(m for m in ("A", "C") if m in cfg.modes)
    cross = evaluation.cross_annotator_eval(table, cross_modes)
    _write(os.path.join(out_dir, "cross_annotator.json"), evaluation.dumps_json(cross.to_dict()))
    _write(os.path.join(out_dir, "pr_points.csv"), evaluation.pr_points_csv(table.reports.values()))
    timings["ablation"] = time.process_time() - t

    digests = {name: sha256_file(os.path.join(out_dir, name)) for name in REPORT_FILES}
    _write(os.path.join(out_dir, "digests.json"), evaluation.dumps_json(digests))
    if log:
        log("cpu seconds: " + ", ".join(f"{k} {v:.0f}" for k, v in timings.items()))
    return {"path": p_report, "proposer": r_report, "ablation": table, "cross": cross, "digests": digests,
            "timings": timings, "dataset": ds, "samples": samples}


def verify_reports(out_dir, log=None):
    """Re-run the configuration stored in ``out_dir`` and compare report digests."""
    from icare.config import load_config

    cfg = load_config(os.path.join(out_dir, "config.txt"))
    with open(os.path.join(out_dir, "digests.json")) as fh:
        expected = json.load(fh)
    scratch = os.path.join(out_dir, "verify")
    fresh = run_reference(cfg, scratch, log=log)["digests"]
    return {name: expected.get(name) == fresh[name] for name in REPORT_FILES}
