"""Detection-style scoring: matching, PR curves, F1, ablation and cross-annotator runs."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from icare.errors import UsageError
from icare.geometry import iou_matrix

ANNOTATOR_ATTR = {"main": "important", "alt": "important_alt"}
BUNDLE_LABEL = {"main": "label", "alt": "label_alt"}


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


@dataclass
class MatchResult:
    tp: np.ndarray  # bool per prediction, input order
    fn: int

    @property
    def fp(self):
        return int(np.sum(~self.tp))


def _match_order(boxes, scores):
    # descending score; equal scores fall back to box coordinates so the result
    # does not depend on the order predictions were listed in
    keys = [boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -scores]
    return np.lexsort(keys)


def match_predictions(pred_boxes, scores, gt_boxes, iou_match=0.5) -> MatchResult:
    """Greedy one-to-one matching: a prediction is TP iff IoU >= iou_match with a still-unmatched GT."""
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    tp = np.zeros(pred_boxes.shape[0], dtype=bool)
    if gt_boxes.shape[0] == 0 or pred_boxes.shape[0] == 0:
        return MatchResult(tp, gt_boxes.shape[0])
    ious = iou_matrix(pred_boxes, gt_boxes)
    free = np.ones(gt_boxes.shape[0], dtype=bool)
    for i in _match_order(pred_boxes, scores):
        cand = np.where(free, ious[i], -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= iou_match:
            tp[i] = True
            free[j] = False
    return MatchResult(tp, int(free.sum()))


def pr_curve(scores, tp_flags, n_gt):
    """One point per distinct score t: predictions with score >= t count as detections."""
    if n_gt <= 0:
        raise UsageError("precision/recall undefined: no ground-truth positives")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    tp_flags = np.asarray(tp_flags, dtype=bool).reshape(-1)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], tp_flags[order]
    tp_cum = np.cumsum(t)
    fp_cum = np.cumsum(~t)
    last = np.r_[s[1:] != s[:-1], True] if s.size else np.zeros(0, dtype=bool)
    points = []
    for k in np.flatnonzero(last)[::-1]:
        tp, fp = int(tp_cum[k]), int(fp_cum[k])
        precision = tp / (tp + fp) if tp + fp else 1.0
        points.append(PRPoint(float(s[k]), precision, tp / n_gt))
    return points


def f1(precision, recall):
    return 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def f1_scores(points, operating_threshold=0.5):
    """(max F1 over the curve, F1 when keeping detections scored >= operating_threshold)."""
    if not points:
        raise UsageError("empty precision-recall curve")
    values = [f1(p.precision, p.recall) for p in points]
    at = [v for p, v in zip(points, values) if p.threshold >= operating_threshold]
    return max(values), (at[0] if at else 0.0)


def average_precision(points):
    """Step-wise area under the curve, walking thresholds from high to low."""
    ap, prev_recall = 0.0, 0.0
    for p in reversed(points):
        ap += (p.recall - prev_recall) * p.precision
        prev_recall = p.recall
    return ap


def classification_f1_max(scores, labels):
    labels = np.asarray(labels).astype(bool)
    if not labels.any():
        return 0.0
    return f1_scores(pr_curve(scores, labels, int(labels.sum())))[0]


# -- reports -----------------------------------------------------------------------


@dataclass
class EvalReport:
    pr_points: list
    f1_max: float
    f1_at_half: float
    average_precision: float
    positives: int
    negatives: int
    n_scenes: int
    annotator: str = "main"
    subset: str = "all"
    mode: str | None = None
    seed: int | None = None
    path_errors: list | None = None

    def to_dict(self):
        d = asdict(self)
        d["pr_points"] = [[p.threshold, p.precision, p.recall] for p in self.pr_points]
        return d


def scene_gt_boxes(dataset, scene_id, annotator="main"):
    attr = ANNOTATOR_ATTR[annotator]
    raster, scene = dataset.raster(scene_id), dataset.scenes[scene_id]
    boxes = [b.as_array() for b, uid in zip(raster.user_boxes, raster.user_ids) if getattr(scene.users[uid], attr)]
    return np.array(boxes, dtype=np.float64).reshape(-1, 4)


def annotated_ids(dataset, scene_ids, annotator="main"):
    return [sid for sid in scene_ids if scene_gt_boxes(dataset, sid, annotator).shape[0] > 0]


def gt_table(dataset, scene_ids, annotator="main"):
    """{scene id: important boxes} under one annotator."""
    if annotator not in ANNOTATOR_ATTR:
        raise UsageError(f"annotator must be 'main' or 'alt', got {annotator!r}")
    return {sid: scene_gt_boxes(dataset, sid, annotator) for sid in scene_ids}


def evaluate_detections(gt_by_scene, bundles, scores, annotator="main", subset="all", iou_match=0.5,
                        mode=None, seed=None) -> EvalReport:
    """Match scored proposals against per-scene important boxes; scenes are visited in id order."""
    by_scene = {}
    for b, s in zip(bundles, scores):
        by_scene.setdefault(b.scene_id, []).append((b.box, float(s)))
    all_scores, all_tp, n_gt = [], [], 0
    for sid in sorted(gt_by_scene):
        gt = gt_by_scene[sid]
        n_gt += gt.shape[0]
        preds = by_scene.get(sid, [])
        if not preds:
            continue
        boxes = np.array([p[0] for p in preds])
        sc = np.array([p[1] for p in preds])
        m = match_predictions(boxes, sc, gt, iou_match)
        all_scores.append(sc)
        all_tp.append(m.tp)
    scores_arr = np.concatenate(all_scores) if all_scores else np.zeros(0)
    tp_arr = np.concatenate(all_tp) if all_tp else np.zeros(0, dtype=bool)
    points = pr_curve(scores_arr, tp_arr, n_gt)
    f1_max, f1_half = f1_scores(points) if points else (0.0, 0.0)
    return EvalReport(
        pr_points=points,
        f1_max=f1_max,
        f1_at_half=f1_half,
        average_precision=average_precision(points),
        positives=n_gt,
        negatives=int(np.sum(~tp_arr)),
        n_scenes=len(gt_by_scene),
        annotator=annotator,
        subset=subset,
        mode=mode,
        seed=seed,
    )


def evaluate_fusion(net, mode, dataset, scene_ids, bundles, annotator="main", subset="all", seed=None,
                    gt_by_scene=None):
    from icare.fusion import feature_matrix, score_batch

    if gt_by_scene is None:
        gt_by_scene = gt_table(dataset, scene_ids, annotator)
    bundles = [b for b in bundles if b.scene_id in gt_by_scene]
    scores = score_batch(net, feature_matrix(mode, bundles)) if bundles else np.zeros(0)
    return evaluate_detections(gt_by_scene, bundles, scores, annotator, subset, mode=mode, seed=seed)


# -- ablation ---------------------------------------------------------------------


@dataclass
class AblationRow:
    mode: str
    seed: int
    f1_all: float
    f1_annotated: float
    f1_alt_all: float
    f1_alt_annotated: float
    ap_all: float
    best_epoch: int


@dataclass
class AblationTable:
    rows: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)  # (mode, seed, annotator, subset) -> EvalReport
    proposal_source: str = "oracle"

    def modes(self):
        return sorted({r.mode for r in self.rows})

    def mean(self, mode, column="f1_all"):
        return float(np.mean([getattr(r, column) for r in self.rows if r.mode == mode]))

    def std(self, mode, column="f1_all"):
        return float(np.std([getattr(r, column) for r in self.rows if r.mode == mode]))

    def summary(self):
        cols = ("f1_all", "f1_annotated", "f1_alt_all", "f1_alt_annotated", "ap_all")
        return {m: {c: {"mean": self.mean(m, c), "std": self.std(m, c)} for c in cols} for m in self.modes()}

    def to_dict(self):
        return {
            "proposal_source": self.proposal_source,
            "rows": [asdict(r) for r in self.rows],
            "summary": self.summary(),
        }


def _ablation_arm(mode, seed, train, val, test, gt_sets, fusion_config):
    from icare.fusion import train_fusion

    result = train_fusion(train, mode, fusion_config, seed=seed, val_samples=val)
    reports = {}
    for (annotator, subset), gt in gt_sets.items():
        reports[(mode, seed, annotator, subset)] = evaluate_fusion(result.net, mode, None, None, test, annotator,
                                                                   subset, seed, gt_by_scene=gt)
    f1s = {k[2:]: r.f1_max for k, r in reports.items()}
    row = AblationRow(mode, int(seed), f1s[("main", "all")], f1s[("main", "annotated")], f1s[("alt", "all")],
                      f1s[("alt", "annotated")], reports[(mode, seed, "main", "all")].average_precision,
                      result.best_epoch)
    return row, reports


def run_ablation(dataset, proposer_net, pathnet, modes=("A", "B", "C", "D"), seeds=(0, 1, 2),
                 proposal_source="oracle", fusion_config=None, samples=None, log=None, workers=1) -> AblationTable:
    """Train one fusion head per (mode, seed) and score it on the test split under both annotators.

    With ``workers > 1`` the arms run in separate processes; every arm is
    seeded on its own, so the table does not depend on the worker count.
    """
    from icare.fusion import FusionConfig

    fusion_config = fusion_config or FusionConfig()
    if samples is None:
        samples = build_split_samples(dataset, proposer_net, pathnet, proposal_source)
    test_ids = dataset.ids("test")
    gt_sets = {}
    for annotator in ("main", "alt"):
        full = gt_table(dataset, test_ids, annotator)
        gt_sets[(annotator, "all")] = full
        gt_sets[(annotator, "annotated")] = {sid: b for sid, b in full.items() if b.shape[0] > 0}
    arms = []
    for mode in modes:
        train = [b.restrict(mode) for b in samples["train"]]
        val = [b.restrict(mode) for b in samples["val"]] or None
        test = [b.restrict(mode) for b in samples["test"]]
        arms.extend((mode, seed, train, val, test, gt_sets, fusion_config) for seed in seeds)

    if workers > 1 and len(arms) > 1:
        import multiprocessing
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(min(workers, len(arms)), mp_context=multiprocessing.get_context("fork")) as pool:
            outcomes = list(pool.map(_ablation_arm, *zip(*arms)))
    else:
        outcomes = [_ablation_arm(*arm) for arm in arms]

    table = AblationTable(proposal_source=proposal_source)
    for row, reports in outcomes:
        table.rows.append(row)
        table.reports.update(reports)
        if log:
            log(f"ablation {row.mode} seed {row.seed}: f1 all {row.f1_all:.4f} annotated {row.f1_annotated:.4f} "
                f"alt {row.f1_alt_all:.4f}")
    return table


def build_split_samples(dataset, proposer_net, pathnet, proposal_source="oracle"):
    from icare.fusion import make_training_samples

    return {
        name: make_training_samples(dataset, dataset.ids(name), proposer_net, proposal_source, None, pathnet)
        for name in ("train", "val", "test")
    }


@dataclass
class CrossAnnotatorReport:
    f1_same: dict  # mode -> mean F1 against the annotator the heads were trained on
    f1_cross: dict  # mode -> mean F1 against the second annotator
    annotator: str = "alt"

    def to_dict(self):
        return asdict(self)


def cross_annotator_eval(table: AblationTable, modes=("A", "C")) -> CrossAnnotatorReport:
    """Heads trained on main labels, compared on main vs alt test labels (all frames)."""
    return CrossAnnotatorReport(
        f1_same={m: table.mean(m, "f1_all") for m in modes},
        f1_cross={m: table.mean(m, "f1_alt_all") for m in modes},
    )


# -- serialisation ---------------------------------------------------------------------


def dumps_json(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def pr_points_csv(reports):
    """Flat CSV: mode, seed, annotator, subset, threshold, precision, recall."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mode", "seed", "annotator", "subset", "threshold", "precision", "recall"])
    for rep in reports:
        for p in rep.pr_points:
            writer.writerow([rep.mode or "", "" if rep.seed is None else rep.seed, rep.annotator, rep.subset,
                             repr(p.threshold), repr(p.precision), repr(p.recall)])
    return buf.getvalue()


def read_pr_csv(path):
    """{(mode, seed, annotator, subset): [PRPoint, ...]} from a pr_points CSV."""
    curves = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["mode"], row["seed"], row["annotator"], row["subset"])
            curves.setdefault(key, []).append(PRPoint(float(row["threshold"]), float(row["precision"]),
                                                      float(row["recall"])))
    return curves
