"""Evaluation metrics over K-mode future predictions: minADE, minFDE, miss
rate, and the brier variants that penalize the best mode's score.

All metrics run on future frames in the scene's normalized frame and take
plain arrays: trajectories [K x T_f x 2], ground truth [T_f x 2], plus an
optional validity mask for partially observed targets.
"""

import csv

import numpy as np

MISS_THRESHOLD = 2.0

METRIC_NAMES = ("min_ade", "min_fde", "miss_rate", "brier_min_ade", "brier_min_fde")


def _checked(trajs, gt, valid):
    trajs = np.asarray(trajs, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if trajs.ndim != 3 or trajs.shape[-1] != 2:
        raise ValueError(f"trajectories must be [K, T, 2], got {trajs.shape}")
    if gt.shape != trajs.shape[1:]:
        raise ValueError(f"gt shape {gt.shape} does not match trajectories {trajs.shape}")
    if valid is None:
        valid = np.ones(gt.shape[0], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (gt.shape[0],):
        raise ValueError("valid mask must have one entry per frame")
    if not valid.any():
        raise ValueError("no valid future frame to evaluate")
    return trajs, gt, valid


def min_fde(trajs, gt, valid=None):
    """Smallest displacement at the last valid frame, and which mode achieves
    it (ties go to the lowest index)."""
    trajs, gt, valid = _checked(trajs, gt, valid)
    end = int(np.nonzero(valid)[0][-1])
    d = np.linalg.norm(trajs[:, end] - gt[end], axis=-1)
    best = int(np.argmin(d))
    return float(d[best]), best


def min_ade(trajs, gt, valid=None):
    """Smallest mean-over-frames displacement, and the achieving mode."""
    trajs, gt, valid = _checked(trajs, gt, valid)
    d = np.linalg.norm(trajs - gt[None], axis=-1)[:, valid].mean(axis=1)
    best = int(np.argmin(d))
    return float(d[best]), best


def miss_rate(trajs, gt, valid=None, threshold=MISS_THRESHOLD):
    """1.0 if even the best endpoint misses by more than the threshold."""
    value, _ = min_fde(trajs, gt, valid)
    return 1.0 if value > threshold else 0.0


def brier_min_fde(trajs, scores, gt, valid=None, multiplicative=False):
    """minFDE penalized by the best mode's score: minFDE + (1-p)^2.

    `multiplicative` switches to the strict product minFDE * (1-p)^2; the
    additive form is the challenge convention and the default.
    """
    value, best = min_fde(trajs, gt, valid)
    p = float(np.asarray(scores, dtype=np.float64)[best])
    penalty = (1.0 - p) ** 2
    return value * penalty if multiplicative else value + penalty


def brier_min_ade(trajs, scores, gt, valid=None, multiplicative=False):
    """minADE with the same score penalty applied to minADE's best mode."""
    value, best = min_ade(trajs, gt, valid)
    p = float(np.asarray(scores, dtype=np.float64)[best])
    penalty = (1.0 - p) ** 2
    return value * penalty if multiplicative else value + penalty


def evaluate_scenario(trajs, scores, gt, valid=None):
    """All five metrics plus the best mode's score for one scenario."""
    ade, _ = min_ade(trajs, gt, valid)
    fde, best = min_fde(trajs, gt, valid)
    p_best = float(np.asarray(scores, dtype=np.float64)[best])
    return {
        "min_ade": ade,
        "min_fde": fde,
        "miss_rate": miss_rate(trajs, gt, valid),
        "brier_min_ade": brier_min_ade(trajs, scores, gt, valid),
        "brier_min_fde": brier_min_fde(trajs, scores, gt, valid),
        "p_best": p_best,
    }


def evaluate_corpus(predictions, ground_truth):
    """Per-scenario metric rows (ordered by scenario_id) and corpus means.

    `predictions` maps scenario_id -> (trajectories [K x T_f x 2], scores [K]);
    `ground_truth` maps scenario_id -> (gt [T_f x 2], valid [T_f]).  The id
    sets must match exactly.  Means over an empty corpus are NaN.
    """
    missing = sorted(set(ground_truth) - set(predictions))
    extra = sorted(set(predictions) - set(ground_truth))
    if missing or extra:
        raise ValueError(
            f"scenario ids do not match: missing predictions for {missing[:3]}, "
            f"unmatched predictions for {extra[:3]}"
        )
    rows = []
    for sid in sorted(predictions):
        trajs, scores = predictions[sid]
        gt, valid = ground_truth[sid]
        row = {"scenario_id": sid}
        row.update(evaluate_scenario(trajs, scores, gt, valid))
        rows.append(row)
    keys = METRIC_NAMES + ("p_best",)
    if rows:
        means = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    else:
        means = {k: float("nan") for k in keys}
    return rows, means


def write_metrics_csv(path, rows, means):
    """CSV with one row per scenario and a final MEAN row."""
    keys = METRIC_NAMES + ("p_best",)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scenario_id",) + keys)
        for row in rows:
            writer.writerow([row["scenario_id"]] + [repr(row[k]) for k in keys])
        writer.writerow(["MEAN"] + [repr(means[k]) for k in keys])
