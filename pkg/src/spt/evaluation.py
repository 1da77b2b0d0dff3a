"""Heatmap decoding, head-normalized keypoint accuracy, and the keep-ratio sweep.

A joint counts as correct at threshold alpha when it is visible and its
predicted location lies within alpha * head_size of ground truth (boundary
inclusive).  Joints invisible in ground truth are excluded from both
numerator and denominator.  The decoder is argmax plus a quarter-pixel
shift toward the larger axis neighbor; plain argmax is selectable for
debugging.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import render_target_heatmaps
from .errors import ConfigError
from .model import AdamState, PoseModelParams, forward, train_step
from .skeleton import compile_joint_mask, default_skeleton

DEFAULT_ALPHAS = (0.5, 0.1)


def decode_heatmap(heatmap, image_h: int, image_w: int, refine: bool = True):
    """Peak location of one heatmap, in input-image pixel coordinates.

    Ties go to the lowest row-major index; the quarter-pixel shift applies
    only when both axis neighbors exist and differ.
    """
    grid = np.asarray(getattr(heatmap, "data", heatmap), dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ConfigError(f"heatmap must be a non-empty 2-D map, got shape {grid.shape}")
    h, w = grid.shape
    flat_index = int(np.argmax(grid))
    row, col = divmod(flat_index, w)
    x, y = float(col), float(row)
    if refine:
        if 0 < col < w - 1:
            right, left = grid[row, col + 1], grid[row, col - 1]
            if right > left:
                x += 0.25
            elif left > right:
                x -= 0.25
        if 0 < row < h - 1:
            below, above = grid[row + 1, col], grid[row - 1, col]
            if below > above:
                y += 0.25
            elif above > below:
                y -= 0.25
    return x * (image_w / w), y * (image_h / h)


def decode_heatmaps(heatmaps, image_h: int, image_w: int, refine: bool = True) -> np.ndarray:
    """Stack of per-joint decodes: (J, 2) array of (x, y)."""
    stack = np.asarray(getattr(heatmaps, "data", heatmaps), dtype=np.float64)
    return np.array([decode_heatmap(m, image_h, image_w, refine) for m in stack])


@dataclass
class PckhReport:
    """Correctness rates per joint and their mean, per threshold.

    ``per_joint[alpha]`` holds one rate per joint (NaN when that joint is
    never visible); ``mean[alpha]`` averages the defined rates.
    """

    alphas: tuple
    per_joint: dict
    mean: dict
    sample_count: int

    def to_json_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "alphas": list(self.alphas),
            "per_joint": {str(a): [None if np.isnan(r) else float(r) for r in rates]
                          for a, rates in self.per_joint.items()},
            "mean": {str(a): float(m) for a, m in self.mean.items()},
        }


def pckh(predictions, annotations, alphas=DEFAULT_ALPHAS) -> PckhReport:
    """Head-normalized correct-keypoint rates at each threshold."""
    if len(predictions) != len(annotations):
        raise ConfigError(
            f"{len(predictions)} predictions for {len(annotations)} annotations"
        )
    if not annotations:
        raise ConfigError("cannot evaluate an empty dataset")
    alphas = tuple(float(a) for a in alphas)
    if any(a <= 0 for a in alphas):
        raise ConfigError(f"thresholds must be > 0: {alphas}")
    j = annotations[0].joint_count
    visible = np.zeros(j, dtype=np.int64)
    correct = {a: np.zeros(j, dtype=np.int64) for a in alphas}
    for pred, ann in zip(predictions, annotations):
        pred = np.asarray(pred, dtype=np.float64).reshape(j, 2)
        dist = np.linalg.norm(pred - ann.joints, axis=1)
        vis = ann.visibility
        visible += vis
        for a in alphas:
            correct[a] += vis & (dist <= a * ann.head_size)
    per_joint, mean = {}, {}
    with np.errstate(invalid="ignore"):
        for a in alphas:
            rates = np.where(visible > 0, correct[a] / np.maximum(visible, 1), np.nan)
            per_joint[a] = rates
            mean[a] = float(np.nanmean(rates))
    return PckhReport(alphas=alphas, per_joint=per_joint, mean=mean,
                      sample_count=len(annotations))


def _workers_from_env() -> int:
    try:
        return max(1, int(os.environ.get("SPT_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_model(params, config, skeleton_mask, samples, alphas=DEFAULT_ALPHAS,
                   refine: bool = True, workers: int | None = None) -> PckhReport:
    """Forward + decode every (image, Annotation) sample, then score PCKh.

    ``workers`` > 1 opts into thread-parallel evaluation; the dataset and
    parameters are shared read-only.
    """
    workers = _workers_from_env() if workers is None else workers

    def predict(sample):
        image, _ = sample
        heatmaps, _ = forward(image, params, config, skeleton_mask)
        return decode_heatmaps(heatmaps, config.image_h, config.image_w, refine)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(predict, samples))
    else:
        preds = [predict(s) for s in samples]
    return pckh(preds, [ann for _, ann in samples], alphas)


@dataclass
class SweepRow:
    keep_ratio: float
    report: PckhReport
    sparsity: object


def train_model(train_samples, config, skeleton_mask, steps: int, batch_size: int,
                learning_rate: float, seed: int, target_sigma: float = 1.5,
                params: PoseModelParams | None = None, log_fn=None):
    """Train from scratch on (image, Annotation) pairs; returns (params, losses).

    Batches cycle through the dataset in order, so runs are a pure function
    of (seed, data, budget).
    """
    if params is None:
        params = PoseModelParams.init(config, seed=seed)
    optimizer = AdamState(lr=learning_rate)
    prepared = [
        (image,
         render_target_heatmaps(ann, config.heatmap_h, config.heatmap_w,
                                target_sigma, config.image_h, config.image_w),
         ann.visibility)
        for image, ann in train_samples
    ]
    losses = []
    cursor = 0
    for step in range(steps):
        batch = []
        for _ in range(batch_size):
            batch.append(prepared[cursor])
            cursor = (cursor + 1) % len(prepared)
        loss = train_step(batch, params, config, skeleton_mask, optimizer)
        losses.append(loss)
        if log_fn is not None:
            log_fn(step, loss)
    return params, losses


def ablation_sweep(keep_ratios, base_config, train_samples, test_samples,
                   train_budget: int, batch_size: int = 8, learning_rate: float = 1e-3,
                   seed: int = 0, skeleton=None, alphas=DEFAULT_ALPHAS,
                   target_sigma: float = 1.5, refine: bool = True):
    """Train one identically-seeded model per keep ratio and score each.

    Mirrors the keep-ratio ablation protocol: same data, same budget, same
    seed; only the prune schedule's keep ratio changes.
    """
    skeleton = skeleton or default_skeleton()
    joint_mask = compile_joint_mask(skeleton)
    rows = []
    for keep_ratio in keep_ratios:
        config = base_config.with_keep_ratio(float(keep_ratio)).validate()
        params, _ = train_model(train_samples, config, joint_mask, train_budget,
                                batch_size, learning_rate, seed, target_sigma)
        report = evaluate_model(params, config, joint_mask, test_samples, alphas, refine)
        image, _ = test_samples[0] if test_samples else train_samples[0]
        _, diag = forward(image, params, config, joint_mask)
        rows.append(SweepRow(float(keep_ratio), report, diag.sparsity))
    return rows


# ---------------------------------------------------------------------------
# Plain-text tables (per-joint columns, then Mean, then Mean@0.1)
# ---------------------------------------------------------------------------


def report_table(report: PckhReport, joint_names, label: str = "model") -> str:
    return sweep_table_from_pairs([(label, report)], joint_names)


def sweep_table(rows, joint_names) -> str:
    return sweep_table_from_pairs(
        [(f"akr={row.keep_ratio:.2f}", row.report) for row in rows], joint_names
    )


def sweep_table_from_pairs(labeled_reports, joint_names) -> str:
    """Aligned table: one row per entry, per-joint rates at alpha=0.5 in
    percent, then Mean and Mean@0.1 columns."""
    headers = ["method"] + list(joint_names) + ["Mean", "Mean@0.1"]
    body = []
    for label, report in labeled_reports:
        main = report.per_joint.get(0.5, next(iter(report.per_joint.values())))
        cells = [label]
        cells += ["-" if np.isnan(r) else f"{100.0 * r:.2f}" for r in main]
        cells.append(f"{100.0 * report.mean.get(0.5, float('nan')):.2f}")
        tail = report.mean.get(0.1)
        cells.append("-" if tail is None else f"{100.0 * tail:.2f}")
        body.append(cells)
    widths = [max(len(row[i]) for row in [headers] + body) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
