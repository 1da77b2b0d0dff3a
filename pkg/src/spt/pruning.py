"""Attention pruning: per-row top-K mask extraction and its layer schedule.

The mask over visual tokens starts all-ones and shrinks monotonically: at
each scheduled layer the head-averaged attention map elects, per row, the
K strongest of the currently kept columns.  K is a fraction of the row's
*current* support (K = max(1, round(keep_ratio * support))), so successive
updates keep cutting; the alternative fraction-of-N reading is available
as ``k_mode="total"`` for comparison.  A mask produced at layer u takes
effect from layer u+1 onward; layer u itself runs under the previous mask.

round() here is half-away-from-zero, because K is sensitive to rounding
at small N and Python's bankers rounding would be surprising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .masks import AttentionMask

K_MODES = ("support", "total")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PruneSchedule:
    """Which encoder layers update the mask, and how much each update keeps."""

    update_layers: tuple = (3, 6, 9)
    keep_ratio: float = 0.6
    k_mode: str = "support"

    def __post_init__(self):
        layers = tuple(int(l) for l in self.update_layers)
        object.__setattr__(self, "update_layers", layers)
        if any(b <= a for a, b in zip(layers, layers[1:])) or (layers and layers[0] < 1):
            raise ConfigError(f"update layers must be strictly increasing and >= 1: {layers}")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ConfigError(f"keep ratio must be in (0, 1], got {self.keep_ratio}")
        if self.k_mode not in K_MODES:
            raise ConfigError(f"k_mode must be one of {K_MODES}, got {self.k_mode!r}")


@dataclass
class MaskState:
    """Evolving visual-token mask plus the support history of each stage."""

    current: AttentionMask
    stage: int = 0
    history: list = field(default_factory=list)  # per-stage row-support vectors

    @classmethod
    def dense(cls, n: int) -> "MaskState":
        return cls(current=AttentionMask.ones(n))


def topk_row_mask(avg_attention, prev: AttentionMask, keep_ratio: float,
                  k_mode: str = "support") -> AttentionMask:
    """Keep, per row, the K largest attention values inside the previous support.

    Ties break toward the lower column index.  Every row keeps at least one
    column, and the result's support is always a subset of ``prev``'s.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ConfigError(f"keep ratio must be in (0, 1], got {keep_ratio}")
    if k_mode not in K_MODES:
        raise ConfigError(f"k_mode must be one of {K_MODES}, got {k_mode!r}")
    scores = np.asarray(getattr(avg_attention, "data", avg_attention), dtype=np.float64)
    n = prev.rows
    if scores.shape != (n, prev.cols):
        raise ConfigError(f"attention shape {scores.shape} does not match mask {n}x{prev.cols}")
    # Dropped columns rank last (-score becomes +inf); stable argsort keeps
    # ascending column order among equal values, which is the tie rule.
    ranked = np.argsort(np.where(prev.bits.astype(bool), -scores, np.inf),
                        axis=1, kind="stable")
    out = np.zeros_like(prev.bits)
    for i in range(n):
        support = int(prev.row_support[i])
        basis = support if k_mode == "support" else prev.cols
        k = min(support, max(1, round_half_up(keep_ratio * basis)))
        out[i, ranked[i, :k]] = 1
    return AttentionMask._trusted(out)


def apply_prune_schedule(layer_index: int, record, state: MaskState,
                         schedule: PruneSchedule, keypoint_count: int = 0) -> MaskState:
    """Advance the mask state after encoder layer ``layer_index`` (1-indexed).

    On a scheduled layer the head-averaged attention, restricted to the
    visual-by-visual block (keypoint rows/columns stripped off the front),
    elects the next mask.  The caller runs layer ``layer_index`` under the
    pre-existing mask and only later layers see the update.
    """
    if layer_index not in schedule.update_layers:
        return state
    if record is None:
        raise ConfigError(
            f"layer {layer_index} is a scheduled update but no attention record was retained"
        )
    avg = np.asarray(record.head_average.data)
    visual = avg[keypoint_count:, keypoint_count:]
    state.current = topk_row_mask(visual, state.current, schedule.keep_ratio, schedule.k_mode)
    state.stage += 1
    state.history.append(state.current.row_support.copy())
    return state


@dataclass
class SparsityStats:
    """Attention-stage sparsity accounting for one forward pass.

    ``mac_*`` fields count multiply-accumulates of the two N x N attention
    products (QK^T and AV) across all encoder layers; the ratio equals the
    layer-weighted mask density.
    """

    stages: int
    per_stage_density: list
    layer_weighted_density: float
    mac_ratio: float
    mac_attention_masked: int
    mac_attention_dense: int

    def to_json_dict(self) -> dict:
        return {
            "stages": self.stages,
            "per_stage_density": self.per_stage_density,
            "layer_weighted_density": self.layer_weighted_density,
            "mac_ratio": self.mac_ratio,
        }


def sparsity_report(state: MaskState, config) -> SparsityStats:
    """Densities per stage and predicted attention MACs versus the dense baseline."""
    n = config.num_patches
    layers = config.encoder_layers
    schedule = config.schedule
    cell_count = float(n) * float(n)
    stage_density = [float(h.sum()) / cell_count for h in state.history]
    live_after_stage = [n * n] + [int(h.sum()) for h in state.history]

    per_layer_live = []
    for layer in range(1, layers + 1):
        stage = min(sum(1 for u in schedule.update_layers if u < layer), state.stage)
        per_layer_live.append(live_after_stage[stage])

    dense_per_layer = 2 * n * n * config.embed_dim
    mac_dense = dense_per_layer * layers
    mac_masked = sum(2 * live * config.embed_dim for live in per_layer_live)
    weighted = sum(live / cell_count for live in per_layer_live) / layers
    return SparsityStats(
        stages=state.stage,
        per_stage_density=stage_density,
        layer_weighted_density=weighted,
        mac_ratio=mac_masked / mac_dense,
        mac_attention_masked=mac_masked,
        mac_attention_dense=mac_dense,
    )
