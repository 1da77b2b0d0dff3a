"""Full network assembly: patch front end, pruned encoder, graph stage, head.

The token sequence is [keypoint tokens, visual tokens].  The encoder mask
over the full sequence keeps every keypoint-involved entry at 1; only the
visual-by-visual block evolves under the prune schedule.  After the
encoder, the keypoint token rows pass through the graph stage (the same
block structure under the constant joint mask) and a small MLP head maps
each token to one heatmap.

There is no CNN backbone: images are optionally average-pool downsampled
(emulating a stem's stride) and then patchified directly, so the sparsity
machinery under study is the whole model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import AttentionLayerParams, encoder_block
from .errors import CheckpointError, ConfigError, NonFiniteLossError
from .formats import load_tensor, save_tensor
from .masks import AttentionMask
from .pruning import MaskState, PruneSchedule, apply_prune_schedule, sparsity_report
from .rng import SplitMix64
from .skeleton import JointMask
from .tensor import ComputationTape, Tensor

POSITIONAL_MODES = ("learned", "sinusoidal")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults follow the reference scale
    (12 encoder layers, width 192, 8 heads, 8 graph layers, updates at 3/6/9)."""

    image_h: int = 256
    image_w: int = 256
    channels: int = 1
    downsample: int = 4
    patch_h: int = 4
    patch_w: int = 4
    embed_dim: int = 192
    heads: int = 8
    encoder_layers: int = 12
    graph_layers: int = 8
    joint_count: int = 16
    heatmap_h: int = 64
    heatmap_w: int = 64
    mlp_ratio: int = 3
    pos_encoding: str = "learned"
    schedule: PruneSchedule = field(default_factory=PruneSchedule)

    def validate(self) -> "ModelConfig":
        if self.downsample < 1:
            raise ConfigError(f"downsample must be >= 1, got {self.downsample}")
        if self.image_h % self.downsample or self.image_w % self.downsample:
            raise ConfigError(
                f"downsample {self.downsample} does not divide image "
                f"{self.image_h}x{self.image_w}"
            )
        ph, pw = self.pooled_h, self.pooled_w
        if ph % self.patch_h or pw % self.patch_w:
            raise ConfigError(
                f"patch {self.patch_h}x{self.patch_w} does not divide grid {ph}x{pw}"
            )
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"heads={self.heads} must evenly partition embed dim {self.embed_dim}"
            )
        if self.pos_encoding not in POSITIONAL_MODES:
            raise ConfigError(f"pos_encoding must be one of {POSITIONAL_MODES}")
        if self.pos_encoding == "sinusoidal" and self.embed_dim % 4:
            raise ConfigError("sinusoidal positional encoding needs embed_dim % 4 == 0")
        if min(self.joint_count, self.heatmap_h, self.heatmap_w, self.channels,
               self.encoder_layers, self.graph_layers, self.mlp_ratio) < 1:
            raise ConfigError("counts and extents must be positive")
        if self.schedule.update_layers and self.schedule.update_layers[-1] > self.encoder_layers:
            raise ConfigError(
                f"update layers {self.schedule.update_layers} exceed "
                f"encoder depth {self.encoder_layers}"
            )
        return self

    @property
    def pooled_h(self) -> int:
        return self.image_h // self.downsample

    @property
    def pooled_w(self) -> int:
        return self.image_w // self.downsample

    @property
    def grid_h(self) -> int:
        return self.pooled_h // self.patch_h

    @property
    def grid_w(self) -> int:
        return self.pooled_w // self.patch_w

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_h * self.patch_w

    def to_json_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in (
            "image_h", "image_w", "channels", "downsample", "patch_h", "patch_w",
            "embed_dim", "heads", "encoder_layers", "graph_layers", "joint_count",
            "heatmap_h", "heatmap_w", "mlp_ratio", "pos_encoding",
        )}
        doc["schedule"] = {
            "update_layers": list(self.schedule.update_layers),
            "keep_ratio": self.schedule.keep_ratio,
            "k_mode": self.schedule.k_mode,
        }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        sched = doc.pop("schedule", {})
        schedule = PruneSchedule(
            update_layers=tuple(sched.get("update_layers", (3, 6, 9))),
            keep_ratio=float(sched.get("keep_ratio", 0.6)),
            k_mode=sched.get("k_mode", "support"),
        )
        return cls(schedule=schedule, **doc).validate()

    def with_keep_ratio(self, keep_ratio: float) -> "ModelConfig":
        return replace(self, schedule=replace(self.schedule, keep_ratio=keep_ratio))


def sinusoidal_encoding(grid_h: int, grid_w: int, embed_dim: int) -> np.ndarray:
    """Fixed 2D sin/cos table: quarters of D for sin x, cos x, sin y, cos y."""
    quarter = embed_dim // 4
    freqs = 1.0 / (10000.0 ** (np.arange(quarter) / quarter))
    ys, xs = np.mgrid[0:grid_h, 0:grid_w]
    xs = xs.reshape(-1, 1) * freqs
    ys = ys.reshape(-1, 1) * freqs
    return np.concatenate([np.sin(xs), np.cos(xs), np.sin(ys), np.cos(ys)], axis=1)


@dataclass
class PoseModelParams:
    """All trainable tensors.  Keypoint tokens start from N(0, 0.02^2)."""

    patch_projection: Tensor
    positional_encoding: Tensor
    keypoint_tokens: Tensor
    encoder_blocks: list
    graph_blocks: list
    head_norm_gain: Tensor
    head_norm_bias: Tensor
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "PoseModelParams":
        config.validate()
        rng = SplitMix64(seed)
        d = config.embed_dim
        std = 0.02
        patch_projection = Tensor(rng.normal_array((config.patch_dim, d), std),
                                  requires_grad=True)
        if config.pos_encoding == "learned":
            positional = Tensor(rng.normal_array((config.num_patches, d), std),
                                requires_grad=True)
        else:
            positional = Tensor(sinusoidal_encoding(config.grid_h, config.grid_w, d))
        keypoint_tokens = Tensor(rng.normal_array((config.joint_count, d), std),
                                 requires_grad=True)
        encoder_blocks = [AttentionLayerParams.init(d, config.mlp_ratio, rng)
                          for _ in range(config.encoder_layers)]
        graph_blocks = [AttentionLayerParams.init(d, config.mlp_ratio, rng)
                        for _ in range(config.graph_layers)]
        out_dim = config.heatmap_h * config.heatmap_w
        return cls(
            patch_projection=patch_projection,
            positional_encoding=positional,
            keypoint_tokens=keypoint_tokens,
            encoder_blocks=encoder_blocks,
            graph_blocks=graph_blocks,
            head_norm_gain=Tensor(np.ones(d), requires_grad=True),
            head_norm_bias=Tensor(np.zeros(d), requires_grad=True),
            head_w1=Tensor(rng.normal_array((d, d), std), requires_grad=True),
            head_b1=Tensor(np.zeros(d), requires_grad=True),
            head_w2=Tensor(rng.normal_array((d, out_dim), std), requires_grad=True),
            head_b2=Tensor(np.zeros(out_dim), requires_grad=True),
        )

    def named_parameters(self):
        """Deterministically ordered (name, tensor) pairs of trainable leaves."""
        pairs = [("patch_projection", self.patch_projection)]
        if self.positional_encoding.requires_grad:
            pairs.append(("positional_encoding", self.positional_encoding))
        pairs.append(("keypoint_tokens", self.keypoint_tokens))
        for i, block in enumerate(self.encoder_blocks):
            pairs.extend(block.named(f"encoder.{i}"))
        for i, block in enumerate(self.graph_blocks):
            pairs.extend(block.named(f"graph.{i}"))
        pairs.extend([
            ("head_norm_gain", self.head_norm_gain),
            ("head_norm_bias", self.head_norm_bias),
            ("head_w1", self.head_w1),
            ("head_b1", self.head_b1),
            ("head_w2", self.head_w2),
            ("head_b2", self.head_b2),
        ])
        return pairs

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()


@dataclass
class Diagnostics:
    """Per-forward bookkeeping: mask evolution, sparsity, optional attention."""

    mask_state: MaskState
    sparsity: object
    stage_masks: list            # visual-block mask after each update
    records: list | None = None  # encoder then graph AttentionRecords, if retained


def patchify_embed(image: Tensor, params: PoseModelParams, config: ModelConfig) -> Tensor:
    """Image (C, H, W) to position-encoded visual tokens (N_p, D)."""
    expected = (config.channels, config.image_h, config.image_w)
    if image.shape != expected:
        raise ConfigError(f"image shape {image.shape} does not match config {expected}")
    x = image
    if config.downsample > 1:
        x = T.avg_pool2d(x, config.downsample, config.downsample)
    c, gh, gw = config.channels, config.grid_h, config.grid_w
    x = T.reshape(x, (c, gh, config.patch_h, gw, config.patch_w))
    x = T.transpose(x, (1, 3, 0, 2, 4))  # row-major patch order, row-major inside
    x = T.reshape(x, (config.num_patches, config.patch_dim))
    x = T.matmul(x, params.patch_projection)
    return T.add(x, params.positional_encoding)


def full_token_mask(visual_mask: AttentionMask, keypoint_count: int) -> AttentionMask:
    """Embed the visual-block mask; keypoint rows and columns stay all-ones."""
    n = keypoint_count + visual_mask.rows
    bits = np.ones((n, n), dtype=np.uint8)
    bits[keypoint_count:, keypoint_count:] = visual_mask.bits
    return AttentionMask(bits)


def _as_image_tensor(image, config: ModelConfig) -> Tensor:
    if isinstance(image, Tensor):
        if image.data.ndim == 2 and config.channels == 1:
            return Tensor(image.data[None, :, :])
        return image
    data = np.asarray(image, dtype=np.float64)
    if data.ndim == 2 and config.channels == 1:
        data = data[None, :, :]
    return Tensor(data)


def forward(image, params: PoseModelParams, config: ModelConfig, skeleton_mask,
            keep_records: bool = False):
    """Run the full network on one image.

    Returns (heatmaps (J, H_h, W_h), Diagnostics).  ``skeleton_mask`` is the
    constant joint mask for the graph stage (JointMask or AttentionMask).
    """
    joint_mask = (skeleton_mask.as_attention_mask()
                  if isinstance(skeleton_mask, JointMask) else skeleton_mask)
    j = config.joint_count
    if joint_mask.rows != j or joint_mask.cols != j:
        raise ConfigError(
            f"joint mask is {joint_mask.rows}x{joint_mask.cols}, config wants {j}x{j}"
        )
    img = _as_image_tensor(image, config)
    visual = patchify_embed(img, params, config)
    tokens = T.concat([params.keypoint_tokens, visual], axis=0)

    state = MaskState.dense(config.num_patches)
    stage_masks = []
    records = [] if keep_records else None
    mask = full_token_mask(state.current, j)
    for layer in range(1, config.encoder_layers + 1):
        need_record = keep_records or layer in config.schedule.update_layers
        tokens, record = encoder_block(tokens, mask, params.encoder_blocks[layer - 1],
                                       config.heads, need_record=need_record)
        if keep_records:
            records.append(record)
        before = state.stage
        apply_prune_schedule(layer, record, state, config.schedule, keypoint_count=j)
        if state.stage != before:
            stage_masks.append(state.current.copy())
            mask = full_token_mask(state.current, j)

    kp = T.narrow(tokens, 0, 0, j)
    for block in params.graph_blocks:
        kp, record = encoder_block(kp, joint_mask, block, config.heads,
                                   need_record=keep_records)
        if keep_records:
            records.append(record)

    kp = T.layer_norm(kp, params.head_norm_gain, params.head_norm_bias)
    h = T.add_bias(T.matmul(kp, params.head_w1), params.head_b1)
    h = T.gelu(h)
    h = T.add_bias(T.matmul(h, params.head_w2), params.head_b2)
    heatmaps = T.reshape(h, (j, config.heatmap_h, config.heatmap_w))

    diagnostics = Diagnostics(
        mask_state=state,
        sparsity=sparsity_report(state, config),
        stage_masks=stage_masks,
        records=records,
    )
    return heatmaps, diagnostics


def loss_mse(pred: Tensor, target, visibility) -> Tensor:
    """Mean squared error over visible joints; invisible joints contribute zero."""
    target_t = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target_t.shape:
        raise ConfigError(f"prediction {pred.shape} vs target {target_t.shape}")
    vis = np.asarray(visibility, dtype=bool).reshape(-1)
    if vis.shape[0] != pred.shape[0]:
        raise ConfigError(f"{vis.shape[0]} visibility flags for {pred.shape[0]} joints")
    visible = int(vis.sum())
    if visible == 0:
        return Tensor(0.0)
    weights = np.zeros(pred.shape, dtype=np.float64)
    weights[vis] = 1.0
    diff = T.sub(pred, target_t)
    masked_sq = T.mul(T.mul(diff, diff), Tensor(weights))
    return T.scale(T.sum_all(masked_sq), 1.0 / (visible * pred.shape[1] * pred.shape[2]))


@dataclass
class AdamState:
    """Adaptive-moment optimizer state; hyperparameters ride along."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: PoseModelParams) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params.named_parameters():
            grad = p.grad if p.grad is not None else np.zeros(p.shape)
            m = self.m.get(name)
            if m is None:
                m = np.zeros(p.shape)
                v = np.zeros(p.shape)
            else:
                v = self.v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.zero_grad()


def train_step(batch, params: PoseModelParams, config: ModelConfig, skeleton_mask,
               optimizer: AdamState) -> float:
    """One gradient step over a batch of (image, target_heatmaps, visibility).

    Deterministic given the seed and batch order.  A non-finite sample loss
    aborts before the update, naming the offending batch index.
    """
    if not batch:
        raise ConfigError("empty training batch")
    with ComputationTape() as tape:
        total = None
        for index, (image, target, visibility) in enumerate(batch):
            heatmaps, _ = forward(image, params, config, skeleton_mask)
            sample_loss = loss_mse(heatmaps, target, visibility)
            if not math.isfinite(sample_loss.item()):
                raise NonFiniteLossError(index, sample_loss.item())
            total = sample_loss if total is None else T.add(total, sample_loss)
        loss = T.scale(total, 1.0 / len(batch))
    T.backward(loss, tape)
    optimizer.step(params)
    return loss.item()


# ---------------------------------------------------------------------------
# Checkpoints: a directory of SPT1 tensors plus a manifest
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "spt-checkpoint-v1"


def save_checkpoint(directory, params: PoseModelParams, config: ModelConfig,
                    extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_json_dict(),
        "params": {},
    }
    if extra:
        manifest.update(extra)
    for name, p in params.named_parameters():
        filename = name.replace(".", "_") + ".spt"
        save_tensor(directory / filename, p.data)
        manifest["params"][name] = filename
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_checkpoint(directory):
    """Rebuild (params, config, manifest) from a checkpoint directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"{directory}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{directory}: unknown format {manifest.get('format')!r}")
    config = ModelConfig.from_json_dict(manifest["config"])
    params = PoseModelParams.init(config, seed=0)
    expected = dict(params.named_parameters())
    stored = manifest["params"]
    missing = sorted(set(expected) - set(stored))
    extra_names = sorted(set(stored) - set(expected))
    if missing or extra_names:
        raise CheckpointError(
            f"{directory}: manifest/config mismatch (missing {missing}, unexpected {extra_names})"
        )
    for name, tensor in expected.items():
        arr = load_tensor(directory / stored[name])
        if arr.shape != tensor.shape:
            raise CheckpointError(
                f"{directory}: parameter {name} has shape {arr.shape}, expected {tensor.shape}"
            )
        tensor.data = arr
    return params, config, manifest
