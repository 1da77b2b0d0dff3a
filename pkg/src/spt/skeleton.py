"""Articulated-body skeletons and their compiled joint attention masks.

A skeleton lists kinematic edges and left/right symmetric pairs; the
compiled J x J mask keeps, for each joint, itself, its adjacent joints,
and its symmetric partner.  The diagonal stays on so a keypoint token can
retain its own state through the residual path (standard for graph
attention; the mask is used as a constant and never trained).

Skeletons live in JSON files (keys: joint_count, names, edges,
symmetric_pairs) so joint conventions are user-definable, never baked in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SkeletonError
from .masks import AttentionMask


@dataclass(frozen=True)
class SkeletonSpec:
    joint_count: int
    names: tuple
    edges: tuple            # unordered joint-index pairs, kinematic adjacency
    symmetric_pairs: tuple  # unordered left/right pairs, each joint in at most one

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "edges", tuple(tuple(int(i) for i in e) for e in self.edges))
        object.__setattr__(
            self, "symmetric_pairs",
            tuple(tuple(int(i) for i in p) for p in self.symmetric_pairs),
        )


def validate_spec(spec: SkeletonSpec) -> list:
    """Return one violation message per breach; empty means well-formed."""
    violations = []
    j = spec.joint_count
    if j <= 0:
        violations.append(f"joint_count must be positive, got {j}")
    if len(spec.names) != j:
        violations.append(f"expected {j} names, got {len(spec.names)}")
    seen_edges = set()
    for pair_kind, pairs in (("edge", spec.edges), ("symmetric pair", spec.symmetric_pairs)):
        for a, b in pairs:
            if not (0 <= a < j and 0 <= b < j):
                violations.append(f"{pair_kind} ({a},{b}) references a joint >= {j}")
            elif a == b:
                violations.append(f"self-{pair_kind.replace(' ', '-')} at joint {a}")
    for a, b in spec.edges:
        key = (min(a, b), max(a, b))
        if key in seen_edges:
            violations.append(f"duplicate edge ({key[0]},{key[1]})")
        seen_edges.add(key)
    seen_pairs = set()
    partnered = {}
    for a, b in spec.symmetric_pairs:
        key = (min(a, b), max(a, b))
        if key in seen_pairs:
            violations.append(f"duplicate symmetric pair ({key[0]},{key[1]})")
        seen_pairs.add(key)
        for joint in (a, b):
            if joint in partnered and partnered[joint] != key:
                violations.append(f"joint {joint} appears in more than one symmetric pair")
            partnered[joint] = key
    return violations


class JointMask:
    """Constant J x J 0/1 matrix: diagonal + adjacency + symmetry."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        self.bits = np.ascontiguousarray(bits, dtype=np.uint8)

    @property
    def joint_count(self) -> int:
        return self.bits.shape[0]

    def as_attention_mask(self) -> AttentionMask:
        return AttentionMask(self.bits)

    def __repr__(self):
        return f"JointMask(J={self.joint_count}, kept={int(self.bits.sum())})"


def compile_joint_mask(spec: SkeletonSpec) -> JointMask:
    violations = validate_spec(spec)
    if violations:
        raise SkeletonError(violations)
    j = spec.joint_count
    bits = np.eye(j, dtype=np.uint8)
    for a, b in spec.edges + spec.symmetric_pairs:
        bits[a, b] = 1
        bits[b, a] = 1
    return JointMask(bits)


# 16-joint MPII-convention default: community-standard kinematic chain and
# the six left/right pairs.  Index order matches the common annotation order.
MPII_JOINT_NAMES = (
    "r-ankle", "r-knee", "r-hip", "l-hip", "l-knee", "l-ankle",
    "pelvis", "thorax", "upper-neck", "head-top",
    "r-wrist", "r-elbow", "r-shoulder", "l-shoulder", "l-elbow", "l-wrist",
)

_MPII_EDGES = (
    (0, 1), (1, 2), (2, 6),          # right leg to pelvis
    (5, 4), (4, 3), (3, 6),          # left leg to pelvis
    (6, 7), (7, 8), (8, 9),          # spine to head
    (10, 11), (11, 12), (12, 7),     # right arm to thorax
    (15, 14), (14, 13), (13, 7),     # left arm to thorax
)

_MPII_SYMMETRIC_PAIRS = ((0, 5), (1, 4), (2, 3), (10, 15), (11, 14), (12, 13))


def default_skeleton() -> SkeletonSpec:
    return SkeletonSpec(
        joint_count=16,
        names=MPII_JOINT_NAMES,
        edges=_MPII_EDGES,
        symmetric_pairs=_MPII_SYMMETRIC_PAIRS,
    )


def save_skeleton(spec: SkeletonSpec, path) -> None:
    doc = {
        "joint_count": spec.joint_count,
        "names": list(spec.names),
        "edges": [list(e) for e in spec.edges],
        "symmetric_pairs": [list(p) for p in spec.symmetric_pairs],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_skeleton(path) -> SkeletonSpec:
    doc = json.loads(Path(path).read_text())
    try:
        spec = SkeletonSpec(
            joint_count=int(doc["joint_count"]),
            names=tuple(doc["names"]),
            edges=tuple(tuple(e) for e in doc["edges"]),
            symmetric_pairs=tuple(tuple(p) for p in doc["symmetric_pairs"]),
        )
    except (KeyError, TypeError) as exc:
        raise SkeletonError([f"malformed skeleton file {path}: {exc!r}"]) from exc
    violations = validate_spec(spec)
    if violations:
        raise SkeletonError(violations)
    return spec
