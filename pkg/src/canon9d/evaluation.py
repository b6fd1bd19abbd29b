"""Symmetry-aware 9D pose evaluation: geodesic accuracy at angular
thresholds, symmetry groups compiled from per-category orientation rules,
and exact 3D IoU of oriented boxes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from canon9d.core import Pose9D, geodesic_distance, rotation_about_axis

AXIS_X = np.array([1.0, 0.0, 0.0])
AXIS_Y = np.array([0.0, 1.0, 0.0])
AXIS_Z = np.array([0.0, 0.0, 1.0])


class EvalError(Exception):
    pass


class UnknownRule(EvalError):
    pass


class EmptyInput(EvalError):
    pass


class MissingPrediction(EvalError):
    pass


@dataclass(frozen=True)
class SymmetrySpec:
    """Rotational symmetry of a category about an axis in the canonical frame.

    kind: "none" | "discrete" | "continuous" | "full".  "full" marks fully
    unconstrained categories (e.g. balls) whose rotation error is defined
    as zero.
    """

    category: str
    kind: str
    axis: np.ndarray = field(default_factory=lambda: AXIS_Z.copy())
    order: int = 1

    def __post_init__(self):
        if self.kind not in ("none", "discrete", "continuous", "full"):
            raise ValueError(f"unknown symmetry kind {self.kind!r}")
        a = np.asarray(self.axis, dtype=float).reshape(3)
        if self.kind in ("discrete", "continuous"):
            n = np.linalg.norm(a)
            if abs(n - 1.0) > 1e-9:
                a = a / n
        object.__setattr__(self, "axis", a)
        if self.kind == "discrete" and self.order < 2:
            raise ValueError("discrete symmetry needs order >= 2")


def load_rule_inventory() -> dict:
    with resources.files("canon9d.data").joinpath("orientation_rules.json").open() as fh:
        return json.load(fh)


def rules_table_from_inventory(inventory: dict | None = None) -> dict[str, tuple]:
    """category -> (LEFT, BACK, TOP) orientation-rule triple."""
    inventory = inventory or load_rule_inventory()
    table = {}
    for group in inventory["groups"]:
        for member in group["members"]:
            table[member] = (group["left"], group["back"], group["top"])
    return table


def _slot_kind(slot: str, rules: dict[str, str]) -> str:
    if slot == "-":
        return "unconstrained"
    try:
        return rules[slot]
    except KeyError:
        raise UnknownRule(f"orientation rule {slot!r} not in inventory") from None


def compile_symmetry(rules_table: dict[str, tuple],
                     inventory: dict | None = None) -> dict[str, SymmetrySpec]:
    """Derive per-category symmetry from LEFT/BACK/TOP slot constraints.

    Unconstrained slots induce symmetry: a lone TOP direction leaves the
    rotation about the top axis free (continuous); an axis-type horizontal
    rule (bidirectional, "... and ...") fixes a line but not its sign,
    giving a 2-fold flip about the top axis; fully constrained frames carry
    no symmetry; fully unconstrained categories are spherically symmetric.
    """
    rules = (inventory or load_rule_inventory())["rules"]
    out: dict[str, SymmetrySpec] = {}
    for category, (left, back, top) in rules_table.items():
        kinds = {
            "left": _slot_kind(left, rules),
            "back": _slot_kind(back, rules),
            "top": _slot_kind(top, rules),
        }
        out[category] = _derive_spec(category, kinds)
    return out


def _derive_spec(category: str, kinds: dict[str, str]) -> SymmetrySpec:
    slot_axis = {"left": AXIS_X, "back": AXIS_Y, "top": AXIS_Z}
    constrained = {s: k for s, k in kinds.items() if k != "unconstrained"}
    if not constrained:
        return SymmetrySpec(category, "full")
    if len(constrained) == 1:
        slot = next(iter(constrained))
        # One constrained slot: rotation about that slot's axis stays free.
        # For axis-type rules the additional sign flip is not representable
        # with a single-axis spec and is dropped.
        return SymmetrySpec(category, "continuous", slot_axis[slot])
    # Two or more constrained slots.
    axis_slots = [s for s, k in constrained.items() if k == "axis"]
    if not axis_slots:
        return SymmetrySpec(category, "none")
    # An axis-type slot admits a 180-degree flip about any constrained
    # direction-type slot's axis; prefer top, then back, then left.
    for pivot in ("top", "back", "left"):
        if constrained.get(pivot) == "direction":
            return SymmetrySpec(category, "discrete", slot_axis[pivot], order=2)
    # All constrained slots are axis-type: approximate the dihedral group by
    # the flip about the top axis.
    return SymmetrySpec(category, "discrete", AXIS_Z, order=2)


def symmetry_rotations(spec: SymmetrySpec,
                       continuous_samples: int = 720) -> list[np.ndarray]:
    if spec.kind in ("none", "full"):
        return [np.eye(3)]
    if spec.kind == "discrete":
        return [rotation_about_axis(spec.axis, 2.0 * np.pi * k / spec.order)
                for k in range(spec.order)]
    return [rotation_about_axis(spec.axis, 2.0 * np.pi * k / continuous_samples)
            for k in range(continuous_samples)]


def sym_error(pred: np.ndarray, gt: np.ndarray, spec: SymmetrySpec,
              continuous_samples: int = 720) -> float:
    """Minimum geodesic error over the category's symmetry group."""
    if spec.kind == "full":
        return 0.0
    if spec.kind == "none":
        return geodesic_distance(pred, gt)
    return min(geodesic_distance(pred, gt @ g)
               for g in symmetry_rotations(spec, continuous_samples))


def acc_at(errors, threshold: float) -> float:
    """Fraction of errors strictly below the threshold (radians)."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise EmptyInput("no errors to aggregate")
    return float(np.mean(errors < threshold))


# ---------------------------------------------------------------------------
# Oriented-box IoU via exact convex intersection.
# ---------------------------------------------------------------------------

_EDGE_PAIRS = [
    (i, j)
    for i in range(8)
    for j in range(i + 1, 8)
    if bin(i ^ j).count("1") == 1  # corners differing in exactly one axis
]


def _points_inside(points: np.ndarray, box: Pose9D, tol: float = 1e-12) -> np.ndarray:
    local = (points - box.translation) @ box.rotation
    return np.all(np.abs(local) <= box.extents / 2.0 + tol, axis=1)


def _edge_plane_hits(box_a: Pose9D, box_b: Pose9D) -> list[np.ndarray]:
    """Intersection points of box_a's edges with box_b's face planes that lie
    inside box_b."""
    corners = box_a.corners()
    hits = []
    half = box_b.extents / 2.0
    for i, j in _EDGE_PAIRS:
        # edge in box_b local coordinates
        p = (corners[i] - box_b.translation) @ box_b.rotation
        q = (corners[j] - box_b.translation) @ box_b.rotation
        d = q - p
        for axis in range(3):
            for sign in (-1.0, 1.0):
                denom = d[axis]
                if abs(denom) < 1e-15:
                    continue
                t = (sign * half[axis] - p[axis]) / denom
                if not 0.0 <= t <= 1.0:
                    continue
                point = p + t * d
                others = [a for a in range(3) if a != axis]
                if all(abs(point[a]) <= half[a] + 1e-12 for a in others):
                    hits.append(box_b.rotation @ point + box_b.translation)
    return hits


def _intersection_volume(a: Pose9D, b: Pose9D) -> float:
    pts = []
    ca = a.corners()
    cb = b.corners()
    pts.extend(ca[_points_inside(ca, b)])
    pts.extend(cb[_points_inside(cb, a)])
    pts.extend(_edge_plane_hits(a, b))
    pts.extend(_edge_plane_hits(b, a))
    if len(pts) < 4:
        return 0.0
    try:
        return float(ConvexHull(np.asarray(pts)).volume)
    except QhullError:
        return 0.0  # degenerate (flat) intersection


def iou3d(a: Pose9D, b: Pose9D) -> float:
    inter = _intersection_volume(a, b)
    union = a.volume() + b.volume() - inter
    if union <= 0:
        return 0.0
    return float(np.clip(inter / union, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Report aggregation
# ---------------------------------------------------------------------------

@dataclass
class CategoryResult:
    count: int
    acc30_sym: float
    acc30_raw: float
    mean_iou: float


@dataclass
class EvalReport:
    per_category: dict[str, CategoryResult]
    acc30_sym: float
    acc30_raw: float
    mean_iou: float
    total: int

    def to_dict(self) -> dict:
        return {
            "aggregate": {
                "acc_at_30_sym_aware": self.acc30_sym,
                "acc_at_30_sym_unaware": self.acc30_raw,
                "mean_iou3d": self.mean_iou,
                "count": self.total,
            },
            "per_category": {
                c: {
                    "acc_at_30_sym_aware": r.acc30_sym,
                    "acc_at_30_sym_unaware": r.acc30_raw,
                    "mean_iou3d": r.mean_iou,
                    "count": r.count,
                }
                for c, r in sorted(self.per_category.items())
            },
        }


def evaluate(pred_poses: dict[str, Pose9D], gt_poses: dict[str, Pose9D],
             symmetry_map: dict[str, SymmetrySpec],
             category_map: dict[str, str],
             threshold: float = np.deg2rad(30.0),
             continuous_samples: int = 720) -> EvalReport:
    """Per-sample symmetry-aware and unaware errors plus IoU, averaged per
    category, then macro-averaged over categories.  Missing predictions score
    worst case (error pi, IoU 0) so coverage gaming is impossible."""
    if not gt_poses:
        raise EmptyInput("empty ground-truth set")
    by_cat: dict[str, list[tuple[float, float, float]]] = {}
    for sample_id in sorted(gt_poses):
        gt = gt_poses[sample_id]
        category = category_map.get(sample_id, "")
        spec = symmetry_map.get(category, SymmetrySpec(category, "none"))
        pred = pred_poses.get(sample_id)
        if pred is None:
            raw = np.pi
            sym = 0.0 if spec.kind == "full" else np.pi
            iou = 0.0
        else:
            raw = geodesic_distance(pred.rotation, gt.rotation)
            sym = sym_error(pred.rotation, gt.rotation, spec, continuous_samples)
            iou = iou3d(pred, gt)
        by_cat.setdefault(category, []).append((sym, raw, iou))

    per_category = {}
    for category, rows in by_cat.items():
        arr = np.asarray(rows)
        per_category[category] = CategoryResult(
            count=len(rows),
            acc30_sym=float(np.mean(arr[:, 0] < threshold)),
            acc30_raw=float(np.mean(arr[:, 1] < threshold)),
            mean_iou=float(arr[:, 2].mean()),
        )
    cats = sorted(per_category)
    return EvalReport(
        per_category=per_category,
        acc30_sym=float(np.mean([per_category[c].acc30_sym for c in cats])),
        acc30_raw=float(np.mean([per_category[c].acc30_raw for c in cats])),
        mean_iou=float(np.mean([per_category[c].mean_iou for c in cats])),
        total=len(gt_poses),
    )


def format_report(report: EvalReport) -> str:
    """Plain-text table: Acc@30 without / with symmetry awareness, 3D IoU."""
    lines = [
        f"{'category':<28} {'n':>5} {'Acc@30 x':>9} {'Acc@30 v':>9} {'3D IoU':>7}",
    ]
    for c in sorted(report.per_category):
        r = report.per_category[c]
        lines.append(f"{c or '(none)':<28} {r.count:>5} {r.acc30_raw:>9.3f} "
                     f"{r.acc30_sym:>9.3f} {r.mean_iou:>7.3f}")
    lines.append(f"{'macro average':<28} {report.total:>5} "
                 f"{report.acc30_raw:>9.3f} {report.acc30_sym:>9.3f} "
                 f"{report.mean_iou:>7.3f}")
    return "\n".join(lines)
