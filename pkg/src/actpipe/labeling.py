"""Ground-truth cube conversion and proposal label assignment.

Annotations are first resampled into cubes on the same duration/stride as
the proposals. Each proposal is then compared against ground-truth cubes in
the same temporal window by spatial IoU and assigned one or more positive
labels, a negative label, or nothing, following the two-threshold scheme
used for region-proposal training.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

from .geometry import BBox, Cube, bbox_iou, bbox_union
from .proposals import sample_windows
from .records import ActivityAnnotation

__all__ = [
    "GtCube",
    "LabelAssignment",
    "ProposalStats",
    "temporal_iou",
    "gt_to_cubes",
    "assign_labels",
    "apply_assignments",
    "proposal_stats",
]

SAME_WINDOW_TIOU = 0.5


@dataclass(frozen=True)
class GtCube:
    """One ground-truth cube: the annotation resampled onto a window."""

    video_id: str
    activity_class: str
    t0: int
    t1: int
    bbox: BBox


@dataclass(frozen=True)
class LabelAssignment:
    """Outcome for one proposal: positive label set, negative, or unassigned."""

    proposal_index: int
    labels: frozenset
    negative: bool

    def __post_init__(self):
        if self.negative and self.labels:
            raise ValueError("negative assignment cannot carry labels")

    @property
    def outcome(self) -> str:
        if self.labels:
            return "positive"
        return "negative" if self.negative else "unassigned"


def temporal_iou(a: Tuple[int, int], b: Tuple[int, int]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def gt_to_cubes(annotation: ActivityAnnotation, d_prop: int,
                s_prop: int) -> List[GtCube]:
    """Dense duration/stride sampling of one annotation into cubes.

    Windows follow the same rule as proposal sampling, applied within the
    instance; each cube's box is the union of the tube's boxes inside its
    window (nearest tube frame as fallback for sparse tubes).
    """
    tube = annotation.tube
    frames = [f for f, _ in tube]
    cubes = []
    for w0, w1 in sample_windows(annotation.t1 - annotation.t0, d_prop, s_prop):
        t0, t1 = annotation.t0 + w0, annotation.t0 + w1
        lo = bisect.bisect_left(frames, t0)
        hi = bisect.bisect_left(frames, t1)
        boxes = [b for _, b in tube[lo:hi]]
        if not boxes:
            center = (t0 + t1) / 2.0
            _, nearest = min(tube, key=lambda fb: (abs(fb[0] - center), fb[0]))
            boxes = [nearest]
        bbox = boxes[0]
        for box in boxes[1:]:
            bbox = bbox_union(bbox, box)
        cubes.append(GtCube(annotation.video_id, annotation.activity_class,
                            t0, t1, bbox))
    return cubes


def assign_labels(proposals: Sequence[Cube], gt_cubes: Sequence[GtCube],
                  s_high: float, s_low: float) -> List[LabelAssignment]:
    """Two-threshold label assignment between proposals and GT cubes.

    Only pairs in the same video whose windows overlap with temporal IoU of
    at least 0.5 are compared. A proposal collects every GT cube whose
    spatial IoU is strictly above ``s_high``; every GT cube additionally
    labels its best proposal strictly above ``s_low`` (ties to the lower
    proposal index); proposals whose scores all sit at or below ``s_low``
    are negative, the rest stay unassigned.
    """
    labels: List[set] = [set() for _ in proposals]
    best_iou = [0.0] * len(proposals)

    # per video, proposals ordered by t0 so only temporally close pairs are
    # visited; anything further than the longest proposal cannot overlap
    by_video: Dict[str, List[int]] = {}
    for i, prop in enumerate(proposals):
        by_video.setdefault(prop.video_id, []).append(i)
    index: Dict[str, Tuple[List[int], List[int], int]] = {}
    for video_id, ids in by_video.items():
        ids.sort(key=lambda i: (proposals[i].t0, i))
        t0s = [proposals[i].t0 for i in ids]
        max_dur = max(proposals[i].t1 - proposals[i].t0 for i in ids)
        index[video_id] = (ids, t0s, max_dur)

    for gt in gt_cubes:
        if gt.video_id not in index:
            continue
        ids, t0s, max_dur = index[gt.video_id]
        best_index = -1
        best_score = s_low
        lo = bisect.bisect_left(t0s, gt.t0 - max_dur)
        hi = bisect.bisect_left(t0s, gt.t1)
        for i in ids[lo:hi]:
            prop = proposals[i]
            if temporal_iou((prop.t0, prop.t1), (gt.t0, gt.t1)) < SAME_WINDOW_TIOU:
                continue
            iou = bbox_iou(prop.bbox, gt.bbox)
            if iou > best_iou[i]:
                best_iou[i] = iou
            if iou > s_high:
                labels[i].add(gt.activity_class)
            # ties go to the lower proposal index
            if iou > best_score or (iou == best_score and -1 < best_index
                                    and i < best_index and iou > s_low):
                best_score = iou
                best_index = i
        if best_index >= 0:
            labels[best_index].add(gt.activity_class)

    out = []
    for i in range(len(proposals)):
        if labels[i]:
            out.append(LabelAssignment(i, frozenset(labels[i]), False))
        elif best_iou[i] <= s_low:
            out.append(LabelAssignment(i, frozenset(), True))
        else:
            out.append(LabelAssignment(i, frozenset(), False))
    return out


def apply_assignments(proposals: Sequence[Cube],
                      assignments: Sequence[LabelAssignment]) -> List[Cube]:
    """Write assignment outcomes onto cubes (empty set marks negatives)."""
    if len(proposals) != len(assignments):
        raise ValueError("assignment count does not match proposals")
    out = []
    for cube, assignment in zip(proposals, assignments):
        if assignment.outcome == "unassigned":
            labels = None
        else:
            labels = assignment.labels
        out.append(Cube(cube.video_id, cube.bbox, cube.t0, cube.t1,
                        cube.seed_track, cube.object_class, cube.fg_score,
                        labels))
    return out


@dataclass(frozen=True)
class ProposalStats:
    total: int
    positive: int
    negative: int
    unassigned: int
    positive_rate: float
    single_label_rate: float
    two_label_rate: float
    many_label_rate: float

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "positive": self.positive,
            "negative": self.negative,
            "unassigned": self.unassigned,
            "positive_rate": self.positive_rate,
            "single_label_rate": self.single_label_rate,
            "two_label_rate": self.two_label_rate,
            "many_label_rate": self.many_label_rate,
        }


def proposal_stats(assignments: Iterable[LabelAssignment]) -> ProposalStats:
    """Counts and rates mirroring the proposal-statistics report.

    Label-count rates are among positives: share with exactly one, exactly
    two, and three or more labels.
    """
    total = positive = negative = 0
    hist = {1: 0, 2: 0}
    many = 0
    for a in assignments:
        total += 1
        if a.outcome == "positive":
            positive += 1
            n = len(a.labels)
            if n in hist:
                hist[n] += 1
            else:
                many += 1
        elif a.outcome == "negative":
            negative += 1
    unassigned = total - positive - negative
    return ProposalStats(
        total=total,
        positive=positive,
        negative=negative,
        unassigned=unassigned,
        positive_rate=positive / total if total else 0.0,
        single_label_rate=hist[1] / positive if positive else 0.0,
        two_label_rate=hist[2] / positive if positive else 0.0,
        many_label_rate=many / positive if positive else 0.0,
    )
