"""Deduplication of overlapping scored cubes into non-overlapping instances.

Overlapping proposals would flood the output with duplicate predictions.
Per activity class and seed track, the three-step procedure:

1. split the overlapping duration-D cubes into duration-S segments, each
   scoring the mean of its covering cubes and boxed by their intersection;
2. merge the segments back into D/S candidate groups of duration-D cubes
   (one group per grid phase), each merged cube averaging its segments and
   taking the union of their boxes;
3. select the group holding the globally maximal score.

Every group blends information from all overlapping classifications, so the
winner keeps the evidence of the whole run. Adjacent high-confidence
instances are merged afterwards for the strict setting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from .config import PipelineConfig
from .geometry import BBox, bbox_intersection, bbox_iou, bbox_union
from .records import ActivityInstance, ScoredCube

__all__ = [
    "SegmentCube",
    "split_segments",
    "merge_groups",
    "select_group",
    "deduplicate",
    "merge_adjacent",
]

CHAIN_IOU = 0.5


@dataclass(frozen=True)
class SegmentCube:
    """A single-class scored cube used inside the dedup pipeline."""

    t0: int
    t1: int
    score: float
    bbox: BBox

    def __post_init__(self):
        if self.t0 >= self.t1:
            raise ValueError(f"bad segment window [{self.t0}, {self.t1})")


def _covered_segments(cube: SegmentCube, s_prop: int,
                      snap_offgrid: bool) -> range:
    if cube.t0 % s_prop == 0 and cube.t1 % s_prop == 0:
        return range(cube.t0 // s_prop, cube.t1 // s_prop)
    if not snap_offgrid:
        raise ValueError(
            f"cube [{cube.t0}, {cube.t1}) is off the stride-{s_prop} grid"
        )
    # fold onto the grid: only segments fully inside the cube count
    return range(math.ceil(cube.t0 / s_prop), math.floor(cube.t1 / s_prop))


def split_segments(cubes: Sequence[SegmentCube], d_prop: int, s_prop: int,
                   snap_offgrid: bool = False) -> List[SegmentCube]:
    """Split overlapping cubes into duration-``s_prop`` segment cubes.

    Each covered grid segment scores the arithmetic mean of its covering
    cubes and takes the intersection of their boxes; an empty intersection
    falls back to the temporally nearest cube's box. Cubes off the grid are
    errors unless ``snap_offgrid`` folds them onto their fully contained
    segments (end-anchored trailing windows need this).
    """
    if d_prop % s_prop != 0:
        raise ValueError(f"d_prop={d_prop} not divisible by s_prop={s_prop}")
    covering: Dict[int, List[SegmentCube]] = {}
    for cube in cubes:
        for seg in _covered_segments(cube, s_prop, snap_offgrid):
            covering.setdefault(seg, []).append(cube)

    out = []
    for seg in sorted(covering):
        group = covering[seg]
        score = sum(c.score for c in group) / len(group)
        bbox = group[0].bbox
        for cube in group[1:]:
            if bbox is None:
                break
            bbox = bbox_intersection(bbox, cube.bbox)
        if bbox is None:
            center = (seg + 0.5) * s_prop
            nearest = min(group,
                          key=lambda c: (abs((c.t0 + c.t1) / 2 - center), c.t0))
            bbox = nearest.bbox
        out.append(SegmentCube(seg * s_prop, (seg + 1) * s_prop, score, bbox))
    return out


def merge_groups(segments: Sequence[SegmentCube], d_prop: int,
                 s_prop: int) -> List[List[SegmentCube]]:
    """Re-merge segment cubes into D/S groups of non-overlapping cubes.

    Group g tiles runs of D/S consecutive segments starting at segment
    index g. Partial runs merge the segments they have; runs broken by
    uncovered segments emit one cube per contiguous piece. Merged cubes
    average their segments' scores and union their boxes.
    """
    if d_prop % s_prop != 0:
        raise ValueError(f"d_prop={d_prop} not divisible by s_prop={s_prop}")
    r = d_prop // s_prop
    by_index: Dict[int, SegmentCube] = {}
    for seg in segments:
        if seg.t1 - seg.t0 != s_prop or seg.t0 % s_prop != 0:
            raise ValueError(
                f"segment [{seg.t0}, {seg.t1}) is not a stride-{s_prop} cell"
            )
        index = seg.t0 // s_prop
        if index in by_index:
            raise ValueError(f"duplicate segment at index {index}")
        by_index[index] = seg

    indices = sorted(by_index)
    groups: List[List[SegmentCube]] = []
    for g in range(r):
        merged: List[SegmentCube] = []
        run: List[SegmentCube] = []

        def flush():
            if run:
                score = sum(s.score for s in run) / len(run)
                bbox = run[0].bbox
                for seg in run[1:]:
                    bbox = bbox_union(bbox, seg.bbox)
                merged.append(SegmentCube(run[0].t0, run[-1].t1, score, bbox))
                run.clear()

        run_id = None
        prev_index = None
        for index in indices:
            if index < g:
                continue
            rid = (index - g) // r
            if rid != run_id or (prev_index is not None and index != prev_index + 1):
                flush()
                run_id = rid
            run.append(by_index[index])
            prev_index = index
        flush()
        groups.append(merged)
    return groups


def select_group(groups: Sequence[Sequence[SegmentCube]]) -> List[SegmentCube]:
    """The group containing the globally maximal score; ties pick the
    lowest group offset."""
    if not groups:
        raise ValueError("no groups to select from")
    best = None
    for group in groups:
        for cube in group:
            if best is None or cube.score > best:
                best = cube.score
    if best is None:
        return []
    for group in groups:
        if any(cube.score == best for cube in group):
            return list(group)
    raise AssertionError("unreachable")


def _chain_partitions(cubes: List[Tuple[int, ScoredCube]]) -> Dict[int, List[int]]:
    """Partition ids for cubes lacking a track: spatial IoU chains.

    Chains use negative ids so they never collide with tracker output.
    """
    chains: List[Tuple[BBox, int]] = []
    partitions: Dict[int, List[int]] = {}
    ordered = sorted(cubes, key=lambda ic: (ic[1].cube.t0, ic[1].cube.bbox.x0,
                                            ic[1].cube.bbox.y0, ic[0]))
    for i, sc in ordered:
        bbox = sc.cube.bbox
        chosen = None
        for c, (last_box, chain_id) in enumerate(chains):
            if bbox_iou(bbox, last_box) >= CHAIN_IOU:
                chosen = c
                break
        if chosen is None:
            chain_id = -(len(chains) + 1)
            chains.append((bbox, chain_id))
            chosen = len(chains) - 1
        else:
            chain_id = chains[chosen][1]
            chains[chosen] = (bbox, chain_id)
        partitions.setdefault(chain_id, []).append(i)
    return partitions


def deduplicate(scored_cubes: Sequence[ScoredCube],
                config: PipelineConfig) -> List[ActivityInstance]:
    """Run split/merge/select per (activity class, seed track) partition.

    Cubes without a track id are chained by spatial IoU instead and get
    negative partition ids. Partitions whose cubes are already pairwise
    non-overlapping have no duplicates to resolve and pass through
    unchanged, which makes deduplication idempotent. Only instances with a
    strictly positive score are emitted; an all-zero confidence carries no
    detection evidence.
    """
    classes = config.activity_classes
    if not classes:
        raise ValueError("activity_classes must be configured for dedup")
    for sc in scored_cubes:
        if len(sc.scores) != len(classes):
            raise ValueError(
                f"score vector of length {len(sc.scores)} for {sc.key}, "
                f"expected {len(classes)}"
            )

    by_video: Dict[str, List[Tuple[int, ScoredCube]]] = {}
    for i, sc in enumerate(scored_cubes):
        by_video.setdefault(sc.cube.video_id, []).append((i, sc))

    instances: List[ActivityInstance] = []
    for video_id in sorted(by_video):
        entries = by_video[video_id]
        partitions: Dict[int, List[int]] = {}
        unkeyed = []
        for i, sc in entries:
            if sc.cube.seed_track is None:
                unkeyed.append((i, sc))
            else:
                partitions.setdefault(sc.cube.seed_track, []).append(i)
        partitions.update(_chain_partitions(unkeyed))

        for track_id in sorted(partitions):
            members = sorted((scored_cubes[i] for i in partitions[track_id]),
                             key=lambda sc: (sc.cube.t0, sc.cube.t1))
            overlapping = any(
                a.cube.t1 > b.cube.t0
                for a, b in zip(members, members[1:])
            )
            for class_idx, activity_class in enumerate(classes):
                run = [
                    SegmentCube(sc.cube.t0, sc.cube.t1,
                                sc.scores[class_idx], sc.cube.bbox)
                    for sc in members
                ]
                if overlapping:
                    segments = split_segments(run, config.d_prop,
                                              config.s_prop, snap_offgrid=True)
                    groups = merge_groups(segments, config.d_prop,
                                          config.s_prop)
                    selected = select_group(groups)
                else:
                    selected = run
                for cube in selected:
                    if cube.score > 0.0:
                        instances.append(
                            ActivityInstance(video_id, activity_class,
                                             cube.t0, cube.t1, cube.bbox,
                                             cube.score, seed_track=track_id)
                        )
    instances.sort(key=lambda a: (a.video_id, a.activity_class, a.t0, a.t1,
                                  a.seed_track or 0))
    return instances


def merge_adjacent(instances: Sequence[ActivityInstance], s_merg: float,
                   l_merg: int) -> List[ActivityInstance]:
    """Merge abutting high-confidence instances for the strict setting.

    Within each (video, class, track) partition, maximal runs of temporally
    abutting instances all scoring strictly above ``s_merg`` merge into one
    instance (window hull, box union, duration-weighted mean score, tube
    concatenated from the members). Merged instances no longer than
    ``l_merg`` are dropped, as is everything at or below the score bar.
    Overlapping input is an error.
    """
    partitions: Dict[tuple, List[ActivityInstance]] = {}
    for inst in instances:
        key = (inst.video_id, inst.activity_class, inst.seed_track)
        partitions.setdefault(key, []).append(inst)

    out: List[ActivityInstance] = []
    for key in sorted(partitions, key=lambda k: (k[0], k[1], k[2] or 0)):
        members = sorted(partitions[key], key=lambda a: a.t0)
        for prev, cur in zip(members, members[1:]):
            if cur.t0 < prev.t1:
                raise ValueError(
                    f"overlapping instances [{prev.t0}, {prev.t1}) and "
                    f"[{cur.t0}, {cur.t1}) in partition {key}"
                )
        run: List[ActivityInstance] = []

        def flush():
            if not run:
                return
            t0, t1 = run[0].t0, run[-1].t1
            if t1 - t0 <= l_merg:
                run.clear()
                return
            weight = sum(m.t1 - m.t0 for m in run)
            score = sum(m.score * (m.t1 - m.t0) for m in run) / weight
            bbox = run[0].bbox
            tube: List[Tuple[int, BBox]] = []
            for m in run:
                bbox = bbox_union(bbox, m.bbox)
                tube.extend(sorted(m.tube_dict().items()))
            out.append(
                ActivityInstance(run[0].video_id, run[0].activity_class,
                                 t0, t1, bbox, score,
                                 seed_track=run[0].seed_track,
                                 tube=tuple(tube))
            )
            run.clear()

        for inst in members:
            if inst.score <= s_merg:
                flush()
                continue
            if run and inst.t0 != run[-1].t1:
                flush()
            run.append(inst)
        flush()
    out.sort(key=lambda a: (a.video_id, a.activity_class, a.t0, a.t1,
                            a.seed_track or 0))
    return out
