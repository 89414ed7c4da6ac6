"""Dense overlapping cube-proposal generation with track-seeded refinement.

Temporal windows of duration ``d_prop`` are sampled every ``s_prop`` frames
so that consecutive proposals overlap; the degenerate ``s_prop == d_prop``
case yields the non-overlapping format. Each window is seeded from the
tracks visible at its central frame and grows its box as the union of the
seed track's boxes across the window, then enlarges it by a fixed rate to
keep spatial context.
"""

from __future__ import annotations

from typing import List, Mapping, Sequence, Tuple

from .config import PipelineConfig
from .geometry import BBox, Cube, bbox_enlarge, bbox_union
from .tracking import Track

__all__ = [
    "sample_windows",
    "central_seeds",
    "refine_union",
    "generate_video_proposals",
    "generate_proposals",
]

Window = Tuple[int, int]


def sample_windows(video_len: int, d_prop: int, s_prop: int) -> List[Window]:
    """Temporal windows [k*s_prop, k*s_prop + d_prop) covering the video.

    Videos shorter than ``d_prop`` get a single truncated window. When the
    regular stride does not reach the video end, one extra window anchored
    at the end keeps the tail covered.
    """
    if video_len <= 0:
        raise ValueError(f"video_len {video_len} must be positive")
    if video_len < d_prop:
        return [(0, video_len)]
    windows = []
    t0 = 0
    while t0 + d_prop <= video_len:
        windows.append((t0, t0 + d_prop))
        t0 += s_prop
    if windows[-1][1] < video_len:
        windows.append((video_len - d_prop, video_len))
    return windows


def central_seeds(window: Window, tracks: Sequence[Track],
                  s_det: int) -> List[Track]:
    """Tracks seeding a window: those with a box near its central frame.

    A track qualifies when its nearest in-window box is within s_det/2
    frames of the central frame (detections only exist every s_det frames).
    """
    t0, t1 = window
    t_c = (t0 + t1) // 2
    tolerance = s_det / 2.0
    seeds = []
    for track in tracks:
        near = min(
            (abs(f - t_c) for f in track.boxes if t0 <= f < t1),
            default=None,
        )
        if near is not None and near <= tolerance:
            seeds.append(track)
    return seeds


def refine_union(seed: Track, window: Window) -> BBox:
    """Union of all of the seed track's boxes with frames in the window."""
    t0, t1 = window
    boxes = [b for f, b in seed.boxes.items() if t0 <= f < t1]
    if not boxes:
        raise ValueError(f"track {seed.track_id} has no boxes in [{t0}, {t1})")
    out = boxes[0]
    for box in boxes[1:]:
        out = bbox_union(out, box)
    return out


def generate_video_proposals(video_id: str, tracks: Sequence[Track],
                             video_len: int, frame_size: Tuple[float, float],
                             config: PipelineConfig) -> List[Cube]:
    """All cube proposals for one video, ordered by (t0, seed_track).

    Boxes are stored already enlarged by ``r_enl`` so downstream stages see
    one canonical geometry. Tracks of classes outside ``object_classes`` are
    skipped when that list is non-empty.
    """
    allowed = set(config.object_classes)
    usable = [t for t in tracks if not allowed or t.object_class in allowed]
    cubes: List[Cube] = []
    for t0, t1 in sample_windows(video_len, config.d_prop, config.s_prop):
        seeds = central_seeds((t0, t1), usable, config.s_det)
        for seed in sorted(seeds, key=lambda t: t.track_id):
            bbox = bbox_enlarge(refine_union(seed, (t0, t1)), config.r_enl,
                                frame_size)
            cubes.append(
                Cube(video_id=video_id, bbox=bbox, t0=t0, t1=t1,
                     seed_track=seed.track_id, object_class=seed.object_class)
            )
    cubes.sort(key=lambda c: (c.t0, c.seed_track))
    return cubes


def generate_proposals(tracks_by_video: Mapping[str, Sequence[Track]],
                       video_lengths: Mapping[str, int],
                       frame_sizes: Mapping[str, Tuple[float, float]],
                       config: PipelineConfig) -> List[Cube]:
    """Corpus-level proposal generation, videos in sorted id order."""
    cubes: List[Cube] = []
    for video_id in sorted(tracks_by_video):
        if video_id not in video_lengths:
            raise ValueError(f"no video length for {video_id!r}")
        cubes.extend(
            generate_video_proposals(
                video_id, tracks_by_video[video_id], video_lengths[video_id],
                frame_sizes[video_id], config,
            )
        )
    return cubes
