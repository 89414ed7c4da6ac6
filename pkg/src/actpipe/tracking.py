"""Baseline greedy IoU tracker for detections without track ids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

from .geometry import BBox, bbox_iou
from .records import DetectionRecord

__all__ = ["Track", "greedy_iou_track", "tracks_from_records"]

DEFAULT_IOU_GATE = 0.3


@dataclass
class Track:
    """Per-frame boxes of one tracked object; all boxes share one class."""

    track_id: int
    object_class: str
    boxes: Dict[int, BBox]

    @property
    def frames(self) -> List[int]:
        return sorted(self.boxes)

    def boxes_in(self, t0: int, t1: int) -> Dict[int, BBox]:
        return {f: b for f, b in self.boxes.items() if t0 <= f < t1}


class _LiveTrack:
    __slots__ = ("track_id", "object_class", "last_frame", "last_box")

    def __init__(self, track_id: int, det: DetectionRecord):
        self.track_id = track_id
        self.object_class = det.object_class
        self.last_frame = det.frame
        self.last_box = det.bbox

    def advance(self, det: DetectionRecord) -> None:
        self.last_frame = det.frame
        self.last_box = det.bbox


def _track_one_video(detections: List[DetectionRecord], iou_gate: float,
                     max_gap: int) -> List[DetectionRecord]:
    frames: Dict[int, List[DetectionRecord]] = {}
    for det in detections:
        frames.setdefault(det.frame, []).append(det)

    live: List[_LiveTrack] = []
    next_id = 1
    out: List[DetectionRecord] = []
    for frame in sorted(frames):
        dets = frames[frame]
        live = [t for t in live if frame - t.last_frame <= max_gap]

        # confidence rank within the frame breaks IoU ties deterministically
        ranked = sorted(
            range(len(dets)),
            key=lambda i: (-dets[i].confidence, dets[i].bbox.x0, dets[i].bbox.y0, i),
        )
        rank_of = {det_i: r for r, det_i in enumerate(ranked)}

        candidates = []
        for det_i, det in enumerate(dets):
            for track in live:
                if track.object_class != det.object_class:
                    continue
                iou = bbox_iou(track.last_box, det.bbox)
                if iou >= iou_gate:
                    candidates.append((-iou, rank_of[det_i], det.bbox.x0,
                                       track.track_id, det_i, track))
        candidates.sort(key=lambda c: c[:4])

        assigned: Dict[int, int] = {}
        used_tracks = set()
        for _, _, _, _, det_i, track in candidates:
            if det_i in assigned or track.track_id in used_tracks:
                continue
            assigned[det_i] = track.track_id
            used_tracks.add(track.track_id)
            track.advance(dets[det_i])

        for det_i, det in enumerate(dets):
            if det_i not in assigned:
                track = _LiveTrack(next_id, det)
                next_id += 1
                live.append(track)
                assigned[det_i] = track.track_id
            out.append(
                DetectionRecord(det.video_id, det.frame, det.object_class,
                                det.bbox, det.confidence, assigned[det_i])
            )
    return out


def greedy_iou_track(detections: Iterable[DetectionRecord],
                     iou_gate: float = DEFAULT_IOU_GATE,
                     max_gap: int = 8) -> List[DetectionRecord]:
    """Assign track ids per video by greedy same-class IoU matching.

    Per frame, detections match live tracks in descending IoU order; pairs
    below the gate start new tracks; tracks unseen for more than ``max_gap``
    frames are closed. Ids are dense positive integers per video. Existing
    ids on the input are ignored and reassigned.
    """
    by_video: Dict[str, List[DetectionRecord]] = {}
    order: List[str] = []
    for det in detections:
        if det.video_id not in by_video:
            by_video[det.video_id] = []
            order.append(det.video_id)
        by_video[det.video_id].append(det)
    out: List[DetectionRecord] = []
    for video_id in order:
        out.extend(_track_one_video(by_video[video_id], iou_gate, max_gap))
    return out


def tracks_from_records(detections: Iterable[DetectionRecord],
                        max_gap: Optional[int] = None) -> Dict[str, List[Track]]:
    """Group detections carrying track ids into per-video Track lists.

    A track id spanning two object classes is an error. When ``max_gap`` is
    given, frame gaps beyond it split the track and the later part gets a
    fresh id past the video's maximum.
    """
    per_video: Dict[str, Dict[int, Track]] = {}
    order: List[str] = []
    for det in detections:
        if det.track_id is None:
            raise ValueError(
                f"detection at {det.video_id}:{det.frame} has no track id; "
                "run the tracker first"
            )
        if det.video_id not in per_video:
            per_video[det.video_id] = {}
            order.append(det.video_id)
        tracks = per_video[det.video_id]
        track = tracks.get(det.track_id)
        if track is None:
            tracks[det.track_id] = Track(det.track_id, det.object_class,
                                         {det.frame: det.bbox})
        else:
            if track.object_class != det.object_class:
                raise ValueError(
                    f"track {det.track_id} in video {det.video_id!r} spans classes "
                    f"{track.object_class!r} and {det.object_class!r}"
                )
            if det.frame in track.boxes:
                raise ValueError(
                    f"track {det.track_id} in video {det.video_id!r} has two boxes "
                    f"on frame {det.frame}"
                )
            track.boxes[det.frame] = det.bbox

    out: Dict[str, List[Track]] = {}
    for video_id in order:
        tracks = [per_video[video_id][tid] for tid in sorted(per_video[video_id])]
        if max_gap is not None:
            tracks = _split_gaps(tracks, max_gap)
        out[video_id] = tracks
    return out


def _split_gaps(tracks: List[Track], max_gap: int) -> List[Track]:
    next_id = max((t.track_id for t in tracks), default=0) + 1
    out: List[Track] = []
    for track in tracks:
        frames = track.frames
        pieces: List[List[int]] = [[frames[0]]]
        for prev, cur in zip(frames, frames[1:]):
            if cur - prev > max_gap:
                pieces.append([])
            pieces[-1].append(cur)
        out.append(Track(track.track_id, track.object_class,
                         {f: track.boxes[f] for f in pieces[0]}))
        for piece in pieces[1:]:
            out.append(Track(next_id, track.object_class,
                             {f: track.boxes[f] for f in piece}))
            next_id += 1
    return out
