"""Scene builders shared by the pipeline and acceptance tests."""

import random

from actpipe.geometry import BBox
from actpipe.synth import ActivitySpec, ObjectSpec, SceneSpec


def drifting_object(x, y, size, dx, dy, video_len, cls="person",
                    foreground=True, width=640, height=480):
    x1 = min(max(x + dx, 0.0), width - size - 1)
    y1 = min(max(y + dy, 0.0), height - size - 1)
    return ObjectSpec(
        cls,
        ((0, BBox(x, x + size, y, y + size)),
         (video_len - 1, BBox(x1, x1 + size, y1, y1 + size))),
        foreground=foreground,
    )


def closure_scenes(video_len=192):
    """Noiseless closure corpus: one full-video activity plus one
    activity-free video supplying negative time."""
    active = SceneSpec(
        video_id="act00", video_len=video_len, width=640, height=480,
        objects=(drifting_object(100, 100, 48, 16, 8, video_len),),
        activities=(ActivitySpec(0, "walk", 0, video_len),),
    )
    background = SceneSpec(
        video_id="bg00", video_len=video_len, width=640, height=480,
        objects=(drifting_object(300, 200, 40, 60, 30, video_len),),
        activities=(),
    )
    return [active, background]


def misaligned_scenes(n_scenes=20, video_len=448, base_seed=100):
    """Seeded scenes whose activity windows avoid the coarse sampling grid.

    Instance starts are never multiples of 64 and durations never multiples
    of 64 (both at least 96 frames), so coarse non-overlapping cube formats
    cannot represent them.
    """
    classes = ("walking", "carrying", "riding")
    specs = []
    for s in range(n_scenes):
        rng = random.Random(base_seed + s)
        objects = []
        activities = []
        for j in range(rng.randint(1, 3)):
            t0 = rng.randint(1, 160)
            if t0 % 64 == 0:
                t0 += 1
            duration = rng.randint(96, 200)
            if duration % 64 == 0:
                duration += 1
            x = rng.uniform(20, 500)
            y = rng.uniform(20, 350)
            objects.append(
                drifting_object(x, y, rng.uniform(30, 60),
                                rng.uniform(-25, 25), rng.uniform(-15, 15),
                                video_len)
            )
            activities.append(
                ActivitySpec(j, classes[(s + j) % len(classes)],
                             t0, t0 + duration)
            )
        specs.append(
            SceneSpec(video_id=f"mis{s:02d}", video_len=video_len,
                      width=640, height=480, objects=tuple(objects),
                      activities=tuple(activities), seed=base_seed + s)
        )
    return specs


def sparse_foreground_scenes(n_scenes=4, video_len=384, base_seed=500):
    """Scenes dominated by motionless clutter the segmenter never marks.

    Two moving objects carry full-video activities; six static objects
    (parked) produce detections and proposals but zero foreground, so the
    filter can drop a large share of proposals without touching recall.
    """
    specs = []
    for s in range(n_scenes):
        rng = random.Random(base_seed + s)
        objects = []
        activities = []
        for j in range(2):
            x = rng.uniform(40, 400)
            y = rng.uniform(40, 300)
            objects.append(
                drifting_object(x, y, 48, rng.uniform(-20, 20),
                                rng.uniform(-10, 10), video_len)
            )
            activities.append(
                ActivitySpec(j, "walking" if j == 0 else "carrying",
                             0, video_len)
            )
        for j in range(6):
            x = rng.uniform(20, 560)
            y = rng.uniform(20, 410)
            objects.append(
                drifting_object(x, y, rng.uniform(30, 50), 0, 0, video_len,
                                foreground=False)
            )
        specs.append(
            SceneSpec(video_id=f"sparse{s:02d}", video_len=video_len,
                      width=640, height=480, objects=tuple(objects),
                      activities=tuple(activities), jitter_sigma=0.8,
                      seed=base_seed + s)
        )
    return specs
