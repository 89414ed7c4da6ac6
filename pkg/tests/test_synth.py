import numpy as np
import pytest

from actpipe.config import PipelineConfig
from actpipe.geometry import BBox, bbox_iou
from actpipe.synth import ActivitySpec, ObjectSpec, SceneSpec, generate_scene


def simple_spec(**kwargs):
    defaults = dict(
        video_id="v0",
        video_len=128,
        width=640,
        height=480,
        objects=(
            ObjectSpec("person",
                       ((0, BBox(100, 140, 100, 160)),
                        (127, BBox(200, 240, 100, 160)))),
        ),
        activities=(ActivitySpec(0, "walk", 0, 128),),
    )
    defaults.update(kwargs)
    return SceneSpec(**defaults)


class TestGenerateScene:
    config = PipelineConfig()

    def test_noiseless_detections_on_trajectory(self):
        scene = generate_scene(simple_spec(), self.config)
        obj = scene.spec.objects[0]
        assert [d.frame for d in scene.detections] == list(range(0, 128, 8))
        for det in scene.detections:
            assert det.bbox == obj.box_at(det.frame)
            assert det.track_id == 1

    def test_seed_determinism(self):
        spec = simple_spec(jitter_sigma=2.0, dropout=0.5, seed=11)
        a = generate_scene(spec, self.config)
        b = generate_scene(spec, self.config)
        assert a.detections == b.detections
        assert a.annotations == b.annotations
        assert a.masks == b.masks

    def test_annotation_tube_interpolated(self):
        scene = generate_scene(simple_spec(), self.config)
        (ann,) = scene.annotations
        assert (ann.t0, ann.t1) == (0, 128)
        assert len(ann.tube) == 128
        mid = dict(ann.tube)[64]
        expect = scene.spec.objects[0].box_at(64)
        assert mid == expect
        assert 140 < mid.x0 < 160

    def test_masks_mark_foreground_objects(self):
        scene = generate_scene(simple_spec(), self.config)
        mask = scene.masks[0].decode()
        box = scene.spec.objects[0].box_at(0)
        assert mask[130, 120] == 1
        assert mask[int(box.y0) - 5, int(box.x0) - 5] == 0

    def test_background_flag_excluded_from_masks(self):
        spec = simple_spec(
            objects=(
                ObjectSpec("vehicle", ((0, BBox(10, 60, 10, 40)),
                                       (127, BBox(10, 60, 10, 40))),
                           foreground=False),
            ),
            activities=(),
        )
        scene = generate_scene(spec, self.config)
        assert all(mask.decode().sum() == 0 for mask in scene.masks)
        # the detector still sees the object
        assert len(scene.detections) == 128 // 8

    def test_dropout_removes_detections(self):
        spec = simple_spec(dropout=0.5, seed=3)
        scene = generate_scene(spec, self.config)
        assert 0 < len(scene.detections) < 16

    def test_jitter_keeps_boxes_close(self):
        # build-time check of the jitter level: sigma=2 on a 100 px box
        spec = SceneSpec(
            video_id="v", video_len=1000, width=640, height=480,
            objects=(ObjectSpec("person", ((0, BBox(100, 200, 100, 200)),
                                           (999, BBox(100, 200, 100, 200)))),),
            jitter_sigma=2.0, seed=5,
        )
        config = PipelineConfig(s_det=1)
        scene = generate_scene(spec, config)
        clean = BBox(100, 200, 100, 200)
        ious = [bbox_iou(d.bbox, clean) for d in scene.detections]
        assert len(ious) == 1000
        assert float(np.mean(ious)) > 0.85

    def test_activity_outside_lifetime_rejected(self):
        with pytest.raises(ValueError, match="lifetime"):
            simple_spec(activities=(ActivitySpec(0, "walk", 0, 500),),
                        video_len=500)

    def test_waypoints_outside_frame_rejected(self):
        with pytest.raises(ValueError, match="outside the frame"):
            simple_spec(objects=(
                ObjectSpec("person", ((0, BBox(600, 700, 0, 10)),)),
            ))


class TestSpecSerialization:
    def test_round_trip(self, tmp_path):
        spec = simple_spec(jitter_sigma=1.5, dropout=0.1, seed=9)
        path = tmp_path / "spec.json"
        import json
        path.write_text(json.dumps(spec.to_json()))
        (back,) = SceneSpec.load(path)
        assert back == spec

    def test_list_of_specs(self, tmp_path):
        specs = [simple_spec(video_id=f"v{i}") for i in range(3)]
        path = tmp_path / "specs.json"
        import json
        path.write_text(json.dumps([s.to_json() for s in specs]))
        assert SceneSpec.load(path) == specs
