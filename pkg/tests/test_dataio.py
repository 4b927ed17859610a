import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pixseq.dataio import (
    PALETTE,
    SHAPES,
    SyntheticConfig,
    generate_synthetic,
    load_coco,
    load_dataset,
    load_run,
    persist_run,
    save_dataset,
)
from pixseq.geometry import BBox, Polygon, rasterize
from pixseq.model.network import ModelConfig, init_params


def write(tmp_path, doc):
    path = tmp_path / "ann.json"
    path.write_text(json.dumps(doc))
    return path


def coco_doc(**ann):
    base = {"id": 5, "image_id": 1, "category_id": 7, "bbox": [10, 20, 30, 40]}
    base.update(ann)
    return {"images": [{"id": 1, "height": 100, "width": 200}], "annotations": [base], "categories": [{"id": 7}]}


def test_load_coco_bbox(tmp_path):
    (scene,) = load_coco(write(tmp_path, coco_doc()))
    (inst,) = scene.instances
    assert inst.bbox.as_tuple() == pytest.approx((0.2, 0.05, 0.6, 0.2), abs=1e-12)
    assert inst.class_id == 0


def test_load_coco_keypoints_and_subset(tmp_path):
    doc = coco_doc(keypoints=[10, 20, 2, 30, 40, 1, 50, 60, 0])
    (scene,) = load_coco(write(tmp_path, doc))
    assert scene.instances[0].keypoints == ((0.2, 0.05), None, None)
    (scene,) = load_coco(write(tmp_path, doc), keypoint_subset=[2, 0])
    assert scene.instances[0].keypoints == (None, (0.2, 0.05))


def test_load_coco_rle_and_polygons(tmp_path):
    tally = Counter()
    (scene,) = load_coco(write(tmp_path, coco_doc(segmentation={"counts": "x", "size": [1, 1]})), tally=tally)
    assert tally["rle_skipped"] == 1 and scene.instances[0].polygons == ()
    (scene,) = load_coco(write(tmp_path, coco_doc(segmentation=[[0, 0, 200, 0, 200, 100]])))
    assert scene.instances[0].polygons[0].vertices == ((0, 0), (0, 1), (1, 1))


def test_load_coco_empty_and_errors(tmp_path):
    assert load_coco(write(tmp_path, {"images": [], "annotations": []})) == []
    with pytest.raises(ValueError, match="annotation 5"):
        load_coco(write(tmp_path, coco_doc(bbox=[1, 2, 3])))
    with pytest.raises(ValueError, match="annotation 5"):
        load_coco(write(tmp_path, coco_doc(category_id=99)))
    with pytest.raises(ValueError, match="annotations"):
        load_coco(write(tmp_path, {"images": []}))


@given(st.integers(1, 500), st.integers(1, 500), st.data())
def test_load_coco_box_denormalizes(h, w, data):
    x = data.draw(st.floats(0, w))
    y = data.draw(st.floats(0, h))
    bw = data.draw(st.floats(0, w - x))
    bh = data.draw(st.floats(0, h - y))
    doc = {"images": [{"id": 1, "height": h, "width": w}], "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [x, y, bw, bh]}], "categories": [{"id": 1}]}
    import tempfile, pathlib
    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "a.json"
        path.write_text(json.dumps(doc))
        b = load_coco(path)[0].instances[0].bbox
    assert b.xmin * w == pytest.approx(x, abs=1e-9)
    assert b.ymin * h == pytest.approx(y, abs=1e-9)
    assert (b.xmax - b.xmin) * w == pytest.approx(bw, abs=1e-9)
    assert (b.ymax - b.ymin) * h == pytest.approx(bh, abs=1e-9)


def test_synthetic_deterministic():
    a = generate_synthetic(SyntheticConfig(seed=3, image_size=16), 5)
    b = generate_synthetic(SyntheticConfig(seed=3, image_size=16), 5)
    for x, y in zip(a, b):
        assert x.instances == y.instances and x.captions == y.captions
        assert np.array_equal(x.image, y.image)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_synthetic_annotations_consistent(seed):
    terminals = set(PALETTE) | set(SHAPES) | {"a", "left", "of"}
    for s in generate_synthetic(SyntheticConfig(seed=seed, image_size=32), 4):
        assert 1 <= len(s.instances) <= 3
        for inst in s.instances:
            (poly,) = inst.polygons
            assert inst.bbox == poly.bounds()
            m = rasterize([poly], 32, 32)
            box = rasterize([inst.bbox.as_polygon()], 32, 32)
            assert not (m.bits & ~box.bits).any()
            assert m.count > 0
            if SHAPES[inst.class_id] == "triangle":
                assert len(inst.keypoints) == 3
                for kp, vert in zip(inst.keypoints, poly.vertices):
                    assert kp is None or kp == vert
            else:
                assert inst.keypoints is None
        for c in s.captions:
            assert set(c.split()) <= terminals


def test_synthetic_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(min_shapes=0)
    with pytest.raises(ValueError):
        SyntheticConfig(shape_types=("hexagon",))
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticConfig(), 0)


def test_dataset_roundtrip(tmp_path):
    scenes = generate_synthetic(SyntheticConfig(seed=1, image_size=16), 6)
    save_dataset(scenes, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert len(back) == 6
    for a, b in zip(scenes, back):
        assert a.captions == b.captions
        assert np.allclose(a.image, b.image)
        for ia, ib in zip(a.instances, b.instances):
            assert ia.class_id == ib.class_id
            assert np.allclose(ia.bbox.as_tuple(), ib.bbox.as_tuple(), atol=1e-12)
            assert (ia.keypoints is None) == (ib.keypoints is None)


def _params():
    return init_params(ModelConfig(vocab_size=20, image_size=8, patch_size=4, d_model=8, num_heads=2, enc_layers=1, dec_layers=1, mlp_hidden=8, max_len=8), seed=0)


def test_run_roundtrip_and_tamper(tmp_path):
    p = _params()
    cfg = {"train.lr": "0.001", "train.steps": "3"}
    metrics = [{"step": 0, "task": "detect", "loss": 3.5}, {"step": 1, "task": "caption", "loss": 2.0}]
    manifest = persist_run(tmp_path, cfg, p, metrics)
    assert set(manifest) == {"config.cfg", "params.ckpt", "metrics.jsonl"}
    assert not (tmp_path / ".incomplete").exists()
    c, q, m = load_run(tmp_path)
    assert c == cfg and np.array_equal(q.flat(), p.flat()) and m == metrics
    for line in (tmp_path / "metrics.jsonl").read_text().splitlines():
        assert set(json.loads(line)) == {"step", "task", "loss"}
    (tmp_path / "config.cfg").write_text("train.lr = 9\n")
    with pytest.raises(ValueError, match="digest"):
        load_run(tmp_path)


def test_incomplete_run_refused(tmp_path):
    persist_run(tmp_path, {}, _params())
    (tmp_path / ".incomplete").write_text("")
    with pytest.raises(ValueError, match="incomplete"):
        load_run(tmp_path)
