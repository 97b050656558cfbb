import json
from collections import Counter

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from detbench.data import (
    BANDS,
    DataError,
    DatasetSpec,
    Scene,
    area_scale,
    band_of,
    corners_to_xywh,
    flip_scene,
    generate_dataset,
    generate_scene,
    load_coco_detections,
    load_coco_groundtruth,
    read_ppm,
    resize_scene,
    shape_mask,
    write_coco_detections,
    write_coco_groundtruth,
    write_ppm,
    xywh_to_corners,
)
from detbench.evaluation import evaluate
from detbench.postprocess import Detections


def _background_mask(scene):
    bg = np.ones(scene.image.shape[:2], dtype=bool)
    for y0, x0, y1, x1 in scene.boxes.astype(int):
        bg[y0:y1, x0:x1] = False
    return bg


def test_noise_free_rectangle_is_exact_mask():
    spec = DatasetSpec(classes=("rectangle",), noise=0.0, max_objects=1, seed=2)
    s = generate_scene(spec, 0)
    assert len(s.boxes) == 1 and s.classes.tolist() == [1]
    y0, x0, y1, x1 = s.boxes[0].astype(int)
    inside = s.image[y0:y1, x0:x1].reshape(-1, 3)
    assert (inside == inside[0]).all()
    outside = s.image[_background_mask(s)]
    assert (outside == outside[0]).all()
    assert not np.array_equal(inside[0], outside[0])


def test_shape_masks():
    rect = shape_mask("rectangle", 1, 2, 3, 4, 8)
    assert rect.sum() == 12 and rect[1:4, 2:6].all()
    tri = shape_mask("triangle", 0, 0, 8, 8, 8)
    assert tri[7].sum() > tri[0].sum() and tri[:, 4].all()
    ell = shape_mask("ellipse", 0, 0, 8, 8, 8)
    assert ell[4, 4] and not ell[0, 0]


def test_deterministic_per_seed_and_index():
    spec = DatasetSpec(seed=11)
    a, b = generate_scene(spec, 3), generate_scene(spec, 3)
    assert a.image.tobytes() == b.image.tobytes()
    assert_array_equal(a.boxes, b.boxes)
    assert generate_dataset(spec, start=3)[0].image.tobytes() == a.image.tobytes()
    assert generate_scene(spec, 4).image.tobytes() != a.image.tobytes()


def test_scene_invariants():
    for s in generate_dataset(DatasetSpec(num_images=60, seed=5)):
        assert 1 <= len(s.boxes) <= 6
        assert s.image.min() >= 0 and s.image.max() <= 1
        assert (s.boxes[:, :2] >= 0).all() and (s.boxes[:, 2:] <= 64).all()
        assert set(s.classes.tolist()) <= {1, 2, 3}
        for b, band in zip(s.boxes, s.bands):
            assert band_of((b[2] - b[0]) * (b[3] - b[1]), 64) == band
        for i in range(len(s.boxes)):
            for j in range(i):
                a, b = s.boxes[i], s.boxes[j]
                assert a[0] >= b[2] + 1 or b[0] >= a[2] + 1 or a[1] >= b[3] + 1 or b[1] >= a[3] + 1


def test_band_frequencies_follow_size_mix():
    scenes = generate_dataset(DatasetSpec(num_images=1000, seed=3))
    counts = Counter(b for s in scenes for b in s.bands)
    n = sum(counts.values())
    for band in BANDS:
        assert abs(counts[band] / n - 1 / 3) <= 0.05


@pytest.mark.parametrize("seed", [4, 9])
def test_boxes_are_tight_around_rendered_shapes(seed):
    for s in generate_dataset(DatasetSpec(num_images=80, noise=0.0, seed=seed)):
        bg_color = s.image[_background_mask(s)][0]
        fg = np.any(s.image != bg_color, axis=2)
        for y0, x0, y1, x1 in s.boxes.astype(int):
            ys, xs = np.nonzero(fg[y0:y1, x0:x1])
            tight = np.array([ys.min() + y0, xs.min() + x0, ys.max() + 1 + y0, xs.max() + 1 + x0])
            assert np.abs(tight - [y0, x0, y1, x1]).max() <= 1


def test_spec_validation_and_round_trip():
    spec = DatasetSpec(size_mix=(0.5, 0.5, 0.0), classes=["ellipse"])
    assert DatasetSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        DatasetSpec(size_mix=(0.5, 0.6, 0.0))
    with pytest.raises(ValueError):
        DatasetSpec(classes=("star",))
    with pytest.raises(ValueError):
        DatasetSpec(image_size=8)
    with pytest.raises(ValueError):
        DatasetSpec.from_dict({"colour": 1})


def test_area_scale_maps_bands_to_reference_frame():
    assert area_scale(64) == 16.0
    assert band_of(7 * 7, 64) == "small"
    assert band_of(8 * 8, 64) == "medium"
    assert band_of(24 * 24, 64) == "large"


def test_flip_scene_mirrors_boxes_and_pixels():
    s = generate_scene(DatasetSpec(seed=4), 2)
    f = flip_scene(s)
    m = s.image_size
    assert_array_equal(f.image, s.image[:, ::-1])
    assert_array_equal(f.boxes[:, [0, 2]], s.boxes[:, [0, 2]])
    assert_array_equal(f.boxes[:, [1, 3]], m - s.boxes[:, [3, 1]])
    assert_array_equal(flip_scene(f).boxes, s.boxes)
    for (y0, x0, y1, x1), (fy0, fx0, fy1, fx1) in zip(s.boxes.astype(int), f.boxes.astype(int)):
        assert_array_equal(f.image[fy0:fy1, fx0:fx1], s.image[y0:y1, x0:x1][:, ::-1])
    empty = Scene(np.zeros((8, 8, 3)), np.zeros((0, 4)), np.zeros(0, dtype=np.int64))
    assert flip_scene(empty).boxes.shape == (0, 4)


def test_resize_scene_box_average():
    s = generate_scene(DatasetSpec(image_size=128, seed=1), 0)
    r = resize_scene(s, 64)
    assert r.image.shape == (64, 64, 3)
    assert_allclose(r.image[0, 0], s.image[:2, :2].reshape(-1, 3).mean(axis=0))
    assert_allclose(r.boxes, s.boxes / 2)
    assert r.groundtruth().area_scale == 16.0
    assert resize_scene(s, 128) is s
    with pytest.raises(ValueError):
        resize_scene(s, 48)


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(size=(8, 8, 3))
    write_ppm(img, tmp_path / "a.ppm")
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")
    back = read_ppm(tmp_path / "a.ppm")
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_bbox_conversion_example():
    assert xywh_to_corners([10, 20, 30, 40]) == [20, 10, 60, 40]
    assert corners_to_xywh([20, 10, 60, 40]) == [10, 20, 30, 40]


def test_groundtruth_round_trip(tmp_path):
    scenes = generate_dataset(DatasetSpec(num_images=5, seed=2))
    write_coco_groundtruth(scenes, tmp_path / "gt.json")
    gt = load_coco_groundtruth(tmp_path / "gt.json")
    assert sorted(gt.gts) == [1, 2, 3, 4, 5]
    assert gt.categories == {1: "rectangle", 2: "ellipse", 3: "triangle"}
    for i, s in enumerate(scenes, start=1):
        assert_array_equal(gt.gts[i].boxes, s.boxes)
        assert_array_equal(gt.gts[i].classes, s.classes)
        assert gt.gts[i].area_scale == 16.0
    first = (tmp_path / "gt.json").read_bytes()
    write_coco_groundtruth(scenes, tmp_path / "gt.json")
    assert (tmp_path / "gt.json").read_bytes() == first


def test_detections_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    dets = {
        1: Detections(np.array([[1.5, 2.25, 10.0, 20.5], [0.1, 0.2, 0.3, 0.7]]), [1, 3], rng.uniform(size=2)),
        4: Detections.empty(),
        7: Detections(np.array([[3.0, 4.0, 5.0, 6.0]]), [2], [0.5]),
    }
    write_coco_detections(dets, tmp_path / "d.json")
    back = load_coco_detections(tmp_path / "d.json")
    assert sorted(back) == [1, 7]
    for k in back:
        assert_allclose(back[k].boxes, dets[k].boxes, rtol=0, atol=1e-12)
        assert_array_equal(back[k].classes, dets[k].classes)
        assert_array_equal(back[k].scores, dets[k].scores)


def _gt_doc(**over):
    doc = {
        "images": [{"id": 1, "width": 64, "height": 64}],
        "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4], "area": 16}],
        "categories": [{"id": 1, "name": "rectangle"}],
    }
    doc.update(over)
    return doc


def test_loader_errors(tmp_path):
    p = tmp_path / "gt.json"
    p.write_text(json.dumps({"images": []}))
    with pytest.raises(DataError):
        load_coco_groundtruth(p)
    bad_ann = [{"id": 1, "image_id": 9, "category_id": 1, "bbox": [0, 0, 1, 1], "area": 1}]
    p.write_text(json.dumps(_gt_doc(annotations=bad_ann)))
    with pytest.raises(DataError):
        load_coco_groundtruth(p)
    p.write_text(json.dumps(_gt_doc(annotations=[{"id": 1, "image_id": 1, "category_id": 5, "bbox": [0, 0, 1, 1], "area": 1}])))
    with pytest.raises(DataError):
        load_coco_groundtruth(p)
    p.write_text(json.dumps(_gt_doc()))
    gt = load_coco_groundtruth(p)
    assert gt.gts[1].area_scale == 1.0
    d = tmp_path / "d.json"
    d.write_text(json.dumps([{"image_id": 2, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 0.5}]))
    with pytest.raises(DataError):
        load_coco_detections(d, gt)
    d.write_text(json.dumps([{"image_id": 1, "bbox": [0, 0, 1, 1], "score": 0.5}]))
    with pytest.raises(DataError):
        load_coco_detections(d)
    d.write_text("{not json")
    with pytest.raises(DataError):
        load_coco_detections(d)


def test_empty_annotations_give_undefined_metrics(tmp_path):
    p = tmp_path / "gt.json"
    p.write_text(json.dumps(_gt_doc(annotations=[])))
    gt = load_coco_groundtruth(p)
    assert len(gt.gts[1]) == 0
    r = evaluate({}, gt.gts, categories=sorted(gt.categories))
    assert np.isnan(r.map) and r.to_dict()["map"] is None


def test_scene_groundtruth():
    s = Scene(np.zeros((64, 64, 3)), np.array([[0, 0, 8, 8]]), np.array([2]))
    g = s.groundtruth()
    assert g.area_scale == 16.0 and g.classes.tolist() == [2]


def test_vertical_flip_mirrors_rows():
    s = generate_scene(DatasetSpec(seed=4), 3)
    f = flip_scene(s, vertical=True)
    assert_array_equal(f.image, s.image[::-1])
    assert_array_equal(f.boxes[:, [1, 3]], s.boxes[:, [1, 3]])
    assert_array_equal(flip_scene(f, vertical=True).boxes, s.boxes)
    for (y0, x0, y1, x1), (fy0, fx0, fy1, fx1) in zip(s.boxes.astype(int), f.boxes.astype(int)):
        assert_array_equal(f.image[fy0:fy1, fx0:fx1], s.image[y0:y1, x0:x1][::-1])
