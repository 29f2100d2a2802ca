"""Evaluation toolkit: IoU/AP against hand-computed and brute-force
oracles, AUROC against the pairwise definition, benchmarking, reports,
and experiment orchestration."""

import json

import numpy as np
import pytest

from nutnet import evalkit, model
from nutnet.errors import InputError, UndefinedMetricError
from nutnet.patchlab import DetectionBox


def box(x1, y1, x2, y2, conf=1.0, cls=0):
    return DetectionBox(class_id=cls, confidence=conf, x1=x1, y1=y1, x2=x2, y2=y2)


class TestIoU:
    def test_identical(self):
        b = box(0, 0, 10, 10)
        assert evalkit.iou(b, b) == 1.0

    def test_disjoint(self):
        assert evalkit.iou(box(0, 0, 5, 5), box(10, 10, 20, 20)) == 0.0

    def test_hand_computed(self):
        # 10x10 boxes overlapping in a 5x10 strip: 50 / (100+100-50)
        a, b = box(0, 0, 10, 10), box(5, 0, 15, 10)
        assert evalkit.iou(a, b) == pytest.approx(50 / 150)

    def test_symmetric(self):
        a, b = box(0, 0, 7, 3), box(2, 1, 9, 8)
        assert evalkit.iou(a, b) == evalkit.iou(b, a)


class TestAP:
    def test_hand_computed_pr_curve(self):
        # 2 GT boxes; detections (by confidence): hit, miss, hit.
        # precision points (1, 1/2, 2/3) at recalls (1/2, 1/2, 1);
        # all-point interpolation: 0.5*1 + 0.5*(2/3) = 5/6
        gt = {"a.png": [box(0, 0, 10, 10), box(20, 20, 30, 30)]}
        det = {"a.png": [
            box(0, 0, 10, 10, conf=0.9),
            box(50, 50, 60, 60, conf=0.8),
            box(20, 20, 30, 30, conf=0.7),
        ]}
        assert evalkit.ap_at_50(det, gt, 0) == pytest.approx(5 / 6)

    def test_perfect_detections(self):
        gt = {"a": [box(0, 0, 5, 5)], "b": [box(1, 1, 9, 9)]}
        det = {img: [b] for img, b in
               (("a", box(0, 0, 5, 5, 0.9)), ("b", box(1, 1, 9, 9, 0.8)))}
        assert evalkit.ap_at_50(det, gt, 0) == 1.0

    def test_iou_exactly_half_counts(self):
        gt = {"a": [box(0, 0, 10, 10)]}
        det = {"a": [box(0, 0, 10, 5, conf=0.9)]}  # IoU exactly 0.5
        assert evalkit.ap_at_50(det, gt, 0) == 1.0

    def test_no_detections_zero(self):
        assert evalkit.ap_at_50({}, {"a": [box(0, 0, 5, 5)]}, 0) == 0.0

    def test_no_groundtruth_undefined(self):
        with pytest.raises(UndefinedMetricError):
            evalkit.ap_at_50({"a": [box(0, 0, 5, 5)]}, {"a": []}, 0)

    def test_matches_brute_force_oracle(self):
        # Independent AP implementation: same greedy matching, but the
        # integral is evaluated from the interpolated-precision definition
        # AP = sum_i (r_i - r_{i-1}) * max_{r' >= r_i} precision(r').
        def naive_ap(det, gt):
            n_gt = sum(len(v) for v in gt.values())
            dets = sorted(
                ((img, b) for img, boxes in det.items() for b in boxes),
                key=lambda t: -t[1].confidence,
            )
            used = {img: [False] * len(boxes) for img, boxes in gt.items()}
            tp = []
            for img, d in dets:
                best, best_v = -1, 0.5
                for j, g in enumerate(gt.get(img, [])):
                    if used[img][j]:
                        continue
                    v = evalkit.iou(d, g)
                    if v >= best_v:
                        best, best_v = j, v
                if best >= 0:
                    used[img][best] = True
                    tp.append(1)
                else:
                    tp.append(0)
            prec, rec, hits = [], [], 0
            for i, t in enumerate(tp):
                hits += t
                prec.append(hits / (i + 1))
                rec.append(hits / n_gt)
            ap, prev_r = 0.0, 0.0
            for i in range(len(tp)):
                if tp[i]:
                    p_interp = max(prec[j] for j in range(len(prec))
                                   if rec[j] >= rec[i])
                    ap += (rec[i] - prev_r) * p_interp
                    prev_r = rec[i]
            return ap

        r = np.random.default_rng(11)
        for _ in range(30):
            gt, det = {}, {}
            for img in ("a", "b", "c"):
                gt[img] = []
                det[img] = []
                for _ in range(int(r.integers(0, 7))):
                    x, y = r.uniform(0, 80, 2)
                    w, h = r.uniform(4, 20, 2)
                    gt[img].append(box(x, y, x + w, y + h))
                for _ in range(int(r.integers(0, 7))):
                    if gt[img] and r.random() < 0.6:
                        g = gt[img][int(r.integers(len(gt[img])))]
                        dx, dy = r.uniform(-4, 4, 2)
                        b = box(g.x1 + dx, g.y1 + dy, g.x2 + dx, g.y2 + dy,
                                conf=float(r.random()))
                    else:
                        x, y = r.uniform(0, 80, 2)
                        w, h = r.uniform(4, 20, 2)
                        b = box(x, y, x + w, y + h, conf=float(r.random()))
                    det[img].append(b)
            if not any(gt.values()):
                continue
            got = evalkit.ap_at_50(det, gt, 0)
            want = naive_ap(det, gt)
            assert got == pytest.approx(want, abs=1e-12)

    def test_mean_ap_per_class(self):
        gt = {"a": [box(0, 0, 10, 10, cls=0), box(20, 20, 30, 30, cls=1)]}
        det = {"a": [box(0, 0, 10, 10, 0.9, cls=0),
                     box(40, 40, 50, 50, 0.9, cls=1)]}
        out = evalkit.mean_ap_at_50(det, gt)
        assert out["per_class"] == {0: 1.0, 1: 0.0}
        assert out["map"] == pytest.approx(0.5)


class TestAUROC:
    def test_perfect_separation(self):
        assert evalkit.auroc([1, 2, 3], [4, 5, 6]) == 1.0

    def test_reversed(self):
        assert evalkit.auroc([4, 5, 6], [1, 2, 3]) == 0.0

    def test_identical_scores_chance(self):
        assert evalkit.auroc([1.0, 1.0], [1.0, 1.0]) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(UndefinedMetricError):
            evalkit.auroc([], [1.0])

    def test_matches_pairwise_definition(self):
        r = np.random.default_rng(3)
        for _ in range(20):
            neg = np.round(r.normal(0, 1, int(r.integers(1, 40))), 1)
            pos = np.round(r.normal(0.5, 1, int(r.integers(1, 40))), 1)
            want = np.mean([
                1.0 if p > n else (0.5 if p == n else 0.0)
                for p in pos for n in neg
            ])
            assert evalkit.auroc(neg, pos) == pytest.approx(want, abs=1e-12)


class TestBenchFps:
    def test_counts_and_fields(self):
        calls = []
        out = evalkit.bench_fps(calls.append, [np.zeros(1)], repetitions=5,
                                warmup=2)
        assert len(calls) == 15  # warmup floored at 10
        assert out["frames"] == 5 and out["warmup"] == 10
        assert out["median_ms"] >= 0 and out["fps"] > 0
        assert out["p95_ms"] >= out["median_ms"]

    def test_empty_images_rejected(self):
        with pytest.raises(InputError):
            evalkit.bench_fps(lambda x: None, [])


class TestReports:
    def test_round_trip_and_header(self, tmp_path):
        path = tmp_path / "r.json"
        evalkit.write_report({"x": [1, 2], "y": "z"}, path)
        doc = evalkit.load_report(path)
        assert doc["schema_version"] == evalkit.REPORT_SCHEMA_VERSION
        assert doc["tool_version"] == evalkit.TOOL_VERSION
        assert doc["x"] == [1, 2] and doc["y"] == "z"
        assert not list(tmp_path.glob("*.tmp"))  # atomic write cleaned up

    def test_byte_identical_rewrite(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        evalkit.write_report({"k": 1, "a": 2}, a)
        evalkit.write_report({"a": 2, "k": 1}, b)
        assert a.read_bytes() == b.read_bytes()


class TestLoadDataset:
    def test_missing_dir(self, tmp_path):
        with pytest.raises(InputError):
            evalkit.load_dataset(tmp_path / "nope")

    def test_empty_dir(self, tmp_path):
        with pytest.raises(InputError):
            evalkit.load_dataset(tmp_path)

    def test_round_trip(self, tmp_path, rng):
        from nutnet import imageio

        imageio.save_image(rng.random((8, 8, 3)), tmp_path / "img.png")
        ann = tmp_path / "ann.json"
        ann.write_text(json.dumps({
            "img.png": [{"class": 2, "conf": 0.7,
                         "x1": 1, "y1": 2, "x2": 5, "y2": 6}],
        }))
        ds = evalkit.load_dataset(tmp_path, ann)
        assert [p.name for p in ds.image_paths] == ["img.png"]
        [b] = ds.annotations["img.png"]
        assert (b.class_id, b.confidence, b.x1, b.y2) == (2, 0.7, 1.0, 6.0)

    def test_annotation_for_missing_image(self, tmp_path, rng):
        from nutnet import imageio

        imageio.save_image(rng.random((8, 8, 3)), tmp_path / "img.png")
        ann = tmp_path / "ann.json"
        ann.write_text(json.dumps({"other.png": []}))
        with pytest.raises(InputError):
            evalkit.load_dataset(tmp_path, ann)


class TestRunExperiment:
    def ckpt(self, tmp_path):
        path = tmp_path / "m.nnae"
        model.save_checkpoint(model.init_params(0), path)
        return str(path)

    def test_bench_stage(self, tmp_path):
        config = {
            "checkpoint": self.ckpt(tmp_path),
            "stages": [{"type": "bench", "repetitions": 3}],
        }
        report, ok = evalkit.run_experiment(config, tmp_path / "out")
        assert ok
        assert report["stages"]["bench"]["frames"] == 3
        on_disk = evalkit.load_report(tmp_path / "out" / "report.json")
        assert on_disk["stages"]["bench"]["frames"] == 3

    def test_separation_stage_deterministic(self, tmp_path):
        config = {
            "checkpoint": self.ckpt(tmp_path),
            "stages": [{"type": "separation", "tiles": 50}],
        }
        a, _ = evalkit.run_experiment(config, tmp_path / "o1")
        b, _ = evalkit.run_experiment(config, tmp_path / "o2")
        assert a["stages"] == b["stages"]
        s = a["stages"]["separation"]
        assert 0.0 <= s["auroc"] <= 1.0 and s["ratio"] > 0

    def test_unknown_stage_recorded(self, tmp_path):
        config = {"stages": [{"type": "nonsense"}]}
        report, ok = evalkit.run_experiment(config, tmp_path / "out")
        assert not ok
        assert report["failures"][0]["stage"] == "nonsense"

    def test_failure_does_not_stop_later_stages(self, tmp_path):
        config = {
            "checkpoint": self.ckpt(tmp_path),
            "stages": [{"type": "nonsense"},
                       {"type": "bench", "repetitions": 2}],
        }
        report, ok = evalkit.run_experiment(config, tmp_path / "out")
        assert not ok
        assert report["stages"]["bench"]["frames"] == 2


def test_boxes_from_response():
    doc = {"boxes": [{"class_id": 1, "conf": 0.8,
                      "x1": 0, "y1": 1, "x2": 4, "y2": 5}]}
    [b] = evalkit.boxes_from_response(doc)
    assert b.class_id == 1 and b.confidence == 0.8 and b.y2 == 5.0
    assert evalkit.boxes_from_response({}) == []
