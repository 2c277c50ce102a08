import json
import subprocess
import sys

import numpy as np
import pytest

from pointpose.cli import (
    decode_bundle_dir,
    main,
    mimic_config_from_text,
    parse_config,
    results_json,
)
from pointpose.decode import (
    DecodeConfig,
    PersonPose,
    PoseKeypoint,
    decode_poses,
    pose_to_image_coords,
)
from pointpose.grid import Box
from pointpose.metrics import det_pr, pck
from pointpose.pointops import local_peaks
from pointpose.scene import (
    Scene,
    SceneKeypoint,
    ScenePerson,
    box_iou,
    gen_scene,
    render_scene,
    scene_from_json,
    scene_to_json,
)


class TestGenScene:
    def test_empty_scene(self):
        scene = gen_scene(0, 0.0, 128, seed=1)
        assert scene.persons == []

    def test_overlap_cap_respected(self):
        worst = 0.0
        for seed in range(300):
            scene = gen_scene(n_persons=(seed % 4) + 2, overlap_level=0.0, size=256, seed=seed)
            for i, a in enumerate(scene.persons):
                for b in scene.persons[i + 1 :]:
                    worst = max(worst, box_iou(a.box, b.box))
        assert worst < 0.05

    def test_nonzero_overlap_cap(self):
        for seed in range(100):
            scene = gen_scene(n_persons=4, overlap_level=0.1, size=256, seed=seed)
            for i, a in enumerate(scene.persons):
                for b in scene.persons[i + 1 :]:
                    assert box_iou(a.box, b.box) <= 0.1

    def test_deterministic(self):
        a = gen_scene(4, 0.05, 256, seed=9)
        b = gen_scene(4, 0.05, 256, seed=9)
        assert scene_to_json(a) == scene_to_json(b)

    def test_keypoints_inside_image_and_box(self):
        for seed in range(50):
            scene = gen_scene(3, 0.05, 192, seed=seed)
            for p in scene.persons:
                for kp in p.keypoints:
                    assert 0 <= kp.x < scene.width and 0 <= kp.y < scene.height
                    assert p.box.contains(kp.x, kp.y)

    def test_infeasible_packing_errors(self):
        with pytest.raises(RuntimeError):
            gen_scene(60, 0.0, 96, seed=0)

    def test_rejects_negative_persons(self):
        with pytest.raises(ValueError):
            gen_scene(-1, 0.0, 128)

    def test_json_round_trip(self):
        scene = gen_scene(3, 0.05, 256, seed=4)
        back = scene_from_json(scene_to_json(scene))
        assert scene_to_json(back) == scene_to_json(scene)


class TestRenderScene:
    def test_one_person_center_peak(self):
        scene = gen_scene(1, 0.0, 128, seed=3)
        bundle = render_scene(scene, stride=4, sigma=2.0)
        peaks = local_peaks(bundle.center, 0.2)
        assert len(peaks) == 1
        cx, cy = scene.persons[0].box.center
        assert abs(peaks[0].x - cx / 4) <= 0.5 + 1e-6
        assert abs(peaks[0].y - cy / 4) <= 0.5 + 1e-6

    def test_empty_scene_all_zero(self):
        bundle = render_scene(Scene(width=64, height=64), stride=4)
        for g in (bundle.pose, bundle.center, bundle.top_left, bundle.bottom_right):
            assert (g.data == 0).all()

    def test_grid_dims_ceil_division(self):
        bundle = render_scene(Scene(width=66, height=130), stride=4)
        assert (bundle.height, bundle.width) == (33, 17)

    def test_noise_seeded_and_clamped(self):
        scene = gen_scene(2, 0.05, 128, seed=5)
        a = render_scene(scene, noise=0.2)
        b = render_scene(scene, noise=0.2)
        assert a.pose == b.pose
        c = render_scene(scene, noise=0.2, noise_seed=99)
        assert a.pose != c.pose
        assert a.pose.data.min() >= 0.0 and a.pose.data.max() <= 1.0

    def test_invisible_keypoints_not_rendered(self):
        person = ScenePerson(
            box=Box(8, 8, 40, 56),
            keypoints=[SceneKeypoint(20, 20, True), SceneKeypoint(30, 30, False)],
        )
        scene = Scene(width=64, height=64, persons=[person], num_joints=2)
        bundle = render_scene(scene, stride=4)
        assert bundle.pose.data[:, :, 0].max() == 1.0
        assert (bundle.pose.data[:, :, 1] == 0).all()


def two_point_scene():
    person = ScenePerson(
        box=Box(10, 10, 50, 70),
        keypoints=[SceneKeypoint(20, 30, True), SceneKeypoint(40, 50, True)],
    )
    return Scene(width=128, height=128, persons=[person], num_joints=2)


def pose_from(scene, moves=()):
    person = scene.persons[0]
    kps = []
    for ch, kp in enumerate(person.keypoints):
        dx, dy = dict(moves).get(ch, (0.0, 0.0))
        kps.append(PoseKeypoint(x=kp.x + dx, y=kp.y + dy, score=1.0, present=True))
    return PersonPose(box=person.box, keypoints=kps)


class TestPck:
    def test_perfect_predictions(self):
        scene = two_point_scene()
        assert pck([pose_from(scene)], scene, tau=0.1) == 1.0

    def test_no_predictions(self):
        assert pck([], two_point_scene(), tau=0.1) == 0.0

    def test_one_of_two_beyond_tolerance(self):
        scene = two_point_scene()
        diag = scene.persons[0].box.diagonal()
        off = 0.2 * diag
        pred = pose_from(scene, moves={1: (off, 0.0)})
        assert pck([pred], scene, tau=0.1) == 0.5

    def test_within_tolerance_counts(self):
        scene = two_point_scene()
        diag = scene.persons[0].box.diagonal()
        pred = pose_from(scene, moves={1: (0.09 * diag, 0.0)})
        assert pck([pred], scene, tau=0.1) == 1.0

    def test_absent_keypoint_is_wrong(self):
        scene = two_point_scene()
        pred = pose_from(scene)
        pred.keypoints[0] = PoseKeypoint(0, 0, 0, False)
        assert pck([pred], scene, tau=0.1) == 0.5

    def test_low_iou_prediction_unmatched(self):
        scene = two_point_scene()
        pred = pose_from(scene)
        pred.box = Box(60, 60, 100, 120, 1.0)
        assert pck([pred], scene, tau=0.1) == 0.0

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            pck([], two_point_scene(), tau=0.0)


class TestDetPr:
    def test_perfect(self):
        gt = [Box(0, 0, 10, 10), Box(20, 20, 30, 30)]
        pred = [Box(0, 0, 10, 10, 0.9), Box(20, 20, 30, 30, 0.8)]
        assert det_pr(pred, gt, 0.5) == (1.0, 1.0)

    def test_empty_pred_convention(self):
        assert det_pr([], [Box(0, 0, 10, 10)], 0.5) == (1.0, 0.0)

    def test_empty_gt_convention(self):
        assert det_pr([Box(0, 0, 10, 10, 0.9)], [], 0.5) == (0.0, 1.0)

    def test_one_tp_one_fp(self):
        gt = [Box(0, 0, 10, 10), Box(20, 20, 30, 30)]
        pred = [Box(0, 0, 10, 10, 0.9), Box(50, 50, 60, 60, 0.8)]
        assert det_pr(pred, gt, 0.5) == (0.5, 0.5)

    def test_duplicate_matches_once(self):
        gt = [Box(0, 0, 10, 10)]
        pred = [Box(0, 0, 10, 10, 0.9), Box(0.5, 0, 10.5, 10, 0.8)]
        precision, recall = det_pr(pred, gt, 0.5)
        assert (precision, recall) == (0.5, 1.0)

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            det_pr([], [], 0.0)


class TestNoiseDegradation:
    def test_mean_pck_non_increasing_in_noise(self):
        cfg = DecodeConfig()
        means = []
        for noise in (0.0, 0.05, 0.1, 0.2):
            scores = []
            for seed in range(100):
                scene = gen_scene(
                    n_persons=(seed % 5) + 1, overlap_level=0.1, size=256, seed=seed
                )
                bundle = render_scene(scene, stride=4, sigma=2.0, noise=noise)
                img = [
                    pose_to_image_coords(p, bundle.stride)
                    for p in decode_poses(bundle, cfg)
                ]
                scores.append(pck(img, scene, tau=0.1))
            means.append(float(np.mean(scores)))
        inversions = [
            max(0.0, means[i + 1] - means[i]) for i in range(len(means) - 1)
        ]
        assert sum(1 for v in inversions if v > 0) <= 1
        assert max(inversions, default=0.0) <= 0.005


class TestConfigParser:
    def test_basic_and_comments(self):
        text = """
        # a comment
        alpha = 1.5
        steps= 40   # trailing comment

        name =  spaced value
        """
        assert parse_config(text) == {
            "alpha": "1.5", "steps": "40", "name": "spaced value"
        }

    def test_rejects_garbage_line(self):
        with pytest.raises(ValueError):
            parse_config("not a key value line")

    def test_mimic_config_parsing(self):
        cfg = mimic_config_from_text("alpha = 0.5\nsteps = 40\nstage2_start = 10\n")
        assert cfg.alpha == 0.5 and cfg.steps == 40 and cfg.stage2_start == 10

    def test_mimic_config_rejects_unknown_key(self):
        with pytest.raises(ValueError):
            mimic_config_from_text("bogus = 1\n")


class TestCliRoundTrip:
    def test_outputs_reparse_to_in_process_values(self, tmp_path):
        bundle_dir = tmp_path / "bundle"
        assert main([
            "render", "--seed", "11", "--persons", "3",
            "--overlap", "0.05", "--out", str(bundle_dir),
        ]) == 0
        results = tmp_path / "results.json"
        assert main([
            "decode", "--bundle", str(bundle_dir), "--out", str(results),
        ]) == 0

        # the CLI file must byte-match the in-process decode of the same dir
        assert results.read_bytes() == decode_bundle_dir(bundle_dir, DecodeConfig())

        # and re-parse to the same scores the in-process pipeline computes
        scene = scene_from_json((bundle_dir / "scene.json").read_text())
        bundle = render_scene(scene, stride=4, sigma=2.0, noise=0.0)
        poses = decode_poses(bundle, DecodeConfig())
        assert results.read_bytes() == results_json(poses, bundle.stride)

        out = subprocess.run(
            [sys.executable, "-m", "pointpose", "eval",
             "--pred", str(results), "--scene", str(bundle_dir / "scene.json")],
            capture_output=True, text=True, check=True,
        )
        report = json.loads(out.stdout)
        from pointpose.decode import pose_to_image_coords

        img = [pose_to_image_coords(p, bundle.stride) for p in poses]
        assert report["pck"] == pck(img, scene, tau=0.1)
        precision, recall = det_pr(
            [p.box for p in img], [p.box for p in scene.persons], 0.5
        )
        assert (report["det_precision"], report["det_recall"]) == (precision, recall)

    def test_decode_deterministic_bytes(self, tmp_path):
        bundle_dir = tmp_path / "bundle"
        main(["render", "--seed", "2", "--persons", "2", "--out", str(bundle_dir)])
        a = decode_bundle_dir(bundle_dir, DecodeConfig())
        b = decode_bundle_dir(bundle_dir, DecodeConfig())
        assert a == b

    def test_multi_scale_render_decode(self, tmp_path):
        bundle_dir = tmp_path / "ms"
        scales = "0.6,1.0,1.2"
        assert main([
            "render", "--seed", "4", "--persons", "2",
            "--scales", scales, "--out", str(bundle_dir),
        ]) == 0
        for s in ("0.6", "1", "1.2"):
            assert (bundle_dir / f"scale_{s}" / "pose.splg").exists()
        results = tmp_path / "ms.json"
        assert main([
            "decode", "--bundle", str(bundle_dir), "--scales", scales,
            "--out", str(results),
        ]) == 0
        persons = json.loads(results.read_text())
        assert len(persons) >= 2

    def test_results_json_schema(self, tmp_path):
        bundle_dir = tmp_path / "bundle"
        main(["render", "--seed", "5", "--persons", "1", "--out", str(bundle_dir)])
        payload = decode_bundle_dir(bundle_dir, DecodeConfig())
        persons = json.loads(payload)
        assert isinstance(persons, list) and persons
        p = persons[0]
        assert set(p) == {"bbox", "score", "keypoints"}
        assert len(p["bbox"]) == 4 and len(p["keypoints"]) == 17 * 3
        assert all(v in (0, 2) for v in p["keypoints"][2::3])
        # image-pixel coordinates: inside the rendered canvas
        assert 0 <= p["bbox"][0] < p["bbox"][2] <= 256

    def test_mimic_train_cli(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "steps = 12\nstage2_start = 6\nscene_count = 1\npersons = 2\n"
            "size = 128\nseed = 2\n"
        )
        run_dir = tmp_path / "run"
        assert main(["mimic-train", "--config", str(cfg), "--out", str(run_dir)]) == 0
        lines = (run_dir / "report.csv").read_text().strip().split("\n")
        assert lines[0] == "step,stage,L_pose,L_det,L_m1,L_m2,total"
        assert len(lines) == 13
        from pointpose.diffops import read_checkpoint

        sections = read_checkpoint(run_dir / "checkpoint.splgc")
        assert "residual" in sections and "adapter1.kernel" in sections

    def test_mimic_losses_cli(self, tmp_path):
        from pointpose.grid import Grid, write_grid

        rng = np.random.default_rng(0)
        gt = rng.random((8, 8, 3)).astype(np.float32)
        student = np.clip(gt + 0.1, 0, 1).astype(np.float32)
        for name, data in (("s", student), ("gt", gt), ("pred", gt)):
            write_grid(Grid(data), tmp_path / f"{name}.splg")
        out = subprocess.run(
            [sys.executable, "-m", "pointpose", "mimic-losses",
             "--student", str(tmp_path / "s.splg"),
             "--teacher-gt", str(tmp_path / "gt.splg"),
             "--teacher-pred", str(tmp_path / "pred.splg")],
            capture_output=True, text=True, check=True,
        )
        values = json.loads(out.stdout)
        from pointpose.diffops import ConvLayer
        from pointpose.mimic import TeacherBundle, mimic_losses

        teacher = TeacherBundle(
            gt=Grid(gt), pred=Grid(gt), person_box=Box(0, 0, 8, 8)
        )
        a = ConvLayer.identity(3, 3)
        l1, l2 = mimic_losses(Grid(student), teacher, a, a)
        assert values["l_m1"] == pytest.approx(l1, abs=1e-12)
        assert values["l_m2"] == pytest.approx(l2, abs=1e-12)

    def test_bench_csv_format(self, capsys):
        assert main(["bench", "--sizes", "16,32", "--iters", "3"]) == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert out[0] == "op,size,ns_per_op"
        names = {line.split(",")[0] for line in out[1:]}
        assert {"center_pool", "cascade_top_left", "cascade_bottom_right", "decode"} <= names
