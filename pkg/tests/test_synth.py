import math

import numpy as np
import pytest

from salmonkit.data import Dataset, ImageRecord, make_object_mask
from salmonkit.gtgen import build_ground_truth
from salmonkit.synth import (
    ObjectSpec,
    SceneSpec,
    detector_map,
    generate_scene,
    oracle_auprc_exact,
    oracle_tau_bruteforce,
    random_scene_spec,
    rng_for,
    simulate_subjects,
    synth_dataset,
)


def two_object_spec(**kw):
    objs = [ObjectSpec("rectangle", 4, 4, 10, 8, (200, 30, 30), 1.0),
            ObjectSpec("ellipse", 30, 10, 12, 14, (30, 200, 30), 0.4)]
    return SceneSpec(7, 60, 40, objs, **kw)


def dataset_from_spec(spec):
    scene = generate_scene(spec)
    masks = [make_object_mask(f"o{j}", "s", m) for j, m in enumerate(scene.masks)]
    return Dataset([ImageRecord("s", spec.width, spec.height, None)], masks,
                   simulate_subjects(spec, scene.masks, "s")), scene


class TestDeterminism:
    def test_same_seed_same_everything(self):
        a, sa, _ = synth_dataset(3, 3, size=96, detectors=())
        b, sb, _ = synth_dataset(3, 3, size=96, detectors=())
        for k in sa:
            assert np.array_equal(sa[k].image, sb[k].image)
        assert [r.events.tolist() for r in a.subject_records] == [r.events.tolist() for r in b.subject_records]

    def test_threads_do_not_change_output(self):
        _, sa, _ = synth_dataset(3, 4, size=96, detectors=())
        _, sb, _ = synth_dataset(3, 4, size=96, detectors=(), workers=3)
        assert all(np.array_equal(sa[k].image, sb[k].image) for k in sa)

    def test_different_seed_differs(self):
        _, sa, _ = synth_dataset(3, 1, size=96, detectors=())
        _, sb, _ = synth_dataset(4, 1, size=96, detectors=())
        assert not np.array_equal(sa["scene0000"].image, sb["scene0000"].image)

    def test_streams_are_independent(self):
        assert rng_for(1, 0).random() != rng_for(1, 1).random()
        assert rng_for(1, 2).random() == rng_for(1, 2).random()


class TestScene:
    def test_rectangle_area_is_exact(self):
        scene = generate_scene(two_object_spec())
        assert scene.masks[0].sum() == 80
        assert scene.masks[0][4:12, 4:14].all()

    def test_masks_disjoint(self):
        spec = random_scene_spec(11, 200, 150, 6)
        scene = generate_scene(spec)
        total = np.sum([m.astype(int) for m in scene.masks], axis=0)
        assert total.max() == 1

    def test_overlap_rejected(self):
        objs = [ObjectSpec("rectangle", 0, 0, 10, 10, (0, 0, 0), 0.5),
                ObjectSpec("rectangle", 5, 5, 10, 10, (0, 0, 0), 0.6)]
        with pytest.raises(ValueError, match="overlaps"):
            generate_scene(SceneSpec(1, 30, 30, objs))
        generate_scene(SceneSpec(1, 30, 30, objs, allow_overlap=True))

    def test_out_of_frame_rejected(self):
        with pytest.raises(ValueError, match="does not fit"):
            generate_scene(SceneSpec(1, 30, 30, [ObjectSpec("ellipse", 25, 0, 10, 10, (0, 0, 0), 0.5)]))

    def test_bad_spec_values(self):
        with pytest.raises(ValueError):
            SceneSpec(1, 30, 30, [ObjectSpec("star", 0, 0, 5, 5, (0, 0, 0), 0.5)])
        with pytest.raises(ValueError):
            SceneSpec(1, 30, 30, [ObjectSpec("ellipse", 0, 0, 5, 5, (0, 0, 0), 1.5)])

    def test_layout_respects_counts_and_separation(self):
        spec = random_scene_spec(2, 300, 200, 5)
        assert len(spec.objects) == 5
        sal = sorted(o.true_saliency for o in spec.objects)
        assert min(b - a for a, b in zip(sal, sal[1:])) >= 0.05

    def test_object_count_range(self):
        ds, _, _ = synth_dataset(8, 10, objects=(2, 3), size=96, detectors=())
        per = [len(ds.masks_for(im.image_id)) for im in ds.images]
        assert set(per) <= {2, 3}


class TestSubjects:
    def test_counts_and_ids(self):
        spec = two_object_spec(subjects={"et": 5, "pc": 12, "rd": 0})
        ds, _ = dataset_from_spec(spec)
        assert ds.subject_count("s", "et") == 5
        assert ds.subject_count("s", "pc") == 12
        assert ds.subject_count("s", "rd") == 0

    def test_certain_object_has_unit_saliency(self):
        spec = two_object_spec(rect_jitter=0.0, subjects={"et": 10, "pc": 40, "rd": 40})
        ds, _ = dataset_from_spec(spec)
        gt = build_ground_truth(ds, sigma=2.0)["s"]
        o = gt.objects[0]
        assert (o.s_pc, o.s_rd, o.s_et) == (1.0, 1.0, 1.0)

    def test_zero_jitter_draws_tight_rect(self):
        spec = two_object_spec(rect_jitter=0.0, subjects={"et": 0, "pc": 0, "rd": 30})
        ds, _ = dataset_from_spec(spec)
        rects = {tuple(e) for r in ds.subject_records for e in r.events}
        assert rects <= {tuple(m.tight_rect) for m in ds.masks}

    def test_clicks_fall_inside_objects(self):
        spec = two_object_spec(click_scatter=2.0, subjects={"et": 0, "pc": 50, "rd": 0})
        ds, scene = dataset_from_spec(spec)
        union = scene.masks[0] | scene.masks[1]
        for r in ds.subject_records:
            for x, y in r.events:
                assert union[y, x]

    def test_click_rate_tracks_saliency(self):
        spec = two_object_spec(subjects={"et": 0, "pc": 4000, "rd": 0})
        ds, _ = dataset_from_spec(spec)
        s = build_ground_truth(ds, modalities=("pc",))["s"].objects[1].s_pc
        assert s == pytest.approx(0.4, abs=0.03)

    def test_poisson_fixation_counts(self):
        spec = two_object_spec(fixation_count="poisson", subjects={"et": 30, "pc": 0, "rd": 0})
        ds, _ = dataset_from_spec(spec)
        counts = [int(e[2]) for r in ds.subject_records for e in r.events]
        assert min(counts) >= 1 and len(set(counts)) > 1


class TestDetectors:
    def test_truth_paints_saliency(self):
        scene = generate_scene(two_object_spec())
        t = detector_map("truth", scene)
        assert np.all(t[scene.masks[0]] == 1.0) and np.all(t[scene.masks[1]] == 0.4)
        assert t[~(scene.masks[0] | scene.masks[1])].max() == 0

    def test_all_in_unit_range_and_seeded(self):
        scene = generate_scene(two_object_spec())
        for name in ("truth", "noisy", "center"):
            m = detector_map(name, scene, 5)
            assert m.shape == (40, 60) and m.min() >= 0 and m.max() <= 1
        assert np.array_equal(detector_map("noisy", scene, 5), detector_map("noisy", scene, 5))
        assert not np.array_equal(detector_map("noisy", scene, 5), detector_map("noisy", scene, 6))

    def test_unknown(self):
        with pytest.raises(ValueError):
            detector_map("magic", generate_scene(two_object_spec()))


class TestOracles:
    def test_auprc_hand_example(self):
        S = np.array([[0.9, 0.5, 0.5, 0.1]])
        gt = np.array([[True, False, True, False]])
        assert oracle_auprc_exact(S, gt).value == pytest.approx(11 / 12, abs=1e-15)

    def test_auprc_perfect_and_constant(self):
        gt = np.zeros((4, 4), bool)
        gt[:2] = True
        assert oracle_auprc_exact(gt.astype(float), gt).value == 1.0
        assert oracle_auprc_exact(np.full((4, 4), 0.3), gt).value == pytest.approx(0.5)

    def test_auprc_limits(self):
        with pytest.raises(ValueError):
            oracle_auprc_exact(np.zeros((65, 65)), np.ones((65, 65), bool))
        with pytest.raises(ValueError):
            oracle_auprc_exact(np.zeros((3, 3)), np.zeros((3, 3), bool))

    def test_tau_hand_examples(self):
        assert oracle_tau_bruteforce([1, 2, 3], [1, 2, 3], "standard").value == 1
        assert oracle_tau_bruteforce([1, 2, 3], [3, 2, 1], "standard").value == -1
        # pairs: (1,2) tie in rho; (1,3) concordant; (2,3) concordant
        want = 2 / math.sqrt(3 * 2)
        assert oracle_tau_bruteforce([1, 2, 3], [1, 1, 2], "standard").value == pytest.approx(want)

    def test_tau_combined_single_modality_reduces(self):
        R = [0.1, 0.4, 0.4, 0.9]
        rho = [0.2, 0.1, 0.5, 0.7]
        a = oracle_tau_bruteforce(R, [rho], "combined").value
        b = oracle_tau_bruteforce(R, rho, "standard").value
        assert a == pytest.approx(b, abs=1e-15)

    def test_tau_modes(self):
        with pytest.raises(ValueError):
            oracle_tau_bruteforce([1, 2], [[1, 2]], "other")
