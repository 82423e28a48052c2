import json

import numpy as np
import pytest
from scipy import stats

from flamkit import batcher, encoders, metrics
from flamkit.synthpipe.dataset import EventRecord, MixtureRecord
from flamkit.synthpipe.labels import rle_encode
from flamkit.synthpipe.wavio import write_wav_f32


def scored_instance(rng, n=50, grid=8):
    """Random scores with plenty of ties plus labels covering both classes."""
    scores = rng.integers(0, grid, size=n) / (grid - 1.0)
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    return scores, labels


def auroc_oracle(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


def roc_oracle(scores, labels):
    pts = [(0.0, 0.0)]
    for t in sorted(set(scores.tolist()), reverse=True):
        fpr = float(np.mean(scores[labels == 0] >= t))
        tpr = float(np.mean(scores[labels == 1] >= t))
        pts.append((fpr, tpr))
    return pts


def mpauc_oracle(scores, labels, cap=0.1):
    pts = roc_oracle(scores, labels)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if x1 <= cap:
            area += (x1 - x0) * (y0 + y1) / 2.0
        elif x0 < cap:
            yc = y0 + (y1 - y0) * (cap - x0) / (x1 - x0)
            area += (cap - x0) * (y0 + yc) / 2.0
    a_min, a_max = cap * cap / 2.0, cap
    return 0.5 * (1.0 + (area - a_min) / (a_max - a_min))


class TestAverageRanks:
    def test_no_ties(self):
        r = metrics.average_ranks(np.array([0.3, 0.1, 0.2]))
        assert np.array_equal(r, [3.0, 1.0, 2.0])

    def test_ties_get_mean_rank(self):
        r = metrics.average_ranks(np.array([0.5, 0.2, 0.5, 0.9]))
        assert np.array_equal(r, [2.5, 1.0, 2.5, 4.0])


class TestFrameAuroc:
    def test_perfect_pair(self):
        assert metrics.frame_auroc([0.9, 0.1], [1, 0]) == 1.0

    def test_all_tied_scores(self):
        assert metrics.frame_auroc([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0]) == 0.5

    def test_matches_pairwise_oracle_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            scores, labels = scored_instance(rng)
            assert metrics.frame_auroc(scores, labels) == auroc_oracle(scores, labels)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            scores, labels = scored_instance(rng)
            base = metrics.frame_auroc(scores, labels)
            assert metrics.frame_auroc(np.exp(3.0 * scores), labels) == base

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            metrics.frame_auroc([0.1, 0.2], [1, 1])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            metrics.frame_auroc([0.1, 0.2, 0.3], [1, 0])

    def test_nonbinary_labels_rejected(self):
        with pytest.raises(ValueError):
            metrics.frame_auroc([0.1, 0.2], [1, 2])


class TestRocCurve:
    def test_endpoints_and_monotone(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            scores, labels = scored_instance(rng)
            fpr, tpr = metrics.roc_curve(scores, labels)
            assert fpr[0] == 0.0 and tpr[0] == 0.0
            assert fpr[-1] == 1.0 and tpr[-1] == 1.0
            assert np.all(np.diff(fpr) >= 0)
            assert np.all(np.diff(tpr) >= 0)

    def test_matches_threshold_sweep(self):
        rng = np.random.default_rng(3)
        scores, labels = scored_instance(rng)
        fpr, tpr = metrics.roc_curve(scores, labels)
        pts = roc_oracle(scores, labels)
        assert np.allclose(np.column_stack([fpr, tpr]), pts, atol=1e-15)


class TestMpauc:
    def test_perfect_separation(self):
        scores = np.r_[np.full(20, 0.9), np.full(30, 0.1)]
        labels = np.r_[np.ones(20, dtype=int), np.zeros(30, dtype=int)]
        assert metrics.mpauc(scores, labels) == 1.0

    def test_all_tied_is_chance(self):
        v = metrics.mpauc(np.full(10, 0.3), np.r_[np.ones(5, int), np.zeros(5, int)])
        assert abs(v - 0.5) < 1e-12

    def test_matches_dense_sweep_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            scores, labels = scored_instance(rng)
            assert abs(metrics.mpauc(scores, labels) - mpauc_oracle(scores, labels)) < 1e-9

    def test_bounded_above_by_one(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores, labels = scored_instance(rng)
            assert metrics.mpauc(scores, labels) <= 1.0 + 1e-12

    def test_early_false_positive_costs(self):
        # top-ranked item is a negative, so TPR < 1 below the cap
        scores = np.r_[1.0, np.linspace(0.9, 0.5, 20), np.full(30, 0.1)]
        labels = np.r_[0, np.ones(20, dtype=int), np.zeros(30, dtype=int)]
        assert metrics.mpauc(scores, labels) < 1.0

    def test_cap_validation(self):
        with pytest.raises(ValueError):
            metrics.mpauc([0.1, 0.9], [0, 1], max_fpr=0.0)
        with pytest.raises(ValueError):
            metrics.mpauc([0.1, 0.9], [0, 1], max_fpr=1.5)


class TestSpearmanRho:
    def test_aligned_scores_give_one(self):
        # rho = 1 needs identical rank vectors; with tied binary labels that
        # means scores forming the same two tie groups
        scores = np.r_[np.full(4, 0.1), np.full(4, 0.9)]
        labels = np.r_[np.zeros(4), np.ones(4)]
        assert abs(metrics.spearman_rho(scores, labels) - 1.0) < 1e-12
        assert abs(metrics.spearman_rho(scores[::-1], labels) + 1.0) < 1e-12

    def test_separated_but_tied_labels_below_one(self):
        # strictly increasing scores against tied binary labels cannot reach 1
        scores = np.linspace(0.1, 0.9, 8)
        labels = np.r_[np.zeros(4), np.ones(4)]
        rho = metrics.spearman_rho(scores, labels)
        assert abs(rho - np.sqrt(16.0 / 21.0)) < 1e-12

    def test_hand_case_direct_formula(self):
        scores = np.array([0.1, 0.4, 0.4, 0.9])
        labels = np.array([0, 0, 1, 1])
        rs = np.array([1.0, 2.5, 2.5, 4.0]) - 2.5
        rl = np.array([1.5, 1.5, 3.5, 3.5]) - 2.5
        want = (rs @ rl) / np.sqrt((rs @ rs) * (rl @ rl))
        assert abs(metrics.spearman_rho(scores, labels) - want) < 1e-12

    def test_matches_library_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            scores, labels = scored_instance(rng, n=30)
            want = stats.spearmanr(scores, labels).statistic
            assert abs(metrics.spearman_rho(scores, labels) - want) < 1e-9

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(7)
        scores, labels = scored_instance(rng)
        base = metrics.spearman_rho(scores, labels)
        assert abs(metrics.spearman_rho(scores ** 3 + 1.0, labels) - base) < 1e-12

    def test_constant_input_rejected(self):
        with pytest.raises(ValueError):
            metrics.spearman_rho([0.5, 0.5, 0.5], [0, 1, 0])
        with pytest.raises(ValueError):
            metrics.spearman_rho([0.1, 0.5, 0.9], [1, 1, 1])

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            metrics.spearman_rho([0.1, 0.9], [0, 1])


class TestRecallAtK:
    def test_identity_dominant(self):
        sim = np.eye(6) + 0.01
        assert metrics.recall_at_k(sim, 1) == (1.0, 1.0)

    def test_anti_diagonal_dominant(self):
        sim = np.fliplr(np.eye(4))
        assert metrics.recall_at_k(sim, 1) == (0.0, 0.0)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(8)

        def oracle(mat, k):
            n = mat.shape[0]
            hits = 0
            for i in range(n):
                rank = 0
                for j in range(n):
                    if mat[i, j] > mat[i, i] or (mat[i, j] == mat[i, i] and j < i):
                        rank += 1
                hits += int(rank < k)
            return hits / n

        for _ in range(100):
            sim = rng.integers(0, 6, size=(10, 10)) / 5.0
            for k in (1, 3, 5):
                got = metrics.recall_at_k(sim, k)
                assert got == (oracle(sim, k), oracle(sim.T, k))

    def test_nondecreasing_in_k(self):
        rng = np.random.default_rng(9)
        sim = rng.random((12, 12))
        prev = (0.0, 0.0)
        for k in range(1, 13):
            got = metrics.recall_at_k(sim, k)
            assert got[0] >= prev[0] and got[1] >= prev[1]
            prev = got
        assert prev == (1.0, 1.0)

    def test_all_tied_resolves_by_index(self):
        sim = np.ones((5, 5))
        for k in range(1, 6):
            assert metrics.recall_at_k(sim, k) == (k / 5.0, k / 5.0)

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError):
            metrics.recall_at_k(np.ones((3, 4)), 1)
        with pytest.raises(ValueError):
            metrics.recall_at_k(np.ones((3, 3)), 4)
        with pytest.raises(ValueError):
            metrics.recall_at_k(np.ones((3, 3)), 0)


class TestSegmentPool:
    def test_window_edges_cover_each_frame_once(self):
        scores = np.arange(32, dtype=np.float64)
        labels = np.zeros(32, dtype=np.int8)
        seg_s, seg_l = metrics.segment_pool(scores, labels)
        assert seg_s.shape == (10,) and seg_l.shape == (10,)
        # window sizes on the 32-frame grid
        sizes = [3, 3, 3, 3, 4, 3, 3, 3, 3, 4]
        lo = 0
        for w, size in enumerate(sizes):
            assert seg_s[w] == scores[lo:lo + size].mean()
            lo += size
        assert lo == 32

    def test_label_max_pooling(self):
        labels = np.zeros(32, dtype=np.int8)
        labels[12] = 1
        _, seg_l = metrics.segment_pool(np.zeros(32), labels)
        want = np.zeros(10, dtype=np.int64)
        want[4] = 1  # frame 12 lies in the fifth window [12, 16)
        assert np.array_equal(seg_l, want)


class TestPoolEventMetrics:
    def test_oracle_scores_equal_labels(self):
        rng = np.random.default_rng(10)
        pairs = []
        for _ in range(4):
            lab = (rng.random(32) < 0.3).astype(np.int8)
            lab[0] = 1
            lab[1] = 0
            pairs.append((lab.astype(np.float64), lab))
        per_event, skipped, macro = metrics.pool_event_metrics({"dog barking": pairs})
        assert skipped == []
        ev = per_event["dog barking"]
        assert ev["auroc"] == 1.0
        assert abs(ev["rho"] - 1.0) < 1e-12
        assert ev["mpauc"] == 1.0
        assert macro["n_events"] == 1

    def test_random_scores_near_chance(self):
        rng = np.random.default_rng(11)
        pairs = [((rng.random(32)), (rng.random(32) < 0.3).astype(np.int8))
                 for _ in range(320)]
        per_event, _, _ = metrics.pool_event_metrics({"x": pairs})
        assert per_event["x"]["n_frames"] >= 10_000
        assert abs(per_event["x"]["auroc"] - 0.5) < 0.05

    def test_single_class_event_skipped(self):
        pairs = [(np.linspace(0, 1, 32), np.ones(32, dtype=np.int8))]
        per_event, skipped, macro = metrics.pool_event_metrics({"siren": pairs})
        assert per_event == {} and skipped == ["siren"] and macro is None

    def test_constant_score_event_skipped(self):
        lab = np.zeros(32, dtype=np.int8)
        lab[5] = 1
        _, skipped, _ = metrics.pool_event_metrics({"hum": [(np.full(32, 0.2), lab)]})
        assert skipped == ["hum"]


def tiny_eval_config():
    return encoders.ModelConfig(n_bands=8, n_frames=32, embed_dim=8,
                                trunk_hidden=16, trunk_out=16,
                                text_buckets=512, head_hidden=8)


def eval_record(rng, clip_id, caption_curves):
    events = []
    for caption, curve in caption_curves:
        events.append(EventRecord(caption=caption, segments=[[0.0, 1.0]],
                                  activity_rle=rle_encode(curve)))
    return MixtureRecord(id=clip_id, audio=f"wavs/{clip_id}.wav", sr=48000,
                         background_caption="a quiet room", events=events,
                         seed=0, norm_gain_db=0.0)


@pytest.fixture()
def eval_corpus(tmp_path):
    rng = np.random.default_rng(12)
    (tmp_path / "wavs").mkdir()
    curve_a = np.zeros(500, dtype=np.int8)
    curve_a[100:200] = 1
    curve_b = np.zeros(500, dtype=np.int8)
    curve_b[300:450] = 1
    records = [
        eval_record(rng, "clip0", [("Dog barking", curve_a)]),
        eval_record(rng, "clip1", [("dog barking", curve_b), ("rain falling", curve_a)]),
    ]
    for rec in records:
        wave = 0.1 * rng.standard_normal(encoders.CLIP_SAMPLES)
        write_wav_f32(tmp_path / rec.audio, wave, 48000)
    params = encoders.init_params(tiny_eval_config(), seed=5)
    return params, tiny_eval_config(), records, tmp_path


class TestEvaluateSed:
    def test_report_shape_and_gt_policy(self, eval_corpus):
        params, config, records, root = eval_corpus
        report = metrics.evaluate_sed(params, config, records, root, dataset_name="dev")
        assert report["dataset"] == "dev"
        assert report["n_clips"] == 2
        scored = set(report["per_event"]) | set(report["skipped_events"])
        assert scored == {"dog barking", "rain falling"}
        # gt policy: "dog barking" is scored on both clips, "rain falling" on one
        if "dog barking" in report["per_event"]:
            assert report["per_event"]["dog barking"]["n_frames"] == 64
        if "rain falling" in report["per_event"]:
            assert report["per_event"]["rain falling"]["n_frames"] == 32

    def test_all_policy_scores_every_clip(self, eval_corpus):
        params, config, records, root = eval_corpus
        report = metrics.evaluate_sed(params, config, records, root, prompt_policy="all")
        for ev in report["per_event"].values():
            assert ev["n_frames"] == 64

    def test_deterministic(self, eval_corpus):
        params, config, records, root = eval_corpus
        a = metrics.evaluate_sed(params, config, records, root, config_hash="h")
        b = metrics.evaluate_sed(params, config, records, root, config_hash="h")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_missing_audio_raises(self, eval_corpus):
        params, config, records, root = eval_corpus
        records[0].audio = "wavs/nonexistent.wav"
        with pytest.raises(FileNotFoundError):
            metrics.evaluate_sed(params, config, records, root)

    def test_bad_policy_rejected(self, eval_corpus):
        params, config, records, root = eval_corpus
        with pytest.raises(ValueError):
            metrics.evaluate_sed(params, config, records, root, prompt_policy="both")

    def test_wrong_frame_grid_rejected(self, eval_corpus):
        params, _, records, root = eval_corpus
        mini = encoders.MINI_CONFIG
        with pytest.raises(ValueError):
            metrics.evaluate_sed(encoders.init_params(mini, 0), mini, records, root)

    def test_write_report_round_trip(self, eval_corpus, tmp_path):
        params, config, records, root = eval_corpus
        report = metrics.evaluate_sed(params, config, records, root)
        out = tmp_path / "report.json"
        metrics.write_report(out, report)
        assert json.loads(out.read_text()) == report
