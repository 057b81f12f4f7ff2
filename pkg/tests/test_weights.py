import json

import numpy as np
import pytest

import anomem.weights as weights_mod
from anomem import (
    DegenerateDistributionError,
    DegenerateValidationError,
    FormatError,
    SamplingSpec,
    ScoreVector,
    aggregate,
    baseline_weights,
    candidate_weights,
    monte_carlo_search,
    read_weights_json,
    sample_weights,
    select_best,
    write_trace_csv,
    write_weights_json,
)
from anomem.weights import trace_header

from oracles import auroc_pairwise_oracle


def _spec(**kw):
    base = dict(distribution="uniform", n_samples=5, seed=3, n_scales=4)
    base.update(kw)
    return SamplingSpec(**base)


def _val_set(rng, n=12):
    out = []
    for i in range(n):
        out.append((ScoreVector.from_array(rng.random(9)), i % 2))
    return out


class TestSamplingSpec:
    def test_unknown_distribution_rejected(self):
        with pytest.raises(ValueError):
            _spec(distribution="poisson")

    def test_bad_parameters_rejected(self):
        with pytest.raises(ValueError):
            _spec(n_samples=-1)
        with pytest.raises(ValueError):
            _spec(sd_factor=-0.5)
        with pytest.raises(ValueError):
            _spec(student_df=0.0)
        with pytest.raises(ValueError):
            _spec(n_scales=0)

    def test_component_count(self):
        assert _spec(n_scales=4).n_components == 9
        assert _spec(n_scales=1).n_components == 3


class TestSampleWeights:
    def test_deterministic_per_candidate(self):
        # two equal spec instances, not the same object
        for dist in ("uniform", "normal", "student-t"):
            a = sample_weights(_spec(distribution=dist, seed=11), 3)
            b = sample_weights(_spec(distribution=dist, seed=11), 3)
            assert np.array_equal(a, b)

    def test_candidates_are_independent_of_draw_order(self):
        spec = _spec(seed=12)
        fresh = sample_weights(spec, 5)
        for k in range(5):
            sample_weights(spec, k)
        again = sample_weights(spec, 5)
        assert np.array_equal(fresh, again)

    def test_distinct_candidates_differ(self):
        spec = _spec(seed=13)
        assert not np.array_equal(sample_weights(spec, 0), sample_weights(spec, 1))

    def test_uniform_range_and_shape(self):
        spec = _spec(seed=14, n_samples=50)
        for k in range(50):
            w = sample_weights(spec, k)
            assert w.shape == (9,)
            assert np.all(w >= 0.0)
            assert np.all(w < 1.0)

    def test_uniform_ignores_baseline(self):
        spec = _spec(seed=15)
        a = sample_weights(spec, 2, baseline_weights(4))
        b = sample_weights(spec, 2, np.full(9, 0.11))
        assert np.array_equal(a, b)

    def test_normal_with_zero_sd_is_baseline(self):
        spec = _spec(distribution="normal", sd_factor=0.0, seed=16)
        base = baseline_weights(4)
        for k in range(10):
            assert np.array_equal(sample_weights(spec, k, base), base)

    def test_student_t_with_zero_sd_is_baseline(self):
        spec = _spec(distribution="student-t", sd_factor=0.0, seed=17)
        base = baseline_weights(4)
        assert np.array_equal(sample_weights(spec, 0, base), base)

    def test_negative_draws_clamp_to_zero(self):
        spec = _spec(distribution="normal", sd_factor=10.0, seed=18, n_samples=50)
        saw_zero = False
        for k in range(50):
            w = sample_weights(spec, k)
            assert np.all(w >= 0.0)
            saw_zero = saw_zero or bool(np.any(w == 0.0))
        assert saw_zero

    def test_all_zero_draws_exhaust_rejections(self, monkeypatch):
        class _Stuck:
            def random(self, n):
                return np.zeros(n)

            def normal(self, loc, scale):
                return np.full(np.shape(loc), -1.0)

            def standard_t(self, df, size):
                return np.full(size, -np.inf)

        monkeypatch.setattr(weights_mod, "rng_for", lambda seed, label: _Stuck())
        for dist in ("uniform", "normal", "student-t"):
            with pytest.raises(DegenerateDistributionError):
                sample_weights(_spec(distribution=dist, sd_factor=0.5), 0)


class TestCandidateList:
    def test_baseline_included_first(self):
        spec = _spec(include_baseline=True)
        cands = candidate_weights(spec)
        assert len(cands) == spec.n_samples + 1
        assert np.array_equal(cands[0], baseline_weights(4))
        for k in range(spec.n_samples):
            assert np.array_equal(cands[k + 1], sample_weights(spec, k))

    def test_baseline_excluded(self):
        spec = _spec(include_baseline=False)
        cands = candidate_weights(spec)
        assert len(cands) == spec.n_samples
        assert np.array_equal(cands[0], sample_weights(spec, 0))

    def test_custom_baseline_respected(self):
        custom = np.full(9, 1.0 / 9.0)
        cands = candidate_weights(_spec(include_baseline=True), custom)
        assert np.array_equal(cands[0], custom)


class TestSelection:
    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(501)
        for trial in range(10):
            val = _val_set(rng, n=10 + trial)
            spec = _spec(seed=trial, n_samples=5, include_baseline=True)
            got_w, got_a, trace = monte_carlo_search(val, spec)
            cands = [baseline_weights(4)] + [sample_weights(spec, k) for k in range(5)]
            scores = [[float(aggregate(sc, w)) for sc, _ in val] for w in cands]
            labels = [y for _, y in val]
            aurocs = [auroc_pairwise_oracle(s, labels) for s in scores]
            want_idx = int(np.argmax(aurocs))
            assert np.array_equal(got_w, cands[want_idx])
            assert got_a == aurocs[want_idx]
            assert [t.val_auroc for t in trace] == aurocs

    def test_chosen_never_below_baseline(self):
        rng = np.random.default_rng(502)
        for trial in range(20):
            val = _val_set(rng)
            spec = _spec(seed=trial, n_samples=8, include_baseline=True)
            _, best_a, trace = monte_carlo_search(val, spec)
            assert best_a >= trace[0].val_auroc

    def test_ties_go_to_earliest_candidate(self):
        hi = ScoreVector.from_array(np.full(9, 0.9))
        lo = ScoreVector.from_array(np.full(9, 0.1))
        val = [(hi, 1), (lo, 0)]
        # every candidate separates these perfectly
        cands = [baseline_weights(4), np.ones(9), np.full(9, 0.2)]
        idx, w, a, trace = select_best(val, cands)
        assert idx == 0
        assert a == 1.0
        assert all(t.val_auroc == 1.0 for t in trace)

    def test_scaling_all_candidates_preserves_choice(self):
        rng = np.random.default_rng(503)
        val = _val_set(rng, n=16)
        spec = _spec(seed=21, n_samples=10)
        cands = candidate_weights(spec)
        idx1, _, _, _ = select_best(val, cands)
        idx2, _, _, _ = select_best(val, [7.3 * w for w in cands])
        assert idx1 == idx2

    def test_trace_is_ordered_and_complete(self):
        rng = np.random.default_rng(504)
        val = _val_set(rng)
        cands = candidate_weights(_spec(n_samples=4))
        _, _, _, trace = select_best(val, cands)
        assert [t.index for t in trace] == [0, 1, 2, 3, 4]
        for t, w in zip(trace, cands):
            assert t.weights == tuple(float(x) for x in w)

    def test_parallel_selection_matches_serial(self):
        rng = np.random.default_rng(505)
        val = _val_set(rng, n=20)
        cands = candidate_weights(_spec(seed=30, n_samples=12))
        serial = select_best(val, cands, workers=1)
        parallel = select_best(val, cands, workers=4)
        assert serial[0] == parallel[0]
        assert np.array_equal(serial[1], parallel[1])
        assert [t.val_auroc for t in serial[3]] == [t.val_auroc for t in parallel[3]]

    def test_single_class_validation_rejected(self):
        sc = ScoreVector.from_array(np.full(9, 0.4))
        with pytest.raises(DegenerateValidationError):
            select_best([(sc, 1), (sc, 1)], [baseline_weights(4)])

    def test_no_candidates_rejected(self):
        sc = ScoreVector.from_array(np.full(9, 0.4))
        with pytest.raises(ValueError):
            select_best([(sc, 1), (sc, 0)], [])


class TestSerialization:
    def test_weights_json_round_trip(self, tmp_path):
        w = sample_weights(_spec(seed=40), 0)
        p = tmp_path / "weights.json"
        write_weights_json(w, p)
        back = read_weights_json(p, 9)
        assert np.array_equal(back, w)

    def test_weights_json_is_deterministic(self, tmp_path):
        w = sample_weights(_spec(seed=41), 1)
        write_weights_json(w, tmp_path / "a.json")
        write_weights_json(w, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_wrong_component_count_rejected(self, tmp_path):
        p = tmp_path / "weights.json"
        p.write_text(json.dumps([0.1] * 8))
        with pytest.raises(FormatError):
            read_weights_json(p, 9)

    def test_negative_component_rejected(self, tmp_path):
        p = tmp_path / "weights.json"
        p.write_text(json.dumps([0.5] * 8 + [-0.1]))
        with pytest.raises(FormatError):
            read_weights_json(p, 9)

    def test_non_finite_component_rejected(self, tmp_path):
        p = tmp_path / "weights.json"
        p.write_text("[NaN, 1, 1, 1, 1, 1, 1, 1, 1]")
        with pytest.raises(FormatError):
            read_weights_json(p, 9)

    def test_non_list_rejected(self, tmp_path):
        p = tmp_path / "weights.json"
        p.write_text('{"w": 1}')
        with pytest.raises(FormatError):
            read_weights_json(p, 9)

    def test_malformed_json_rejected(self, tmp_path):
        p = tmp_path / "weights.json"
        p.write_text("[0.1, 0.2")
        with pytest.raises(FormatError):
            read_weights_json(p, 9)

    def test_trace_csv_layout(self, tmp_path):
        rng = np.random.default_rng(506)
        val = _val_set(rng)
        spec = _spec(seed=42, n_samples=3)
        _, _, trace = monte_carlo_search(val, spec)
        p = tmp_path / "trace.csv"
        write_trace_csv(trace, p, n_scales=4)
        lines = p.read_text().strip().splitlines()
        assert lines[0].split(",") == trace_header(4)
        assert lines[0].split(",")[:2] == ["candidate_index", "w_zs"]
        assert len(lines) == 1 + len(trace)
        first = lines[1].split(",")
        assert int(first[0]) == 0
        assert [float(x) for x in first[1:10]] == list(trace[0].weights)
        assert float(first[10]) == trace[0].val_auroc

    def test_trace_csv_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(507)
        val = _val_set(rng)
        _, _, trace = monte_carlo_search(val, _spec(seed=43))
        write_trace_csv(trace, tmp_path / "a.csv", 4)
        write_trace_csv(trace, tmp_path / "b.csv", 4)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
