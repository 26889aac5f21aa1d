"""Ingest pipeline: parsing, decimation, baseline, segmentation, splits."""

import numpy as np
import pytest

from gvit.errors import DomainError, ParseError
from gvit.graph import SensorGraph
from gvit.ingest import (
    DatasetSplit,
    RawStream,
    baseline_correct,
    downsample,
    kfold,
    load_dataset,
    normalize_targets,
    parse_stream,
    run_pipeline,
    save_dataset,
    segment,
    stratified_split,
    target_maxima,
)
from gvit.synth import SensorParams, make_schedule, synth_stream, write_stream


def _stream(conc_pairs, sensors=None, group="co_ethylene"):
    """RawStream from a list of (conc_a, conc_b) rows."""
    n = len(conc_pairs)
    return RawStream(
        time=np.arange(n, dtype=float),
        conc=np.array(conc_pairs, dtype=float),
        sensors=np.zeros((n, 16)) if sensors is None else np.asarray(sensors, float),
        group=group,
        source="unit",
    )


class TestParseStream:
    def _write(self, tmp_path, text, name="rec.txt"):
        path = tmp_path / name
        path.write_text(text)
        return path

    def _row(self, t, ca, cb, fill=1.0):
        return " ".join([str(t), str(ca), str(cb)] + [str(fill)] * 16)

    def test_three_row_file(self, tmp_path):
        text = "\n".join(self._row(i, 0, 0) for i in range(3)) + "\n"
        s = parse_stream(self._write(tmp_path, text), "co_ethylene")
        assert s.n_rows == 3
        assert s.sensors.shape == (3, 16)

    def test_header_line_skipped(self, tmp_path):
        text = "time co eth " + " ".join(f"s{i}" for i in range(16)) + "\n"
        text += self._row(0, 1, 2) + "\n"
        s = parse_stream(self._write(tmp_path, text), "co_ethylene")
        assert s.n_rows == 1
        np.testing.assert_array_equal(s.conc[0], [1.0, 2.0])

    def test_short_row_names_line(self, tmp_path):
        good = self._row(0, 0, 0)
        bad = " ".join(["1", "0", "0"] + ["1.0"] * 15)  # 18 columns
        path = self._write(tmp_path, good + "\n" + bad + "\n")
        with pytest.raises(ParseError, match="line 2"):
            parse_stream(path, "co_ethylene")

    def test_non_numeric_field_names_line(self, tmp_path):
        good = self._row(0, 0, 0)
        bad = self._row(1, 0, 0).replace("1.0", "oops", 1)
        path = self._write(tmp_path, good + "\n" + bad + "\n")
        with pytest.raises(ParseError, match="line 2"):
            parse_stream(path, "co_ethylene")

    def test_empty_file(self, tmp_path):
        with pytest.raises(ParseError):
            parse_stream(self._write(tmp_path, ""), "co_ethylene")

    def test_unknown_group(self, tmp_path):
        path = self._write(tmp_path, self._row(0, 0, 0) + "\n")
        with pytest.raises(DomainError):
            parse_stream(path, "argon")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            parse_stream(tmp_path / "nope.txt", "co_ethylene")


class TestDownsample:
    def test_keeps_every_twentieth_row(self):
        s = _stream([(0, 0)] * 100)
        out = downsample(s, 20)
        assert out.n_rows == 5
        np.testing.assert_array_equal(out.time, [0, 20, 40, 60, 80])

    def test_factor_one_is_identity(self):
        s = _stream([(0, 0), (1, 0), (1, 1)])
        out = downsample(s, 1)
        np.testing.assert_array_equal(out.conc, s.conc)

    def test_published_row_count_arithmetic(self):
        # 8,387,665 rows at factor 20 keep indices 0, 20, ... -> 419,384 rows
        assert len(range(0, 8_387_665, 20)) == 419_384

    def test_composition_of_factors(self):
        s = _stream([(i % 3, 0) for i in range(60)])
        once = downsample(s, 6)
        twice = downsample(downsample(s, 2), 3)
        np.testing.assert_array_equal(once.time, twice.time)
        np.testing.assert_array_equal(once.conc, twice.conc)

    def test_zero_factor_rejected(self):
        with pytest.raises(DomainError):
            downsample(_stream([(0, 0)]), 0)


class TestBaselineCorrect:
    def test_subtracts_air_mean(self):
        sensors = np.ones((4, 16))
        sensors[:2, 3] = 10.0  # air mean on channel 3 is 10
        sensors[2:, 3] = 14.5
        s = _stream([(0, 0), (0, 0), (5, 0), (5, 0)], sensors)
        out = baseline_correct(s)
        assert out.sensors[2, 3] == pytest.approx(4.5)
        assert out.sensors[3, 3] == pytest.approx(4.5)

    def test_all_air_stream_corrects_to_zero(self, rng):
        sensors = 10.0 + rng.normal(size=(50, 16)) * 0.01
        s = _stream([(0, 0)] * 50, sensors)
        out = baseline_correct(s)
        np.testing.assert_allclose(out.sensors.mean(axis=0), 0.0, atol=1e-12)
        assert np.abs(out.sensors).max() < 0.1

    def test_second_exposure_uses_second_air_phase(self):
        # air(base 1) -> gas -> air(base 5) -> gas
        sensors = np.concatenate([
            np.full((3, 16), 1.0), np.full((2, 16), 7.0),
            np.full((3, 16), 5.0), np.full((2, 16), 7.0),
        ])
        conc = [(0, 0)] * 3 + [(2, 0)] * 2 + [(0, 0)] * 3 + [(2, 0)] * 2
        out = baseline_correct(_stream(conc, sensors))
        np.testing.assert_allclose(out.sensors[3:5], 6.0)  # 7 - 1
        np.testing.assert_allclose(out.sensors[8:10], 2.0)  # 7 - 5

    def test_leading_exposure_backfills_first_air_mean(self):
        sensors = np.concatenate([np.full((2, 16), 9.0), np.full((3, 16), 4.0)])
        conc = [(1, 0)] * 2 + [(0, 0)] * 3
        out = baseline_correct(_stream(conc, sensors))
        np.testing.assert_allclose(out.sensors[:2], 5.0)  # 9 - 4

    def test_no_air_anywhere_is_an_error(self):
        with pytest.raises(DomainError):
            baseline_correct(_stream([(1, 0), (1, 1)]))


class TestSegment:
    def test_schedule_rule_application(self):
        conc = [(0, 0)] * 100 + [(5, 0)] * 200 + [(5, 10)] * 150 + [(0, 0)] * 50
        segs = segment(_stream(conc))
        assert [s.n_nodes for s in segs] == [200, 150]
        np.testing.assert_array_equal(segs[0].targets_ppm, [5, 0])
        np.testing.assert_array_equal(segs[1].targets_ppm, [5, 10])
        assert segs[0].composition == "A" and segs[1].composition == "A+B"

    def test_constant_nonzero_schedule_single_segment(self):
        segs = segment(_stream([(3, 1)] * 40))
        assert len(segs) == 1 and segs[0].n_nodes == 40

    def test_never_emits_air(self):
        conc = [(0, 0)] * 5 + [(1, 0)] * 5 + [(0, 0)] * 5 + [(0, 2)] * 5
        for seg in segment(_stream(conc)):
            assert seg.targets_ppm.max() > 0

    def test_setpoints_constant_within_segment(self):
        rng = np.random.default_rng(0)
        conc = [(float(rng.integers(0, 3)), float(rng.integers(0, 2))) for _ in range(200)]
        s = _stream(conc)
        for seg in segment(s):
            block = s.conc[seg.start:seg.end]
            assert (block == block[0]).all()

    def test_all_air_gives_empty_list(self):
        assert segment(_stream([(0, 0)] * 10)) == []


class TestNormalizeTargets:
    def _segments(self):
        return segment(_stream([(0, 0)] * 2 + [(20, 0)] * 3 + [(10, 20)] * 3))

    def test_maximum_maps_to_one(self):
        graphs = normalize_targets(self._segments(), [20.0, 20.0])
        np.testing.assert_allclose(graphs[0].targets, [1.0, 0.0])

    def test_half_maximum_maps_to_half(self):
        graphs = normalize_targets(self._segments(), [20.0, 20.0])
        np.testing.assert_allclose(graphs[1].targets, [0.5, 1.0])

    def test_zero_stays_zero(self):
        graphs = normalize_targets(self._segments(), [20.0, 20.0])
        assert graphs[0].targets[1] == 0.0

    def test_zero_maximum_rejected(self):
        with pytest.raises(DomainError):
            normalize_targets(self._segments(), [20.0, 0.0])

    def test_maxima_computed_over_corpus(self):
        np.testing.assert_array_equal(target_maxima(self._segments()), [20.0, 20.0])


def _labeled_graphs(class_sizes):
    """Minimal graphs matching {(group, composition): count}."""
    graphs = []
    for (group, comp), count in class_sizes.items():
        for _ in range(count):
            ppm = {"A": [100.0, 0.0], "B": [0.0, 10.0], "A+B": [100.0, 10.0]}[comp]
            graphs.append(SensorGraph(
                features=np.zeros((2, 16)),
                targets=np.array(ppm) / [533.33, 20.0],
                targets_ppm=np.array(ppm),
                composition=comp,
                group=group,
                meta={},
            ).validate())
    return graphs


TABLE_CLASS_SIZES = {
    ("co_ethylene", "A"): 71,       # pure CO
    ("co_ethylene", "B"): 111,      # pure ethylene
    ("co_ethylene", "A+B"): 100,
    ("methane_ethylene", "A"): 76,  # pure methane
    ("methane_ethylene", "B"): 89,  # pure ethylene
    ("methane_ethylene", "A+B"): 86,
}


class TestStratifiedSplit:
    def test_published_class_counts_at_ratio_016(self):
        graphs = _labeled_graphs(TABLE_CLASS_SIZES)
        assert len(graphs) == 533
        split = stratified_split(graphs, 0.16, seed=1)
        assert len(split.test_idx) == 88
        per_class = {}
        for i in split.test_idx:
            key = (graphs[i].group, graphs[i].composition)
            per_class[key] = per_class.get(key, 0) + 1
        assert per_class == {
            ("co_ethylene", "A"): 12,
            ("co_ethylene", "B"): 18,
            ("co_ethylene", "A+B"): 16,
            ("methane_ethylene", "A"): 13,
            ("methane_ethylene", "B"): 15,
            ("methane_ethylene", "A+B"): 14,
        }

    def test_pure_co_class_of_71_gives_12(self):
        graphs = _labeled_graphs({("co_ethylene", "A"): 71, ("co_ethylene", "B"): 10})
        split = stratified_split(graphs, 0.16, seed=0)
        n_a = sum(1 for i in split.test_idx if graphs[i].composition == "A")
        assert n_a == 12

    def test_same_seed_same_split(self):
        graphs = _labeled_graphs(TABLE_CLASS_SIZES)
        a = stratified_split(graphs, 0.16, seed=9)
        b = stratified_split(graphs, 0.16, seed=9)
        assert a.test_idx == b.test_idx and a.trainval_idx == b.trainval_idx

    def test_different_seed_different_split(self):
        graphs = _labeled_graphs(TABLE_CLASS_SIZES)
        a = stratified_split(graphs, 0.16, seed=1)
        b = stratified_split(graphs, 0.16, seed=2)
        assert a.test_idx != b.test_idx

    def test_tiny_class_rejected_by_name(self):
        graphs = _labeled_graphs({("co_ethylene", "A"): 5, ("co_ethylene", "B"): 1})
        with pytest.raises(DomainError, match="B"):
            stratified_split(graphs, 0.16, seed=0)

    def test_disjoint_and_complete(self):
        graphs = _labeled_graphs({("co_ethylene", "A"): 9, ("co_ethylene", "B"): 7})
        split = stratified_split(graphs, 0.25, seed=3)
        assert set(split.test_idx) | set(split.trainval_idx) == set(range(16))
        assert not set(split.test_idx) & set(split.trainval_idx)


class TestKfold:
    def test_table_trainval_gives_five_equal_folds(self):
        graphs = _labeled_graphs(TABLE_CLASS_SIZES)
        split = stratified_split(graphs, 0.16, seed=1)
        assert len(split.trainval_idx) == 445
        folds = kfold(graphs, split.trainval_idx, k=5, seed=1)
        assert sorted(len(f) for f in folds) == [89] * 5

    def test_union_is_trainval_and_pairwise_disjoint(self):
        graphs = _labeled_graphs(TABLE_CLASS_SIZES)
        split = stratified_split(graphs, 0.16, seed=4)
        folds = kfold(graphs, split.trainval_idx, k=5, seed=4)
        pooled = [i for f in folds for i in f]
        assert sorted(pooled) == sorted(split.trainval_idx)
        assert len(pooled) == len(set(pooled))

    def test_perfect_stratification_two_classes(self):
        graphs = _labeled_graphs({("co_ethylene", "A"): 2, ("co_ethylene", "B"): 2})
        folds = kfold(graphs, list(range(4)), k=2, seed=0)
        for fold in folds:
            comps = {graphs[i].composition for i in fold}
            assert comps == {"A", "B"}

    def test_degraded_stratification_warns(self):
        graphs = _labeled_graphs({("co_ethylene", "A"): 2, ("co_ethylene", "B"): 8})
        with pytest.warns(UserWarning, match="best effort"):
            kfold(graphs, list(range(10)), k=5, seed=0)

    def test_k_larger_than_samples_rejected(self):
        graphs = _labeled_graphs({("co_ethylene", "A"): 3})
        with pytest.raises(DomainError):
            kfold(graphs, list(range(3)), k=5, seed=0)

    def test_deterministic(self):
        graphs = _labeled_graphs(TABLE_CLASS_SIZES)
        split = stratified_split(graphs, 0.16, seed=2)
        a = kfold(graphs, split.trainval_idx, k=5, seed=7)
        b = kfold(graphs, split.trainval_idx, k=5, seed=7)
        assert a == b


class TestSynthStream:
    def test_plateau_reaches_base_plus_sensitivity_times_conc(self):
        params = SensorParams.from_seed(11)
        s = synth_stream([(0.0, 0.0, 5.0), (400.0, 0.0, 300.0)], noise=0.0,
                         sample_rate=10.0, seed=11, params=params)
        plateau = s.sensors[-1]
        expected = params.base + params.sens[:, 0] * 400.0
        np.testing.assert_allclose(plateau, expected, rtol=1e-2)

    def test_zero_concentration_reads_baseline(self):
        params = SensorParams.from_seed(2)
        s = synth_stream([(0.0, 0.0, 3.0)], noise=0.0, sample_rate=10.0,
                         seed=2, params=params)
        np.testing.assert_allclose(s.sensors, np.tile(params.base, (30, 1)))

    def test_same_seed_identical_stream(self):
        sched = [(0.0, 0.0, 2.0), (100.0, 5.0, 4.0)]
        a = synth_stream(sched, noise=0.3, seed=5)
        b = synth_stream(sched, noise=0.3, seed=5)
        assert np.array_equal(a.sensors, b.sensors)

    def test_setpoint_columns_are_exact(self):
        s = synth_stream([(0.0, 0.0, 1.0), (123.4, 5.6, 2.0)], noise=1.0,
                         sample_rate=10.0, seed=0)
        np.testing.assert_array_equal(np.unique(s.conc[:, 0]), [0.0, 123.4])
        np.testing.assert_array_equal(np.unique(s.conc[:, 1]), [0.0, 5.6])

    def test_bad_duration_rejected(self):
        with pytest.raises(DomainError):
            synth_stream([(0.0, 0.0, 0.0)])


class TestPipeline:
    def test_recovered_boundaries_match_schedule_exactly(self):
        # phase rows are multiples of the decimation factor, so segment
        # lengths after the pipeline equal duration * effective rate
        schedule = make_schedule(n_segments=12, seed=3)
        stream = synth_stream(schedule, sample_rate=20.0, noise=0.05, seed=3)
        graphs, split, prov = run_pipeline([stream], downsample_factor=4,
                                           test_ratio=0.25, k=2, seed=3)
        exposures = [(ca, cb, dur) for ca, cb, dur in schedule if ca > 0 or cb > 0]
        assert len(graphs) == len(exposures) == 12
        for g, (ca, cb, dur) in zip(graphs, exposures):
            assert g.n_nodes == int(dur * 5)  # 20 Hz / 4 = 5 Hz
            np.testing.assert_array_equal(g.targets_ppm, [ca, cb])

    def test_provenance_counts(self):
        schedule = make_schedule(n_segments=9, seed=1)
        stream = synth_stream(schedule, sample_rate=20.0, noise=0.0, seed=1)
        graphs, split, prov = run_pipeline([stream], downsample_factor=4,
                                           test_ratio=0.25, k=2, seed=1)
        assert prov["graphs"] == len(graphs) == 9
        assert prov["stages"][0]["rows_parsed"] == stream.n_rows
        assert prov["test"] + prov["trainval"] == 9
        total = sum(c["total"] for c in prov["per_class"].values())
        assert total == 9

    def test_dataset_round_trip(self, tmp_path):
        schedule = make_schedule(n_segments=9, seed=2)
        stream = synth_stream(schedule, sample_rate=20.0, noise=0.1, seed=2)
        graphs, split, prov = run_pipeline([stream], downsample_factor=4,
                                           test_ratio=0.25, k=2, seed=2)
        save_dataset(graphs, split, tmp_path / "ds", prov["max_per_gas"], prov)
        loaded, split2, maxima = load_dataset(tmp_path / "ds")
        assert len(loaded) == len(graphs)
        assert split2.test_idx == split.test_idx
        assert split2.folds == split.folds
        for a, b in zip(graphs, loaded):
            np.testing.assert_array_equal(a.features, b.features)
            np.testing.assert_array_equal(a.targets, b.targets)
            assert a.composition == b.composition

    def test_write_stream_round_trip(self, tmp_path):
        stream = synth_stream([(0.0, 0.0, 1.0), (50.0, 5.0, 2.0)],
                              sample_rate=10.0, noise=0.2, seed=4)
        path = write_stream(stream, tmp_path / "rec.txt")
        parsed = parse_stream(path, "co_ethylene")
        assert parsed.n_rows == stream.n_rows
        np.testing.assert_allclose(parsed.sensors, stream.sensors, atol=1e-6)

    def test_split_validation_catches_overlap(self):
        bad = DatasetSplit(test_idx=[0, 1], trainval_idx=[1, 2], seed=0)
        with pytest.raises(DomainError):
            bad.validate(3)
