import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gapforge import datasets
from gapforge.datasets import Dataset, DatasetParseError, NoiseSchedule


class TestMog:
    def test_even_split_at_2500(self):
        d = datasets.make_mog(2500, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(np.bincount(d.labels), np.full(25, 100))
        assert d.points.shape == (2500, 2)

    @given(st.integers(25, 400))
    @settings(max_examples=30, deadline=None)
    def test_counts_differ_by_at_most_one(self, n):
        counts = np.bincount(datasets.make_mog(n, rng=np.random.default_rng(0)).labels, minlength=25)
        assert counts.sum() == n and counts.max() - counts.min() <= 1

    def test_grid_geometry(self):
        d = datasets.make_mog(25, 0.0)
        axis = np.linspace(-4, 4, 5)
        assert sorted(map(tuple, d.centers)) == sorted((x, y) for x in axis for y in axis)

    def test_zero_std_is_the_centers(self):
        d = datasets.make_mog(100, 0.0, rng=np.random.default_rng(1))
        np.testing.assert_array_equal(d.points, d.centers[d.labels])

    def test_large_sample_means(self):
        d = datasets.make_mog(100_000, 0.05, rng=np.random.default_rng(2))
        for k in range(25):
            assert np.all(np.abs(d.points[d.labels == k].mean(axis=0) - d.centers[k]) < 0.01)

    def test_seeded_reproducible(self):
        a = datasets.make_mog(300, rng=np.random.default_rng(7))
        b = datasets.make_mog(300, rng=np.random.default_rng(7))
        assert a.points.tobytes() == b.points.tobytes()

    def test_errors(self):
        with pytest.raises(ValueError):
            datasets.make_mog(24)
        with pytest.raises(ValueError):
            datasets.make_mog(100, -0.1)


class TestR15:
    def test_small_fixture(self, tmp_path):
        p = tmp_path / "r.txt"
        p.write_text("# header\n0.1 0.2 1\n0.3  0.4\t2\n\n0.5 0.6 1  # trailing\n")
        d = datasets.load_r15(p)
        np.testing.assert_array_equal(d.points, [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
        np.testing.assert_array_equal(d.labels, [0, 1, 0])
        np.testing.assert_allclose(d.centers, [[0.3, 0.4], [0.3, 0.4]], atol=1e-15)
        np.testing.assert_allclose(d.scales, [0.2, 0.0], atol=1e-15)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("# nothing\n\n")
        with pytest.raises(DatasetParseError):
            datasets.load_r15(p)

    def test_line_numbers_in_errors(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("0 0 1\n1 1 1\nfoo 1 1\n")
        with pytest.raises(DatasetParseError, match=":3:"):
            datasets.load_r15(p)
        p.write_text("0 0 1\n1 1\n")
        with pytest.raises(DatasetParseError, match=":2:"):
            datasets.load_r15(p)

    def test_label_range(self, tmp_path):
        p = tmp_path / "zero.txt"
        p.write_text("0 0 0\n")
        with pytest.raises(DatasetParseError, match="label"):
            datasets.load_r15(p)
        p.write_text("0 0 1\n1 1 3\n")  # label 2 missing
        with pytest.raises(DatasetParseError, match="label 2"):
            datasets.load_r15(p)

    def test_unusual_count_warns(self, tmp_path, caplog):
        p = tmp_path / "s.txt"
        p.write_text("0 0 1\n1 1 1\n")
        with caplog.at_level(logging.WARNING):
            datasets.load_r15(p)
        assert "expected 500 or 600" in caplog.text

    def test_round_trip_of_generated_set(self, tmp_path):
        d = datasets.make_r15_like(40, rng=np.random.default_rng(0))
        assert len(d) == 600 and len(np.unique(d.labels)) == 15
        assert "non-canonical" in d.name
        p = tmp_path / "r15.txt"
        p.write_text("".join(f"{float(x)!r} {float(y)!r} {lab + 1}\n" for (x, y), lab in zip(d.points, d.labels)))
        back = datasets.load_r15(p)
        np.testing.assert_array_equal(back.points, d.points)
        np.testing.assert_array_equal(back.labels, d.labels)
        np.testing.assert_allclose(back.centers, d.centers, atol=0.15)


class TestNormalize:
    def test_endpoints(self):
        out, _ = datasets.normalize_to_unit(Dataset([[-1, 3], [1, 5]]))
        np.testing.assert_array_equal(out.points, [[0, 0], [1, 1]])

    def test_unit_data_is_fixed(self):
        pts = np.random.default_rng(0).uniform(size=(50, 2))
        pts[0], pts[1] = [0, 0], [1, 1]
        out, _ = datasets.normalize_to_unit(Dataset(pts))
        np.testing.assert_allclose(out.points, pts, atol=1e-12)

    def test_mog_centers_become_unit_grid(self):
        d = datasets.make_mog(25, 0.0)
        out, tf = datasets.normalize_to_unit(d)
        axis = np.linspace(0, 1, 5)
        np.testing.assert_allclose(np.unique(out.centers[:, 0]), axis, atol=1e-15)
        np.testing.assert_allclose(np.unique(out.centers[:, 1]), axis, atol=1e-15)
        np.testing.assert_allclose(tf.apply(d.centers), out.centers)

    def test_scales_follow_span(self):
        d = datasets.make_mog(2500, 0.05, rng=np.random.default_rng(0))
        out, tf = datasets.normalize_to_unit(d)
        np.testing.assert_allclose(out.scales, 0.05 / tf.span.mean())

    @given(st.integers(2, 40), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_inverse_recovers_points(self, n, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(n, 2)) * rng.uniform(0.1, 100, size=2) + rng.uniform(-50, 50, size=2)
        out, tf = datasets.normalize_to_unit(Dataset(pts))
        assert out.points.min() >= 0 and out.points.max() <= 1
        np.testing.assert_allclose(tf.inverse(out.points), pts, atol=1e-9)

    def test_degenerate_axis(self):
        with pytest.raises(ValueError, match="axis 1"):
            datasets.normalize_to_unit(Dataset([[0, 1], [2, 1]]))
        with pytest.raises(ValueError):
            datasets.normalize_to_unit(Dataset([[0, 1]]))


class TestSplitAndBatch:
    def test_split_sizes_and_disjointness(self):
        pts = np.arange(1200, dtype=float).reshape(600, 2)
        train, val = datasets.train_val_split(Dataset(pts), 0.2, np.random.default_rng(0))
        assert (len(train), len(val)) == (480, 120)
        rows = {tuple(r) for r in train.points} | {tuple(r) for r in val.points}
        assert len(rows) == 600

    def test_epochs_are_fresh_permutations(self):
        pts = np.arange(100, dtype=float).reshape(50, 2)
        bs = datasets.BatchStream(pts, 10, np.random.default_rng(0))
        e1 = np.concatenate([next(bs) for _ in range(5)])
        e2 = np.concatenate([next(bs) for _ in range(5)])
        assert bs.epoch == 2
        assert not np.array_equal(e1, e2)
        key = lambda a: sorted(map(tuple, a))
        assert key(e1) == key(e2) == key(pts)

    def test_short_batch_dropped(self):
        pts = np.arange(46, dtype=float).reshape(23, 2)
        bs = datasets.BatchStream(pts, 5, np.random.default_rng(1))
        assert bs.batches_per_epoch == 4
        epoch = np.concatenate([next(bs) for _ in range(4)])
        assert len(epoch) == 20 and len({tuple(r) for r in epoch}) == 20
        assert {tuple(r) for r in epoch} <= {tuple(r) for r in pts}
        next(bs)
        assert bs.epoch == 2

    def test_split_and_batch(self):
        d = datasets.make_mog(100, rng=np.random.default_rng(0))
        stream, val = datasets.split_and_batch(d, 0.2, 16, np.random.default_rng(0))
        assert len(val) == 20 and next(stream).shape == (16, 2)
        with pytest.raises(ValueError):
            datasets.split_and_batch(d, 0.2, 81, np.random.default_rng(0))

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1e-6])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            datasets.train_val_split(datasets.make_mog(100), frac, np.random.default_rng(0))

    def test_csv_export(self, tmp_path):
        d = datasets.make_mog(25, 0.0)
        d.to_csv(tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "x,y,label" and len(lines) == 26
        x, y, lab = lines[1].split(",")
        assert (float(x), float(y), int(lab)) == (*d.points[0], 0)


class TestNoise:
    def test_examples(self):
        s = NoiseSchedule(0.1, 0.5)
        assert datasets.noise_sigma(s, 0, 1000) == 0.1
        assert datasets.noise_sigma(s, 500, 1000) == 0.0
        assert datasets.noise_sigma(s, 900, 1000) == 0.0
        assert abs(datasets.noise_sigma(s, 250, 1000) - 0.05) < 1e-15

    @given(st.floats(0, 1), st.floats(0.01, 1), st.integers(1, 5000))
    @settings(max_examples=60, deadline=None)
    def test_non_increasing(self, sigma0, frac, T):
        s = NoiseSchedule(sigma0, frac)
        vals = [datasets.noise_sigma(s, t, T) for t in range(0, T + 1, max(1, T // 50))]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert datasets.noise_sigma(s, T, T) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseSchedule(-0.1)
        with pytest.raises(ValueError):
            NoiseSchedule(0.1, 0.0)
        with pytest.raises(ValueError):
            datasets.noise_sigma(NoiseSchedule(), 11, 10)
