import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cryptoeeg import data


def naive_pearson(x, y):
    """Two-pass textbook formula with exactly rounded sums."""
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / (math.sqrt(sxx) * math.sqrt(syy))


class TestPearson:
    def test_exact_cases(self):
        assert data.pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-15)
        assert data.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)

    def test_against_naive_oracle(self):
        g = np.random.default_rng(0)
        for _ in range(1000):
            n = int(g.integers(2, 60))
            x, y = g.normal(size=n), g.normal(size=n) + g.uniform(-1, 1) * np.arange(n)
            assert abs(data.pearson(x, y) - naive_pearson(list(x), list(y))) <= 1e-12

    def test_constant_is_undefined(self):
        with pytest.raises(data.UndefinedCorrelationError):
            data.pearson([2, 2, 2], [1, 2, 3])

    def test_length_checks(self):
        with pytest.raises(ValueError):
            data.pearson([1], [1])
        with pytest.raises(ValueError):
            data.pearson([1, 2], [1, 2, 3])


@settings(max_examples=200)
@given(a=st.floats(0.01, 100) | st.floats(-100, -0.01), b=st.floats(-100, 100), seed=st.integers(0, 2**32 - 1))
def test_pearson_affine_invariance(a, b, seed):
    g = np.random.default_rng(seed)
    x, y = g.normal(size=30), g.normal(size=30)
    r = data.pearson(x, y)
    assert abs(r) <= 1
    assert abs(data.pearson(a * x + b, y) - math.copysign(1, a) * r) <= 1e-12


class TestSelectChannels:
    def make(self, n=400, seed=0):
        g = np.random.default_rng(seed)
        y = g.integers(1, 5, n)
        X = g.normal(size=(n, 6))
        X[:, 0] = y
        X[:, 3] = y + g.normal(0, 2, n)
        return data.Dataset(X, y, [f"c{i}" for i in range(6)])

    def test_label_channel_first(self):
        ds = self.make()
        reduced, ranking = data.select_channels(ds, 2)
        assert ranking.order[:2] == [0, 3]
        assert reduced.channel_names == ["c0", "c3"]
        assert sorted(ranking.order) == list(range(6))

    def test_full_selection_is_identity(self):
        ds = self.make()
        reduced, _ = data.select_channels(ds, 6)
        assert np.array_equal(reduced.features, ds.features)
        assert reduced.channel_names == ds.channel_names

    def test_invariant_under_channel_rescaling(self):
        ds = self.make(seed=3)
        scale = np.array([3.0, -0.5, 10.0, 0.01, -7.0, 2.0])
        scaled = data.Dataset(ds.features * scale + 5.0, ds.labels, ds.channel_names)
        assert data.rank_channels(ds).order == data.rank_channels(scaled).order

    def test_constant_channel_ranked_last(self):
        ds = self.make()
        ds.features[:, 1] = 4.2
        ranking = data.rank_channels(ds)
        assert ranking.order[-1] == 1 and ranking.correlations[1] is None

    def test_full_size_shape(self):
        ds = data.synthetic_blobs(2000, 44, 4, n_noise=20, trend=0.1, seed=0)
        reduced, ranking = data.select_channels(ds, 44)
        assert reduced.n_channels == 44
        assert all(abs(ranking.correlations[j]) <= 1 + 1e-12 for j in range(64))

    def test_k_out_of_range(self):
        ds = self.make()
        for k in (0, 7):
            with pytest.raises(ValueError):
                data.select_channels(ds, k)


class TestNormalize:
    def test_min_max(self):
        ds = data.Dataset(np.array([[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]]), np.array([1, 2, 1]), ["a", "b"])
        out = data.normalize(ds)
        assert out.features[:, 0].tolist() == [0.0, 0.5, 1.0]
        assert out.features[:, 1].tolist() == [0.5, 0.5, 0.5]

    def test_reapply_is_bit_exact_and_clamps(self):
        ds = data.synthetic_blobs(500, 8, 4, seed=1)
        out = data.normalize(ds)
        assert np.all((out.features >= 0) & (out.features <= 1))
        assert np.array_equal(out.normalization.apply(ds.features), out.features)
        far = out.normalization.apply(ds.features[:3] * 100)
        assert np.all((far >= 0) & (far <= 1))

    def test_stats_round_trip(self):
        st_ = data.fit_normalization(np.random.default_rng(0).normal(size=(20, 3)))
        back = data.Normalization.from_dict(st_.to_dict(["a", "b", "c"]))
        assert np.array_equal(back.mins, st_.mins) and np.array_equal(back.maxs, st_.maxs)


class TestSplit:
    def test_full_size_proportions(self):
        ds = data.synthetic_blobs(12800, 4, 4, seed=0)
        tr, te = data.split(ds, 0.8, seed=1)
        assert (len(tr), len(te)) == (10240, 2560)
        rows = np.vstack([tr.features, te.features])
        assert np.array_equal(np.sort(rows, axis=0), np.sort(ds.features, axis=0))
        assert len({r.tobytes() for r in rows}) == 12800
        assert tr.channel_names == ds.channel_names

    def test_deterministic(self):
        ds = data.synthetic_blobs(100, 3, 4, seed=0)
        a, _ = data.split(ds, 0.7, seed=5)
        b, _ = data.split(ds, 0.7, seed=5)
        assert np.array_equal(a.features, b.features)

    def test_empty_part(self):
        ds = data.synthetic_blobs(3, 2, 2, seed=0)
        with pytest.raises(ValueError):
            data.split(ds, 0.1)
        with pytest.raises(ValueError):
            data.split(ds, 1.0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = data.Dataset(np.array([[0.1, -2.0], [3.5, 1e-9], [7.0, 0.0]]), np.array([1, 4, 2]), ["Cz", "Oz"])
        data.write_csv(ds, tmp_path / "a.csv")
        back = data.load_csv(tmp_path / "a.csv")
        data.write_csv(back, tmp_path / "b.csv")
        again = data.load_csv(tmp_path / "b.csv")
        assert np.array_equal(again.features, ds.features) and again.labels.tolist() == [1, 4, 2]
        assert again.channel_names == ["Cz", "Oz"]

    @pytest.mark.parametrize("body,msg", [
        ("a,b,label\n1,2,1\n3,,2\n", "row 3: missing value"),
        ("a,b,label\n1,x,1\n", "row 2: non-numeric"),
        ("a,b,label\n1,2,0\n", "row 2: label"),
        ("a,b,label\n1,2\n", "row 2: expected 3"),
    ])
    def test_errors_name_the_row(self, tmp_path, body, msg):
        (tmp_path / "bad.csv").write_text(body)
        with pytest.raises(data.DataError, match=msg):
            data.load_csv(tmp_path / "bad.csv")

    def test_label_range(self, tmp_path):
        (tmp_path / "c.csv").write_text("a,label\n1,5\n")
        with pytest.raises(data.DataError, match="row 2"):
            data.load_csv(tmp_path / "c.csv", n_classes=4)

    def test_missing_label_column(self, tmp_path):
        (tmp_path / "c.csv").write_text("a,b\n1,2\n")
        with pytest.raises(data.DataError, match="label"):
            data.load_csv(tmp_path / "c.csv")

    @pytest.mark.slow
    def test_full_size_file(self, tmp_path):
        ds = data.synthetic_blobs(12800, 44, 4, n_noise=20, seed=0)
        data.write_csv(ds, tmp_path / "big.csv")
        back = data.load_csv(tmp_path / "big.csv")
        assert back.n_channels == 64 and len(back) == 12800
