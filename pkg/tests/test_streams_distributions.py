import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fbquantile.distributions import SourceDistribution, cdf, density, quantile, sample
from fbquantile.streams import CHANNEL, OBSERVATIONS, StreamKey, step_blocks, uniform_at

DISTS = [
    SourceDistribution.uniform(0, 1),
    SourceDistribution.uniform(-2, 3),
    SourceDistribution.gaussian(0, 1),
    SourceDistribution.gaussian(1.5, 0.3),
    SourceDistribution.exponential(1),
    SourceDistribution.exponential(2),
]


class TestStreams:
    def test_uniform_at_matches_sequential(self):
        key = StreamKey(7, 3, OBSERVATIONS)
        seq = key.generator().random(50)
        for pos in (0, 1, 3, 4, 5, 17, 49):
            assert uniform_at(key, pos) == seq[pos]

    def test_blocks_invariant_to_chunking(self):
        key = StreamKey(11, 0, CHANNEL)
        full = key.generator().random((700, 13))
        for chunk in (1, 7, 256, 1000):
            got = np.concatenate([b for _, b in step_blocks(key, 13, 700, chunk)])
            assert np.array_equal(got, full)

    def test_block_steps(self):
        firsts = [s for s, _ in step_blocks(StreamKey(1), 3, 10, chunk=4)]
        assert firsts == [1, 5, 9]

    def test_distinct_keys_differ(self):
        a = StreamKey(5, 0).generator().random(10_000)
        b = StreamKey(5, 1).generator().random(10_000)
        c = StreamKey(5, 0, CHANNEL).generator().random(10_000)
        assert not np.intersect1d(a, b).size and not np.intersect1d(a, c).size
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.05

    def test_reproducible_first_draw(self):
        assert StreamKey(42).generator().random() == StreamKey(42).generator().random()


class TestDistributions:
    def test_cdf_examples(self):
        assert cdf(SourceDistribution.uniform(), 0.3) == 0.3
        assert cdf(SourceDistribution.gaussian(), 0.0) == 0.5
        assert cdf(SourceDistribution.exponential(1), 1.0) == pytest.approx(1 - math.exp(-1))

    def test_quantile_examples(self):
        assert quantile(SourceDistribution.uniform(), 0.3) == 0.3
        assert quantile(SourceDistribution.gaussian(), 0.5) == 0.0
        assert quantile(SourceDistribution.exponential(2), 0.5) == pytest.approx(math.log(2) / 2)

    def test_density_examples(self):
        assert density(SourceDistribution.uniform(), 0.5) == 1.0
        assert density(SourceDistribution.gaussian(), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
        assert density(SourceDistribution.exponential(1), 0.0) == 1.0

    @pytest.mark.parametrize("d", DISTS, ids=str)
    def test_round_trip(self, d):
        for a in np.linspace(0.01, 0.99, 41):
            assert abs(d.cdf(d.quantile(a)) - a) <= 1e-12

    @pytest.mark.parametrize("d", DISTS, ids=str)
    def test_density_is_cdf_derivative(self, d):
        h = 1e-5
        for a in np.linspace(0.05, 0.95, 19):
            x = d.quantile(a)
            fd = (d.cdf(x + h) - d.cdf(x - h)) / (2 * h)
            assert fd == pytest.approx(d.density(x), abs=1e-6)

    def test_quantile_rejects_boundary(self):
        for a in (0, 1, 1.2):
            with pytest.raises(ValueError):
                SourceDistribution.gaussian().quantile(a)

    @pytest.mark.parametrize("d", DISTS, ids=str)
    def test_ks_distance(self, d):
        draws = sample(d, StreamKey(2024).generator(), 100_000)
        ks = stats.kstest(draws, lambda x: d.cdf(x)).statistic
        assert ks < 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            SourceDistribution.uniform(1, 1)
        with pytest.raises(ValueError):
            SourceDistribution.gaussian(0, 0)
        with pytest.raises(ValueError):
            SourceDistribution.exponential(-1)
        with pytest.raises(ValueError):
            SourceDistribution("cauchy", (0, 1))

    def test_parse_and_dict(self):
        d = SourceDistribution.parse("gaussian:1,2")
        assert d == SourceDistribution.gaussian(1, 2)
        assert SourceDistribution.parse("uniform") == SourceDistribution.uniform()
        assert SourceDistribution.from_dict(d.to_dict()) == d
        assert SourceDistribution.from_dict({"kind": "uniform", "a": 0.0, "b": 1.0}) == SourceDistribution.uniform()

    @given(st.floats(-50, 50))
    def test_cdf_monotone_and_bounded(self, x):
        for d in DISTS:
            lo, hi = d.cdf(x), d.cdf(x + 0.01)
            assert 0.0 <= lo <= hi <= 1.0
