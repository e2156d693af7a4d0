import numpy as np
from scipy import stats

from wrcm.rng import generator, keyed_uniform, pair_uniform, pair_uniforms, replica_seed, to_open_unit


def test_pair_uniform_is_symmetric_and_repeatable():
    assert pair_uniform(7, 3, 4, 9) == pair_uniform(7, 3, 9, 4)
    assert pair_uniform(7, 3, 4, 9) == pair_uniform(7, 3, 4, 9)
    assert pair_uniform(7, 3, 4, 9) != pair_uniform(8, 3, 4, 9)
    assert pair_uniform(7, 3, 4, 9) != pair_uniform(7, 4, 4, 9)


def test_open_interval_endpoints():
    assert 0 < to_open_unit(np.uint64(0)) < 1
    assert 0 < to_open_unit(np.uint64(2**64 - 1)) < 1


def test_pair_uniforms_are_uniform_and_uncorrelated():
    i = np.arange(50_000, dtype=np.int64)
    u = pair_uniforms(np.uint64(11), 3, i, i + 1)
    assert stats.kstest(u, "uniform").pvalue > 0.001
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 4 / np.sqrt(u.size)


def test_keyed_stream_uniform():
    u = np.array([keyed_uniform(np.uint64(5), k) for k in range(20_000)])
    assert stats.kstest(u, "uniform").pvalue > 0.001


def test_generator_tags_separate_streams():
    a = generator(1, 2).random(5)
    assert np.array_equal(a, generator(1, 2).random(5))
    assert not np.array_equal(a, generator(1, 3).random(5))


def test_replica_seeds_distinct():
    seeds = {replica_seed(3, k) for k in range(10_000)}
    assert len(seeds) == 10_000
    assert all(0 <= s < 2**63 for s in seeds)
