import math

import numpy as np
import pytest

from drkit.rng import GOLDEN, Rng, mix64


def _splitmix_reference(seed: int, n: int):
    """Written from the documented algorithm, independently of the module."""
    m = (1 << 64) - 1

    def mix(z):
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & m
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & m
        return z ^ (z >> 31)

    key = mix(seed ^ 0x6A09E667F3BCC909)
    return [mix((key + k * 0x9E3779B97F4A7C15) & m) for k in range(1, n + 1)]


@pytest.mark.parametrize("seed", [0, 1, 2**63 + 5, 123456789])
def test_stream_matches_documented_algorithm(seed):
    r = Rng(seed)
    assert [r.next_u64() for _ in range(20)] == _splitmix_reference(seed, 20)
    assert Rng(seed).u64_array(20).tolist() == _splitmix_reference(seed, 20)


def test_known_mix_value():
    # standard SplitMix64 output for state 0 (first draw of seed 0)
    assert mix64(GOLDEN) == 0xE220A8397B1DCDAF


def test_same_seed_same_sequence():
    a, b = Rng(7), Rng(7)
    assert [a.random() for _ in range(50)] == [b.random() for _ in range(50)]
    assert np.array_equal(Rng(7).normal_array(0, 1, 33), Rng(7).normal_array(0, 1, 33))


def test_scalar_and_array_draws_agree():
    a, b = Rng(3), Rng(3)
    assert [a.random() for _ in range(10)] == b.random_array(10).tolist()
    a, b = Rng(3), Rng(3)
    assert [a.normal(1.0, 2.0) for _ in range(10)] == b.normal_array(1.0, 2.0, 10).tolist()


def test_uniform_mean_and_range():
    x = Rng(11).uniform_array(0.0, 1.0, 100_000)
    assert abs(x.mean() - 0.5) < 0.01
    assert x.min() >= 0.0 and x.max() < 1.0
    r = Rng(1)
    vals = [r.uniform(-2.0, 3.0) for _ in range(1000)]
    assert min(vals) >= -2.0 and max(vals) < 3.0


def test_uniform_requires_lo_below_hi():
    with pytest.raises(ValueError):
        Rng(0).uniform(1.0, 1.0)


def test_normal_moments():
    z = Rng(5).normal_array(2.0, 3.0, 100_000)
    assert abs(z.mean() - 2.0) < 0.05
    assert abs(z.std() - 3.0) < 0.05


def test_sigma_zero_returns_mu_exactly():
    assert Rng(0).normal(1.25, 0.0) == 1.25
    assert np.all(Rng(0).normal_array(-0.5, 0.0, 4) == -0.5)
    with pytest.raises(ValueError):
        Rng(0).normal(0.0, -1.0)


def test_children_are_independent_and_do_not_consume():
    parent = Rng(9)
    c1 = parent.child("a", 1)
    c2 = parent.child("a", 2)
    assert parent.counter == 0
    assert c1.random_array(5).tolist() != c2.random_array(5).tolist()
    assert Rng(9).child("a", 1).random_array(5).tolist() == Rng(9).child("a", 1).random_array(5).tolist()
    with pytest.raises(TypeError):
        parent.child(1.5)


def test_integers_and_coin():
    v = Rng(4).integers(7, 10_000)
    assert v.min() == 0 and v.max() == 6
    assert np.all(np.abs(np.bincount(v) / 10_000 - 1 / 7) < 0.02)
    flips = [Rng(4).child(i).coin(0.3) for i in range(5000)]
    assert abs(np.mean(flips) - 0.3) < 0.03


def test_box_muller_transform():
    r = Rng(8)
    u1, u2 = r.random(), r.random()
    expected = math.sqrt(-2 * math.log(1 - u1)) * math.cos(2 * math.pi * u2)
    assert Rng(8).normal() == expected
