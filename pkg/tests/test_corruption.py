import numpy as np
import pytest

from ardn.corruption import (
    GAUSSIAN,
    POISSON,
    NoiseSpec,
    corrupt,
    gaussian_corrupt,
    poisson_corrupt,
    sample_level,
)

N = 1_000_000


def test_sigma_zero_is_bitwise_copy(rs):
    clean = rs.uniform(0, 1, (32, 32))
    out = gaussian_corrupt(clean, 0.0, 3)
    assert out.tobytes() == clean.tobytes() and out is not clean


@pytest.mark.parametrize("family,level", [(GAUSSIAN, 25.0), (POISSON, 4.0)])
def test_deterministic(rs, family, level):
    clean = rs.uniform(0, 1, (16, 16))
    a, b = corrupt(clean, family, level, 77), corrupt(clean, family, level, 77)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != corrupt(clean, family, level, 78).tobytes()


def test_gaussian_statistics():
    clean = np.full(N, 0.5)
    noise = gaussian_corrupt(clean, 25.0, 2024) - clean
    sigma = 25 / 255
    assert abs(noise.std() / sigma - 1) < 0.005
    assert abs(noise.mean()) < 3 * sigma / np.sqrt(N)


def test_gaussian_preserves_dtype():
    assert gaussian_corrupt(np.zeros((4, 4), np.float32), 10, 1).dtype == np.float32


def test_poisson_zero_stays_zero():
    out = poisson_corrupt(np.zeros(1000), 4.0, 5)
    assert not out.any()


def test_poisson_statistics():
    out = poisson_corrupt(np.full(N, 0.5), 4.0, 99)
    assert abs(out.mean() / 0.5 - 1) < 0.01
    assert abs(out.var() / 0.125 - 1) < 0.02
    # values lie on the lattice k / peak
    np.testing.assert_array_equal(out * 4, np.rint(out * 4))


@pytest.mark.parametrize("family,level", [(GAUSSIAN, 50.0), (POISSON, 2.0)])
def test_streams_for_different_seeds_decorrelated(family, level):
    clean = np.full(100_000, 0.5)
    a = corrupt(clean, family, level, 1) - clean
    b = corrupt(clean, family, level, 2) - clean
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_gaussian_adjacent_pixels_uncorrelated():
    noise = gaussian_corrupt(np.zeros(200_001), 30.0, 8)
    assert abs(np.corrcoef(noise[:-1], noise[1:])[0, 1]) < 0.01


def test_fixed_level():
    spec = NoiseSpec(GAUSSIAN, level=30)
    assert {sample_level(spec, i, 4) for i in range(50)} == {30.0}


def test_blind_level_deterministic():
    spec = NoiseSpec(GAUSSIAN, blind=(0, 75))
    assert sample_level(spec, 17, 3) == sample_level(spec, 17, 3)
    assert sample_level(spec, 17, 3) != sample_level(spec, 18, 3)


def test_blind_level_uniform():
    spec = NoiseSpec(POISSON, blind=(1, 10))
    draws = np.array([sample_level(spec, i, 12) for i in range(100_000)])
    assert abs(draws.mean() - 5.5) < 0.05
    assert draws.min() >= 1 and draws.max() <= 10


def test_spec_validation_and_round_trip():
    for bad in (dict(family="speckle", level=1), dict(family=GAUSSIAN),
                dict(family=GAUSSIAN, level=10, blind=(0, 20)), dict(family=GAUSSIAN, level=-1),
                dict(family=POISSON, level=0), dict(family=GAUSSIAN, blind=(0, 80)),
                dict(family=POISSON, blind=(0.5, 4))):
        with pytest.raises(ValueError):
            NoiseSpec(**bad)
    for spec in (NoiseSpec(GAUSSIAN, level=25), NoiseSpec(POISSON, blind=(1, 10))):
        assert NoiseSpec.from_dict(spec.to_dict()) == spec
    assert NoiseSpec(POISSON, level=4).describe() == "poisson peak=4"
