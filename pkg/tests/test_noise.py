import numpy as np
import pytest
from scipy import stats

from cfwd.noise import DOMAIN_DYNAMICS, DOMAIN_STICKY, NoiseStream, words_to_uniform


def test_same_key_same_stream():
    a = NoiseStream(42, 3).draw(10, 4, 3)
    b = NoiseStream(42, 3).draw(10, 4, 3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_chunking_does_not_change_variates():
    s = NoiseStream(7, 1)
    z1, u1 = s.draw(2, 3, 2)
    z2, u2 = s.draw(3, 3, 2)
    z, u = NoiseStream(7, 1).draw(5, 3, 2)
    assert np.array_equal(np.vstack((z1, z2)), z)
    assert np.array_equal(np.vstack((u1, u2)), u)
    assert s.step_counter == 5


def test_keys_separate_streams():
    base = NoiseStream(1, 0).normals(8)
    assert not np.array_equal(base, NoiseStream(1, 1).normals(8))
    assert not np.array_equal(base, NoiseStream(2, 0).normals(8))
    assert not np.array_equal(base, NoiseStream(1, 0, DOMAIN_STICKY).normals(8))
    assert np.array_equal(base, NoiseStream(1, 0, DOMAIN_DYNAMICS).normals(8))


def test_zero_mode():
    z, u = NoiseStream(5, zero=True).draw(4, 3, 2)
    assert not z.any() and not u.any()
    assert z.shape == (4, 3) and u.shape == (4, 2)


def test_uniform_map_stays_open():
    words = np.array([0, 2**64 - 1], dtype=np.uint64)
    u = words_to_uniform(words)
    assert 0.0 < u[0] < 1e-15 and 1.0 - 1e-15 < u[1] < 1.0


def test_variates_are_standard():
    z, u = NoiseStream(2024, 0).draw(20_000, 2, 1)
    assert stats.kstest(z.ravel(), "norm").pvalue > 1e-3
    assert stats.kstest(u.ravel(), "uniform").pvalue > 1e-3
    assert abs(np.corrcoef(z[:, 0], z[:, 1])[0, 1]) < 0.03


@pytest.mark.parametrize("kw", [{"seed": -1}, {"seed": 2**64}, {"seed": 0, "replica": 2**32}, {"seed": 0, "domain": -1}])
def test_key_ranges(kw):
    with pytest.raises(ValueError):
        NoiseStream(**kw)
