import numpy as np
import pytest

from idgeom.core import RngSpec
from idgeom.errors import InvalidArgument
from idgeom.estimators import mle_estimate, twonn_estimate
from idgeom.spectral import singular_spectrum
from idgeom.synth import KINDS, native_sample, random_isometry, sample_manifold


def test_segment_is_rank_one():
    c = sample_manifold("segment", 1, 3, 100, rng=RngSpec(3))
    s = singular_spectrum(c, centered=True).sigma
    assert np.all(s[1:] <= 1e-9 * s[0])


@pytest.mark.parametrize("kind,d", [("segment", 1), ("cube", 3), ("sphere", 2),
                                    ("gaussian", 4), ("swiss_roll", 2)])
def test_shape_metadata_and_determinism(kind, d):
    a = sample_manifold(kind, d, 12, 50, noise=0.01, rng=RngSpec(8))
    b = sample_manifold(kind, d, 12, 50, noise=0.01, rng=RngSpec(8))
    c = sample_manifold(kind, d, 12, 50, noise=0.01, rng=RngSpec(9))
    assert a.data.shape == (50, 12)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    assert a.meta["d"] == d and a.meta["kind"] == kind


def test_cube_square_recovery():
    c = sample_manifold("cube", 2, 10, 2000, rng=RngSpec(4))
    assert 1.8 <= twonn_estimate(c, window=None).value <= 2.2
    assert 1.8 <= mle_estimate(c, window=None).value <= 2.2


def test_native_samples():
    gen = np.random.default_rng(0)
    s = native_sample("sphere", 3, 500, gen)
    assert np.max(np.abs(np.linalg.norm(s, axis=1) - 1)) <= 1e-12
    c = native_sample("cube", 4, 500, gen)
    assert c.min() >= 0 and c.max() <= 1


def test_isometry_preserves_distances():
    q = random_isometry(3, 9, np.random.default_rng(1))
    np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)


def test_noise_free_embedding_is_isometric():
    a = sample_manifold("cube", 2, 2, 30, rng=RngSpec(5))
    b = sample_manifold("cube", 2, 40, 30, rng=RngSpec(5))
    da = np.linalg.norm(a.data[:, None] - a.data[None], axis=-1)
    db = np.linalg.norm(b.data[:, None] - b.data[None], axis=-1)
    np.testing.assert_allclose(da, db, atol=1e-12)


def test_parameter_errors():
    for args in [("segment", 2, 5, 10), ("swiss_roll", 3, 5, 10), ("sphere", 3, 3, 10),
                 ("cube", 4, 3, 10), ("torus", 2, 5, 10), ("cube", 0, 5, 10)]:
        with pytest.raises(InvalidArgument):
            sample_manifold(*args)
    with pytest.raises(InvalidArgument):
        sample_manifold("cube", 2, 5, 10, noise=-1)
    assert set(KINDS) == {"segment", "cube", "sphere", "gaussian", "swiss_roll"}
