import numpy as np
import pytest

from sdtl import tensor as T
from sdtl.gradcheck import check_gradients
from sdtl.errors import ShapeError
from sdtl.structure import StructurePrior, sobel_edge, structure_features


def test_constant_image_has_no_edges():
    assert np.max(np.abs(sobel_edge(T.tensor(np.full((3, 8, 8), 0.4))).data)) < 1e-6


def test_vertical_step():
    # Hand convolution: the Sobel x-kernel's column weights (1, 2, 1) sum to 4,
    # so a unit step gives |Gx| = 4 on the two columns that straddle it.
    x = np.zeros((3, 8, 8))
    x[:, :, 4:] = 1.0
    e = sobel_edge(T.tensor(x, dtype=np.float64)).data[0]
    assert e.shape == (8, 8)
    np.testing.assert_allclose(e[:, 3], 4.0, rtol=1e-6)
    np.testing.assert_allclose(e[:, 4], 4.0, rtol=1e-6)
    interior = np.delete(e, [3, 4], axis=1)
    np.testing.assert_allclose(interior, 0.0, atol=1e-12)


def test_offset_invariance(rng):
    x = rng.uniform(0, 0.5, (3, 12, 12))
    a = sobel_edge(T.tensor(x, dtype=np.float64)).data
    b = sobel_edge(T.tensor(x + 0.3, dtype=np.float64)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_luma_weighting():
    # a step in blue only is scaled by the blue luma weight
    x = np.zeros((3, 4, 8))
    x[2, :, 4:] = 1.0
    e = sobel_edge(T.tensor(x, dtype=np.float64)).data[0]
    np.testing.assert_allclose(e[:, 3], 4 * 0.114, rtol=1e-9)


def test_prior_shapes_paper_size(rng):
    prior = StructurePrior(rng, 4)
    maps = structure_features(T.zeros((1, 1, 256, 256)), prior)
    assert maps.s1.shape == (1, 4, 128, 128)
    assert maps.s2.shape == (1, 4, 64, 64)


def test_zero_edge_zero_bias_gives_zero(rng):
    prior = StructurePrior(rng, 3)
    maps = prior(T.zeros((1, 1, 8, 8)))
    np.testing.assert_array_equal(maps.s1.data, 0.0)
    np.testing.assert_array_equal(maps.s2.data, 0.0)


def test_rejects_bad_size(rng):
    with pytest.raises(ShapeError):
        StructurePrior(rng, 2)(T.zeros((1, 1, 6, 8)))


def test_deterministic(rng):
    prior = StructurePrior(rng, 3)
    e = T.tensor(rng.uniform(0, 1, (1, 1, 8, 8)))
    a, b = prior(e), prior(e)
    np.testing.assert_array_equal(a.s2.data, b.s2.data)


def test_gradcheck_both_blocks(f64):
    r = np.random.default_rng(5)
    prior = StructurePrior(r, 2)
    edge = T.tensor(r.uniform(0, 1, (1, 1, 8, 8)))
    R1, R2 = T.tensor(r.standard_normal((1, 2, 4, 4))), T.tensor(r.standard_normal((1, 2, 2, 2)))

    def f():
        m = prior(edge)
        return T.tsum(m.s1 * R1) + T.tsum(m.s2 * R2)

    assert check_gradients(f, prior.parameters(), max_coords=6, rng=r) < 1e-4
