"""Surface patch pairs, the fixed patch encoder and the latent consistency loss."""
import numpy as np
import pytest

from src.consistency.geometric_consistency import (
    SurfaceEncoder,
    build_patch_pair,
    encode_patch,
    gc_distances,
    gc_loss,
    perturbation_study,
)
from src.config import make_rng
from src.pipeline.synthetic import generate_synthetic


def test_patch_pair_swaps_the_nearest_point():
    pair = build_patch_pair([0.1, 0, 0], [[0, 0, 0], [1, 0, 0]], k=2)
    assert np.array_equal(pair.real, [[0, 0, 0], [1, 0, 0]])
    assert np.array_equal(pair.mimic, [[0.1, 0, 0], [1, 0, 0]])
    assert pair.k == 2


def test_patch_pair_of_a_target_point_is_unchanged():
    target = make_rng(0, 0).random((40, 3))
    pair = build_patch_pair(target[7], target, k=16)
    assert np.array_equal(pair.real, pair.mimic)


def test_patch_pair_pads_small_targets():
    pair = build_patch_pair([0.5, 0, 0], [[0, 0, 0]], k=4)
    assert pair.real.shape == (4, 3)
    assert np.all(pair.real == 0.0)


def test_patch_pair_validation():
    with pytest.raises(ValueError):
        build_patch_pair([0, 0, 0], np.zeros((0, 3)))
    with pytest.raises(ValueError):
        build_patch_pair([0, 0, 0], [[0, 0, 0]], k=1)


def test_encoder_shape_and_determinism():
    patch = make_rng(1, 0).random((16, 3))
    code = encode_patch(patch)
    assert code.shape == (128,)
    assert np.array_equal(code, encode_patch(patch, SurfaceEncoder()))
    assert SurfaceEncoder(dim=32).dim == 32


def test_encoder_invariances():
    rng = make_rng(2, 0)
    patch = rng.random((16, 3))
    encoder = SurfaceEncoder()
    code = encode_patch(patch, encoder)
    assert np.allclose(encode_patch(patch[rng.permutation(16)], encoder), code, atol=1e-12)
    assert np.allclose(encode_patch(patch + [5.0, -3.0, 1.0], encoder), code, atol=1e-9)

    turn = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert not np.allclose(encode_patch(patch @ turn.T, encoder), code)


def test_encoder_rejects_bad_layers():
    with pytest.raises(ValueError):
        SurfaceEncoder(layers=[np.zeros((5, 4)), np.zeros((8, 3))])
    with pytest.raises(ValueError):
        SurfaceEncoder(layers=[np.zeros((6, 4)), np.zeros((7, 3))])


def test_gc_loss_is_zero_on_the_surface():
    target = make_rng(3, 0).random((1000, 3))
    assert gc_loss(target[:200], target) == 0.0


def test_gc_loss_grows_off_the_surface():
    target = make_rng(4, 0).random((500, 3))
    off = target[:50] + [0.0, 0.0, 0.05]
    distances = gc_distances(off, target)
    assert distances.shape == (50,)
    assert np.all(distances >= 0.0)
    assert gc_loss(off, target) > 0.0
    with pytest.raises(ValueError):
        gc_loss(np.zeros((0, 3)), target)


@pytest.mark.slow
def test_perturbation_study_is_monotone():
    cloud, _ = generate_synthetic("sphere", 2048, seed=0)
    table, rho = perturbation_study(cloud.points, seeds_per_level=100, seed=0)
    assert list(table["sigma"]) == [0.002, 0.005, 0.01, 0.02]
    assert np.all(np.diff(table["gc_mean"]) > 0)
    assert np.all(np.diff(table["seed_cd"]) > 0)
    assert rho > 0.9
