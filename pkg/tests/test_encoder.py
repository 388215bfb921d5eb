import numpy as np
import pytest

from ddir.encoder import EncoderConfig, conv_shapes, encode, init_encoder
from ddir.numerics import ParamStore, Tensor, add, conv2d, relu


def make(cfg, seed=0, dtype=np.float64):
    store = ParamStore()
    init_encoder(store, "enc", cfg, np.random.default_rng(seed), dtype)
    return store


def test_zero_parameters_give_zero_features():
    cfg = EncoderConfig(channels=4, blocks=2)
    store = ParamStore()
    for name, shape in conv_shapes(cfg):
        store.add(f"enc.{name}.weight", np.zeros(shape))
        store.add(f"enc.{name}.bias", np.zeros(shape[0]))
    img = np.random.default_rng(0).uniform(size=(6, 5, 3))
    assert not encode(img, store, "enc", cfg).data.any()


@pytest.mark.parametrize("dims", [(8, 8), (11, 7), (48, 48)])
def test_spatial_size_is_preserved(dims):
    cfg = EncoderConfig(channels=3, blocks=1)
    out = encode(np.random.default_rng(1).uniform(size=dims + (3,)), make(cfg), "enc", cfg)
    assert out.shape == (3,) + dims


def test_matches_hand_composition():
    cfg = EncoderConfig(channels=4, blocks=1)
    store = make(cfg, seed=2)
    img = np.random.default_rng(3).uniform(size=(5, 6, 3))
    x = Tensor(np.moveaxis(img, -1, 0).copy())

    def c(t, name):
        return conv2d(t, store[f"enc.{name}.weight"], store[f"enc.{name}.bias"], 1)

    head = c(x, "head")
    body = add(head, c(relu(c(head, "body.0.conv1")), "body.0.conv2"))
    ref = add(c(body, "tail"), head)
    out = encode(img, store, "enc", cfg)
    np.testing.assert_array_equal(np.asarray(out.data).reshape(ref.shape), ref.data)


def test_batched_input_matches_single_images():
    cfg = EncoderConfig(channels=3, blocks=1)
    store = make(cfg, seed=4)
    imgs = np.random.default_rng(5).uniform(size=(2, 6, 6, 3))
    batch = encode(imgs, store, "enc", cfg).data
    for n in range(2):
        np.testing.assert_allclose(batch[n], encode(imgs[n], store, "enc", cfg).data, atol=1e-12)


def test_interior_is_translation_consistent():
    cfg = EncoderConfig(channels=3, blocks=1)
    store = make(cfg, seed=6)
    big = np.random.default_rng(7).uniform(size=(16, 16, 3))
    a = encode(big[:, :-1], store, "enc", cfg).data
    b = encode(big[:, 1:], store, "enc", cfg).data
    # receptive field 9 px, so keep 4 px away from every border
    np.testing.assert_allclose(a[:, 4:-4, 5:-4], b[:, 4:-4, 4:-5], atol=1e-12)


def test_parameter_shape_mismatch_is_an_error():
    store = make(EncoderConfig(channels=4, blocks=1))
    with pytest.raises(ValueError):
        encode(np.zeros((5, 5, 3)), store, "enc", EncoderConfig(channels=5, blocks=1))


def test_initialisation_bounds():
    cfg = EncoderConfig(channels=8, blocks=1)
    store = make(cfg)
    for name, shape in conv_shapes(cfg):
        bound = 1 / np.sqrt(np.prod(shape[1:]))
        assert np.abs(store[f"enc.{name}.weight"].data).max() <= bound
        assert np.abs(store[f"enc.{name}.bias"].data).max() <= bound


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(channels=0)
    with pytest.raises(ValueError):
        EncoderConfig(blocks=-1)
