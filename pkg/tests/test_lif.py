import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddir.lif import (
    Liif,
    MlpConfig,
    QueryBatch,
    coord_grid,
    ensemble_geometry,
    init_mlp,
    local_ensemble_decode,
    mlp_forward,
)
from ddir.encoder import EncoderConfig
from ddir.numerics import ParamStore, Tensor, linear, relu

from oracles import ensemble_scalar


def mlp(in_dim, hidden=8, layers=3, seed=0, dtype=np.float64):
    cfg = MlpConfig(in_dim, hidden, layers)
    store = ParamStore()
    init_mlp(store, "m", cfg, np.random.default_rng(seed), dtype)
    return store, cfg


def layers_of(store, cfg):
    return [(store[f"m.{i}.weight"].data, store[f"m.{i}.bias"].data) for i in range(cfg.layers)]


def random_queries(r, q):
    coords = r.uniform(-1, 1, size=(q, 2))
    cells = r.uniform(0.01, 0.5, size=(q, 2))
    return QueryBatch(coords, cells)


def test_coord_grid_examples():
    np.testing.assert_array_equal(coord_grid(1, 1), [[0.0, 0.0]])
    assert sorted(set(coord_grid(2, 3)[:, 0])) == [-0.5, 0.5]
    assert coord_grid(4, 4)[0, 0] == -0.75
    g = coord_grid(3, 5)
    assert g.shape == (15, 2) and g[1, 1] == -1 + 3 / 5
    with pytest.raises(ValueError):
        coord_grid(0, 2)


def test_query_batch_validation():
    with pytest.raises(ValueError):
        QueryBatch([[1.5, 0.0]], [[0.1, 0.1]])
    with pytest.raises(ValueError):
        QueryBatch([[0.0, 0.0]], [[0.0, 0.1]])
    with pytest.raises(ValueError):
        QueryBatch([[0.0, 0.0]], [[0.1, 0.1], [0.1, 0.1]])


def test_mlp_zero_parameters_and_composition():
    store, cfg = mlp(5, layers=3)
    x = Tensor(np.random.default_rng(1).normal(size=(7, 5)))
    h = x
    for i in range(3):
        h = linear(h, store[f"m.{i}.weight"], store[f"m.{i}.bias"])
        if i < 2:
            h = relu(h)
    np.testing.assert_array_equal(mlp_forward(x, store, "m", cfg).data, h.data)
    for p in store.params.values():
        p.data[...] = 0
    assert not mlp_forward(x, store, "m", cfg).data.any()
    with pytest.raises(ValueError, match="width"):
        mlp_forward(Tensor(np.zeros((2, 4))), store, "m", cfg)


def test_two_layer_mlp_reduces_to_affine_map():
    cfg = MlpConfig(3, hidden=3, layers=2)
    store = ParamStore()
    a, b = np.array([[2.0, 0, 0], [0, 1, 0], [1, 1, 1]]), np.array([0.5, -1.0, 0.0])
    store.add("m.0.weight", np.eye(3))
    store.add("m.0.bias", np.zeros(3))
    store.add("m.1.weight", a)
    store.add("m.1.bias", b)
    x = np.random.default_rng(2).uniform(size=(4, 3))  # non-negative, ReLU is the identity
    np.testing.assert_allclose(mlp_forward(Tensor(x), store, "m", cfg).data, x @ a.T + b, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9), st.integers(2, 9), st.sampled_from(["diagonal", "literal"]))
def test_weights_form_a_convex_combination(seed, h, w, weighting):
    r = np.random.default_rng(seed)
    coords = np.concatenate([r.uniform(-1, 1, size=(200, 2)), [[-1, -1], [1, 1], [-1, 1]]])
    iy, ix, weights, rel = ensemble_geometry(coords, h, w, weighting)
    assert weights.min() >= 0
    assert np.abs(weights.sum(axis=0) - 1).max() < 1e-12
    assert iy.min() >= 0 and iy.max() < h and ix.min() >= 0 and ix.max() < w


def test_nearest_corner_gets_the_largest_weight():
    # a query a quarter pitch right of and below latent centre (1, 1) of a 4x4 grid
    y = -1 + (2 * 1.25 + 1) / 4
    iy, ix, weights, _ = ensemble_geometry(np.array([[y, y]]), 4, 4)
    assert (iy[0, 0], ix[0, 0]) == (1, 1)
    np.testing.assert_allclose(weights[:, 0], [0.5625, 0.1875, 0.1875, 0.0625])
    _, _, literal, _ = ensemble_geometry(np.array([[y, y]]), 4, 4, "literal")
    np.testing.assert_allclose(literal[:, 0], [0.0625, 0.1875, 0.1875, 0.5625])


def test_identical_corners_decode_to_the_common_value():
    store, cfg = mlp(3 + 4)
    # zero the offset columns of the first layer so the decode ignores them
    store["m.0.weight"].data[:, 3:5] = 0
    fm = Tensor(np.broadcast_to(np.array([0.2, -0.4, 0.9])[None, :, None, None], (1, 3, 5, 6)).copy())
    q = random_queries(np.random.default_rng(3), 50)
    q.cells[:] = 0.1
    out = local_ensemble_decode(fm, q, store, "m", cfg).data
    np.testing.assert_allclose(out, np.broadcast_to(out[0], out.shape), atol=1e-12)


def test_latent_centre_reproduces_solo_decode():
    r = np.random.default_rng(4)
    h, w, c = 5, 4, 3
    store, cfg = mlp(c + 4, dtype=np.float32)
    fm = Tensor(r.normal(size=(1, c, h, w)).astype(np.float32))
    q = QueryBatch(coord_grid(h, w), np.full((h * w, 2), 0.3))
    out = local_ensemble_decode(fm, q, store, "m", cfg).data
    for k in range(h * w):
        i, j = divmod(k, w)
        feat = np.concatenate([fm.data[0, :, i, j], [0, 0], [0.3 * h / 2, 0.3 * w / 2]]).astype(np.float32)
        solo = mlp_forward(Tensor(feat[None]), store, "m", cfg).data[0]
        np.testing.assert_array_equal(out[k], solo)


def test_full_grid_touches_every_code_at_zero_offset():
    h, w = 3, 4
    iy, ix, weights, rel = ensemble_geometry(coord_grid(h, w), h, w)
    main = weights.argmax(axis=0)
    q = np.arange(h * w)
    assert sorted(zip(iy[main, q], ix[main, q])) == [(i, j) for i in range(h) for j in range(w)]
    assert not rel[main, q].any()


def test_matches_scalar_reference():
    r = np.random.default_rng(5)
    c = 3
    store, cfg = mlp(c + 4, hidden=6)
    fm = r.normal(size=(1, c, 4, 4))
    q = random_queries(r, 64)
    out = local_ensemble_decode(Tensor(fm), q, store, "m", cfg).data
    ref = np.array([ensemble_scalar(fm[0], q.coords[k], q.cells[k], layers_of(store, cfg)) for k in range(64)])
    assert np.abs(out - ref).max() < 1e-6


def test_output_is_continuous_in_the_query():
    r = np.random.default_rng(6)
    store, cfg = mlp(3 + 4, hidden=16)
    fm = Tensor(r.normal(size=(1, 3, 6, 6)))
    q = random_queries(r, 200)
    q.coords[:] = np.clip(q.coords, -0.999, 0.999)
    moved = QueryBatch(q.coords + 1e-6, q.cells)
    a = local_ensemble_decode(fm, q, store, "m", cfg).data
    b = local_ensemble_decode(fm, moved, store, "m", cfg).data
    assert np.abs(a - b).max() < 1e-3


def test_extras_are_routed_per_owner_and_per_query():
    r = np.random.default_rng(7)
    store, cfg = mlp(2 + 2 + 3 + 4)
    fm = Tensor(r.normal(size=(2, 2, 3, 3)))
    img_extra = Tensor(r.normal(size=(2, 2)))
    q = random_queries(r, 10)
    q.owner = np.array([0, 1] * 5)
    qx = Tensor(r.normal(size=(10, 3)))
    out = local_ensemble_decode(fm, q, store, "m", cfg, image_extra=img_extra, query_extra=qx).data
    for b in (0, 1):
        sel = q.owner == b
        sub = q.subset(sel)
        sub.owner = np.zeros(sel.sum(), dtype=np.intp)
        single = local_ensemble_decode(Tensor(fm.data[b:b + 1]), sub, store, "m", cfg,
                                       image_extra=Tensor(img_extra.data[b:b + 1]),
                                       query_extra=Tensor(qx.data[sel])).data
        np.testing.assert_allclose(out[sel], single, atol=1e-12)


def test_small_grids_are_rejected():
    store, cfg = mlp(1 + 4)
    with pytest.raises(ValueError, match="2x2"):
        local_ensemble_decode(Tensor(np.zeros((1, 1, 1, 5))), random_queries(np.random.default_rng(0), 3),
                              store, "m", cfg)


def test_liif_baseline_shapes():
    model = Liif(EncoderConfig(4, 1), hidden=8, seed=1)
    q = QueryBatch.full_grid(6, 6)
    q.targets = np.zeros((36, 3))
    lr = np.random.default_rng(8).uniform(size=(3, 3, 3))
    assert model.predict(lr, q).shape == (36, 3)
    assert np.isfinite(model.loss(lr, q).item())
