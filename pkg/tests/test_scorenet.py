"""Network forward/backward, conditioning, the DSM objective, and training."""
from __future__ import annotations

import json

import numpy as np
import pytest

from seriesdiff import (
    DataError,
    NumericError,
    ParameterError,
    ScoreNetConfig,
    TrainConfig,
    dsm_loss,
    encode_condition,
    init_params,
    load_checkpoint,
    make_linear_schedule,
    predict_eps,
    save_checkpoint,
    time_embedding,
    train,
)
from seriesdiff.scorenet import (
    condition_dropout,
    dsm_residual_loss,
    predict_eps_vjp,
    read_checkpoint_meta,
)

TINY = ScoreNetConfig(
    input_len=2, width=4, blocks=1, time_dim=2, embed_dim=2,
    cond_hidden=3, n_industries=3,
)


def test_time_embedding_structure():
    emb = time_embedding(0, 6)
    # interleaved sin/cos of t=0: sin terms 0, cos terms 1
    assert np.allclose(emb[0::2], 0.0, atol=0)
    assert np.allclose(emb[1::2], 1.0, atol=0)
    emb7 = time_embedding(7, 6)
    assert emb7.shape == (6,)
    assert emb7[0] == pytest.approx(np.sin(7.0), abs=1e-15)
    assert emb7[1] == pytest.approx(np.cos(7.0), abs=1e-15)
    batch = time_embedding(np.array([0, 7]), 6)
    assert batch.shape == (2, 6)
    assert np.array_equal(batch[0], emb)
    assert np.array_equal(batch[1], emb7)
    with pytest.raises(ParameterError):
        time_embedding(1, 5)  # dim must be even


def test_init_is_deterministic_and_zero_output():
    p1 = init_params(TINY, np.random.default_rng(0))
    p2 = init_params(TINY, np.random.default_rng(0))
    assert np.array_equal(p1.values, p2.values)
    # residual second matrices and the head start at zero: output is zero
    x = np.array([0.3, -1.1])
    assert np.array_equal(predict_eps(p1, x, 3), np.zeros(2))
    cond = encode_condition(1, 2, p1)
    assert np.array_equal(predict_eps(p1, x, 3, cond), np.zeros(2))


def test_param_layout_contiguous_named_views():
    params = init_params(TINY, np.random.default_rng(1))
    total = sum(int(np.prod(params.view(n).shape)) for n in params.names())
    assert total == params.n_params == params.values.size
    # a view writes through to the flat vector slice it was cut from
    name = params.names()[0]
    view = params.view(name)
    assert view.base is params.values or view.base is not None
    with pytest.raises(ParameterError):
        params.view("nonexistent")
    with pytest.raises(ParameterError):
        params.with_values(np.zeros(params.n_params + 1))


def test_encode_condition_contract():
    params = init_params(TINY, np.random.default_rng(2))
    cond = encode_condition(2, 4, params)
    assert not cond.is_null
    assert cond.encoded.shape == (TINY.cond_dim,)
    again = encode_condition(2, 4, params)
    assert np.array_equal(cond.encoded, again.encoded)
    null = encode_condition(None, None, params)
    assert null.is_null
    assert np.array_equal(null.encoded, np.zeros(TINY.cond_dim))
    with pytest.raises(ParameterError):
        encode_condition(1, None, params)
    with pytest.raises(ParameterError):
        encode_condition(None, 1, params)
    with pytest.raises(ParameterError):
        encode_condition(3, 0, params)  # industry out of range (n_industries=3)
    with pytest.raises(ParameterError):
        encode_condition(0, 5, params)  # board out of range


def test_distinct_conditions_distinct_predictions():
    cfg = ScoreNetConfig(
        input_len=4, width=8, blocks=2, time_dim=4, embed_dim=4,
        cond_hidden=6, n_industries=5,
    )
    rng = np.random.default_rng(3)
    params = init_params(cfg, rng)
    # nudge the trunk off the zero function so conditioning can show through
    params = params.with_values(params.values + 0.05 * rng.standard_normal(params.n_params))
    x = rng.standard_normal(4)
    a = predict_eps(params, x, 2, encode_condition(0, 0, params))
    b = predict_eps(params, x, 2, encode_condition(4, 1, params))
    c = predict_eps(params, x, 2, None)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_dsm_gradient_matches_finite_differences():
    sch = make_linear_schedule(7, 1e-3, 0.3)
    rng = np.random.default_rng(4)
    params = init_params(TINY, rng)
    params = params.with_values(params.values + 0.1 * rng.standard_normal(params.n_params))
    windows = rng.standard_normal((5, 2))
    conds = [(0, 0), None, (2, 3), (1, 1), None]

    seed = 99
    _, grad = dsm_loss(params, windows, conds, sch, np.random.default_rng(seed),
                       weighting="elbo", p_uncond=0.4)

    def f(v: np.ndarray) -> float:
        # identical rng stream per evaluation: same t, noise, dropout draws
        loss, _ = dsm_loss(params.with_values(v), windows, conds, sch,
                           np.random.default_rng(seed), weighting="elbo", p_uncond=0.4)
        return loss

    h = 1e-6
    base = params.values
    fd = np.empty_like(grad)
    for i in range(base.size):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (f(up) - f(dn)) / (2.0 * h)
    denom = max(1.0, float(np.max(np.abs(fd))))
    assert float(np.max(np.abs(grad - fd))) / denom < 1e-6


def test_vjp_matches_finite_differences():
    rng = np.random.default_rng(5)
    params = init_params(TINY, rng)
    params = params.with_values(params.values + 0.1 * rng.standard_normal(params.n_params))
    x = rng.standard_normal(2)
    cot = rng.standard_normal(2)
    cond = encode_condition(1, 0, params)
    out, grad = predict_eps_vjp(params, x, 3, cond, cot)
    assert np.array_equal(out, predict_eps(params, x, 3, cond))

    def f(v: np.ndarray) -> float:
        p = params.with_values(v)
        return float(cot @ predict_eps(p, x, 3, encode_condition(1, 0, p)))

    h = 1e-6
    base = params.values
    fd = np.empty_like(grad)
    for i in range(base.size):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (f(up) - f(dn)) / (2.0 * h)
    denom = max(1.0, float(np.max(np.abs(fd))))
    assert float(np.max(np.abs(grad - fd))) / denom < 1e-6


def test_residual_loss_hand_value():
    pred = np.array([[1.0, 0.0], [0.0, 2.0]])
    true = np.zeros((2, 2))
    w = np.array([2.0, 1.0])
    # (2*1 + 1*4) / 2 batch elements
    assert dsm_residual_loss(pred, true, w) == pytest.approx(3.0, abs=1e-15)


def test_dsm_loss_is_reproducible_and_validated():
    sch = make_linear_schedule(5, 1e-3, 0.2)
    rng = np.random.default_rng(6)
    params = init_params(TINY, rng)
    windows = rng.standard_normal((4, 2))
    conds = [None] * 4
    l1, g1 = dsm_loss(params, windows, conds, sch, np.random.default_rng(1))
    l2, g2 = dsm_loss(params, windows, conds, sch, np.random.default_rng(1))
    assert l1 == l2
    assert np.array_equal(g1, g2)
    with pytest.raises(ParameterError):
        dsm_loss(params, windows, conds, sch, rng, weighting="huber")
    with pytest.raises(ParameterError):
        dsm_loss(params, windows, [None] * 3, sch, rng)
    with pytest.raises(ParameterError):
        dsm_loss(params, rng.standard_normal((4, 3)), conds, sch, rng)


def test_condition_dropout_endpoints():
    iid = np.array([0, 1, 2, 0])
    bid = np.array([1, 1, 0, 3])
    rng = np.random.default_rng(7)
    i0, b0 = condition_dropout(iid, bid, 0.0, rng)
    assert np.array_equal(i0, iid) and np.array_equal(b0, bid)
    i9, b9 = condition_dropout(iid, bid, 0.999, np.random.default_rng(8))
    assert np.all(i9 == -1) and np.all(b9 == -1)
    with pytest.raises(ParameterError):
        condition_dropout(iid, bid, 1.0, rng)
    with pytest.raises(ParameterError):
        condition_dropout(iid, bid, -0.1, rng)


def test_relu_activation_variant_runs():
    cfg = ScoreNetConfig(
        input_len=2, width=4, blocks=1, time_dim=2, embed_dim=2,
        cond_hidden=3, n_industries=3, activation="relu",
    )
    rng = np.random.default_rng(9)
    params = init_params(cfg, rng)
    params = params.with_values(params.values + 0.1 * rng.standard_normal(params.n_params))
    out = predict_eps(params, np.array([0.5, -0.5]), 1)
    assert np.all(np.isfinite(out))
    with pytest.raises(ParameterError):
        ScoreNetConfig(
            input_len=2, width=4, blocks=1, time_dim=2, embed_dim=2,
            cond_hidden=3, n_industries=3, activation="tanh",
        )


def test_config_validation():
    with pytest.raises(ParameterError):
        ScoreNetConfig(input_len=0, width=4, blocks=1, time_dim=2,
                       embed_dim=2, cond_hidden=3, n_industries=3)
    with pytest.raises(ParameterError):
        ScoreNetConfig(input_len=2, width=4, blocks=1, time_dim=3,
                       embed_dim=2, cond_hidden=3, n_industries=3)  # odd time_dim
    with pytest.raises(ParameterError):
        ScoreNetConfig(input_len=2, width=4, blocks=1, time_dim=2,
                       embed_dim=2, cond_hidden=3, n_industries=0)


def test_predict_eps_validation():
    params = init_params(TINY, np.random.default_rng(10))
    with pytest.raises(ParameterError):
        predict_eps(params, np.zeros(3), 1)
    with pytest.raises(ParameterError):
        predict_eps(params, np.zeros(2), 0)


def test_train_descends_and_records_losses():
    # constant windows make the noise exactly recoverable, so the loss
    # has real headroom below the predict-zero baseline
    windows = np.tile(np.array([2.0, -2.0]), (64, 1))
    conds = [None] * 64
    sch = make_linear_schedule(6, 1e-3, 0.2)
    res = train(
        windows, conds, sch,
        TrainConfig(epochs=30, batch_size=16, learning_rate=3e-3, p_uncond=0.0,
                    weighting="unit", seed=0),
        net_config=TINY,
    )
    assert len(res.epoch_losses) == 30
    assert np.mean(res.epoch_losses[-3:]) < 0.8 * np.mean(res.epoch_losses[:3])
    assert res.params.config == TINY


def test_train_zero_epochs_returns_initialization():
    rng = np.random.default_rng(20)
    windows = rng.standard_normal((8, 2))
    sch = make_linear_schedule(4, 1e-3, 0.2)
    res = train(windows, [None] * 8, sch, TrainConfig(epochs=0, seed=3),
                net_config=TINY)
    assert res.epoch_losses == []
    assert np.array_equal(
        res.params.values, init_params(TINY, np.random.default_rng(3)).values
    )


def test_train_is_seeded():
    rng = np.random.default_rng(12)
    windows = rng.standard_normal((32, 2))
    conds = [(0, 0)] * 32
    sch = make_linear_schedule(4, 1e-3, 0.2)
    cfg = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, p_uncond=0.1,
                      weighting="elbo", seed=21)
    a = train(windows, conds, sch, cfg, net_config=TINY)
    b = train(windows, conds, sch, cfg, net_config=TINY)
    assert np.array_equal(a.params.values, b.params.values)
    assert a.epoch_losses == b.epoch_losses


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises():
    rng = np.random.default_rng(13)
    windows = 1e3 * rng.standard_normal((32, 2))
    sch = make_linear_schedule(4, 1e-3, 0.2)
    with pytest.raises(NumericError):
        train(
            windows, [None] * 32, sch,
            TrainConfig(epochs=50, batch_size=8, learning_rate=1e155, p_uncond=0.0,
                        weighting="unit", seed=0),
            net_config=TINY,
        )


def test_train_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(epochs=-1)
    with pytest.raises(ParameterError):
        TrainConfig(epochs=1, batch_size=0)
    with pytest.raises(ParameterError):
        TrainConfig(epochs=1, learning_rate=0.0)
    with pytest.raises(ParameterError):
        TrainConfig(epochs=1, weighting="l1")
    with pytest.raises(ParameterError):
        TrainConfig(epochs=1, p_uncond=1.0)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    params = init_params(TINY, rng)
    params = params.with_values(params.values + rng.standard_normal(params.n_params))
    path = tmp_path / "ckpt.json"
    save_checkpoint(params, path, meta={"seed": 5, "note": "round trip"})
    loaded = load_checkpoint(path)
    assert loaded.config == params.config
    assert np.array_equal(loaded.values, params.values)
    assert read_checkpoint_meta(path) == {"seed": 5, "note": "round trip"}


def test_checkpoint_rejects_tampering(tmp_path):
    params = init_params(TINY, np.random.default_rng(15))
    path = tmp_path / "ckpt.json"
    save_checkpoint(params, path)
    payload = json.loads(path.read_text())

    bad = dict(payload, format_version=99)
    path.write_text(json.dumps(bad))
    with pytest.raises(DataError):
        load_checkpoint(path)

    bad = json.loads(json.dumps(payload))
    name = next(iter(bad["arrays"]))
    del bad["arrays"][name]
    path.write_text(json.dumps(bad))
    with pytest.raises(DataError):
        load_checkpoint(path)

    bad = json.loads(json.dumps(payload))
    name = next(iter(bad["arrays"]))
    bad["arrays"][name]["shape"] = [1, 1]
    path.write_text(json.dumps(bad))
    with pytest.raises(DataError):
        load_checkpoint(path)

    path.write_text("not json")
    with pytest.raises(DataError):
        load_checkpoint(path)
