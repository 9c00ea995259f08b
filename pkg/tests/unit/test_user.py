import numpy as np
import pytest

from newsfuse.config import Variant
from newsfuse.exceptions import ConfigurationError, DegenerateInputError
from newsfuse.tensor import Parameter, Tensor
from newsfuse.user import (ClickHistory, build_user_encoder, encode_user,
                           lookup_long_term_user)

F64 = np.float64
AGNOSTIC = [v for v in Variant if not v.candidate_aware]
AWARE = [v for v in Variant if v.candidate_aware]


def build(model_config, variant, seed=0, **changes):
    config = model_config(variant, **changes)
    encoder = build_user_encoder(config, np.random.default_rng(seed), F64)
    return config, encoder


def context_for(variant, rng):
    if Variant(variant) is not Variant.NPA:
        return None
    return Tensor(rng.standard_normal(4))


def history(rng, rows, dim):
    return Tensor(rng.standard_normal((rows, dim)))


@pytest.mark.parametrize("variant", list(Variant))
def test_output_dimension(variant, model_config, rng):
    config, encoder = build(model_config, variant)
    clicks = ClickHistory(history(rng, 5, config.model_dim), 5, user_index=2)
    candidate = Tensor(rng.standard_normal(config.model_dim))
    user = encode_user(encoder, clicks, candidate,
                       context_for(variant, rng))
    assert user.vector.shape == (config.model_dim,)
    assert user.candidate_aware == Variant(variant).candidate_aware


@pytest.mark.parametrize("variant", AGNOSTIC)
def test_candidate_agnostic_ignores_candidate(variant, model_config, rng):
    config, encoder = build(model_config, variant)
    clicks = ClickHistory(history(rng, 4, config.model_dim), 4, user_index=1)
    context = context_for(variant, rng)
    first = encode_user(encoder, clicks, history(rng, 1, config.model_dim)[0],
                        context)
    second = encode_user(encoder, clicks,
                         history(rng, 1, config.model_dim)[0], context)
    assert np.array_equal(first.vector.data, second.vector.data)


@pytest.mark.parametrize("variant", AWARE)
def test_candidate_aware_depends_on_candidate(variant, model_config):
    rng = np.random.default_rng(11)
    config, encoder = build(model_config, variant)
    dim = config.model_dim
    differ = 0
    for _ in range(100):
        clicks = ClickHistory(history(rng, 3, dim), 3)
        first = encode_user(encoder, clicks, history(rng, 1, dim)[0])
        second = encode_user(encoder, clicks, history(rng, 1, dim)[0])
        if np.max(np.abs(first.vector.data - second.vector.data)) > 1e-6:
            differ += 1
    assert differ >= 99


@pytest.mark.parametrize("variant", AWARE)
def test_candidate_block_matches_single_candidates(variant, model_config,
                                                   rng):
    config, encoder = build(model_config, variant)
    clicks = ClickHistory(history(rng, 4, config.model_dim), 4)
    block = history(rng, 3, config.model_dim)
    users = encode_user(encoder, clicks, block).vector.data
    assert users.shape == (3, config.model_dim)
    for row in range(3):
        single = encode_user(encoder, clicks, block[row]).vector.data
        assert np.allclose(users[row], single)


@pytest.mark.parametrize("variant", list(Variant))
def test_padding_rows_are_ignored(variant, model_config, rng):
    config, encoder = build(model_config, variant)
    rows = history(rng, 3, config.model_dim)
    padded = Tensor(np.vstack([rows.data, np.ones((4, config.model_dim))]))
    candidate = history(rng, 1, config.model_dim)[0]
    context = context_for(variant, rng)
    true = encode_user(encoder, ClickHistory(rows, 3), candidate, context)
    extended = encode_user(encoder, ClickHistory(padded, 3), candidate,
                           context)
    assert np.allclose(true.vector.data, extended.vector.data)


@pytest.mark.parametrize("variant", list(Variant))
def test_encoder_gradients(variant, model_config, trial_rng, gradcheck):
    config, encoder = build(model_config, variant,
                            seed=int(trial_rng.integers(1 << 30)),
                            long_term_mask=0.0, activation="tanh")
    dim = config.model_dim
    clicks = history(trial_rng, 4, dim)
    candidates = history(trial_rng, 2, dim)
    context = context_for(variant, trial_rng)
    weight = Tensor(trial_rng.standard_normal((2, dim)))

    def loss():
        user = encoder(clicks, candidate=candidates, user_index=3,
                       user_context=context)
        return (user * weight).sum()
    tensors = [clicks] + encoder.parameters()
    if encoder.candidate_aware:
        tensors.append(candidates)
    if context is not None:
        tensors.append(context)
    gradcheck(loss, *tensors)


@pytest.mark.parametrize("variant", list(Variant))
def test_empty_history_is_degenerate(variant, model_config, rng):
    config, encoder = build(model_config, variant)
    empty = ClickHistory(Tensor(np.zeros((0, config.model_dim))), 0)
    with pytest.raises(DegenerateInputError):
        encode_user(encoder, empty,
                    history(rng, 1, config.model_dim)[0],
                    context_for(variant, rng))


@pytest.mark.parametrize("variant", AWARE)
def test_candidate_aware_needs_candidate(variant, model_config, rng):
    config, encoder = build(model_config, variant)
    clicks = ClickHistory(history(rng, 2, config.model_dim), 2)
    with pytest.raises(ConfigurationError):
        encode_user(encoder, clicks)


def test_naml_identical_clicks(model_config, rng):
    config, encoder = build(model_config, "naml")
    row = rng.standard_normal(config.model_dim)
    clicks = ClickHistory(Tensor(np.tile(row, (4, 1))), 4)
    assert np.allclose(encode_user(encoder, clicks).vector.data, row)


def test_dkn_single_click_is_the_user(model_config, rng):
    config, encoder = build(model_config, "dkn")
    clicks = ClickHistory(history(rng, 1, config.model_dim), 1)
    user = encode_user(encoder, clicks,
                       history(rng, 1, config.model_dim)[0])
    assert np.allclose(user.vector.data, clicks.news_embeddings.data[0])


def test_npa_needs_user_context(model_config, rng):
    config, encoder = build(model_config, "npa")
    clicks = ClickHistory(history(rng, 2, config.model_dim), 2)
    with pytest.raises(ConfigurationError):
        encode_user(encoder, clicks)


def test_mins_history_shorter_than_channels(model_config, rng):
    config, encoder = build(model_config, "mins", mins_channels=4)
    clicks = ClickHistory(history(rng, 2, config.model_dim), 2)
    assert encode_user(encoder, clicks).vector.shape == (config.model_dim,)


# long-term user table ===============================================


def test_long_term_lookup(rng):
    table = Parameter(rng.standard_normal((4, 3)), frozen_rows=(0,))
    table.data[0] = 0
    assert np.all(lookup_long_term_user(0, table).data == 0)
    assert np.array_equal(lookup_long_term_user(2, table).data,
                          table.data[2])
    with pytest.raises(IndexError):
        lookup_long_term_user(4, table)


def test_long_term_masking(rng):
    table = Parameter(np.ones((3, 2)))
    for _ in range(10):
        masked = lookup_long_term_user(1, table, p_mask=1.0, training=True,
                                       rng=rng)
        assert np.all(masked.data == 0)
    # Masking applies only in training
    kept = lookup_long_term_user(1, table, p_mask=1.0, training=False)
    assert np.all(kept.data == 1)
    with pytest.raises(ConfigurationError):
        lookup_long_term_user(1, table, p_mask=0.5, training=True)


@pytest.mark.parametrize("variant, width", [("lstur_ini", 10),
                                            ("lstur_con", 5)])
def test_long_term_table_size(variant, width, model_config):
    config, encoder = build(model_config, variant)
    assert encoder.long_term.shape == (config.num_users, width)
    assert np.all(encoder.long_term.data[0] == 0)


def test_lstur_users_differ(model_config, rng):
    config, encoder = build(model_config, "lstur_ini")
    encoder.eval()
    rows = history(rng, 3, config.model_dim)
    first = encode_user(encoder, ClickHistory(rows, 3, user_index=1))
    second = encode_user(encoder, ClickHistory(rows, 3, user_index=2))
    assert not np.allclose(first.vector.data, second.vector.data)
