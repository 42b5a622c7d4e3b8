import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reviewnet import tensor as T
from support import best_completed, exhaustive_best, sequence_logprob, toy

from reviewnet.decoder import beam_search, decode_step, greedy_decode, init_state, teacher_forced
from reviewnet.nn import LstmState, attend, lstm_step
from reviewnet.tensor import DimensionError, Tensor


def test_single_memory_vector_is_always_the_context():
    p, _, init = toy(0, n=1)
    mem = Tensor(np.random.default_rng(0).normal(size=(1, 1, 3)))
    state = init
    for tok in (1, 0, 2):
        w, ctx = attend(p.scorer, mem, state.hidden)
        np.testing.assert_array_equal(ctx.data, mem.data[:, 0])
        state, _, weights = decode_step(p, mem, state, [tok])
        assert weights.data.tolist() == [[1.0]]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_step_distribution_sums_to_one(seed):
    p, mem, init = toy(seed, V=7, scale=3.0)
    _, lp, _ = decode_step(p, mem, init, [1])
    assert abs(np.exp(lp.data).sum() - 1) <= 1e-12
    _, prob, _ = decode_step(p, mem, init, [1], log=False)
    assert abs(prob.data.sum() - 1) <= 1e-12


def test_step_matches_hand_composition():
    p, mem, init = toy(3, V=5, n=2)
    state, lp, _ = decode_step(p, mem, init, [4])
    _, ctx = attend(p.scorer, mem, init.hidden)
    x = np.concatenate([ctx.data, p.embedding.data[[4]]], axis=-1)
    s = lstm_step(p.lstm, x, init)
    logits = s.hidden.data @ p.out_w.data + p.out_b.data
    expect = T.stable_softmax(Tensor(logits[0])).data
    np.testing.assert_allclose(state.hidden.data, s.hidden.data, atol=1e-15)
    np.testing.assert_allclose(np.exp(lp.data[0]), expect, atol=1e-14)


def test_step_dim_check():
    p, mem, _ = toy(0)
    with pytest.raises(DimensionError):
        decode_step(p, mem, LstmState.zeros(4, 1), [1])


def test_init_state():
    z = init_state(Tensor(np.zeros(5)))
    assert not z.cell.data.any() and not z.hidden.data.any()
    r = Tensor(np.arange(3.0))
    s = init_state(r)
    assert s.cell.shape == s.hidden.shape == (3,)
    np.testing.assert_array_equal(s.cell.data, r.data)


def test_greedy_constant_eos_gives_empty_output():
    p, mem, init = toy(0, V=4)
    p.out_w.data[...] = 0.0
    p.out_b.data[...] = [0.0, 0.0, 5.0, 0.0]
    assert greedy_decode(p, mem, init, 10) == []


def test_greedy_tie_goes_to_lower_id():
    p, mem, init = toy(0, V=5)
    p.out_w.data[...] = 0.0
    p.out_b.data[...] = [0.0, 0.0, -1.0, 3.0, 3.0]
    assert greedy_decode(p, mem, init, 4) == [3, 3, 3, 3]


def test_greedy_rejects_bad_max_len():
    p, mem, init = toy(0)
    with pytest.raises(ValueError):
        greedy_decode(p, mem, init, 0)


@pytest.mark.parametrize("seed", range(5))
def test_greedy_matches_per_step_enumeration(seed):
    # V = 2 with eos = 1: brute-force argmax over both tokens at every step
    p, mem, init = toy(seed, V=2, scale=2.0)
    out = greedy_decode(p, mem, init, 6, bos=0, eos=1)
    state, prev, expect = init, 0, []
    for _ in range(6):
        nxt = []
        for tok in range(2):
            s, lp, _ = decode_step(p, mem, state, [prev])
            nxt.append((lp.data[0, tok], -tok, s))
        best = max(nxt, key=lambda c: (c[0], c[1]))
        tok, state = -best[1], best[2]
        if tok == 1:
            break
        expect.append(tok)
        prev = tok
    assert out == expect


@pytest.mark.parametrize("seed", range(100))
def test_beam_one_equals_greedy(seed):
    rng = np.random.default_rng(seed)
    p, mem, init = toy(seed, V=int(rng.integers(3, 8)), n=int(rng.integers(1, 5)), scale=2.0)
    hyp = beam_search(p, mem, init, 1, 8)[0]
    assert hyp.output() == greedy_decode(p, mem, init, 8)


@pytest.mark.parametrize("seed", range(40))
def test_beam_three_matches_exhaustive_enumeration(seed):
    p, mem, init = toy(seed, scale=[0.08, 1.0, 3.0][seed % 3])
    with T.no_tape():
        score, seq = exhaustive_best(p, mem, init)
        best = beam_search(p, mem, init, 3, 3)[0]
    assert best.logprob == pytest.approx(score, abs=1e-10)
    assert tuple(best.tokens) == seq


@pytest.mark.parametrize("seed", range(40))
def test_beam_score_monotone_in_width(seed):
    p, mem, init = toy(seed, V=5, scale=2.0)
    with T.no_tape():
        pools = {b: beam_search(p, mem, init, b, 4) for b in (2, 3, 4)}
    assert best_completed(pools[3]) >= best_completed(pools[2])
    assert best_completed(pools[4]) >= best_completed(pools[3])
    assert pools[4][0].logprob >= pools[2][0].logprob


@pytest.mark.parametrize("seed", range(10))
def test_hypothesis_logprob_recomputes(seed):
    p, mem, init = toy(seed, V=6, scale=2.0)
    for h in beam_search(p, mem, init, 3, 5):
        assert h.logprob == pytest.approx(sequence_logprob(p, mem, init, h.tokens), abs=1e-10)
        assert h.logprob == pytest.approx(sum(h.step_logprobs), abs=1e-12)
        assert h.completed == (h.tokens[-1] == 2)


def test_beam_pool_sorted_and_length_normalized_flag():
    p, mem, init = toy(4, V=6, scale=2.0)
    raw = beam_search(p, mem, init, 4, 6)
    assert [h.logprob for h in raw] == sorted((h.logprob for h in raw), reverse=True)
    norm = beam_search(p, mem, init, 4, 6, length_normalize=True)
    assert [h.normalized() for h in norm] == sorted((h.normalized() for h in norm), reverse=True)


def test_beam_rejects_bad_arguments():
    p, mem, init = toy(0)
    with pytest.raises(ValueError):
        beam_search(p, mem, init, 0, 3)
    with pytest.raises(ValueError):
        beam_search(p, mem, init, 2, 0)


def test_teacher_forced_matches_stepwise():
    p, mem, init = toy(5, V=6)
    toks = [3, 4, 2]
    lp = teacher_forced(p, mem, init, np.array([[1, 3, 4]]))
    assert lp.data[0, np.arange(3), toks].sum() == pytest.approx(sequence_logprob(p, mem, init, toks), abs=1e-12)


def test_no_memory_decoder_uses_zero_context():
    p, _, init = toy(6, V=4)
    state, lp, w = decode_step(p, None, init, [1])
    assert w is None
    x = np.concatenate([np.zeros((1, 3)), p.embedding.data[[1]]], axis=-1)
    np.testing.assert_allclose(state.hidden.data, lstm_step(p.lstm, x, init).hidden.data, atol=1e-15)
