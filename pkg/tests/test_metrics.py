import math

import pytest

from simumt import metrics as X
from simumt import model as M
from simumt.cascade import CascadeConfig, CascadeMT, EndpointRule, TimedWord
from simumt.online import (ActionTrace, OnlinePolicy, ReadEvent, WriteEvent,
                           online_greedy_decode)
from simumt.training import INFINITE_K
from simumt.vocab import EOS


def small_params(seed=0, vocab=16):
    cfg = M.ModelConfig(src_vocab_size=vocab, tgt_vocab_size=vocab, d_model=16,
                        n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ffn=24)
    return M.init_parameters(cfg, seed=seed)


# ---------------------------------------------------------------------------
# BLEU

def test_bleu_perfect_match():
    b = X.corpus_bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "e"]])
    assert b.score == 1.0
    assert b.precisions == (1.0, 1.0, 1.0, 1.0)
    assert b.brevity_penalty == 1.0
    assert (b.hyp_len, b.ref_len) == (5, 5)


def test_bleu_brevity_penalty_hand_value():
    # all precisions 1, hypothesis one word short: score = exp(1 - 5/4)
    b = X.corpus_bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e"]])
    assert b.precisions == (1.0, 1.0, 1.0, 1.0)
    assert b.score == pytest.approx(0.7788007830714049, rel=1e-14)
    assert b.brevity_penalty == pytest.approx(math.exp(-0.25), rel=1e-15)


def test_bleu_clips_repeated_ngrams():
    b = X.corpus_bleu([["the", "the", "the"]], [["the", "cat"]], max_n=1)
    assert b.precisions == (1 / 3,)
    assert b.score == pytest.approx(1 / 3, rel=1e-15)   # bp = 1, hyp longer


def test_bleu_zero_order_zeroes_unsmoothed_score():
    b = X.corpus_bleu([["a", "b"]], [["a", "c"]], max_n=2)
    assert b.precisions[1] == 0.0
    assert b.score == 0.0


def test_bleu_add_one_smoothing():
    b = X.corpus_bleu([["a", "b"]], [["a", "c"]], max_n=2, smoothing="add_one")
    assert b.precisions == ((1 + 1) / (2 + 1), (0 + 1) / (1 + 1))
    assert b.score == pytest.approx(math.sqrt((2 / 3) * (1 / 2)), rel=1e-15)


def test_bleu_pools_counts_over_corpus():
    # second sentence contributes a unigram miss and no bigram positions
    b = X.corpus_bleu([["a", "b"], ["c"]], [["a", "b"], ["d"]], max_n=2)
    assert b.precisions == (2 / 3, 1.0)
    assert b.score == pytest.approx(math.sqrt(2 / 3), rel=1e-15)
    assert (b.hyp_len, b.ref_len) == (3, 3)


def test_bleu_empty_hypothesis_scores_zero():
    b = X.corpus_bleu([[]], [["a", "b"]])
    assert b.score == 0.0 and b.brevity_penalty == 0.0 and b.hyp_len == 0


def test_bleu_validation():
    with pytest.raises(ValueError):
        X.corpus_bleu([], [])
    with pytest.raises(ValueError):
        X.corpus_bleu([["a"]], [["a"], ["b"]])
    with pytest.raises(ValueError):
        X.corpus_bleu([["a"]], [["a"]], smoothing="exp")
    with pytest.raises(ValueError):
        X.corpus_bleu([["a"]], [["a"]], max_n=0)


# ---------------------------------------------------------------------------
# average lagging, token units

def trace_with_g(gs, n_reads, eos_tail=True):
    events = [ReadEvent(i) for i in range(n_reads)]
    events += [WriteEvent(token=5, g_tokens=g) for g in gs]
    if eos_tail:
        events.append(WriteEvent(token=EOS, g_tokens=gs[-1]))
    return ActionTrace(events=tuple(events))


def test_al_words_wait1_full_length():
    tr = ActionTrace(events=(
        ReadEvent(0), WriteEvent(5, 1), ReadEvent(1), WriteEvent(6, 2),
        ReadEvent(2), WriteEvent(7, 3), WriteEvent(EOS, 3)))
    assert X.average_lagging_words(tr, src_len=3, tgt_len=3) == pytest.approx(1.0)


def test_al_words_uneven_rate_hand_value():
    # n=4, |y|=2, g=(2,4): rate 2, tau=2, AL = ((2-0)+(4-2))/2 = 2.0
    tr = trace_with_g([2, 4], n_reads=4)
    assert X.average_lagging_words(tr, src_len=4, tgt_len=2) == pytest.approx(2.0)


def test_al_words_offline_equals_src_len():
    tr = trace_with_g([4, 4, 4], n_reads=4)
    assert X.average_lagging_words(tr, src_len=4, tgt_len=3) == pytest.approx(4.0)


def test_al_words_window_stops_at_first_full_read():
    # tau = 1: later writes cannot dilute the average
    tr = trace_with_g([4, 4], n_reads=4)
    assert X.average_lagging_words(tr, src_len=4, tgt_len=2) == pytest.approx(4.0)


def test_al_words_tau_falls_back_to_tgt_len():
    # g never reaches the source: tau = |y| = 2, rate 1.5
    tr = trace_with_g([1, 1], n_reads=3, eos_tail=False)
    tr = ActionTrace(events=tr.events, truncated=True)
    assert X.average_lagging_words(tr, src_len=3, tgt_len=2) == pytest.approx(
        ((1 - 0.0) + (1 - 1.5)) / 2)


def test_al_words_excludes_eos_write():
    # the EOS write has g=4 but tgt_len=1 keeps it out of the window
    tr = trace_with_g([2], n_reads=4)
    assert X.average_lagging_words(tr, src_len=4, tgt_len=1) == pytest.approx(2.0)


def test_al_words_validation():
    tr = trace_with_g([2, 3], n_reads=3)
    with pytest.raises(ValueError):
        X.average_lagging_words(tr, src_len=0, tgt_len=2)
    with pytest.raises(ValueError):
        X.average_lagging_words(tr, src_len=3, tgt_len=0)
    with pytest.raises(ValueError):
        X.average_lagging_words(tr, src_len=3, tgt_len=5)   # not enough writes
    with pytest.raises(ValueError):
        X.average_lagging_words(tr, src_len=2, tgt_len=2)   # g beyond source


# ---------------------------------------------------------------------------
# average lagging, millisecond units

def ms_trace(g_ms_list):
    events = [ReadEvent(0, timestamp_ms=0.0)]
    events += [WriteEvent(5, 1, g_ms=v) for v in g_ms_list]
    return ActionTrace(events=tuple(events), truncated=True)


def test_al_ms_hand_value():
    # total 1000 ms, writes at 400 and 1000 ms consumed, |y| = 2:
    # rate 500, AL = ((400-0) + (1000-500)) / 2 = 450
    assert X.average_lagging_ms(ms_trace([400.0, 1000.0]), 1000.0, 2) == \
        pytest.approx(450.0)


def test_al_ms_offline():
    assert X.average_lagging_ms(ms_trace([800.0, 800.0]), 800.0, 2) == \
        pytest.approx(800.0)


def test_al_ms_validation():
    with pytest.raises(ValueError):
        X.average_lagging_ms(ms_trace([100.0]), 0.0, 1)
    with pytest.raises(ValueError):
        X.average_lagging_ms(ms_trace([100.0]), 1000.0, 2)
    with pytest.raises(ValueError):
        X.average_lagging_ms(ms_trace([1100.0]), 1000.0, 1)
    bare = ActionTrace(events=(ReadEvent(0), WriteEvent(5, 1)), truncated=True)
    with pytest.raises(ValueError, match="g_ms"):
        X.average_lagging_ms(bare, 1000.0, 1)


# ---------------------------------------------------------------------------
# tradeoff sweeps

def detok_ids(tokens):
    return " ".join(str(t) for t in tokens)


def test_sweep_t2t_records_match_direct_decoding():
    params = small_params(seed=6)
    sources = [[4, 5, 6, 7], [8, 9, 10]]
    # references that the random model will not match; BLEU just has to be
    # a well-defined number in [0, 1]
    testset = X.T2TTestset(sources=sources, references=["4 5", "8 9"],
                           detokenize=detok_ids)
    ks = [1, 2, INFINITE_K]
    recs = X.sweep_t2t([X.T2TSystem("sys", [params])], ks, testset)
    assert [r.k_eval for r in recs] == ks
    assert all(r.system_id == "sys" and r.al_ms is None for r in recs)
    assert all(0.0 <= r.bleu <= 1.0 for r in recs)

    # recompute one record by hand
    policy = OnlinePolicy(k_eval=2)
    laggings, hyps = [], []
    for src in sources:
        tokens, trace = online_greedy_decode([params], src, policy)
        hyps.append(detok_ids(tokens).split())
        if tokens:
            laggings.append(X.average_lagging_words(trace, len(src), len(tokens)))
    expect_al = math.fsum(laggings) / len(laggings) if laggings else 0.0
    expect_bleu = X.corpus_bleu(hyps, [["4", "5"], ["8", "9"]]).score
    rec = recs[1]
    assert rec.al_words == pytest.approx(expect_al, rel=1e-15)
    assert rec.bleu == pytest.approx(expect_bleu, rel=1e-15)


def test_sweep_t2t_validation():
    ts = X.T2TTestset(sources=[], references=[], detokenize=detok_ids)
    with pytest.raises(ValueError):
        X.sweep_t2t([X.T2TSystem("s", [small_params()])], [1], ts)
    ts = X.T2TTestset(sources=[[4]], references=[], detokenize=detok_ids)
    with pytest.raises(ValueError):
        X.sweep_t2t([X.T2TSystem("s", [small_params()])], [1], ts)


def test_sweep_s2t_structure():
    params = small_params(seed=7)
    mt = CascadeMT(models=[params],
                   encode_source=lambda text: [4 + len(w) % 10
                                               for w in text.split()])
    cfg = CascadeConfig(sz=1, alpha=1.0, beta=5.0,
                        endpoint_rules=(EndpointRule("c", 0.5),),
                        block_ms=100.0)
    streams = [[TimedWord("aa", 0, 300), TimedWord("bbb", 400, 300)],
               [TimedWord("cccc", 0, 500)]]
    testset = X.S2TTestset(streams=streams, references=["4 5", "6"],
                           detokenize=detok_ids)
    recs = X.sweep_s2t([X.S2TSystem("cas", mt, cfg)], [1, 2, INFINITE_K], testset)
    assert [r.k_eval for r in recs] == [1, 2, INFINITE_K]
    for r in recs:
        assert 0.0 <= r.bleu <= 1.0
        assert r.al_ms is not None
        assert r.al_ms <= max(s[-1].end_ms for s in streams)


def test_sweep_dispatch():
    params = small_params()
    t2t = X.T2TTestset(sources=[[4, 5]], references=["4"], detokenize=detok_ids)
    recs = X.sweep([X.T2TSystem("s", [params])], [1], t2t)
    assert recs and recs[0].al_ms is None
    with pytest.raises(TypeError):
        X.sweep([], [1], object())
