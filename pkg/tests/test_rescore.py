import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxrescore import rnnlm
from ctxrescore.errors import ExpansionBudgetExceeded
from ctxrescore.evaluation import oracle_rescore_nbest
from ctxrescore.lattice import Arc, Cost, Lattice, best_path, linear_lattice, write_lattice_text
from ctxrescore.ngram import score_sentence
from ctxrescore.rescore import (
    DifferenceLm,
    RescoreStats,
    replace_lm_cost,
    rescore,
    rescore_exact,
    rescore_ngram_approx,
    rescore_pruned,
)
from ctxrescore.synth import random_lattice


def longest(lat):
    return max(len(arcs) for arcs, _ in lat.paths())


def dump(lat):
    buf = io.StringIO()
    write_lattice_text(lat, buf)
    return buf.getvalue()


def acoustic_sums(lat):
    return sorted(round(sum(a.cost.acoustic for a in arcs), 9) for arcs, _ in lat.paths())


def test_replace_lm_cost():
    c = Cost(2.0, 5.0)
    assert replace_lm_cost(c, 1.0, 1.0) == c
    assert replace_lm_cost(c, 2.0, 3.0) == Cost(3.0, 5.0)


def test_replace_lm_cost_path_sum(vocab, bigram, unigram):
    words = vocab.ids(["w1", "w2", "w3"])
    old = [bigram.score(s, w)[0] for s, w in zip(_states(bigram, words), words)]
    new = [unigram.score((), w)[0] for w in words]
    costs = [Cost(o + 1.0, 2.0) for o in old]
    replaced = [replace_lm_cost(c, o, n) for c, o, n in zip(costs, old, new)]
    delta = sum(r.graph for r in replaced) - sum(c.graph for c in costs)
    assert delta == pytest.approx(sum(new) - sum(old))


def _states(model, words):
    out, st = [], model.initial_state()
    for w in words:
        out.append(st)
        st = model.score(st, w)[1]
    return out


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_identity_difference_keeps_best_path(vocab, bigram, seed):
    lat = random_lattice(np.random.default_rng(seed), vocab=vocab, max_states=8)
    diff = DifferenceLm(bigram, bigram)
    out = rescore_exact(lat, diff)
    assert best_path(out)[0] == best_path(lat)[0]
    assert best_path(out)[1] == pytest.approx(best_path(lat)[1], abs=1e-9)


def test_linear_lattice_graph_costs_shift_by_word(vocab, bigram, micro_lm):
    words = vocab.ids(["w3", "w1", "w5"])
    lat = linear_lattice(words, [(1.0, 2.0), (0.5, 1.0), (0.25, 3.0)], final_cost=0.5, vocab=vocab)
    out = rescore_exact(lat, DifferenceLm(bigram, micro_lm))
    assert out.num_states == 4 and len(out.arcs) == 3
    sub_states, add_state = _states(bigram, words), micro_lm.initial_state()
    for arc, old, w, sst in zip(sorted(out.arcs, key=lambda a: a.src), lat.arcs, words, sub_states):
        add, add_state = micro_lm.score(add_state, w)
        assert arc.cost.graph == pytest.approx(old.cost.graph + add - bigram.score(sst, w)[0], abs=1e-12)
        assert arc.cost.acoustic == old.cost.acoustic
    total = best_path(out)[1]
    expected = (sum(c[0] + c[1] for c in [(1.0, 2.0), (0.5, 1.0), (0.25, 3.0)]) + 0.5
                + rnnlm.score_sentence(micro_lm, words) - score_sentence(bigram, words))
    assert total == pytest.approx(expected, abs=1e-9)


def test_three_path_lattice_matches_enumeration(vocab, unigram, bigram):
    w = vocab.id
    arcs = [Arc(0, 1, w("w1"), Cost(0.3, 1.0)), Arc(0, 1, w("w2"), Cost(0.2, 1.1)),
            Arc(1, 2, w("w3"), Cost(0.1, 0.5)), Arc(0, 2, w("w4"), Cost(1.0, 1.2))]
    lat = Lattice(3, arcs, 0, {2: 0.0}, vocab)
    diff = DifferenceLm(unigram, bigram)
    scored = []
    for seq, base in (([w("w1"), w("w3")], 1.9), ([w("w2"), w("w3")], 1.9), ([w("w4")], 2.2)):
        delta = score_sentence(bigram, seq) - score_sentence(unigram, seq)
        scored.append((base + delta, seq))
    cost, seq = min(scored)
    words, got = best_path(rescore_exact(lat, diff))
    assert words == seq and got == pytest.approx(cost, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_exact_matches_oracle(vocab, diff_lm, seed):
    lat = random_lattice(np.random.default_rng(seed), vocab=vocab, max_states=9)
    words, cost = best_path(rescore_exact(lat, diff_lm))
    ow, oc = oracle_rescore_nbest(lat, diff_lm)
    assert words == ow
    assert cost == pytest.approx(oc, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_approx_with_long_histories_is_exact(vocab, diff_lm, seed):
    lat = random_lattice(np.random.default_rng(seed), vocab=vocab, max_states=9)
    ew, ec = best_path(rescore_exact(lat, diff_lm))
    aw, ac = best_path(rescore_ngram_approx(lat, diff_lm, n=longest(lat) + 1))
    assert aw == ew and ac == pytest.approx(ec, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 4))
def test_acoustic_costs_preserved(vocab, diff_lm, seed, n):
    lat = random_lattice(np.random.default_rng(seed), vocab=vocab, max_states=8)
    assert acoustic_sums(rescore_exact(lat, diff_lm)) == acoustic_sums(lat)
    assert set(acoustic_sums(rescore_ngram_approx(lat, diff_lm, n=n))) == set(acoustic_sums(lat))


def test_unigram_approx_merges_everything(vocab, diff_lm):
    lat = random_lattice(np.random.default_rng(5), vocab=vocab)
    stats = RescoreStats()
    rescore_ngram_approx(lat, diff_lm, n=1, stats=stats)
    assert stats.composed_states == lat.num_states


def test_diamond_merge_by_hand(vocab, diff_lm):
    # 0 -a-> 1 -c-> 3 -d-> 4,  0 -b-> 2 -c-> 3 : prefixes "a c" and "b c"
    w = vocab.id
    arcs = [Arc(0, 1, w("w1"), Cost(0, 1)), Arc(0, 2, w("w2"), Cost(0, 2)),
            Arc(1, 3, w("w3"), Cost(0, 1)), Arc(2, 3, w("w3"), Cost(0, 1)),
            Arc(3, 4, w("w4"), Cost(0, 1))]
    lat = Lattice(5, arcs, 0, {4: 0.0}, vocab)
    # n=2: histories are the last word, so both arrivals at 3 share (3, (c,))
    expected = {(0, ()), (1, (w("w1"),)), (2, (w("w2"),)), (3, (w("w3"),)), (4, (w("w4"),))}
    stats = RescoreStats()
    out = rescore_ngram_approx(lat, diff_lm, n=2, stats=stats)
    assert stats.composed_states == len(expected) == out.num_states
    # n=3 keeps the prefixes apart at 3; at 4 both histories end in (c, d)
    expected3 = {(0, ()), (1, (w("w1"),)), (2, (w("w2"),)), (3, (w("w1"), w("w3"))),
                 (3, (w("w2"), w("w3"))), (4, (w("w3"), w("w4")))}
    rescore_ngram_approx(lat, diff_lm, n=3, stats=stats)
    assert stats.composed_states == len(expected3)


def test_merged_state_keeps_lowest_cost_arrival(vocab, bigram, micro_lm):
    """With n=1 the LM state at a merge point is the one of the best prefix."""
    w = vocab.id
    arcs = [Arc(0, 1, w("w1"), Cost(0, 5.0)), Arc(0, 1, w("w2"), Cost(0, 0.0)),
            Arc(1, 2, w("w3"), Cost(0, 0.0))]
    lat = Lattice(3, arcs, 0, {2: 0.0}, vocab)
    diff = DifferenceLm(None, micro_lm)
    out = rescore_ngram_approx(lat, diff, n=1)
    second = [a for a in out.arcs if a.word == w("w3")][0]
    state = rnnlm.history_state(micro_lm, [w("w2")])
    assert second.cost.graph == pytest.approx(micro_lm.score(state, w("w3"))[0], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 5))
def test_pruned_with_huge_beam_equals_approx(vocab, diff_lm, seed, n):
    lat = random_lattice(np.random.default_rng(seed), vocab=vocab)
    pw, pc = best_path(rescore_pruned(lat, diff_lm, n=n, beam=1e6))
    aw, ac = best_path(rescore_ngram_approx(lat, diff_lm, n=n))
    assert pw == aw and pc == pytest.approx(ac, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_beam_zero_gives_single_path(vocab, diff_lm, seed):
    lat = random_lattice(np.random.default_rng(seed), vocab=vocab)
    out = rescore_pruned(lat, diff_lm, n=3, beam=0.0)
    assert out.num_paths() == 1
    assert len(out.arcs) == out.num_states - 1


def test_pruned_suite_beam_15(vocab, diff_lm):
    rng = np.random.default_rng(123)
    agree = 0
    for _ in range(100):
        lat = random_lattice(rng, vocab=vocab)
        n = longest(lat) + 1
        ps, es = RescoreStats(), RescoreStats()
        pc = best_path(rescore_pruned(lat, diff_lm, n=n, beam=15.0, stats=ps))[1]
        ec = best_path(rescore_exact(lat, diff_lm, stats=es))[1]
        agree += abs(pc - ec) <= 1e-9
        if es.composed_states > 50:
            assert ps.expanded < es.composed_states
    assert agree >= 99


def test_admissible_beam_exists(vocab, diff_lm):
    """For each lattice some finite beam reproduces the unpruned best cost."""
    rng = np.random.default_rng(7)
    for _ in range(30):
        lat = random_lattice(rng, vocab=vocab)
        target = best_path(rescore_ngram_approx(lat, diff_lm, n=3))[1]
        for beam in (1.0, 5.0, 15.0, 50.0, 1e3, 1e9):
            if abs(best_path(rescore_pruned(lat, diff_lm, n=3, beam=beam))[1] - target) <= 1e-9:
                break
        else:
            pytest.fail("no beam matched the unpruned cost")


def test_output_is_deterministic(vocab, diff_lm):
    lat = random_lattice(np.random.default_rng(11), vocab=vocab)
    for method in ("exact", "approx", "pruned"):
        assert dump(rescore(lat, diff_lm, method)) == dump(rescore(lat, diff_lm, method))


def test_budget_and_argument_errors(vocab, diff_lm):
    lat = random_lattice(np.random.default_rng(2), vocab=vocab, num_states=10)
    with pytest.raises(ExpansionBudgetExceeded):
        rescore_exact(lat, diff_lm, budget=3)
    with pytest.raises(ValueError):
        rescore_pruned(lat, diff_lm, beam=-1.0)
    with pytest.raises(ValueError):
        rescore_ngram_approx(lat, diff_lm, n=0)
    with pytest.raises(ValueError):
        rescore(lat, diff_lm, "beam-search")
    with pytest.raises(ValueError):
        DifferenceLm(None, diff_lm.add, weight=1.5)


def test_interpolation_weight(vocab, bigram, micro_lm):
    words = vocab.ids(["w1", "w2"])
    lat = linear_lattice(words, [(0, 0), (0, 0)], vocab=vocab)
    half = best_path(rescore_exact(lat, DifferenceLm(bigram, micro_lm, weight=0.5)))[1]
    expected = 0.5 * rnnlm.score_sentence(micro_lm, words) - score_sentence(bigram, words)
    assert half == pytest.approx(expected, abs=1e-9)
