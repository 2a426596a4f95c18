import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxrescore.context import (
    ConcatPolicy,
    _depths,
    concat_lattices,
    extract_context_region,
    rescore_with_context,
    should_concat,
)
from ctxrescore.errors import TagNotFound, VocabMismatch
from ctxrescore.lattice import Arc, Cost, Lattice, best_path, linear_lattice
from ctxrescore.rescore import DifferenceLm, rescore
from ctxrescore.synth import random_lattice
from ctxrescore.textprep import Dialogue, Utterance, fit_tfidf
from ctxrescore.vocab import Vocabulary

from conftest import make_vocab


def path_set(lat):
    out = []
    for arcs, final in lat.paths():
        out.append((tuple(a.word for a in arcs),
                    sum(a.cost.graph for a in arcs) + final,
                    sum(a.cost.acoustic for a in arcs)))
    return sorted(out)


def product_set(prev, cur, tag):
    out = []
    for pw, pg, pa in path_set(prev):
        for cw, cg, ca in path_set(cur):
            out.append((pw + (tag,) + cw, pg + cg, pa + ca))
    return sorted(out)


def same_paths(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x[0] == y[0]
        assert x[1] == pytest.approx(y[1], abs=1e-9)
        assert x[2] == pytest.approx(y[2], abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 5))
def test_concat_path_set_is_product(vocab, seed, n):
    rng = np.random.default_rng(seed)
    prev = random_lattice(rng, vocab=vocab, max_states=6)
    cur = random_lattice(rng, vocab=vocab, max_states=6)
    tag = vocab.id("SP")
    joined = concat_lattices(prev, cur, tag, n)
    same_paths(path_set(joined), product_set(prev, cur, tag))


def test_duplicated_region_follows_depth_rule(vocab):
    rng = np.random.default_rng(3)
    prev = random_lattice(rng, vocab=vocab, num_states=4)
    while len(prev.finals) < 2:
        prev = random_lattice(rng, vocab=vocab, num_states=4)
    cur = random_lattice(rng, vocab=vocab, num_states=7)
    depth = _depths(cur)
    for n in (1, 2, 3, 4, 6):
        limit = max(0, n - 2)
        dup = sum(d <= limit for d in depth)
        joined = concat_lattices(prev, cur, vocab.id("SP"), n)
        expected = prev.num_states + len(prev.finals) * dup + (cur.num_states - dup)
        assert joined.num_states == expected
        tag_arcs = [a for a in joined.arcs if a.word == vocab.id("SP")]
        assert len(tag_arcs) == len(prev.finals)
        assert all(a.cost == Cost(prev.finals[a.src], 0.0) for a in tag_arcs)
        # distinct tag states per previous final
        assert len({a.dst for a in tag_arcs}) == len(prev.finals)


def test_concat_errors(vocab):
    lat = linear_lattice([5], [(0, 0)], vocab=vocab)
    other = linear_lattice([4], [(0, 0)], vocab=Vocabulary(["x", "y"]))
    with pytest.raises(VocabMismatch):
        concat_lattices(lat, other, vocab.id("SP"))
    with pytest.raises(VocabMismatch):
        concat_lattices(lat, lat, 10_000)


@pytest.fixture(scope="module")
def unigram_diff(vocab, unigram, bigram):
    from ctxrescore.ngram import train_ngram
    from conftest import WORDS, toy_sentences

    other = train_ngram(toy_sentences(9), vocab, order=1, words=WORDS + ["SP"])
    return DifferenceLm(unigram, other, tags=vocab.tag_ids())


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_extraction_equals_standalone_with_unigram_diff(vocab, unigram_diff, seed):
    rng = np.random.default_rng(seed)
    prev = random_lattice(rng, vocab=vocab, max_states=6)
    cur = random_lattice(rng, vocab=vocab, max_states=6)
    tag = vocab.id("SP")
    joined = rescore(concat_lattices(prev, cur, tag, 4), unigram_diff, "exact")
    words, _ = extract_context_region(joined, tag, "best")
    alone, _ = best_path(rescore(cur, unigram_diff, "exact"))
    assert words == alone


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_lattice_mode_extraction_keeps_best_cost(vocab, diff_lm, seed):
    rng = np.random.default_rng(seed)
    prev = random_lattice(rng, vocab=vocab, max_states=6)
    cur = random_lattice(rng, vocab=vocab, max_states=6)
    tag = vocab.id("SP")
    joined = rescore(concat_lattices(prev, cur, tag, 3), diff_lm, "approx", n=3)
    words, cost = extract_context_region(joined, tag, "best")
    region = extract_context_region(joined, tag, "lattice")
    rw, rc = best_path(region)
    assert rc == pytest.approx(cost, abs=1e-9)
    assert rw == words
    assert tag not in set(a.word for a in region.arcs)


def test_tag_not_found(vocab):
    lat = linear_lattice([5, 6], [(0, 0), (0, 0)], vocab=vocab)
    with pytest.raises(TagNotFound):
        extract_context_region(lat, vocab.id("SP"), "best")
    with pytest.raises(TagNotFound):
        extract_context_region(lat, vocab.id("SP"), "lattice")


def test_should_concat_is_strict():
    model = fit_tfidf([["a", "b"], ["b", "c"], ["c", "d"]])
    yes, sim = should_concat(["a", "b"], ["a", "b"], model, ConcatPolicy(threshold=0.5))
    assert yes and sim == pytest.approx(1.0, abs=1e-9)
    sim_ab = model.similarity(["a", "b"], ["b", "c"])
    assert should_concat(["a", "b"], ["b", "c"], model, ConcatPolicy(threshold=sim_ab))[0] is False
    assert should_concat(["a"], ["d"], model, ConcatPolicy(threshold=None)) == (True, 0.0)
    assert should_concat(["a"], ["d"], model, ConcatPolicy(threshold=0.0))[0] is False


def _dialogue(vocab, rng, n=5):
    utts, lats = [], []
    for i in range(n):
        lat = random_lattice(rng, vocab=vocab, max_states=6)
        words = vocab.words(best_path(lat)[0])
        utts.append(Utterance(speaker="ab"[i % 2], tokens=words, conv_id="c", utt_index=i))
        lats.append(lat)
    return Dialogue("c", utts), lats


def test_context_rescoring_gating(vocab, diff_lm):
    rng = np.random.default_rng(0)
    dlg, lats = _dialogue(vocab, rng)
    model = fit_tfidf([vocab.words(best_path(l)[0]) for l in lats])
    plain = [r.to_json() for r in rescore_with_context(dlg, lats, diff_lm, None, model, "exact")]
    closed = [r.to_json() for r in rescore_with_context(
        dlg, lats, diff_lm, ConcatPolicy("SP", 1.0), model, "exact")]
    for a, b in zip(plain, closed):
        assert a["hypothesis"] == b["hypothesis"] and not b["concatenated"]
    counts = []
    for tau in (0.0, 0.1, 0.3, 0.5, 0.9):
        res = rescore_with_context(dlg, lats, diff_lm, ConcatPolicy("SP", tau), model, "exact")
        counts.append(sum(r.concatenated for r in res))
        for r, p in zip(res, plain):
            if not r.concatenated:
                assert r.hypothesis == p["hypothesis"].split()
    assert counts == sorted(counts, reverse=True)
    always = rescore_with_context(dlg, lats, diff_lm, ConcatPolicy("SP"), model, "exact")
    assert [r.concatenated for r in always] == [False] + [True] * 4


def test_selective_needs_tfidf(vocab, diff_lm):
    dlg, lats = _dialogue(vocab, np.random.default_rng(1), 2)
    with pytest.raises(ValueError):
        rescore_with_context(dlg, lats, diff_lm, ConcatPolicy("SP", 0.3), None)


def test_sid_tags_and_depth(vocab, bigram, micro_lm):
    v = make_vocab(extra=("SP", "SID_A", "SID_B"))
    rng = np.random.default_rng(2)
    dlg, lats = _dialogue(v, rng, 3)
    from ctxrescore import rnnlm

    lm = rnnlm.init(rnnlm.RnnLmConfig(embed_dim=4, hidden_dim=4), v)
    diff = DifferenceLm(None, lm, tags=v.tag_ids())
    for depth in (1, 2):
        res = rescore_with_context(dlg, lats, diff, ConcatPolicy("SID", depth=depth), None, "approx")
        assert [r.concatenated for r in res] == [False, True, True]
        for r in res:
            assert not any(t.startswith("SID_") for t in r.hypothesis)
            assert math.isfinite(r.cost)


def test_tag_state_copies_start_arcs(vocab):
    prev = Lattice(2, [Arc(0, 1, 8, Cost(1, 1))], 0, {1: 0.5}, vocab)
    cur = Lattice(3, [Arc(0, 1, 5, Cost(2, 2)), Arc(0, 2, 6, Cost(3, 3)), Arc(1, 2, 7, Cost(1, 0))],
                  0, {2: 0.25}, vocab)
    tag = vocab.id("SP")
    joined = concat_lattices(prev, cur, tag, n=2)
    tag_arc = [a for a in joined.arcs if a.word == tag][0]
    out = sorted((a.word, a.cost) for a in joined.out_arcs(tag_arc.dst))
    assert out == [(5, Cost(2, 2)), (6, Cost(3, 3))]
