"""Cross-utterance lattice concatenation and tf-idf gating.

The previous utterance's first-pass lattice is joined to the current one
through a tag arc per previous final state.  The tag arc carries the previous
final weight; arcs leaving each tag state copy the current start state's
out-arcs with their weights.  Current-lattice states up to depth ``n - 2``
are duplicated per previous final so n-gram histories across the boundary
stay distinct; deeper states are shared.
"""

import logging
import math
from dataclasses import dataclass

from .errors import CycleCreated, InvalidLattice, TagNotFound, VocabMismatch
from .lattice import Arc, Cost, Lattice, best_path, forward_backward
from .rescore import DifferenceLm, RescoreStats, rescore
from .textprep import junction_tag

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TagWord:
    kind: str  # "SP", "SID" or "INT"
    token: str

    def id(self, vocab):
        return vocab.id(self.token)


@dataclass
class ConcatPolicy:
    tag: str = "SP"
    threshold: float = None  # None: always concatenate
    depth: int = 1
    side: str = "earlier"  # which utterance an SID tag names


def _depths(lattice):
    """Longest arc distance from the start for each state."""
    depth = [0] * lattice.num_states
    for s in lattice.topo_order:
        for arc in lattice.out_arcs(s):
            depth[arc.dst] = max(depth[arc.dst], depth[s] + 1)
    return depth


def concat_lattices(prev, cur, tag, n=4):
    """Join ``prev -> tag -> cur``; ``tag`` is a token id in the shared vocabulary."""
    if prev.vocab is not None and cur.vocab is not None and prev.vocab != cur.vocab:
        raise VocabMismatch("lattices use different vocabularies")
    vocab = prev.vocab if prev.vocab is not None else cur.vocab
    if vocab is not None and not 0 < tag < len(vocab):
        raise VocabMismatch("tag id %r not in vocabulary" % tag)
    prev.validate()
    cur.validate()

    depth = _depths(cur)
    limit = max(0, n - 2)
    dup = [s for s in cur.topo_order if depth[s] <= limit]
    shared = [s for s in cur.topo_order if depth[s] > limit]

    arcs = list(prev.arcs)
    num = prev.num_states
    shared_id = {}
    for s in shared:
        shared_id[s] = num
        num += 1
    finals = {}
    for f in sorted(prev.finals):
        # the copy of the current start is the tag state
        copy = {s: num + i for i, s in enumerate(dup)}
        num += len(dup)
        arcs.append(Arc(f, copy[cur.start], tag, Cost(prev.finals[f], 0.0)))
        for s in dup:
            for arc in cur.out_arcs(s):
                dst = copy.get(arc.dst, shared_id.get(arc.dst))
                arcs.append(Arc(copy[s], dst, arc.word, arc.cost))
            if s in cur.finals:
                finals[copy[s]] = cur.finals[s]
    for s in shared:
        for arc in cur.out_arcs(s):
            arcs.append(Arc(shared_id[s], shared_id[arc.dst], arc.word, arc.cost))
        if s in cur.finals:
            finals[shared_id[s]] = cur.finals[s]
    out = Lattice(num, arcs, prev.start, finals, vocab)
    try:
        out.validate()
    except InvalidLattice as exc:
        raise CycleCreated("concatenation produced an invalid lattice: %s" % exc) from None
    return out


def extract_context_region(rescored, tag, mode="best", lm_scale=1.0):
    """Keep only what follows the last tag arc.

    ``mode="best"`` returns ``(words, cost)`` of the best path's suffix;
    ``mode="lattice"`` returns a sub-lattice whose new start replicates the
    out-arcs of every tag-arc destination, with the best prefix cost up to
    that destination folded into the replicated arcs' acoustic cost.
    """
    if mode == "best":
        words, cost = best_path(rescored, lm_scale)
        if tag not in words:
            raise TagNotFound("best path has no tag arc")
        cut = len(words) - 1 - words[::-1].index(tag)
        return words[cut + 1:], cost
    if mode != "lattice":
        raise ValueError("mode must be 'best' or 'lattice'")

    tag_dsts = sorted({a.dst for a in rescored.arcs if a.word == tag})
    if not tag_dsts:
        raise TagNotFound("lattice has no tag arc")
    alpha = forward_backward(rescored, lm_scale).alpha
    # states strictly after some tag destination, reachable without another tag
    keep = set()
    stack = list(tag_dsts)
    while stack:
        s = stack.pop()
        if s in keep:
            continue
        keep.add(s)
        for arc in rescored.out_arcs(s):
            if arc.word != tag:
                stack.append(arc.dst)
    remap = {s: i + 1 for i, s in enumerate(sorted(keep))}
    arcs, finals = [], {}
    start_final = math.inf
    for d in tag_dsts:
        for arc in rescored.out_arcs(d):
            if arc.word == tag:
                continue
            arcs.append(Arc(0, remap[arc.dst], arc.word,
                            Cost(arc.cost.graph, arc.cost.acoustic + alpha[d])))
        if d in rescored.finals:
            start_final = min(start_final, rescored.finals[d] + alpha[d] / lm_scale)
    for s in keep:
        for arc in rescored.out_arcs(s):
            if arc.word != tag and arc.dst in keep:
                arcs.append(Arc(remap[s], remap[arc.dst], arc.word, arc.cost))
        if s in rescored.finals:
            finals[remap[s]] = rescored.finals[s]
    if start_final < math.inf:
        finals[0] = start_final
    return Lattice(len(remap) + 1, arcs, 0, finals, rescored.vocab).connect()


def should_concat(prev_hyp, cur_hyp, model, policy):
    """Return ``(decision, similarity)``; the comparison is strict ``>``."""
    sim = model.similarity(prev_hyp, cur_hyp)
    if policy.threshold is None:
        return True, sim
    return sim > policy.threshold, sim


@dataclass
class UtteranceResult:
    conv_id: str
    utt_index: int
    hypothesis: list
    similarity: float
    concatenated: bool
    cost: float
    stats: dict

    def to_json(self):
        return {
            "conv_id": self.conv_id,
            "utt_index": self.utt_index,
            "hypothesis": " ".join(self.hypothesis),
            "similarity": self.similarity,
            "concatenated": self.concatenated,
            "costs": {"total": self.cost},
        }


def rescore_with_context(dialogue, lattices, diff_lm, policy, tfidf=None, method="pruned",
                         lm_scale=1.0, n=4, beam=15.0, first_pass=None):
    """Rescore every utterance of one dialogue, concatenating gated pairs.

    ``lattices`` are first-pass lattices aligned with ``dialogue.utterances``.
    ``policy=None`` disables concatenation entirely.  ``first_pass`` may hold
    precomputed 1-best word-id lists; otherwise they are computed here.
    """
    vocab = lattices[0].vocab
    if first_pass is None:
        first_pass = [best_path(lat, lm_scale)[0] for lat in lattices]
    results = []
    for i, (utt, lat) in enumerate(zip(dialogue.utterances, lattices)):
        stats = RescoreStats()
        concat, sim = False, 0.0
        if policy is not None and i > 0:
            prev_words = vocab.words(first_pass[i - 1]) if vocab else first_pass[i - 1]
            cur_words = vocab.words(first_pass[i]) if vocab else first_pass[i]
            if tfidf is None and policy.threshold is not None:
                raise ValueError("a tf-idf model is required for selective concatenation")
            if tfidf is not None:
                concat, sim = should_concat(prev_words, cur_words, tfidf, policy)
            else:
                concat = True
        if concat:
            joined = lat
            depth = min(policy.depth, i)
            tag_id = None
            for back in range(1, depth + 1):
                prev_utt = dialogue.utterances[i - back]
                tok = junction_tag(dialogue, prev_utt, policy.tag, policy.side)
                tid = vocab.id(tok)
                if tag_id is None:
                    tag_id = tid
                joined = concat_lattices(lattices[i - back], joined, tid, n)
            out = rescore(joined, diff_lm, method, lm_scale, n, beam, stats=stats)
            words, cost = extract_context_region(out, tag_id, "best", lm_scale)
        else:
            out = rescore(lat, diff_lm, method, lm_scale, n, beam, stats=stats)
            words, cost = best_path(out, lm_scale)
        hyp = vocab.words(words) if vocab else [str(w) for w in words]
        results.append(UtteranceResult(dialogue.conv_id, utt.utt_index, hyp, sim, concat, cost,
                                       stats.as_dict()))
    return results


def make_diff_lm(subtract, add, vocab, weight=1.0):
    return DifferenceLm(subtract, add, weight, tags=vocab.tag_ids())
