"""Lattice rescoring by on-demand composition with a difference LM.

Composed states pair a lattice state with a word history.  Exact rescoring
keeps the whole history; the n-gram approximation keeps the last ``n - 1``
words and attaches the LM state of the lowest-cost arrival.  Pruned
rescoring expands composed states best-first by

    H(c) = alpha(c) + beta(a) + delta(c)

and keeps only states within ``beam`` of the best complete path found.
"""

import heapq
import math
from collections import defaultdict
from dataclasses import asdict, dataclass

from .errors import EmptyResult, ExpansionBudgetExceeded, NoFinalState
from .lattice import Arc, Cost, Lattice, TIE_TOL, forward_backward

DEFAULT_BUDGET = 100_000
REIMPROVE_EPS = 1e-12


class DifferenceLm:
    """Per-word cost ``weight * add - subtract``.

    ``tags`` are boundary tokens: the subtract model (the first-pass n-gram)
    scores them as ``</s>`` and restarts from ``<s>``, because the weight they
    carry in a concatenated lattice is the previous lattice's final weight.
    The add model scores them as ordinary words.
    """

    def __init__(self, subtract, add, weight=1.0, tags=()):
        if not 0.0 <= weight <= 1.0:
            raise ValueError("weight must be in [0, 1]")
        self.subtract = subtract
        self.add = add
        self.weight = weight
        self.tags = frozenset(tags)

    def initial_state(self):
        sub = self.subtract.initial_state() if self.subtract is not None else None
        return sub, self.add.initial_state()

    def step(self, state, word):
        sub_state, add_state = state
        if self.subtract is None:
            sub_cost = 0.0
        elif word in self.tags:
            sub_cost = self.subtract.final_cost(sub_state)
            sub_state = self.subtract.initial_state()
        else:
            sub_cost, sub_state = self.subtract.score(sub_state, word)
        add_cost, add_state = self.add.score(add_state, word)
        return sub_cost, add_cost, (sub_state, add_state)

    def final(self, state):
        sub_state, add_state = state
        sub_cost = self.subtract.final_cost(sub_state) if self.subtract is not None else 0.0
        return sub_cost, self.add.final_cost(add_state)

    def combine(self, sub_cost, add_cost):
        return self.weight * add_cost - sub_cost


@dataclass
class RescoreStats:
    method: str = ""
    composed_states: int = 0
    expanded: int = 0
    pruned: int = 0
    reexpansions: int = 0
    output_states: int = 0
    output_arcs: int = 0

    def as_dict(self):
        return asdict(self)


def replace_lm_cost(cost, old_lm_cost, new_lm_cost):
    return Cost(cost.graph - old_lm_cost + new_lm_cost, cost.acoustic)


def _next_hist(hist, word, order):
    if word == 0:
        return hist
    hist = hist + (word,)
    if order is None:
        return hist
    return hist[len(hist) - (order - 1):] if order > 1 else ()


def _arc_step(diff, state, arc):
    if arc.word == 0:
        return 0.0, state
    sub, add, nxt = diff.step(state, arc.word)
    return diff.combine(sub, add), nxt


def _compose(lattice, diff, lm_scale, order, budget, keep=None):
    """Topological composition; ``keep`` restricts which composed keys exist."""
    index = {}
    keys, alpha, lm_states = [], [], []
    by_state = defaultdict(list)

    def create(key, a, st):
        if len(keys) >= budget:
            raise ExpansionBudgetExceeded(
                "more than %d composed states; lower n or use pruned rescoring" % budget)
        index[key] = len(keys)
        keys.append(key)
        alpha.append(a)
        lm_states.append(st)
        by_state[key[0]].append(index[key])
        return index[key]

    create((lattice.start, ()), 0.0, diff.initial_state())
    arcs, finals = [], {}
    for a in lattice.topo_order:
        for ci in by_state[a]:
            hist, st, al = keys[ci][1], lm_states[ci], alpha[ci]
            for arc in lattice.out_arcs(a):
                key = (arc.dst, _next_hist(hist, arc.word, order))
                if keep is not None and key not in keep:
                    continue
                delta_lm, nxt = _arc_step(diff, st, arc)
                cost = Cost(arc.cost.graph + delta_lm, arc.cost.acoustic)
                cand = al + cost.total(lm_scale)
                j = index.get(key)
                if j is None:
                    j = create(key, cand, nxt)
                elif cand < alpha[j]:
                    alpha[j] = cand
                    lm_states[j] = nxt
                arcs.append(Arc(ci, j, arc.word, cost))
            if a in lattice.finals:
                finals[ci] = lattice.finals[a] + diff.combine(*diff.final(st))
    out = Lattice(len(keys), arcs, 0, finals, lattice.vocab)
    if keep is not None:
        try:
            out = out.connect()
        except NoFinalState:
            raise EmptyResult("no complete path survived pruning; widen the beam") from None
    return out, keys


def _finish(out, stats, method, composed, expanded):
    if stats is not None:
        stats.method = method
        stats.composed_states = composed
        stats.expanded = expanded
        stats.output_states = out.num_states
        stats.output_arcs = len(out.arcs)
    return out


def rescore_exact(lattice, diff_lm, lm_scale=1.0, budget=DEFAULT_BUDGET, stats=None):
    """Full composition with unbounded word histories."""
    out, keys = _compose(lattice, diff_lm, lm_scale, None, budget)
    return _finish(out, stats, "exact", len(keys), len(keys))


def rescore_ngram_approx(lattice, diff_lm, lm_scale=1.0, n=4, budget=DEFAULT_BUDGET, stats=None):
    """Composition with histories merged on their last ``n - 1`` words."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out, keys = _compose(lattice, diff_lm, lm_scale, n, budget)
    return _finish(out, stats, "approx", len(keys), len(keys))


def rescore_pruned(lattice, diff_lm, lm_scale=1.0, n=4, beam=15.0, max_reexpand=3,
                   budget=DEFAULT_BUDGET, stats=None):
    """Best-first pruned composition.

    The search decides which composed states to expand; the output lattice is
    then rebuilt over exactly those states so arc costs follow the
    lowest-cost-arrival rule.  With ``beam == 0`` the output is the single
    path to the first final state reached.
    """
    if beam < 0 or math.isnan(beam):
        raise ValueError("beam must be >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    beta = forward_backward(lattice, lm_scale).beta

    index = {}
    keys, alpha, lm_states, delta, parent, times = [], [], [], [], [], []
    prio = []
    heap = []
    counter = 0
    reexpansions = 0

    def push(ci):
        nonlocal counter
        a = keys[ci][0]
        prio[ci] = alpha[ci] + beta[a] + delta[ci]
        heapq.heappush(heap, (prio[ci], counter, ci))
        counter += 1

    def create(key, a, st, par):
        if len(keys) >= budget:
            raise ExpansionBudgetExceeded("more than %d composed states" % budget)
        ci = len(keys)
        index[key] = ci
        keys.append(key)
        alpha.append(a)
        lm_states.append(st)
        delta.append(0.0)
        parent.append(par)
        times.append(0)
        prio.append(None)
        push(ci)
        return ci

    create((lattice.start, ()), 0.0, diff_lm.initial_state(), None)
    best_final = math.inf
    best_final_state = None
    while heap:
        h_old, _, ci = heapq.heappop(heap)
        if prio[ci] is None or h_old != prio[ci]:
            continue  # stale entry
        a, hist = keys[ci]
        h = alpha[ci] + beta[a] + delta[ci]
        if h > best_final + beam:
            break  # heap order: everything left is at least as costly
        prio[ci] = None
        if times[ci]:
            reexpansions += 1
        times[ci] += 1
        st = lm_states[ci]
        for arc in lattice.out_arcs(a):
            key = (arc.dst, _next_hist(hist, arc.word, n))
            delta_lm, nxt = _arc_step(diff_lm, st, arc)
            cand = alpha[ci] + lm_scale * (arc.cost.graph + delta_lm) + arc.cost.acoustic
            j = index.get(key)
            if j is None:
                create(key, cand, nxt, ci)
            elif cand < alpha[j] - REIMPROVE_EPS:
                alpha[j] = cand
                lm_states[j] = nxt
                parent[j] = ci
                if times[j] == 0 or times[j] <= max_reexpand:
                    push(j)
        if a in lattice.finals:
            total = alpha[ci] + lm_scale * (lattice.finals[a] + diff_lm.combine(*diff_lm.final(st)))
            if total < best_final:
                best_final = total
                best_final_state = ci
        p = parent[ci]
        if p is not None:
            ap = keys[p][0]
            delta[p] = min(delta[p], h - (alpha[p] + beta[ap]))
        if beam == 0 and best_final_state is not None:
            break

    if best_final_state is None:
        raise EmptyResult("search finished without reaching a final state; widen the beam")
    expanded = [ci for ci in range(len(keys)) if times[ci]]
    if beam == 0:
        chain = []
        ci = best_final_state
        while ci is not None:
            chain.append(keys[ci])
            ci = parent[ci]
        keep = set(chain)
    else:
        keep = {keys[ci] for ci in expanded}
    out, _ = _compose(lattice, diff_lm, lm_scale, n, budget, keep=keep)
    if beam == 0:
        out = single_best_path(out, lm_scale)
    if stats is not None:
        stats.pruned = len(keys) - len(expanded)
        stats.reexpansions = reexpansions
    return _finish(out, stats, "pruned", len(keys), len(expanded))


def single_best_path(lattice, lm_scale=1.0):
    """Linear lattice holding only the best path (same tie rule as best_path)."""
    order = lattice.topo_order
    best = [None] * lattice.num_states
    for s in reversed(order):
        cand = None
        if s in lattice.finals:
            cand = (lm_scale * lattice.finals[s], (), ())
        for arc in lattice.out_arcs(s):
            nxt = best[arc.dst]
            if nxt is None:
                continue
            words = nxt[1] if arc.word == 0 else (arc.word,) + nxt[1]
            c = (arc.cost.total(lm_scale) + nxt[0], words, (arc,) + nxt[2])
            if cand is None or c[0] < cand[0] - TIE_TOL or (
                    abs(c[0] - cand[0]) <= TIE_TOL and c[1] < cand[1]):
                cand = c
        best[s] = cand
    path = best[lattice.start][2]
    arcs = [Arc(i, i + 1, arc.word, arc.cost) for i, arc in enumerate(path)]
    end = path[-1].dst if path else lattice.start
    return Lattice(len(path) + 1, arcs, 0, {len(path): lattice.finals[end]}, lattice.vocab)


METHODS = ("exact", "approx", "pruned")


def rescore(lattice, diff_lm, method="pruned", lm_scale=1.0, n=4, beam=15.0, stats=None):
    if method == "exact":
        return rescore_exact(lattice, diff_lm, lm_scale, stats=stats)
    if method == "approx":
        return rescore_ngram_approx(lattice, diff_lm, lm_scale, n, stats=stats)
    if method == "pruned":
        return rescore_pruned(lattice, diff_lm, lm_scale, n, beam, stats=stats)
    raise ValueError("unknown rescoring method %r" % method)
