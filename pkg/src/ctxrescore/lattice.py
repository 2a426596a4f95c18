"""Acyclic word lattices with paired (graph, acoustic) costs.

Costs are negative natural logs.  At ranking time an arc contributes
``lm_scale * graph + acoustic``; final costs ride the graph side and are
scaled the same way.
"""

import math
from collections import deque
from typing import NamedTuple

import numpy as np

from .errors import (
    CyclicLattice,
    InvalidLattice,
    NoFinalState,
    ParseError,
    UnknownToken,
    UnreachableState,
)

TIE_TOL = 1e-9


class Cost(NamedTuple):
    graph: float
    acoustic: float

    def total(self, lm_scale=1.0):
        return lm_scale * self.graph + self.acoustic


class Arc(NamedTuple):
    src: int
    dst: int
    word: int
    cost: Cost


class ValidationReport(NamedTuple):
    num_states: int
    num_arcs: int
    topo_order: tuple
    epsilon_free: bool


class PathCosts(NamedTuple):
    alpha: np.ndarray
    beta: np.ndarray


class Lattice:
    """Immutable-by-convention lattice.  Call :meth:`validate` before search."""

    def __init__(self, num_states, arcs, start, finals, vocab=None):
        self.num_states = int(num_states)
        self.arcs = [a if isinstance(a.cost, Cost) else a._replace(cost=Cost(*a.cost)) for a in arcs]
        self.start = int(start)
        self.finals = {int(s): float(c) for s, c in finals.items()}
        self.vocab = vocab
        self._topo = None
        self._out = None

    def __repr__(self):
        return "Lattice(states=%d, arcs=%d, finals=%d)" % (
            self.num_states, len(self.arcs), len(self.finals))

    def out_arcs(self, state):
        if self._out is None:
            out = [[] for _ in range(self.num_states)]
            for arc in self.arcs:
                out[arc.src].append(arc)
            self._out = out
        return self._out[state]

    @property
    def topo_order(self):
        if self._topo is None:
            self.validate()
        return self._topo

    def validate(self):
        n = self.num_states
        if n < 1 or not 0 <= self.start < n:
            raise InvalidLattice("start state %d out of range" % self.start)
        if not self.finals:
            raise NoFinalState("lattice has no final state")
        indeg = [0] * n
        succ = [[] for _ in range(n)]
        pred = [[] for _ in range(n)]
        for arc in self.arcs:
            if not (0 <= arc.src < n and 0 <= arc.dst < n):
                raise InvalidLattice("arc %s references a state out of range" % (arc,))
            if arc.src == arc.dst:
                raise CyclicLattice("self-loop on state %d" % arc.src)
            indeg[arc.dst] += 1
            succ[arc.src].append(arc.dst)
            pred[arc.dst].append(arc.src)
        for s in self.finals:
            if not 0 <= s < n:
                raise InvalidLattice("final state %d out of range" % s)

        # Kahn's algorithm; ties resolved by state id for a stable order.
        order = []
        ready = deque(sorted(s for s in range(n) if indeg[s] == 0))
        while ready:
            s = ready.popleft()
            order.append(s)
            for t in succ[s]:
                indeg[t] -= 1
                if indeg[t] == 0:
                    ready.append(t)
        if len(order) != n:
            raise CyclicLattice("lattice contains a cycle")

        fwd = _reach(self.start, succ)
        bwd = set()
        for f in self.finals:
            bwd |= _reach(f, pred)
        for s in range(n):
            if s not in fwd:
                raise UnreachableState("state %d is not reachable from the start" % s)
            if s not in bwd:
                raise UnreachableState("state %d cannot reach a final state" % s)

        self._topo = tuple(order)
        eps_free = all(arc.word != 0 for arc in self.arcs)
        return ValidationReport(n, len(self.arcs), self._topo, eps_free)

    def connect(self):
        """Copy with states that are not on any start->final path removed."""
        n = self.num_states
        succ = [[] for _ in range(n)]
        pred = [[] for _ in range(n)]
        for arc in self.arcs:
            succ[arc.src].append(arc.dst)
            pred[arc.dst].append(arc.src)
        keep = _reach(self.start, succ)
        bwd = set()
        for f in self.finals:
            bwd |= _reach(f, pred)
        keep &= bwd
        if self.start not in keep:
            raise NoFinalState("no final state is reachable from the start")
        remap = {s: i for i, s in enumerate(sorted(keep))}
        arcs = [Arc(remap[a.src], remap[a.dst], a.word, a.cost)
                for a in self.arcs if a.src in keep and a.dst in keep]
        finals = {remap[s]: c for s, c in self.finals.items() if s in keep}
        return Lattice(len(remap), arcs, remap[self.start], finals, self.vocab)

    def paths(self, limit=None):
        """Yield ``(arcs, final_cost)`` for every start->final path (DFS order)."""
        count = 0
        stack = [(self.start, ())]
        while stack:
            s, prefix = stack.pop()
            if s in self.finals:
                count += 1
                if limit is not None and count > limit:
                    raise InvalidLattice("more than %d paths" % limit)
                yield prefix, self.finals[s]
            for arc in reversed(self.out_arcs(s)):
                stack.append((arc.dst, prefix + (arc,)))

    def num_paths(self):
        counts = [0] * self.num_states
        for s in reversed(self.topo_order):
            counts[s] = (1 if s in self.finals else 0) + sum(counts[a.dst] for a in self.out_arcs(s))
        return counts[self.start]

    def words(self, ids):
        if self.vocab is None:
            return [str(i) for i in ids]
        return self.vocab.words(ids)


def _reach(src, adj):
    seen = {src}
    stack = [src]
    while stack:
        s = stack.pop()
        for t in adj[s]:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def validate(lattice):
    return lattice.validate()


def forward_backward(lattice, lm_scale=1.0):
    """Viterbi (min, +) forward and backward costs.

    ``beta`` includes the scaled final cost, so ``alpha[s] + beta[s]`` is the
    cost of the best complete path through ``s``.
    """
    if lm_scale <= 0:
        raise ValueError("lm_scale must be positive")
    order = lattice.topo_order
    n = lattice.num_states
    alpha = np.full(n, math.inf)
    beta = np.full(n, math.inf)
    alpha[lattice.start] = 0.0
    for s in order:
        a = alpha[s]
        if a == math.inf:
            continue
        for arc in lattice.out_arcs(s):
            c = a + arc.cost.total(lm_scale)
            if c < alpha[arc.dst]:
                alpha[arc.dst] = c
    for s in reversed(order):
        b = lm_scale * lattice.finals[s] if s in lattice.finals else math.inf
        for arc in lattice.out_arcs(s):
            c = arc.cost.total(lm_scale) + beta[arc.dst]
            if c < b:
                b = c
        beta[s] = b
    return PathCosts(alpha, beta)


def best_path(lattice, lm_scale=1.0):
    """Minimum-cost word sequence and its total cost.

    Epsilon labels are dropped.  Costs within 1e-9 count as tied; ties go to
    the lexicographically smaller word-id sequence.
    """
    order = lattice.topo_order
    best = [None] * lattice.num_states
    for s in reversed(order):
        cand = None
        if s in lattice.finals:
            cand = (lm_scale * lattice.finals[s], ())
        for arc in lattice.out_arcs(s):
            nxt = best[arc.dst]
            if nxt is None:
                continue
            words = nxt[1] if arc.word == 0 else (arc.word,) + nxt[1]
            c = (arc.cost.total(lm_scale) + nxt[0], words)
            if cand is None or _better(c, cand):
                cand = c
        best[s] = cand
    if best[lattice.start] is None:
        raise InvalidLattice("no complete path")
    cost, words = best[lattice.start]
    return list(words), cost


def _better(a, b):
    if a[0] < b[0] - TIE_TOL:
        return True
    if a[0] > b[0] + TIE_TOL:
        return False
    return a[1] < b[1]


def path_cost(arcs, final_cost, lm_scale=1.0):
    return sum(a.cost.total(lm_scale) for a in arcs) + lm_scale * final_cost


def read_lattice_text(stream, vocab=None, allow_epsilon=False, map_unknown=False):
    """Parse the line format ``src dst word g,a`` / ``state [final_cost]``.

    Without a vocabulary, words must be integer ids.  ``map_unknown`` sends
    out-of-vocabulary words to ``<unk>`` instead of raising.
    """
    arcs = []
    finals = {}
    start = None
    max_state = -1
    for lineno, raw in enumerate(stream, 1):
        fields = raw.split()
        if not fields:
            continue
        try:
            if len(fields) == 4:
                src, dst = int(fields[0]), int(fields[1])
                if src < 0 or dst < 0:
                    raise ParseError("negative state id", lineno)
                g, a = fields[3].split(",")
                cost = Cost(float(g), float(a))
                word = _word_id(fields[2], vocab, lineno, map_unknown)
                if word == 0 and not allow_epsilon:
                    raise ParseError("epsilon arc not allowed", lineno)
                if start is None:
                    start = src
                arcs.append(Arc(src, dst, word, cost))
                max_state = max(max_state, src, dst)
            elif len(fields) in (1, 2):
                s = int(fields[0])
                if s < 0:
                    raise ParseError("negative state id", lineno)
                if start is None:
                    start = s
                finals[s] = float(fields[1]) if len(fields) == 2 else 0.0
                max_state = max(max_state, s)
            else:
                raise ParseError("expected 1, 2 or 4 fields, got %d" % len(fields), lineno)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    if start is None:
        raise ParseError("NoStartState: empty lattice")
    for c in [a.cost for a in arcs] + [Cost(f, 0.0) for f in finals.values()]:
        if not (math.isfinite(c.graph) and math.isfinite(c.acoustic)):
            raise ParseError("non-finite cost")
    return Lattice(max_state + 1, arcs, start, finals, vocab)


def _word_id(field, vocab, lineno, map_unknown):
    if vocab is None:
        try:
            return int(field)
        except ValueError:
            raise ParseError("word %r is not an integer id and no vocabulary given" % field,
                             lineno) from None
    if field in vocab:
        return vocab.id(field)
    if map_unknown:
        return vocab.unk
    raise UnknownToken("line %d: word %r not in vocabulary" % (lineno, field))


def write_lattice_text(lattice, stream):
    """Write arcs grouped by source in topological order, then finals."""
    order = lattice.topo_order
    names = lattice.vocab.token if lattice.vocab is not None else str
    if not lattice.out_arcs(lattice.start):
        stream.write("%d %r\n" % (lattice.start, lattice.finals[lattice.start]))
    for s in order:
        for arc in lattice.out_arcs(s):
            stream.write("%d %d %s %r,%r\n" % (
                arc.src, arc.dst, names(arc.word), arc.cost.graph, arc.cost.acoustic))
    for s in sorted(lattice.finals):
        if s == lattice.start and not lattice.out_arcs(s):
            continue
        stream.write("%d %r\n" % (s, lattice.finals[s]))


def load_lattice(path, vocab=None, allow_epsilon=False, map_unknown=False):
    with open(path, encoding="utf-8") as f:
        return read_lattice_text(f, vocab, allow_epsilon, map_unknown)


def save_lattice(lattice, path):
    with open(path, "w", encoding="utf-8") as f:
        write_lattice_text(lattice, f)


def linear_lattice(words, costs, final_cost=0.0, vocab=None):
    """Single-path lattice; ``costs`` is a list of (graph, acoustic) pairs."""
    arcs = [Arc(i, i + 1, w, Cost(*c)) for i, (w, c) in enumerate(zip(words, costs))]
    return Lattice(len(words) + 1, arcs, 0, {len(words): final_cost}, vocab)
