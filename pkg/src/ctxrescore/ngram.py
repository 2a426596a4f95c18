"""ARPA back-off n-gram models as deterministic on-demand acceptors.

A state is the tuple of token ids forming the retained history.  Scoring
returns ``(cost, next_state)`` with costs in natural-log units.
"""

import logging
import math
import re
from collections import Counter, defaultdict

from .errors import CountMismatch, ParseError, UnknownToken
from .vocab import Vocabulary

log = logging.getLogger(__name__)

LN10 = math.log(10.0)


class NgramModel:
    """Back-off n-gram model.

    ``entries`` maps an id tuple to ``(prob_cost, backoff_cost)``, both
    ``-ln`` values.
    """

    def __init__(self, order, entries, vocab):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.entries = entries
        self.vocab = vocab
        self.bos = vocab.bos
        self.eos = vocab.eos
        self._unk = vocab.unk if (vocab.unk,) in entries else None

    def __repr__(self):
        return "NgramModel(order=%d, entries=%d)" % (self.order, len(self.entries))

    def predictable(self):
        """Ids with a unigram entry that can be predicted (everything but <s>)."""
        return sorted(k[0] for k in self.entries if len(k) == 1 and k[0] != self.bos)

    def initial_state(self):
        if self.order > 1 and (self.bos,) in self.entries:
            return (self.bos,)
        return ()

    def _cost(self, history, word):
        cost = 0.0
        while True:
            entry = self.entries.get(history + (word,))
            if entry is not None:
                return cost + entry[0]
            if not history:
                raise UnknownToken("token id %d has no unigram entry" % word)
            hist_entry = self.entries.get(history)
            if hist_entry is not None:
                cost += hist_entry[1]
            history = history[1:]

    def score(self, state, word):
        if (word,) not in self.entries:
            if self._unk is None:
                raise UnknownToken("token %r unknown to the n-gram model" % self._name(word))
            word = self._unk
        cost = self._cost(state, word)
        if self.order == 1:
            return cost, ()
        hist = (state + (word,))[-(self.order - 1):]
        while hist and hist not in self.entries:
            hist = hist[1:]
        return cost, hist

    def final_cost(self, state):
        return self.score(state, self.eos)[0]

    def _name(self, word):
        try:
            return self.vocab.token(word)
        except IndexError:
            return word


def score_word(model, state, word):
    return model.score(state, word)


def score_sentence(model, words):
    """Total cost of ``<s> words </s>``; ``words`` are token ids."""
    state = model.initial_state()
    total = 0.0
    for w in words:
        cost, state = model.score(state, w)
        total += cost
    return total + model.final_cost(state)


_NGRAM_COUNT = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")
_SECTION = re.compile(r"^\\(\d+)-grams:$")


def load_arpa(stream, vocab=None, strict=False):
    """Read an ARPA file.

    Without ``vocab`` a fresh vocabulary is built from the unigrams.  Missing
    prefix n-grams are synthesized (probability from the back-off recursion,
    zero back-off weight) unless ``strict`` is set.
    """
    declared = {}
    raw = defaultdict(list)
    section = None
    seen_data = seen_end = False
    for lineno, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        if seen_end:
            continue
        if line == "\\data\\":
            seen_data = True
            section = "data"
            continue
        if line == "\\end\\":
            seen_end = True
            continue
        m = _SECTION.match(line)
        if m:
            section = int(m.group(1))
            if section not in declared:
                raise ParseError("section %d-grams not declared in \\data\\" % section, lineno)
            continue
        if section == "data":
            m = _NGRAM_COUNT.match(line)
            if not m:
                raise ParseError("bad \\data\\ line %r" % line, lineno)
            declared[int(m.group(1))] = int(m.group(2))
            continue
        if section is None:
            continue  # header text before \data\
        fields = line.split()
        k = section
        if len(fields) not in (k + 1, k + 2):
            raise ParseError("expected %d or %d fields in %d-gram line" % (k + 1, k + 2, k), lineno)
        try:
            lp = float(fields[0])
            bo = float(fields[k + 1]) if len(fields) == k + 2 else 0.0
        except ValueError:
            raise ParseError("bad number", lineno) from None
        raw[k].append((tuple(fields[1:k + 1]), lp, bo, lineno))
    if not seen_data:
        raise ParseError("missing \\data\\ header")
    if not seen_end:
        raise ParseError("missing \\end\\ marker")
    if not declared:
        raise ParseError("no n-gram counts declared")

    for k, count in declared.items():
        if len(raw[k]) != count:
            msg = "declared %d %d-grams, found %d" % (count, k, len(raw[k]))
            if strict:
                raise CountMismatch(msg)
            log.warning(msg)

    if vocab is None:
        vocab = Vocabulary(w for words, _, _, _ in raw[1] for w in words)
    entries = {}
    for k in sorted(raw):
        for words, lp, bo, lineno in raw[k]:
            key = []
            for w in words:
                if w not in vocab:
                    raise UnknownToken("line %d: %r not in vocabulary" % (lineno, w))
                key.append(vocab.id(w))
            entries[tuple(key)] = (-lp * LN10, -bo * LN10)

    order = max(declared)
    model = NgramModel(order, entries, vocab)
    _repair_prefixes(model, strict)
    return model


def _repair_prefixes(model, strict):
    for k in range(2, model.order + 1):
        for key in [e for e in model.entries if len(e) == k]:
            prefix = key[:-1]
            if prefix in model.entries:
                continue
            if strict:
                raise ParseError("%d-gram %r has no prefix entry" % (k, key))
            model.entries[prefix] = (model._cost(prefix[:-1], prefix[-1]), 0.0)
            log.warning("synthesized missing prefix n-gram %r", prefix)


def read_arpa(path, vocab=None, strict=False):
    with open(path, encoding="utf-8") as f:
        return load_arpa(f, vocab, strict)


def write_arpa(model, stream):
    by_order = defaultdict(list)
    for key, val in model.entries.items():
        by_order[len(key)].append((key, val))
    stream.write("\\data\\\n")
    for k in range(1, model.order + 1):
        stream.write("ngram %d=%d\n" % (k, len(by_order[k])))
    for k in range(1, model.order + 1):
        stream.write("\n\\%d-grams:\n" % k)
        for key, (pc, bc) in sorted(by_order[k]):
            words = " ".join(model.vocab.token(i) for i in key)
            line = "%r\t%s" % (-pc / LN10, words)
            if k < model.order:
                line += "\t%r" % (-bc / LN10)
            stream.write(line + "\n")
    stream.write("\n\\end\\\n")


def train_ngram(sentences, vocab, order=2, words=None):
    """Small Witten-Bell back-off trainer for fixtures.

    ``sentences`` hold token strings.  Unigrams are add-one smoothed over
    ``words`` (default: every non-special token of ``vocab``) plus ``</s>``
    and ``<unk>``.  The result is properly normalized for every history.
    """
    bos, eos, unk = vocab.bos, vocab.eos, vocab.unk
    if words is None:
        words = [i for i, t in enumerate(vocab) if i not in (0, bos, eos, unk)]
    else:
        words = [vocab.id(w) for w in words]
    predict = sorted(set(words) | {eos, unk})

    counts = [Counter() for _ in range(order + 1)]
    for sent in sentences:
        ids = [bos] + vocab.ids(sent, allow_unk=True) + [eos]
        for k in range(1, order + 1):
            for i in range(1, len(ids)):
                if i - k + 1 < 0:
                    continue
                gram = tuple(ids[i - k + 1:i + 1])
                counts[k][gram] += 1

    total = sum(counts[1][(w,)] for w in predict)
    denom = total + len(predict)
    entries = {(w,): (-math.log((counts[1][(w,)] + 1) / denom), 0.0) for w in predict}
    entries[(bos,)] = (99.0 * LN10, 0.0)
    model = NgramModel(order, entries, vocab)

    for k in range(2, order + 1):
        followers = defaultdict(dict)
        for gram, c in counts[k].items():
            followers[gram[:-1]][gram[-1]] = c
        for hist in sorted(followers):
            seen = followers[hist]
            c_h = sum(seen.values())
            t_h = len(seen)
            lower = sum(math.exp(-model._cost(hist[1:], w)) for w in seen)
            if 1.0 - lower < 1e-12:
                probs = {w: c / c_h for w, c in seen.items()}
                bow = 1.0
            else:
                probs = {w: c / (c_h + t_h) for w, c in seen.items()}
                bow = (t_h / (c_h + t_h)) / (1.0 - lower)
            pc, _ = entries[hist]
            entries[hist] = (pc, -math.log(bow))
            for w, p in probs.items():
                entries[hist + (w,)] = (-math.log(p), 0.0)
    return model
