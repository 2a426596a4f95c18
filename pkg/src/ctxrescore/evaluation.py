"""CER scoring, the N-best oracle, and the experiment grid."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .context import ConcatPolicy, rescore_with_context
from .errors import BudgetExceeded
from .lattice import TIE_TOL, best_path
from .rescore import DifferenceLm

log = logging.getLogger(__name__)

THRESHOLDS = (0.0, 0.1, 0.3, 0.5, 0.9)


@dataclass
class CerReport:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_len: int = 0

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def cer(self):
        """Error rate; ``nan`` when the reference is empty."""
        if self.ref_len == 0:
            return math.nan
        return self.errors / self.ref_len

    def __add__(self, other):
        return CerReport(self.substitutions + other.substitutions,
                         self.insertions + other.insertions,
                         self.deletions + other.deletions,
                         self.ref_len + other.ref_len)

    def as_dict(self):
        return {"substitutions": self.substitutions, "insertions": self.insertions,
                "deletions": self.deletions, "ref_len": self.ref_len,
                "cer": None if self.ref_len == 0 else self.cer}


def cer(ref, hyp):
    """Levenshtein alignment with unit costs.

    On equal cost the backtrace prefers a substitution (or match) over an
    insertion, and an insertion over a deletion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)
    s = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dele += 1
            i -= 1
    return CerReport(int(s), ins, dele, n)


def pooled_cer(pairs):
    total = CerReport()
    for ref, hyp in pairs:
        total = total + cer(ref, hyp)
    return total


def oracle_rescore_nbest(lattice, diff_lm, lm_scale=1.0, budget=10_000):
    """Enumerate every path and score it with full-history LM costs.

    Returns ``(word_ids, cost)`` of the argmin; ties (within 1e-9) go to
    the lexicographically smaller word sequence.
    """
    if lattice.num_paths() > budget:
        raise BudgetExceeded("lattice has more than %d paths" % budget)
    best = None
    for arcs, final in lattice.paths():
        state = diff_lm.initial_state()
        total = 0.0
        words = []
        for arc in arcs:
            graph = arc.cost.graph
            if arc.word != 0:
                sub, add, state = diff_lm.step(state, arc.word)
                graph += diff_lm.combine(sub, add)
                words.append(arc.word)
            total += lm_scale * graph + arc.cost.acoustic
        total += lm_scale * (final + diff_lm.combine(*diff_lm.final(state)))
        cand = (total, tuple(words))
        if best is None or cand[0] < best[0] - TIE_TOL or (
                abs(cand[0] - best[0]) <= TIE_TOL and cand[1] < best[1]):
            best = cand
    return list(best[1]), best[0]


@dataclass
class RescoreParams:
    method: str = "pruned"
    n: int = 4
    beam: float = 15.0
    lm_scale: float = 1.0


@dataclass
class Condition:
    """One grid column.  ``lm=None`` means first-pass output."""

    name: str
    lm: str = None
    policy: ConcatPolicy = None

    def describe(self, params):
        d = {"name": self.name, "lm": self.lm}
        if self.lm is not None:
            d["rescore"] = vars(params).copy()
        if self.policy is not None:
            d["policy"] = {"tag": self.policy.tag, "threshold": self.policy.threshold,
                           "depth": self.policy.depth, "side": self.policy.side}
        return d


def standard_conditions(tags=("SP", "SID", "INT"), thresholds=THRESHOLDS, concat_tag="SP",
                        untagged=True):
    """The standard comparison columns: first pass, plain, concatenated and gated.

    LM keys are tag kinds (``"none"`` for the untagged concatenation LM).
    Concatenated columns rescore with the LM trained on the same tag.
    """
    conds = [Condition("1-pass")]
    if untagged:
        conds.append(Condition("w/o Tags", lm="none"))
    for t in tags:
        conds.append(Condition("LM-%s" % t, lm=t))
    for t in tags:
        conds.append(Condition("concat-%s" % t, lm=t, policy=ConcatPolicy(t)))
    if concat_tag is not None:
        for tau in thresholds:
            conds.append(Condition("select-%s>%g" % (concat_tag, tau), lm=concat_tag,
                                   policy=ConcatPolicy(concat_tag, tau)))
    return conds


@dataclass
class ExperimentGrid:
    conditions: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    concat_counts: dict = field(default_factory=dict)
    hyps: dict = field(default_factory=dict)
    baseline: str = None
    params: RescoreParams = None

    def cer(self, name):
        return self.reports[name].cer

    def relative(self, name, ref_name):
        if ref_name not in self.reports:
            return None
        base = self.reports[ref_name].cer
        if not base:
            return None
        return (base - self.reports[name].cer) / base

    def to_json(self):
        rows = []
        for cond in self.conditions:
            rep = self.reports[cond.name]
            row = cond.describe(self.params or RescoreParams())
            row.update(rep.as_dict())
            row["concatenated"] = self.concat_counts.get(cond.name, 0)
            row["rel_vs_1pass"] = self.relative(cond.name, "1-pass")
            row["rel_vs_baseline"] = self.relative(cond.name, self.baseline) if self.baseline else None
            rows.append(row)
        return {"baseline": self.baseline, "conditions": rows}

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_tsv(self, path):
        """Wide table: one column per condition, one row per metric."""
        data = self.to_json()["conditions"]
        metrics = ("cer", "substitutions", "insertions", "deletions", "ref_len",
                   "concatenated", "rel_vs_1pass", "rel_vs_baseline")
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["metric"] + [row["name"] for row in data])
            for m in metrics:
                w.writerow([m] + [_fmt(row[m]) for row in data])

    def write_hyps(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for cond in self.conditions:
                for rec in self.hyps.get(cond.name, []):
                    f.write(json.dumps(dict(rec, condition=cond.name), ensure_ascii=False) + "\n")


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return "%.6f" % v
    return str(v)


def read_tsv(path):
    with open(path, encoding="utf-8") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    names = rows[0][1:]
    table = {name: {} for name in names}
    for row in rows[1:]:
        for name, val in zip(names, row[1:]):
            table[name][row[0]] = None if val == "NA" else float(val)
    return table


def decode_dialogue(cond, lm, subtract, params, tfidf, item):
    """Hypotheses of one dialogue under one condition: ``[(utt_index, words, concat, sim)]``."""
    d, lats, first = item
    if cond.lm is None:
        vocab = lats[0].vocab
        return [(u.utt_index, vocab.words(w), False, 0.0) for u, w in zip(d.utterances, first)]
    diff = DifferenceLm(subtract, lm, tags=lats[0].vocab.tag_ids())
    res = rescore_with_context(d, lats, diff, cond.policy, tfidf, params.method,
                               params.lm_scale, params.n, params.beam, first_pass=first)
    return [(r.utt_index, r.hypothesis, r.concatenated, r.similarity) for r in res]


def run_grid(dialogues, lattices, conditions, lms, subtract, params=None, tfidf=None,
             baseline=None, mapper=map):
    """Score every condition over all dialogues.

    ``lattices`` maps conv_id to the list of first-pass lattices;
    ``lms`` maps a condition's ``lm`` key to an add-LM.  ``mapper`` runs the
    per-dialogue decoding (``map`` or an executor's ``map``); conditions
    themselves run one after another.
    """
    params = params or RescoreParams()
    grid = ExperimentGrid(conditions=list(conditions), baseline=baseline, params=params)
    items = [(d, lattices[d.conv_id], [best_path(lat, params.lm_scale)[0] for lat in lattices[d.conv_id]])
             for d in dialogues]
    for cond in conditions:
        total = CerReport()
        count = 0
        hyps = []
        fn = partial(decode_dialogue, cond, lms.get(cond.lm), subtract, params, tfidf)
        for d, outs in zip(dialogues, mapper(fn, items)):
            for u, (idx, hyp, cat, sim) in zip(d.utterances, outs):
                total = total + cer(u.tokens, hyp)
                count += cat
                hyps.append({"conv_id": d.conv_id, "utt_index": idx, "hypothesis": " ".join(hyp),
                             "similarity": sim, "concatenated": cat})
        grid.reports[cond.name] = total
        grid.concat_counts[cond.name] = count
        grid.hyps[cond.name] = hyps
        log.info("%-16s CER %.4f (%d concatenated)", cond.name, total.cer, count)
    return grid


def grid_from_hyps(dialogues, hyp_sets, baseline=None):
    """Grid built from already-decoded hypotheses (name -> {(conv, idx): record})."""
    grid = ExperimentGrid(baseline=baseline)
    for name, recs in hyp_sets.items():
        grid.conditions.append(Condition(name))
        total = CerReport()
        count = 0
        for d in dialogues:
            for u in d.utterances:
                rec = recs.get((d.conv_id, u.utt_index))
                hyp = rec["hypothesis"].split() if rec else []
                total = total + cer(u.tokens, hyp)
                count += bool(rec and rec.get("concatenated"))
        grid.reports[name] = total
        grid.concat_counts[name] = count
    return grid


def read_hyps(path, by_condition=False):
    """Hypothesis records keyed by ``(conv_id, utt_index)``.

    With ``by_condition`` the result is ``{condition: {key: record}}`` so a
    file holding several conditions keeps them apart.
    """
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                key = (str(rec["conv_id"]), int(rec["utt_index"]))
                if by_condition:
                    out.setdefault(rec.get("condition"), {})[key] = rec
                else:
                    out[key] = rec
    return out


def contextual_costs(lm, dialogue, vocab, k=1, tag="none", side="earlier"):
    """Per-utterance ``(cost, events)`` of the words given up to ``k - 1`` previous utterances.

    Only word events are counted.  The boundary event differs by training
    format (``</s>`` for single sentences, a tag or ``</s>`` inside a
    concatenated window), so leaving it out keeps perplexities comparable.
    """
    from .textprep import junction_tag

    costs = []
    utts = dialogue.utterances
    for i, u in enumerate(utts):
        state = lm.initial_state()
        for j in range(max(0, i - k + 1), i):
            for tok in utts[j].tokens:
                state = lm.advance(state, vocab.id(tok))
            t = junction_tag(dialogue, utts[j], tag, side)
            if t is not None:
                state = lm.advance(state, vocab.id(t))
        total = 0.0
        for tok in u.tokens:
            c, state = lm.score(state, vocab.id(tok))
            total += c
        costs.append((total, len(u.tokens)))
    return costs


def heldout_perplexity(lm, dialogues, vocab, k=1, tag="none", side="earlier"):
    """Word-level perplexity with each utterance conditioned on its predecessors."""
    total, events = 0.0, 0
    for d in dialogues:
        for c, e in contextual_costs(lm, d, vocab, k, tag, side):
            total += c
            events += e
    return math.exp(total / max(events, 1))


def corrections(grid, dialogues, base, other, focus=None):
    """Utterances that ``other`` gets right and ``base`` gets wrong.

    Each record lists the ``(wrong, right)`` word swaps at positions where
    the two hypotheses differ (same-length hypotheses only).  ``focus``
    restricts the swaps to a set of reference words, e.g. named entities.
    """
    refs = {(d.conv_id, u.utt_index): u.tokens for d in dialogues for u in d.utterances}
    other_hyps = {(r["conv_id"], r["utt_index"]): r["hypothesis"].split() for r in grid.hyps[other]}
    out = []
    for rec in grid.hyps[base]:
        key = (rec["conv_id"], rec["utt_index"])
        ref, bad, good = refs[key], rec["hypothesis"].split(), other_hyps.get(key)
        if good != ref or bad == ref:
            continue
        swaps = []
        if len(bad) == len(ref):
            swaps = [(b, r) for b, r in zip(bad, ref) if b != r]
        if focus is not None and not any(r in focus for _, r in swaps):
            continue
        out.append({"conv_id": key[0], "utt_index": key[1], "reference": " ".join(ref),
                    base: " ".join(bad), other: " ".join(good), "swaps": swaps})
    return out
