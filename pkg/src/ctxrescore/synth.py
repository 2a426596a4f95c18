"""Seeded synthetic data: conversational corpora with entity confusions, and
random lattices for oracle testing.

Entities come in acoustically confusable pairs (``huixin``/``huixing``).
Both members are real entities, so a context-free LM has no preference
between them; only the previous utterance can tell them apart.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .lattice import Arc, Cost, Lattice
from .ngram import train_ngram
from .textprep import Dialogue, Utterance, build_vocab, tag_tokens

ENTITY_PAIRS = (
    ("huixin", "huixing"), ("no85", "no89"), ("lanting", "langting"), ("xiyuan", "xiyun"),
    ("room12", "room21"), ("baoli", "baoni"), ("jinhai", "jinghai"), ("anju", "anzhu"),
    ("donghu", "donghua"), ("meilin", "meiling"),
)

ENTITY_TEMPLATES = (
    "where do you want to meet E garden",
    "E garden",
    "hello may E help you",
    "E yes",
    "is it E",
    "i live near E",
    "the address is E road",
    "please go to E",
    "E is fine",
    "we can meet at E",
    "so it is E right",
    "i said E",
)

PLAIN_TEMPLATES = (
    "ok thank you",
    "what time is good",
    "i will call you later",
    "no problem",
    "see you then",
    "can you hear me",
    "sorry say again",
)

FILLERS = ("uh", "well", "and", "the", "a", "then", "so", "yeah")

INTENTS = ("ask_place", "confirm", "greet", "other")


@dataclass
class SynthConfig:
    train_dialogues: int = 1000
    test_dialogues: int = 60
    min_utts: int = 4
    max_utts: int = 8
    entity_pairs: int = 4
    entity_repeat_prob: float = 0.6
    entity_utt_prob: float = 0.8
    hard_repeat_prob: float = 0.5
    hard_fresh_prob: float = 0.1
    hard_margin: tuple = (0.3, 2.0)
    easy_margin: tuple = (1.5, 4.0)
    filler_confusion_prob: float = 0.15
    acoustic_range: tuple = (2.0, 6.0)
    ngram_order: int = 2

    def check(self):
        if not 1 <= self.entity_pairs <= len(ENTITY_PAIRS):
            raise ConfigError("entity_pairs must be in 1..%d" % len(ENTITY_PAIRS))
        if not 1 <= self.min_utts <= self.max_utts:
            raise ConfigError("need 1 <= min_utts <= max_utts")
        for name in ("entity_repeat_prob", "entity_utt_prob", "hard_repeat_prob",
                     "hard_fresh_prob", "filler_confusion_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("%s must be a probability" % name)
        if self.train_dialogues < 0 or self.test_dialogues < 0:
            raise ConfigError("dialogue counts must be non-negative")


@dataclass
class SyntheticData:
    train: list
    test: list
    vocab: object
    first_pass: object
    lattices: dict  # conv_id -> list of Lattice
    entity_slots: dict  # (conv_id, utt_index) -> (position, entity, confuser, hard)
    config: SynthConfig


def _entities(cfg):
    pairs = ENTITY_PAIRS[:cfg.entity_pairs]
    partner = {}
    for a, b in pairs:
        partner[a], partner[b] = b, a
    return sorted(partner), partner


def _dialogue(rng, cfg, conv_id, entities):
    n = int(rng.integers(cfg.min_utts, cfg.max_utts + 1))
    utts, slots = [], []
    prev_entity = None
    last_entity = None
    for i in range(n):
        speaker = "AB"[i % 2]
        if i == 0 or rng.random() < cfg.entity_utt_prob:
            tpl = ENTITY_TEMPLATES[int(rng.integers(len(ENTITY_TEMPLATES)))]
            repeat = last_entity is not None and rng.random() < cfg.entity_repeat_prob
            if repeat:
                ent = last_entity
            else:
                choices = [e for e in entities if e != prev_entity]
                ent = choices[int(rng.integers(len(choices)))]
            words = tpl.split()
            pos = words.index("E")
            words[pos] = ent
            slots.append((pos, ent, repeat and ent == prev_entity))
            intent = "ask_place" if "where" in tpl or "address" in tpl else "confirm"
            prev_entity = ent
            last_entity = ent
        else:
            words = PLAIN_TEMPLATES[int(rng.integers(len(PLAIN_TEMPLATES)))].split()
            slots.append(None)
            intent = "greet" if words[0] in ("ok", "see") else "other"
            prev_entity = None
        if rng.random() < 0.2:
            words.insert(int(rng.integers(len(words) + 1)), FILLERS[int(rng.integers(len(FILLERS)))])
            if slots[-1] is not None:
                slots[-1] = (words.index(slots[-1][1]),) + slots[-1][1:]
        utts.append(Utterance(speaker=speaker, tokens=words, intent=intent,
                              ref_text=" ".join(words), conv_id=conv_id, utt_index=i))
    return Dialogue(conv_id, utts), slots


def _lattice(rng, cfg, words, slot, partner, lm, vocab):
    """Lattice whose states are (position, first-pass LM state) pairs."""
    lo, hi = cfg.acoustic_range
    alts = []
    hard = False
    for i, w in enumerate(words):
        base = float(rng.uniform(lo, hi))
        options = [(w, base)]
        if slot is not None and i == slot[0]:
            hard_p = cfg.hard_repeat_prob if slot[2] else cfg.hard_fresh_prob
            if rng.random() < hard_p:
                hard = True
                margin = -float(rng.uniform(*cfg.hard_margin))
            else:
                margin = float(rng.uniform(*cfg.easy_margin))
            options.append((partner[w], base + margin))
        elif rng.random() < cfg.filler_confusion_prob:
            alt = FILLERS[int(rng.integers(len(FILLERS)))]
            if alt != w:
                options.append((alt, base + float(rng.uniform(-1.0, 3.0))))
        alts.append(options)

    index = {(0, lm.initial_state()): 0}
    frontier = [(0, lm.initial_state())]
    arcs, finals = [], {}
    for i, options in enumerate(alts):
        nxt = []
        for key in frontier:
            _, st = key
            for w, ac in options:
                wid = vocab.id(w)
                cost, ns = lm.score(st, wid)
                dst = (i + 1, ns)
                if dst not in index:
                    index[dst] = len(index)
                    nxt.append(dst)
                arcs.append(Arc(index[key], index[dst], wid, Cost(cost, ac)))
        frontier = nxt
    for key in frontier:
        finals[index[key]] = lm.final_cost(key[1])
    return Lattice(len(index), arcs, 0, finals, vocab), hard


def generate_synthetic_conversations(seed, config=None):
    """Train/test dialogues, a first-pass n-gram, and test lattices.

    Every lattice contains its reference path.  Entity mentions that repeat
    the previous utterance's entity get an acoustically stronger confuser
    with probability ``hard_repeat_prob``.
    """
    cfg = config or SynthConfig()
    cfg.check()
    rng = np.random.default_rng(seed)
    entities, partner = _entities(cfg)
    train, test, slots = [], [], {}
    for i in range(cfg.train_dialogues):
        d, _ = _dialogue(rng, cfg, "train%04d" % i, entities)
        train.append(d)
    test_slots = []
    for i in range(cfg.test_dialogues):
        d, s = _dialogue(rng, cfg, "test%04d" % i, entities)
        test.append(d)
        test_slots.append(s)

    sentences = [u.tokens for d in train for u in d.utterances]
    words = set(w for s in sentences for w in s) | set(entities) | set(FILLERS)
    for tpl in ENTITY_TEMPLATES + PLAIN_TEMPLATES:
        words.update(t for t in tpl.split() if t != "E")
    all_dialogues = train + test
    vocab = build_vocab([sorted(words)], tags=tag_tokens(all_dialogues) + _intent_tags())
    lm = train_ngram(sentences, vocab, order=cfg.ngram_order, words=sorted(words))

    lattices = {}
    for d, s in zip(test, test_slots):
        lats = []
        for u, slot in zip(d.utterances, s):
            lat, hard = _lattice(rng, cfg, u.tokens, slot, partner, lm, vocab)
            lats.append(lat)
            if slot is not None:
                slots[(d.conv_id, u.utt_index)] = (slot[0], slot[1], partner[slot[1]], hard)
        lattices[d.conv_id] = lats
    return SyntheticData(train, test, vocab, lm, lattices, slots, cfg)


def _intent_tags():
    return ["INT_" + i for i in INTENTS]


def adjacent_entity_sharing(dialogues, entity_set):
    """Number of adjacent utterance pairs that share an entity token."""
    count = 0
    for d in dialogues:
        for a, b in zip(d.utterances, d.utterances[1:]):
            if set(a.tokens) & set(b.tokens) & entity_set:
                count += 1
    return count


def random_lattice(rng, num_states=None, vocab_size=8, max_paths=1000, max_states=12,
                   acoustic=(0.0, 20.0), graph=(0.0, 4.0), extra_arc_prob=0.5, vocab=None):
    """Random connected DAG lattice with word ids in ``[first_word, vocab_size)``.

    Word ids start after the specials (``<eps>``, ``<s>``, ``</s>``, ``<unk>``)
    when ``vocab`` is given, and tag tokens are never drawn; otherwise ids
    start at 1.
    """
    if vocab is not None:
        tags = vocab.tag_ids()
        pool = [i for i in range(4, len(vocab)) if i not in tags]
    else:
        pool = list(range(1, vocab_size))
    while True:
        n = num_states or int(rng.integers(2, max_states + 1))
        arcs = []

        def arc(s, t):
            w = pool[int(rng.integers(0, len(pool)))]
            arcs.append(Arc(s, t, w, Cost(float(rng.uniform(*graph)), float(rng.uniform(*acoustic)))))

        for s in range(n - 1):
            arc(s, int(rng.integers(s + 1, min(n - 1, s + 2) + 1)))
            while rng.random() < extra_arc_prob:
                arc(s, int(rng.integers(s + 1, n)))
        # every state needs a predecessor
        has_pred = {a.dst for a in arcs}
        for t in range(1, n):
            if t not in has_pred:
                arc(int(rng.integers(0, t)), t)
        finals = {n - 1: float(rng.uniform(*graph))}
        for s in range(1, n - 1):
            if rng.random() < 0.15:
                finals[s] = float(rng.uniform(*graph))
        lat = Lattice(n, arcs, 0, finals, vocab)
        lat.validate()
        if lat.num_paths() <= max_paths:
            return lat
