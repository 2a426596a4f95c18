"""Training-text construction: tagged sentence concatenation, vocabularies, tf-idf."""

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyCorpus, MissingIntent
from .vocab import SP, Vocabulary, int_token, sid_token

TAG_KINDS = ("none", "SP", "SID", "INT")


@dataclass
class Utterance:
    speaker: str
    tokens: list
    intent: str = None
    ref_text: str = ""
    lattice_path: str = None
    conv_id: str = ""
    utt_index: int = 0


@dataclass
class Dialogue:
    conv_id: str
    utterances: list = field(default_factory=list)

    def roles(self):
        """Speaker -> role letter, in order of first appearance."""
        roles = {}
        for u in self.utterances:
            if u.speaker not in roles:
                roles[u.speaker] = chr(ord("A") + len(roles))
        return roles


def role_tokens(n=2):
    return [sid_token(chr(ord("A") + i)) for i in range(n)]


def junction_tag(dialogue, utt, kind, side="earlier"):
    """Tag token placed after ``utt`` (the earlier side of a junction).

    With ``side="later"`` the SID tag names the speaker of the utterance
    that follows ``utt`` instead.
    """
    if kind == "none":
        return None
    if kind == "SP":
        return SP
    if kind == "SID":
        if side == "later":
            utts = dialogue.utterances
            utt = utts[(utts.index(utt) + 1) % len(utts)]
        elif side != "earlier":
            raise ValueError("side must be 'earlier' or 'later'")
        return sid_token(dialogue.roles()[utt.speaker])
    if kind == "INT":
        if not utt.intent:
            raise MissingIntent("utterance %s/%d has no intent label" % (dialogue.conv_id, utt.utt_index))
        return int_token(utt.intent)
    raise ValueError("unknown tag kind %r" % kind)


def build_concat_corpus(dialogues, k=4, tag="none", mode="cyclic", side="earlier"):
    """Join ``k`` consecutive utterances per training sequence.

    ``mode="cyclic"`` starts a window at every utterance and wraps around the
    dialogue end; ``mode="block"`` uses disjoint blocks.  With ``k == 1`` the
    utterances are returned unchanged.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if tag not in TAG_KINDS:
        raise ValueError("tag must be one of %s" % (TAG_KINDS,))
    out = []
    for dlg in dialogues:
        utts = dlg.utterances
        if not utts:
            continue
        if k == 1:
            out.extend(list(u.tokens) for u in utts)
            continue
        if mode == "cyclic":
            windows = [[utts[(i + j) % len(utts)] for j in range(k)] for i in range(len(utts))]
        elif mode == "block":
            windows = [utts[i:i + k] for i in range(0, len(utts), k)]
        else:
            raise ValueError("mode must be 'cyclic' or 'block'")
        for win in windows:
            seq = []
            for j, u in enumerate(win):
                seq.extend(u.tokens)
                if j < len(win) - 1:
                    t = junction_tag(dlg, u, tag, side)
                    if t is not None:
                        seq.append(t)
            out.append(seq)
    return out


def tag_tokens(dialogues, kinds=("SP", "SID", "INT")):
    toks = []
    if "SP" in kinds:
        toks.append(SP)
    if "SID" in kinds:
        n = max([len(d.roles()) for d in dialogues] + [2])
        toks.extend(role_tokens(n))
    if "INT" in kinds:
        labels = sorted({u.intent for d in dialogues for u in d.utterances if u.intent})
        toks.extend(int_token(lab) for lab in labels)
    return toks


def build_vocab(sentences, tags=()):
    """Specials first, then tags, then corpus words by first appearance."""
    vocab = Vocabulary(tags)
    for sent in sentences:
        for tok in sent:
            vocab.add(tok)
    return vocab


class TfIdfModel:
    """Document frequencies with smoothed idf ``ln((1 + N) / (1 + df)) + 1``."""

    def __init__(self, df, num_docs):
        self.df = dict(df)
        self.num_docs = num_docs

    def idf(self, token):
        return math.log((1.0 + self.num_docs) / (1.0 + self.df.get(token, 0))) + 1.0

    def vector(self, tokens):
        tf = Counter(tokens)
        return {t: c * self.idf(t) for t, c in tf.items()}

    def similarity(self, a, b):
        """Cosine of tf-idf vectors; 0 when either side is empty."""
        va, vb = self.vector(a), self.vector(b)
        na = math.sqrt(sum(x * x for x in va.values()))
        nb = math.sqrt(sum(x * x for x in vb.values()))
        if na == 0.0 or nb == 0.0:
            return 0.0
        dot = sum(x * vb.get(t, 0.0) for t, x in va.items())
        return min(1.0, max(0.0, dot / (na * nb)))

    def to_json(self):
        return {"num_docs": self.num_docs, "df": self.df}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["df"], obj["num_docs"])


def fit_tfidf(documents):
    docs = list(documents)
    if not docs:
        raise EmptyCorpus("tf-idf needs at least one document")
    df = Counter()
    for doc in docs:
        df.update(set(doc))
    return TfIdfModel(df, len(docs))


def read_conversations(path):
    """Load the conversation JSON Lines file into ordered dialogues."""
    dialogues = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            u = Utterance(
                speaker=str(rec["speaker"]),
                tokens=rec["ref_text"].split(),
                intent=rec.get("intent") or None,
                ref_text=rec["ref_text"],
                lattice_path=rec.get("lattice_path"),
                conv_id=str(rec["conv_id"]),
                utt_index=int(rec["utt_index"]),
            )
            dialogues.setdefault(u.conv_id, Dialogue(u.conv_id)).utterances.append(u)
    for d in dialogues.values():
        d.utterances.sort(key=lambda u: u.utt_index)
    return list(dialogues.values())


def write_conversations(dialogues, path):
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogues:
            for u in d.utterances:
                rec = {"conv_id": d.conv_id, "utt_index": u.utt_index, "speaker": u.speaker,
                       "ref_text": u.ref_text or " ".join(u.tokens), "lattice_path": u.lattice_path}
                if u.intent:
                    rec["intent"] = u.intent
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_corpus(sequences, path):
    with open(path, "w", encoding="utf-8") as f:
        for seq in sequences:
            f.write(" ".join(seq) + "\n")


def read_corpus(path):
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f if line.strip()]
