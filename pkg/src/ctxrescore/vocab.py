"""Token <-> id mapping shared by lattices and language models.

The file format is one token per line; line number minus one is the id.
Id 0 is always ``<eps>``.
"""

import io

EPS = "<eps>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIALS = (EPS, BOS, EOS, UNK)

SP = "SP"
SID_PREFIX = "SID_"
INT_PREFIX = "INT_"


def sid_token(role):
    return SID_PREFIX + role


def int_token(label):
    return INT_PREFIX + label


def is_tag(token):
    return token == SP or token.startswith(SID_PREFIX) or token.startswith(INT_PREFIX)


class Vocabulary:
    def __init__(self, tokens=()):
        self._tokens = []
        self._ids = {}
        for tok in SPECIALS:
            self.add(tok)
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        if token in self._ids:
            return self._ids[token]
        if not token or any(c.isspace() for c in token):
            raise ValueError("invalid token %r" % token)
        self._ids[token] = len(self._tokens)
        self._tokens.append(token)
        return self._ids[token]

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def __iter__(self):
        return iter(self._tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __hash__(self):
        return hash(tuple(self._tokens))

    def __repr__(self):
        return "Vocabulary(%d tokens)" % len(self)

    @property
    def tokens(self):
        return tuple(self._tokens)

    @property
    def eps(self):
        return 0

    @property
    def bos(self):
        return self._ids[BOS]

    @property
    def eos(self):
        return self._ids[EOS]

    @property
    def unk(self):
        return self._ids[UNK]

    def id(self, token, allow_unk=False):
        from .errors import UnknownToken

        try:
            return self._ids[token]
        except KeyError:
            if allow_unk:
                return self._ids[UNK]
            raise UnknownToken("token %r not in vocabulary" % token) from None

    def ids(self, tokens, allow_unk=False):
        return [self.id(t, allow_unk) for t in tokens]

    def token(self, idx):
        return self._tokens[idx]

    def words(self, ids):
        return [self._tokens[i] for i in ids]

    def tag_ids(self):
        return frozenset(i for i, t in enumerate(self._tokens) if is_tag(t))

    def write(self, stream):
        for tok in self._tokens:
            stream.write(tok + "\n")

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            self.write(f)

    @classmethod
    def read(cls, stream):
        tokens = [line.strip() for line in stream if line.strip()]
        if tokens[: len(SPECIALS)] != list(SPECIALS[: len(tokens)]) or len(tokens) < len(SPECIALS):
            # Foreign vocab files only need <eps> at id 0; the rest are appended.
            if not tokens or tokens[0] != EPS:
                from .errors import ParseError

                raise ParseError("vocabulary must start with %s" % EPS, line=1)
            vocab = cls.__new__(cls)
            vocab._tokens, vocab._ids = [], {}
            for tok in tokens:
                vocab.add(tok)
            for tok in SPECIALS:
                vocab.add(tok)
            return vocab
        return cls(tokens[len(SPECIALS):])

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.read(f)

    @classmethod
    def from_text(cls, text):
        return cls.read(io.StringIO(text))
