import numpy as np
import pytest

from ctxrescore import rnnlm
from ctxrescore.ngram import train_ngram
from ctxrescore.rescore import DifferenceLm
from ctxrescore.vocab import Vocabulary

WORDS = ["w%d" % i for i in range(8)]


def make_vocab(extra=("SP",)):
    return Vocabulary(list(extra) + WORDS)


def toy_sentences(seed=0, n=200):
    rng = np.random.default_rng(seed)
    return [[WORDS[int(x)] for x in rng.integers(0, len(WORDS), size=rng.integers(2, 7))]
            for _ in range(n)]


@pytest.fixture(scope="session")
def vocab():
    return make_vocab()


@pytest.fixture(scope="session")
def bigram(vocab):
    return train_ngram(toy_sentences(), vocab, order=2, words=WORDS + ["SP"])


@pytest.fixture(scope="session")
def unigram(vocab):
    return train_ngram(toy_sentences(1), vocab, order=1, words=WORDS + ["SP"])


@pytest.fixture(scope="session")
def micro_lm(vocab):
    cfg = rnnlm.RnnLmConfig(embed_dim=8, hidden_dim=12, epochs=2, batch_size=8, seed=0)
    lm, _ = rnnlm.train(rnnlm.init(cfg, vocab), [vocab.ids(s) for s in toy_sentences()])
    return lm


@pytest.fixture(scope="session")
def diff_lm(vocab, bigram, micro_lm):
    return DifferenceLm(bigram, micro_lm, tags=vocab.tag_ids())
