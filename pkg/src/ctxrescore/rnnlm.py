"""Recurrent word language model with hand-written BPTT.

Two cell kinds: ``"rnn"`` (tanh Elman cell) and ``"lstm"`` (gated, with
cell vectors).  Parameters live in float64 but are kept float32-exact so the
on-disk float32 format round-trips without loss.
"""

import dataclasses
import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    FormatVersionMismatch,
    NumericalDivergence,
    ParseError,
    ShapeMismatch,
    UnknownToken,
)

log = logging.getLogger(__name__)

MAGIC = b"CTXRNNLM"
VERSION = 1
CELLS = ("rnn", "lstm")


@dataclass
class RnnLmConfig:
    vocab_size: int = 0
    embed_dim: int = 32
    hidden_dim: int = 64
    num_layers: int = 1
    cell: str = "lstm"
    bptt: int = 35
    lr: float = 0.5
    epochs: int = 10
    batch_size: int = 4
    clip: float = 5.0
    seed: int = 0

    @classmethod
    def large_preset(cls, vocab_size):
        """3-layer LSTM with 256 units per layer."""
        return cls(vocab_size=vocab_size, embed_dim=256, hidden_dim=256, num_layers=3)

    def check(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "bptt", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError("%s must be >= 1" % name)
        if self.cell not in CELLS:
            raise ConfigError("cell must be one of %s" % (CELLS,))
        if self.lr < 0 or self.epochs < 0:
            raise ConfigError("lr and epochs must be non-negative")


class RnnState:
    """Per-layer hidden (and cell) vectors after some prefix."""

    __slots__ = ("h", "c", "_neglogp")

    def __init__(self, h, c):
        self.h = h
        self.c = c
        self._neglogp = None


def _gates(cell):
    return 4 if cell == "lstm" else 1


def param_shapes(config):
    """Ordered ``(name, shape)`` list; this is also the file tensor order."""
    g = _gates(config.cell)
    shapes = [("emb", (config.vocab_size, config.embed_dim))]
    for layer in range(config.num_layers):
        d_in = config.embed_dim if layer == 0 else config.hidden_dim
        shapes += [
            ("Wx%d" % layer, (d_in, g * config.hidden_dim)),
            ("Wh%d" % layer, (config.hidden_dim, g * config.hidden_dim)),
            ("b%d" % layer, (g * config.hidden_dim,)),
        ]
    shapes += [("W_out", (config.hidden_dim, config.vocab_size)), ("b_out", (config.vocab_size,))]
    return shapes


def num_parameters(config):
    return sum(int(np.prod(s)) for _, s in param_shapes(config))


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class RnnLm:
    def __init__(self, config, params, vocab):
        self.config = config
        self.params = params
        self.vocab = vocab
        self._start = None

    def __repr__(self):
        c = self.config
        return "RnnLm(%s, layers=%d, hidden=%d, V=%d)" % (c.cell, c.num_layers, c.hidden_dim, c.vocab_size)

    def copy(self):
        return RnnLm(dataclasses.replace(self.config),
                     {k: v.copy() for k, v in self.params.items()}, self.vocab)

    # -- stepwise scoring -------------------------------------------------

    def zero_state(self, batch=None):
        shape = (self.config.hidden_dim,) if batch is None else (batch, self.config.hidden_dim)
        layers = self.config.num_layers
        h = tuple(np.zeros(shape) for _ in range(layers))
        c = tuple(np.zeros(shape) for _ in range(layers)) if self.config.cell == "lstm" else None
        return RnnState(h, c)

    def advance(self, state, word):
        if not 0 <= word < self.config.vocab_size:
            raise UnknownToken("token id %r outside the model vocabulary" % (word,))
        p = self.params
        x = p["emb"][word]
        hs, cs = [], []
        for layer in range(self.config.num_layers):
            h_prev = state.h[layer]
            z = x @ p["Wx%d" % layer] + h_prev @ p["Wh%d" % layer] + p["b%d" % layer]
            if self.config.cell == "lstm":
                h, c = _lstm_point(z, state.c[layer])
                cs.append(c)
            else:
                h = np.tanh(z)
            hs.append(h)
            x = h
        return RnnState(tuple(hs), tuple(cs) if cs else None)

    def neglogp(self, state):
        if state._neglogp is None:
            z = state.h[-1] @ self.params["W_out"] + self.params["b_out"]
            state._neglogp = -_log_softmax(z)
        return state._neglogp

    def initial_state(self):
        """State after consuming ``<s>``."""
        if self._start is None:
            self._start = self.advance(self.zero_state(), self.vocab.bos)
        return self._start

    def score(self, state, word):
        if not 0 <= word < self.config.vocab_size:
            raise UnknownToken("token id %r outside the model vocabulary" % (word,))
        return float(self.neglogp(state)[word]), self.advance(state, word)

    def final_cost(self, state):
        return float(self.neglogp(state)[self.vocab.eos])

    # -- batched forward/backward ----------------------------------------

    def forward(self, x, state):
        """Run a (T, B) block of inputs; returns ``(logp, caches, final_state)``."""
        p = self.params
        cfg = self.config
        lstm = cfg.cell == "lstm"
        T, B = x.shape
        H = cfg.hidden_dim
        inp = p["emb"][x]  # (T, B, E)
        caches = []
        finals_h, finals_c = [], []
        for layer in range(cfg.num_layers):
            Wx, Wh, b = p["Wx%d" % layer], p["Wh%d" % layer], p["b%d" % layer]
            h = state.h[layer]
            c = state.c[layer] if lstm else None
            zx = inp @ Wx + b
            hs = np.empty((T, B, H))
            hprev = np.empty((T, B, H))
            gates = np.empty((T, B, zx.shape[-1]))
            cs = np.empty((T, B, H)) if lstm else None
            cprev = np.empty((T, B, H)) if lstm else None
            for t in range(T):
                hprev[t] = h
                z = zx[t] + h @ Wh
                if lstm:
                    cprev[t] = c
                    i = _sigmoid(z[:, :H])
                    f = _sigmoid(z[:, H:2 * H])
                    g = np.tanh(z[:, 2 * H:3 * H])
                    o = _sigmoid(z[:, 3 * H:])
                    c = f * c + i * g
                    h = o * np.tanh(c)
                    gates[t] = np.concatenate([i, f, g, o], axis=1)
                    cs[t] = c
                else:
                    h = np.tanh(z)
                    gates[t] = h
                hs[t] = h
            caches.append((inp, hprev, gates, cs, cprev))
            finals_h.append(h)
            finals_c.append(c)
            inp = hs
        logp = _log_softmax(inp @ p["W_out"] + p["b_out"])
        final = RnnState(tuple(finals_h), tuple(finals_c) if lstm else None)
        return logp, (caches, inp), final

    def forward_backward(self, x, y, mask, state, compute_grad=True):
        """Mean masked cross-entropy over a (T, B) chunk.

        Returns ``(loss_sum, token_count, grads, final_state)``; ``grads`` is
        the gradient of ``loss_sum / token_count``.
        """
        p = self.params
        cfg = self.config
        lstm = cfg.cell == "lstm"
        T, B = x.shape
        H = cfg.hidden_dim
        logp, (caches, top), final = self.forward(x, state)
        nll = -np.take_along_axis(logp, y[..., None], axis=-1)[..., 0]
        loss_sum = float((nll * mask).sum())
        count = float(mask.sum())
        if not compute_grad:
            return loss_sum, count, None, final

        grads = {}
        dlogits = np.exp(logp)
        np.put_along_axis(dlogits, y[..., None],
                          np.take_along_axis(dlogits, y[..., None], axis=-1) - 1.0, axis=-1)
        dlogits *= (mask / max(count, 1.0))[..., None]
        grads["W_out"] = top.reshape(-1, H).T @ dlogits.reshape(-1, cfg.vocab_size)
        grads["b_out"] = dlogits.sum(axis=(0, 1))
        dh_seq = dlogits @ p["W_out"].T  # (T, B, H)

        for layer in reversed(range(cfg.num_layers)):
            Wx, Wh = p["Wx%d" % layer], p["Wh%d" % layer]
            inp_l, hprev, gates, cs, cprev = caches[layer]
            dz_all = np.empty_like(gates)
            dh_next = np.zeros((B, H))
            dc_next = np.zeros((B, H))
            for t in reversed(range(T)):
                dh = dh_seq[t] + dh_next
                if lstm:
                    i = gates[t][:, :H]
                    f = gates[t][:, H:2 * H]
                    g = gates[t][:, 2 * H:3 * H]
                    o = gates[t][:, 3 * H:]
                    tc = np.tanh(cs[t])
                    dc = dc_next + dh * o * (1.0 - tc * tc)
                    dz = np.concatenate([
                        dc * g * i * (1.0 - i),
                        dc * cprev[t] * f * (1.0 - f),
                        dc * i * (1.0 - g * g),
                        dh * tc * o * (1.0 - o),
                    ], axis=1)
                    dc_next = dc * f
                else:
                    hcur = gates[t]
                    dz = dh * (1.0 - hcur * hcur)
                dz_all[t] = dz
                dh_next = dz @ Wh.T
            flat_dz = dz_all.reshape(T * B, -1)
            grads["Wx%d" % layer] = inp_l.reshape(T * B, -1).T @ flat_dz
            grads["Wh%d" % layer] = hprev.reshape(T * B, H).T @ flat_dz
            grads["b%d" % layer] = flat_dz.sum(axis=0)
            dh_seq = dz_all @ Wx.T
        demb = np.zeros_like(p["emb"])
        np.add.at(demb, x, dh_seq)
        grads["emb"] = demb
        return loss_sum, count, grads, final


def _lstm_point(z, c_prev):
    H = z.shape[-1] // 4
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = _sigmoid(z[3 * H:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def init(config, vocab, tags=()):
    """Seeded initialization; ``tags`` are tag tokens that must be in ``vocab``."""
    config = dataclasses.replace(config, vocab_size=config.vocab_size or len(vocab))
    config.check()
    for tok in ("<s>", "</s>") + tuple(tags):
        if tok not in vocab:
            raise ConfigError("vocabulary is missing %r" % tok)
    if config.vocab_size != len(vocab):
        raise ConfigError("config vocab_size %d != vocabulary size %d" % (config.vocab_size, len(vocab)))
    rng = np.random.default_rng(config.seed)
    params = {}
    H = config.hidden_dim
    for name, shape in param_shapes(config):
        if name.startswith("b"):
            w = np.zeros(shape)
            if config.cell == "lstm" and name != "b_out":
                w[H:2 * H] = 1.0  # forget-gate bias
        else:
            w = rng.uniform(-0.1, 0.1, size=shape)
        params[name] = _f32(w)
    return RnnLm(config, params, vocab)


def step(lm, state, word):
    return lm.score(state, word)


def history_state(lm, words):
    state = lm.initial_state()
    for w in words:
        state = lm.advance(state, w)
    return state


def score_sentence(lm, words):
    state = lm.initial_state()
    total = 0.0
    for w in words:
        cost, state = lm.score(state, w)
        total += cost
    return total + lm.final_cost(state)


def _batches(seqs, batch_size, rng=None):
    order = np.arange(len(seqs))
    if rng is not None:
        rng.shuffle(order)
    for i in range(0, len(order), batch_size):
        yield [seqs[j] for j in order[i:i + batch_size]]


def _pad(batch):
    """Each sequence is a full id list ``<s> ... </s>``; returns inputs/targets/mask."""
    L = max(len(s) for s in batch) - 1
    B = len(batch)
    x = np.zeros((L, B), dtype=np.int64)
    y = np.zeros((L, B), dtype=np.int64)
    mask = np.zeros((L, B))
    for b, s in enumerate(batch):
        n = len(s) - 1
        x[:n, b] = s[:-1]
        y[:n, b] = s[1:]
        mask[:n, b] = 1.0
    return x, y, mask


def _wrap(lm, sequences):
    bos, eos = lm.vocab.bos, lm.vocab.eos
    return [[bos] + list(s) + [eos] for s in sequences]


def token_costs(lm, sequences, batch_size=64):
    """Per-position costs ``-ln P`` for each sequence (targets: words then ``</s>``)."""
    seqs = _wrap(lm, sequences)
    out = []
    for start in range(0, len(seqs), batch_size):
        batch = seqs[start:start + batch_size]
        x, y, mask = _pad(batch)
        nll = _nll(lm, x, y)
        for b, s in enumerate(batch):
            out.append(nll[:len(s) - 1, b].copy())
    return out


def _nll(lm, x, y):
    logp, _, _ = lm.forward(x, lm.zero_state(x.shape[1]))
    return -np.take_along_axis(logp, y[..., None], axis=-1)[..., 0]


def _ppl(total, count):
    mean = total / max(count, 1.0)
    return math.exp(mean) if mean < 700.0 else math.inf


def perplexity(lm, sequences):
    costs = token_costs(lm, sequences)
    return _ppl(sum(float(c.sum()) for c in costs), sum(len(c) for c in costs))


def train(lm, corpus, config=None, heldout=None):
    """SGD with truncated BPTT and global-norm clipping.

    ``corpus`` is a list of token-id sequences (without ``<s>``/``</s>``).
    Hidden state carries across chunks within a sequence and resets between
    sequences.  Returns ``(trained_lm, history)`` where ``history`` holds one
    dict per epoch.
    """
    cfg = config or lm.config
    lm = lm.copy()
    rng = np.random.default_rng(cfg.seed)
    seqs = _wrap(lm, corpus)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0.0
        for batch in _batches(seqs, cfg.batch_size, rng):
            x, y, mask = _pad(batch)
            state = lm.zero_state(len(batch))
            for t0 in range(0, x.shape[0], cfg.bptt):
                sl = slice(t0, t0 + cfg.bptt)
                loss, n, grads, state = lm.forward_backward(x[sl], y[sl], mask[sl], state)
                if n == 0:
                    continue
                if not math.isfinite(loss):
                    raise NumericalDivergence(
                        "loss became non-finite in epoch %d; lower the learning rate "
                        "(lr=%g) or the clipping norm (clip=%g)" % (epoch, cfg.lr, cfg.clip))
                total += loss
                count += n
                if cfg.lr > 0:
                    _sgd(lm.params, grads, cfg.lr, cfg.clip)
        record = {"epoch": epoch, "train_ppl": _ppl(total, count)}
        if not math.isfinite(record["train_ppl"]):
            raise NumericalDivergence(
                "perplexity overflowed in epoch %d; lower the learning rate (lr=%g) "
                "or the clipping norm (clip=%g)" % (epoch, cfg.lr, cfg.clip))
        if heldout:
            record["heldout_ppl"] = perplexity(lm, heldout)
        log.info("epoch %d %s", epoch, " ".join("%s=%.4f" % kv for kv in record.items() if kv[0] != "epoch"))
        history.append(record)
    for k in lm.params:
        lm.params[k] = _f32(lm.params[k])
    lm._start = None
    return lm, history


def _sgd(params, grads, lr, clip):
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if not math.isfinite(norm):
        raise NumericalDivergence("gradient norm is non-finite; lower the learning rate")
    scale = lr * (clip / norm if clip and norm > clip else 1.0)
    for k, g in grads.items():
        params[k] -= scale * g


# -- serialization -----------------------------------------------------------

def _vocab_digest(vocab):
    return hashlib.sha1("\n".join(vocab.tokens).encode("utf-8")).hexdigest()


def save(lm, stream):
    header = dataclasses.asdict(lm.config)
    header["vocab_sha1"] = _vocab_digest(lm.vocab)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    stream.write(MAGIC)
    stream.write(struct.pack("<II", VERSION, len(blob)))
    stream.write(blob)
    for name, shape in param_shapes(lm.config):
        stream.write(np.ascontiguousarray(lm.params[name], dtype="<f4").tobytes())


def load(stream, vocab, expect=None):
    """Read a model written by :func:`save`.

    ``expect`` optionally pins the configuration; dimension disagreement
    raises :class:`ShapeMismatch`.
    """
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatVersionMismatch("not a model file (bad magic)")
    head = stream.read(8)
    if len(head) != 8:
        raise ParseError("truncated model header")
    version, n = struct.unpack("<II", head)
    if version != VERSION:
        raise FormatVersionMismatch("model file version %d, expected %d" % (version, VERSION))
    blob = stream.read(n)
    if len(blob) != n:
        raise ParseError("truncated model header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except ValueError:
        raise ParseError("corrupt model header") from None
    digest = header.pop("vocab_sha1", None)
    try:
        config = RnnLmConfig(**header)
    except TypeError as exc:
        raise ParseError("bad config block: %s" % exc) from None
    if config.vocab_size != len(vocab) or (digest and digest != _vocab_digest(vocab)):
        raise ShapeMismatch("model vocabulary does not match the supplied vocabulary")
    if expect is not None:
        for field in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "cell"):
            if getattr(expect, field) != getattr(config, field):
                raise ShapeMismatch("%s: file has %r, expected %r" % (
                    field, getattr(config, field), getattr(expect, field)))
    params = {}
    for name, shape in param_shapes(config):
        size = int(np.prod(shape)) * 4
        raw = stream.read(size)
        if len(raw) != size:
            raise ParseError("truncated tensor %s" % name)
        params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    if stream.read(1):
        raise ShapeMismatch("trailing bytes after the last tensor")
    return RnnLm(config, params, vocab)


def save_file(lm, path):
    with open(path, "wb") as f:
        save(lm, f)


def load_file(path, vocab, expect=None):
    with open(path, "rb") as f:
        return load(f, vocab, expect)


def to_bytes(lm):
    buf = io.BytesIO()
    save(lm, buf)
    return buf.getvalue()
