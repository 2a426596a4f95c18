"""Command line entry point: ``ctxrescore <subcommand> ...``.

Every subcommand accepts ``--config FILE``, an INI file whose ``[DEFAULT]``
section and ``[<subcommand>]`` section supply option defaults (keys are the
long option names, dashes or underscores).  Flags given on the command line
win over the file.
"""

import argparse
import configparser
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from functools import partial

from . import rnnlm
from .context import ConcatPolicy, rescore_with_context
from .errors import ConfigError, RescoreError
from .evaluation import (
    THRESHOLDS,
    RescoreParams,
    corrections,
    grid_from_hyps,
    heldout_perplexity,
    standard_conditions,
    read_hyps,
    run_grid,
)
from .lattice import best_path, load_lattice, save_lattice
from .ngram import read_arpa, write_arpa
from .rescore import METHODS, DifferenceLm
from .synth import SynthConfig, generate_synthetic_conversations
from .textprep import (
    build_concat_corpus,
    build_vocab,
    fit_tfidf,
    read_conversations,
    read_corpus,
    tag_tokens,
    write_conversations,
    write_corpus,
)
from .vocab import Vocabulary

log = logging.getLogger("ctxrescore")

TAGS = ("none", "SP", "SID", "INT")


def _threshold(text):
    if text is None or str(text).lower() in ("none", ""):
        return None
    return float(text)


def _common(p):
    p.add_argument("--config", help="INI file with option defaults")
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="worker processes; 1 runs everything serially")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _rescore_opts(p):
    p.add_argument("--method", choices=METHODS, default="pruned", help="rescoring algorithm")
    p.add_argument("--n", type=int, default=4, help="n-gram approximation order")
    p.add_argument("--beam", type=float, default=15.0, help="pruning beam")
    p.add_argument("--lm-scale", type=float, default=1.0, help="weight of graph costs when ranking")
    p.add_argument("--lm-weight", type=float, default=1.0,
                   help="interpolation weight of the add-LM in the difference LM")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="ctxrescore", formatter_class=fmt,
                                     description="Context-aware lattice rescoring with a recurrent LM")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("synth", formatter_class=fmt,
                       help="write a seeded synthetic corpus, lattices and first-pass LM")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    defaults = SynthConfig()
    p.add_argument("--train-dialogues", type=int, default=defaults.train_dialogues)
    p.add_argument("--test-dialogues", type=int, default=defaults.test_dialogues)
    p.add_argument("--entity-pairs", type=int, default=defaults.entity_pairs)
    p.add_argument("--repeat-prob", type=float, default=defaults.entity_repeat_prob,
                   help="probability an entity utterance repeats the last entity")

    p = sub.add_parser("textprep", formatter_class=fmt,
                       help="build a (tagged, concatenated) training corpus and vocabulary")
    _common(p)
    p.add_argument("--conversations", required=True, help="conversation JSON Lines file")
    p.add_argument("--out", required=True, help="corpus file, one sequence per line")
    p.add_argument("--vocab", help="existing vocabulary (otherwise built and written to --vocab-out)")
    p.add_argument("--vocab-out", help="where to write a freshly built vocabulary")
    p.add_argument("--k", type=int, default=4, help="utterances per training sequence")
    p.add_argument("--tag", choices=TAGS, default="none", help="junction tag kind")
    p.add_argument("--mode", choices=("cyclic", "block"), default="cyclic", help="window layout")
    p.add_argument("--sid-side", choices=("earlier", "later"), default="earlier",
                   help="which utterance an SID tag names")

    p = sub.add_parser("train", formatter_class=fmt, help="train the recurrent LM")
    _common(p)
    p.add_argument("--corpus", required=True, help="training corpus")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--heldout", help="held-out corpus for per-epoch perplexity")
    d = rnnlm.RnnLmConfig()
    p.add_argument("--cell", choices=rnnlm.CELLS, default=d.cell)
    p.add_argument("--embed-dim", type=int, default=d.embed_dim)
    p.add_argument("--hidden-dim", type=int, default=d.hidden_dim)
    p.add_argument("--num-layers", type=int, default=d.num_layers)
    p.add_argument("--bptt", type=int, default=d.bptt)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--clip", type=float, default=d.clip)

    p = sub.add_parser("rescore", formatter_class=fmt,
                       help="rescore the lattices of a conversation file")
    _common(p)
    p.add_argument("--conversations", required=True, help="conversation JSON Lines file")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--first-pass", help="ARPA n-gram already inside the lattices (subtracted)")
    p.add_argument("--lm", help="recurrent LM file; omit to emit first-pass 1-best")
    p.add_argument("--out", required=True, help="output directory for hyps.jsonl and stats.jsonl")
    p.add_argument("--name", help="condition name recorded in hyps.jsonl")
    _rescore_opts(p)
    p.add_argument("--concat", action="store_true", help="concatenate the previous lattice")
    p.add_argument("--tag", choices=TAGS[1:], default="SP", help="junction tag kind")
    p.add_argument("--threshold", type=_threshold, default=None,
                   help="tf-idf similarity gate (strict >); none always concatenates")
    p.add_argument("--depth", type=int, default=1, help="previous lattices to chain")
    p.add_argument("--sid-side", choices=("earlier", "later"), default="earlier")

    p = sub.add_parser("eval", formatter_class=fmt,
                       help="score hypotheses or run the full comparison grid")
    _common(p)
    p.add_argument("--conversations", required=True, help="conversation JSON Lines file (references)")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--hyps", action="append", default=[],
                   help="hyps.jsonl file, optionally NAME=PATH; repeatable")
    p.add_argument("--lm", action="append", default=[],
                   help="KIND=PATH recurrent LM for the grid (KIND in none, SP, SID, INT); repeatable")
    p.add_argument("--vocab", help="vocabulary file (grid mode)")
    p.add_argument("--first-pass", help="ARPA first-pass LM (grid mode)")
    _rescore_opts(p)
    p.add_argument("--thresholds", default=",".join("%g" % t for t in THRESHOLDS),
                   help="comma-separated similarity thresholds for the selective columns")
    p.add_argument("--select-tag", choices=TAGS[1:], default="SP",
                   help="tag used by the selective columns")
    p.add_argument("--baseline", help="condition used for the relative-reduction column")
    p.add_argument("--k", type=int, default=4, help="context size for held-out perplexity")
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values as defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    first, _ = pre.parse_known_args(argv)
    if not first.config or first.command not in parser.subcommands:
        return parser.parse_args(argv)
    # no implicit inheritance: [DEFAULT] is read as an ordinary section
    cp = configparser.ConfigParser(default_section="\0")
    if not cp.read(first.config, encoding="utf-8"):
        raise ConfigError("cannot read config file %s" % first.config)
    shared = dict(cp.items("DEFAULT")) if cp.has_section("DEFAULT") else {}
    own = dict(cp.items(first.command)) if cp.has_section(first.command) else {}
    sub = parser.subcommands[first.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in dict(shared, **own).items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            if key in own:
                raise ConfigError("unknown option %r in %s" % (key, first.config))
            continue  # [DEFAULT] keys for other subcommands
        action = known[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = cp.BOOLEAN_STATES.get(raw.lower())
            if defaults[dest] is None:
                raise ConfigError("option %r expects a boolean" % key)
        elif isinstance(action, argparse._AppendAction):
            defaults[dest] = raw.split()
        else:
            defaults[dest] = action.type(raw) if action.type else raw
        if action.required:
            action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


@contextmanager
def _mapper(jobs):
    if jobs <= 1:
        yield map
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            yield partial(ex.map, chunksize=4)


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.join(base, path)


def _load_lattices(dialogues, conv_path, vocab):
    base = os.path.dirname(os.path.abspath(conv_path))
    out = {}
    for d in dialogues:
        lats = []
        for u in d.utterances:
            if not u.lattice_path:
                raise ConfigError("utterance %s/%d has no lattice_path" % (d.conv_id, u.utt_index))
            lats.append(load_lattice(_resolve(base, u.lattice_path), vocab))
        out[d.conv_id] = lats
    return out


# -- subcommands -------------------------------------------------------------

def cmd_synth(args):
    cfg = SynthConfig(train_dialogues=args.train_dialogues, test_dialogues=args.test_dialogues,
                      entity_pairs=args.entity_pairs, entity_repeat_prob=args.repeat_prob)
    data = generate_synthetic_conversations(args.seed, cfg)
    os.makedirs(os.path.join(args.out, "lattices"), exist_ok=True)
    data.vocab.save(os.path.join(args.out, "vocab.txt"))
    with open(os.path.join(args.out, "first_pass.arpa"), "w", encoding="utf-8") as f:
        write_arpa(data.first_pass, f)
    for d in data.test:
        for u, lat in zip(d.utterances, data.lattices[d.conv_id]):
            u.lattice_path = "lattices/%s_%03d.lat" % (d.conv_id, u.utt_index)
            save_lattice(lat, os.path.join(args.out, u.lattice_path))
    write_conversations(data.train, os.path.join(args.out, "train.jsonl"))
    write_conversations(data.test, os.path.join(args.out, "test.jsonl"))
    log.info("wrote %d train and %d test dialogues to %s", len(data.train), len(data.test), args.out)


def cmd_textprep(args):
    dialogues = read_conversations(args.conversations)
    seqs = build_concat_corpus(dialogues, args.k, args.tag, args.mode, args.sid_side)
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
        for seq in seqs:
            vocab.ids(seq)  # raises UnknownToken early
    else:
        vocab = build_vocab([u.tokens for d in dialogues for u in d.utterances], tag_tokens(dialogues))
        vocab.save(args.vocab_out or os.path.splitext(args.out)[0] + ".vocab")
    write_corpus(seqs, args.out)
    log.info("%d sequences written to %s", len(seqs), args.out)


def cmd_train(args):
    from .plotting import plot_perplexity

    vocab = Vocabulary.load(args.vocab)
    corpus = [vocab.ids(s) for s in read_corpus(args.corpus)]
    heldout = [vocab.ids(s) for s in read_corpus(args.heldout)] if args.heldout else None
    cfg = rnnlm.RnnLmConfig(vocab_size=len(vocab), embed_dim=args.embed_dim, hidden_dim=args.hidden_dim,
                            num_layers=args.num_layers, cell=args.cell, bptt=args.bptt, lr=args.lr,
                            epochs=args.epochs, batch_size=args.batch_size, clip=args.clip, seed=args.seed)
    lm, history = rnnlm.train(rnnlm.init(cfg, vocab), corpus, heldout=heldout)
    rnnlm.save_file(lm, args.out)
    with open(args.out + ".log.json", "w", encoding="utf-8") as f:
        json.dump(history, f, indent=2)
        f.write("\n")
    if history:
        plot_perplexity({os.path.basename(args.out): history}, args.out + ".ppl.png")
    log.info("model written to %s", args.out)


def _load_subtract(path, vocab):
    return read_arpa(path, vocab) if path else None


def _rescore_one(vocab_path, lm_path, first_pass_path, weight, policy, params, tfidf, item):
    vocab = Vocabulary.load(vocab_path)
    d, lat_paths = item
    lats = [load_lattice(p, vocab) for p in lat_paths]
    if lm_path is None:
        out = []
        for u, lat in zip(d.utterances, lats):
            words, cost = best_path(lat, params.lm_scale)
            out.append(({"conv_id": d.conv_id, "utt_index": u.utt_index,
                         "hypothesis": " ".join(vocab.words(words)), "similarity": 0.0,
                         "concatenated": False, "costs": {"total": cost}}, {}))
        return out
    lm = rnnlm.load_file(lm_path, vocab)
    diff = DifferenceLm(_load_subtract(first_pass_path, vocab), lm, weight, tags=vocab.tag_ids())
    res = rescore_with_context(d, lats, diff, policy, tfidf, params.method, params.lm_scale,
                               params.n, params.beam)
    return [(r.to_json(), dict(r.stats, conv_id=d.conv_id, utt_index=r.utt_index)) for r in res]


def _tfidf_for(dialogues, lattices, lm_scale):
    vocab = None
    docs = []
    for d in dialogues:
        for lat in lattices[d.conv_id]:
            vocab = lat.vocab
            docs.append(vocab.words(best_path(lat, lm_scale)[0]))
    return fit_tfidf(docs)


def cmd_rescore(args):
    vocab = Vocabulary.load(args.vocab)
    dialogues = read_conversations(args.conversations)
    lattices = _load_lattices(dialogues, args.conversations, vocab)
    params = RescoreParams(args.method, args.n, args.beam, args.lm_scale)
    policy = ConcatPolicy(args.tag, args.threshold, args.depth, args.sid_side) if args.concat else None
    tfidf = _tfidf_for(dialogues, lattices, args.lm_scale) if policy is not None else None
    name = args.name or ("1-pass" if args.lm is None else
                         "concat-%s" % args.tag if policy else "rescore")
    base = os.path.dirname(os.path.abspath(args.conversations))
    items = [(d, [_resolve(base, u.lattice_path) for u in d.utterances]) for d in dialogues]
    fn = partial(_rescore_one, args.vocab, args.lm, args.first_pass, args.lm_weight, policy, params, tfidf)
    os.makedirs(args.out, exist_ok=True)
    n = 0
    with _mapper(args.jobs) as mapper, \
            open(os.path.join(args.out, "hyps.jsonl"), "w", encoding="utf-8") as fh, \
            open(os.path.join(args.out, "stats.jsonl"), "w", encoding="utf-8") as fs:
        for results in mapper(fn, items):
            for hyp, stats in results:
                fh.write(json.dumps(dict(hyp, condition=name), ensure_ascii=False) + "\n")
                if stats:
                    fs.write(json.dumps(stats) + "\n")
                n += 1
    log.info("%d hypotheses written to %s", n, args.out)


def _split_named(values, what):
    out = {}
    for v in values:
        if "=" not in v:
            raise ConfigError("%s must look like NAME=PATH, got %r" % (what, v))
        name, path = v.split("=", 1)
        out[name] = path
    return out


def _hyp_sets(values):
    sets = {}
    for v in values:
        name, path = v.split("=", 1) if "=" in v else (None, v)
        groups = read_hyps(path, by_condition=True)
        if name is not None and len(groups) > 1:
            raise ConfigError("%s holds several conditions; drop the NAME= prefix" % path)
        for cond, recs in groups.items():
            cond = name or cond or os.path.basename(os.path.dirname(os.path.abspath(path)))
            sets.setdefault(cond, {}).update(recs)
    return sets


def _write_reports(grid, out):
    from .plotting import plot_grid, plot_thresholds

    os.makedirs(out, exist_ok=True)
    grid.write_json(os.path.join(out, "grid_report.json"))
    grid.write_tsv(os.path.join(out, "grid_report.tsv"))
    if grid.hyps:
        grid.write_hyps(os.path.join(out, "hyps.jsonl"))
    plot_grid(grid, os.path.join(out, "grid_cer.png"))
    plot_thresholds(grid, os.path.join(out, "threshold_sweep.png"))


def cmd_eval(args):
    dialogues = read_conversations(args.conversations)
    if args.hyps and args.lm:
        raise ConfigError("give either --hyps or --lm, not both")
    if args.hyps:
        grid = grid_from_hyps(dialogues, _hyp_sets(args.hyps), baseline=args.baseline)
        _write_reports(grid, args.out)
        _summary(grid)
        return
    if not (args.lm and args.vocab and args.first_pass):
        raise ConfigError("grid mode needs --lm, --vocab and --first-pass")
    vocab = Vocabulary.load(args.vocab)
    lattices = _load_lattices(dialogues, args.conversations, vocab)
    lms = {k: rnnlm.load_file(p, vocab) for k, p in _split_named(args.lm, "--lm").items()}
    bad = set(lms) - set(TAGS)
    if bad:
        raise ConfigError("unknown LM kind(s): %s" % ", ".join(sorted(bad)))
    tags = [t for t in TAGS[1:] if t in lms]
    thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    conds = standard_conditions(tags, thresholds, args.select_tag if args.select_tag in lms else None,
                             untagged="none" in lms)
    baseline = args.baseline or next((c.name for c in conds if c.lm is not None and c.policy is None), None)
    subtract = read_arpa(args.first_pass, vocab)
    tfidf = _tfidf_for(dialogues, lattices, args.lm_scale)
    params = RescoreParams(args.method, args.n, args.beam, args.lm_scale)
    with _mapper(args.jobs) as mapper:
        grid = run_grid(dialogues, lattices, conds, lms, subtract, params, tfidf, baseline, mapper)
    _write_reports(grid, args.out)
    ppl = {kind: heldout_perplexity(lm, dialogues, vocab, args.k, kind) for kind, lm in lms.items()}
    with open(os.path.join(args.out, "perplexity.json"), "w", encoding="utf-8") as f:
        json.dump(ppl, f, indent=2, sort_keys=True)
        f.write("\n")
    for kind, value in sorted(ppl.items()):
        log.info("held-out perplexity %-4s %.4f", kind, value)
    if grid.baseline:
        for cond in conds:
            if cond.policy is not None:
                for rec in corrections(grid, dialogues, grid.baseline, cond.name)[:3]:
                    log.info("corrected by %s: %s | %s -> %s", cond.name, rec["conv_id"],
                             rec[grid.baseline], rec[cond.name])
    _summary(grid)


def _summary(grid):
    for cond in grid.conditions:
        rep = grid.reports[cond.name]
        print("%-16s CER %s  (%d concatenated)" % (
            cond.name, "NA" if rep.ref_len == 0 else "%.4f" % rep.cer, grid.concat_counts.get(cond.name, 0)))


COMMANDS = {"synth": cmd_synth, "textprep": cmd_textprep, "train": cmd_train,
            "rescore": cmd_rescore, "eval": cmd_eval}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        COMMANDS[args.command](args)
    except (RescoreError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print("error: %s: %s" % (type(exc).__name__, msg), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
