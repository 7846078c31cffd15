"""Command-line entry point: ``topdown-nmt <subcommand> ...``.

Configuration comes from ``--preset``, then a ``key=value`` file given with
``--config``, then ``--set key=value`` and explicit flags; later sources
win.  The effective configuration is echoed to stderr as ``# key=value``
lines.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys
from pathlib import Path

from . import __version__
from .config import PRESETS, TrainConfig, coerce, format_kv, preset, read_kv_file
from .deptree import (
    CorpusFormatError,
    format_tree,
    is_projective,
    iter_target_corpus,
    read_parallel,
    read_source_corpus,
    read_target_corpus,
    write_source_corpus,
    write_target_corpus,
)
from .transition import TransitionError, expected_length, format_dump, oracle, parse_dump, tree_from_steps

TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


class CliError(Exception):
    pass


def _out(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8", newline="\n")


def _read_input(path) -> str:
    if path in (None, "-"):
        return sys.stdin.read()
    with open(path, encoding="utf-8") as f:
        return f.read()


# -- subcommands ----------------------------------------------------------------


def cmd_oracle(args, config) -> int:
    trees = read_target_corpus(args.input, skip_nonprojective=args.skip_nonprojective)
    with _out(args.output) as f:
        f.write(format_dump(oracle(t) for t in trees))
    return 0


def cmd_execute(args, config) -> int:
    trees = [tree_from_steps(steps) for steps in parse_dump(_read_input(args.input))]
    with _out(args.output) as f:
        write_target_corpus(trees, f)
    return 0


def cmd_validate(args, config) -> int:
    n = failures = skipped = 0
    for lineno, tree in iter_target_corpus(args.input):
        if not is_projective(tree):
            if args.skip_nonprojective:
                skipped += 1
                continue
            print(f"line {lineno}: tree is not projective", file=sys.stderr)
            n += 1
            failures += 1
            continue
        n += 1
        problems = []
        again = list(iter_target_corpus(io.StringIO(format_tree(tree))))
        if len(again) != 1 or again[0][1] != tree:
            problems.append("file-format roundtrip changed the tree")
        try:
            steps = oracle(tree)
            if len(steps) != expected_length(len(tree), tree.n_pieces):
                problems.append(f"oracle length {len(steps)} != 4n+s = {expected_length(len(tree), tree.n_pieces)}")
            if tree_from_steps(steps) != tree:
                problems.append("oracle/executor roundtrip changed the tree")
        except TransitionError as exc:
            problems.append(str(exc))
        for p in problems:
            print(f"line {lineno}: {p}", file=sys.stderr)
        failures += bool(problems)
    if args.source:
        n_src = len(read_source_corpus(args.source))
        if n_src != n + skipped:
            print(f"count mismatch: {n_src} source lines vs {n + skipped} target blocks", file=sys.stderr)
            failures += 1
    status = "ok" if failures == 0 else "failed"
    extra = f", {skipped} non-projective skipped" if skipped else ""
    print(f"{status}: {n} trees, {failures} failures{extra}")
    return 0 if failures == 0 else 1


def cmd_vocab(args, config) -> int:
    from .vocab import build_vocab

    pairs = read_parallel(args.source, args.target, args.skip_nonprojective)
    vocab = build_vocab(pairs, config.min_freq)
    with _out(args.output) as f:
        f.write(vocab.to_text())
    return 0


def cmd_train(args, config) -> int:
    from .training import format_log_line, train
    from .vocab import JointVocab

    pairs = read_parallel(args.source, args.target, args.skip_nonprojective)
    valid = None
    if args.valid_source or args.valid_target:
        if not (args.valid_source and args.valid_target):
            raise CliError("--valid-source and --valid-target go together")
        valid = read_parallel(args.valid_source, args.valid_target, args.skip_nonprojective)
    vocab = JointVocab.load(args.vocab) if args.vocab else None
    log = open(args.log, "w", encoding="utf-8") if args.log else sys.stderr

    def log_fn(entry):
        log.write(format_log_line(entry) + "\n")
        log.flush()

    result = train(config, pairs, arm=args.arm, valid_pairs=valid, vocab=vocab, checkpoint_path=args.output, resume_from=args.resume, log_fn=log_fn)
    if log is not sys.stderr:
        log.close()
    print(f"trained {args.arm}: {result.updates} updates, stop: {result.stop_reason}; checkpoint {args.output}", file=sys.stderr)
    return 0


def cmd_translate(args, config) -> int:
    from .decoder_baseline import baseline_decode
    from .decoder_topdown import beam_decode
    from .training import load_model

    if args.beam < 1:
        raise CliError("--beam must be >= 1")
    model, _, _ = load_model(args.model)
    sources = read_source_corpus(args.input)
    failures = 0
    with _out(args.output) as f:
        for i, source in enumerate(sources, start=1):
            if model.arm == "topdown":
                hyp = beam_decode(model, source, args.beam, max_steps=args.max_steps, mask=not args.no_mask)
                if hyp.failure is not None:
                    failures += 1
                    f.write(f"#FAIL sentence {i}: {hyp.failure}\n")
                    if args.emit_tree:
                        f.write("\n")
                elif args.emit_tree:
                    f.write(format_tree(hyp.tree) + "\n")
                else:
                    f.write(" ".join(hyp.tree.forms) + "\n")
            else:
                if args.emit_tree:
                    raise CliError("--emit-tree needs a topdown checkpoint")
                res = baseline_decode(model, source, args.beam, max_steps=args.max_steps)
                if res.failure is not None:
                    failures += 1
                    f.write(f"#FAIL sentence {i}: {res.failure}\n")
                else:
                    f.write(" ".join(res.words) + "\n")
    print(f"translated {len(sources)} sentences, {failures} failures", file=sys.stderr)
    return 0


def _read_hypotheses(path) -> list[list[str]]:
    """Surface lines; ``#FAIL`` lines count as empty output.  Tree files are accepted too."""
    text = _read_input(path)
    blocks = text.strip("\n").split("\n\n")
    only_failures = text.endswith("\n\n") and all(b.startswith("#FAIL") and "\n" not in b for b in blocks)
    if "\t" in text or only_failures:
        out = []
        for block in blocks:
            if block.startswith("#FAIL"):
                out.append([])
            else:
                out.extend(t.forms for _, t in iter_target_corpus(io.StringIO(block)))
        return out
    return [[] if line.startswith("#FAIL") else line.split() for line in text.splitlines()]


def cmd_evaluate(args, config) -> int:
    from .evalx import bin_report

    pairs = read_parallel(args.source, args.target, args.skip_nonprojective)
    hyps = {}
    for spec in args.hyp:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        hyps[name] = _read_hypotheses(path)
    source_pos = None
    if args.bin_side == "source":
        if not args.source_pos:
            raise CliError("--bin-side source needs --source-pos (one line of tags per sentence)")
        source_pos = [line.split() for line in _read_input(args.source_pos).splitlines()]
    edges = [int(e) for e in args.edges.split(",")]
    report = bin_report(pairs, hyps, args.bin_key, edges, tuple(args.verb_tags.split(",")), args.bin_side, source_pos)
    sys.stdout.write(report.render())
    if args.tsv:
        Path(args.tsv).write_text(report.to_tsv(), encoding="utf-8")
    return 0


def cmd_synth(args, config) -> int:
    from .synth import SynthSpec, synth_generate

    spec = SynthSpec(args.vocab_size, args.min_depth, args.max_depth, args.min_nodes, args.max_nodes, args.seed, args.lexicon_seed)
    pairs = synth_generate(spec, args.count)
    write_source_corpus([p.source for p in pairs], args.source_out)
    write_target_corpus([p.target for p in pairs], args.target_out)
    print(f"wrote {len(pairs)} pairs", file=sys.stderr)
    return 0


def _parse_buckets(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        if not sep:
            raise CliError(f"bad bucket {part!r}; expected LO-HI")
        out.append((int(lo), int(hi)))
    return tuple(out)


def cmd_lengthgen(args, config) -> int:
    from .evalx import LengthGenSetup, lengthgen_experiment
    from .training import format_log_line

    setup = LengthGenSetup(
        train_threshold=args.threshold,
        buckets=_parse_buckets(args.buckets),
        n_train=args.n_train,
        n_valid=args.n_valid,
        n_eval=args.n_eval,
        vocab_size=args.vocab_size,
        max_depth=args.max_depth,
        beam=args.beam,
        seed=args.seed,
    )

    def log_fn(arm, entry):
        if args.verbose:
            print(f"[{arm}] " + format_log_line(entry), file=sys.stderr)

    report = lengthgen_experiment(config, setup, args.out, log_fn=log_fn)
    sys.stdout.write(report.render())
    order = report.ordering()
    print("higher BLEU by bucket: " + ", ".join(f"{b}: {a}" for b, a in order.items()))
    print("seconds: " + json.dumps({k: round(v, 1) for k, v in report.seconds.items()}))
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser(suppress: bool = False) -> argparse.ArgumentParser:
    """With ``suppress`` every default is omitted, which reveals the flags actually given."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file (TrainConfig keys and flag names)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("--skip-nonprojective", action="store_true")

    parser = argparse.ArgumentParser(prog="topdown-nmt", description="Top-down tree decoding for translation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("oracle", cmd_oracle, "tree file -> transition dump")
    p.add_argument("input")
    p.add_argument("-o", "--output")

    p = add("execute", cmd_execute, "transition dump -> tree file")
    p.add_argument("input")
    p.add_argument("-o", "--output")

    p = add("validate", cmd_validate, "check a tree corpus (format roundtrip, projectivity, 4n+s)")
    p.add_argument("input")
    p.add_argument("--source", help="source file whose line count must match")

    p = add("vocab", cmd_vocab, "build the joint vocabulary")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("-o", "--output")

    p = add("train", cmd_train, "train one arm")
    p.add_argument("--arm", choices=("topdown", "baseline"), required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--valid-source")
    p.add_argument("--valid-target")
    p.add_argument("--vocab")
    p.add_argument("--resume")
    p.add_argument("--log")
    p.add_argument("-o", "--output", required=True, help="checkpoint path (.npz)")

    p = add("translate", cmd_translate, "decode a source file with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("-o", "--output")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--no-mask", action="store_true")
    p.add_argument("--emit-tree", action="store_true")

    p = add("evaluate", cmd_evaluate, "BLEU, overall and binned")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--hyp", action="append", required=True, metavar="[NAME=]FILE")
    p.add_argument("--bin-key", choices=("verb_count", "source_length", "node_count"), default="verb_count")
    p.add_argument("--bin-side", choices=("target", "source"), default="target")
    p.add_argument("--source-pos")
    p.add_argument("--edges", default="0,1,2,3,4,5,6")
    p.add_argument("--verb-tags", default="VB")
    p.add_argument("--tsv")

    p = add("synth", cmd_synth, "generate a synthetic parallel corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--vocab-size", type=int, default=40)
    p.add_argument("--min-depth", type=int, default=0)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--min-nodes", type=int, default=1)
    p.add_argument("--max-nodes", type=int, default=8)
    p.add_argument("--lexicon-seed", type=int, default=0)
    p.add_argument("--source-out", required=True)
    p.add_argument("--target-out", required=True)

    p = add("lengthgen", cmd_lengthgen, "train both arms below a node threshold and compare by bucket")
    p.add_argument("--out", required=True, help="directory for checkpoints and reports")
    p.add_argument("--threshold", type=int, default=8)
    p.add_argument("--buckets", default="1-8,9-16,17-24")
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-valid", type=int, default=50)
    p.add_argument("--n-eval", type=int, default=50)
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    if suppress:
        for sp in [parser, *sub.choices.values()]:
            for action in sp._actions:
                action.default = argparse.SUPPRESS
    return parser


# lengthgen trains twice on CPU, so it starts from the small preset and a schedule tuned for it
LENGTHGEN_DEFAULTS = {
    "examples_per_update": 100,
    "micro_batch": 100,
    "max_updates": 800,
    "validate_every": 100,
    "dropout": 0.0,
    "dtype": "float32",
}


def resolve(argv):
    """Parse ``argv`` and merge configuration sources; returns (args, TrainConfig)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    explicit = vars(build_parser(suppress=True).parse_args(argv))
    file_values = read_kv_file(args.config) if getattr(args, "config", None) else {}
    train_values: dict = {}
    for key, value in file_values.items():
        dest = key.replace("-", "_")
        if key in TRAIN_KEYS:
            train_values[key] = value
        elif dest in vars(args) and dest not in ("func", "command", "config"):
            if dest not in explicit:
                default = parser._subparsers._group_actions[0].choices[args.command].get_default(dest)
                setattr(args, dest, _convert(value, default))
        else:
            raise CliError(f"unknown configuration key {key!r}")
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or key not in TRAIN_KEYS:
            raise CliError(f"--set expects KEY=VALUE with a training key, got {item!r}")
        train_values[key] = value
    name = args.preset or ("desk" if args.command == "lengthgen" else "full")
    base = dict(LENGTHGEN_DEFAULTS) if args.command == "lengthgen" else {}
    if args.seed is not None:
        train_values["seed"] = args.seed
    config = preset(name, **{**base, **coerce(train_values)})
    if args.seed is None:
        args.seed = config.seed
    return args, config


def _convert(value: str, default):
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    return value


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, config = resolve(argv)
        echo = {"command": args.command, "preset": args.preset or ("desk" if args.command == "lengthgen" else "full")}
        echo.update(config.to_dict())
        sys.stderr.write("".join(f"# {line}\n" for line in format_kv(echo).splitlines()))
        return args.func(args, config)
    except (CliError, CorpusFormatError, TransitionError, KeyError, ValueError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
