"""BLEU, binned reports and the two-arm length-generalization harness."""

from __future__ import annotations

import math
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .config import TrainConfig
from .deptree import DepTree, SentencePair, detokenize_pieces
from .synth import SynthSpec, synth_generate

MAX_ORDER = 4
BIN_KEYS = ("verb_count", "source_length", "node_count")


# -- BLEU -----------------------------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses, references) -> tuple[list[int], list[int], int, int]:
    """Clipped n-gram matches and totals per order, plus hypothesis and reference lengths."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not references:
        raise ValueError("empty reference corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        if len(ref) == 0:
            raise ValueError("empty reference sentence")
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU-4 on tokens, 0-100, single reference, no smoothing.

    Any n-gram order without a match makes the score 0.
    """
    matches, totals, c, r = bleu_stats(hypotheses, references)
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / MAX_ORDER
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


# -- binning --------------------------------------------------------------------


def verb_count(tags: Sequence[str] | DepTree, prefixes: Sequence[str] = ("VB",)) -> int:
    if isinstance(tags, DepTree):
        tags = tags.pos_tags
    return sum(1 for t in tags if t.startswith(tuple(prefixes)))


def bin_value(pair: SentencePair, key: str, verb_tags=("VB",), side: str = "target", source_pos=None) -> int:
    if key == "verb_count":
        if side == "target":
            return verb_count(pair.target, verb_tags)
        if source_pos is None:
            raise ValueError("source-side verb binning needs source PoS tags")
        return verb_count(source_pos, verb_tags)
    if key == "source_length":
        return len(pair.source)
    if key == "node_count":
        return len(pair.target)
    raise ValueError(f"unknown bin key {key!r}; choose from {BIN_KEYS}")


@dataclass(frozen=True)
class Bin:
    lo: int
    hi: int | None  # None: open-ended

    @property
    def label(self) -> str:
        if self.hi is None:
            return f">{self.lo - 1}"
        if self.lo == self.hi:
            return str(self.lo)
        if self.lo <= 0:
            return f"<={self.hi}"
        return f"{self.lo}-{self.hi}"

    def __contains__(self, value: int) -> bool:
        return value >= self.lo and (self.hi is None or value <= self.hi)


def make_bins(edges: Sequence[int]) -> list[Bin]:
    """Bins from inclusive upper edges: (-inf, e0], (e0, e1], ..., (e_last, inf)."""
    edges = list(edges)
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("edges must be a non-empty increasing sequence")
    bins, lo = [], 0
    for e in edges:
        bins.append(Bin(lo, e))
        lo = e + 1
    bins.append(Bin(lo, None))
    return bins


def _as_runs(hypotheses) -> dict[str, list[list[Sequence[str]]]]:
    """Normalize to arm -> runs -> sentences -> tokens."""
    if isinstance(hypotheses, Mapping):
        out = {}
        for arm, hyps in hypotheses.items():
            nested = len(hyps) > 0 and len(hyps[0]) > 0 and not isinstance(hyps[0][0], str)
            out[arm] = [list(run) for run in hyps] if nested else [list(hyps)]
        return out
    return {"hyp": [list(hypotheses)]}


def format_cell(scores: Sequence[float] | None) -> str:
    if not scores:
        return "n/a"
    mean = statistics.fmean(scores)
    if len(scores) == 1:
        return f"{mean:.2f}"
    return f"{mean:.2f} ± {statistics.stdev(scores):.2f}"


@dataclass
class BinRow:
    label: str
    count: int
    scores: dict[str, list[float] | None]


@dataclass
class BleuReport:
    key: str
    arms: list[str]
    rows: list[BinRow]
    corpus: dict[str, list[float]]

    def table(self) -> list[list[str]]:
        out = [[self.key] + self.arms + ["n"]]
        for row in self.rows:
            out.append([row.label] + [format_cell(row.scores[a]) for a in self.arms] + [str(row.count)])
        out.append(["all"] + [format_cell(self.corpus[a]) for a in self.arms] + [str(sum(r.count for r in self.rows))])
        return out

    def render(self) -> str:
        return render_table(self.table())

    def to_tsv(self) -> str:
        return "".join("\t".join(r) + "\n" for r in self.table())


def render_table(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def bin_report(
    pairs: Sequence[SentencePair],
    hypotheses,
    key: str = "verb_count",
    edges: Sequence[int] = (0, 1, 2, 3, 4, 5, 6),
    verb_tags: Sequence[str] = ("VB",),
    side: str = "target",
    source_pos: Sequence[Sequence[str]] | None = None,
    keep_empty_overflow: bool = False,
) -> BleuReport:
    """Per-bin BLEU for one or more arms.

    ``hypotheses`` is a list of token sequences, or a mapping arm -> list
    (one run) / arm -> list of runs (e.g. one per seed, rendered as mean ±
    stdev).  References are the target word forms.  Empty bins show "n/a".
    """
    runs = _as_runs(hypotheses)
    refs = [pair.target.forms for pair in pairs]
    for arm, arm_runs in runs.items():
        for run in arm_runs:
            if len(run) != len(refs):
                raise ValueError(f"arm {arm}: {len(run)} hypotheses for {len(refs)} sentences")
    values = [
        bin_value(p, key, verb_tags, side, None if source_pos is None else source_pos[i]) for i, p in enumerate(pairs)
    ]
    bins = make_bins(edges)
    rows = []
    for b in bins:
        idx = [i for i, v in enumerate(values) if v in b]
        if b.hi is None and not idx and not keep_empty_overflow:
            continue
        scores = {}
        for arm, arm_runs in runs.items():
            scores[arm] = [bleu([run[i] for i in idx], [refs[i] for i in idx]) for run in arm_runs] if idx else None
        rows.append(BinRow(b.label, len(idx), scores))
    corpus = {arm: [bleu(run, refs) for run in arm_runs] for arm, arm_runs in runs.items()}
    return BleuReport(key, list(runs), rows, corpus)


# -- length generalization --------------------------------------------------------


DEFAULT_BUCKETS = ((1, 8), (9, 16), (17, 24))


@dataclass
class BucketResult:
    bucket: str
    arm: str
    n: int
    bleu: float
    exact_match: float
    well_formed: float | None  # topdown only


@dataclass
class LengthGenReport:
    train_threshold: int
    rows: list[BucketResult]
    seconds: dict[str, float] = field(default_factory=dict)

    def row(self, bucket: str, arm: str) -> BucketResult:
        for r in self.rows:
            if r.bucket == bucket and r.arm == arm:
                return r
        raise KeyError((bucket, arm))

    def table(self) -> list[list[str]]:
        out = [["bucket", "arm", "n", "BLEU", "exact", "well-formed"]]
        for r in self.rows:
            wf = "n/a" if r.well_formed is None else f"{100 * r.well_formed:.1f}"
            out.append([r.bucket, r.arm, str(r.n), f"{r.bleu:.2f}", f"{100 * r.exact_match:.1f}", wf])
        return out

    def comparison(self) -> list[list[str]]:
        """Bucket rows with one BLEU column per arm."""
        arms = list(dict.fromkeys(r.arm for r in self.rows))
        out = [["nodes"] + arms]
        for bucket in dict.fromkeys(r.bucket for r in self.rows):
            out.append([bucket] + [f"{self.row(bucket, a).bleu:.2f}" for a in arms])
        return out

    def ordering(self) -> dict[str, str]:
        """Which arm has the higher BLEU in each bucket (ties reported as such)."""
        out = {}
        for row in self.comparison()[1:]:
            arms = self.comparison()[0][1:]
            scores = dict(zip(arms, map(float, row[1:])))
            best = max(scores.values())
            leaders = [a for a, s in scores.items() if s == best]
            out[row[0]] = leaders[0] if len(leaders) == 1 else "tie"
        return out

    def render(self) -> str:
        return render_table(self.table()) + "\n" + render_table(self.comparison())

    def to_tsv(self) -> str:
        return "".join("\t".join(r) + "\n" for r in self.table())


def bucket_label(lo: int, hi: int) -> str:
    return f"<={hi}" if lo <= 1 else f"{lo}-{hi}"


def bucket_corpora(
    buckets: Sequence[tuple[int, int]], n_per_bucket: int, vocab_size: int, max_depth: int, seed: int, lexicon_seed: int = 0
) -> dict[str, list[SentencePair]]:
    out = {}
    for k, (lo, hi) in enumerate(buckets):
        spec = SynthSpec(vocab_size, 0, max_depth, lo, hi, seed=seed + 1000 * (k + 1), lexicon_seed=lexicon_seed)
        out[bucket_label(lo, hi)] = synth_generate(spec, n_per_bucket)
    return out


def evaluate_arm(model, pairs: Sequence[SentencePair], beam: int = 1, mask: bool = True, max_steps=None) -> tuple[float, float, float | None]:
    """(BLEU, exact match, well-formed rate) of one model on ``pairs``."""
    from .decoder_baseline import baseline_decode
    from .decoder_topdown import beam_decode

    hyps, exact, formed = [], 0, 0
    for pair in pairs:
        if model.arm == "topdown":
            h = beam_decode(model, pair.source, beam, max_steps=max_steps, mask=mask)
            tree = h.tree if h.failure is None else None
            formed += tree is not None
            exact += tree == pair.target
            hyps.append(tree.forms if tree is not None else [])
        else:
            r = baseline_decode(model, pair.source, beam, max_steps=max_steps)
            exact += r.failure is None and list(r.pieces) == list(pair.target.pieces)
            hyps.append(detokenize_pieces(r.pieces))
    n = max(len(pairs), 1)
    score = bleu(hyps, [p.target.forms for p in pairs]) if pairs else 0.0
    return score, exact / n, (formed / n if model.arm == "topdown" else None)


def length_generalization_run(
    checkpoints: Mapping[str, str | Path],
    corpora: Mapping[str, Sequence[SentencePair]],
    train_threshold: int = 8,
    beam: int = 1,
    mask: bool = True,
) -> LengthGenReport:
    """Evaluate trained checkpoints (arm -> path) on every bucket corpus."""
    from .training import load_model

    for arm, path in checkpoints.items():
        if not Path(path).is_file():
            raise FileNotFoundError(f"missing checkpoint for arm {arm}: {path}")
    rows = []
    seconds = {}
    for arm, path in checkpoints.items():
        t0 = time.perf_counter()
        model, _, _ = load_model(path)
        for bucket, pairs in corpora.items():
            score, em, wf = evaluate_arm(model, pairs, beam, mask)
            rows.append(BucketResult(bucket, model.arm, len(pairs), score, em, wf))
        seconds[f"eval/{arm}"] = time.perf_counter() - t0
    rows.sort(key=lambda r: (list(corpora).index(r.bucket), r.arm != "topdown"))
    return LengthGenReport(train_threshold, rows, seconds)


@dataclass
class LengthGenSetup:
    train_threshold: int = 8
    buckets: tuple = DEFAULT_BUCKETS
    n_train: int = 5000
    n_valid: int = 50
    n_eval: int = 50
    vocab_size: int = 16
    max_depth: int = 3
    beam: int = 1
    seed: int = 1


def lengthgen_experiment(
    config: TrainConfig,
    setup: LengthGenSetup,
    out_dir: str | Path,
    arms: Sequence[str] = ("topdown", "baseline"),
    log_fn: Callable[[str, dict], None] | None = None,
) -> LengthGenReport:
    """Generate data, train both arms below the threshold, evaluate every bucket.

    Writes checkpoints, the aligned report and its TSV form to ``out_dir``.
    """
    from .training import train
    from .vocab import build_vocab

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = SynthSpec(setup.vocab_size, 0, setup.max_depth, 1, setup.train_threshold, seed=setup.seed)
    train_pairs = synth_generate(spec, setup.n_train)
    valid_spec = SynthSpec(setup.vocab_size, 0, setup.max_depth, 1, setup.train_threshold, seed=setup.seed + 500)
    valid_pairs = synth_generate(valid_spec, setup.n_valid) if setup.n_valid else None
    corpora = bucket_corpora(setup.buckets, setup.n_eval, setup.vocab_size, setup.max_depth, setup.seed)
    vocab = build_vocab(train_pairs, config.min_freq)
    checkpoints, seconds = {}, {}
    for arm in arms:
        t0 = time.perf_counter()
        path = out_dir / f"{arm}.npz"
        train(
            config,
            train_pairs,
            arm=arm,
            valid_pairs=valid_pairs,
            vocab=vocab,
            checkpoint_path=path,
            log_fn=None if log_fn is None else (lambda e, a=arm: log_fn(a, e)),
        )
        checkpoints[arm] = path
        seconds[f"train/{arm}"] = time.perf_counter() - t0
    report = length_generalization_run(checkpoints, corpora, setup.train_threshold, setup.beam)
    report.seconds = {**seconds, **report.seconds}
    (out_dir / "report.txt").write_text(report.render(), encoding="utf-8")
    (out_dir / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    return report
