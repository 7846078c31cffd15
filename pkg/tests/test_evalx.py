import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topdown_nmt.deptree import DepTree, SentencePair, Token, is_projective, read_parallel, write_source_corpus, write_target_corpus
from topdown_nmt.evalx import (
    Bin,
    BucketResult,
    LengthGenReport,
    bin_report,
    bleu,
    bleu_stats,
    bucket_corpora,
    format_cell,
    length_generalization_run,
    make_bins,
    render_table,
    verb_count,
)
from topdown_nmt.synth import SynthSpec, build_lexicon, from_source, nesting_depth, synth_generate, to_source


def words(text):
    return text.split()


class TestBleu:
    def test_identity(self):
        corpus = [words("a b c d e"), words("x y z w"), words("p q")]
        assert bleu(corpus, corpus) == 100.0

    def test_degenerate_example(self):
        # [DERIVED] unigram 1/3 clipped, no bigram match
        matches, totals, _, _ = bleu_stats([words("the the the")], [words("the cat")])
        assert matches[:2] == [1, 0] and totals[:2] == [3, 2]
        assert bleu([words("the the the")], [words("the cat")]) == 0.0

    def test_disjoint(self):
        assert bleu([words("a b c d")], [words("e f g h")]) == 0.0

    def test_hand_computed_precisions(self):
        # [DERIVED] p = 4/5, 3/4, 2/3, 1/2; equal length so no penalty
        expected = 100 * (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
        assert bleu([words("a b c d e")], [words("a b c d f")]) == pytest.approx(expected, abs=1e-12)

    def test_brevity_penalty(self):
        # [DERIVED] all precisions 1, c=4, r=6
        score = bleu([words("a b c d")], [words("a b c d e f")])
        assert score == pytest.approx(100 * math.exp(1 - 6 / 4), abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        vocab = list("abcdefgh")
        refs = [list(rng.choice(vocab, size=rng.integers(4, 12))) for _ in range(20)]
        hyps = [list(r) for r in refs]
        for h in hyps:
            h[int(rng.integers(len(h)))] = "z"
        perm = rng.permutation(20)
        assert bleu(hyps, refs) == bleu([hyps[i] for i in perm], [refs[i] for i in perm])

    def test_errors(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [])
        with pytest.raises(ValueError):
            bleu([], [])
        with pytest.raises(ValueError):
            bleu([["a"]], [[]])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), min_size=1, max_size=6), st.data())
    def test_range(self, refs, data):
        hyps = [data.draw(st.lists(st.sampled_from("abcde"), max_size=8)) for _ in refs]
        assert 0.0 <= bleu(hyps, refs) <= 100.0 + 1e-9


def _pair(tags):
    tokens = tuple(Token.from_pieces((f"w{i}",), t) for i, t in enumerate(tags))
    heads = (0,) + (1,) * (len(tags) - 1)
    return SentencePair(tuple(f"S{i}" for i in range(len(tags))), DepTree(tokens, heads))


class TestBins:
    def test_verb_count(self):
        assert verb_count(["VBZ", "NN", "VBD"]) == 2
        assert verb_count(["MD", "VB"], prefixes=("VB", "MD")) == 2

    def test_make_bins(self):
        bins = make_bins([0, 2, 5])
        assert [b.label for b in bins] == ["0", "1-2", "3-5", ">5"]
        assert 6 in bins[-1] and 2 in bins[1] and 3 not in bins[1]
        assert Bin(7, 7).label == "7"
        with pytest.raises(ValueError):
            make_bins([3, 3])

    def test_cell_format(self):
        # [PAPER] the bin table cell style "35.94 ± 0.75"
        assert format_cell([35.94 - 0.75 / math.sqrt(2), 35.94 + 0.75 / math.sqrt(2)]) == "35.94 ± 0.75"
        assert format_cell([12.0]) == "12.00"
        assert format_cell(None) == "n/a"

    def test_row_format(self):
        rows = [["7", "35.94 ± 0.75", "34.95 ± 0.44"]]
        assert render_table(rows) == "7 | 35.94 ± 0.75 | 34.95 ± 0.44\n"

    def test_counts_partition(self):
        rng = np.random.default_rng(1)
        tagsets = [list(rng.choice(["VB", "NN", "VBD", "JJ"], size=rng.integers(1, 9))) for _ in range(40)]
        pairs = [_pair(t) for t in tagsets]
        hyps = [p.target.forms for p in pairs]
        report = bin_report(pairs, hyps, edges=[0, 1, 2, 3])
        assert sum(r.count for r in report.rows) == 40

    def test_single_bin_equals_corpus(self):
        pairs = [_pair(["VB", "NN", "NN", "JJ", "NN"]) for _ in range(5)]
        hyps = [["w0", "w1", "w2", "w3", "x"]] * 5
        report = bin_report(pairs, {"a": hyps}, edges=[10])
        assert report.rows[0].scores["a"] == report.corpus["a"]

    def test_empty_bin_renders_na(self):
        pairs = [_pair(["VB", "NN"])]
        text = bin_report(pairs, {"a": [["w0", "w1"]], "b": [["w0"]]}, edges=[0, 1]).render()
        assert "n/a" in text.splitlines()[1]

    def test_multiple_runs(self):
        pairs = [_pair(["VB", "NN", "NN", "NN", "NN"])]
        runs = {"a": [[["w0", "w1", "w2", "w3", "w4"]], [["w0", "w1", "w2", "w3", "w4"]]]}
        report = bin_report(pairs, runs, edges=[1])
        assert report.table()[1][1] == "100.00 ± 0.00"

    def test_source_side_needs_tags(self):
        with pytest.raises(ValueError):
            bin_report([_pair(["VB"])], [["w0"]], side="source")

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bin_report([_pair(["VB"])], [["w0"], ["w1"]])


class TestSynth:
    def test_single_node(self):
        pairs = synth_generate(SynthSpec(min_nodes=1, max_nodes=1), 20)
        assert all(len(p.target) == 1 for p in pairs)

    @pytest.mark.parametrize("lo,hi", [(1, 8), (9, 16), (17, 24)])
    def test_node_range_and_projectivity(self, lo, hi):
        pairs = synth_generate(SynthSpec(min_nodes=lo, max_nodes=hi, seed=lo), 50)
        for p in pairs:
            assert lo <= len(p.target) <= hi and is_projective(p.target)
            assert nesting_depth(p.target) <= 3
            assert [from_source(s) for s in p.source] == list(p.target.pieces)

    def test_deterministic(self):
        a = synth_generate(SynthSpec(seed=5), 30)
        b = synth_generate(SynthSpec(seed=5), 30)
        assert a == b
        assert synth_generate(SynthSpec(seed=6), 30) != a

    def test_file_roundtrip(self, tmp_path):
        pairs = synth_generate(SynthSpec(seed=2), 25)
        write_source_corpus([p.source for p in pairs], tmp_path / "src.txt")
        write_target_corpus([p.target for p in pairs], tmp_path / "tgt.conll")
        assert read_parallel(tmp_path / "src.txt", tmp_path / "tgt.conll") == pairs

    def test_tree_recoverable_from_source(self):
        # the same token string never maps to two trees
        seen = {}
        for p in synth_generate(SynthSpec(seed=9, max_nodes=6), 3000):
            assert seen.setdefault(p.source, p.target) == p.target

    def test_lexicon(self):
        lex = build_lexicon(SynthSpec(vocab_size=43))
        assert sum(len(v) for v in lex.values()) == 43
        flat = [w for v in lex.values() for w in v]
        assert len(set(flat)) == 43

    def test_source_mapping(self):
        assert to_source("(") == "[" and to_source("ka@@") == "KA@@"
        assert from_source(to_source("mi")) == "mi"

    @pytest.mark.parametrize(
        "spec", [SynthSpec(min_nodes=5, max_nodes=4), SynthSpec(min_depth=3, max_nodes=8), SynthSpec(vocab_size=5)]
    )
    def test_impossible(self, spec):
        with pytest.raises(ValueError):
            synth_generate(spec, 1)


class TestLengthGen:
    def test_bucket_corpora(self):
        corpora = bucket_corpora([(1, 8), (9, 16)], 5, 40, 3, seed=1)
        assert list(corpora) == ["<=8", "9-16"]
        assert all(9 <= len(p.target) <= 16 for p in corpora["9-16"])

    def test_report_shape(self):
        rows = [
            BucketResult(b, a, 10, 50.0 + k, 0.5, 1.0 if a == "topdown" else None)
            for b in ("<=8", "9-16", "17-24")
            for k, a in enumerate(("topdown", "baseline"))
        ]
        report = LengthGenReport(8, rows)
        table = report.table()
        assert len(table) == 1 + 6 and table[0][-1] == "well-formed"
        assert table[2][-1] == "n/a"
        assert report.ordering() == {"<=8": "baseline", "9-16": "baseline", "17-24": "baseline"}
        assert len(report.to_tsv().splitlines()) == 7

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            length_generalization_run({"topdown": tmp_path / "nope.npz"}, {"<=8": []})
