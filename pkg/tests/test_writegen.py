"""Keyword-writing tasks: lexicon, entropy, binning and scoring."""

import math
import random
from collections import Counter

import pytest

from dwlab import writegen
from dwlab.errors import BackendError, ParameterError


@pytest.fixture(scope="module")
def lex():
    return writegen.load_lexicon()


def test_lexicon_shape(lex):
    assert len(lex.groups) == 23
    assert all(len(g.keywords) >= 20 for g in lex.groups.values())
    pool = [k for k, _ in lex.pool()]
    assert len(pool) == len(set(pool))


def test_no_keyword_hides_inside_another(lex):
    # otherwise coverage of one keyword could be credited to another
    pool = [k for k, _ in lex.pool()]
    for a in pool:
        pat = writegen.keyword_pattern(a)
        assert [b for b in pool if b != a and pat.search(b)] == []


class TestEntropy:
    def test_extremes(self):
        assert writegen.normalized_entropy(list("abcd")) == 1.0
        assert writegen.normalized_entropy(list("aaaa")) == 0.0
        assert abs(writegen.normalized_entropy(list("aabb")) - 0.5) < 1e-12

    def test_against_shannon_definition(self):
        rng = random.Random(0)
        for _ in range(200):
            k = rng.randint(2, 20)
            groups = [rng.randint(0, 5) for _ in range(k)]
            counts = Counter(groups).values()
            h = -sum(m / k * math.log2(m / k) for m in counts)
            assert writegen.normalized_entropy(groups) == pytest.approx(h / math.log2(k), abs=1e-12)

    def test_literal_slot_sum(self):
        # each of the two categories occupies 2 slots, each contributing 0.5 bit
        assert writegen.normalized_entropy(list("aabb"), literal=True) == pytest.approx(1.0)

    def test_degenerate(self):
        assert writegen.normalized_entropy(["a"]) == 0.0
        assert writegen.normalized_entropy([]) == 0.0


def test_sample_sets_deterministic(lex):
    a = writegen.sample_sets(4, 500, 3, lex)
    b = writegen.sample_sets(4, 500, 3, lex)
    assert a == b
    assert all(len({k for k, _ in t.keywords}) == 4 for t in a)


def test_sample_sets_rejects(lex):
    with pytest.raises(ParameterError):
        writegen.sample_sets(10_000, 1, 0, lex)


class TestBinning:
    def test_five_equal_bins(self, lex):
        tasks = writegen.bin_quintiles(writegen.sample_sets(8, 500, 0, lex))
        assert Counter(t.quintile for t in tasks) == {q: 100 for q in range(1, 6)}
        ent = [t.entropy_norm for t in tasks]
        assert ent == sorted(ent)

    def test_ties_fall_back_to_id(self, lex):
        tasks = [writegen.KeywordTask(f"t{i:02d}", 4, (), 0.5, i) for i in range(10)]
        random.Random(1).shuffle(tasks)
        binned = writegen.bin_quintiles(tasks)
        assert [(t.id, t.quintile) for t in binned] == [(f"t{i:02d}", i // 2 + 1) for i in range(10)]

    def test_permutation_invariant(self, lex):
        tasks = writegen.sample_sets(12, 100, 5, lex)
        shuffled = tasks[:]
        random.Random(2).shuffle(shuffled)
        assert writegen.bin_quintiles(tasks) == writegen.bin_quintiles(shuffled)

    def test_indivisible(self, lex):
        with pytest.raises(ParameterError):
            writegen.bin_quintiles(writegen.sample_sets(4, 12, 0, lex))


def test_dataset_parity(lex):
    ds = writegen.generate_dataset(seed=0, lexicon=lex)
    assert len(ds) == 2500
    assert Counter((t.K, t.quintile) for t in ds) == {(k, q): 100 for k in (4, 8, 12, 16, 20) for q in range(1, 6)}


def test_quintile_means_increase(lex):
    ds = writegen.generate_dataset(Ks=(8, 12, 16, 20), seed=0, lexicon=lex)
    for K in (8, 12, 16, 20):
        means = [sum(t.entropy_norm for t in ds if t.K == K and t.quintile == q) / 100 for q in range(1, 6)]
        assert all(b > a for a, b in zip(means, means[1:]))


@pytest.mark.xfail(strict=True, reason="with 4 keywords from 23 groups most sets are all-distinct, "
                                       "so the top quintiles tie at entropy 1")
def test_quintile_means_strictly_increase_k4(lex):
    ds = writegen.generate_dataset(Ks=(4,), seed=0, lexicon=lex)
    means = [sum(t.entropy_norm for t in ds if t.quintile == q) / 100 for q in range(1, 6)]
    assert all(b > a for a, b in zip(means, means[1:]))


class TestStandardScore:
    KW = ["apple", "river", "violin", "copper"]

    def essay(self, n, kws):
        words = list(kws) + [None] * (n - len(kws))
        return " ".join(f"Sentence {i} mentions {w or 'nothing'} today." for i, w in enumerate(words))

    def test_perfect(self):
        assert writegen.standard_score(self.essay(4, self.KW), 4, self.KW)[0] == 1.0

    def test_half_keywords(self):
        assert writegen.standard_score(self.essay(4, self.KW[:2]), 4, self.KW)[0] == 0.75

    def test_double_length(self):
        assert writegen.standard_score(self.essay(8, self.KW), 4, self.KW)[0] == 0.5

    def test_diagnostics(self):
        _, diag = writegen.standard_score(self.essay(4, self.KW[:3]), 4, self.KW)
        assert diag["missing_keywords"] == ["copper"] and diag["sentences"] == 4

    def test_whole_word_match(self):
        assert writegen.standard_score("Pineapples grow. Yes.", 2, ["apple"])[1]["coverage"] == 0.0


def test_split_sentences_abbreviations():
    assert writegen.split_sentences("Dr. Smith arrived. He sat down!") == ["Dr. Smith arrived.", "He sat down!"]
    assert writegen.split_sentences("") == []


class TestComposite:
    def test_examples(self):
        assert writegen.composite_score(1.0, 10) == 10
        assert writegen.composite_score(0.8, 7.5) == pytest.approx(6.0)
        assert writegen.composite_score(0, 9) == 0

    @pytest.mark.parametrize("s,q", [(1.2, 5), (-0.1, 5), (0.5, 11), (0.5, -1)])
    def test_range(self, s, q):
        with pytest.raises(ParameterError):
            writegen.composite_score(s, q)


class TestJudge:
    VARIED = (
        "The river ran fast after the storm. Children gathered along its banks to watch the brown water "
        "carry branches downstream. An old fisherman shook his head. He had seen floods like this before, "
        "decades ago, when the bridge still stood. Nobody listened. The mayor arrived late, wearing boots "
        "that were far too clean. Someone laughed. By evening the water had crept into the bakery on Main "
        "Street, and the smell of wet flour drifted over the square. Lamps flickered. The fisherman went home and slept."
    )

    def test_empty(self):
        task = writegen.sample_sets(4, 1, 0)[0]
        assert writegen.judge_quality("", task) == 0.0

    def test_deterministic(self):
        j = writegen.HeuristicJudge()
        assert j.score(self.VARIED) == j.score(self.VARIED)

    def test_one_word_scores_lower(self):
        j = writegen.HeuristicJudge()
        assert len(writegen.split_sentences(self.VARIED)) == 10
        assert j.score("River.") < j.score(self.VARIED)

    def test_remote_judge_parses_and_fails_loudly(self):
        task = writegen.sample_sets(4, 1, 0)[0]

        class Client:
            model = "m"

            def __init__(self, reply):
                self.reply = reply

            def complete(self, messages):
                return self.reply

        assert writegen.RemoteJudge(Client("SCORE: 7.5")).score("x", task) == 7.5
        with pytest.raises(BackendError):
            writegen.RemoteJudge(Client("great essay")).score("x", task)


def test_jsonl_round_trip(tmp_path, lex):
    tasks = writegen.generate_dataset(Ks=(4,), count=10, seed=1, lexicon=lex)
    writegen.write_jsonl(tmp_path / "w.jsonl", tasks)
    assert writegen.read_jsonl(tmp_path / "w.jsonl") == tasks
