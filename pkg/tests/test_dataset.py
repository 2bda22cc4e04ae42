import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import naive_edit_distance
from ukws.dataset import (
    PRE_DEFINED,
    UNKNOWN,
    UNKNOWN_LABEL,
    USER_DEFINED,
    FilterConfig,
    ManifestEntry,
    SplitSpec,
    build_inventory,
    cer_matrix,
    compute_cer,
    edit_distance,
    edit_distance_matrix,
    filter_manifest,
    filter_with_stats,
    finetune_label,
    read_manifest,
    split_commands,
    write_inventory,
    write_manifest,
)


def E(kw, hyp=None, i=0):
    return ManifestEntry(f"{kw}_{i}.wav", kw, hyp, 1.0, "test")


@pytest.mark.parametrize(
    "ref, hyp, expected", [("left", "left", 0.0), ("left", "lft", 0.25), ("go", "", 1.0)]
)
def test_cer_examples(ref, hyp, expected):
    assert compute_cer(ref, hyp) == expected


def test_cer_empty_reference():
    with pytest.raises(ValueError):
        compute_cer("", "abc")


small = st.text(alphabet="abc", max_size=6)


@given(small, small)
def test_edit_distance_matches_naive(a, b):
    assert edit_distance(a, b) == naive_edit_distance(a, b)


@given(small, small, small)
def test_edit_distance_triangle(a, b, c):
    if not a:
        return
    assert compute_cer(a, c) * len(a) <= compute_cer(a, b) * len(a) + edit_distance(b, c)


def test_edit_distance_matrix_against_scalar():
    rng = random.Random(1)
    words = ["".join(rng.choice("abcd") for _ in range(rng.randint(0, 7))) for _ in range(60)]
    M = edit_distance_matrix(words, words[::-1])
    for i, a in enumerate(words):
        for j, b in enumerate(words[::-1]):
            assert M[i, j] == edit_distance(a, b)


def test_cer_matrix():
    M = cer_matrix(["left", "go"], ["lft", ""])
    assert M.tolist() == [[0.25, 1.0], [1.5, 1.0]]  # d("go", "lft") = 3
    with pytest.raises(ValueError):
        cer_matrix([""], ["a"])


def test_entry_validation_and_lowercase():
    e = ManifestEntry("a.wav", "Left", "LFT")
    assert (e.keyword, e.hypothesis) == ("left", "lft")
    assert ManifestEntry("a.wav", "go").hypothesis == "go"
    with pytest.raises(ValueError):
        ManifestEntry("a.wav", "")
    with pytest.raises(ValueError):
        ManifestEntry("a.wav", "go", duration_s=0)


def test_filter_keeps_exact_matches_before_frequency_rules():
    entries = [E(w) for w in ["alpha", "beta", "gamma"]]
    cfg = FilterConfig(drop_top_frequent=0, excluded_keywords=())
    assert filter_manifest(entries, cfg) == entries


def test_filter_cer_threshold():
    entries = [E("abcd", "abxx"), E("abcd", "abcx"), E("abcd")]
    kept = filter_manifest(entries, FilterConfig(cer_threshold=0.3, drop_top_frequent=0))
    assert [e.hypothesis for e in kept] == ["abcx", "abcd"]


def test_filter_drops_most_frequent():
    entries = [E("the", i=i) for i in range(5)] + [E("cat", i=i) for i in range(3)] + [E("dog")]
    kept, stats = filter_with_stats(entries, FilterConfig(drop_top_frequent=1))
    assert "the" not in {e.keyword for e in kept}
    assert {e.keyword for e in kept} == {"cat", "dog"}
    assert stats.top_frequent == ["the"]


def test_filter_rules_and_counts():
    entries = (
        [E("the", i=i) for i in range(4)]
        + [E("a"), E("seven"), E("house", "mouse"), E("house"), E("tree")]
    )
    kept, stats = filter_with_stats(entries, FilterConfig(drop_top_frequent=1))
    assert [e.keyword for e in kept] == ["house", "tree"]
    assert stats.dropped == {"cer": 1, "top_frequent": 4, "single_letter": 1, "excluded": 1}
    assert stats.kept == 2


def test_frequency_ties_are_lexicographic():
    entries = [E("bb"), E("aa"), E("cc")]
    kept, stats = filter_with_stats(entries, FilterConfig(drop_top_frequent=2))
    assert stats.top_frequent == ["aa", "bb"]
    assert [e.keyword for e in kept] == ["cc"]


def test_frequency_counted_after_cer():
    # "xx" is most frequent overall but most of its entries fail CER
    entries = [E("xx", "yy", i) for i in range(5)] + [E("xx")] + [E("zz", i=i) for i in range(2)]
    kept, stats = filter_with_stats(entries, FilterConfig(drop_top_frequent=1))
    assert stats.top_frequent == ["zz"]
    assert [e.keyword for e in kept] == ["xx"]


words = st.sampled_from(["the", "a", "house", "tree", "seven", "cat", "ab", "zz"])


@given(st.lists(st.tuples(words, st.booleans()), max_size=40))
def test_filter_subset_and_idempotent(spec):
    entries = [E(w, None if ok else w + "q", i) for i, (w, ok) in enumerate(spec)]
    cfg = FilterConfig(cer_threshold=0.2, drop_top_frequent=2)
    kept, stats = filter_with_stats(entries, cfg)
    assert all(e in entries for e in kept)
    assert filter_manifest(kept, cfg, frequent=stats.top_frequent) == kept


def test_inventory_basic_and_clamp():
    entries = [E(k, i=i) for k, n in [("aa", 10), ("bb", 8), ("cc", 5)] for i in range(n)]
    inv = build_inventory(entries, FilterConfig(inventory_size=3, samples_per_keyword=5))
    assert list(inv) == ["aa", "bb", "cc"]
    assert all(len(v) == 5 for v in inv.values())
    inv = build_inventory(entries, FilterConfig(inventory_size=1, samples_per_keyword=1000))
    assert len(inv["aa"]) == 10


def test_inventory_deterministic_and_seeded():
    entries = [E("aa", i=i) for i in range(50)] + [E("bb", i=i) for i in range(50)]
    cfg = FilterConfig(inventory_size=2, samples_per_keyword=10, seed=3)
    assert build_inventory(entries, cfg) == build_inventory(entries, cfg)
    other = build_inventory(entries, FilterConfig(inventory_size=2, samples_per_keyword=10, seed=4))
    assert other != build_inventory(entries, cfg)


def test_inventory_shortfall_is_reported():
    with pytest.raises(ValueError, match="short by 2"):
        build_inventory([E("aa")], FilterConfig(inventory_size=3))


@given(st.lists(st.sampled_from(list(USER_DEFINED) + ["a", "b", "word", "other", "thing"]), max_size=60))
def test_inventory_never_contains_excluded_or_single_letter(kws):
    entries = [E(k, i=i) for i, k in enumerate(kws)]
    cfg = FilterConfig(inventory_size=1, samples_per_keyword=3)
    try:
        inv = build_inventory(entries, cfg)
    except ValueError:
        return
    assert not set(inv) & set(USER_DEFINED)
    assert all(len(k) > 1 for k in inv)


def test_default_pipeline_excludes_user_defined_keywords():
    rng = random.Random(0)
    vocab = list(USER_DEFINED) + [f"w{i:03d}" for i in range(40)]
    entries = [E(rng.choice(vocab), i=i) for i in range(3000)]
    cfg = FilterConfig(inventory_size=20, samples_per_keyword=30)
    inv = build_inventory(filter_manifest(entries, cfg), cfg)
    assert not set(inv) & set(USER_DEFINED)


def test_split_table_one():
    assert len(PRE_DEFINED) == 10 and len(UNKNOWN) == 15 and len(USER_DEFINED) == 10
    parts = split_commands([E("yes"), E("bed"), E("zero")])
    assert [e.keyword for e in parts.pre_defined] == ["yes"]
    assert [e.keyword for e in parts.unknown] == ["bed"]
    assert parts.labels("unknown") == [UNKNOWN_LABEL]
    assert [e.keyword for e in parts.user_defined] == ["zero"]


def test_split_errors():
    with pytest.raises(ValueError, match="no split"):
        split_commands([E("banana")])
    with pytest.raises(ValueError, match="disjoint"):
        SplitSpec(pre_defined=("yes",), unknown=("yes",), user_defined=())


def test_finetune_labels_merge_unknown():
    assert finetune_label("stop") == "stop"
    assert finetune_label("marvin") == UNKNOWN_LABEL
    with pytest.raises(ValueError):
        finetune_label("seven")


def test_manifest_round_trip(tmp_path):
    entries = [E("house", "mouse"), E("tree")]
    write_manifest(tmp_path / "m.jsonl", entries)
    assert read_manifest(tmp_path / "m.jsonl") == entries


def test_manifest_reports_bad_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"audio_path": "a", "keyword": "go"}\n{not json}\n')
    with pytest.raises(ValueError, match=":2:"):
        read_manifest(p)


def test_inventory_file_fields(tmp_path):
    entries = [E("aa", "ab", 0), E("aa", i=1), E("bb")]
    inv = build_inventory(entries, FilterConfig(inventory_size=2, samples_per_keyword=5))
    write_inventory(tmp_path / "inv.jsonl", inv)
    recs = [json.loads(l) for l in (tmp_path / "inv.jsonl").read_text().splitlines()]
    assert {r["inventory_keyword_rank"] for r in recs if r["keyword"] == "aa"} == {0}
    assert sorted(r["cer"] for r in recs) == [0.0, 0.0, 0.5]
    assert set(recs[0]) == {"audio_path", "keyword", "hypothesis", "duration_s", "source",
                            "cer", "inventory_keyword_rank"}
