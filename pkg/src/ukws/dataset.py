"""Keyword manifests: CER validation, frequency filtering, inventories, GSC splits."""

import json
import zlib
from collections import Counter
from dataclasses import asdict, dataclass, field, fields

import numpy as np

PRE_DEFINED = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN = (
    "bed", "bird", "cat", "dog", "wow", "house", "learn", "sheila", "tree",
    "happy", "marvin", "backward", "follow", "forward", "visual",
)
USER_DEFINED = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
UNKNOWN_LABEL = "unknown"


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    keyword: str
    hypothesis: str = None
    duration_s: float = 1.0
    source: str = ""

    def __post_init__(self):
        if not self.keyword:
            raise ValueError("keyword must be non-empty")
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        object.__setattr__(self, "keyword", self.keyword.lower())
        # entries without an ASR transcript are taken as correctly aligned
        hyp = self.keyword if self.hypothesis is None else self.hypothesis
        object.__setattr__(self, "hypothesis", hyp.lower())

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self):
        return asdict(self)


@dataclass
class FilterConfig:
    cer_threshold: float = 0.0
    drop_top_frequent: int = 13
    drop_single_letter: bool = True
    excluded_keywords: frozenset = frozenset(USER_DEFINED)
    inventory_size: int = 1000
    samples_per_keyword: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cer_threshold <= 1.0:
            raise ValueError("cer_threshold must lie in [0, 1]")
        if self.inventory_size <= 0 or self.samples_per_keyword <= 0:
            raise ValueError("inventory_size and samples_per_keyword must be positive")
        self.excluded_keywords = frozenset(k.lower() for k in self.excluded_keywords)


@dataclass(frozen=True)
class SplitSpec:
    pre_defined: tuple = PRE_DEFINED
    unknown: tuple = UNKNOWN
    user_defined: tuple = USER_DEFINED

    def __post_init__(self):
        a, b, c = set(self.pre_defined), set(self.unknown), set(self.user_defined)
        if a & b or a & c or b & c:
            raise ValueError("split keyword sets must be pairwise disjoint")


def edit_distance(reference, hypothesis):
    """Levenshtein distance with unit insert/delete/substitute costs."""
    prev = list(range(len(hypothesis) + 1))
    for i, rc in enumerate(reference, 1):
        cur = [i]
        for j, hc in enumerate(hypothesis, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (rc != hc)))
        prev = cur
    return prev[-1]


def _prefix_trie(strings):
    """Breadth-first prefix trie: (node_of_string, parent, last_char, depth_bounds)."""
    prefixes = {s[:k] for s in strings for k in range(len(s) + 1)} | {""}
    order = sorted(prefixes, key=lambda s: (len(s), s))
    index = {s: i for i, s in enumerate(order)}
    parent = np.array([index[s[:-1]] if s else 0 for s in order], dtype=np.int64)
    last = np.array([ord(s[-1]) if s else -1 for s in order], dtype=np.int64)
    depth = np.array([len(s) for s in order])
    bounds = np.searchsorted(depth, np.arange(depth.max() + 2))
    return np.array([index[s] for s in strings], dtype=np.int64), parent, last, bounds


def edit_distance_matrix(references, hypotheses):
    """All-pairs Levenshtein distances, shape ``(len(references), len(hypotheses))``.

    Shared prefixes are computed once: the table is filled over pairs of
    prefix-trie nodes, one (depth, depth) block at a time.
    """
    ri, rpar, rch, rb = _prefix_trie(references)
    hi, hpar, hch, hb = _prefix_trie(hypotheses)
    dtype = np.min_scalar_type(len(rb) + len(hb))
    D = np.zeros((len(rpar), len(hpar)), dtype=dtype)
    for dr in range(len(rb) - 1):
        r0, r1 = rb[dr], rb[dr + 1]
        for dh in range(len(hb) - 1):
            h0, h1 = hb[dh], hb[dh + 1]
            if dr == 0 or dh == 0:
                D[r0:r1, h0:h1] = dr + dh
                continue
            pr, ph = rpar[r0:r1], hpar[h0:h1]
            sub = D[pr][:, ph] + (rch[r0:r1, None] != hch[None, h0:h1])
            dele = D[pr, h0:h1] + 1
            ins = D[r0:r1][:, ph] + 1
            D[r0:r1, h0:h1] = np.minimum(np.minimum(sub, dele), ins)
    return D[np.ix_(ri, hi)]


def compute_cer(reference, hypothesis):
    if not reference:
        raise ValueError("CER is undefined for an empty reference")
    return edit_distance(reference, hypothesis) / len(reference)


def rank_by_frequency(entries):
    """Keywords ordered by descending count, ties broken lexicographically."""
    counts = Counter(e.keyword for e in entries)
    return sorted(counts, key=lambda k: (-counts[k], k))


@dataclass
class FilterStats:
    kept: int = 0
    dropped: dict = field(
        default_factory=lambda: {"cer": 0, "top_frequent": 0, "single_letter": 0, "excluded": 0}
    )
    top_frequent: list = field(default_factory=list)


def filter_with_stats(entries, cfg, frequent=None):
    """Apply the filtering rules and report per-rule drop counts.

    Rules run in order: CER threshold, then (on the CER survivors) the
    ``drop_top_frequent`` most frequent keywords, single-letter keywords and
    excluded keywords. An entry is charged to the first rule it fails. Pass
    ``frequent`` to reuse a frequency list computed elsewhere.
    """
    stats = FilterStats()
    passed = []
    for e in entries:
        if compute_cer(e.keyword, e.hypothesis) <= cfg.cer_threshold:
            passed.append(e)
        else:
            stats.dropped["cer"] += 1
    if frequent is None:
        frequent = rank_by_frequency(passed)[: cfg.drop_top_frequent]
    stats.top_frequent = list(frequent)
    frequent = set(frequent)
    kept = []
    for e in passed:
        if e.keyword in frequent:
            stats.dropped["top_frequent"] += 1
        elif cfg.drop_single_letter and len(e.keyword) == 1:
            stats.dropped["single_letter"] += 1
        elif e.keyword in cfg.excluded_keywords:
            stats.dropped["excluded"] += 1
        else:
            kept.append(e)
    stats.kept = len(kept)
    return kept, stats


def filter_manifest(entries, cfg, frequent=None):
    return filter_with_stats(entries, cfg, frequent)[0]


def _keyword_rng(seed, keyword):
    return np.random.default_rng([seed, zlib.crc32(keyword.encode("utf-8"))])


def build_inventory(entries, cfg):
    """Top ``inventory_size`` keywords, each with up to ``samples_per_keyword`` instances.

    Returns an insertion-ordered dict keyword -> entries, ordered by frequency
    rank. Sampling is a seeded shuffle followed by a prefix take, seeded per
    keyword so one keyword's draw does not depend on the others.
    """
    eligible = [
        e
        for e in entries
        if e.keyword not in cfg.excluded_keywords
        and not (cfg.drop_single_letter and len(e.keyword) == 1)
    ]
    ranked = rank_by_frequency(eligible)
    if len(ranked) < cfg.inventory_size:
        raise ValueError(
            f"inventory needs {cfg.inventory_size} keywords but only {len(ranked)} are "
            f"available (short by {cfg.inventory_size - len(ranked)})"
        )
    by_kw = {}
    for e in eligible:
        by_kw.setdefault(e.keyword, []).append(e)
    inventory = {}
    for kw in ranked[: cfg.inventory_size]:
        pool = by_kw[kw]
        order = _keyword_rng(cfg.seed, kw).permutation(len(pool))
        inventory[kw] = [pool[i] for i in order[: cfg.samples_per_keyword]]
    return inventory


@dataclass
class SplitPartitions:
    pre_defined: list
    unknown: list
    user_defined: list

    def labels(self, name):
        """Class labels for a partition; the unknown split collapses to one class."""
        part = getattr(self, name)
        if name == "unknown":
            return [UNKNOWN_LABEL] * len(part)
        return [e.keyword for e in part]


def split_commands(entries, spec=SplitSpec()):
    parts = SplitPartitions([], [], [])
    lookup = {}
    for name in ("pre_defined", "unknown", "user_defined"):
        for kw in getattr(spec, name):
            lookup[kw] = name
    for e in entries:
        name = lookup.get(e.keyword)
        if name is None:
            raise ValueError(f"keyword {e.keyword!r} belongs to no split")
        getattr(parts, name).append(e)
    return parts


def finetune_label(keyword, spec=SplitSpec()):
    """Class label used when fine-tuning on pre-defined plus merged unknown classes."""
    if keyword in spec.pre_defined:
        return keyword
    if keyword in spec.unknown:
        return UNKNOWN_LABEL
    raise ValueError(f"keyword {keyword!r} is not a fine-tuning class")


def read_manifest(path):
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entries.append(ManifestEntry.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError, AttributeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed manifest line: {exc}") from exc
    return entries


def _dump(record):
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(_dump(e.to_dict()) + "\n")


def write_inventory(path, inventory):
    """Inventory JSONL: manifest fields plus ``cer`` and ``inventory_keyword_rank``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rank, (kw, items) in enumerate(inventory.items()):
            for e in items:
                rec = e.to_dict()
                rec["cer"] = compute_cer(e.keyword, e.hypothesis)
                rec["inventory_keyword_rank"] = rank
                fh.write(_dump(rec) + "\n")


def group_by_keyword(entries):
    groups = {}
    for e in entries:
        groups.setdefault(e.keyword, []).append(e)
    return groups


def cer_matrix(references, hypotheses):
    """All-pairs CER; every reference must be non-empty."""
    lengths = np.array([len(r) for r in references], dtype=np.float64)
    if np.any(lengths == 0):
        raise ValueError("CER is undefined for an empty reference")
    return edit_distance_matrix(references, hypotheses) / lengths[:, None]
