"""Detection trials and metrics: DET curve, EER, FRR at fixed FAR, accuracy, F1.

Conventions: at threshold ``t`` a target trial is rejected when its score is
``< t`` and a non-target trial is accepted when its score is ``>= t``.
"""

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .numcore import cosine_matrix

log = logging.getLogger(__name__)

FAR_LEVELS = (0.025, 0.10)


@dataclass(frozen=True)
class Trial:
    score: float
    is_target: bool
    query_keyword: str
    prototype_keyword: str

    def __post_init__(self):
        if self.is_target != (self.query_keyword == self.prototype_keyword):
            raise ValueError("is_target must agree with keyword equality")


@dataclass(frozen=True)
class DetCurve:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    n_target: int
    n_nontarget: int

    @property
    def min_far(self):
        return float(self.far.min())

    def points(self):
        return list(zip(self.far.tolist(), self.frr.tolist()))


def _score_matrix(queries, prototypes):
    protos = sorted(prototypes, key=lambda p: p.keyword)
    q = np.stack([np.asarray(e, dtype=np.float64) for _, e in queries])
    P = np.stack([p.vector for p in protos])
    return cosine_matrix(q, P), [p.keyword for p in protos]


def make_trials(queries, prototypes, impostors=()):
    """Score every query against every prototype.

    ``queries`` is a sequence of ``(keyword, embedding)``; each query keyword
    must have a prototype. ``impostors`` are extra ``(label, embedding)``
    queries (e.g. the unknown split) that contribute non-target trials only.
    """
    known = {p.keyword for p in prototypes}
    for kw, _ in queries:
        if kw not in known:
            raise ValueError(f"query keyword {kw!r} has no enrolled prototype")
    for kw, _ in impostors:
        if kw in known:
            raise ValueError(f"impostor label {kw!r} collides with an enrolled keyword")
    everything = list(queries) + list(impostors)
    if not everything:
        return []
    S, kws = _score_matrix(everything, prototypes)
    trials = []
    for (qk, _), row in zip(everything, S):
        for pk, s in zip(kws, row):
            trials.append(Trial(float(s), qk == pk, qk, pk))
    return trials


def _split_scores(trials):
    tgt = np.sort([t.score for t in trials if t.is_target])
    non = np.sort([t.score for t in trials if not t.is_target])
    if len(tgt) == 0 or len(non) == 0:
        raise ValueError("DET needs at least one target and one non-target trial")
    return tgt, non


def det_curve(trials):
    """Operating points for every distinct score plus the -inf / +inf sentinels."""
    tgt, non = _split_scores(trials)
    th = np.concatenate([[-np.inf], np.unique(np.concatenate([tgt, non])), [np.inf]])
    frr = np.searchsorted(tgt, th, side="left") / len(tgt)
    far = (len(non) - np.searchsorted(non, th, side="left")) / len(non)
    return DetCurve(th, far, frr, len(tgt), len(non))


def _eer_index(curve):
    d = curve.far - curve.frr
    return int(np.argmax(d <= 0.0))


def eer(curve):
    """Rate where FAR meets FRR, interpolated between the straddling points."""
    d = curve.far - curve.frr
    i = _eer_index(curve)
    if d[i] == 0.0:
        return float(curve.far[i])
    a = d[i - 1] / (d[i - 1] - d[i])
    return float(curve.far[i - 1] + a * (curve.far[i] - curve.far[i - 1]))


def eer_threshold(curve):
    """Threshold of the first operating point with FAR <= FRR."""
    return float(curve.thresholds[_eer_index(curve)])


def frr_at_far(curve, far_level):
    """FRR on the DET polyline at ``far_level``, linearly interpolated.

    When no operating point reaches ``far_level`` the FRR at the smallest FAR
    is returned and a warning is logged.
    """
    if not 0.0 < far_level < 1.0:
        raise ValueError("far_level must lie in (0, 1)")
    below = np.nonzero(curve.far <= far_level)[0]
    if len(below) == 0:
        log.warning("FAR %.4f unreachable (min %.4f); extrapolating", far_level, curve.min_far)
        return float(curve.frr[np.argmin(curve.far)])
    i = int(below[0])
    if curve.far[i] == far_level or i == 0:
        return float(curve.frr[i])
    f0, f1 = curve.far[i - 1], curve.far[i]
    a = (f0 - far_level) / (f0 - f1)
    return float(curve.frr[i - 1] + a * (curve.frr[i] - curve.frr[i - 1]))


def _predictions(queries, prototypes):
    S, kws = _score_matrix(queries, prototypes)
    # argmax returns the first maximum; prototypes are sorted by keyword
    return [kws[j] for j in np.argmax(S, axis=1)]


def classify_accuracy(queries, prototypes):
    if not queries or not prototypes:
        raise ValueError("accuracy needs queries and prototypes")
    pred = _predictions(queries, prototypes)
    return sum(p == kw for p, (kw, _) in zip(pred, queries)) / len(queries)


def macro_f1(queries, prototypes):
    """Macro-averaged F1 of the closed-set argmax classifier."""
    if not queries or not prototypes:
        raise ValueError("F1 needs queries and prototypes")
    pred = _predictions(queries, prototypes)
    truth = [kw for kw, _ in queries]
    labels = sorted({p.keyword for p in prototypes} | set(truth))
    scores = []
    for k in labels:
        tp = sum(p == k and t == k for p, t in zip(pred, truth))
        fp = sum(p == k and t != k for p, t in zip(pred, truth))
        fn = sum(p != k and t == k for p, t in zip(pred, truth))
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(scores) / len(scores)


def binary_f1(trials, threshold):
    """F1 of the accept/reject detector at ``threshold`` over all trials."""
    tp = sum(t.is_target and t.score >= threshold for t in trials)
    fp = sum((not t.is_target) and t.score >= threshold for t in trials)
    fn = sum(t.is_target and t.score < threshold for t in trials)
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


@dataclass
class EvalReport:
    eer: float
    frr_at_far: dict
    f1: float
    accuracy: float
    n_target: int
    n_nontarget: int
    n_queries: int
    f1_mode: str = "macro"
    frr_at_far_extrapolated: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def far_key(level):
    return f"{100 * level:g}"


def evaluate(queries, prototypes, impostors=(), f1_mode="macro", far_levels=FAR_LEVELS):
    """Full report for labelled query embeddings against enrolled prototypes."""
    if f1_mode not in ("macro", "binary"):
        raise ValueError("f1_mode must be 'macro' or 'binary'")
    trials = make_trials(queries, prototypes, impostors)
    curve = det_curve(trials)
    frr = {far_key(l): frr_at_far(curve, l) for l in far_levels}
    extrap = {far_key(l): bool(curve.min_far > l) for l in far_levels}
    f1 = macro_f1(queries, prototypes) if f1_mode == "macro" else binary_f1(trials, eer_threshold(curve))
    report = EvalReport(
        eer=eer(curve),
        frr_at_far=frr,
        f1=f1,
        accuracy=classify_accuracy(queries, prototypes),
        n_target=curve.n_target,
        n_nontarget=curve.n_nontarget,
        n_queries=len(queries),
        f1_mode=f1_mode,
        frr_at_far_extrapolated=extrap,
    )
    return report, trials, curve


def _fmt(x):
    return repr(float(x))


def write_det_csv(path, curve):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("threshold,far,frr\n")
        for t, fa, fr in zip(curve.thresholds, curve.far, curve.frr):
            fh.write(f"{_fmt(t)},{_fmt(fa)},{_fmt(fr)}\n")


def write_trials(path, trials):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trials:
            fh.write(json.dumps(asdict(t), sort_keys=True) + "\n")


def read_trials(path):
    with open(path, encoding="utf-8") as fh:
        return [Trial(**json.loads(line)) for line in fh if line.strip()]
