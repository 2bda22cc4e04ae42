"""k-shot enrollment of user keywords as centroid prototypes, and cosine scoring."""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .numcore import as_vector, cosine, l2_normalize_rows, norm

REJECT = None


@dataclass(frozen=True)
class Prototype:
    keyword: str
    vector: np.ndarray
    shots: int

    def __post_init__(self):
        object.__setattr__(self, "vector", as_vector(self.vector, f"prototype {self.keyword!r}"))
        if self.shots < 1:
            raise ValueError("a prototype needs at least one enrolled sample")


@dataclass(frozen=True)
class ScoreReport:
    scores: dict  # keyword -> cosine
    best: str
    best_score: float


def enroll(samples, normalize=False):
    """Average each keyword's embeddings into a prototype.

    ``samples`` maps keyword -> sequence of k embeddings. With
    ``normalize=True`` each embedding is scaled to unit length before
    averaging. No model parameters are involved.
    """
    if not samples:
        raise ValueError("no keywords to enroll")
    protos, dim = [], None
    for kw in sorted(samples):
        arr = np.asarray(samples[kw], dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError(f"keyword {kw!r} has no enrollment samples")
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise ValueError(f"keyword {kw!r}: embedding dimension {arr.shape[1]} != {dim}")
        if normalize:
            arr = l2_normalize_rows(arr)[0]
        protos.append(Prototype(kw, arr.mean(axis=0), arr.shape[0]))
    return protos


def score(query, prototypes):
    """Cosine of ``query`` against every prototype; ties go to the smallest keyword."""
    q = as_vector(query, "query")
    if norm(q) == 0.0:
        raise ValueError("cannot score a zero-norm query")
    if not prototypes:
        raise ValueError("no prototypes to score against")
    scores = {p.keyword: cosine(q, p.vector) for p in prototypes}
    best = min(scores, key=lambda k: (-scores[k], k))
    return ScoreReport(scores, best, scores[best])


def detect(report, threshold):
    """The best keyword if its score reaches ``threshold``, else ``REJECT``."""
    return report.best if report.best_score >= threshold else REJECT


STORE_MAGIC = b"UKWSPROT"
STORE_VERSION = 1


def save_prototypes(path, prototypes):
    """Binary store: header, keyword table, then little-endian float32 vectors."""
    dims = {p.vector.shape[0] for p in prototypes}
    if len(dims) > 1:
        raise ValueError("prototypes have mixed dimensions")
    dim = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<III", STORE_VERSION, len(prototypes), dim))
        for p in prototypes:
            kw = p.keyword.encode("utf-8")
            fh.write(struct.pack("<II", len(kw), p.shots))
            fh.write(kw)
        for p in prototypes:
            fh.write(p.vector.astype("<f4").tobytes())


def load_prototypes(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != STORE_MAGIC:
        raise ValueError(f"{path}: not a prototype store (bad magic)")
    version, count, dim = struct.unpack_from("<III", blob, 8)
    if version != STORE_VERSION:
        raise ValueError(f"{path}: unsupported prototype store version {version}")
    offset = 20
    table = []
    for _ in range(count):
        n, shots = struct.unpack_from("<II", blob, offset)
        offset += 8
        table.append((blob[offset : offset + n].decode("utf-8"), shots))
        offset += n
    if len(blob) - offset != 4 * count * dim:
        raise ValueError(f"{path}: vector block size does not match header")
    vecs = np.frombuffer(blob[offset:], dtype="<f4").reshape(count, dim)
    return [Prototype(kw, vecs[i].astype(np.float64), shots) for i, (kw, shots) in enumerate(table)]


def prototypes_to_json(prototypes):
    return json.dumps(
        [{"keyword": p.keyword, "shots": p.shots, "vector": p.vector.tolist()} for p in prototypes],
        indent=2,
    )
