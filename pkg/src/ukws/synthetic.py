"""Synthetic keyword data for desk-scale experiments and demos.

Each class is a Gaussian cluster in MFCC feature space. Class means live in a
low-dimensional "content" subspace shared by every class, while each sample
also carries a large nuisance offset in the complementary directions. Raw
cosine similarity is dominated by the nuisance, so an untrained embedder
separates classes poorly; a trained one learns to project the nuisance out.
"""

from dataclasses import dataclass

import numpy as np

from .features import AudioClip, write_wav


@dataclass(frozen=True)
class ClusterSpec:
    n_coeffs: int = 40
    n_frames: int = 8
    content_dim: int = 8
    class_spread: float = 1.0
    nuisance_scale: float = 1.5
    within_scale: float = 0.15
    frame_noise: float = 0.3
    offset: float = 0.0


class ClusterWorld:
    """A fixed feature-space geometry from which keyword classes are drawn."""

    def __init__(self, spec=ClusterSpec(), seed=0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((spec.n_coeffs, spec.n_coeffs)))
        self.content = q[:, : spec.content_dim]
        self.nuisance = q[:, spec.content_dim :]
        self.bias = spec.offset * rng.standard_normal(spec.n_coeffs)

    def class_means(self, n, rng):
        coords = self.spec.class_spread * rng.standard_normal((n, self.spec.content_dim))
        return coords @ self.content.T

    def samples(self, mean, n, rng):
        s = self.spec
        nuis = s.nuisance_scale * rng.standard_normal((n, self.nuisance.shape[1])) @ self.nuisance.T
        within = s.within_scale * rng.standard_normal((n, s.content_dim)) @ self.content.T
        base = self.bias + mean + nuis + within
        frames = s.frame_noise * rng.standard_normal((n, s.n_frames, s.n_coeffs))
        return base[:, None, :] + frames

    def make_classes(self, names, per_class, rng):
        means = self.class_means(len(names), rng)
        return {name: self.samples(mu, per_class, rng) for name, mu in zip(names, means)}


def desk_splits(seed=0, per_class=50, spec=ClusterSpec()):
    """30 pretrain, 5 fine-tune and 5 held-out user classes from one world."""
    world = ClusterWorld(spec, seed)
    rng = np.random.default_rng(seed + 1)
    pre = world.make_classes([f"pre{i:02d}" for i in range(30)], per_class, rng)
    fine = world.make_classes([f"fine{i}" for i in range(5)], per_class, rng)
    user = world.make_classes([f"user{i}" for i in range(5)], per_class, rng)
    return pre, fine, user


def tone_clip(freqs, seed, seconds=1.0, sample_rate=16000, noise=0.01):
    """A short harmonic tone burst: a crude stand-in for a spoken keyword."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * sample_rate)) / sample_rate
    jitter = 1.0 + 0.02 * rng.standard_normal(len(freqs))
    env = np.sin(np.pi * np.clip((t - 0.2) / 0.6, 0.0, 1.0)) ** 2
    x = sum(np.sin(2 * np.pi * f * j * t) for f, j in zip(freqs, jitter)) / len(freqs)
    x = 0.5 * env * x + noise * rng.standard_normal(len(t))
    return AudioClip(np.clip(x, -1.0, 1.0), sample_rate)


def write_tone_corpus(root, keywords, per_keyword, seed=0):
    """Write one WAV per instance under ``root``; returns manifest records."""
    rng = np.random.default_rng(seed)
    records = []
    for kw in keywords:
        freqs = rng.uniform(200.0, 3000.0, size=3)
        for i in range(per_keyword):
            path = root / f"{kw}_{i:03d}.wav"
            write_wav(path, tone_clip(freqs, int(rng.integers(2**31))))
            records.append({"audio_path": str(path), "keyword": kw, "hypothesis": kw,
                            "duration_s": 1.0, "source": "synthetic"})
    return records
