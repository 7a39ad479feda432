"""Deterministic synthetic emotional-speech corpus.

Each clip is a harmonic tone with a slow pitch contour, a class-specific
loudness envelope and white noise.  Every file draws from its own
generator seeded by ``(seed, class, speaker, utterance, rep)`` so output
bytes do not depend on generation order.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from .audio import AudioClip, encode_wav
from .config import SynthSpec
from .data import Manifest, Record, SplitPlan, manifest_csv, split


def _speaker_position(spec: SynthSpec, seed: int, speaker: int) -> float:
    """Where a speaker's voice sits inside every band, in [0.5 - offset, 0.5 + offset]."""
    rng = np.random.default_rng([seed, 0x5EA, speaker])
    return 0.5 + spec.speaker_offset * (2 * rng.random() - 1)


def _utterance_colour(spec: SynthSpec, seed: int, utt: int) -> tuple[np.ndarray, float, float]:
    rng = np.random.default_rng([seed, 0x077, utt])
    weights = (1.0 / np.arange(1, spec.harmonics + 1)) * rng.uniform(0.5, 1.5, spec.harmonics)
    return weights, rng.uniform(1.0, 4.0), rng.uniform(0, 2 * np.pi)


def synth_clip(spec: SynthSpec, seed: int, cls: int, speaker: int, utt: int, rep: int) -> AudioClip:
    lo, hi = spec.band_edges()[cls]
    f0 = lo + (hi - lo) * _speaker_position(spec, seed, speaker)
    weights, contour_rate, contour_phase = _utterance_colour(spec, seed, utt)
    rng = np.random.default_rng([seed, cls, speaker, utt, rep])
    n = int(round(spec.duration * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    freq = f0 * (1 + spec.contour * np.sin(2 * np.pi * contour_rate * t + contour_phase))
    phase = 2 * np.pi * np.cumsum(freq) / spec.sample_rate
    nyquist = spec.sample_rate / 2
    tone = np.zeros(n)
    for h, w in enumerate(weights, start=1):
        if h * f0 * (1 + spec.contour) >= nyquist:
            break
        tone += w * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    ramp = np.linspace(0.15, 1.0, n)
    env = ramp if spec.envelopes[cls] == "rising" else ramp[::-1]
    x = env * tone / np.abs(tone).max()
    x = x + spec.noise * rng.standard_normal(n)
    gain = 0.5 * rng.uniform(0.8, 1.0)
    return AudioClip(gain * x / np.abs(x).max(), spec.sample_rate)


def check_bands(spec: SynthSpec) -> bool:
    """Warn and return False when any two class bands overlap."""
    edges = sorted(spec.band_edges())
    for (a_lo, a_hi), (b_lo, b_hi) in zip(edges, edges[1:]):
        if b_lo <= a_hi:
            warnings.warn(f"pitch bands {a_lo}-{a_hi} and {b_lo}-{b_hi} overlap; classes may not separate",
                          stacklevel=2)
            return False
    return True


def corpus_records(spec: SynthSpec) -> list[tuple[Record, tuple[int, int, int, int]]]:
    out = []
    for s in range(spec.speakers):
        for k, label in enumerate(spec.labels):
            for u in range(spec.utterances):
                for r in range(spec.reps):
                    rec = Record(f"spk{s:02d}/{label}_u{u}_r{r}.wav", f"spk{s:02d}", label, f"u{u}", r)
                    out.append((rec, (k, s, u, r)))
    return out


def default_plan(spec: SynthSpec) -> SplitPlan:
    """First ``train_speakers`` speakers with the first half of the utterances for training."""
    half = spec.utterances // 2
    return SplitPlan(frozenset(f"spk{s:02d}" for s in range(spec.train_speakers)),
                     frozenset(f"spk{s:02d}" for s in range(spec.train_speakers, spec.speakers)),
                     frozenset(f"u{u}" for u in range(half)),
                     frozenset(f"u{u}" for u in range(half, spec.utterances)))


def synth_corpus(spec: SynthSpec, seed: int, out_dir) -> Manifest:
    """Write every clip plus ``manifest.csv``, ``train.csv`` and ``test.csv`` under ``out_dir``."""
    check_bands(spec)
    out = Path(out_dir)
    records = []
    for rec, (k, s, u, r) in corpus_records(spec):
        path = out / rec.path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_wav(synth_clip(spec, seed, k, s, u, r)))
        records.append(rec)
    manifest = Manifest(tuple(records), tuple(spec.labels), out)
    train, test = split(manifest, default_plan(spec))
    (out / "manifest.csv").write_text(manifest_csv(manifest.records), encoding="utf-8")
    (out / "train.csv").write_text(manifest_csv(train.records), encoding="utf-8")
    (out / "test.csv").write_text(manifest_csv(test.records), encoding="utf-8")
    return manifest
