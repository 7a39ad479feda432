"""``key = value`` configuration files with ``#`` comments.

Each file maps onto a dataclass; unknown keys, duplicate keys and values of
the wrong type are errors that name the line.  ``echo`` renders a config
back to canonical text (sorted keys, ``repr``-exact floats), which is what
checkpoints store.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, ParameterError


def parse_pairs(text: str, source: str = "<config>") -> dict[str, tuple[str, int]]:
    """Map key -> (raw value, line number)."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        if key in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r} (first on line {out[key][1]})")
        out[key] = (value, lineno)
    return out


def _convert(raw: str, typ, where: str):
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if origin is tuple:
            inner = typing.get_args(typ)[0]
            return tuple(_convert(p.strip(), inner, where) for p in raw.split(",") if p.strip())
    except ValueError:
        raise FormatError(f"{where}: cannot read {raw!r} as {getattr(typ, '__name__', typ)}") from None
    raise FormatError(f"{where}: unsupported field type {typ}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def from_text(cls, text: str, source: str = "<config>", **overrides):
    """Build dataclass ``cls`` from key=value text; missing keys keep their defaults."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, (raw, lineno) in parse_pairs(text, source).items():
        if key not in names:
            raise FormatError(f"{source}:{lineno}: unknown key {key!r}")
        kwargs[key] = _convert(raw, hints[key], f"{source}:{lineno}")
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except ParameterError as exc:
        raise FormatError(f"{source}: {exc}") from exc


def from_file(cls, path, **overrides):
    path = Path(path)
    return from_text(cls, path.read_text(encoding="utf-8"), str(path), **overrides)


def echo(cfg) -> str:
    """Canonical text: one ``key = value`` line per field, keys sorted."""
    items = sorted((f.name, getattr(cfg, f.name)) for f in dataclasses.fields(cfg))
    return "".join(f"{k} = {_format(v)}\n" for k, v in items)


def replace(cfg, **changes):
    try:
        return dataclasses.replace(cfg, **changes)
    except TypeError as exc:
        raise ParameterError(str(exc)) from exc


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on; the seed fixes all randomness."""

    seed: int = 0
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    compression_rate: float = 0.0
    warmup_epochs: int = 5
    routing_iters: int = 3
    frames: int = 96
    outlier_limit: float = 3.0
    workers: int = 1
    # feature extraction
    n_fft: int = 512
    hop: int = 256
    n_mfcc: int = 40
    n_mels: int = 64
    # dual-channel LSTM
    lstm_hidden: int = 64
    lstm_epochs: int = 6
    lstm_lr: float = 5e-3
    lstm_stride: int = 2
    # capsule network
    head: str = "capsule"
    conv1_channels: int = 4
    conv1_kernel: int = 9
    conv2_channels: int = 8
    conv2_kernel: int = 9
    conv2_stride: int = 2
    capsule_dim: int = 8
    class_capsule_dim: int = 16
    first_stage_width: int = 1024
    decoder_widths: tuple[int, ...] = (512, 1024)
    m_plus: float = 0.9
    m_minus: float = 0.1
    lam: float = 0.5
    w_rec: float = 0.0005

    def __post_init__(self):
        if not 0.0 <= self.compression_rate < 1.0:
            raise ParameterError("compression_rate must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.frames < 1 or self.lstm_stride < 1:
            raise ParameterError("epochs, batch_size, frames and lstm_stride must be positive")
        if self.warmup_epochs < 0 or self.lstm_epochs < 0:
            raise ParameterError("warmup_epochs and lstm_epochs must be non-negative")
        if self.lr <= 0 or self.lstm_lr <= 0:
            raise ParameterError("learning rates must be positive")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        if len(self.decoder_widths) != 2:
            raise ParameterError("decoder_widths needs exactly two entries")
        if self.outlier_limit <= 0:
            raise ParameterError("outlier_limit must be positive")


@dataclass(frozen=True)
class SynthSpec:
    """Layout and acoustics of a synthetic emotional-speech corpus.

    Class ``k`` is a harmonic tone whose fundamental lies in ``bands[k]``
    (``lo-hi`` in Hz) and whose loudness follows ``envelopes[k]``
    (``rising`` or ``falling``).  Speakers shift the fundamental inside the
    band by up to ``speaker_offset`` of its width; utterances change the
    harmonic colouring and pitch contour.
    """

    labels: tuple[str, ...] = ("angry", "disgust", "fear", "happy", "neutral", "sad")
    bands: tuple[str, ...] = ("95-120", "135-165", "185-225", "250-300", "335-395", "430-495")
    envelopes: tuple[str, ...] = ("rising", "falling", "rising", "falling", "rising", "falling")
    speakers: int = 10
    utterances: int = 4
    reps: int = 3
    train_speakers: int = 7
    sample_rate: int = 22050
    duration: float = 1.2
    harmonics: int = 8
    speaker_offset: float = 0.25
    contour: float = 0.02
    noise: float = 0.02

    def __post_init__(self):
        k = len(self.labels)
        if k < 2 or len(self.bands) != k or len(self.envelopes) != k:
            raise ParameterError("labels, bands and envelopes must have the same length >= 2")
        if len(set(self.labels)) != k:
            raise ParameterError("labels must be distinct")
        for b in self.band_edges():
            if not 0 < b[0] < b[1]:
                raise ParameterError(f"band {b} must satisfy 0 < lo < hi")
        if any(e not in ("rising", "falling") for e in self.envelopes):
            raise ParameterError("envelopes must be 'rising' or 'falling'")
        if not 0 < self.train_speakers < self.speakers:
            raise ParameterError("train_speakers must leave at least one test speaker")
        if self.utterances < 2 or self.reps < 1:
            raise ParameterError("need >= 2 utterances and >= 1 repetition")
        if not 0 <= self.speaker_offset < 0.5 or self.contour < 0 or self.noise < 0:
            raise ParameterError("speaker_offset in [0, 0.5); contour and noise non-negative")
        if self.duration <= 0 or self.sample_rate <= 0 or self.harmonics < 1:
            raise ParameterError("duration, sample_rate and harmonics must be positive")

    def band_edges(self) -> list[tuple[float, float]]:
        out = []
        for b in self.bands:
            try:
                lo, hi = (float(x) for x in b.split("-"))
            except ValueError:
                raise ParameterError(f"band {b!r} is not of the form lo-hi") from None
            out.append((lo, hi))
        return out
