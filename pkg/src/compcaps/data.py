"""Dataset manifests and speaker-/text-independent train/test splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, ParameterError

COLUMNS = ("path", "speaker", "emotion", "utterance", "rep")
EMOTIONS = ("angry", "disgust", "fear", "happy", "neutral", "sad")


@dataclass(frozen=True)
class Record:
    path: str
    speaker: str
    emotion: str
    utterance: str
    rep: int


@dataclass(frozen=True)
class Manifest:
    records: tuple[Record, ...]
    labels: tuple[str, ...]
    root: Path = Path(".")

    def __post_init__(self):
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            raise ParameterError("manifest paths must be unique")
        unknown = {r.emotion for r in self.records} - set(self.labels)
        if unknown:
            raise ParameterError(f"labels {sorted(unknown)} are not in the declared label set")

    def __len__(self) -> int:
        return len(self.records)

    def label_index(self, emotion: str) -> int:
        return self.labels.index(emotion)

    def targets(self) -> list[int]:
        return [self.label_index(r.emotion) for r in self.records]

    def speakers(self) -> list[str]:
        return sorted({r.speaker for r in self.records})

    def audio_path(self, rec: Record) -> Path:
        p = Path(rec.path)
        return p if p.is_absolute() else self.root / p

    def subset(self, records) -> "Manifest":
        return Manifest(tuple(records), self.labels, self.root)


def parse_manifest(text: str, labels=None, root=".", source: str = "<manifest>") -> Manifest:
    """Parse CSV text with header ``path,speaker,emotion,utterance,rep``.

    Without ``labels`` the label set is the sorted set of emotions present.
    Errors name the offending line.
    """
    rows = list(csv.reader(text.splitlines()))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise FormatError(f"{source}: empty manifest")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise FormatError(f"{source}:1: missing column(s) {', '.join(missing)}")
    col = {c: header.index(c) for c in COLUMNS}
    records, seen = [], {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"{source}:{lineno}: expected {len(header)} fields, got {len(row)}")
        cell = {c: row[i].strip() for c, i in col.items()}
        if cell["path"] in seen:
            raise FormatError(f"{source}:{lineno}: duplicate path {cell['path']!r} "
                              f"(first seen on line {seen[cell['path']]})")
        if labels is not None and cell["emotion"] not in labels:
            raise FormatError(f"{source}:{lineno}: unknown label {cell['emotion']!r}")
        try:
            rep = int(cell["rep"])
        except ValueError:
            raise FormatError(f"{source}:{lineno}: rep must be an integer, got {cell['rep']!r}") from None
        seen[cell["path"]] = lineno
        records.append(Record(cell["path"], cell["speaker"], cell["emotion"], cell["utterance"], rep))
    if not records:
        raise FormatError(f"{source}: manifest has a header but no records")
    label_set = tuple(labels) if labels is not None else tuple(sorted({r.emotion for r in records}))
    return Manifest(tuple(records), label_set, Path(root))


def load_manifest(path, labels=None) -> Manifest:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), labels, path.parent, str(path))


def manifest_csv(records) -> str:
    lines = [",".join(COLUMNS)]
    for r in records:
        lines.append(f"{r.path},{r.speaker},{r.emotion},{r.utterance},{r.rep}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SplitPlan:
    train_speakers: frozenset
    test_speakers: frozenset
    train_utterances: frozenset
    test_utterances: frozenset

    def __post_init__(self):
        for name in ("train_speakers", "test_speakers", "train_utterances", "test_utterances"):
            object.__setattr__(self, name, frozenset(str(v) for v in getattr(self, name)))
        if self.train_speakers & self.test_speakers:
            raise ParameterError(f"speakers {sorted(self.train_speakers & self.test_speakers)} "
                                 "appear in both train and test")
        if self.train_utterances & self.test_utterances:
            raise ParameterError(f"utterances {sorted(self.train_utterances & self.test_utterances)} "
                                 "appear in both train and test")
        if not (self.train_speakers and self.test_speakers and self.train_utterances and self.test_utterances):
            raise ParameterError("every speaker and utterance set of a split plan must be non-empty")


def split(manifest: Manifest, plan: SplitPlan) -> tuple[Manifest, Manifest]:
    train = [r for r in manifest.records
             if r.speaker in plan.train_speakers and r.utterance in plan.train_utterances]
    test = [r for r in manifest.records
            if r.speaker in plan.test_speakers and r.utterance in plan.test_utterances]
    return manifest.subset(train), manifest.subset(test)


@dataclass(frozen=True)
class CorpusShape:
    """Speaker/utterance/repetition layout of a corpus and its standard split."""

    train_speakers: int
    test_speakers: int
    train_utterances: int
    test_utterances: int
    reps: int
    emotions: int = 6

    @property
    def expected(self) -> tuple[int, int]:
        e, r = self.emotions, self.reps
        return (self.train_speakers * self.train_utterances * r * e,
                self.test_speakers * self.test_utterances * r * e)


# utterance counts are split in half so train and test texts never overlap
SHAPES = {
    "emirati": CorpusShape(37, 13, 4, 4, 9),
    "susas": CorpusShape(22, 10, 5, 5, 10),
    "ravdess": CorpusShape(14, 10, 2, 2, 7),
    "crema-d": CorpusShape(60, 31, 6, 6, 1),
}


def shaped_manifest(shape: CorpusShape, labels=EMOTIONS) -> tuple[Manifest, SplitPlan]:
    """Synthetic manifest (paths only) of the given layout plus its split plan."""
    labels = tuple(labels)[:shape.emotions]
    n_spk = shape.train_speakers + shape.test_speakers
    n_utt = shape.train_utterances + shape.test_utterances
    records = [Record(f"s{s:03d}/{e}/u{u:02d}_r{r:02d}.wav", f"s{s:03d}", e, f"u{u:02d}", r)
               for s in range(n_spk) for e in labels for u in range(n_utt) for r in range(shape.reps)]
    plan = SplitPlan(frozenset(f"s{s:03d}" for s in range(shape.train_speakers)),
                     frozenset(f"s{s:03d}" for s in range(shape.train_speakers, n_spk)),
                     frozenset(f"u{u:02d}" for u in range(shape.train_utterances)),
                     frozenset(f"u{u:02d}" for u in range(shape.train_utterances, n_utt)))
    return Manifest(tuple(records), labels), plan


def speaker_folds(manifest: Manifest, folds: int) -> list[tuple[Manifest, Manifest]]:
    """Partition speakers round-robin (sorted order) into ``folds`` held-out groups."""
    speakers = manifest.speakers()
    if folds < 2 or folds > len(speakers):
        raise ParameterError(f"need 2 <= folds <= {len(speakers)} speakers, got {folds}")
    out = []
    for f in range(folds):
        held = set(speakers[f::folds])
        train = [r for r in manifest.records if r.speaker not in held]
        test = [r for r in manifest.records if r.speaker in held]
        out.append((manifest.subset(train), manifest.subset(test)))
    return out
