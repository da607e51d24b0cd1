"""Manifest-driven dataset ingestion: JSON-lines utterance lists with
reference texts and a hard train/test split.

One JSON object per line, UTF-8; audio referenced as WAV paths relative to
the manifest's directory. Entries are immutable after load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from .audio import Waveform, load_wav

SPLITS = ("train", "test")

_FIELDS = ("id", "audio_path", "source_lang", "ref_transcript", "ref_translation_en", "split")


class ManifestError(ValueError):
    """Manifest file is malformed or violates an entry invariant."""


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    audio_path: str
    source_lang: str
    ref_transcript: str
    ref_translation_en: str
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(
                f"entry {self.id!r}: invalid split {self.split!r}, expected one of {SPLITS}"
            )


class ManifestLoad(NamedTuple):
    entries: list[ManifestEntry]
    warnings: list[str]


def load_manifest(path) -> ManifestLoad:
    """Load and validate a JSON-lines manifest.

    Duplicate ids and missing fields are hard errors (with line numbers);
    unresolvable audio paths are returned as warnings alongside the entries.
    """
    path = Path(path)
    entries: list[ManifestEntry] = []
    warnings: list[str] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            missing = [k for k in _FIELDS if k not in obj]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
            entry = ManifestEntry(**{k: obj[k] for k in _FIELDS})
            if entry.id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {entry.id!r}")
            seen.add(entry.id)
            if not (path.parent / entry.audio_path).exists():
                warnings.append(f"{entry.id}: audio not found: {entry.audio_path}")
            entries.append(entry)
    return ManifestLoad(entries, warnings)


def save_manifest(entries: Iterable[ManifestEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for e in entries:
            row = {k: getattr(e, k) for k in _FIELDS}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def split(entries: Iterable[ManifestEntry], which: str) -> list[ManifestEntry]:
    """Filter entries by split; train and test never share an id by construction."""
    if which not in SPLITS:
        raise ValueError(f"invalid split {which!r}, expected one of {SPLITS}")
    return [e for e in entries if e.split == which]


@dataclass(frozen=True)
class LoadedUtterance:
    """A manifest entry together with its decoded waveform."""

    entry: ManifestEntry
    waveform: Waveform

    @property
    def id(self) -> str:
        return self.entry.id


def load_utterances(entries: Iterable[ManifestEntry], base_dir) -> list[LoadedUtterance]:
    """Resolve and read the audio for each entry (paths relative to base_dir)."""
    base = Path(base_dir)
    out = []
    for e in entries:
        out.append(LoadedUtterance(e, load_wav(base / e.audio_path)))
    return out
