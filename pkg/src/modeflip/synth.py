"""Synthetic two-task audio: utterances are sequences of sinusoidal tone
chips, each chip encoding one symbol of a small alphabet.

"Transcribing" such an utterance means emitting the source-alphabet symbol
words (s0, s1, ...); "translating" means emitting the bijectively mapped
target-alphabet words (t0, t1, ...). The two output alphabets are disjoint,
which gives a perfect stand-in for a language-identity signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, save_wav
from .manifest import ManifestEntry, save_manifest

TOY_SOURCE_LANG = "toy"
TOY_TARGET_LANG = "tgt"


def _default_tone_frequencies(n: int) -> tuple[float, ...]:
    # 400 Hz base, 300 Hz spacing: distinct and well below Nyquist at 16 kHz
    return tuple(400.0 + 300.0 * k for k in range(n))


def _default_mapping(n: int) -> tuple[int, ...]:
    # reversal: a fixed nontrivial bijection
    return tuple(n - 1 - k for k in range(n))


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the tone-chip language and its symbol mapping.

    A chip is a tone burst followed by a short silent guard interval, with
    raised-cosine onset/offset ramps and a random starting phase. Without
    the gap and ramps, back-to-back repeats of the same symbol are
    phase-continuous and indistinguishable from one long tone.
    """

    alphabet_size: int = 10
    chip_frames: int = 800
    sample_rate: int = 16_000
    tone_frequencies: tuple[float, ...] = ()
    mapping: tuple[int, ...] = ()
    noise_std: float = 0.02
    tone_amplitude: float = 0.3
    edge_frames: int = 120
    gap_frames: int = 160
    random_phase: bool = True
    min_symbols: int = 3
    max_symbols: int = 10

    def __post_init__(self):
        if self.alphabet_size < 1:
            raise ValueError("alphabet_size must be positive")
        if self.chip_frames < 1:
            raise ValueError("chip_frames must be positive")
        if not self.tone_frequencies:
            object.__setattr__(
                self, "tone_frequencies", _default_tone_frequencies(self.alphabet_size)
            )
        if not self.mapping:
            object.__setattr__(self, "mapping", _default_mapping(self.alphabet_size))
        if len(self.tone_frequencies) != self.alphabet_size:
            raise ValueError("need exactly one tone frequency per symbol")
        if len(set(self.tone_frequencies)) != self.alphabet_size:
            raise ValueError("tone frequencies must be distinct")
        nyquist = self.sample_rate / 2
        if any(not 0 < f < nyquist for f in self.tone_frequencies):
            raise ValueError(f"tone frequencies must lie in (0, {nyquist}) Hz")
        if sorted(self.mapping) != list(range(self.alphabet_size)):
            raise ValueError("mapping must be a bijection over the alphabet")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0 <= self.gap_frames < self.chip_frames:
            raise ValueError("gap must be shorter than the chip")
        if not 0 <= 2 * self.edge_frames <= self.chip_frames - self.gap_frames:
            raise ValueError("edge ramps must fit inside the tone burst")
        if not 1 <= self.min_symbols <= self.max_symbols:
            raise ValueError("need 1 <= min_symbols <= max_symbols")

    def source_word(self, symbol: int) -> str:
        return f"s{symbol}"

    def target_word(self, symbol: int) -> str:
        return f"t{symbol}"

    def source_text(self, symbols) -> str:
        return " ".join(self.source_word(s) for s in symbols)

    def target_text(self, symbols) -> str:
        return " ".join(self.target_word(s) for s in symbols)

    def target_words(self) -> frozenset[str]:
        return frozenset(self.target_word(k) for k in range(self.alphabet_size))


@dataclass(frozen=True)
class ToyExample:
    """One synthetic utterance with its source and mapped symbol sequences."""

    id: str
    waveform: Waveform
    source_symbols: tuple[int, ...]
    target_symbols: tuple[int, ...]


def chip_envelope(spec: SyntheticSpec) -> np.ndarray:
    """Burst envelope: raised-cosine ramps around a flat interior, then a
    silent guard interval filling out the chip."""
    burst = spec.chip_frames - spec.gap_frames
    env = np.ones(spec.chip_frames)
    env[burst:] = 0.0
    e = spec.edge_frames
    if e > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(e) / e))
        env[:e] = ramp
        env[burst - e : burst] = ramp[::-1]
    return env


def render_chip(spec: SyntheticSpec, symbol: int, phase: float = 0.0) -> np.ndarray:
    if not 0 <= symbol < spec.alphabet_size:
        raise ValueError(f"symbol {symbol} outside alphabet of size {spec.alphabet_size}")
    t = np.arange(spec.chip_frames, dtype=np.float64) / spec.sample_rate
    tone = np.sin(2.0 * np.pi * spec.tone_frequencies[symbol] * t + phase)
    return spec.tone_amplitude * chip_envelope(spec) * tone


def render_symbols(
    spec: SyntheticSpec, symbols, rng: np.random.Generator | None = None
) -> Waveform:
    """Render a symbol sequence as concatenated tone chips plus Gaussian noise."""
    if rng is None and (spec.noise_std > 0 or spec.random_phase):
        raise ValueError("rng required when noise_std > 0 or random_phase is set")
    chips = []
    for s in symbols:
        phase = float(rng.uniform(0.0, 2.0 * np.pi)) if spec.random_phase else 0.0
        chips.append(render_chip(spec, s, phase))
    audio = np.concatenate(chips) if chips else np.zeros(0)
    if spec.noise_std > 0:
        audio = audio + spec.noise_std * rng.standard_normal(len(audio))
    return Waveform(audio, spec.sample_rate)


def generate_synthetic_dataset(
    spec: SyntheticSpec, n_utterances: int, seed: int
) -> list[ToyExample]:
    """Deterministically generate utterances of 3-10 symbols (per spec bounds)."""
    if n_utterances <= 0:
        raise ValueError(f"n_utterances must be positive, got {n_utterances}")
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n_utterances):
        n_sym = int(rng.integers(spec.min_symbols, spec.max_symbols + 1))
        symbols = tuple(int(s) for s in rng.integers(0, spec.alphabet_size, size=n_sym))
        wav = render_symbols(spec, symbols, rng)
        mapped = tuple(spec.mapping[s] for s in symbols)
        examples.append(ToyExample(f"utt-{i:04d}", wav, symbols, mapped))
    return examples


def write_dataset(
    examples: list[ToyExample],
    spec: SyntheticSpec,
    out_dir,
    train_fraction: float = 0.8,
) -> Path:
    """Persist examples as float32 WAVs plus a split manifest; returns the
    manifest path. The leading train_fraction of examples goes to train."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    n_train = round(train_fraction * len(examples))
    entries = []
    for i, ex in enumerate(examples):
        rel = f"wav/{ex.id}.wav"
        save_wav(ex.waveform, out_dir / rel)
        entries.append(
            ManifestEntry(
                id=ex.id,
                audio_path=rel,
                source_lang=TOY_SOURCE_LANG,
                ref_transcript=spec.source_text(ex.source_symbols),
                ref_translation_en=spec.target_text(ex.target_symbols),
                split="train" if i < n_train else "test",
            )
        )
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(entries, manifest_path)
    return manifest_path
