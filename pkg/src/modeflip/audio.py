"""Raw-audio primitives: waveforms, prepend concatenation, l-infinity
clamping, and bit-exact serialization of adversarial segments.

Everything here operates in the raw float sample domain. No normalization,
resampling or dithering happens anywhere in this module: segments are stored
and applied exactly as optimized, including amplitudes outside [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16_000

SEGMENT_SUFFIX = ".f32le"
SIDECAR_SUFFIX = ".json"


class SampleRateMismatchError(ValueError):
    """Segment and audio disagree on sample rate."""


class SidecarError(ValueError):
    """Segment sidecar is missing, unparseable, or lacks required fields."""


class PayloadMismatchError(ValueError):
    """Binary payload length disagrees with the frame count in the sidecar."""


class BudgetViolationError(ValueError):
    """Segment samples exceed the declared amplitude budget."""


def _as_float64(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected 1-D sample array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples contain NaN or Inf")
    return arr


@dataclass(frozen=True)
class Waveform:
    """Sampled audio: a finite 1-D float sequence plus its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        arr = _as_float64(self.samples)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class AdversarialSegment:
    """A trainable prepend segment with its amplitude budget and provenance.

    Samples are held as float32 (the on-disk payload format); the budget
    invariant max(|samples|) <= epsilon holds at rest, always.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    epsilon: float = 0.0
    model_id: str = ""
    source_lang: str = ""
    steps: int = 0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim != 1:
            raise ValueError(f"expected 1-D sample array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("segment samples contain NaN or Inf")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if len(arr) and float(np.abs(arr.astype(np.float64)).max()) > self.epsilon:
            raise BudgetViolationError(
                f"max|samples| = {np.abs(arr).max():.8g} exceeds epsilon = {self.epsilon:.8g}"
            )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def frames(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def waveform(self) -> Waveform:
        return Waveform(self.samples.astype(np.float64), self.sample_rate)


def prepend(segment: AdversarialSegment, audio: Waveform) -> Waveform:
    """Concatenate segment samples in front of the audio, in raw sample space.

    No resampling, scaling or crossfade: the result is exactly the segment
    frames followed by the audio frames.
    """
    if segment.sample_rate != audio.sample_rate:
        raise SampleRateMismatchError(
            f"segment rate {segment.sample_rate} Hz != audio rate {audio.sample_rate} Hz"
        )
    joined = np.concatenate([segment.samples.astype(np.float64), audio.samples])
    return Waveform(joined, audio.sample_rate)


def project_linf(samples, epsilon: float) -> np.ndarray:
    """Clamp every sample into [-epsilon, +epsilon] (float64 in, float64 out).

    Values already inside the ball are returned unchanged.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    arr = _as_float64(samples)
    return np.clip(arr, -epsilon, epsilon)


def quantize_to_budget(samples, epsilon: float) -> np.ndarray:
    """Cast float64 samples to float32 without leaving the epsilon ball.

    Rounding to float32 can push a value just past a budget that is not
    float32-representable, so the clamp bound is lowered to the largest
    float32 <= epsilon before clipping.
    """
    arr = project_linf(samples, epsilon).astype(np.float32)
    bound = np.float32(epsilon)
    if float(bound) > epsilon:
        bound = np.nextafter(bound, np.float32(0.0))
    return np.clip(arr, -bound, bound)


def _segment_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == SEGMENT_SUFFIX:
        base = p.with_suffix("")
    elif p.suffix == SIDECAR_SUFFIX:
        base = p.with_suffix("")
    else:
        base = p
    return base.with_suffix(SEGMENT_SUFFIX), base.with_suffix(SIDECAR_SUFFIX)


_SIDECAR_FIELDS = ("frames", "sample_rate", "epsilon", "model_id", "source_lang", "steps")


def save_segment(segment: AdversarialSegment, path) -> None:
    """Write `<name>.f32le` (raw little-endian float32) plus a JSON sidecar."""
    payload_path, sidecar_path = _segment_paths(path)
    payload_path.parent.mkdir(parents=True, exist_ok=True)
    segment.samples.astype("<f4").tofile(payload_path)
    sidecar = {
        "frames": segment.frames,
        "sample_rate": segment.sample_rate,
        "epsilon": segment.epsilon,
        "model_id": segment.model_id,
        "source_lang": segment.source_lang,
        "steps": segment.steps,
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_segment(path) -> AdversarialSegment:
    """Load a segment saved by :func:`save_segment`, validating all invariants."""
    payload_path, sidecar_path = _segment_paths(path)
    if not sidecar_path.exists():
        raise SidecarError(f"sidecar not found: {sidecar_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SidecarError(f"corrupt sidecar {sidecar_path}: {exc}") from exc
    if not isinstance(sidecar, dict):
        raise SidecarError(f"corrupt sidecar {sidecar_path}: expected a JSON object")
    missing = [k for k in _SIDECAR_FIELDS if k not in sidecar]
    if missing:
        raise SidecarError(f"sidecar {sidecar_path} missing fields: {missing}")

    if not payload_path.exists():
        raise PayloadMismatchError(f"payload not found: {payload_path}")
    raw = np.fromfile(payload_path, dtype="<f4")
    if len(raw) != sidecar["frames"]:
        raise PayloadMismatchError(
            f"payload holds {len(raw)} frames but sidecar declares {sidecar['frames']}"
        )
    return AdversarialSegment(
        samples=raw,
        sample_rate=int(sidecar["sample_rate"]),
        epsilon=float(sidecar["epsilon"]),
        model_id=str(sidecar["model_id"]),
        source_lang=str(sidecar["source_lang"]),
        steps=int(sidecar["steps"]),
    )


def load_wav(path) -> Waveform:
    """Read a mono PCM WAV (16-bit or float32) into the raw float domain.

    Integer PCM is converted by dividing by 32768; float payloads are taken
    as-is.
    """
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: only mono WAV is supported, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    return Waveform(samples, int(rate))


def save_wav(waveform: Waveform, path) -> None:
    """Write a mono float32 WAV; sample values are stored exactly as given."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, waveform.sample_rate, waveform.samples.astype(np.float32))
