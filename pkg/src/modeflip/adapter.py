"""The white-box contract that every attackable multi-task speech model
must satisfy: task-conditioned teacher-forced likelihood with gradients
with respect to the input audio, plus free-running task-conditioned greedy
decoding.

Adapters deliberately expose no way to edit decoder-side tokens beyond
choosing the task tag: the attacker operates purely in the acoustic space.
"""

from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .audio import Waveform


class TaskTag(enum.Enum):
    TRANSCRIBE = "tc"
    TRANSLATE = "tl"

    @classmethod
    def parse(cls, value: str) -> "TaskTag":
        for tag in cls:
            if tag.value == value:
                return tag
        raise ValueError(f"unknown task tag {value!r}, expected one of: tc, tl")


@dataclass(frozen=True)
class TokenSequence:
    """A finite sequence of vocabulary ids.

    Sequences produced by decoding are terminated by the adapter's end token
    unless decoding hit the adapter's maximum length first.
    """

    tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


class AudioTooLongError(ValueError):
    """Input audio exceeds the adapter's maximum accepted length."""


class VocabularyError(ValueError):
    """A token id falls outside the adapter's declared vocabulary."""


class ModelAdapter(ABC):
    """Contract for attackable task-conditioned encoder-decoder models.

    Instances are not assumed safe for concurrent calls; callers serialize
    access per instance. Returned values are immutable and transferable.
    """

    @property
    @abstractmethod
    def model_id(self) -> str: ...

    @property
    @abstractmethod
    def vocab_size(self) -> int: ...

    @property
    @abstractmethod
    def sample_rate(self) -> int: ...

    @property
    @abstractmethod
    def max_audio_frames(self) -> int: ...

    @property
    def tasks(self) -> frozenset[TaskTag]:
        return frozenset((TaskTag.TRANSCRIBE, TaskTag.TRANSLATE))

    @abstractmethod
    def teacher_forced_nll(
        self, audio: Waveform, target: TokenSequence, task: TaskTag
    ) -> tuple[float, np.ndarray]:
        """Negative log-likelihood of `target` given the audio and task tag.

        Returns (nll, grad) where nll = -sum_m log P(y_m | y_<m, audio, task)
        and grad is d(nll)/d(audio) with exactly one entry per audio frame.
        Deterministic for fixed inputs and model state.
        """

    @abstractmethod
    def decode(self, audio: Waveform, task: TaskTag) -> TokenSequence:
        """Greedy autoregressive decoding conditioned on the task tag.

        Deterministic; terminates at the end token or the adapter's maximum
        decode length.
        """

    @abstractmethod
    def detokenize(self, tokens: TokenSequence) -> str:
        """Render a token sequence as text, dropping special tokens."""

    def check_audio(self, audio: Waveform) -> None:
        if audio.sample_rate != self.sample_rate:
            raise ValueError(
                f"adapter expects {self.sample_rate} Hz audio, got {audio.sample_rate} Hz"
            )
        if len(audio) > self.max_audio_frames:
            raise AudioTooLongError(
                f"audio of {len(audio)} frames exceeds adapter limit "
                f"of {self.max_audio_frames} frames"
            )

    def check_tokens(self, tokens: TokenSequence) -> None:
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise VocabularyError(
                    f"token id {t} outside vocabulary of size {self.vocab_size}"
                )


@dataclass(frozen=True)
class AdapterPlugin:
    """Registry record: how to instantiate an adapter and, optionally, the
    language detector that pairs with it for evaluation."""

    load: Callable[[Optional[str]], ModelAdapter]
    make_detector: Optional[Callable[[ModelAdapter], object]] = None


_REGISTRY: dict[str, AdapterPlugin] = {}


def register_adapter(name: str, plugin: AdapterPlugin) -> None:
    _REGISTRY[name] = plugin


def adapter_names() -> list[str]:
    return sorted(_REGISTRY)


def get_plugin(name: str) -> AdapterPlugin:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"no adapter registered under {name!r}; known: {adapter_names()}"
        ) from None


def load_adapter(name: str, model_path: Optional[str] = None) -> ModelAdapter:
    """Instantiate a registered adapter by string id."""
    return get_plugin(name).load(model_path)
