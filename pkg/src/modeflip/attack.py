"""Learning a universal prepend segment that overrides the transcribe task.

The objective is the mean teacher-forced NLL, under task=tc, of each
utterance's own clean translate-mode decode — pushed down by adaptive-moment
gradient descent on the segment samples only, with an l-infinity projection
after every step so the amplitude budget holds throughout training.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .adapter import ModelAdapter, TaskTag, TokenSequence
from .audio import (
    AdversarialSegment,
    Waveform,
    prepend,
    project_linf,
    quantize_to_budget,
    save_segment,
)
from .manifest import LoadedUtterance

logger = logging.getLogger(__name__)

# exact preset bindings: (epsilon, segment frames at 16 kHz, step size)
PRESETS: dict[str, tuple[float, int, float]] = {
    "weak": (0.02, 10_240, 1e-3),
    "mid": (0.2, 10_240, 1e-3),
    "strong": (2.0, 81_920, 1e-2),
}

INIT_MODES = ("zeros", "noise")


class AttackError(RuntimeError):
    """Optimization failed (non-finite loss/gradient or adapter failure)."""


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    segment_frames: int
    steps: int = 500
    batch_size: int = 8
    learning_rate: float = 1e-3
    init: str = "noise"
    seed: int = 0
    preset_name: Optional[str] = None
    per_token_loss: bool = False      # alternative reduction; default is per utterance
    checkpoint_interval: int = 250

    def __post_init__(self):
        if self.preset_name is not None:
            eps, frames, _ = PRESETS[self.preset_name]
            if (self.epsilon, self.segment_frames) != (eps, frames):
                raise ValueError(
                    f"preset {self.preset_name!r} binds epsilon={eps}, frames={frames}; "
                    f"got epsilon={self.epsilon}, frames={self.segment_frames}"
                )
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.segment_frames <= 0:
            raise ValueError("segment_frames must be positive")
        if self.steps < 0 or self.batch_size <= 0:
            raise ValueError("steps must be >= 0 and batch_size positive")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "AttackConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
        eps, frames, lr = PRESETS[name]
        fields = dict(
            epsilon=eps, segment_frames=frames, learning_rate=lr, preset_name=name
        )
        fields.update(overrides)
        return cls(**fields)


@dataclass(frozen=True)
class TargetSet:
    """Per-utterance translate-mode decodes of the clean training audio."""

    targets: dict[str, TokenSequence]
    excluded_ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, utt_id: str) -> TokenSequence:
        return self.targets[utt_id]


def generate_targets(adapter: ModelAdapter, trainset: list[LoadedUtterance]) -> TargetSet:
    """Decode every clean training utterance in translate mode.

    Utterances the adapter fails to decode are excluded (and logged); the
    run continues on the rest.
    """
    if not trainset:
        warnings.warn("empty trainset: generated an empty target set", stacklevel=2)
        return TargetSet({})
    targets: dict[str, TokenSequence] = {}
    excluded: list[str] = []
    for utt in trainset:
        try:
            targets[utt.id] = adapter.decode(utt.waveform, TaskTag.TRANSLATE)
        except Exception as exc:  # noqa: BLE001 - per-utterance isolation
            logger.warning("target decode failed for %s: %s", utt.id, exc)
            excluded.append(utt.id)
    return TargetSet(targets, tuple(excluded))


@dataclass
class AdamState:
    """Adaptive-moment accumulator for the segment update."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))

    def update(self, grad: np.ndarray, learning_rate: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def _prepend_raw(seg_samples: np.ndarray, audio: Waveform) -> Waveform:
    """Raw-audio concatenation of the in-progress (float64) segment samples."""
    return Waveform(np.concatenate([seg_samples, audio.samples]), audio.sample_rate)


def attack_step(
    adapter: ModelAdapter,
    segment_samples: np.ndarray,
    batch: list[tuple[LoadedUtterance, TokenSequence]],
    learning_rate: float,
    epsilon: float,
    opt_state: Optional[AdamState] = None,
    per_token_loss: bool = False,
) -> tuple[np.ndarray, float]:
    """One optimizer step on the segment samples; audio and model are never
    touched. Returns (projected samples, mean batch NLL)."""
    if not batch:
        raise ValueError("batch must be non-empty")
    seg = np.asarray(segment_samples, dtype=np.float64)
    if opt_state is None:
        opt_state = AdamState.zeros(len(seg))
    total_nll = 0.0
    grad_sum = np.zeros(len(seg))
    batched = getattr(adapter, "teacher_forced_nll_batch", None)
    if batched is not None:
        audios = [_prepend_raw(seg, utt.waveform) for utt, _ in batch]
        nlls, grads = batched(audios, [t for _, t in batch], TaskTag.TRANSCRIBE)
    else:
        nlls, grads = [], []
        for utt, target in batch:
            nll, grad = adapter.teacher_forced_nll(
                _prepend_raw(seg, utt.waveform), target, TaskTag.TRANSCRIBE
            )
            nlls.append(nll)
            grads.append(grad)
    for (_, target), nll, grad in zip(batch, nlls, grads):
        scale = 1.0 / max(len(target), 1) if per_token_loss else 1.0
        total_nll += nll * scale
        grad_sum += grad[: len(seg)] * scale
    mean_nll = total_nll / len(batch)
    mean_grad = grad_sum / len(batch)
    if not np.isfinite(mean_nll) or not np.all(np.isfinite(mean_grad)):
        raise AttackError("non-finite loss or gradient in attack step")
    updated = seg - opt_state.update(mean_grad, learning_rate)
    return project_linf(updated, epsilon), mean_nll


@dataclass(frozen=True)
class TraceRow:
    step: int
    mean_nll: float
    linf: float
    utt_ids: tuple[str, ...] = ()


@dataclass
class TrainingTrace:
    rows: list[TraceRow] = field(default_factory=list)
    checkpoints: list[tuple[int, float]] = field(default_factory=list)
    selected_step: int = 0

    def append(self, row: TraceRow, epsilon: float) -> None:
        # Eq.-style budget invariant holds on every recorded step
        assert row.linf <= epsilon, f"step {row.step}: linf {row.linf} > epsilon {epsilon}"
        self.rows.append(row)

    def save_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for r in self.rows:
                fh.write(
                    json.dumps(
                        {
                            "step": r.step,
                            "mean_nll": r.mean_nll,
                            "linf": r.linf,
                            "utt_ids": list(r.utt_ids),
                        }
                    )
                    + "\n"
                )


def load_trace_jsonl(path) -> TrainingTrace:
    trace = TrainingTrace()
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                trace.rows.append(
                    TraceRow(
                        obj["step"], obj["mean_nll"], obj["linf"],
                        tuple(obj.get("utt_ids", ())),
                    )
                )
    return trace


def _trainset_mean_nll(
    adapter: ModelAdapter,
    segment: AdversarialSegment,
    trainset: list[LoadedUtterance],
    targets: TargetSet,
    per_token_loss: bool,
) -> float:
    total = 0.0
    n = 0
    for utt in trainset:
        target = targets[utt.id]
        nll, _ = adapter.teacher_forced_nll(
            prepend(segment, utt.waveform), target, TaskTag.TRANSCRIBE
        )
        total += nll / max(len(target), 1) if per_token_loss else nll
        n += 1
    return total / n


def _init_segment(config: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    if config.init == "zeros" or config.epsilon == 0.0:
        return np.zeros(config.segment_frames)
    scale = config.epsilon / 10.0
    return rng.uniform(-scale, scale, size=config.segment_frames)


def train_universal_segment(
    adapter: ModelAdapter,
    config: AttackConfig,
    trainset: list[LoadedUtterance],
    targets: TargetSet,
    checkpoint_dir=None,
    source_lang: str = "",
) -> tuple[AdversarialSegment, TrainingTrace]:
    """Optimize one segment over the whole training set (seeded shuffling,
    per-step projection, best-checkpoint selection by training-set mean NLL)."""
    usable = [u for u in trainset if u.id in targets.targets]
    if len(usable) < len(trainset):
        dropped = len(trainset) - len(usable)
        logger.warning("dropping %d utterances without targets", dropped)
    if not usable and config.steps > 0:
        raise ValueError("no usable training utterances (targets missing)")

    rng = np.random.default_rng(config.seed)
    seg = project_linf(_init_segment(config, rng), config.epsilon)
    opt = AdamState.zeros(config.segment_frames)
    trace = TrainingTrace()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    sample_rate = usable[0].waveform.sample_rate if usable else adapter.sample_rate

    def snapshot(samples: np.ndarray, steps_done: int) -> AdversarialSegment:
        return AdversarialSegment(
            quantize_to_budget(samples, config.epsilon),
            sample_rate=sample_rate,
            epsilon=config.epsilon,
            model_id=adapter.model_id,
            source_lang=source_lang,
            steps=steps_done,
        )

    best: tuple[float, int, np.ndarray] | None = None
    order: list[int] = []
    step = 0
    while step < config.steps:
        if len(order) < config.batch_size:
            order = list(rng.permutation(len(usable)))
        take, order = order[: config.batch_size], order[config.batch_size :]
        batch = [(usable[i], targets[usable[i].id]) for i in take]
        step += 1
        try:
            seg, mean_nll = attack_step(
                adapter, seg, batch, config.learning_rate, config.epsilon,
                opt_state=opt, per_token_loss=config.per_token_loss,
            )
        except AttackError as exc:
            trace.selected_step = step - 1
            raise AttackError(f"step {step}: {exc}") from exc
        linf = float(np.abs(seg).max(initial=0.0))
        trace.append(
            TraceRow(step, mean_nll, linf, tuple(b[0].id for b in batch)), config.epsilon
        )
        at_interval = config.checkpoint_interval > 0 and step % config.checkpoint_interval == 0
        if at_interval or step == config.steps:
            candidate = snapshot(seg, step)
            train_nll = _trainset_mean_nll(
                adapter, candidate, usable, targets, config.per_token_loss
            )
            trace.checkpoints.append((step, train_nll))
            if best is None or train_nll < best[0]:
                best = (train_nll, step, seg.copy())
            if ckpt_dir is not None:
                save_segment(candidate, ckpt_dir / f"step-{step:06d}.f32le")

    if best is not None:
        _, selected, seg = best
        trace.selected_step = selected
    else:
        trace.selected_step = 0
    return snapshot(seg, trace.selected_step if config.steps else 0), trace
