"""A small trainable encoder-decoder speech model over tone-chip audio.

The model consumes raw waveforms (windowed into fixed-size slots and
linearly embedded) and decodes token sequences conditioned on a decoder
prompt of [start, language, task] special tokens. With task=tc it emits
source-alphabet tokens, with task=tl the mapped target-alphabet tokens.

Runs entirely in float64 so input-gradient checks against central finite
differences are numerically clean, and trains on CPU in minutes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .adapter import (
    AdapterPlugin,
    ModelAdapter,
    TaskTag,
    TokenSequence,
    VocabularyError,
    register_adapter,
)
from .audio import Waveform
from .synth import ToyExample


@dataclass(frozen=True)
class ToyModelConfig:
    alphabet_size: int = 10
    window: int = 400           # audio frames per encoder slot
    d_model: int = 64
    n_heads: int = 4
    ff_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    dropout: float = 0.1
    sample_rate: int = 16_000
    max_audio_frames: int = 120_000
    max_decode_tokens: int = 16

    # training
    learning_rate: float = 2e-3
    lr_decay: float = 0.1      # cosine decay floor, as a fraction of learning_rate
    label_smoothing: float = 0.1
    batch_size: int = 16
    max_steps: int = 4000
    accuracy_target: float = 0.98
    eval_interval: int = 100
    val_fraction: float = 0.1
    # random leading noise teaches shift robustness so prepended audio does
    # not break content reading; lengths are drawn from a short/long mixture
    aug_prefix_short: int = 12_000
    aug_prefix_long: int = 84_000
    aug_noise_std: float = 0.02
    # fresh noise on every presentation so fixed per-file noise is not memorized
    aug_extra_noise_std: float = 0.01
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.encoder_layers > 2 or self.decoder_layers > 2 or self.d_model > 128:
            raise ValueError("toy model is capped at 2+2 layers and width 128")

    # vocabulary layout: source alphabet, target alphabet, then specials
    @property
    def vocab_size(self) -> int:
        return 2 * self.alphabet_size + 5

    @property
    def start_id(self) -> int:
        return 2 * self.alphabet_size

    @property
    def lang_id(self) -> int:
        return 2 * self.alphabet_size + 1

    @property
    def tc_id(self) -> int:
        return 2 * self.alphabet_size + 2

    @property
    def tl_id(self) -> int:
        return 2 * self.alphabet_size + 3

    @property
    def end_id(self) -> int:
        return 2 * self.alphabet_size + 4

    def task_id(self, task: TaskTag) -> int:
        return self.tc_id if task is TaskTag.TRANSCRIBE else self.tl_id

    def source_token(self, symbol: int) -> int:
        return symbol

    def target_token(self, symbol: int) -> int:
        return self.alphabet_size + symbol

    def token_word(self, token: int) -> Optional[str]:
        """Word rendering of a token; None for special tokens."""
        if 0 <= token < self.alphabet_size:
            return f"s{token}"
        if self.alphabet_size <= token < 2 * self.alphabet_size:
            return f"t{token - self.alphabet_size}"
        if 2 * self.alphabet_size <= token < self.vocab_size:
            return None
        raise VocabularyError(f"token id {token} outside vocabulary of size {self.vocab_size}")

    def word_token(self, word: str) -> int:
        if len(word) >= 2 and word[0] in ("s", "t") and word[1:].isdigit():
            symbol = int(word[1:])
            if 0 <= symbol < self.alphabet_size:
                return symbol if word[0] == "s" else self.alphabet_size + symbol
        raise VocabularyError(f"word {word!r} is not in the toy vocabulary")


def _sinusoid_table(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)
    return table


class ToneSeqModel(nn.Module):
    """Recurrent encoder over audio windows, transformer decoder over tokens.

    The encoder carries no absolute positions: a bidirectional GRU makes the
    content representation robust to how much audio precedes it, which is
    exactly what a prepend attack varies.
    """

    def __init__(self, cfg: ToyModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.d_model % 2:
            raise ValueError("d_model must be even (bidirectional encoder)")
        self.input_proj = nn.Linear(cfg.window, cfg.d_model)
        self.input_norm = nn.LayerNorm(cfg.d_model)
        self.encoder = nn.GRU(
            cfg.d_model,
            cfg.d_model // 2,
            num_layers=cfg.encoder_layers,
            batch_first=True,
            bidirectional=True,
            dropout=cfg.dropout if cfg.encoder_layers > 1 else 0.0,
        )
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size)
        dec_layer = nn.TransformerDecoderLayer(
            cfg.d_model, cfg.n_heads, cfg.ff_dim, cfg.dropout,
            batch_first=True, norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.decoder_layers)
        self.register_buffer(
            "dec_pos", _sinusoid_table(cfg.max_decode_tokens + 4, cfg.d_model)
        )

    def encode(self, windows: torch.Tensor, pad_mask: Optional[torch.Tensor] = None):
        # windows: (B, W, window), pad_mask: (B, W) True where padding
        h = self.input_norm(self.input_proj(windows))
        if pad_mask is not None:
            lengths = (~pad_mask).sum(dim=1).cpu()
            packed = nn.utils.rnn.pack_padded_sequence(
                h, lengths, batch_first=True, enforce_sorted=False
            )
            out, _ = self.encoder(packed)
            out, _ = nn.utils.rnn.pad_packed_sequence(
                out, batch_first=True, total_length=windows.shape[1]
            )
            return out
        out, _ = self.encoder(h)
        return out

    def decode_logits(
        self,
        tokens: torch.Tensor,
        memory: torch.Tensor,
        memory_pad_mask: Optional[torch.Tensor] = None,
    ):
        # tokens: (B, L) -> logits (B, L, vocab)
        length = tokens.shape[1]
        h = self.embed(tokens) + self.dec_pos[:length]
        causal = torch.triu(
            torch.ones(length, length, dtype=torch.bool, device=tokens.device), diagonal=1
        )
        out = self.decoder(
            h, memory, tgt_mask=causal, memory_key_padding_mask=memory_pad_mask
        )
        return self.head(out)


def _frame(samples: torch.Tensor, window: int) -> torch.Tensor:
    """Zero-pad to a window multiple and reshape to (1, W, window)."""
    n = samples.shape[0]
    n_windows = -(-n // window)
    padded = F.pad(samples, (0, n_windows * window - n))
    return padded.reshape(1, n_windows, window)


def _frame_batch(arrays: list[np.ndarray], window: int):
    """Frame a batch of waveforms, padding to the batch maximum.

    Returns (windows (B, Wmax, window) float64, pad_mask (B, Wmax) bool)
    where pad_mask marks windows that are entirely batch padding.
    """
    counts = [-(-len(a) // window) for a in arrays]
    w_max = max(counts)
    batch = torch.zeros(len(arrays), w_max * window, dtype=torch.float64)
    pad_mask = torch.ones(len(arrays), w_max, dtype=torch.bool)
    for i, (arr, w) in enumerate(zip(arrays, counts)):
        batch[i, : len(arr)] = torch.from_numpy(np.array(arr, dtype=np.float64))
        pad_mask[i, :w] = False
    return batch.reshape(len(arrays), w_max, window), pad_mask


def _greedy_decode(
    model: ToneSeqModel, cfg: ToyModelConfig, memory: torch.Tensor, task: TaskTag
) -> tuple[list[int], float]:
    """Greedy decoding over a precomputed encoder memory; returns the emitted
    tokens (end token included when reached) and their summed NLL."""
    tokens = [cfg.start_id, cfg.lang_id, cfg.task_id(task)]
    emitted: list[int] = []
    nll = 0.0
    for _ in range(cfg.max_decode_tokens):
        inp = torch.tensor([tokens], dtype=torch.long)
        logits = model.decode_logits(inp, memory)[0, -1]
        logp = F.log_softmax(logits, dim=-1)
        nxt = int(torch.argmax(logp).item())
        nll -= float(logp[nxt].item())
        emitted.append(nxt)
        tokens.append(nxt)
        if nxt == cfg.end_id:
            break
    return emitted, nll


@dataclass(frozen=True)
class TrainRecord:
    reached_target: bool
    steps_run: int
    accuracy_tc: float
    accuracy_tl: float


class ToyAdapter(ModelAdapter):
    """Adapter over a trained :class:`ToneSeqModel`.

    Single-threaded use per instance; the wrapped model stays in eval mode
    so all contract calls are deterministic.
    """

    def __init__(self, model: ToneSeqModel, config: ToyModelConfig,
                 train_record: Optional[TrainRecord] = None):
        self.model = model.double().eval()
        self.config = config
        self.train_record = train_record

    @property
    def model_id(self) -> str:
        return "toy"

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    @property
    def sample_rate(self) -> int:
        return self.config.sample_rate

    @property
    def max_audio_frames(self) -> int:
        return self.config.max_audio_frames

    def _check_nonempty(self, audio: Waveform) -> None:
        # degenerate-input contract: the toy adapter rejects empty audio
        if len(audio) == 0:
            raise ValueError("toy adapter requires at least one audio frame")

    def teacher_forced_nll(
        self, audio: Waveform, target: TokenSequence, task: TaskTag
    ) -> tuple[float, np.ndarray]:
        self.check_audio(audio)
        self._check_nonempty(audio)
        self.check_tokens(target)
        cfg = self.config
        x = torch.from_numpy(np.array(audio.samples, dtype=np.float64))
        x.requires_grad_(True)
        memory = self.model.encode(_frame(x, cfg.window))
        if len(target) == 0:
            return 0.0, np.zeros(len(audio))
        prompt = [cfg.start_id, cfg.lang_id, cfg.task_id(task)]
        dec_in = torch.tensor([prompt + list(target.tokens[:-1])], dtype=torch.long)
        logits = self.model.decode_logits(dec_in, memory)[0, 2:]
        labels = torch.tensor(list(target.tokens), dtype=torch.long)
        nll = F.cross_entropy(logits, labels, reduction="sum")
        (grad,) = torch.autograd.grad(nll, x)
        return float(nll.item()), grad.detach().numpy()

    def teacher_forced_nll_batch(
        self, audios: list[Waveform], targets: list[TokenSequence], task: TaskTag
    ) -> tuple[list[float], list[np.ndarray]]:
        """Batched variant of :meth:`teacher_forced_nll` (same per-sample
        semantics, one shared backward pass)."""
        cfg = self.config
        leaves = []
        for audio, target in zip(audios, targets):
            self.check_audio(audio)
            self._check_nonempty(audio)
            self.check_tokens(target)
            if len(target) == 0:
                raise ValueError("batched path requires non-empty targets")
            x = torch.from_numpy(np.array(audio.samples, dtype=np.float64))
            x.requires_grad_(True)
            leaves.append(x)

        counts = [-(-x.shape[0] // cfg.window) for x in leaves]
        w_max = max(counts)
        rows = [F.pad(x, (0, w_max * cfg.window - x.shape[0])) for x in leaves]
        windows = torch.stack(rows).reshape(len(rows), w_max, cfg.window)
        pad_mask = torch.ones(len(rows), w_max, dtype=torch.bool)
        for i, w in enumerate(counts):
            pad_mask[i, :w] = False
        memory = self.model.encode(windows, pad_mask)

        prompt = [cfg.start_id, cfg.lang_id, cfg.task_id(task)]
        m_max = max(len(t) for t in targets)
        dec_in = torch.full((len(targets), 2 + m_max), cfg.end_id, dtype=torch.long)
        labels = torch.full((len(targets), 2 + m_max), -100, dtype=torch.long)
        for i, t in enumerate(targets):
            toks = list(t.tokens)
            dec_in[i, :3] = torch.tensor(prompt)
            dec_in[i, 3 : 2 + len(toks)] = torch.tensor(toks[:-1])
            labels[i, 2 : 2 + len(toks)] = torch.tensor(toks)
        logits = self.model.decode_logits(dec_in, memory, memory_pad_mask=pad_mask)
        per_pos = F.cross_entropy(
            logits.transpose(1, 2), labels, ignore_index=-100, reduction="none"
        )
        per_sample = per_pos.sum(dim=1)
        grads = torch.autograd.grad(per_sample.sum(), leaves)
        nlls = [float(v) for v in per_sample.detach()]
        return nlls, [g.numpy() for g in grads]

    def decode(self, audio: Waveform, task: TaskTag) -> TokenSequence:
        tokens, _ = self.decode_scored(audio, task)
        return tokens

    def decode_scored(self, audio: Waveform, task: TaskTag) -> tuple[TokenSequence, float]:
        """Greedy decode plus the summed per-step NLL of the emitted tokens."""
        self.check_audio(audio)
        self._check_nonempty(audio)
        cfg = self.config
        with torch.no_grad():
            x = torch.from_numpy(np.array(audio.samples, dtype=np.float64))
            memory = self.model.encode(_frame(x, cfg.window))
            emitted, nll = _greedy_decode(self.model, cfg, memory, task)
        return TokenSequence(tuple(emitted)), nll

    def detokenize(self, tokens: TokenSequence) -> str:
        words = [self.config.token_word(t) for t in tokens]
        return " ".join(w for w in words if w is not None)

    def tokenize_text(self, text: str, append_end: bool = False) -> TokenSequence:
        """Parse alphabet words (s0.., t0..) back into token ids."""
        ids = [self.config.word_token(w) for w in text.split()]
        if append_end:
            ids.append(self.config.end_id)
        return TokenSequence(tuple(ids))

    def target_alphabet_words(self) -> frozenset[str]:
        return frozenset(f"t{k}" for k in range(self.config.alphabet_size))


def _expected_tokens(cfg: ToyModelConfig, symbols, task: TaskTag) -> list[int]:
    to_token = cfg.source_token if task is TaskTag.TRANSCRIBE else cfg.target_token
    return [to_token(s) for s in symbols] + [cfg.end_id]


def _exact_match_accuracy(
    model: ToneSeqModel, cfg: ToyModelConfig, examples: list[ToyExample], task: TaskTag
) -> float:
    dtype = next(model.parameters()).dtype
    hits = 0
    with torch.no_grad():
        for ex in examples:
            x = torch.from_numpy(np.array(ex.waveform.samples)).to(dtype)
            memory = model.encode(_frame(x, cfg.window))
            emitted, _ = _greedy_decode(model, cfg, memory, task)
            symbols = ex.source_symbols if task is TaskTag.TRANSCRIBE else ex.target_symbols
            if emitted == _expected_tokens(cfg, symbols, task):
                hits += 1
    return hits / len(examples)


def _task_loss(
    model: ToneSeqModel,
    cfg: ToyModelConfig,
    memory: torch.Tensor,
    mem_pad: torch.Tensor,
    targets: list[list[int]],
    task: TaskTag,
) -> torch.Tensor:
    prompt = [cfg.start_id, cfg.lang_id, cfg.task_id(task)]
    m_max = max(len(t) for t in targets)
    dec_in = torch.full((len(targets), 2 + m_max), cfg.end_id, dtype=torch.long)
    labels = torch.full((len(targets), 2 + m_max), -100, dtype=torch.long)
    for i, tgt in enumerate(targets):
        dec_in[i, :3] = torch.tensor(prompt)
        dec_in[i, 3 : 2 + len(tgt)] = torch.tensor(tgt[:-1])
        labels[i, 2 : 2 + len(tgt)] = torch.tensor(tgt)
    logits = model.decode_logits(dec_in, memory, memory_pad_mask=mem_pad)
    return F.cross_entropy(
        logits.reshape(-1, cfg.vocab_size),
        labels.reshape(-1),
        ignore_index=-100,
        label_smoothing=cfg.label_smoothing,
    )


def train_toy_model(config: ToyModelConfig, dataset: list[ToyExample]) -> ToyAdapter:
    """Train the toy model on both tasks until held-out exact-match accuracy
    reaches the configured target on BOTH tasks, or the step cap is hit.

    Failure to reach the target is reported as a degraded-model warning on
    the returned adapter's train record, never as silent success.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    cfg = config
    for ex in dataset:
        if max(ex.source_symbols, default=0) >= cfg.alphabet_size or (
            max(ex.target_symbols, default=0) >= cfg.alphabet_size
        ):
            raise ValueError(f"example {ex.id} uses symbols beyond the configured alphabet")

    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    # trains in float32 for speed; the served adapter casts to float64
    model = ToneSeqModel(cfg).float()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    floor = cfg.lr_decay * cfg.learning_rate
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=cfg.max_steps, eta_min=floor
    )

    order = rng.permutation(len(dataset))
    n_val = max(1, round(cfg.val_fraction * len(dataset)))
    val = [dataset[i] for i in order[:n_val]]
    fit = [dataset[i] for i in order[n_val:]] or val

    reached = False
    acc_tc = acc_tl = 0.0
    step = 0
    while step < cfg.max_steps:
        step += 1
        idx = rng.choice(len(fit), size=min(cfg.batch_size, len(fit)), replace=False)
        # one shared noise-prefix length per batch keeps batches rectangular;
        # the no-prefix / short / long mixture keeps average step cost down
        draw = rng.random()
        if draw < 0.30:
            prefix_len = 0
        elif draw < 0.85:
            prefix_len = int(rng.integers(0, cfg.aug_prefix_short + 1))
        else:
            prefix_len = int(rng.integers(0, cfg.aug_prefix_long + 1))
        arrays = []
        for i in idx:
            wav = fit[i].waveform.samples
            prefix = cfg.aug_noise_std * rng.standard_normal(prefix_len)
            audio = np.concatenate([prefix, wav])
            if cfg.aug_extra_noise_std > 0:
                audio = audio + cfg.aug_extra_noise_std * rng.standard_normal(len(audio))
            arrays.append(audio)
        windows, pad_mask = _frame_batch(arrays, cfg.window)

        model.train()
        memory = model.encode(windows.float(), pad_mask)
        loss_tc = _task_loss(
            model, cfg, memory, pad_mask,
            [_expected_tokens(cfg, fit[i].source_symbols, TaskTag.TRANSCRIBE) for i in idx],
            TaskTag.TRANSCRIBE,
        )
        loss_tl = _task_loss(
            model, cfg, memory, pad_mask,
            [_expected_tokens(cfg, fit[i].target_symbols, TaskTag.TRANSLATE) for i in idx],
            TaskTag.TRANSLATE,
        )
        loss = 0.5 * (loss_tc + loss_tl)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()

        if step % cfg.eval_interval == 0 or step == cfg.max_steps:
            model.eval()
            acc_tc = _exact_match_accuracy(model, cfg, val, TaskTag.TRANSCRIBE)
            acc_tl = _exact_match_accuracy(model, cfg, val, TaskTag.TRANSLATE)
            if acc_tc >= cfg.accuracy_target and acc_tl >= cfg.accuracy_target:
                reached = True
                break

    model.eval()
    record = TrainRecord(reached, step, acc_tc, acc_tl)
    if not reached:
        warnings.warn(
            f"toy model degraded: accuracy tc={acc_tc:.3f} tl={acc_tl:.3f} "
            f"below target {cfg.accuracy_target} after {step} steps",
            stacklevel=2,
        )
    return ToyAdapter(model, cfg, record)


CHECKPOINT_VERSION = 1


def save_checkpoint(adapter: ToyAdapter, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(adapter.config),
        "state_dict": adapter.model.state_dict(),
        "train_record": asdict(adapter.train_record) if adapter.train_record else None,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> ToyAdapter:
    payload = torch.load(path, weights_only=True)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {payload.get('format_version')!r}"
        )
    cfg = ToyModelConfig(**payload["config"])
    model = ToneSeqModel(cfg).double()
    model.load_state_dict(payload["state_dict"])
    record = TrainRecord(**payload["train_record"]) if payload["train_record"] else None
    return ToyAdapter(model, cfg, record)


def _load_toy(model_path: Optional[str]) -> ModelAdapter:
    if model_path is None:
        raise ValueError("the toy adapter needs a checkpoint path (--model)")
    return load_checkpoint(model_path)


def _toy_detector(adapter: ModelAdapter):
    from .metrics import ToyAlphabetDetector

    return ToyAlphabetDetector(adapter.target_alphabet_words())


register_adapter("toy", AdapterPlugin(load=_load_toy, make_detector=_toy_detector))
