"""Loss, optimiser, delayed-update training loop and model checkpoints."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import TrainConfig
from .decoder_baseline import BaselineModel, baseline_decode
from .decoder_topdown import TopDownModel, greedy_decode
from .deptree import SentencePair
from .nncore import autodiff as ad
from .nncore.autodiff import Tape, Tensor
from .nncore.params import load_checkpoint, save_checkpoint
from .vocab import PAD, JointVocab, build_vocab

logger = logging.getLogger(__name__)

ARMS = ("topdown", "baseline")


class TrainingError(RuntimeError):
    pass


def smoothed_targets(targets: np.ndarray, n_classes: int, epsilon: float, pad_id: int | None, dtype=np.float64) -> np.ndarray:
    """Target distributions: ``1 - eps`` on the gold class, ``eps / (K - 1)`` elsewhere.

    ``K`` counts the non-PAD classes; the PAD class gets zero mass, and rows
    whose target is PAD are all-zero (ignored).
    """
    targets = np.asarray(targets, dtype=np.int64)
    k = n_classes - (1 if pad_id is not None else 0)
    if k < 2 and epsilon > 0:
        raise ValueError("label smoothing needs at least two classes")
    off = epsilon / (k - 1) if epsilon > 0 else 0.0
    q = np.full((targets.size, n_classes), off, dtype=dtype)
    if pad_id is not None:
        q[:, pad_id] = 0.0
    q[np.arange(targets.size), targets] = 1.0 - epsilon
    if pad_id is not None:
        q[targets == pad_id] = 0.0
    return q


def label_smoothing_loss(logits, targets, epsilon: float = 0.1, pad_id: int | None = None, reduction: str = "mean") -> Tensor:
    """Cross-entropy of ``softmax(logits)`` against label-smoothed targets.

    ``logits`` is (V,) with a scalar target or (N, V) with N targets.  With
    ``pad_id`` set, the PAD class is removed from the smoothing distribution
    and rows whose target is PAD are padding: ignored for ``reduction="sum"``
    and ``"mean"`` (mean over non-PAD rows).  A lone PAD target is an error.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    logits = ad.as_tensor(logits)
    scalar = logits.ndim == 1
    if scalar:
        logits = ad.reshape(logits, (1, -1))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if pad_id is not None and scalar and targets[0] == pad_id:
        raise ValueError("target is PAD")
    n_classes = logits.shape[-1]
    if ((targets < 0) | (targets >= n_classes)).any():
        raise ValueError("target id outside the output space")
    q = smoothed_targets(targets, n_classes, epsilon, pad_id, logits.data.dtype)
    total = ad.scale(ad.sum(ad.mul(ad.log_softmax(logits, axis=-1), q)), -1.0)
    if reduction == "sum":
        return total
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    n = int((targets != pad_id).sum()) if pad_id is not None else targets.size
    if n == 0:
        raise ValueError("no non-PAD targets")
    return ad.scale(total, 1.0 / n)


def transformer_lr(step: int, d_model: int, warmup: int) -> float:
    """``d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)``."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


class Adam:
    """Adam with bias correction driven by the warmup/inverse-sqrt schedule."""

    def __init__(self, params, d_model: int, warmup: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.d_model, self.warmup = d_model, warmup
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def lr(self, step: int | None = None) -> float:
        return transformer_lr(self.t if step is None else step, self.d_model, self.warmup)

    def step(self) -> float:
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient in {p.name}")
        self.t += 1
        lr = self.lr()
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[p.name] = b1 * self.m[p.name] + (1.0 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1.0 - b2) * (g * g)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{k}": v for k, v in self.m.items()}
        out.update({f"adam.v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays, t: int) -> None:
        self.t = t
        for name in self.m:
            self.m[name] = np.array(arrays[f"adam.m/{name}"])
            self.v[name] = np.array(arrays[f"adam.v/{name}"])


def adam_step(optimizer: Adam) -> float:
    """Apply one update from the parameters' accumulated ``.grad``; returns the learning rate used."""
    return optimizer.step()


def make_model(arm: str, vocab: JointVocab, config: TrainConfig):
    if arm == "topdown":
        return TopDownModel(vocab, config)
    if arm == "baseline":
        return BaselineModel(vocab, config)
    raise ValueError(f"unknown arm {arm!r}; choose from {ARMS}")


def batch_loss(model, examples, epsilon: float, training: bool = False, rng=None):
    """Summed smoothed loss over all non-PAD steps of ``examples``; returns (loss, n_tokens)."""
    logits, targets = model.forward_teacher(list(examples), training=training, rng=rng)
    loss = label_smoothing_loss(logits, targets, epsilon, pad_id=PAD, reduction="sum")
    return loss, int((targets != PAD).sum())


def accumulate_gradients(model, examples, micro_batch: int, epsilon: float, training: bool = False, rng=None):
    """Sum loss gradients over micro-batches, then divide by the total step count.

    Leaves the per-token mean gradient of the whole window in ``.grad``,
    identical (up to rounding) to one pass over the whole window.  Returns
    ``(mean loss, n_tokens)``.
    """
    params = model.parameters()
    ad.zero_grad(params)
    total_loss, total_tokens = 0.0, 0
    for start in range(0, len(examples), micro_batch):
        chunk = examples[start : start + micro_batch]
        with Tape() as tape:
            loss, n = batch_loss(model, chunk, epsilon, training, rng)
        if not np.isfinite(loss.data):
            raise TrainingError("non-finite loss")
        tape.backward(loss)
        total_loss += float(loss.data)
        total_tokens += n
    if total_tokens == 0:
        raise TrainingError("window has no target tokens")
    for p in params:
        if p.grad is not None:
            p.grad = p.grad / total_tokens
    return total_loss / total_tokens, total_tokens


def teacher_forced_accuracy(model, examples, batch: int = 100) -> float:
    correct = total = 0
    for start in range(0, len(examples), batch):
        logits, targets = model.forward_teacher(examples[start : start + batch])
        keep = targets != PAD
        correct += int((logits.data.argmax(axis=-1)[keep] == targets[keep]).sum())
        total += int(keep.sum())
    return correct / max(total, 1)


def mean_loss(model, examples, epsilon: float, batch: int = 100) -> float:
    total, n = 0.0, 0
    for start in range(0, len(examples), batch):
        loss, k = batch_loss(model, examples[start : start + batch], epsilon)
        total += float(loss.data)
        n += k
    return total / max(n, 1)


def exact_match(model, pairs: Sequence[SentencePair]) -> float:
    hits = 0
    for pair in pairs:
        if model.arm == "topdown":
            hits += greedy_decode(model, pair.source).tree == pair.target
        else:
            hits += baseline_decode(model, pair.source, beam_size=1).pieces == pair.target.pieces
    return hits / max(len(pairs), 1)


# -- checkpoints ----------------------------------------------------------------


def save_model(path, model, train_state: dict | None = None, extra_arrays: dict | None = None) -> None:
    header = {
        "arm": model.arm,
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_text(),
        "train_state": train_state or {},
    }
    arrays = {f"param/{k}": v for k, v in model.store.state_dict().items()}
    arrays.update(extra_arrays or {})
    save_checkpoint(path, arrays, header)


def load_model(path):
    """Rebuild a model (and return the raw checkpoint) from ``path``."""
    arrays, header = load_checkpoint(path)
    vocab = JointVocab.from_text(header["vocab"])
    config = TrainConfig.from_dict(header["config"])
    model = make_model(header["arm"], vocab, config)
    model.store.load_state_dict({k[len("param/") :]: v for k, v in arrays.items() if k.startswith("param/")})
    return model, arrays, header


# -- training loop ---------------------------------------------------------------


@dataclass
class TrainResult:
    model: object
    log: list[dict] = field(default_factory=list)
    updates: int = 0
    stop_reason: str = ""
    train_accuracy: float | None = None
    best_valid: dict | None = None


class _Stream:
    """Endless shuffled pass over example indices; reshuffles every epoch."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.order = rng.permutation(n)
        self.cursor = 0
        self.epoch = 0

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if self.cursor == self.n:
                self.order = self.rng.permutation(self.n)
                self.cursor = 0
                self.epoch += 1
            step = min(k - len(out), self.n - self.cursor)
            out.extend(int(i) for i in self.order[self.cursor : self.cursor + step])
            self.cursor += step
        return out


def train(
    config: TrainConfig,
    pairs: Sequence[SentencePair],
    arm: str = "topdown",
    valid_pairs: Sequence[SentencePair] | None = None,
    vocab: JointVocab | None = None,
    checkpoint_path=None,
    resume_from=None,
    log_fn: Callable[[dict], None] | None = None,
    max_updates: int | None = None,
) -> TrainResult:
    """Teacher-forced training with delayed updates.

    Each update draws ``examples_per_update`` sentences from a shuffled
    stream, accumulates gradients over micro-batches of ``micro_batch``
    sentences and applies one Adam step.  Deterministic for a fixed seed.
    ``max_updates`` (if given) overrides the config's cap, e.g. to stop a
    run early and resume it later.
    """
    if config.length_threshold:
        pairs = [p for p in pairs if len(p.source) <= config.length_threshold]
    if not pairs:
        raise TrainingError("no training sentences left after filtering")
    vocab = vocab or build_vocab(pairs, config.min_freq)
    model = make_model(arm, vocab, config)
    examples = [model.example(p) for p in pairs]
    optimizer = Adam(model.parameters(), config.d_model, config.warmup, config.adam_beta1, config.adam_beta2, config.adam_eps)
    data_rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng(config.seed + 7919)
    stream = _Stream(len(examples), data_rng)
    result = TrainResult(model)
    start = 0
    if resume_from is not None:
        start = _restore(resume_from, model, optimizer, stream, data_rng, drop_rng)
    cap = config.max_updates if max_updates is None else max_updates
    best_score = None
    best_params = None

    for update in range(start + 1, cap + 1):
        if config.max_epochs and stream.epoch >= config.max_epochs:
            result.stop_reason = "max_epochs"
            break
        t0 = time.perf_counter()
        window = [examples[i] for i in stream.take(config.examples_per_update)]
        window.sort(key=lambda e: (e.n_targets, len(e.source)))
        loss, n_tokens = accumulate_gradients(model, window, config.micro_batch, config.label_smoothing, True, drop_rng)
        lr = optimizer.step()
        elapsed = time.perf_counter() - t0
        entry = {"update": update, "lr": lr, "loss": loss, "tokens_per_s": n_tokens / max(elapsed, 1e-9)}
        result.log.append(entry)
        result.updates = update
        stop = False
        if config.stop_accuracy and update % config.accuracy_every == 0:
            acc = teacher_forced_accuracy(model, examples)
            result.train_accuracy = acc
            entry["train_accuracy"] = acc
            stop = acc >= config.stop_accuracy
        if valid_pairs and config.validate_every and update % config.validate_every == 0:
            v_loss = mean_loss(model, [model.example(p) for p in valid_pairs], config.label_smoothing)
            v_em = exact_match(model, valid_pairs)
            entry.update(valid_loss=v_loss, valid_exact=v_em)
            score = (v_em, -v_loss)
            if best_score is None or score > best_score:
                best_score = score
                best_params = {k: v.copy() for k, v in model.store.state_dict().items()}
                result.best_valid = {"update": update, "valid_loss": v_loss, "valid_exact": v_em}
        if checkpoint_path and config.checkpoint_every and update % config.checkpoint_every == 0:
            _save_training(checkpoint_path, model, optimizer, stream, data_rng, drop_rng, update)
        if log_fn is not None:
            log_fn(entry)
        if stop:
            result.stop_reason = "stop_accuracy"
            break
    else:
        result.stop_reason = "max_updates"
    if best_params is not None:
        model.store.load_state_dict(best_params)
    if checkpoint_path:
        _save_training(checkpoint_path, model, optimizer, stream, data_rng, drop_rng, result.updates)
    return result


def _save_training(path, model, optimizer, stream, data_rng, drop_rng, update) -> None:
    state = {
        "update": update,
        "adam_t": optimizer.t,
        "cursor": stream.cursor,
        "epoch": stream.epoch,
        "data_rng": data_rng.bit_generator.state,
        "drop_rng": drop_rng.bit_generator.state,
    }
    extra = optimizer.state_arrays()
    extra["train/order"] = stream.order
    save_model(path, model, state, extra)


def _restore(path, model, optimizer, stream, data_rng, drop_rng) -> int:
    arrays, header = load_checkpoint(path)
    if header["arm"] != model.arm:
        raise TrainingError(f"checkpoint is for arm {header['arm']!r}, not {model.arm!r}")
    model.store.load_state_dict({k[len("param/") :]: v for k, v in arrays.items() if k.startswith("param/")})
    state = header["train_state"]
    if not state:
        raise TrainingError("checkpoint carries no training state")
    optimizer.load_state_arrays(arrays, state["adam_t"])
    stream.order = np.array(arrays["train/order"])
    stream.cursor = state["cursor"]
    stream.epoch = state["epoch"]
    data_rng.bit_generator.state = state["data_rng"]
    drop_rng.bit_generator.state = state["drop_rng"]
    return int(state["update"])


def format_log_line(entry: dict) -> str:
    return json.dumps(entry, sort_keys=True)
