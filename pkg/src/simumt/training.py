"""Prefix-to-prefix training for the wait-k model.

A read path assigns each target step t the number of visible source
tokens z_t = min(k + t - 1, |x|).  The single-path loss scores the gold
target under one such path; the multi-path objective samples k uniformly
from {1..|x|} per sentence so one model serves every lagging at test
time.  The source is encoded once per sentence regardless of the sampled
k: only the decoder's cross-attention visibility depends on it.

Losses are label-smoothed negative log-likelihood averaged over the
target tokens of a sentence.  Optimization is Adam with an inverse-
square-root learning-rate schedule and linear warmup.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .corpus import SentencePair
from .vocab import BOS

INFINITE_K = math.inf


def wait_k_z(k: float, t: int, src_len: int) -> int:
    """Visible source tokens before emitting target token t (1-based)."""
    if not (k == INFINITE_K or (isinstance(k, (int, np.integer)) and k >= 1)):
        raise ValueError(f"k must be a positive integer or infinite, got {k!r}")
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if src_len < 1:
        raise ValueError(f"src_len must be >= 1, got {src_len}")
    if k == INFINITE_K:
        return src_len
    return min(k + t - 1, src_len)


@dataclass(frozen=True)
class WaitKPath:
    """The read path induced by a wait-k policy on a given source length."""

    k: float
    src_len: int

    def __post_init__(self) -> None:
        wait_k_z(self.k, 1, self.src_len)  # validates k and src_len

    def z(self, t: int) -> int:
        return wait_k_z(self.k, t, self.src_len)

    def zs(self, tgt_len: int) -> np.ndarray:
        return np.array([self.z(t) for t in range(1, tgt_len + 1)], dtype=np.int64)


@dataclass(frozen=True)
class LossConfig:
    """mode "single_k" trains one lagging; "multi_path" samples k per
    sentence.  ``k`` is required (and only used) in single_k mode."""

    mode: str = "multi_path"
    k: float | None = None
    smoothing_eps: float = 0.1

    def __post_init__(self) -> None:
        if self.mode not in ("single_k", "multi_path"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.mode == "single_k":
            if self.k is None:
                raise ValueError("single_k mode needs k")
            wait_k_z(self.k, 1, 1)
        if not 0.0 <= self.smoothing_eps < 1.0:
            raise ValueError("smoothing_eps must be in [0, 1)")


def label_smoothed_nll(log_probs: np.ndarray, gold: np.ndarray, eps: float):
    """Mean label-smoothed negative log-likelihood over target positions.

    Per position: -[(1-eps) log p(gold) + eps/(V-1) sum_{v != gold} log p(v)].
    Returns (loss, dlogp) with dlogp shaped like log_probs, already scaled
    for the mean over positions.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    if log_probs.ndim != 2 or len(gold) != log_probs.shape[0]:
        raise ValueError("log_probs must be (m, V) with one gold id per row")
    m, v = log_probs.shape
    if v < 2:
        raise ValueError("need at least two classes to smooth over")
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must be in [0, 1)")
    if np.any(gold < 0) or np.any(gold >= v):
        raise ValueError("gold id out of range")

    rows = np.arange(m)
    gold_lp = log_probs[rows, gold]
    total_lp = log_probs.sum(axis=-1)
    off = eps / (v - 1)
    loss = -((1.0 - eps) * gold_lp + off * (total_lp - gold_lp)).mean()

    dlogp = np.full_like(log_probs, -off / m)
    dlogp[rows, gold] = -(1.0 - eps) / m
    return float(loss), dlogp


def path_loss(params: M.Parameters, pair: SentencePair, k: float,
              eps: float = 0.1, want_grads: bool = False):
    """Label-smoothed loss of one sentence under the wait-k read path.

    Returns loss, or (loss, grads) when want_grads is set.
    """
    y = np.asarray(pair.target, dtype=np.int64)
    path = WaitKPath(k, len(pair.source)).zs(len(y))
    y_in = np.concatenate([[BOS], y[:-1]])
    logp, cache = M.forward_full(params, pair.source, y_in, path)
    loss, dlogp = label_smoothed_nll(logp, y, eps)
    if not want_grads:
        return loss
    return loss, M.backward_full(params, cache, dlogp)


def multi_path_loss(params: M.Parameters, pair: SentencePair,
                    rng: np.random.Generator, eps: float = 0.1,
                    want_grads: bool = False):
    """Single-sample estimate of the uniform-over-k objective.

    Draws k uniformly from {1..|x|}; returns (loss, k) or (loss, grads, k).
    """
    k = int(rng.integers(1, len(pair.source) + 1))
    out = path_loss(params, pair, k, eps, want_grads)
    if want_grads:
        return out[0], out[1], k
    return out, k


def expected_multi_path_loss(params: M.Parameters, pair: SentencePair,
                             eps: float = 0.1) -> float:
    """Exact uniform-over-k objective by enumerating k = 1..|x|."""
    n = len(pair.source)
    return sum(path_loss(params, pair, k, eps) for k in range(1, n + 1)) / n


def lr_at(step: int, base_lr: float, warmup_steps: int) -> float:
    """Inverse-square-root schedule: base_lr * min(step^-1/2, step * warmup^-3/2)."""
    if step < 1:
        raise ValueError("step counts from 1")
    if warmup_steps < 1:
        raise ValueError("warmup_steps must be >= 1")
    return base_lr * min(step ** -0.5, step * warmup_steps ** -1.5)


@dataclass
class OptimizerState:
    """Adam moments plus schedule constants; ``step`` counts applied updates."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    base_lr: float = 0.05
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8


def init_optimizer(params: M.Parameters, base_lr: float = 0.05,
                   warmup_steps: int = 400) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(t) for k, t in params.tensors.items()},
        v={k: np.zeros_like(t) for k, t in params.tensors.items()},
        base_lr=base_lr,
        warmup_steps=warmup_steps,
    )


def adam_update(params: M.Parameters, grads: dict[str, np.ndarray],
                state: OptimizerState):
    """Apply one Adam step with bias correction at the scheduled rate.

    Mutates ``params`` and ``state`` in place and returns them.  Rejects
    non-finite gradients, naming the offending tensor.
    """
    if set(grads) != set(params.tensors):
        raise ValueError("gradient keys do not match parameter keys")
    state.step += 1
    lr = lr_at(state.step, state.base_lr, state.warmup_steps)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for tensor {name}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params.tensors[name] -= lr * m_hat / (np.sqrt(v_hat) + state.adam_eps)
    return params, state


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    n_probes: int
    tol: float
    worst: tuple[str, tuple[int, ...], float, float]  # name, index, analytic, numeric

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(params: M.Parameters, loss_fn, n_probes: int, tol: float,
               h: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params) -> (loss, grads)``.  Probes ``n_probes`` coordinates
    sampled without replacement across all tensors.  Relative error is
    |a - n| / max(|a|, |n|), taken as 0 when both magnitudes are below h^2
    (the difference is then below finite-difference noise).
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    _, grads = loss_fn(params)
    sizes = [(name, int(t.size)) for name, t in params.tensors.items()]
    total = sum(s for _, s in sizes)
    rng = np.random.default_rng(seed)
    flat_picks = rng.choice(total, size=min(n_probes, total), replace=False)

    def locate(flat: int):
        for name, size in sizes:
            if flat < size:
                return name, np.unravel_index(flat, params.tensors[name].shape)
            flat -= size
        raise AssertionError

    worst = ("", (), 0.0, 0.0)
    max_err = 0.0
    for flat in flat_picks:
        name, idx = locate(int(flat))
        arr = params.tensors[name]
        keep = arr[idx]
        arr[idx] = keep + h
        lo_plus, _ = loss_fn(params)
        arr[idx] = keep - h
        lo_minus, _ = loss_fn(params)
        arr[idx] = keep
        numeric = (lo_plus - lo_minus) / (2.0 * h)
        analytic = float(grads[name][idx])
        denom = max(abs(analytic), abs(numeric))
        err = 0.0 if denom < h * h else abs(analytic - numeric) / denom
        if err >= max_err:
            max_err = err
            worst = (name, tuple(int(i) for i in idx), analytic, numeric)
    return GradCheckReport(max_rel_err=float(max_err), n_probes=len(flat_picks),
                           tol=tol, worst=worst)


class TrainingDiverged(RuntimeError):
    def __init__(self, batch_index: int, epoch: int):
        super().__init__(f"non-finite loss in batch {batch_index} of epoch {epoch}")
        self.batch_index = batch_index
        self.epoch = epoch


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float
    lr: float


@dataclass
class TrainResult:
    params: M.Parameters  # weights from the best-dev epoch
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


def _sentence_loss_grads(params, pair, cfg: LossConfig, rng):
    if cfg.mode == "single_k":
        return path_loss(params, pair, cfg.k, cfg.smoothing_eps, want_grads=True)
    loss, grads, _ = multi_path_loss(params, pair, rng, cfg.smoothing_eps,
                                     want_grads=True)
    return loss, grads


def dev_loss(params: M.Parameters, pairs: list[SentencePair], cfg: LossConfig) -> float:
    """Deterministic held-out loss: the exact per-sentence objective
    (enumerated over k in multi_path mode), token-weighted."""
    total = 0.0
    tokens = 0
    for p in pairs:
        if cfg.mode == "single_k":
            loss = path_loss(params, p, cfg.k, cfg.smoothing_eps)
        else:
            loss = expected_multi_path_loss(params, p, cfg.smoothing_eps)
        total += loss * len(p.target)
        tokens += len(p.target)
    return total / tokens


def train(params: M.Parameters, train_pairs: list[SentencePair],
          dev_pairs: list[SentencePair], loss_config: LossConfig,
          epochs: int, seed: int, batch_size: int = 32,
          base_lr: float = 0.05, warmup_steps: int = 400,
          log=None) -> TrainResult:
    """Mini-batch training; returns the checkpoint with the best dev loss.

    The batch gradient is the mean of per-sentence gradients.  With zero
    epochs the initial parameters come back unchanged and the history is
    empty.  A non-finite training loss aborts with TrainingDiverged.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not train_pairs or not dev_pairs:
        raise ValueError("empty train or dev set")

    rng = np.random.default_rng(seed)
    opt = init_optimizer(params, base_lr=base_lr, warmup_steps=warmup_steps)
    result = TrainResult(params=params.copy())
    best = math.inf
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_pairs))
        loss_sum = 0.0
        token_sum = 0
        for bi, start in enumerate(range(0, len(order), batch_size)):
            batch = [train_pairs[i] for i in order[start : start + batch_size]]
            acc = M.zero_grads(params)
            batch_loss = 0.0
            for pair in batch:
                loss, grads = _sentence_loss_grads(params, pair, loss_config, rng)
                batch_loss += loss
                loss_sum += loss * len(pair.target)
                token_sum += len(pair.target)
                for name, g in grads.items():
                    acc[name] += g
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(bi, epoch)
            for name in acc:
                acc[name] /= len(batch)
            adam_update(params, acc, opt)
        d_loss = dev_loss(params, dev_pairs, loss_config)
        stats = EpochStats(epoch=epoch, train_loss=loss_sum / token_sum,
                           dev_loss=d_loss, lr=lr_at(opt.step, base_lr, warmup_steps))
        result.history.append(stats)
        if log is not None:
            log(stats)
        if d_loss < best:
            best = d_loss
            result.params = params.copy()
            result.best_epoch = epoch
    return result


def save_training_log(history: list[EpochStats], path, header_comment: str | None = None) -> None:
    """CSV log: epoch,train_loss,dev_loss,lr (one row per epoch)."""
    with open(path, "w", encoding="utf-8") as f:
        if header_comment:
            f.write(header_comment.rstrip("\n") + "\n")
        f.write("epoch,train_loss,dev_loss,lr\n")
        for s in history:
            f.write(f"{s.epoch},{s.train_loss!r},{s.dev_loss!r},{s.lr!r}\n")
