"""Loss, optimizers, and the training loop with early stopping.

The objective is mean binary cross-entropy over every (window, candidate)
cell.  Optimization is plain minibatch SGD or Adam with global-norm gradient
clipping; model selection tracks window-level Full F1 on the dev split and
the decision threshold is swept on cached dev probabilities after training.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, node, stack_rows
from .corpus import Dialogue, TokenSeq, Vocab, encode_window
from .layers import ParamStore
from .metrics import eval_windows
from .model import CandidateEncodings, EsalModel
from .ontology import Candidate, CandidateSpace


class TrainingAbort(RuntimeError):
    """Training hit a numeric failure (NaN/Inf loss)."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    optimizer: str = "adam"  # or "sgd"
    batch_size: int = 4
    max_epochs: int = 200
    patience: int = 25
    seed: int = 0
    clip_norm: float = 5.0
    threshold_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    deterministic: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, patience must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if not self.threshold_grid or not all(0 < t < 1 for t in self.threshold_grid):
            raise ValueError("threshold_grid values must lie in (0,1)")


@dataclass(frozen=True)
class Example:
    """One training unit: a window, its visible context, and its targets."""

    dialogue_id: str
    window_index: int
    seqs: tuple[TokenSeq, ...]  # context (oldest first) + current window
    target: np.ndarray  # [J] uint8
    gold: frozenset[Candidate]


def build_examples(
    dialogues: list[Dialogue],
    vocab: Vocab,
    space: CandidateSpace,
    max_seq_len: int,
    context_windows: int,
) -> list[Example]:
    out: list[Example] = []
    for d in dialogues:
        encoded = [encode_window(w, d, vocab, max_seq_len) for w in d.windows]
        for wi, w in enumerate(d.windows):
            lo = max(0, wi - context_windows)
            target = np.zeros(len(space), dtype=np.uint8)
            for cand in w.gold:
                target[space.index_of(cand)] = 1
            out.append(
                Example(
                    dialogue_id=d.id,
                    window_index=w.window_index,
                    seqs=tuple(encoded[lo : wi + 1]),
                    target=target,
                    gold=w.gold,
                )
            )
    return out


# ---------------------------------------------------------------------------
# Loss


def bce_loss(probs: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy taking probabilities in (0,1).

    Log arguments are floored at 1e-12; prefer :func:`bce_with_logits` for
    training, it is the numerically stable route.
    """
    p = probs.data
    if p.shape != target.shape:
        raise ValueError(f"bce_loss: shapes {p.shape} and {target.shape} differ")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("bce_loss: probabilities must lie strictly in (0,1)")
    y = target.astype(p.dtype)
    eps = 1e-12
    n = p.size
    data = -(y * np.log(np.maximum(p, eps)) + (1 - y) * np.log(np.maximum(1 - p, eps))).mean()

    def backward(g):
        return (float(g) * (p - y) / np.maximum(p * (1 - p), eps) / n,)

    return node(np.asarray(data, dtype=p.dtype), (probs,), backward)


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy straight from logits (fused, stable)."""
    x = logits.data
    if x.shape != target.shape:
        raise ValueError(f"bce_with_logits: shapes {x.shape} and {target.shape} differ")
    y = target.astype(x.dtype)
    n = x.size
    # max(x,0) - x*y + log(1 + exp(-|x|))
    data = (np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))).mean()

    def backward(g):
        sig = np.empty_like(x)
        pos = x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        sig[~pos] = ex / (1.0 + ex)
        return (float(g) * (sig - y) / n,)

    return node(np.asarray(data, dtype=x.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# Optimizers


def clip_grads(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for t in params.tensors():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for t in params.tensors():
            if t.grad is not None:
                t.grad *= scale
    return norm


def sgd_step(params: ParamStore, state: dict, lr: float) -> dict:
    for t in params.tensors():
        if t.grad is not None:
            t.data -= (lr * t.grad).astype(t.data.dtype)
    return state


def adam_step(
    params: ParamStore,
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    if not state:
        state = {
            "t": 0,
            "m": {n: np.zeros_like(t.data) for n, t in params.items()},
            "v": {n: np.zeros_like(t.data) for n, t in params.items()},
        }
    state["t"] += 1
    t_step = state["t"]
    for name, tensor in params.items():
        if tensor.grad is None:
            continue
        g = tensor.grad
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1**t_step)
        v_hat = v / (1 - beta2**t_step)
        tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(tensor.data.dtype)
    return state


# ---------------------------------------------------------------------------
# Evaluation helpers


def predict_examples(
    model: EsalModel,
    examples: list[Example],
    threshold: float,
    cand: CandidateEncodings | None = None,
) -> dict[tuple[str, int], frozenset]:
    if cand is None:
        cand = model.encode_candidates()
    out = {}
    for ex in examples:
        wf = model.forward(list(ex.seqs), cand)
        out[(ex.dialogue_id, ex.window_index)] = model.predict(wf, threshold)
    return out


def _collect_probs(
    model: EsalModel, examples: list[Example], cand: CandidateEncodings
) -> np.ndarray:
    rows = [model.forward(list(ex.seqs), cand).probs.value() for ex in examples]
    return np.stack(rows, axis=0) if rows else np.zeros((0, len(model.space)))


def _f1_at(
    model: EsalModel,
    examples: list[Example],
    probs: np.ndarray,
    threshold: float,
) -> dict[str, float]:
    pred = {}
    gold = {}
    for i, ex in enumerate(examples):
        key = (ex.dialogue_id, ex.window_index)
        pred[key] = frozenset(
            model.space.candidate_at(j) for j in np.flatnonzero(probs[i] >= threshold)
        )
        gold[key] = ex.gold
    counts = eval_windows(pred, gold)
    return {g: c.f1 for g, c in counts.items()}


def sweep_threshold(
    model: EsalModel, examples: list[Example], grid: tuple[float, ...]
) -> tuple[float, float]:
    """Pick the grid threshold maximizing window Full F1 (first max wins)."""
    cand = model.encode_candidates()
    probs = _collect_probs(model, examples, cand)
    best_tau, best_f1 = grid[0], -1.0
    for tau in grid:
        f1 = _f1_at(model, examples, probs, tau)["full"]
        if f1 > best_f1:
            best_tau, best_f1 = tau, f1
    return best_tau, best_f1


# ---------------------------------------------------------------------------
# The loop


@dataclass
class TrainResult:
    model: EsalModel
    threshold: float
    log: list[dict] = field(default_factory=list)
    best_dev_f1: float = 0.0
    epochs_run: int = 0


def train(
    model: EsalModel,
    train_dialogues: list[Dialogue],
    dev_dialogues: list[Dialogue],
    config: TrainConfig,
) -> TrainResult:
    """Minibatch training with dev-based early stopping.

    The best-dev parameter snapshot is restored before the threshold sweep,
    so warm starts can only match or improve the incoming model's dev score.
    """
    vocab, space = model.vocab, model.space
    mcfg = model.config
    train_ex = build_examples(
        train_dialogues, vocab, space, mcfg.max_seq_len, mcfg.context_windows
    )
    dev_ex = build_examples(
        dev_dialogues, vocab, space, mcfg.max_seq_len, mcfg.context_windows
    )
    if not train_ex:
        raise ValueError("training split has no windows")
    if not dev_ex:
        raise ValueError("dev split has no windows")

    rng = np.random.default_rng(config.seed)
    opt_state: dict = {}
    log: list[dict] = []

    def dev_f1s() -> dict[str, float]:
        """Dev F1s at the best grid threshold for the current parameters.

        Sweeping the grid here keeps model selection aligned with the final
        deployment threshold: early in training every probability sits below
        0.5, and a fixed cutoff would score flat zero while the ranking is
        in fact improving.
        """
        cand = model.encode_candidates()
        probs = _collect_probs(model, dev_ex, cand)
        best_f1s = {"full": -1.0}
        for tau in config.threshold_grid:
            f1s = _f1_at(model, dev_ex, probs, tau)
            if f1s["full"] > best_f1s["full"]:
                best_f1s = f1s
        return best_f1s

    best = dev_f1s()["full"]
    best_params = model.params.export_values()
    stale = 0
    epochs_run = 0

    for epoch in range(1, config.max_epochs + 1):
        tic = time.monotonic()
        order = rng.permutation(len(train_ex))
        total_loss = 0.0
        n_batches = 0
        for b0 in range(0, len(order), config.batch_size):
            batch = [train_ex[int(i)] for i in order[b0 : b0 + config.batch_size]]
            model.params.zero_grads()
            cand = model.encode_candidates()
            logit_rows = [model.forward(list(ex.seqs), cand).logits for ex in batch]
            targets = np.stack([ex.target for ex in batch], axis=0)
            loss = bce_with_logits(stack_rows(logit_rows), targets)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                loss.backward()
                gmax = max(
                    (float(np.max(np.abs(t.grad))) for t in model.params.tensors()
                     if t.grad is not None),
                    default=float("nan"),
                )
                raise TrainingAbort(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: "
                    f"loss={loss_val}, max|grad|={gmax}"
                )
            loss.backward()
            clip_grads(model.params, config.clip_norm)
            if config.optimizer == "adam":
                opt_state = adam_step(model.params, opt_state, config.learning_rate)
            else:
                opt_state = sgd_step(model.params, opt_state, config.learning_rate)
            total_loss += loss_val * len(batch)
            n_batches += 1

        train_loss = total_loss / len(train_ex)
        f1s = dev_f1s()
        seconds = 0.0 if config.deterministic else time.monotonic() - tic
        log.append(
            {
                "epoch": epoch,
                "train_loss": round(train_loss, 8),
                "dev_f1_full": round(f1s["full"], 6),
                "dev_f1_item": round(f1s["item"], 6),
                "dev_f1_category": round(f1s["category"], 6),
                "lr": config.learning_rate,
                "seconds": round(seconds, 3),
            }
        )
        epochs_run = epoch
        if f1s["full"] > best:
            best = f1s["full"]
            best_params = model.params.export_values()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.params.load_values(best_params)
    tau, tau_f1 = sweep_threshold(model, dev_ex, config.threshold_grid)
    return TrainResult(
        model=model,
        threshold=tau,
        log=log,
        best_dev_f1=max(best, tau_f1),
        epochs_run=epochs_run,
    )
