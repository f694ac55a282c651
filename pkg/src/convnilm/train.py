"""Binary cross-entropy, the NAdam optimizer and the mini-batch training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError, StructuralError
from .model import Model
from .nncore import OpMode

log = logging.getLogger(__name__)


def bce_loss(posterior: np.ndarray, target: np.ndarray, eps: float = 1e-7):
    """Summed binary cross-entropy and its gradient w.r.t. ``posterior``.

    Posteriors are clamped to ``[eps, 1 - eps]`` first; the gradient is that of
    the clamped expression (zero where the clamp is active). Returns
    ``(loss_sum, grad, loss_per_sample)``.
    """
    if posterior.shape != target.shape:
        raise StructuralError(f"posterior {posterior.shape} and target {target.shape} differ")
    g = np.asarray(posterior, dtype=np.float64)
    w = np.asarray(target, dtype=np.float64)
    gc = np.clip(g, eps, 1 - eps)
    loss = -(w * np.log(gc) + (1 - w) * np.log1p(-gc)).sum()
    grad = (gc - w) / (gc * (1 - gc))
    grad[(g < eps) | (g > 1 - eps)] = 0.0
    return float(loss), grad.astype(posterior.dtype, copy=False), float(loss) / g.size


class NAdam:
    """Adam with Nesterov momentum and the momentum-decay schedule

    ``mu_t = beta1 * (1 - 0.5 * 0.96 ** (t * schedule_decay))``.

    Moments use ``beta1``/``beta2``; the Nesterov look-ahead mixes the bias
    corrected gradient and first moment with ``mu_t`` and ``mu_{t+1}``. With
    ``nesterov=False`` this is plain Adam.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, schedule_decay=0.004, nesterov=True):
        if lr < 0 or eps <= 0:
            raise ConfigError("learning rate must be >= 0 and eps > 0")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.schedule_decay = schedule_decay
        self.nesterov = nesterov
        self.t = 0
        self.mu_product = 1.0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _mu(self, t: int) -> float:
        return self.beta1 * (1.0 - 0.5 * 0.96 ** (t * self.schedule_decay))

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Apply one update in place. Aborts before touching anything on a non-finite gradient."""
        for k, g in grads.items():
            if params[k].shape != g.shape:
                raise StructuralError(f"gradient for {k} has shape {g.shape}, parameter {params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {k} at step {self.t + 1}")

        t = self.t + 1
        b1, b2 = self.beta1, self.beta2
        bc2 = 1.0 - b2**t
        if self.nesterov:
            mu_t, mu_next = self._mu(t), self._mu(t + 1)
            prod_t = self.mu_product * mu_t
            prod_next = prod_t * mu_next
        else:
            bc1 = 1.0 - b1**t

        for k, g in grads.items():
            p = params[k]
            g = g.astype(np.float64)
            m = self.m.get(k)
            v = self.v.get(k)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            v_hat = v / bc2
            if self.nesterov:
                m_bar = (1 - mu_t) * g / (1 - prod_t) + mu_next * m / (1 - prod_next)
            else:
                m_bar = m / bc1
            p -= (self.lr * m_bar / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)

        self.t = t
        if self.nesterov:
            self.mu_product = prod_t

    def hyper_state(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "schedule_decay": self.schedule_decay,
            "nesterov": self.nesterov,
            "t": self.t,
            "mu_product": self.mu_product,
        }


@dataclass
class TrainRunConfig:
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    opt_eps: float = 1e-8
    loss_eps: float = 1e-7
    patience: int = 5
    val_every: int = 1
    max_seconds: float | None = None

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 < self.loss_eps <= 1e-3:
            raise ConfigError("loss_eps must lie in (0, 1e-3]")
        if self.val_every < 1:
            raise ConfigError("val_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    wall_time: float


@dataclass
class TrainResult:
    model: Model  # best-validation parameters
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    optimizer: NAdam | None = None
    aborted: str | None = None


def evaluate_loss(model: Model, inputs: np.ndarray, targets: np.ndarray, batch_size: int, eps: float) -> float:
    """Mean per-sample BCE in Infer mode."""
    total, count = 0.0, 0
    for i in range(0, len(inputs), batch_size):
        post = model.forward(inputs[i : i + batch_size], OpMode.INFER)
        t = targets[i : i + batch_size, None, :]
        loss, _, _ = bce_loss(post, t, eps)
        total += loss
        count += t.size
    return total / count


def train_loop(model: Model, train_set, val_set, cfg: TrainRunConfig) -> TrainResult:
    """Seeded mini-batch training with early stopping on validation loss.

    ``train_set`` and ``val_set`` expose ``inputs`` (N, K) and ``targets``
    (N, K) arrays (see :class:`convnilm.dataio.SegmentSet`); ``val_set`` may be
    None, in which case the training loss drives model selection.
    """
    cfg.validate()
    x_all, y_all = np.asarray(train_set.inputs), np.asarray(train_set.targets)
    if len(x_all) == 0:
        raise DataError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    noise_rng = np.random.default_rng([cfg.seed, 1])
    opt = NAdam(cfg.lr, cfg.beta1, cfg.beta2, cfg.opt_eps)
    trainable = model.trainable()

    result = TrainResult(model=model.copy(), optimizer=opt)
    best = math.inf
    since_best = 0
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x_all))
        total, count = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            post = model.forward(x_all[idx], OpMode.TRAIN, noise_rng)
            loss, grad, _ = bce_loss(post, y_all[idx, None, :], cfg.loss_eps)
            if not math.isfinite(loss):
                result.aborted = f"non-finite loss at epoch {epoch}"
                log.error(result.aborted)
                return result
            grads = model.backward(grad)
            try:
                opt.step(model.params, {k: grads[k] for k in trainable})
            except NumericError as exc:
                result.aborted = str(exc)
                log.error(result.aborted)
                return result
            total += loss
            count += grad.size
        model.clear_cache()
        train_loss = total / count

        val_loss = None
        if val_set is not None and len(val_set.inputs) and epoch % cfg.val_every == 0:
            val_loss = evaluate_loss(model, np.asarray(val_set.inputs), np.asarray(val_set.targets),
                                     cfg.batch_size, cfg.loss_eps)
        elapsed = time.perf_counter() - start
        result.history.append(EpochRecord(epoch, train_loss, val_loss, elapsed))
        log.info("epoch %d train %.5f val %s (%.1fs)", epoch, train_loss,
                 "-" if val_loss is None else f"{val_loss:.5f}", elapsed)

        score = val_loss if val_set is not None else train_loss
        if score is not None:
            if score < best:
                best, since_best = score, 0
                result.model = model.copy()
                result.best_epoch = epoch
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                    break
        if cfg.max_seconds is not None and elapsed > cfg.max_seconds:
            log.info("time budget reached at epoch %d", epoch)
            break
    return result


def format_history(history: list[EpochRecord]) -> str:
    """Tab-separated log: epoch, train_loss, val_loss, wall_time."""
    lines = ["epoch\ttrain_loss\tval_loss\twall_time"]
    for r in history:
        val = "" if r.val_loss is None else f"{r.val_loss:.8g}"
        lines.append(f"{r.epoch}\t{r.train_loss:.8g}\t{val}\t{r.wall_time:.3f}")
    return "\n".join(lines) + "\n"
