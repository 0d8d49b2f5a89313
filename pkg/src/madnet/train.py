"""Adam, learning-rate schedules and the training loop."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, DatasetManifest
from .losses import LossConfig, total_loss
from .model import make_pyramid
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, named_params, **kw):
        state = cls(**kw)
        for name, p in named_params:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def global_grad_norm(named_params):
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def adam_step(named_params, state, lr, clip_norm=None):
    """One bias-corrected Adam update; a missing gradient counts as zero."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    named_params = list(named_params)
    for name, p in named_params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    factor = 1.0
    if clip_norm is not None:
        norm = global_grad_norm(named_params)
        if norm > clip_norm:
            factor = clip_norm / norm
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in named_params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad * p.dtype.type(factor)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - lr * update).astype(p.dtype)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


@dataclass
class Schedule:
    """``step_half``: halve every ``step_every`` iterations.
    ``cosine``: anneal from ``base_lr`` to ``min_lr`` over ``total`` iterations."""

    kind: str = "cosine"
    base_lr: float = 2e-4
    step_every: int = 100_000
    min_lr: float = 1e-6
    total: int = 600_000

    def __post_init__(self):
        if self.kind not in ("step_half", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.base_lr > self.min_lr >= 0:
            raise ValueError("need base_lr > min_lr >= 0")
        if self.step_every < 1 or self.total < 1:
            raise ValueError("step_every and total must be positive")


def lr_at(sched, iteration):
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if sched.kind == "step_half":
        return sched.base_lr * 2.0 ** -(iteration // sched.step_every)
    if iteration >= sched.total:
        return sched.min_lr
    cos = (1.0 + math.cos(math.pi * iteration / sched.total)) / 2.0
    return sched.min_lr + (sched.base_lr - sched.min_lr) * cos


SYNTHETIC_FULL = Schedule("step_half", base_lr=1e-4, step_every=100_000, min_lr=0.0, total=600_000)
REAL_FULL = Schedule("cosine", base_lr=2e-4, min_lr=1e-6, total=600_000)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

LOG_FIELDS = ("iter", "lr", "loss_total", "loss_charbonnier", "loss_freq")


class TrainingLog:
    def __init__(self):
        self.rows = []

    def __len__(self):
        return len(self.rows)

    def append(self, **row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in LOG_FIELDS})


class Trainer:
    """Owns the optimiser state and iteration counter for one model."""

    def __init__(self, model, dataset, loss_cfg=None, sched=None, batch=4, clip_norm=None, adam=None):
        self.model = model
        self.dataset = dataset
        self.loss_cfg = loss_cfg or LossConfig(scale_weights=[1.0] * model.cfg.stages)
        self.sched = sched or Schedule()
        self.batch = batch
        self.clip_norm = clip_norm
        self.params = list(model.named_parameters())
        self.adam = adam or AdamState.for_params(self.params)
        self.iteration = 0
        if dataset is not None:
            dataset.manifest.check_levels(model.cfg.stages)

    def step(self):
        it = self.iteration
        noisy, clean = self.dataset.batch(it, self.batch)
        dtype = self.model.dtype
        levels = self.model.cfg.stages
        inputs = make_pyramid(Tensor(noisy.astype(dtype)), levels)
        targets = make_pyramid(Tensor(clean.astype(dtype)), levels)
        out = self.model.forward(inputs)
        parts = total_loss(out.restored, targets, self.loss_cfg, breakdown=True)
        value = parts.total.item()
        if not math.isfinite(value):
            raise TrainingError(
                f"non-finite loss at iteration {it}: noisy[min={noisy.min():.4g}, max={noisy.max():.4g}, "
                f"mean={noisy.mean():.4g}] clean[min={clean.min():.4g}, max={clean.max():.4g}, "
                f"mean={clean.mean():.4g}] charbonnier={parts.charbonnier.item():.4g}"
            )
        parts.total.backward()
        lr = lr_at(self.sched, it)
        adam_step(self.params, self.adam, lr, self.clip_norm)
        self.model.zero_grad()
        self.iteration += 1
        return dict(
            iter=it,
            lr=lr,
            loss_total=value,
            loss_charbonnier=parts.charbonnier.item(),
            loss_freq=0.0 if parts.frequency is None else parts.frequency.item(),
        )

    def run(self, iters, report_every=50, log_=None, on_step=None):
        log_ = log_ if log_ is not None else TrainingLog()
        for _ in range(iters):
            row = self.step()
            log_.append(**row)
            if report_every and (row["iter"] + 1) % report_every == 0:
                log.info("iter %d lr %.3g loss %.5f", row["iter"] + 1, row["lr"], row["loss_total"])
            if on_step is not None:
                on_step(self)
        return log_

    def state(self):
        return dict(
            loss=asdict(self.loss_cfg),
            schedule=asdict(self.sched),
            batch=self.batch,
            clip_norm=self.clip_norm,
            manifest=None if self.dataset is None else self.dataset.manifest.to_kv(),
        )


def train(model, dataset, loss_cfg, sched, iters, batch=4, report_every=50, clip_norm=None):
    """Run ``iters`` optimisation steps from scratch; returns the ``TrainingLog``.

    ``dataset`` may be a ``Dataset`` or a ``DatasetManifest``.
    """
    if isinstance(dataset, DatasetManifest):
        dataset = Dataset(dataset)
    trainer = Trainer(model, dataset, loss_cfg, sched, batch, clip_norm)
    return trainer.run(iters, report_every)
