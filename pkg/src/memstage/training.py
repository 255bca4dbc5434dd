"""Objective assembly and the optimization loop.

The minimized objective is  anneal_weight * KL(posterior || prior) + task,
where the task term is per-visit mean cross-entropy (supervised) or masked
mean squared reconstruction error (unsupervised), both averaged over the
patients of a batch.  The KL weight follows a linear annealing schedule in
optimizer steps, min(1, step / x).
"""

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import ArgumentError, DataError, TrainingError
from .model import (
    ModelConfig,
    ModelParams,
    backward_sequence,
    forward_sequence,
    sequence_kl_mean,
)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    mode: str = "unsupervised"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 70
    hidden_size: int = 128
    latent_size: int = 128
    memory_slots: int = 16
    memory_width: int = 128
    label_dim: int = 0
    clusters: int = 3
    kl_anneal_steps: int = 700
    seed: int = 0
    score_mode: str = "add"
    prior_mode: str = "learned"
    global_memory: str = "per_patient"
    workers: int = 1

    def __post_init__(self):
        if self.kl_anneal_steps <= 0:
            raise ArgumentError("kl_anneal_steps must be positive")
        if self.clusters < 2:
            raise ArgumentError("clusters must be at least 2")
        if min(self.batch_size, self.epochs, self.hidden_size, self.latent_size,
               self.memory_slots, self.memory_width) <= 0:
            raise ArgumentError("all sizes must be positive")
        if self.global_memory not in ("per_patient", "shared"):
            raise ArgumentError(f"unknown global_memory {self.global_memory!r}")


@dataclass
class OptimizerState:
    """Adam first/second moment accumulators mirroring the parameter shapes."""

    m: dict
    v: dict
    t: int = 0

    @classmethod
    def create(cls, tensors):
        return cls(
            m={p.name: np.zeros_like(p.value) for p in tensors},
            v={p.name: np.zeros_like(p.value) for p in tensors},
            t=0,
        )


@dataclass
class LossBreakdown:
    total: float
    kl_term: float
    task_term: float
    weight: float

    @classmethod
    def compose(cls, kl_term, task_term, weight):
        return cls(total=weight * kl_term + task_term, kl_term=kl_term,
                   task_term=task_term, weight=weight)


@dataclass
class EpochRecord:
    epoch: int
    step: int
    loss: LossBreakdown
    val_loss: float


def anneal_weight(step, x):
    """min(1, step / x): linear ramp of the KL weight over optimizer steps."""
    if x <= 0:
        raise ArgumentError("annealing threshold x must be positive")
    if step < 0:
        raise ArgumentError("step must be non-negative")
    return min(1.0, step / x)


def cross_entropy(probs, labels):
    """Mean over visits of -log p(true label); probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if len(probs) != len(labels) or len(probs) == 0:
        raise ArgumentError(f"{len(probs)} probability rows vs {len(labels)} labels")
    total = 0.0
    for t in range(len(labels)):
        y = int(labels[t])
        if y < 0 or y >= probs.shape[1]:
            raise DataError(f"label {y} out of range [0, {probs.shape[1]}) at visit {t}")
        total += -np.log(max(probs[t, y], PROB_FLOOR))
    return float(total) / len(labels)


def reconstruction_mse(x_hat, x, mask):
    """Mean squared error over observed entries only."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x_hat.shape != x.shape or mask.shape != x.shape:
        raise ArgumentError(f"shape mismatch: {x_hat.shape}, {x.shape}, {mask.shape}")
    n_obs = int(mask.sum())
    if n_obs == 0:
        raise DataError("nothing observed: empty mask")
    diff = (x_hat - x)[mask]
    return float(np.sum(diff * diff)) / n_obs


def adam_step(tensors, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update over all tensors, reading each .grad."""
    state.t += 1
    for p in tensors:
        _kernels.adam_update(
            p.value.reshape(-1), np.ascontiguousarray(p.grad.reshape(-1)),
            state.m[p.name].reshape(-1), state.v[p.name].reshape(-1),
            state.t, lr, beta1, beta2, eps,
        )


def sequence_losses(trace, seq):
    """(kl mean, task term) for a completed trace; values only, no gradients."""
    kl = sequence_kl_mean(trace)
    outputs = np.stack([st.output for st in trace.steps])
    if trace.mode == "supervised":
        task = cross_entropy(outputs, seq.labels)
    else:
        task = reconstruction_mse(outputs, seq.features, seq.mask)
    return kl, task


def _noise_for(seed, epoch, patient_index, shape):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919, epoch, patient_index]))
    return rng.standard_normal(shape)


def _forward_backward(params, seq, eps, kl_weight, upstream):
    trace = forward_sequence(params, seq, eps=eps)
    kl, task = sequence_losses(trace, seq)
    backward_sequence(params, trace, seq, kl_weight, upstream=upstream)
    return kl, task


def validation_loss(params, sequences):
    """Deterministic held-out loss: z = mu (no sampling), KL weight 1."""
    if not sequences:
        return 0.0
    kl_sum = 0.0
    task_sum = 0.0
    for seq in sequences:
        trace = forward_sequence(params, seq)
        kl, task = sequence_losses(trace, seq)
        kl_sum += kl
        task_sum += task
    n = len(sequences)
    return kl_sum / n + task_sum / n


def train(config, train_seqs, val_seqs, log_fn=None):
    """Run the optimization schedule; returns (params, per-epoch records).

    Parameters are a snapshot from the epoch with the best validation loss.
    Mini-batches are reshuffled every epoch; the per-sequence noise draws
    are seeded by (seed, epoch, patient index) so results are bit-identical
    for any worker count.
    """
    if not train_seqs:
        raise ArgumentError("no training sequences")
    first = train_seqs[0]
    n_features = first.features.shape[1]
    n_labels = 0
    if config.mode == "supervised":
        labelled = [s for s in train_seqs + list(val_seqs) if s.labels is not None]
        if len(labelled) != len(train_seqs) + len(val_seqs):
            raise DataError("supervised mode requires labels on every sequence")
        n_labels = int(max(max(s.labels) for s in labelled)) + 1
        n_labels = max(n_labels, 2)
    model_config = ModelConfig(
        n_features=n_features,
        n_hidden=config.hidden_size,
        latent_size=config.latent_size,
        memory_slots=config.memory_slots,
        memory_width=config.memory_width,
        mode=config.mode,
        n_labels=n_labels,
        label_dim=config.label_dim,
        score_mode=config.score_mode,
        prior_mode=config.prior_mode,
    )
    params = ModelParams(model_config, seed=config.seed)
    state = OptimizerState.create(params.tensors())
    step = 0
    records = []
    best_val = None
    best_values = params.copy_values()
    n = len(train_seqs)
    indices = np.arange(n)
    pool = None
    if config.workers > 1:
        pool = concurrent.futures.ThreadPoolExecutor(max_workers=config.workers)
    try:
        for epoch in range(config.epochs):
            shuffle_rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, 104729, epoch])
            )
            order = shuffle_rng.permutation(indices)
            kl_terms = []
            task_terms = []
            for start in range(0, n, config.batch_size):
                batch = order[start:start + config.batch_size]
                weight = anneal_weight(step, config.kl_anneal_steps)
                params.zero_grad()
                upstream = 1.0 / len(batch)
                jobs = []
                for pidx in batch:
                    seq = train_seqs[pidx]
                    eps = _noise_for(config.seed, epoch, int(pidx),
                                     (len(seq.features), config.latent_size))
                    jobs.append((seq, eps))
                if config.global_memory == "shared":
                    # bank carried across the batch in order, reset per batch;
                    # gradients truncate at sequence boundaries
                    results = []
                    bank = None
                    for seq, eps in jobs:
                        trace = forward_sequence(params, seq, eps=eps, bank_in=bank)
                        bank = trace.g_bank_out
                        kl, task = sequence_losses(trace, seq)
                        backward_sequence(params, trace, seq, weight, upstream=upstream)
                        results.append((kl, task))
                elif pool is None:
                    results = [
                        _forward_backward(params, seq, eps, weight, upstream)
                        for seq, eps in jobs
                    ]
                else:
                    # gradient accumulation via += on shared arrays is not
                    # thread-safe; compute traces in parallel, reduce serially
                    futures = [
                        pool.submit(forward_sequence, params, seq, None, None, eps)
                        for seq, eps in jobs
                    ]
                    traces = [f.result() for f in futures]
                    results = []
                    for (seq, eps), trace in zip(jobs, traces):
                        kl, task = sequence_losses(trace, seq)
                        backward_sequence(params, trace, seq, weight, upstream=upstream)
                        results.append((kl, task))
                kl_batch = float(np.mean([r[0] for r in results]))
                task_batch = float(np.mean([r[1] for r in results]))
                breakdown = LossBreakdown.compose(kl_batch, task_batch, weight)
                if not np.isfinite(breakdown.total):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                    )
                adam_step(params.tensors(), state, config.learning_rate)
                step += 1
                kl_terms.append(kl_batch)
                task_terms.append(task_batch)
            epoch_loss = LossBreakdown.compose(
                float(np.mean(kl_terms)), float(np.mean(task_terms)),
                anneal_weight(step, config.kl_anneal_steps),
            )
            val = validation_loss(params, val_seqs)
            record = EpochRecord(epoch=epoch, step=step, loss=epoch_loss, val_loss=val)
            records.append(record)
            if log_fn is not None:
                log_fn(record)
            if best_val is None or val < best_val:
                best_val = val
                best_values = params.copy_values()
    finally:
        if pool is not None:
            pool.shutdown()
    params.set_values(best_values)
    return params, records


def format_epoch_record(record):
    """One line-delimited key=value record per epoch for the training log."""
    loss = record.loss
    return (
        f"epoch={record.epoch} step={record.step} total={loss.total!r} "
        f"kl_term={loss.kl_term!r} task_term={loss.task_term!r} "
        f"anneal_weight={loss.weight!r} val_loss={record.val_loss!r}"
    )
