"""Pretraining strategies: first-order meta-learning over per-subject
episodes, and pooled-data transfer learning.

Both strategies share the loss-function protocol

    loss_fn(params, batch, rng) -> scalar Tensor

where ``batch`` is an (inputs, labels) pair.  The default loss runs the
classifier in training mode with cross-entropy; tests substitute analytic
losses to check the update algebra directly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .dataset import Episode, SubjectDataset, sample_episode
from .errors import InsufficientDataError
from .evaluate import accuracy_of_params
from .model import ClassifierSpec, build_classifier, forward_logits
from .nnops import softmax_cross_entropy
from .optim import Adam, sgd_step
from .params import ParamSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float
    meta_lr: float
    subjects_per_batch: int = 4
    adapt_steps: int = 10
    k_support: int = 10
    k_query: int = 11
    max_meta_iterations: int = 2000
    eval_interval: int = 10
    validation_patience: int = 20
    validation_steps: int = 10   # fine-tune length of the validation protocol

    def __post_init__(self):
        if self.inner_lr <= 0 or self.meta_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.subjects_per_batch < 1 or self.adapt_steps < 1:
            raise ValueError("subjects_per_batch and adapt_steps must be >= 1")


@dataclass(frozen=True)
class TransferConfig:
    lr: float = 0.001
    batch_size: int = 16
    samples_per_class_per_subject: int = 21
    max_epochs: int = 200
    validation_patience: int = 20

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")


# best pretraining values per activity (within-activity adaptation setup)
_META_BY_ACTIVITY = {
    1: dict(inner_lr=0.01, meta_lr=0.001, adapt_steps=10),
    2: dict(inner_lr=0.01, meta_lr=0.01, adapt_steps=10),
    3: dict(inner_lr=0.01, meta_lr=0.01, adapt_steps=5),
    4: dict(inner_lr=0.001, meta_lr=0.01, adapt_steps=5),
}
_TRANSFER_BATCH_BY_ACTIVITY = {1: 32, 2: 16, 3: 32, 4: 16}


def maml_defaults(activity: int, **overrides) -> MetaConfig:
    base = dict(_META_BY_ACTIVITY[activity])
    base.update(overrides)
    return MetaConfig(**base)


def transfer_defaults(activity: int, **overrides) -> TransferConfig:
    base = dict(lr=0.001, batch_size=_TRANSFER_BATCH_BY_ACTIVITY[activity])
    base.update(overrides)
    return TransferConfig(**base)


def classifier_loss(params: ParamSet, batch, rng=None):
    x, y = batch
    return softmax_cross_entropy(forward_logits(params, x, training=True, rng=rng), y)


# ----------------------------------------------------------------------
# inner loop / meta step

def inner_adapt(params: ParamSet, support, alpha: float, steps: int,
                rng: np.random.Generator | None = None,
                loss_fn=classifier_loss) -> ParamSet:
    """Full-batch gradient descent on the support set, on a deep copy.

    The incoming ``params`` are never mutated.
    """
    x, _ = support
    if len(x) == 0:
        raise InsufficientDataError("empty support set")
    adapted = params.clone()
    for _ in range(steps):
        adapted.zero_grad()
        loss = loss_fn(adapted, support, rng)
        loss.backward()
        sgd_step(adapted, alpha)
    return adapted


def fomaml_meta_step(params: ParamSet, episodes: list[Episode], inner_lr: float,
                     adapt_steps: int, meta_optimizer, rng=None,
                     loss_fn=classifier_loss) -> float:
    """One first-order meta-update.

    Per episode: adapt a copy on the support set, take the query-set gradient
    at the adapted point.  Those gradients are summed in ascending subject-id
    order, divided by the episode count, written into ``params.grad`` and
    applied through ``meta_optimizer``.  Returns the mean query loss.
    """
    if not episodes:
        raise InsufficientDataError("meta step needs at least one episode")
    if meta_optimizer.params is not params:
        raise ValueError("meta_optimizer must be bound to the given params")
    ordered = sorted(episodes, key=lambda ep: ep.subject_id)
    grad_sum = {name: np.zeros_like(t.data) for name, t in params.items()}
    total_loss = 0.0
    for episode in ordered:
        adapted = inner_adapt(params, episode.support, inner_lr, adapt_steps,
                              rng=rng, loss_fn=loss_fn)
        adapted.zero_grad()
        query_loss = loss_fn(adapted, episode.query, rng)
        query_loss.backward()
        total_loss += query_loss.item()
        for name in grad_sum:
            grad_sum[name] += adapted[name].grad
    n = len(ordered)
    for name, t in params.items():
        t.grad = grad_sum[name] / n
    meta_optimizer.step()
    return total_loss / n


# ----------------------------------------------------------------------
# pretraining drivers

LOG_HEADER = ("iteration", "meta_loss_or_train_loss", "val_accuracy", "seed",
              "wall_ms")


def maml_pretrain(spec: ClassifierSpec, train_sets: dict[int, SubjectDataset],
                  val_sets: dict[int, SubjectDataset], config: MetaConfig,
                  rng: np.random.Generator, seed_label: int = 0,
                  progress=None) -> tuple[ParamSet, list[tuple]]:
    """Episodic pretraining; returns the checkpoint with the best validation
    accuracy under the fixed-step adaptation protocol, plus the training log."""
    eligible = _eligible_subjects(train_sets, config.k_support + config.k_query)
    if len(eligible) < config.subjects_per_batch:
        raise InsufficientDataError(
            f"{len(eligible)} eligible subjects < batch of {config.subjects_per_batch}")

    params = build_classifier(spec, rng)
    meta_opt = Adam(params, lr=config.meta_lr)
    best = params.clone()
    best_acc = -1.0
    strikes = 0
    rows = []
    t0 = time.monotonic()
    for iteration in range(1, config.max_meta_iterations + 1):
        chosen = rng.choice(eligible, size=config.subjects_per_batch, replace=False)
        episodes = [sample_episode(train_sets[sid], config.k_support,
                                   config.k_query, rng)
                    for sid in sorted(chosen)]
        meta_loss = fomaml_meta_step(params, episodes, config.inner_lr,
                                     config.adapt_steps, meta_opt, rng=rng)
        if iteration % config.eval_interval == 0:
            val_acc = _validate_adapted(params, val_sets, config, rng)
            rows.append((iteration, meta_loss, val_acc, seed_label,
                         int(1000 * (time.monotonic() - t0))))
            if progress is not None:
                progress(iteration, meta_loss, val_acc)
            if val_acc > best_acc:
                best_acc = val_acc
                best = params.clone()
                strikes = 0
            else:
                strikes += 1
                if strikes >= config.validation_patience:
                    log.info("meta-training stopped at iteration %d", iteration)
                    break
        else:
            rows.append((iteration, meta_loss, "", seed_label,
                         int(1000 * (time.monotonic() - t0))))
    return (best if best_acc >= 0 else params), rows


def _validate_adapted(params: ParamSet, val_sets: dict[int, SubjectDataset],
                      config: MetaConfig, rng: np.random.Generator) -> float:
    """Fixed-step adaptation protocol on the validation subjects: adapt a copy
    per subject with gradient descent, score the query set in eval mode."""
    accs = []
    for sid in sorted(val_sets):
        ds = val_sets[sid]
        if ds.min_per_class() < config.k_support + config.k_query:
            continue
        episode = sample_episode(ds, config.k_support, config.k_query, rng)
        adapted = inner_adapt(params, episode.support, config.inner_lr,
                              config.validation_steps, rng=rng)
        accs.append(accuracy_of_params(adapted, *episode.query))
    if not accs:
        raise InsufficientDataError("no validation subject has enough trials")
    return float(np.mean(accs))


def _eligible_subjects(sets: dict[int, SubjectDataset], need: int) -> list[int]:
    eligible = []
    for sid in sorted(sets):
        if sets[sid].min_per_class() >= need:
            eligible.append(sid)
        else:
            log.warning("subject %d skipped: %s trials/class < %d",
                        sid, sets[sid].counts, need)
    return eligible


def transfer_pretrain(spec: ClassifierSpec, train_sets: dict[int, SubjectDataset],
                      val_sets: dict[int, SubjectDataset], config: TransferConfig,
                      rng: np.random.Generator, seed_label: int = 0,
                      progress=None) -> tuple[ParamSet, list[tuple]]:
    """Pooled minibatch Adam training over a per-subject sample quota, early
    stopped on validation accuracy."""
    per = config.samples_per_class_per_subject
    xs, ys = [], []
    for sid in sorted(train_sets):
        ds = train_sets[sid]
        if ds.min_per_class() < per:
            log.warning("subject %d skipped: %s trials/class < %d",
                        sid, ds.counts, per)
            continue
        for label, pool in ((0, ds.class0), (1, ds.class1)):
            picked = rng.choice(len(pool), size=per, replace=False)
            xs.append(pool[picked])
            ys.append(np.full(per, label, dtype=np.intp))
    if not xs:
        raise InsufficientDataError("no training subject has enough trials")
    pool_x = np.concatenate(xs)
    pool_y = np.concatenate(ys)

    val_x, val_y = _stack_all(val_sets)
    params = build_classifier(spec, rng)
    opt = Adam(params, lr=config.lr)
    best = params.clone()
    best_acc = -1.0
    strikes = 0
    rows = []
    t0 = time.monotonic()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(pool_x))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue  # a singleton batch breaks batch-norm statistics
            params.zero_grad()
            loss = classifier_loss(params, (pool_x[idx], pool_y[idx]), rng)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_acc = accuracy_of_params(params, val_x, val_y)
        rows.append((epoch, float(np.mean(losses)), val_acc, seed_label,
                     int(1000 * (time.monotonic() - t0))))
        if progress is not None:
            progress(epoch, float(np.mean(losses)), val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best = params.clone()
            strikes = 0
        else:
            strikes += 1
            if strikes >= config.validation_patience:
                log.info("transfer training stopped at epoch %d", epoch)
                break
    return best, rows


def _stack_all(sets: dict[int, SubjectDataset]) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for sid in sorted(sets):
        ds = sets[sid]
        xs += [ds.class0, ds.class1]
        ys += [np.zeros(len(ds.class0), dtype=np.intp),
               np.ones(len(ds.class1), dtype=np.intp)]
    if not xs:
        raise InsufficientDataError("validation pool is empty")
    return np.concatenate(xs), np.concatenate(ys)
