"""The fast-adaptability protocol: fine-tune a pretrained classifier for a
fixed, small number of iterations on each held-out subject, many times over,
and report per-iteration accuracy curves.

Accuracy is always measured in eval mode; the fine-tuning steps themselves
run in training mode (dropout active, batch statistics from the support
batch).  Fine-tuning always acts on a clone, never on the pretrained set.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .dataset import Episode, SubjectDataset, sample_episode
from .errors import InsufficientDataError
from .model import forward_logits, spec_of
from .nnops import softmax_cross_entropy
from .params import ParamSet
from .optim import make_optimizer
from .seeding import derive_seed, make_rng


def accuracy(logits, labels) -> float:
    """Fraction of argmax matches; ties resolve to the lower class index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim == 1:
        data = data[None]
    labels = np.atleast_1d(np.asarray(labels))
    if len(labels) != len(data) or len(labels) == 0:
        raise ValueError("need one label per logit row, at least one row")
    return float(np.mean(np.argmax(data, axis=1) == labels))


def accuracy_of_params(params: ParamSet, x, y) -> float:
    return accuracy(forward_logits(params, x, training=False), y)


@dataclass(frozen=True)
class FinetuneSpec:
    optimizer: str = "adam"          # "adam" | "gradient_descent"
    lr: float = 0.001
    steps: int = 10
    k_support: int = 10
    k_query: int = 11

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("adam", "gradient_descent"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def default_finetune_spec(strategy: str, source_activity: int,
                          target_activity: int, steps: int = 10) -> FinetuneSpec:
    """Protocol defaults: transfer models fine-tune with Adam at 0.001;
    meta-learned models use gradient descent, at their pretraining inner-loop
    rate within the source activity and at 0.001 across activities."""
    if strategy == "transfer":
        return FinetuneSpec(optimizer="adam", lr=0.001, steps=steps)
    if strategy == "maml":
        if target_activity == source_activity:
            from .training import maml_defaults  # deferred: avoids import cycle
            lr = maml_defaults(source_activity).inner_lr
        else:
            lr = 0.001
        return FinetuneSpec(optimizer="gradient_descent", lr=lr, steps=steps)
    raise ValueError(f"unknown strategy {strategy!r}")


class FinetuneSession:
    """Stateful fine-tuning of a cloned ParamSet; optimizer state carries
    across successive ``run`` calls."""

    def __init__(self, pretrained: ParamSet, episode: Episode, spec: FinetuneSpec,
                 rng: np.random.Generator):
        self.params = pretrained.clone()
        self.episode = episode
        self.spec = spec
        self.rng = rng
        self.optimizer = make_optimizer(spec.optimizer, self.params, spec.lr)
        self.train_curve = [accuracy_of_params(self.params, *episode.support)]
        self.test_curve = [accuracy_of_params(self.params, *episode.query)]

    def run(self, steps: int) -> "FinetuneSession":
        x, y = self.episode.support
        for _ in range(steps):
            self.params.zero_grad()
            logits = forward_logits(self.params, x, training=True, rng=self.rng)
            softmax_cross_entropy(logits, y).backward()
            self.optimizer.step()
            self.train_curve.append(accuracy_of_params(self.params, x, y))
            self.test_curve.append(accuracy_of_params(self.params, *self.episode.query))
        return self


def finetune_and_track(pretrained: ParamSet, episode: Episode, spec: FinetuneSpec,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(train_acc, test_acc) curves over iterations 0..steps."""
    session = FinetuneSession(pretrained, episode, spec, rng).run(spec.steps)
    return np.asarray(session.train_curve), np.asarray(session.test_curve)


# ----------------------------------------------------------------------
# reports

@dataclass
class AdaptationReport:
    source_activity: int
    target_activity: int
    strategy: str
    norm: str
    spec: FinetuneSpec
    runs: int
    base_seed: int
    subject_ids: list[int]
    skipped_subjects: list[int]
    train_curves: np.ndarray = field(repr=False)  # (runs, subjects, steps+1)
    test_curves: np.ndarray = field(repr=False)

    @property
    def iterations(self) -> int:
        return self.test_curves.shape[2] - 1

    def _per_run(self, curves: np.ndarray) -> np.ndarray:
        return curves.mean(axis=1)  # average subjects within each run

    @property
    def mean_test(self) -> np.ndarray:
        return self._per_run(self.test_curves).mean(axis=0)

    @property
    def std_test(self) -> np.ndarray:
        return self._per_run(self.test_curves).std(axis=0)

    @property
    def mean_train(self) -> np.ndarray:
        return self._per_run(self.train_curves).mean(axis=0)

    @property
    def std_train(self) -> np.ndarray:
        return self._per_run(self.train_curves).std(axis=0)


def _provenance(params: ParamSet) -> tuple[str, int]:
    prov = params.meta.get("provenance", {})
    return prov.get("strategy", "unknown"), int(prov.get("activity", -1))


def evaluate_fast_adaptability(pretrained: ParamSet,
                               test_sets: dict[int, SubjectDataset],
                               spec: FinetuneSpec, runs: int, base_seed: int,
                               threads: int = 1,
                               target_activity: int | None = None,
                               progress=None) -> AdaptationReport:
    """Fine-tune on every eligible test subject for ``runs`` independent
    episode draws and aggregate the accuracy curves.

    Each (run, subject) cell derives its own seed from ``base_seed``, so the
    result is independent of scheduling; subjects without enough trials are
    skipped and listed in the report.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    need = spec.k_support + spec.k_query
    eligible, skipped = [], []
    for sid in sorted(test_sets):
        (eligible if test_sets[sid].min_per_class() >= need else skipped).append(sid)
    if not eligible:
        raise InsufficientDataError("no test subject has enough trials per class")

    strategy, source_activity = _provenance(pretrained)
    if target_activity is None:
        target_activity = next(iter(test_sets.values())).activity

    n_iters = spec.steps + 1
    train_curves = np.zeros((runs, len(eligible), n_iters))
    test_curves = np.zeros((runs, len(eligible), n_iters))

    def one_cell(run: int, slot: int, sid: int):
        rng = make_rng(base_seed, "adapt", run, sid)
        episode = sample_episode(test_sets[sid], spec.k_support, spec.k_query, rng)
        train_curve, test_curve = finetune_and_track(pretrained, episode, spec, rng)
        train_curves[run, slot] = train_curve
        test_curves[run, slot] = test_curve
        if progress is not None:
            progress(run, sid)

    cells = [(r, i, sid) for r in range(runs) for i, sid in enumerate(eligible)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda c: one_cell(*c), cells))
    else:
        for cell in cells:
            one_cell(*cell)

    return AdaptationReport(
        source_activity=source_activity,
        target_activity=int(target_activity),
        strategy=strategy,
        norm=spec_of(pretrained).norm.value,
        spec=spec,
        runs=runs,
        base_seed=base_seed,
        subject_ids=eligible,
        skipped_subjects=skipped,
        train_curves=train_curves,
        test_curves=test_curves,
    )


def cross_activity_adapt(pretrained: ParamSet, target_sets: dict[int, SubjectDataset],
                         target_activity: int, spec: FinetuneSpec, runs: int,
                         base_seed: int, threads: int = 1,
                         progress=None) -> AdaptationReport:
    """Same protocol with episodes drawn from a different activity than the
    one the model was pretrained on."""
    _, source_activity = _provenance(pretrained)
    if source_activity == target_activity:
        raise ValueError(
            f"cross-activity adaptation needs a different target, both are "
            f"{target_activity}")
    return evaluate_fast_adaptability(pretrained, target_sets, spec, runs, base_seed,
                                      threads=threads,
                                      target_activity=target_activity,
                                      progress=progress)


def derive_cell_seed(base_seed: int, run: int, subject_id: int) -> int:
    """Exposed for tests: the per-cell seed used by the evaluation loop."""
    return derive_seed(base_seed, "adapt", run, subject_id)
