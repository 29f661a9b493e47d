"""Batch SGD over W or (W, lam) with four strategies:

    ce         - plain cross-entropy (or squared-error) baseline
    nrae-fixed - log-domain criterion at a fixed lam
    scheduled  - start at a large lam, decay it by rho each epoch, switch
                 permanently to the raw exponential criterion once
                 lam**p * max(c) fits under the overflow cap
    anrat      - joint SGD on (W, lam) with the lam**(-q) penalty

plus hold-out evaluation, grid search over (learning rate, penalty weight),
and stagnancy detection on the validation loss.

One training run is a single sequential loop (SGD is order-dependent);
grid-search runs are independent of each other and each owns its model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .criteria import (
    EXP_CAP,
    LAMBDA_MIN,
    MAX_CLAMPED_LOSS,
    CriterionParams,
    LossReport,
    NumericDomainError,
    evaluate_criterion,
)
from .data import SampleBatch, batches
from .network import (
    MlpModel,
    batch_losses,
    flatten,
    forward,
    init_model,
    unflatten,
    weighted_backward,
)
from .seeds import epoch_seed

STRATEGIES = ("ce", "nrae-fixed", "scheduled", "anrat")

DEFAULT_LR_GRID = (1.0, 0.5, 0.1)
DEFAULT_A_GRID = (1.0, 0.1, 0.001)
GRID_LAMBDA0 = 10.0

METRICS_HEADER = "epoch,train_criterion,train_ce,val_ce,val_error,lambda,switched,wall_ms"
GRID_HEADER = "lr,a,best_val_ce,best_val_error,status"


class DivergedError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, epoch: int, batch_index: int, detail: str = ""):
        self.epoch = epoch
        self.batch_index = batch_index
        msg = f"diverged at epoch {epoch}, batch {batch_index}"
        super().__init__(msg + (f": {detail}" if detail else ""))


class NoViableModelError(RuntimeError):
    """Every grid-search run diverged."""


@dataclass(frozen=True)
class Criterion:
    kind: str  # ce | rae | nrae | anrat
    params: CriterionParams


@dataclass(frozen=True)
class TrainConfig:
    strategy: str
    learning_rate: float
    epochs: int
    batch_size: int
    layer_dims: tuple
    activation: str = "tanh"
    output_mode: str = "softmax-ce"
    lambda_lr: float | None = None  # anrat only; defaults to learning_rate
    lambda0: float = 10.0
    p: int = 1
    a: float = 0.1
    q: int = 1
    rho: float | None = None  # scheduled only
    switch_cap: float = EXP_CAP
    stagnancy_window: int = 5
    stagnancy_min_rel_improvement: float = 1e-4
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r} (expected one of {STRATEGIES})")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")
        if self.strategy == "scheduled":
            if self.rho is None or not (0.0 < self.rho < 1.0):
                raise ValueError("scheduled strategy requires a decay rho in (0, 1)")
        elif self.rho is not None:
            raise ValueError(f"rho is only meaningful for the scheduled strategy, not {self.strategy!r}")
        if self.strategy != "anrat" and self.lambda_lr is not None:
            raise ValueError(f"lambda_lr is only meaningful for the anrat strategy, not {self.strategy!r}")
        if self.lambda_lr is not None and self.lambda_lr <= 0:
            raise ValueError("lambda_lr must be positive")
        return self

    @property
    def effective_lambda_lr(self) -> float:
        # lam rides the same SGD step as the weights unless overridden
        return self.lambda_lr if self.lambda_lr is not None else self.learning_rate


@dataclass
class EpochRecord:
    epoch: int
    train_criterion: float
    train_ce: float
    val_ce: float
    val_error: float
    lam: float
    switched_to_rae: bool
    wall_ms: int


@dataclass
class TrainReport:
    records: list
    best_epoch: int
    best_model: MlpModel
    stagnant: bool
    final_model: MlpModel
    final_lambda: float

    @property
    def best_val_ce(self) -> float:
        return self.records[self.best_epoch].val_ce

    @property
    def best_val_error(self) -> float:
        return self.records[self.best_epoch].val_error


def _apply_update(model: MlpModel, flat_grad: np.ndarray, lr: float) -> MlpModel:
    return unflatten(model, flatten(model) - lr * flat_grad)


def _rae_value_tolerant(losses: np.ndarray, s: float) -> float:
    """Raw exponential criterion without the feasibility cap; inf signals
    divergence to the caller instead of raising."""
    with np.errstate(over="ignore"):
        return float(np.mean(np.exp(s * np.asarray(losses))))


def sgd_step(model: MlpModel, batch: SampleBatch, criterion: Criterion,
             learning_rate: float) -> tuple:
    """One descent step W <- W - lr * sum_i w_i grad(c_i) with the weights
    of the active criterion (uniform 1/m for 'ce').

    In 'rae' mode the raw-criterion gradient lam**p * RAE * sum_i w_i grad(c_i)
    is applied with the learning rate rescaled by 1/(lam**p * RAE), so the
    effective step matches the log-domain phase in direction and magnitude.
    """
    cache = forward(model, batch.inputs)
    losses = batch_losses(cache.outputs, batch.targets, model.output_mode)
    if criterion.kind == "rae":
        report = evaluate_criterion(losses, "nrae", criterion.params)
        report = LossReport(
            criterion_value=_rae_value_tolerant(losses, criterion.params.scale),
            ce_value=report.ce_value,
            sample_weights=report.sample_weights,
            max_loss=report.max_loss,
        )
    else:
        report = evaluate_criterion(losses, criterion.kind, criterion.params)
    grad = weighted_backward(model, batch, report.sample_weights, cache).flat_grad
    return _apply_update(model, grad, learning_rate), report


def anrat_step(model: MlpModel, lam: float, batch: SampleBatch, params: CriterionParams,
               learning_rate: float, lambda_lr: float) -> tuple:
    """Simultaneous update of W and lam, both gradients evaluated at the
    pre-update point.

    lam is clamped to LAMBDA_MIN and its step is limited to halving or
    doubling: the penalty a*lam**(-q) is a barrier whose gradient blows up
    like lam**(-q-1) near the floor, and an unclamped explicit step there
    would catapult lam upward by orders of magnitude in one update.
    """
    params = replace(params, lam=lam)
    cache = forward(model, batch.inputs)
    losses = batch_losses(cache.outputs, batch.targets, model.output_mode)
    report = evaluate_criterion(losses, "anrat", params)
    grad = weighted_backward(model, batch, report.sample_weights, cache).flat_grad
    new_model = _apply_update(model, grad, learning_rate)
    new_lam = lam - lambda_lr * report.lambda_grad
    new_lam = max(LAMBDA_MIN, min(max(new_lam, 0.5 * lam), 2.0 * lam))
    return new_model, new_lam, report


def scheduled_update(lam: float, switched: bool, max_loss: float, rho: float,
                     p: int = 1, cap: float = EXP_CAP) -> tuple:
    """End-of-epoch schedule: decay lam toward the floor of 1, then switch
    permanently to the raw criterion once lam**p * max_loss fits under the
    cap.  After the switch lam is frozen."""
    if switched:
        return lam, True
    lam = max(lam * rho, 1.0)
    return lam, lam**p * max_loss <= cap


def detect_stagnancy(records, window: int, min_rel_improvement: float) -> bool:
    """True iff the validation loss improved by less than
    min_rel_improvement (relative) over the last `window` epochs.  Fewer
    records than `window` is insufficient evidence, hence False."""
    if window < 2:
        raise ValueError("window must be >= 2")
    vals = [getattr(r, "val_ce", r) for r in records]
    if len(vals) < window:
        return False
    first, last = vals[-window], vals[-1]
    return (first - last) / max(abs(first), 1e-300) < min_rel_improvement


def evaluate(model: MlpModel, dataset: SampleBatch) -> tuple:
    """(mean per-sample loss, error rate).  Error is the argmax
    misclassification fraction for classifiers and the mean squared error
    for regression."""
    if dataset is None:
        raise ValueError("dataset must not be empty")
    cache = forward(model, dataset.inputs)
    losses = batch_losses(cache.outputs, dataset.targets, model.output_mode)
    mean_ce = float(losses.mean())
    if model.output_mode == "softmax-ce":
        pred = np.argmax(cache.outputs, axis=1)
        err = float(np.mean(pred != np.asarray(dataset.targets).astype(int)))
    elif model.output_mode == "sigmoid-binary-ce":
        pred = (cache.outputs[:, 0] > 0.5).astype(int)
        err = float(np.mean(pred != np.asarray(dataset.targets).astype(int)))
    else:
        err = mean_ce
    return mean_ce, err


def train(config: TrainConfig, train_set: SampleBatch, val_set: SampleBatch) -> TrainReport:
    """Run one strategy end to end.  Raises DivergedError on any non-finite
    loss, gradient, or parameter."""
    config.validate()
    model = init_model(config.layer_dims, config.activation, config.output_mode, config.seed)
    lam = max(config.lambda0, LAMBDA_MIN)
    lam_lr = config.effective_lambda_lr
    switched = False
    records = []
    best_epoch = -1
    best_val = np.inf
    best_model = model.copy()

    # the scheduled switch must stay feasible for every FUTURE batch, not
    # just past ones: classification losses have the clamp ceiling, so the
    # switch keys on it; regression (unbounded c) uses the running max
    loss_bounded = config.output_mode in ("softmax-ce", "sigmoid-binary-ce")
    max_loss_seen = 0.0
    for ep in range(config.epochs):
        t0 = time.perf_counter()
        crit_sum = ce_sum = 0.0
        seen = 0
        for bi, batch in enumerate(batches(train_set, config.batch_size, epoch_seed(config.seed, ep))):
            try:
                if config.strategy == "anrat":
                    params = CriterionParams(lam=lam, p=config.p, a=config.a, q=config.q)
                    model, lam, report = anrat_step(
                        model, lam, batch, params, config.learning_rate, lam_lr
                    )
                else:
                    kind = {
                        "ce": "ce",
                        "nrae-fixed": "nrae",
                        "scheduled": "rae" if switched else "nrae",
                    }[config.strategy]
                    params = CriterionParams(lam=lam, p=config.p)
                    model, report = sgd_step(model, batch, Criterion(kind, params), config.learning_rate)
            except (FloatingPointError, NumericDomainError) as exc:
                raise DivergedError(ep, bi, str(exc)) from exc
            if not np.isfinite(report.criterion_value):
                raise DivergedError(ep, bi, f"criterion value {report.criterion_value}")
            m = batch.size
            crit_sum += report.criterion_value * m
            ce_sum += report.ce_value * m
            seen += m
            max_loss_seen = max(max_loss_seen, report.max_loss)

        val_ce, val_err = evaluate(model, val_set)
        if not (np.isfinite(val_ce) and np.isfinite(val_err)):
            raise DivergedError(ep, -1, "non-finite validation loss")
        if config.strategy == "scheduled":
            switch_signal = MAX_CLAMPED_LOSS if loss_bounded else max_loss_seen
            lam, switched = scheduled_update(
                lam, switched, switch_signal, config.rho, config.p, config.switch_cap
            )
        records.append(EpochRecord(
            epoch=ep,
            train_criterion=crit_sum / seen,
            train_ce=ce_sum / seen,
            val_ce=val_ce,
            val_error=val_err,
            lam=lam,
            switched_to_rae=switched,
            wall_ms=int(round((time.perf_counter() - t0) * 1000.0)),
        ))
        if val_ce < best_val:
            best_val = val_ce
            best_epoch = ep
            best_model = model.copy()

    stagnant = detect_stagnancy(records, config.stagnancy_window, config.stagnancy_min_rel_improvement)
    return TrainReport(records, best_epoch, best_model, stagnant, model, lam)


@dataclass
class GridRow:
    lr: float
    a: float
    best_val_ce: float
    best_val_error: float
    status: str  # ok | diverged


@dataclass
class GridSearchResult:
    rows: list                 # ranked: ok rows by best_val_ce, then diverged
    best_row: GridRow
    best_report: TrainReport


def grid_search(base_config: TrainConfig, train_set: SampleBatch, val_set: SampleBatch,
                lr_grid=DEFAULT_LR_GRID, a_grid=DEFAULT_A_GRID) -> GridSearchResult:
    """Train the adaptive strategy once per (learning rate, penalty weight)
    combination with lam0 fixed at 10, rank by the best validation loss.
    Diverged runs are recorded but excluded from the ranking."""
    if not lr_grid or not a_grid:
        raise ValueError("grids must be non-empty")
    scored = []
    failed = []
    for lr in lr_grid:
        for a in a_grid:
            cfg = replace(
                base_config,
                strategy="anrat",
                learning_rate=lr,
                a=a,
                lambda0=GRID_LAMBDA0,
                rho=None,
            ).validate()
            try:
                report = train(cfg, train_set, val_set)
            except DivergedError:
                failed.append(GridRow(lr, a, float("nan"), float("nan"), "diverged"))
                continue
            row = GridRow(lr, a, report.best_val_ce, report.best_val_error, "ok")
            scored.append((row, report))
    if not scored:
        raise NoViableModelError("every grid combination diverged")
    order = sorted(range(len(scored)), key=lambda i: (scored[i][0].best_val_ce, i))
    rows = [scored[i][0] for i in order] + failed
    best_report = scored[order[0]][1]
    return GridSearchResult(rows, rows[0], best_report)


def write_metrics_csv(records, path) -> None:
    """One CSV row per epoch under the frozen header; LF endings, '.'
    decimal separator."""
    with open(path, "w", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in records:
            flag = "true" if r.switched_to_rae else "false"
            fh.write(
                f"{r.epoch},{float(r.train_criterion)!r},{float(r.train_ce)!r},{float(r.val_ce)!r},"
                f"{float(r.val_error)!r},{float(r.lam)!r},{flag},{r.wall_ms}\n"
            )


def write_grid_csv(rows, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(GRID_HEADER + "\n")
        for row in rows:
            fh.write(f"{float(row.lr)!r},{float(row.a)!r},{float(row.best_val_ce)!r},"
                     f"{float(row.best_val_error)!r},{row.status}\n")
