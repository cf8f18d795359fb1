"""Training loop: task loss plus a weighted fairness penalty, optimised with Adam."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..data import TabularDataset, split
from ..disparity import AuditConfig, DisparityReport, audit
from ..errors import InvalidInput, NumericFailure, TrainingDiverged
from .batching import stratified_batches
from .mlp import Adam, MlpModel, backward, forward, init_mlp
from .regularizers import Regularizer, regularizer_value_and_grad

log = logging.getLogger(__name__)

TASKS = ("classification", "regression")


@dataclass(frozen=True)
class TrainConfig:
    """One training run.

    ``features="all"`` uses the dataset feature matrix; ``"legit"`` feeds
    only the level coordinates.  Validation rows come from ``val_fraction``
    of the training set when no explicit validation set is passed.
    """

    regularizer: Regularizer = field(default_factory=Regularizer)
    lam: float = 0.0
    task: str = "classification"
    lr: float = 1e-3
    epochs: int = 500
    patience: int = 50
    batch_size: int = 256
    seed: int = 0
    hidden: tuple = (50, 20)
    features: str = "all"
    val_fraction: float = 0.2
    stratified: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInput("lambda must be non-negative")
        if self.task not in TASKS:
            raise InvalidInput(f"task must be one of {TASKS}")
        if self.features not in ("all", "legit"):
            raise InvalidInput("features must be 'all' or 'legit'")
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidInput("epochs, patience, batch_size and lr must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidInput("val_fraction must lie in (0, 1)")


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    report: DisparityReport | None = None

    COLUMNS = ("epoch", "train_task_loss", "train_reg_value", "train_objective", "val_task_loss", "val_metric")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.epochs:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in self.COLUMNS[1:]])
        return buf.getvalue()


def model_inputs(dataset: TabularDataset, features="all"):
    if features == "legit":
        return dataset.level_coords[dataset.levels]
    return dataset.features


def feature_names(dataset, features="all"):
    if features == "legit":
        return tuple(f"level:{n}" for n in dataset.schema.legitimate)
    return dataset.feature_names


def task_loss_and_grad(out, pre, y, task):
    """Mean task loss and its gradient with respect to the pre-head logits."""
    n = y.size
    if task == "classification":
        # log(1 + e^z) - y z, stable for both signs
        loss = float(np.mean(np.logaddexp(0.0, pre) - y * pre))
        return loss, (out - y) / n
    r = out - y
    return float(np.mean(r * r)), 2.0 * r / n


def task_loss(out, y, task):
    if task == "classification":
        p = np.clip(out, 1e-12, 1 - 1e-12)
        return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    return float(np.mean((out - y) ** 2))


def auc(scores, y):
    """Area under the ROC curve from ranks (0.5 when one class is absent)."""
    y = np.asarray(y) > 0.5
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        return 0.5
    r = rankdata(scores)
    return float((r[y].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def objective_and_grad(model: MlpModel, X, y, L, A, coords, cfg: TrainConfig):
    """Task loss + lam * penalty objective on one batch, and the parameter gradients.

    Returns (task_loss, RegValue or None, total objective, grad_W, grad_b).
    """
    out, cache = forward(model, X, return_cache=True)
    pre = cache[1]
    loss, d_pre = task_loss_and_grad(out, pre, y, cfg.task)
    reg = None
    total = loss
    if cfg.lam > 0 and cfg.regularizer.active:
        reg = regularizer_value_and_grad(cfg.regularizer, out, L, A, coords)
        total = loss + cfg.lam * reg.objective
        d_out = cfg.lam * reg.grad
        d_pre = d_pre + (d_out * out * (1.0 - out) if model.head == "sigmoid" else d_out)
    gW, gb = backward(model, cache, d_pre=d_pre)
    return loss, reg, total, gW, gb


def _fit_scaler(X):
    mean = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    scale = X.std(axis=0) if X.shape[0] else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def train(
    dataset: TabularDataset,
    cfg: TrainConfig,
    validation: TabularDataset | None = None,
    test: TabularDataset | None = None,
    audit_cfg: AuditConfig | None = None,
):
    """Fit an MLP; returns (best-validation model, history).

    The history's ``report`` audits the returned model on ``test`` (or on
    the validation set when no test set is given).
    """
    if validation is None:
        dataset, validation, _ = split(dataset, (1.0 - cfg.val_fraction, cfg.val_fraction, 0.0), cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    X = model_inputs(dataset, cfg.features)
    Xv = model_inputs(validation, cfg.features)
    if X.shape[1] == 0:
        raise InvalidInput("the model needs at least one input feature")
    y, L, A = dataset.target, dataset.levels, dataset.sensitive
    coords = dataset.level_coords
    if cfg.task == "classification" and not np.isin(y, (0.0, 1.0)).all():
        raise InvalidInput("classification targets must be 0/1")
    head = "sigmoid" if cfg.task == "classification" else "identity"
    model = init_mlp([X.shape[1], *cfg.hidden, 1], rng, head)
    model.x_mean, model.x_scale = _fit_scaler(X)
    model.feature_names = feature_names(dataset, cfg.features)
    model.meta = {"features": cfg.features, "task": cfg.task}
    params = [*model.weights, *model.biases]
    opt = Adam(params, lr=cfg.lr)

    n_levels = np.unique(L).size
    if cfg.stratified and cfg.batch_size < n_levels:
        raise InvalidInput(f"batch_size {cfg.batch_size} is smaller than the number of levels {n_levels}")
    hist = TrainHistory()
    best_loss = np.inf
    best = model.copy()
    stale = 0
    for epoch in range(cfg.epochs):
        if cfg.stratified:
            batches = stratified_batches(L, cfg.batch_size, rng, A)
        else:
            perm = rng.permutation(len(y))
            batches = [np.sort(perm[k : k + cfg.batch_size]) for k in range(0, len(y), cfg.batch_size)]
        tl = rv = tot = 0.0
        for idx in batches:
            try:
                loss, reg, total, gW, gb = objective_and_grad(model, X[idx], y[idx], L[idx], A[idx], coords, cfg)
            except NumericFailure as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
            if not np.isfinite(total):
                raise TrainingDiverged(f"epoch {epoch}: objective is {total}")
            opt.step(params, [*gW, *gb])
            model.weights = params[: len(gW)]
            model.biases = params[len(gW) :]
            frac = idx.size / len(y)
            tl += frac * float(loss)
            rv += frac * (float(reg.value) if reg is not None else 0.0)
            tot += frac * float(total)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDiverged(f"epoch {epoch}: non-finite parameters")
        out_v = forward(model, Xv)
        vloss = task_loss(out_v, validation.target, cfg.task)
        vmetric = auc(out_v, validation.target) if cfg.task == "classification" else vloss
        hist.epochs.append(
            {
                "epoch": epoch,
                "train_task_loss": tl,
                "train_reg_value": rv,
                "train_objective": tot,
                "val_task_loss": vloss,
                "val_metric": vmetric,
            }
        )
        if vloss < best_loss:
            best_loss = vloss
            best = model.copy()
            hist.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                hist.stopped_early = True
                break
    held = test if test is not None else validation
    hist.report = audit(held, forward(best, model_inputs(held, cfg.features)), audit_cfg)
    return best, hist


def predict(model: MlpModel, dataset: TabularDataset):
    return forward(model, model_inputs(dataset, model.meta.get("features", "all")))
