"""Penalised mini-batch SGD and the alternating train/prune schedule."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .curvature import (
    FactorAverage,
    accumulate_factors,
    block_direction,
    block_spectrum,
    curvature_rows,
    hinge_penalty,
    kfac_spectrum,
    penalty_gradient,
)
from .data import Dataset, augment_hflip, batches
from .network import (
    LOSS_KINDS,
    MaskedNetwork,
    backward,
    compact,
    compact_arrays,
    flat_grad,
    flat_param_alive,
    forward,
    per_sample_loss,
)
from .sensitivity import (
    SensitivityTable,
    apply_prune,
    normalize_per_layer,
    select_prune,
    sparsity,
    taylor_scores,
)

log = logging.getLogger(__name__)

ABLATIONS = ("full", "penalty_train_only", "penalty_prune_only", "baseline_mu0")
DIVERGENCE_LOSS = 1e6


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DivergenceError(RuntimeError):
    pass


@dataclass
class RunConfig:
    lr: float = 0.01
    momentum: float = 0.9
    mu: float = 0.001
    bound: float = 0.5
    prune_count: int = 100
    e1: int = 5
    e2: int = 5
    e3: int = 50
    target_sparsity: float = 0.5
    batch_size: int = 32
    seed: int = 0
    loss_kind: str = "cross_entropy"
    ablation: str = "full"
    eig_tol: float = 1e-10
    weight_decay: float = 0.0
    lr_decay_epochs: tuple[int, ...] = ()
    factor_ema: float = 0.0
    score_batches: int = 1
    hflip: float = 0.0
    compact_on_prune: bool = True

    def validate(self) -> RunConfig:
        checks = [
            ("lr", self.lr > 0, "must be positive"),
            ("momentum", 0 <= self.momentum < 1, "must lie in [0, 1)"),
            ("mu", self.mu >= 0, "must be non-negative"),
            ("bound", self.bound >= 0, "must be non-negative"),
            ("prune_count", self.prune_count >= 1, "must be at least 1"),
            ("e1", self.e1 >= 0, "must be non-negative"),
            ("e2", self.e2 >= 1, "must be at least 1"),
            ("e3", self.e3 >= 0, "must be non-negative"),
            ("target_sparsity", 0 < self.target_sparsity <= 1, "must lie in (0, 1]"),
            ("batch_size", self.batch_size >= 1, "must be at least 1"),
            ("loss_kind", self.loss_kind in LOSS_KINDS, f"must be one of {LOSS_KINDS}"),
            ("ablation", self.ablation in ABLATIONS, f"must be one of {ABLATIONS}"),
            ("eig_tol", self.eig_tol > 0, "must be positive"),
            ("weight_decay", self.weight_decay >= 0, "must be non-negative"),
            ("factor_ema", 0 <= self.factor_ema < 1, "must lie in [0, 1)"),
            ("score_batches", self.score_batches >= 1, "must be at least 1"),
            ("hflip", 0 <= self.hflip <= 1, "must lie in [0, 1]"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, f"{msg} (got {getattr(self, key)!r})")
        return self

    @property
    def train_mu(self) -> float:
        return self.mu if self.ablation in ("full", "penalty_train_only") else 0.0

    @property
    def prune_mu(self) -> float:
        return self.mu if self.ablation in ("full", "penalty_prune_only") else 0.0

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.1 ** sum(1 for e in self.lr_decay_epochs if epoch >= e)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    penalty_value: float
    rho: float
    val_accuracy: float
    kappa: float
    alive_neurons: int
    prune_event: bool

    FIELDS = ("epoch", "train_loss", "penalty_value", "rho", "val_accuracy", "kappa", "alive_neurons", "prune_event")


@dataclass
class TrainState:
    net: MaskedNetwork
    velocity: np.ndarray | None = None
    epoch: int = 0
    factor_avg: FactorAverage | None = None

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = np.zeros(self.net.param_count)


def evaluate(net: MaskedNetwork, ds: Dataset, loss_kind: str = "cross_entropy", chunk: int = 4096):
    """Top-1 accuracy and mean loss over a labelled dataset."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    total_loss = 0.0
    for k in range(0, len(ds), chunk):
        logits, _ = forward(net, ds.inputs[k : k + chunk])
        y = ds.labels[k : k + chunk]
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
        losses, _ = per_sample_loss(logits, y, loss_kind)
        total_loss += float(losses.sum())
    return correct / len(ds), total_loss / len(ds)


def sgd_step(state: TrainState, grad: np.ndarray, lr: float, momentum: float) -> None:
    alive = flat_param_alive(state.net)
    grad = np.where(alive, grad, 0.0)
    state.velocity = momentum * state.velocity + grad
    state.net = state.net.with_flat(state.net.flat_params() - lr * state.velocity)


def batch_gradient(state: TrainState, x, y, cfg: RunConfig):
    """Data gradient plus, when the hinge is active, ``mu`` times the penalty gradient."""
    net = state.net
    _, trace = forward(net, x)
    backward(net, trace, y, cfg.loss_kind)
    if not math.isfinite(trace.loss) or trace.loss > DIVERGENCE_LOSS:
        raise DivergenceError(f"epoch {state.epoch}: loss {trace.loss} diverged")
    grad = flat_grad(net, trace)
    rho = math.nan
    mu = cfg.train_mu
    if mu > 0:
        blocks = accumulate_factors(net, trace)
        if state.factor_avg is not None:
            blocks = state.factor_avg.update(blocks)
        est = block_spectrum(blocks, tol=cfg.eig_tol)
        rho = est.rho
        if est.rho > cfg.bound:
            v = block_direction(net, est.block, est.v_block)
            grad = grad + mu * penalty_gradient(net, x, y, cfg.loss_kind, v, trace=trace)
    if cfg.weight_decay:
        grad = grad + cfg.weight_decay * net.flat_params()
    return trace.loss, grad, rho


def train_epoch(state: TrainState, train: Dataset, cfg: RunConfig, val: Dataset | None = None):
    """One pass over the training data with the mask held fixed.

    Returns ``(metrics, estimate)``, the estimate being the K-FAC spectrum of
    the whole training set measured after the epoch.
    """
    if cfg.factor_ema and state.factor_avg is None:
        state.factor_avg = FactorAverage(cfg.factor_ema)
    lr = cfg.lr_at(state.epoch)
    losses = []
    for b, idx in enumerate(batches(train, cfg.batch_size, cfg.seed, state.epoch)):
        x, y = train.inputs[idx], train.labels[idx]
        if cfg.hflip > 0 and x.ndim == 4:
            x = augment_hflip(x, cfg.hflip, [cfg.seed, state.epoch, b])
        loss_value, grad, _ = batch_gradient(state, x, y, cfg)
        losses.append(loss_value * len(idx))
        sgd_step(state, grad, lr, cfg.momentum)
    est = kfac_spectrum(state.net, train.inputs, train.labels, cfg.loss_kind, tol=cfg.eig_tol)
    acc = evaluate(state.net, val, cfg.loss_kind)[0] if val is not None and len(val) else math.nan
    metrics = EpochMetrics(
        epoch=state.epoch,
        train_loss=sum(losses) / len(train),
        penalty_value=hinge_penalty(est.rho, cfg.bound),
        rho=est.rho,
        val_accuracy=acc,
        kappa=sparsity(state.net),
        alive_neurons=state.net.alive_neurons(),
        prune_event=False,
    )
    state.epoch += 1
    return metrics, est


def prune_step(state: TrainState, train: Dataset, cfg: RunConfig):
    """Score on random mini-batches, drop the weakest neurons, compact if configured."""
    net = state.net
    rng = np.random.default_rng([cfg.seed, state.epoch, 104729])
    table = None
    for _ in range(cfg.score_batches):
        idx = rng.choice(len(train), size=min(cfg.batch_size, len(train)), replace=False)
        t = taylor_scores(net, train.inputs[idx], train.labels[idx], cfg.loss_kind, cfg.prune_mu, cfg.bound, cfg.eig_tol)
        if table is None:
            table = t
        else:
            for l in table.raw:
                table.raw[l] = table.raw[l] + t.raw[l]
    if cfg.score_batches > 1:
        table = SensitivityTable({l: r / cfg.score_batches for l, r in table.raw.items()}, groups=table.groups)
    table = normalize_per_layer(table)
    decision = select_prune(table, cfg.prune_count, net)
    pruned = set(decision.neurons)
    rows = [
        {"epoch": state.epoch, "layer": l, "neuron": j, "raw": r, "normalized": nrm, "pruned": int((l, j) in pruned)}
        for l, j, r, nrm in table.entries()
    ]
    new = apply_prune(net, decision.neurons)
    if cfg.compact_on_prune:
        v = new.with_flat(state.velocity)
        vw, vb = compact_arrays(new, v.weights, v.biases)
        new = compact(new)
        state.velocity = replace(new, weights=vw, biases=vb).flat_params()
    else:
        state.velocity = np.where(flat_param_alive(new), state.velocity, 0.0)
    state.net = new
    return decision, rows


def first_prune_epoch(e1: int, e2: int) -> int:
    return e1 + (-e1) % e2


def expected_epochs(e1: int, e2: int, e3: int, prune_events: int) -> int:
    """Total epoch count implied by the schedule for a given number of prune events."""
    if prune_events == 0:
        return e1 + e3
    last = first_prune_epoch(e1, e2) + e2 * (prune_events - 1)
    return last + 1 + e3


@dataclass
class RunResult:
    net: MaskedNetwork
    metrics: list[EpochMetrics] = field(default_factory=list)
    curvature: list[dict] = field(default_factory=list)
    sensitivity: list[dict] = field(default_factory=list)
    prune_events: int = 0
    infeasible: bool = False
    checkpoints: list[Path] = field(default_factory=list)


def hgnp_run(
    net: MaskedNetwork,
    train: Dataset,
    val: Dataset | None,
    cfg: RunConfig,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Train E1 epochs, then prune every E2 epochs until sparsity reaches the target, then E3 more.

    The loop follows the pseudocode literally: at the top of an epoch with
    ``epoch >= E1`` and ``epoch % E2 == 0`` a prune event happens, then the
    epoch is trained. Pruning stops early, flagging ``infeasible``, when no
    neuron can be removed without emptying a layer.
    """
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state = TrainState(net.copy())
    result = RunResult(state.net)
    kappa = sparsity(state.net)

    def run_epoch(prune_event: bool):
        metrics, est = train_epoch(state, train, cfg, val)
        metrics.prune_event = prune_event
        result.metrics.append(metrics)
        result.curvature.extend(curvature_rows(metrics.epoch, est, cfg.bound))
        log.info(
            "epoch %d loss %.4f rho %.4g acc %.4f kappa %.4f%s",
            metrics.epoch, metrics.train_loss, metrics.rho, metrics.val_accuracy, metrics.kappa,
            " [prune]" if prune_event else "",
        )

    while state.epoch < cfg.e1 or kappa > cfg.target_sparsity:
        event = False
        if state.epoch >= cfg.e1 and state.epoch % cfg.e2 == 0:
            decision, rows = prune_step(state, train, cfg)
            result.sensitivity.extend(rows)
            if not decision.neurons:
                result.infeasible = True
                log.warning("epoch %d: no neuron can be pruned; stopping at kappa %.4f", state.epoch, kappa)
                break
            if decision.shortfall:
                log.warning("epoch %d: pruned %d of %d requested neurons", state.epoch, len(decision.neurons), cfg.prune_count)
            event = True
            result.prune_events += 1
            kappa = sparsity(state.net)
            if out is not None:
                path = out / f"ckpt_{state.epoch}.hgnp"
                checkpoint.save(state.net, path)
                result.checkpoints.append(path)
        run_epoch(event)
    for _ in range(cfg.e3):
        run_epoch(False)

    final = state.net if cfg.compact_on_prune else compact(state.net)
    result.net = final
    if out is not None:
        path = out / f"ckpt_{state.epoch}.hgnp"
        checkpoint.save(final, path)
        result.checkpoints.append(path)
        write_csv(out / "metrics.csv", EpochMetrics.FIELDS, [metrics_row(m) for m in result.metrics])
        write_csv(out / "curvature.csv", CURVATURE_FIELDS, result.curvature)
        write_csv(out / "sensitivity.csv", SENSITIVITY_FIELDS, result.sensitivity)
    return result


def train_fixed(net: MaskedNetwork, train: Dataset, val: Dataset | None, cfg: RunConfig, epochs: int):
    """Plain repeated ``train_epoch`` with no pruning; returns ``(state, metrics)``."""
    cfg.validate()
    state = TrainState(net.copy())
    history = [train_epoch(state, train, cfg, val)[0] for _ in range(epochs)]
    return state, history


CURVATURE_FIELDS = ("epoch", "layer", "lambda_psi", "lambda_gamma", "lambda_block", "rho", "penalty")
SENSITIVITY_FIELDS = ("epoch", "layer", "neuron", "raw", "normalized", "pruned")


def metrics_row(m: EpochMetrics) -> dict:
    row = {k: getattr(m, k) for k in EpochMetrics.FIELDS}
    row["prune_event"] = int(m.prune_event)
    return row


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def read_metrics(path: str | Path) -> list[dict]:
    """Parse a metrics.csv; raises ``ValueError`` naming the offending row."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        missing = [c for c in ("kappa", "val_accuracy") if c not in header]
        if missing:
            raise ValueError(f"{path}: row 1 lacks columns {missing}")
        rows = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append({k: float(v) for k, v in zip(header, row)})
            except ValueError:
                raise ValueError(f"{path}: row {rownum} has a non-numeric cell") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def config_dict(cfg: RunConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
