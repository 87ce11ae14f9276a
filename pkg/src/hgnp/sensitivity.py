"""Neuron importance scores, per-layer normalisation and prune selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curvature import accumulate_factors, block_quadratic, block_spectrum, hinge_penalty, layer_factors
from .network import (
    MaskedNetwork,
    activation_index,
    backward,
    flat_param_alive,
    forward,
    residual_groups,
)

MASK_STEP = 1e-4


@dataclass
class SensitivityTable:
    """Scores per maskable layer; entries for masked neurons are NaN."""

    raw: dict[int, np.ndarray]
    normalized: dict[int, np.ndarray] | None = None
    groups: list[list[int]] = field(default_factory=list)

    def entries(self):
        """Yield ``(layer, neuron, raw, normalized)`` for every alive neuron."""
        for layer, scores in self.raw.items():
            norm = self.normalized[layer] if self.normalized is not None else None
            for j in np.flatnonzero(~np.isnan(scores)):
                yield layer, int(j), float(scores[j]), (float(norm[j]) if norm is not None else math.nan)


@dataclass
class PruneDecision:
    neurons: list[tuple[int, int]]
    group_counts: dict[int, int]
    kappa: float
    shortfall: bool = False


def penalized_loss(net, x, targets, loss_kind, mu=0.0, bound=0.0, tol=1e-10) -> float:
    """Data loss plus ``mu * max(0, rho - bound)`` with rho from K-FAC on the batch."""
    _, trace = forward(net, x)
    backward(net, trace, targets, loss_kind)
    if mu == 0.0:
        return trace.loss
    est = block_spectrum(accumulate_factors(net, trace), tol=tol)
    return trace.loss + mu * hinge_penalty(est.rho, bound)


def _empty_scores(net: MaskedNetwork) -> dict[int, np.ndarray]:
    return {l: np.where(net.masks[l], 0.0, np.nan) for l in net.maskable_layers}


def taylor_scores(net, x, targets, loss_kind, mu=0.0, bound=0.0, tol=1e-10) -> SensitivityTable:
    """First-order estimate of the loss change from zeroing each neuron.

    The score is ``|dL/dm|`` for a continuous mask ``m`` scaling the neuron's
    activation, evaluated at ``m = 1``. For the data loss this is the batch
    mean of ``dC/da * a`` (summed over spatial positions for channels) before
    the absolute value. When the hinge is active the spectral term adds
    ``mu * drho/dm``, taken by a central difference in ``m`` with activation
    gates frozen and the top eigenvectors held fixed.
    """
    _, trace = forward(net, x)
    backward(net, trace, targets, loss_kind)
    n = trace.batch_size
    scores = _empty_scores(net)
    deriv: dict[int, np.ndarray] = {}
    for l in net.maskable_layers:
        p = activation_index(net, l)
        prod = trace.act_grad[l] * trace.outs[p]
        axes = (0,) + tuple(range(2, prod.ndim))
        deriv[l] = prod.sum(axis=axes) / n

    if mu > 0.0:
        est = block_spectrum(accumulate_factors(net, trace), tol=tol)
        if est.rho > bound:
            blk = est.block
            gates = trace.gates()
            for l in net.maskable_layers:
                for j in np.flatnonzero(net.masks[l]):
                    q = []
                    for sgn in (1.0, -1.0):
                        masks = [None if m is None else m.astype(np.float64) for m in net.masks]
                        masks[l][j] += sgn * MASK_STEP
                        _, tr = forward(net, x, masks=masks, gates=gates)
                        backward(net, tr, targets, loss_kind)
                        q.append(block_quadratic(layer_factors(net, tr, blk.layer), blk.eig_psi, blk.eig_gamma))
                    deriv[l][j] += mu * (q[0] - q[1]) / (2 * MASK_STEP)

    for l in net.maskable_layers:
        alive = net.masks[l]
        scores[l][alive] = np.abs(deriv[l][alive])
    return SensitivityTable(scores, groups=residual_groups(net))


def exact_scores(net, x, targets, loss_kind, mu=0.0, bound=0.0, tol=1e-10) -> SensitivityTable:
    """``|L(m_j = 0) - L(m_j = 1)|`` by re-evaluating the loss per neuron."""
    base = penalized_loss(net, x, targets, loss_kind, mu, bound, tol)
    scores = _empty_scores(net)
    for l in net.maskable_layers:
        for j in np.flatnonzero(net.masks[l]):
            trial = net.copy()
            trial.masks[l][j] = False
            scores[l][j] = abs(penalized_loss(trial, x, targets, loss_kind, mu, bound, tol) - base)
    return SensitivityTable(scores, groups=residual_groups(net))


def normalize_per_layer(table: SensitivityTable) -> SensitivityTable:
    normalized = {}
    for l, raw in table.raw.items():
        alive = ~np.isnan(raw)
        norm = np.sqrt(np.sum(raw[alive] ** 2))
        out = np.full_like(raw, np.nan)
        out[alive] = raw[alive] / norm if norm > 0 else 0.0
        normalized[l] = out
    return SensitivityTable(table.raw, normalized, table.groups)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def select_prune(table: SensitivityTable, count: int, net: MaskedNetwork, groups=None) -> PruneDecision:
    """Choose ``count`` neurons with the smallest normalised scores.

    Every layer keeps at least one alive neuron. Layers in a residual group lose
    the same number of neurons: the rounded mean of what the unconstrained
    choice took from each member, each member giving up its own lowest scorers.
    The total is then topped up (or trimmed) on ungrouped layers to stay as
    close to ``count`` as the constraints allow; ``shortfall`` is set when it
    cannot be reached. Rounding a group up can overshoot ``count`` when no
    ungrouped pick is left to trim. Ties break on (layer, neuron).
    """
    if count < 1:
        raise ValueError("prune count must be at least 1")
    scores = table.normalized if table.normalized is not None else table.raw
    groups = residual_groups(net) if groups is None else groups
    group_of = {l: gi for gi, g in enumerate(groups) for l in g}
    alive = {l: int(net.masks[l].sum()) for l in net.maskable_layers}
    cands = sorted(
        (float(scores[l][j]), l, int(j)) for l in net.maskable_layers for j in np.flatnonzero(net.masks[l])
    )

    picks: dict[int, list] = {l: [] for l in net.maskable_layers}
    taken = 0
    for sc, l, j in cands:
        if taken == count:
            break
        if alive[l] - len(picks[l]) > 1:
            picks[l].append((sc, j))
            taken += 1

    by_layer = {l: [(sc, j) for sc, ll, j in cands if ll == l] for l in net.maskable_layers}
    group_counts = {}
    for gi, g in enumerate(groups):
        target = _round_half_up(sum(len(picks[l]) for l in g) / len(g))
        target = min(target, min(alive[l] for l in g) - 1)
        group_counts[gi] = target
        for l in g:
            picks[l] = by_layer[l][:target]

    total = sum(len(p) for p in picks.values())
    if total < count:
        for sc, l, j in cands:
            if total >= count:
                break
            if l in group_of:
                g = groups[group_of[l]]
                need = len(g)
                gi = group_of[l]
                if (sc, j) in picks[l] or count - total < need:
                    continue
                if all(alive[m] - group_counts[gi] > 1 for m in g):
                    group_counts[gi] += 1
                    for m in g:
                        picks[m] = by_layer[m][: group_counts[gi]]
                    total += need
            elif (sc, j) not in picks[l] and alive[l] - len(picks[l]) > 1:
                picks[l].append((sc, j))
                total += 1
    elif total > count:
        ungrouped = sorted(
            ((sc, l, j) for l, p in picks.items() if l not in group_of for sc, j in p), reverse=True
        )
        for sc, l, j in ungrouped:
            if total <= count:
                break
            picks[l].remove((sc, j))
            total -= 1

    neurons = sorted((l, j) for l, p in picks.items() for _, j in p)
    trial = apply_prune(net, neurons)
    return PruneDecision(neurons, group_counts, sparsity(trial), shortfall=total < count)


def apply_prune(net: MaskedNetwork, neurons) -> MaskedNetwork:
    out = net.copy()
    for l, j in neurons:
        out.masks[l][j] = False
    return out


def sparsity(net: MaskedNetwork) -> float:
    """Fraction of the original parameters still alive."""
    return float(flat_param_alive(net).sum()) / net.original_param_count
