"""Kronecker-factored curvature blocks and the spectral-radius hinge penalty.

Each parametric layer gets a block ``Psi (x) Gamma`` where ``Psi`` is the second
moment of the layer input (with a constant 1 appended for the bias) and
``Gamma`` the second moment of the per-sample loss gradient at the layer's
pre-activation. Block eigenpairs follow from the factor eigenpairs, so no
matrix larger than a single factor is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import EigenPair, kron_vec, quadratic_form, sym_top_eigenpair
from .network import (
    BatchTrace,
    MaskedNetwork,
    backward,
    flat_grad,
    forward,
    input_alive,
)

DAMPING = 1e-8


@dataclass
class KfacBlock:
    layer: int
    psi: np.ndarray
    gamma: np.ndarray
    in_index: np.ndarray
    out_index: np.ndarray
    sample_count: int
    eig_psi: EigenPair | None = None
    eig_gamma: EigenPair | None = None
    eig_block: EigenPair | None = None


@dataclass
class SpectralEstimate:
    rho: float
    argmax_layer: int
    v_block: np.ndarray
    blocks: list[KfacBlock] = field(default_factory=list)

    @property
    def block(self) -> KfacBlock:
        return next(b for b in self.blocks if b.layer == self.argmax_layer)


def _input_coords(net: MaskedNetwork, layer: int, alive_in: np.ndarray) -> np.ndarray:
    s = net.layers[layer]
    chans = np.flatnonzero(alive_in)
    if s.kind == "dense":
        return chans
    k = s.kernel[0] * s.kernel[1]
    return (chans[:, None] * k + np.arange(k)[None, :]).ravel()


def layer_factors(net: MaskedNetwork, trace: BatchTrace, layer: int) -> KfacBlock:
    """Psi and Gamma of one parametric layer from a complete trace."""
    s = net.layers[layer]
    n = trace.batch_size
    if n == 0:
        raise ValueError("empty batch")
    if layer not in trace.g:
        raise ValueError("trace has no pre-activation gradients; run backward first")
    alive_in = input_alive(net, trace.alive)[layer]
    out_index = np.flatnonzero(trace.alive[layer])
    if out_index.size == 0:
        raise ValueError(f"layer {layer}: every neuron is masked")
    in_index = _input_coords(net, layer, alive_in)
    if s.kind == "dense":
        a = trace.inputs[layer][:, in_index]
        g = trace.g[layer][:, out_index]
        positions = 1
    else:
        cols = trace.patches[layer]
        a = cols.reshape(-1, cols.shape[-1])[:, in_index]
        g = trace.g[layer].transpose(0, 2, 3, 1).reshape(-1, s.fan_out)[:, out_index]
        positions = cols.shape[1] * cols.shape[2]
    a = np.hstack([a, np.ones((a.shape[0], 1))])
    psi = a.T @ a / (n * positions)
    gamma = g.T @ g / n
    return KfacBlock(layer, psi, gamma, in_index, out_index, n)


def accumulate_factors(net: MaskedNetwork, trace: BatchTrace) -> list[KfacBlock]:
    """One block per parametric layer, restricted to alive units."""
    return [layer_factors(net, trace, i) for i in net.param_layers]


def _damped_top(S: np.ndarray, tol: float, method: str) -> EigenPair:
    # shift, solve, unshift: the ridge only steadies degenerate factors
    pair = sym_top_eigenpair(S + DAMPING * np.eye(S.shape[0]), tol=tol, method=method)
    return EigenPair(pair.value - DAMPING, pair.vector)


def block_spectrum(blocks: list[KfacBlock], tol: float = 1e-10, method: str = "lapack") -> SpectralEstimate:
    """Fill every block's eigenpairs and pick the block of largest |lambda|."""
    if not blocks:
        raise ValueError("no curvature blocks")
    best = None
    for b in blocks:
        if not (np.all(np.isfinite(b.psi)) and np.all(np.isfinite(b.gamma))):
            raise ValueError(f"layer {b.layer}: non-finite curvature factors")
        b.eig_psi = _damped_top(b.psi, tol, method)
        b.eig_gamma = _damped_top(b.gamma, tol, method)
        b.eig_block = EigenPair(
            b.eig_psi.value * b.eig_gamma.value,
            kron_vec(b.eig_psi.vector, b.eig_gamma.vector),
        )
        if best is None or abs(b.eig_block.value) > abs(best.eig_block.value):
            best = b
    return SpectralEstimate(abs(best.eig_block.value), best.layer, best.eig_block.vector, blocks)


def hinge_penalty(rho: float, bound: float) -> float:
    if bound < 0:
        raise ValueError("spectral bound must be non-negative")
    return max(0.0, rho - bound)


def block_direction(net: MaskedNetwork, block: KfacBlock, v_block: np.ndarray) -> np.ndarray:
    """Embed a block eigenvector into the flat parameter vector (zeros elsewhere).

    Block coordinate ``i * len(out) + j`` is input coordinate ``i`` (the last
    one being the bias) of output neuron ``j``.
    """
    p, q = block.in_index.size, block.out_index.size
    V = np.asarray(v_block).reshape(p + 1, q)
    flat = np.zeros(net.param_count)
    k = 0
    for i in net.param_layers:
        W = net.weights[i]
        nw = W.size
        if i == block.layer:
            Wdir = np.zeros((W.shape[0], nw // W.shape[0]))
            Wdir[np.ix_(block.out_index, block.in_index)] = V[:p].T
            flat[k : k + nw] = Wdir.ravel()
            flat[k + nw + block.out_index] = V[p]
            break
        k += nw + net.biases[i].size
    return flat


def kfac_spectrum(net, x, targets, loss_kind, tol=1e-10, trace=None) -> SpectralEstimate:
    """Forward, backward and block spectrum for one batch."""
    if trace is None:
        _, trace = forward(net, x)
        backward(net, trace, targets, loss_kind)
    return block_spectrum(accumulate_factors(net, trace), tol=tol)


def third_directional(grad_fn, w: np.ndarray, v: np.ndarray, step: float | None = None) -> np.ndarray:
    """Second central difference of ``grad_fn`` along ``v``: ``D^3 f[v, v, .]`` at ``w``.

    This is the gradient of ``w -> v' H(w) v`` with ``v`` held fixed. The
    default step ``eps**0.25 * (1 + max|w|)`` balances truncation against
    cancellation for a second difference.
    """
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if step is None:
        step = np.finfo(np.float64).eps ** 0.25 * (1.0 + np.max(np.abs(w)))
    if np.array_equal(w + step * v, w):
        raise FloatingPointError("finite-difference step underflows against the weights")
    out = (grad_fn(w + step * v) - 2.0 * grad_fn(w) + grad_fn(w - step * v)) / step**2
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite penalty gradient")
    return out


def penalty_gradient(
    net: MaskedNetwork,
    x: np.ndarray,
    targets: np.ndarray,
    loss_kind: str,
    direction: np.ndarray,
    trace: BatchTrace | None = None,
    step: float | None = None,
) -> np.ndarray:
    """Gradient of ``w -> v' H(w) v`` for a fixed unit direction ``v``.

    ReLU gates and pool winners are frozen at the current weights so the
    differences in ``third_directional`` never straddle a kink.
    """
    v = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError("direction must be a unit vector")
    if trace is None:
        _, trace = forward(net, x)
        backward(net, trace, targets, loss_kind)
    gates = trace.gates()

    def grad_at(w):
        shifted = net.with_flat(w)
        _, tr = forward(shifted, x, masks=trace.masks, gates=gates)
        backward(shifted, tr, targets, loss_kind)
        return flat_grad(shifted, tr)

    return third_directional(grad_at, net.flat_params(), v, step)


def measure_rho(net: MaskedNetwork, x: np.ndarray, targets: np.ndarray, loss_kind: str, tol: float = 1e-10):
    """K-FAC spectral radius over a whole dataset (one big batch)."""
    est = kfac_spectrum(net, x, targets, loss_kind, tol=tol)
    return est


def block_quadratic(block: KfacBlock, eig_psi: EigenPair, eig_gamma: EigenPair) -> float:
    """``(vPsi' Psi vPsi) * (vGamma' Gamma vGamma)`` with externally fixed vectors."""
    return quadratic_form(block.psi, eig_psi.vector) * quadratic_form(block.gamma, eig_gamma.vector)


class FactorAverage:
    """Exponential moving average of K-FAC factors across mini-batches.

    Averages reset for a layer whenever its factor shapes change (after a
    prune event).
    """

    def __init__(self, decay: float):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self._state: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def update(self, blocks: list[KfacBlock]) -> list[KfacBlock]:
        for b in blocks:
            prev = self._state.get(b.layer)
            if prev is not None and prev[0].shape == b.psi.shape and prev[1].shape == b.gamma.shape:
                b.psi = self.decay * prev[0] + (1 - self.decay) * b.psi
                b.gamma = self.decay * prev[1] + (1 - self.decay) * b.gamma
            self._state[b.layer] = (b.psi, b.gamma)
        return blocks


def curvature_rows(epoch: int, est: SpectralEstimate, bound: float) -> list[dict]:
    pen = hinge_penalty(est.rho, bound)
    return [
        {
            "epoch": epoch,
            "layer": b.layer,
            "lambda_psi": b.eig_psi.value,
            "lambda_gamma": b.eig_gamma.value,
            "lambda_block": b.eig_block.value,
            "rho": est.rho,
            "penalty": pen,
        }
        for b in est.blocks
    ]
