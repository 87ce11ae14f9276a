"""Sparsity/accuracy curves, their areas, and a Lasso model for switch thresholds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Switching thresholds (kappa) reported for the four full-scale benchmarks.
REFERENCE_THRESHOLDS = {
    "AlexNet/Flowers-102": 0.910,
    "ResNet-18/Birds-200": 0.480,
    "VGG-16/Cifar-10": 0.878,
    "ResNet-18/Cifar-10": 0.878,
}

FEATURE_NAMES = (
    "train_samples",
    "val_samples",
    "input_dim",
    "classes",
    "conv_layers",
    "linear_layers",
    "params",
    "mean_kernel_size",
    "kernel_count",
)


@dataclass(frozen=True)
class CurvePoint:
    kappa: float
    accuracy: float


@dataclass
class ExperimentRecord:
    features: np.ndarray
    threshold: float | None = None


def auc(curve: list[CurvePoint]) -> float:
    """Trapezoidal area under accuracy as a function of kappa."""
    if len(curve) < 2:
        raise ValueError("need at least two points")
    pts = sorted(curve, key=lambda p: p.kappa)
    k = np.array([p.kappa for p in pts])
    if np.any(np.diff(k) == 0):
        raise ValueError("duplicate kappa in curve")
    a = np.array([p.accuracy for p in pts])
    return float(np.sum(np.diff(k) * (a[1:] + a[:-1]) / 2.0))


def curve_from_metrics(rows: list[dict]) -> list[CurvePoint]:
    """One point per distinct kappa: the last recorded accuracy at that sparsity."""
    last: dict[float, float] = {}
    for r in rows:
        last[float(r["kappa"])] = float(r["val_accuracy"])
    return [CurvePoint(k, a) for k, a in sorted(last.items())]


def hybrid_curve(baseline: list[CurvePoint], hgnp: list[CurvePoint], threshold: float) -> list[CurvePoint]:
    """Baseline points above ``threshold``, HGNP points at or below it."""
    pts = [p for p in baseline if p.kappa > threshold] + [p for p in hgnp if p.kappa <= threshold]
    return sorted(pts, key=lambda p: p.kappa)


def experiment_features(net, train_samples: int, val_samples: int, classes: int) -> np.ndarray:
    """Dataset and architecture descriptors in ``FEATURE_NAMES`` order."""
    convs = [net.layers[i] for i in net.param_layers if net.layers[i].kind == "conv2d"]
    dense = [net.layers[i] for i in net.param_layers if net.layers[i].kind == "dense"]
    sizes = [s.kernel[0] * s.kernel[1] for s in convs]
    return np.array(
        [
            train_samples,
            val_samples,
            int(np.prod(net.input_shape)),
            classes,
            len(convs),
            len(dense),
            net.param_count,
            float(np.mean(sizes)) if sizes else 0.0,
            sum(s.fan_out for s in convs),
        ],
        dtype=np.float64,
    )


@dataclass
class LassoModel:
    coef: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray
    objective: list[float] = field(default_factory=list)
    sweeps: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.mean.size:
            raise ValueError(f"expected {self.mean.size} features, got {X.shape[1]}")
        Z = (X[:, self.keep] - self.mean[self.keep]) / self.scale[self.keep]
        return Z @ self.coef[self.keep] + self.intercept


def standardize(X: np.ndarray):
    """Zero-mean, unit-variance columns; constant columns are flagged in ``keep``."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    keep = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    Z = np.zeros_like(X)
    Z[:, keep] = (X[:, keep] - mean[keep]) / scale[keep]
    return Z, mean, np.where(keep, scale, 1.0), keep


def soft_threshold(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def lasso_objective(Z, y, beta, b, lam) -> float:
    r = y - Z @ beta - b
    return float(r @ r / (2 * len(y)) + lam * np.abs(beta).sum())


def critical_lambda(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty at which every coefficient is zero."""
    Z, *_ = standardize(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    return float(np.max(np.abs(Z.T @ (y - y.mean()))) / len(y))


def fit_lasso(X: np.ndarray, y: np.ndarray, lam: float, tol: float = 1e-9, max_sweeps: int = 100_000) -> LassoModel:
    """Cyclic coordinate descent on ``(1/2n)||y - Z b - c||^2 + lam ||b||_1``.

    ``Z`` is ``X`` standardised column-wise; coefficients are reported on that
    scale. Stops when no coefficient moves by ``tol`` or more in a sweep.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.size == 0:
        raise ValueError("empty feature matrix")
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} rows but {y.size} responses")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in X or y")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n, p = X.shape
    Z, mean, scale, keep = standardize(X)
    b = float(y.mean())
    beta = np.zeros(p)
    r = y - b
    cols = np.flatnonzero(keep)
    history = [lasso_objective(Z, y, beta, b, lam)]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in cols:
            old = beta[j]
            zj = Z[:, j]
            rho = zj @ r / n + old
            new = soft_threshold(rho, lam)
            if new != old:
                r -= zj * (new - old)
                beta[j] = new
                biggest = max(biggest, abs(new - old))
        obj = lasso_objective(Z, y, beta, b, lam)
        if obj > history[-1] + 1e-12 * max(1.0, abs(history[-1])):
            raise RuntimeError(f"objective increased in sweep {sweeps}: {history[-1]} -> {obj}")
        history.append(obj)
        if biggest < tol:
            break
    return LassoModel(beta, b, mean, scale, keep, history, sweeps)


def predict_threshold(model: LassoModel, features: np.ndarray) -> float:
    """Predicted switching sparsity, clamped to [0.01, 0.99]."""
    features = np.asarray(features, dtype=np.float64).ravel()
    if features.size != model.mean.size:
        raise ValueError(f"expected {model.mean.size} features, got {features.size}")
    return float(np.clip(model.predict(features[None, :])[0], 0.01, 0.99))
