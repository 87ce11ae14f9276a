"""Acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line and the collected lines are repeated
in the terminal summary. Run directly with ``python3 tests/test_acceptance.py``.
"""

import functools
import sys
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from hgnp import checkpoint
from hgnp.analysis import critical_lambda, fit_lasso, standardize
from hgnp.cli import main as cli_main
from hgnp.curvature import KfacBlock, block_direction, block_spectrum, kfac_spectrum, penalty_gradient
from hgnp.data import Dataset, synth_gaussian_blobs, train_val_split
from hgnp.network import compact, dense, forward, init_network, loss_and_grad, relu, residual_groups
from hgnp.sensitivity import exact_scores, sparsity, taylor_scores
from hgnp.trainer import RunConfig, expected_epochs, hgnp_run, read_metrics, train_fixed

from conftest import fd_gradient, loss_of, perturb_biases, phi_gradient_oracle, random_masks, random_mlp, residual_conv_net

RESULTS: list[str] = []


def criterion(number, title, budget=None):
    """Record PASS/FAIL for a criterion; a runtime budget in seconds is part of the check."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - start
                if budget is not None:
                    assert elapsed < budget, f"took {elapsed:.1f} s, budget {budget} s"
            except BaseException as exc:
                elapsed = time.perf_counter() - start
                line = f"FAIL {number:>2} {title} ({elapsed:.1f} s): {exc}".splitlines()[0]
                RESULTS.append(line)
                print(line)
                raise
            line = f"PASS {number:>2} {title} ({elapsed:.1f} s) {detail}".rstrip()
            RESULTS.append(line)
            print(line)

        return run

    return wrap


def random_psd(rng, n):
    A = rng.normal(size=(n + 1, n))
    return A.T @ A


def blob_split(seed, k=10, dim=20, samples=3000, separation=4.5):
    return train_val_split(synth_gaussian_blobs(k, dim, samples, separation, seed=seed), 0.25, seed)


def mlp(widths, seed):
    specs = []
    for a, b in zip(widths[:-1], widths[1:]):
        specs += [dense(a, b), relu()]
    return init_network(specs[:-1], seed)


# 1 -----------------------------------------------------------------------------------


@criterion(1, "Kronecker eigen oracle", budget=5)
def test_kronecker_eigen_oracle():
    rng = np.random.default_rng(1)
    worst_val, worst_cos = 0.0, 1.0
    for _ in range(50):
        p, q = (int(n) for n in rng.integers(1, 7, size=2))
        psi, gamma = random_psd(rng, p), random_psd(rng, q)
        block = KfacBlock(0, psi, gamma, np.arange(p - 1), np.arange(q), 1)
        est = block_spectrum([block])
        vals, vecs = np.linalg.eigh(np.kron(psi, gamma))
        worst_val = max(worst_val, abs(est.rho - vals[-1]) / vals[-1])
        worst_cos = min(worst_cos, abs(est.v_block @ vecs[:, -1]))
    assert worst_val <= 1e-8, f"eigenvalue relative error {worst_val:.2e}"
    assert worst_cos >= 1 - 1e-8, f"eigenvector cosine {worst_cos!r}"
    return f"max rel err {worst_val:.1e}, min cosine 1-{1 - worst_cos:.1e}"


# 2 -----------------------------------------------------------------------------------


@criterion(2, "gradient correctness", budget=30)
def test_gradient_correctness():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        net = perturb_biases(random_mlp(rng, max_params=200), rng)
        k = net.layers[net.param_layers[-1]].fan_out
        x = rng.normal(size=(5, net.input_shape[0]))
        y = rng.integers(0, k, size=5)
        for kind in ("cross_entropy", "mse"):
            _, g = loss_and_grad(net, x, y, kind)
            fd = fd_gradient(loss_of(net, x, y, kind), net.flat_params())
            err = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-7)
            worst = max(worst, float(err.max()))
    assert worst <= 1e-5, f"max relative error {worst:.2e}"
    return f"max rel err {worst:.1e}"


# 3 -----------------------------------------------------------------------------------


@criterion(3, "penalty-gradient oracle")
def test_penalty_gradient_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(10):
        kind = ("cross_entropy", "mse")[i % 2]
        # at least one ReLU; a lone dense layer under mse is the quadratic case below
        net = perturb_biases(random_mlp(rng, max_params=60, depth=int(rng.integers(2, 4))), rng)
        k = net.layers[net.param_layers[-1]].fan_out
        x = rng.normal(size=(6, net.input_shape[0]))
        y = rng.integers(0, k, size=6)
        est = kfac_spectrum(net, x, y, kind)
        v = block_direction(net, est.block, est.v_block)
        got = penalty_gradient(net, x, y, kind, v)
        want = phi_gradient_oracle(net, x, y, kind, v)
        worst = max(worst, float(np.linalg.norm(got - want) / np.linalg.norm(want)))
    assert worst <= 1e-3, f"relative error {worst:.2e}"

    # a linear network under a squared loss has a constant Hessian
    net = init_network([dense(3, 2)], 0)
    x, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    est = kfac_spectrum(net, x, t, "mse")
    flat = np.linalg.norm(penalty_gradient(net, x, t, "mse", block_direction(net, est.block, est.v_block)))
    assert flat <= 1e-6, f"quadratic gradient norm {flat:.2e}"
    return f"max rel err {worst:.1e}, quadratic norm {flat:.1e}"


# 4 -----------------------------------------------------------------------------------


@criterion(4, "Taylor vs exact sensitivity", budget=60)
def test_taylor_vs_exact():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(5):
        net = perturb_biases(init_network([dense(4, 6), dense(6, 5), dense(5, 3)], int(rng.integers(1000))), rng)
        net = random_masks(net, rng, 0.2)
        x, t = rng.normal(size=(8, 4)), rng.normal(size=(8, 3))
        tay = taylor_scores(net, x, t, "linear")
        ex = exact_scores(net, x, t, "linear")
        for l in net.maskable_layers:
            alive = net.masks[l]
            a, b = tay.raw[l][alive], ex.raw[l][alive]
            worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(b, 1e-12))))
    assert worst <= 1e-6, f"linear-network relative error {worst:.2e}"

    # tiny MLP trained to a converged point, scored on one pruning-sized batch
    train, _ = train_val_split(synth_gaussian_blobs(4, 6, 600, 3.0, seed=0), 0.25, 0)
    state, _ = train_fixed(mlp([6, 16, 4], 0), train, None, RunConfig(mu=0.0, lr=0.05, batch_size=32), 50)
    x, y = train.inputs[:32], train.labels[:32]
    tay = taylor_scores(state.net, x, y, "cross_entropy").raw[0]
    ex = exact_scores(state.net, x, y, "cross_entropy").raw[0]
    rho = float(spearmanr(tay, ex).statistic)
    assert rho >= 0.9, f"Spearman {rho:.3f} < 0.9 on the trained MLP (linear nets ok, max rel err {worst:.1e})"
    return f"linear max rel err {worst:.1e}, Spearman {rho:.3f}"


# 5 -----------------------------------------------------------------------------------


@criterion(5, "mask/compaction equivalence")
def test_mask_compaction_equivalence():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        residual = i % 4 == 3
        if residual:
            net = perturb_biases(residual_conv_net(int(rng.integers(1000)), channels=int(rng.integers(2, 6))), rng)
        else:
            net = perturb_biases(random_mlp(rng), rng)
        net = random_masks(net, rng, float(rng.uniform(0.1, 0.6)))
        if residual:
            # residual operands must keep equal alive counts
            net.masks[2] = net.masks[0].copy()
        x = rng.normal(size=(4, *net.input_shape))
        small = compact(net)
        worst = max(worst, float(np.max(np.abs(forward(net, x)[0] - forward(small, x)[0]))))
        assert sparsity(net) == sparsity(small), f"triple {i}: sparsity differs"
    assert worst <= 1e-12, f"max forward difference {worst:.2e}"
    return f"max diff {worst:.1e}"


# 6 -----------------------------------------------------------------------------------


@criterion(6, "flatness effect over paired seeds", budget=15 * 60)
def test_flatness_effect():
    pairs = []
    for seed in range(5):
        train, val = blob_split(seed)
        net = mlp([20, 128, 64, 10], seed)
        common = dict(lr=0.01, momentum=0.9, batch_size=64, seed=seed)
        flat, m_flat = train_fixed(net, train, val, RunConfig(mu=0.001, bound=0.0, **common), 200)
        base, m_base = train_fixed(net, train, val, RunConfig(mu=0.0, **common), 200)
        pairs.append((m_flat[-1].rho, m_base[-1].rho, m_flat[-1].val_accuracy, m_base[-1].val_accuracy))
    for s, (rf, rb, af, ab) in enumerate(pairs):
        print(f"  seed {s}: rho {rf:.5g} vs {rb:.5g}, accuracy {af:.4f} vs {ab:.4f}")
    base_accs = [p[3] for p in pairs]
    assert all(0.85 <= a <= 0.95 for a in base_accs), f"baseline accuracies {base_accs} outside [0.85, 0.95]"
    wins = sum(rf <= rb for rf, rb, _, _ in pairs)
    gaps = [abs(af - ab) for _, _, af, ab in pairs]
    assert wins >= 4, f"penalised rho lower in only {wins}/5 pairs"
    assert max(gaps) <= 0.02, f"accuracy gap {max(gaps):.4f} > 0.02"
    return f"rho lower in {wins}/5, max accuracy gap {max(gaps):.4f}"


# 7 -----------------------------------------------------------------------------------


@criterion(7, "end-to-end pruning schedule")
def test_end_to_end_schedule(tmp_path):
    train, val = blob_split(0)
    net = mlp([20, 128, 64, 10], 0)
    cfg = RunConfig(e1=5, e2=2, e3=10, target_sparsity=0.5, prune_count=12, lr=0.01, batch_size=64, seed=0)
    result = hgnp_run(net, train, val, cfg, tmp_path)
    rows = read_metrics(tmp_path / "metrics.csv")
    kappas = [r["kappa"] for r in rows]
    assert not result.infeasible
    assert 1 <= result.prune_events <= 10, f"{result.prune_events} prune events"
    assert all(b <= a for a, b in zip(kappas, kappas[1:])), "kappa increased"
    assert kappas[-1] <= 0.5, f"final kappa {kappas[-1]}"
    assert len(rows) == expected_epochs(5, 2, 10, result.prune_events), f"{len(rows)} metrics rows"

    twin, twin_metrics = train_fixed(net, train, val, cfg, len(rows))
    gap = abs(rows[-1]["val_accuracy"] - twin_metrics[-1].val_accuracy)
    assert gap <= 0.05, f"accuracy {rows[-1]['val_accuracy']:.4f} vs twin {twin_metrics[-1].val_accuracy:.4f}"
    return f"{result.prune_events} events, kappa {kappas[-1]:.4f}, {len(rows)} rows, accuracy gap {gap:.4f}"


# 8 -----------------------------------------------------------------------------------


@criterion(8, "residual grouping")
def test_residual_grouping(tmp_path):
    ds = synth_gaussian_blobs(3, 16, 240, 3.0, seed=8)
    images = Dataset(ds.inputs.reshape(-1, 1, 4, 4), ds.labels, 3)
    train, val = train_val_split(images, 0.25, 8)
    net = residual_conv_net(8, channels=8)
    assert residual_groups(net) == [[0, 2]]
    cfg = RunConfig(e1=2, e2=1, e3=1, prune_count=4, target_sparsity=0.4, lr=0.01, batch_size=32, seed=8)
    result = hgnp_run(net, train, val, cfg, tmp_path)
    assert result.prune_events >= 2
    counts = []
    for path in result.checkpoints:
        snap = checkpoint.load(path)
        a, b = int(snap.masks[0].sum()), int(snap.masks[2].sum())
        assert a == b, f"{path.name}: alive channels {a} vs {b}"
        assert forward(snap, val.inputs)[0].shape == (len(val), 3)
        counts.append(a)
    assert counts[-1] < 8
    return f"alive channels per event {counts}"


# 9 -----------------------------------------------------------------------------------


@criterion(9, "Lasso solver")
def test_lasso_solver():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(40, 5)) * [1, 10, 0.1, 3, 1] + [0, 5, 0, -2, 1]
    y = X @ [1.0, -0.2, 3.0, 0.5, 0.0] + rng.normal(size=40)
    Z, *_ = standardize(X)
    A = np.hstack([Z, np.ones((40, 1))])
    ols = np.linalg.solve(A.T @ A, A.T @ y)
    model = fit_lasso(X, y, 0.0, tol=1e-13)
    err = max(float(np.max(np.abs(model.coef - ols[:-1]))), abs(model.intercept - ols[-1]))
    assert err <= 1e-8, f"OLS mismatch {err:.2e}"

    lam = critical_lambda(X, y)
    assert np.all(fit_lasso(X, y, lam).coef == 0.0)
    assert np.all(fit_lasso(X, y, 1.5 * lam).coef == 0.0)

    Xp = rng.normal(size=(100, 6))
    yp = 2 * Xp[:, 0] + 0.1 * rng.normal(size=100)
    planted = fit_lasso(Xp, yp, 0.3).coef
    assert planted[0] > 1.0 and np.all(planted[1:] == 0.0), f"planted fit {planted}"
    return f"OLS err {err:.1e}"


# 10 ----------------------------------------------------------------------------------


RUN_CONFIG = """
[model]
layers = dense 8 16; relu; dense 16 8; relu; dense 8 4

[train]
lr = 0.02
prune_count = 4
e1 = 2
e2 = 2
e3 = 2
target_sparsity = 0.6
seed = 3

[data]
source = synthetic
classes = 4
dim = 8
samples = 300
separation = 3.0
"""


@criterion(10, "reproducibility and I/O")
def test_reproducibility(tmp_path):
    (tmp_path / "run.ini").write_text(RUN_CONFIG)
    assert cli_main(["train", "--config", str(tmp_path / "run.ini"), "--out", str(tmp_path / "a")]) == 0
    assert cli_main(["train", "--config", str(tmp_path / "a" / "config.echo"), "--out", str(tmp_path / "b")]) == 0
    first, second = (tmp_path / d / "metrics.csv" for d in ("a", "b"))
    assert first.read_bytes() == second.read_bytes(), "metrics.csv differs between runs"
    for path in sorted((tmp_path / "a").glob("ckpt_*.hgnp")):
        blob = path.read_bytes()
        assert checkpoint.to_bytes(checkpoint.load(path)) == blob, f"{path.name} round trip differs"
        reloaded = tmp_path / "copy.hgnp"
        checkpoint.save(checkpoint.from_bytes(blob), reloaded)
        assert reloaded.read_bytes() == blob
    return f"{len(read_metrics(first))} rows identical"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
