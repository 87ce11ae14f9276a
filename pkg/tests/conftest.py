import numpy as np
import pytest

from hgnp.network import conv2d, dense, flatten, forward, init_network, loss_and_grad, relu, residual_add


def fd_gradient(f, w, h=1e-5):
    """Central-difference gradient of a scalar function of a flat vector."""
    g = np.zeros_like(w)
    for k in range(w.size):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def fd_hessian(grad_fn, w, h=1e-5):
    """Dense Hessian from central differences of an analytic gradient, symmetrised."""
    n = w.size
    H = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        H[:, k] = (grad_fn(w + e) - grad_fn(w - e)) / (2 * h)
    return (H + H.T) / 2


def random_mlp(rng, max_params=200, depth=None):
    """Random dense/ReLU chain with at most ``max_params`` parameters."""
    while True:
        depth_ = depth or int(rng.integers(1, 4))
        widths = [int(rng.integers(2, 7)) for _ in range(depth_ + 1)]
        specs = []
        for a, b in zip(widths[:-1], widths[1:]):
            specs += [dense(a, b), relu()]
        specs = specs[:-1]
        net = init_network(specs, int(rng.integers(1 << 30)))
        if net.param_count <= max_params:
            return net


def random_masks(net, rng, p=0.3):
    out = net.copy()
    for l in out.maskable_layers:
        m = rng.random(out.masks[l].size) > p
        if not m.any():
            m[rng.integers(m.size)] = True
        out.masks[l] = m
    return out


def residual_conv_net(seed=0, channels=8):
    specs = [
        conv2d(1, channels, (3, 3)),
        relu(),
        conv2d(channels, channels, (3, 3)),
        residual_add(1),
        relu(),
        flatten(),
        dense(channels * 16, 3),
    ]
    return init_network(specs, seed, (1, 4, 4))


def perturb_biases(net, rng, scale=0.3):
    """Give every bias a random value so ReLU kinks are not hit at zero inputs."""
    out = net.copy()
    for i in out.param_layers:
        out.biases[i] = rng.normal(0, scale, out.biases[i].shape)
    return out


def loss_of(net, x, y, kind):
    def f(w):
        return loss_and_grad(net.with_flat(w), x, y, kind)[0]

    return f


def phi_gradient_oracle(net, x, y, kind, v, h=1e-3):
    """Gradient of w -> v' H(w) v with H from a dense finite-difference Hessian."""
    _, tr = forward(net, x)
    gates = tr.gates()

    def grad(w):
        return loss_and_grad(net.with_flat(w), x, y, kind, gates=gates, masks=tr.masks)[1]

    def phi(w):
        return v @ fd_hessian(grad, w, 1e-4) @ v

    w0 = net.flat_params()
    out = np.zeros_like(w0)
    for k in range(w0.size):
        e = np.zeros_like(w0)
        e[k] = h
        out[k] = (phi(w0 + e) - phi(w0 - e)) / (2 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
