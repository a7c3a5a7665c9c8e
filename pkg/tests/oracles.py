"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written by a different route than the
library code: set arithmetic instead of matrix products, exhaustive
enumeration instead of iterative solvers, numeric differences instead of
hand-derived gradients. Slow is fine; these only run in tests.
"""

import itertools

import numpy as np

from taskpart import layer_shapes, masked_forward, masked_sites


def gram_by_counting(bits):
    """Pairwise sharing fractions computed with python sets, no matmul."""
    n_channels, n_tasks = bits.shape
    owned = [set(np.flatnonzero(bits[:, j]).tolist()) for j in range(n_tasks)]
    out = np.zeros((n_tasks, n_tasks))
    for i in range(n_tasks):
        for j in range(n_tasks):
            out[i, j] = len(owned[i] & owned[j]) / n_channels
    return out


def compositions(total, parts):
    """All nonnegative integer vectors of length `parts` summing to `total`."""
    if parts == 1:
        return np.full((1, 1), total, dtype=np.int64)
    bars = np.array(
        list(itertools.combinations(range(total + parts - 1), parts - 1)),
        dtype=np.int64,
    )
    starts = np.concatenate([np.zeros((len(bars), 1), np.int64), bars + 1], axis=1)
    ends = np.concatenate(
        [bars, np.full((len(bars), 1), total + parts - 1, np.int64)], axis=1
    )
    return ends - starts


def _constraint_rows(target):
    n = target.n_tasks
    m = 1 << n
    bits = ((np.arange(m)[:, None] >> np.arange(n)) & 1).astype(np.float64)
    rows, rhs = [], []
    for i in range(n):
        rows.append(bits[:, i])
        rhs.append(target.values[i, i])
    for i in range(n):
        for j in range(i + 1, n):
            rows.append(bits[:, i] * bits[:, j])
            rhs.append(target.values[i, j])
    return np.array(rows), np.array(rhs)


def grid_min_objective(target, resolution):
    """Exhaustive minimum of the fraction-fitting objective over a simplex grid.

    Enumerates every distribution over the 2^N channel-type fractions whose
    entries are multiples of 1/resolution. The returned value upper-bounds the
    true minimum (the grid rarely contains the exact optimizer).
    """
    counts = compositions(resolution, 1 << target.n_tasks)
    x = counts.astype(np.float64) / resolution
    rows, rhs = _constraint_rows(target)
    resid = x @ rows.T - rhs
    return float(np.min(np.sum(resid * resid, axis=1)))


def slsqp_min_objective(target, seed=0):
    """Same objective minimized by scipy's SLSQP instead of our solver."""
    from scipy.optimize import minimize

    rows, rhs = _constraint_rows(target)
    m = rows.shape[1]

    def objective(x):
        r = rows @ x - rhs
        return float(r @ r)

    def gradient(x):
        return 2.0 * rows.T @ (rows @ x - rhs)

    best = None
    rng = np.random.default_rng(seed)
    for trial in range(5):
        x0 = np.full(m, 1.0 / m) if trial == 0 else rng.dirichlet(np.ones(m))
        res = minimize(
            objective,
            x0,
            jac=gradient,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * m,
            constraints=[{"type": "eq", "fun": lambda x: np.sum(x) - 1.0}],
            options={"maxiter": 400, "ftol": 1e-14},
        )
        if best is None or res.fun < best:
            best = float(res.fun)
    return best


def pair_count_errors(n_channels):
    """All achievable N=2 sharing matrices at a given channel count.

    Returns (d1, d2, overlap) arrays, one entry per count vector
    (c_none, c_only1, c_only2, c_both) summing to n_channels.
    """
    counts = compositions(n_channels, 4)
    d1 = (counts[:, 1] + counts[:, 3]) / n_channels
    d2 = (counts[:, 2] + counts[:, 3]) / n_channels
    both = counts[:, 3] / n_channels
    return d1, d2, both


def best_pair_max_error(target, n_channels):
    """Exhaustive minimum of max elementwise error over all N=2 masks."""
    d1, d2, both = pair_count_errors(n_channels)
    t = target.values
    err = np.maximum.reduce(
        [np.abs(d1 - t[0, 0]), np.abs(d2 - t[1, 1]), np.abs(both - t[0, 1])]
    )
    return float(err.min())


def finite_difference_grads(weights, biases, x, target, forward_mask, backward_mask, step=1e-4):
    """Central-difference gradients of the masked MSE loss.

    Only entries allowed by the backward mask are probed; everything else
    stays zero, mirroring the contract under test.
    """

    def loss_at(ws, bs):
        out = masked_forward(ws, bs, x, forward_mask)
        diff = out - target
        return float(np.mean(diff * diff))

    n_layers = len(weights)
    weight_grads = [np.zeros_like(w) for w in weights]
    bias_grads = [np.zeros_like(b) for b in biases]
    for layer in range(n_layers):
        rows = np.ones(weights[layer].shape[0], dtype=bool)
        cols = np.ones(weights[layer].shape[1], dtype=bool)
        if backward_mask is not None:
            if layer < n_layers - 1:
                rows = backward_mask.astype(bool)
            if layer > 0:
                cols = backward_mask.astype(bool)
        for i in np.flatnonzero(rows):
            for j in np.flatnonzero(cols):
                ws = [w.copy() for w in weights]
                ws[layer][i, j] += step
                up = loss_at(ws, biases)
                ws[layer][i, j] -= 2 * step
                down = loss_at(ws, biases)
                weight_grads[layer][i, j] = (up - down) / (2 * step)
        for i in np.flatnonzero(rows):
            bs = [b.copy() for b in biases]
            bs[layer][i] += step
            up = loss_at(weights, bs)
            bs[layer][i] -= 2 * step
            down = loss_at(weights, bs)
            bias_grads[layer][i] = (up - down) / (2 * step)
    return weight_grads, bias_grads


def prune_network(weights, biases, keep, n_layers):
    """Physically remove masked channels at every masked boundary."""
    sites = set(masked_sites(n_layers))
    keep = keep.astype(bool)
    pruned_w, pruned_b = [], []
    for layer, (w, b) in enumerate(zip(weights, biases)):
        if layer - 1 in sites:
            w = w[:, keep]
        if layer in sites:
            w = w[keep, :]
            b = b[keep]
        pruned_w.append(w)
        pruned_b.append(b)
    return pruned_w, pruned_b


def lattice_network(rng, n_channels, input_dim, output_dim, n_layers, batch):
    """A network and batch whose values are multiples of 1/16.

    Products are then multiples of 1/256 and all partial sums stay exactly
    representable in binary floating point, so forward passes that differ
    only in summation order produce bit-identical outputs.
    """
    shapes = layer_shapes(n_channels, input_dim, output_dim, n_layers)
    weights = [rng.integers(-8, 9, s).astype(np.float64) / 16 for s in shapes]
    biases = [rng.integers(-8, 9, s[0]).astype(np.float64) / 16 for s in shapes]
    x = rng.integers(-8, 9, (batch, input_dim)).astype(np.float64) / 16
    return weights, biases, x
