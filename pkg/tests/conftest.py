"""Shared helpers: finite-difference oracle and model builders used across tests."""
from __future__ import annotations

import numpy as np
import pytest

from robustlab.model import MlpConfig, MlpParams, forward_logits
from robustlab.tensor import Tape, Tensor, backward, scaled_softmax_cross_entropy, sum_all


def make_params(config: MlpConfig, weights, biases) -> MlpParams:
    return MlpParams(
        config=config,
        weights=tuple(Tensor(w) for w in weights),
        biases=tuple(Tensor(b) for b in biases),
    )


def random_params(rng: np.random.Generator, sizes, activation="tanh", scale=1.0) -> MlpParams:
    """Arbitrary-weight model (not Glorot) for attack/oracle tests."""
    config = MlpConfig(layer_sizes=tuple(sizes), activation=activation)
    weights = [scale * rng.standard_normal((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [scale * rng.standard_normal(b) for b in sizes[1:]]
    return make_params(config, weights, biases)


def linear_model(weight, bias, activation="relu") -> MlpParams:
    """Single affine layer: logits = x @ weight + bias."""
    w = np.asarray(weight, dtype=float)
    config = MlpConfig(layer_sizes=(w.shape[0], w.shape[1]), activation=activation)
    return make_params(config, [w], [np.asarray(bias, dtype=float)])


def total_loss(params: MlpParams, x: Tensor, y: np.ndarray, alpha: float) -> float:
    logits = forward_logits(params, x)
    return sum_all(scaled_softmax_cross_entropy(logits, y, alpha)).item()


def analytic_grads(params: MlpParams, x: Tensor, y: np.ndarray, alpha: float):
    """Tape gradients of the summed loss w.r.t. every parameter and the input."""
    tape = Tape()
    for leaf in params.leaves():
        tape.watch(leaf)
    tape.watch(x)
    logits = forward_logits(params, x, tape)
    loss = sum_all(scaled_softmax_cross_entropy(logits, y, alpha, tape), tape)
    grads = backward(tape, loss)
    return [grads.wrt(leaf).data for leaf in params.leaves()] + [grads.wrt(x).data]


def _rebuild(params: MlpParams, leaf_index: int, new_array: np.ndarray) -> MlpParams:
    tensors = list(params.leaves())
    tensors[leaf_index] = Tensor(new_array)
    weights = tuple(tensors[2 * i] for i in range(params.config.num_layers))
    biases = tuple(tensors[2 * i + 1] for i in range(params.config.num_layers))
    return MlpParams(config=params.config, weights=weights, biases=biases)


def _mp_total_loss(weights, biases, activation_kind, x_rows, y, alpha, mp):
    """Straight-line arbitrary-precision forward loss.

    Independent of the numpy implementation: plain Python loops over mpf
    scalars. Used to evaluate central differences where float64 rounding
    of the loss would drown the difference quotient.
    """
    total = mp.mpf(0)
    a = mp.mpf(float(alpha))
    n_layers = len(weights)
    for row, label in zip(x_rows, y):
        h = [mp.mpf(v) for v in row]
        for li, (w, b) in enumerate(zip(weights, biases)):
            out = []
            for jj in range(len(b)):
                acc = mp.mpf(b[jj])
                for kk in range(len(h)):
                    acc += h[kk] * mp.mpf(w[kk][jj])
                out.append(acc)
            if li != n_layers - 1:
                if activation_kind == "relu":
                    out = [v if v > 0 else mp.mpf(0) for v in out]
                else:
                    out = [mp.tanh(v) for v in out]
            h = out
        m = max(h)
        shifted = [a * (v - m) for v in h]
        lse = mp.log(mp.fsum(mp.e**s for s in shifted))
        total += lse - shifted[int(label)]
    return total


def fd_max_rel_error(
    params: MlpParams,
    x: Tensor,
    y: np.ndarray,
    alpha: float,
    h: float = 1e-5,
    grad_floor: float = 1e-8,
) -> float:
    """Central finite differences against tape gradients.

    Returns the max relative error over every coordinate (all parameters
    plus the input) whose analytic gradient exceeds grad_floor in
    magnitude. Coordinates where the float64 difference quotient is
    rounding-limited (loss magnitude times machine epsilon comparable to
    the quotient's target accuracy) are re-evaluated with an independent
    arbitrary-precision forward pass, keeping the oracle a true central
    difference instead of float64 noise.
    """
    import mpmath as mp

    grads = analytic_grads(params, x, y, alpha)
    n_param_leaves = 2 * params.config.num_layers
    leaves = list(params.leaves())
    worst = 0.0
    eps64 = np.finfo(np.float64).eps

    def losses_at(leaf_idx, plus, minus, shape, precise):
        if leaf_idx < n_param_leaves:
            pp = _rebuild(params, leaf_idx, plus.reshape(shape))
            pm = _rebuild(params, leaf_idx, minus.reshape(shape))
            xp = xm = x
        else:
            pp = pm = params
            xp, xm = Tensor(plus.reshape(shape)), Tensor(minus.reshape(shape))
        if not precise:
            return total_loss(pp, xp, y, alpha), total_loss(pm, xm, y, alpha)
        with mp.workdps(30):
            lp = _mp_total_loss(
                [w.data.tolist() for w in pp.weights], [b.data.tolist() for b in pp.biases],
                params.config.activation, xp.data.tolist(), y, alpha, mp,
            )
            lm = _mp_total_loss(
                [w.data.tolist() for w in pm.weights], [b.data.tolist() for b in pm.biases],
                params.config.activation, xm.data.tolist(), y, alpha, mp,
            )
            return lp, lm

    for leaf_idx, grad in enumerate(grads):
        base = leaves[leaf_idx].data if leaf_idx < n_param_leaves else x.data
        flat_grad = grad.reshape(-1)
        base_flat = base.reshape(-1)
        for j in range(base_flat.size):
            g = flat_grad[j]
            if abs(g) <= grad_floor:
                continue
            plus = base_flat.copy()
            minus = base_flat.copy()
            plus[j] += h
            minus[j] -= h
            spacing = plus[j] - minus[j]
            lp, lm = losses_at(leaf_idx, plus, minus, base.shape, precise=False)
            fd = (lp - lm) / spacing
            # float64 rounding of lp/lm bounds the quotient's noise
            noise = 4.0 * eps64 * (abs(lp) + abs(lm)) / spacing
            if noise > 0.2e-5 * max(abs(g), abs(fd)):
                lp, lm = losses_at(leaf_idx, plus, minus, base.shape, precise=True)
                fd = float((lp - lm) / mp.mpf(float(spacing)))
            rel = abs(g - fd) / max(abs(g), abs(fd))
            worst = max(worst, rel)
    return worst


def relu_preactivation_margin(params: MlpParams, x: Tensor) -> float:
    """Smallest |pre-activation| over all hidden relu units (inf for tanh).

    Finite differences straddle the relu kink when this is below the step
    size, so FD tests resample configurations with tiny margins.
    """
    if params.config.activation != "relu":
        return np.inf
    h = x.data
    margin = np.inf
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = h @ w.data + b.data
        if i == params.config.num_layers - 1:
            break
        margin = min(margin, float(np.abs(pre).min()))
        h = np.maximum(pre, 0.0)
    return margin


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
