"""Model builders and gradient-check drivers shared by several test modules."""

import numpy as np

from ardn.model import ModelConfig, build_model, denoise_backward, denoise_forward, forward_taps
from ardn.nn_layers import Mode
from ardn.tensor_core import finite_diff_grad
from ardn.training import masked_loss


def zero_model(config=None, dtype=np.float64):
    m = build_model(config or ModelConfig.reduced(4, 8), dtype=dtype)
    for c in m.convs:
        c.weights[:] = 0
        c.bias[:] = 0
    return m


def _randomise_affine(model, rs):
    """Move biases and BN affine terms off their init values.

    With zero biases, dead regions give ReLU inputs of exactly 0, where the
    loss is not differentiable and central differences disagree with any
    subgradient.
    """
    for conv in model.convs:
        conv.bias[:] = rs.uniform(-0.2, 0.2, conv.bias.shape)
    for bn in model.bns.values():
        bn.gamma[:] = rs.uniform(0.5, 1.5, bn.gamma.shape)
        bn.beta[:] = rs.uniform(-0.3, 0.3, bn.beta.shape)


KINK_MARGIN = 1e-4  # ten finite-difference steps


def relu_margin(model, noisy, mode=Mode.TRAIN):
    """Smallest |ReLU input| anywhere in the network for this input."""
    _, caches = forward_taps(model.copy(), noisy, mode)
    return min(float(np.abs(c.pre_relu).min()) for c in caches if c.pre_relu is not None)


def end_to_end_fd_errors(seed=0, border=4, mode=Mode.TRAIN, n_checks=6):
    """Largest relative error of analytic vs central-difference gradients for
    masked_loss(model(x)) over every trainable array and the input.

    ``n_checks`` coordinates are sampled per array; ``None`` checks them all.
    The test point is redrawn until every ReLU input is at least
    ``KINK_MARGIN`` from zero, so the loss is smooth within the FD step.
    """
    rs = np.random.default_rng(seed)
    while True:
        m = build_model(ModelConfig.reduced(4, 8), int(rs.integers(2**31)))
        _randomise_affine(m, rs)
        noisy = rs.uniform(-1, 1, (1, 1, 16, 16))
        if relu_margin(m, noisy, mode) >= KINK_MARGIN:
            break
    clean = rs.uniform(-1, 1, noisy.shape)
    params = m.parameters()

    def loss_of(model, x):
        # BN running stats are buffers; copy so FD evaluations do not drift them
        mm = model.copy()
        den = denoise_forward(mm, x, mode)[0]
        return masked_loss(clean, den, border)[0]

    den, _, _, cache = denoise_forward(m.copy(), noisy, mode)
    _, gden = masked_loss(clean, den, border)
    grads, gx = denoise_backward(m, gden, cache, need_input=True)

    errors = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size) if n_checks is None else rs.choice(flat.size, min(n_checks, flat.size), replace=False)
        num = np.empty(len(idx))
        for j, p in enumerate(idx):
            old = flat[p]
            flat[p] = old + 1e-5
            up = loss_of(m, noisy)
            flat[p] = old - 1e-5
            dn = loss_of(m, noisy)
            flat[p] = old
            num[j] = (up - dn) / 2e-5
        ana = grads[name].reshape(-1)[idx]
        # scale by the whole array: BN-normalised channels of a conv bias have a
        # true gradient of exactly 0, which would make a per-sample ratio noise/noise
        scale = max(np.abs(grads[name]).max(), np.abs(num).max(), 1e-8)
        errors[name] = np.abs(ana - num).max() / scale
    fx = finite_diff_grad(lambda v: loss_of(m, v), noisy)
    errors["input"] = np.abs(gx - fx).max() / max(np.abs(fx).max(), 1e-8)
    return errors
