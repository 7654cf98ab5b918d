"""Central finite-difference gradient oracle shared by the gradient tests."""

import torch


@torch.no_grad()
def numeric_grad(fn, inputs, eps=1e-6):
    """Central differences of scalar ``fn(*inputs)`` w.r.t. every input tensor."""
    grads = []
    for x in inputs:
        g = torch.zeros_like(x)
        flat, gflat = x.view(-1), g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            plus = fn(*inputs).item()
            flat[i] = orig - eps
            minus = fn(*inputs).item()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grad(fn, inputs):
    inputs = [x.detach().requires_grad_(True) for x in inputs]
    return list(torch.autograd.grad(fn(*inputs), inputs, allow_unused=True))


def relative_error(fn, inputs, eps=1e-6):
    """max |analytic - numeric| / max |numeric| over all inputs (float64 tensors)."""
    inputs = [x.detach().clone() for x in inputs]
    analytic = analytic_grad(fn, inputs)
    numeric = numeric_grad(fn, inputs, eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = torch.zeros_like(n) if a is None else a
        scale = max(n.abs().max().item(), 1e-12)
        worst = max(worst, (a - n).abs().max().item() / scale)
    return worst


def projected(module_fn, out_shape, seed=1):
    """Scalar loss <w, f(...)> with a fixed random projection w."""
    w = torch.randn(out_shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    return lambda *xs: (module_fn(*xs) * w).sum()
