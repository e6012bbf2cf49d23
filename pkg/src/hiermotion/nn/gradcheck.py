from __future__ import annotations

import torch
from torch import nn
from torch.func import functional_call


def grad_check(f, x: torch.Tensor, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between autodiff and central finite differences.

    ``f`` maps a tensor shaped like ``x`` to a scalar tensor. The relative
    error of each component is ``|a - n| / max(|a|, |n|, floor)``.
    """
    x = x.detach().to(torch.float64).clone()
    xg = x.clone().requires_grad_(True)
    out = f(xg)
    if out.numel() != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    auto = None
    if out.requires_grad:  # an output independent of x has a zero gradient
        (auto,) = torch.autograd.grad(out, xg, allow_unused=True)
    auto = torch.zeros_like(x) if auto is None else auto.detach()
    num = torch.zeros_like(x)
    flat, nflat = x.view(-1), num.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * h)
    denom = torch.maximum(torch.maximum(auto.abs(), num.abs()), torch.full_like(num, floor))
    return float(((auto - num).abs() / denom).max())


def grad_check_module(module: nn.Module, loss_fn, h: float = 1e-5, names=None) -> dict[str, float]:
    """Run :func:`grad_check` on each named parameter of a float64 module.

    ``loss_fn(module_call)`` receives a callable that evaluates the module
    with substituted parameters and must return a scalar.
    """
    params = {k: v.detach() for k, v in module.named_parameters()}
    errors = {}
    for name in names or params:
        def f(p, name=name):
            subs = dict(params)
            subs[name] = p
            return loss_fn(lambda *a, **kw: functional_call(module, subs, a, kw))
        errors[name] = grad_check(f, params[name], h)
    return errors
