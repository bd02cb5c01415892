"""Central finite-difference oracle over every entry of named torch tensors."""
import numpy as np
import torch


def numeric_grads(fn, tensors, eps):
    """fn() -> scalar tensor; tensors: dict name -> leaf tensor (perturbed in place)."""
    out = {}
    with torch.no_grad():
        for name, t in tensors.items():
            g = np.zeros(t.shape)
            flat = t.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(fn())
                flat[i] = orig - eps
                down = float(fn())
                flat[i] = orig
                g.flat[i] = (up - down) / (2 * eps)
            out[name] = g
    return out


def rel_errors(analytic, numeric, floor=1e-8):
    """Per-entry |a - n| / max(|a|, |n|, floor)."""
    errs = {}
    for name, n in numeric.items():
        a = np.asarray(analytic[name].detach().double().numpy()) if torch.is_tensor(analytic[name]) else analytic[name]
        errs[name] = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return errs


def max_rel_error(analytic, numeric, floor=1e-8):
    return max(float(e.max()) for e in rel_errors(analytic, numeric, floor).values())
