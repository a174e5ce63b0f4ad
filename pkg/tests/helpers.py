"""Shared oracles for the test suite."""

import numpy as np

from latentplan import autodiff as ad


def numeric_grad(f, params: dict, h: float = 1e-5) -> dict:
    """Central finite differences of scalar ``f(params)`` w.r.t. every entry."""
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr, dtype=np.float64)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            up = float(f(params))
            arr[i] = old - h
            down = float(f(params))
            arr[i] = old
            g[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def analytic_grad(f, params: dict) -> dict:
    leaves = ad.parameters(params)
    loss = f(leaves)
    ad.backward(loss)
    return {k: p.grad for k, p in leaves.items()}


def max_rel_error(a: dict, b: dict, floor: float = 1e-6) -> float:
    worst = 0.0
    for k in a:
        num = np.abs(a[k] - b[k])
        den = np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)
        worst = max(worst, float((num / den).max()))
    return worst


def naive_gmm_nll(pi, mu, sigma, z) -> float:
    """Direct mixture density sum, no log-space tricks."""
    total = 0.0
    for k in range(len(pi)):
        dens = 1.0
        for l in range(len(z)):
            dens *= np.exp(-0.5 * ((z[l] - mu[k, l]) / sigma[k, l]) ** 2) / (np.sqrt(2 * np.pi) * sigma[k, l])
        total += pi[k] * dens
    return -np.log(total)
