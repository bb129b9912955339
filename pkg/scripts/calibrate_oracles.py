#!/usr/bin/env python3
"""Freeze the oracle thresholds used by the test suite.

This script deliberately does not import ``kcdo``: every quantity is
recomputed with plain numpy/scipy from the same data-generating protocol, so
the frozen numbers are an independent reference for the package.

Writes ``tests/data/oracle_thresholds.json`` with

- ``tau1``: 1.5 x median L1 error of self-reconstruction of U[0, 1]
  (N = M = 1000, Gaussian kernel with median bandwidth, schedule alpha),
- ``tau2``: 1.5 x median L1 error of the donut marginal prediction from an
  embedding of 10^4 uniform inputs (N = 2500, M = 2500).
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist
from scipy.stats import norm

A = B = 0.49
C_PRIME = 0.99999


def lower_median(D: np.ndarray) -> float:
    d = np.sort(D)
    return float(d[(d.size - 1) // 2])


def schedule(M: int, N: int) -> float:
    return max(M ** -B, N ** (-2 * A)) ** C_PRIME


def midpoint_grid(lo: float, hi: float, m: int) -> np.ndarray:
    return lo + (np.arange(m) + 0.5) * (hi - lo) / m


def gauss(A_, B_, s):
    return np.exp(-cdist(A_, B_, "sqeuclidean") / (2 * s * s))


def laplace(A_, B_, s):
    return np.exp(-cdist(A_, B_, "cityblock") / s)


def sq_inv_apply(G, alpha, R):
    c = cho_factor(G + alpha * np.eye(G.shape[0]))
    return cho_solve(c, cho_solve(c, R))


def self_reconstruction(seed: int, N: int = 1000, M: int = 1000) -> float:
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, (N, 1))
    s = lower_median(pdist(X))
    Z = midpoint_grid(0.0, 1.0, M)[:, None]
    G = gauss(Z, Z, s)
    rhs = gauss(Z, X, s).mean(axis=1)
    beta = sq_inv_apply(G, schedule(M, N), rhs) / M**2
    v = G @ beta
    v = v / v.mean()
    return float(np.mean(np.abs(v - 1.0)))


def donut_means(n=50, theta=np.deg2rad(10.0)):
    t = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(t) * np.cos(theta), np.sin(t), -np.cos(t) * np.sin(theta)], 1)


def donut_marginal(seed: int, N: int = 2500, noise: float = 0.2, n_inputs: int = 10_000) -> float:
    m = donut_means()
    rng = np.random.default_rng((seed, N))
    P = np.repeat(m, N // 50, axis=0) + noise * rng.standard_normal((N, 3))
    X, Y = P[:, :1], P[:, 1:]
    sx = lower_median(pdist(X, "cityblock"))
    sy = lower_median(pdist(Y))
    side = int(np.sqrt(N))
    ax = midpoint_grid(-2.0, 2.0, side)
    Z = np.stack([g.ravel() for g in np.meshgrid(ax, ax, indexing="ij")], 1)
    M = Z.shape[0]
    alpha = schedule(M, N)
    r = np.cos(np.deg2rad(10.0))
    U = np.random.default_rng((seed, N, 1)).uniform(-r, r, (n_inputs, 1))
    kvec = laplace(X, U, sx).mean(axis=1)
    c = cho_solve(cho_factor(laplace(X, X, sx) + N * alpha * np.eye(N)), kvec)
    beta = sq_inv_apply(gauss(Z, Z, sy), alpha, gauss(Z, Y, sy) @ c) / M**2
    ev_ax = midpoint_grid(-2.0, 2.0, 100)
    E = np.stack([g.ravel() for g in np.meshgrid(ev_ax, ev_ax, indexing="ij")], 1)
    v = gauss(E, Z, sy) @ beta
    v = v / (16.0 * v.mean())
    xs = np.linspace(-r, r, 2001)
    lw = norm.logpdf(xs[:, None], m[None, :, 0], noise)
    W = np.exp(lw - lw.max(axis=1, keepdims=True))
    W /= W.sum(axis=1, keepdims=True)
    w = trapezoid(W, xs, axis=0) / (2 * r)
    truth = (norm.pdf(E[:, :1], m[None, :, 1], noise) * norm.pdf(E[:, 1:], m[None, :, 2], noise)) @ w
    return float(16.0 * np.mean(np.abs(v - truth)))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path,
                   default=Path(__file__).resolve().parents[1] / "tests" / "data" / "oracle_thresholds.json")
    p.add_argument("--seeds", type=int, default=10)
    args = p.parse_args(argv)
    e1 = [self_reconstruction(s) for s in range(args.seeds)]
    e2 = [donut_marginal(s) for s in range(args.seeds)]
    out = {
        "self_reconstruction": {"errors": e1, "median": float(np.median(e1)),
                                "tau1": 1.5 * float(np.median(e1))},
        "donut_marginal": {"errors": e2, "median": float(np.median(e2)),
                           "tau2": 1.5 * float(np.median(e2))},
        "seeds": args.seeds,
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: v for k, v in out.items() if k != "seeds"}, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
