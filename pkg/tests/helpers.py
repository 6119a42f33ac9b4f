"""Small problem builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from levy_homog.config import problem_from_spec


def cos(amp, freq, phase=0.0):
    return {"amp": amp, "freq": freq, "phase": phase}


def sin(amp, freq):
    return {"amp": amp, "freq": freq, "kind": "sin"}


def make_problem(
    costs,
    drifts=None,
    spatial=None,
    modulation=None,
    symmetric=True,
    slow_n=32,
    fast_n=32,
    C_K=16.0,
    gamma=1.0,
):
    """One-dimensional problem from cost/drift dicts (polynomials in ``(x, xi)``)."""
    m = len(costs)
    drifts = drifts if drifts is not None else [0.0] * m
    spatial = spatial if spatial is not None else [1.0] * m
    params = {"spatial": list(spatial)}
    if modulation is not None:
        params["modulation"] = modulation
    spec = {
        "dim": 1,
        "slow_n": slow_n,
        "fast_n": fast_n,
        "kernel": {"family": "separable", "controls": m, "params": params, "symmetric": symmetric, "C_K": C_K, "gamma": gamma},
        "controls": [{"drift": [b], "cost": f} for b, f in zip(drifts, costs)],
    }
    return problem_from_spec(spec, name="test")


def sine(grid, amp=1.0, k=1):
    return grid.from_callable(lambda x: amp * np.sin(2 * np.pi * k * x[..., 0]))
