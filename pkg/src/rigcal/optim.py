"""Masked first-order optimisers operating in place on flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NonFiniteGradientError


def _check(params, grads, mask):
    if params.shape != grads.shape:
        raise InvalidArgumentError("parameter and gradient shapes differ")
    if mask is not None and mask.shape != params.shape:
        raise InvalidArgumentError("mask length differs from parameter vector length")
    live = grads if mask is None else grads[mask]
    if not np.all(np.isfinite(live)):
        raise NonFiniteGradientError("non-finite gradient entry")


def sgd_step(params, grads, lr, mask=None):
    """``params -= lr * grads`` on live entries. ``lr`` may be per-entry."""
    _check(params, grads, mask)
    step = np.asarray(lr, dtype=float) * grads
    if mask is None:
        params -= step
    else:
        params[mask] -= np.broadcast_to(step, params.shape)[mask]
    return params


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size, **kwargs):
        return cls(np.zeros(size), np.zeros(size), **kwargs)

    def to_dict(self):
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["m"], dtype=float), np.array(d["v"], dtype=float), int(d["t"]),
                   float(d["beta1"]), float(d["beta2"]), float(d["eps"]))


def adam_step(state: AdamState, params, grads, lr, mask=None):
    """One bias-corrected Adam update. Moments of frozen entries are left untouched."""
    _check(params, grads, mask)
    if state.m.shape != params.shape:
        raise InvalidArgumentError("optimiser state does not match the parameter vector")
    live = np.ones(params.shape, dtype=bool) if mask is None else mask
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    g = grads[live]
    state.m[live] = b1 * state.m[live] + (1 - b1) * g
    state.v[live] = b2 * state.v[live] + (1 - b2) * g * g
    m_hat = state.m[live] / (1 - b1 ** state.t)
    v_hat = state.v[live] / (1 - b2 ** state.t)
    lr_live = np.broadcast_to(np.asarray(lr, dtype=float), params.shape)[live]
    params[live] -= lr_live * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
