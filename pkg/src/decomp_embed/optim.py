"""SGD and Adagrad, both as pure step functions and as stateful optimizers.

The stateful optimizers update parameters in place and understand
:class:`SparseGrad`, touching only the rows that received gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass
class SparseGrad:
    """Row-sparse gradient: ``values[k]`` is the gradient of row ``rows[k]``.

    ``rows`` is sorted and unique.
    """

    rows: np.ndarray
    values: np.ndarray
    shape: tuple

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.values.dtype)
        out[self.rows] = self.values
        return out

    @classmethod
    def accumulate(cls, rows, contributions, shape) -> "SparseGrad":
        rows = np.asarray(rows, dtype=np.int64)
        uniq, inverse = np.unique(rows, return_inverse=True)
        values = np.zeros((len(uniq),) + tuple(shape[1:]), dtype=contributions.dtype)
        np.add.at(values, inverse, contributions)
        return cls(uniq, values, tuple(shape))


def _check(param, grad):
    if np.shape(param) != np.shape(grad):
        raise ShapeError(f"parameter shape {np.shape(param)} != gradient shape {np.shape(grad)}")


def sgd_step(param, grad, lr: float):
    _check(param, grad)
    return param - lr * grad


def adagrad_step(param, grad, accumulator, lr: float, eps: float = 1e-8):
    _check(param, grad)
    _check(param, accumulator)
    acc = accumulator + grad * grad
    return param - lr * grad / np.sqrt(acc + eps), acc


class SGD:
    name = "sgd"

    def __init__(self, lr: float):
        if lr <= 0:
            raise ParameterError(f"learning rate must be > 0, got {lr}")
        self.lr = lr
        self.state: dict[str, np.ndarray] = {}

    def step(self, key: str, param: np.ndarray, grad) -> None:
        if isinstance(grad, SparseGrad):
            _check(param, np.empty(grad.shape))
            if len(grad.rows):
                param[grad.rows] -= (self.lr * grad.values).astype(param.dtype)
            return
        _check(param, grad)
        param -= (self.lr * grad).astype(param.dtype)


class Adagrad:
    name = "adagrad"

    def __init__(self, lr: float, eps: float = 1e-8, initial_accumulator: float = 0.0):
        if lr <= 0:
            raise ParameterError(f"learning rate must be > 0, got {lr}")
        self.lr = lr
        self.eps = eps
        self.initial_accumulator = initial_accumulator
        self.state: dict[str, np.ndarray] = {}

    def _acc(self, key, param):
        acc = self.state.get(key)
        if acc is None:
            acc = np.full(param.shape, self.initial_accumulator, dtype=param.dtype)
            self.state[key] = acc
        return acc

    def step(self, key: str, param: np.ndarray, grad) -> None:
        acc = self._acc(key, param)
        if isinstance(grad, SparseGrad):
            _check(param, np.empty(grad.shape))
            if not len(grad.rows):
                return
            g = grad.values.astype(param.dtype, copy=False)
            a = acc[grad.rows] + g * g
            acc[grad.rows] = a
            param[grad.rows] -= self.lr * g / np.sqrt(a + self.eps)
            return
        _check(param, grad)
        g = grad.astype(param.dtype, copy=False)
        acc += g * g
        param -= self.lr * g / np.sqrt(acc + self.eps)


def make_optimizer(name: str, lr: float, eps: float = 1e-8):
    if name == "sgd":
        return SGD(lr)
    if name == "adagrad":
        return Adagrad(lr, eps)
    raise ParameterError(f"unknown optimizer {name!r}")
