"""Reverse-mode autodiff over dense real tensors.

A Graph is an append-only tape. Ops record nodes while a graph is active
(``with Graph():``); without one they run forward-only, which is the cheap
path used for inference and finite-difference probes. backward() walks the
tape in strict reverse append order and is deterministic: identical inputs
give bit-identical gradients.
"""

from __future__ import annotations

import os
import threading

import numpy as np


class GraphError(RuntimeError):
    """Tape misuse: backward twice, recording after backward, detached loss."""


_FLOAT_DTYPES = (np.float32, np.float64)

_debug_checks = os.environ.get("CONVQG_DEBUG", "") not in ("", "0")


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finite-value assertions (also via CONVQG_DEBUG=1)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    """Dense real tensor; immutable after forward except gradient fields."""

    __slots__ = ("data", "requires_grad", "grad", "_graph")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if arr.ndim > 0:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._graph = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Node:
    """One recorded op: kind, tape ids of its inputs, and its backward."""

    __slots__ = ("kind", "inputs", "output", "input_ids", "out_id", "backward_fn")

    def __init__(self, kind, inputs, output, input_ids, out_id, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.input_ids = input_ids
        self.out_id = out_id
        self.backward_fn = backward_fn


_tls = threading.local()


def _stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def active_graph():
    stack = _stack()
    return stack[-1] if stack else None


class Graph:
    """Append-only tape; single writer, one backward pass per forward."""

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self._producer = {}  # id(tensor) -> node index
        self._tensors = {}  # id(tensor) -> tensor (keeps leaves reachable)

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False

    def record(self, kind, inputs, output, backward_fn):
        if self.consumed:
            raise GraphError("graph already consumed by backward; re-run forward")
        input_ids = tuple(self._producer.get(id(t), -1) for t in inputs)
        out_id = len(self.nodes)
        node = Node(kind, inputs, output, input_ids, out_id, backward_fn)
        self.nodes.append(node)
        self._producer[id(output)] = out_id
        self._tensors[id(output)] = output
        for t in inputs:
            self._tensors.setdefault(id(t), t)
        output._graph = self


def backward(loss: Tensor) -> None:
    """Backprop from a scalar loss; every requires_grad tensor on the tape
    ends up with dLoss/dTensor accumulated into .grad."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    graph = loss._graph
    if graph is None:
        raise GraphError("loss is not attached to a graph; run the forward pass inside `with Graph():`")
    if graph.consumed:
        raise GraphError("backward already ran on this graph; re-run forward first")
    graph.consumed = True

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        dout = grads.pop(id(node.output), None)
        if dout is None:
            continue
        if node.output.requires_grad:
            out = node.output
            out.grad = dout if out.grad is None else out.grad + dout
        for tensor, g in node.backward_fn(dout):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    # whatever is left belongs to leaves
    for key, g in grads.items():
        tensor = graph._tensors.get(key)
        if tensor is not None and tensor.requires_grad:
            tensor.grad = g if tensor.grad is None else tensor.grad + g


def check_finite(kind: str, arr: np.ndarray) -> None:
    if _debug_checks and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"op {kind!r} produced non-finite values")
