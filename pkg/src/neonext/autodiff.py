"""Minimal reverse-mode differentiation on a recorded tape.

Every forward operation appends one node holding the ids of its inputs and a
closure that maps the output gradient to input gradients.  ``backward`` walks
the nodes in exact reverse order and accumulates gradients by value id, so
two identical passes produce bit-identical results.  Tapes are single-use:
replaying a consumed or empty tape raises.

``fd_check`` is the independent verification harness: central finite
differences of a scalar loss against analytic gradients, reported per
parameter.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, UsageError
from .neocell import (
    NeoCellParams,
    NeoCellSpec,
    group_backward,
    group_forward,
)
from .rng import Rng
from .tensor import Matrix, Tensor4

_ids = itertools.count(1)


class Val:
    """A value tracked on a tape (a numpy array plus an identity)."""

    __slots__ = ("array", "vid")

    def __init__(self, array):
        self.array = np.asarray(array, dtype=np.float64)
        self.vid = next(_ids)


class Param(Val):
    """A leaf value with a stable name; optimizers update ``array`` in place."""

    __slots__ = ("name", "kind")

    def __init__(self, name: str, array, kind: str = "weight"):
        super().__init__(np.array(array, dtype=np.float64))
        self.name = name
        self.kind = kind


@dataclass
class _Node:
    out_vid: int
    in_vids: tuple[int, ...]
    backward_fn: object


class Tape:
    """Ordered record of one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[int, Param] = {}
        self.consumed = False

    def record(self, out: Val, ins: tuple[Val, ...], backward_fn) -> None:
        for v in ins:
            if isinstance(v, Param):
                self.params.setdefault(v.vid, v)
        self.nodes.append(_Node(out.vid, tuple(v.vid for v in ins), backward_fn))

    def watch(self, *params: Param) -> None:
        for p in params:
            self.params.setdefault(p.vid, p)


class Grads(dict):
    """Mapping from parameter name to gradient array of identical dims."""


def backward(tape: Tape, loss_grad: float = 1.0) -> Grads:
    """Accumulate gradients of the tape's final output for all leaf params."""
    if not tape.nodes:
        raise UsageError("backward on an empty tape")
    if tape.consumed:
        raise UsageError("tape already consumed; re-record the forward pass")
    tape.consumed = True
    store: dict[int, np.ndarray] = {tape.nodes[-1].out_vid: np.asarray(loss_grad, dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = store.pop(node.out_vid, None)
        if g is None:
            continue
        gins = node.backward_fn(g)
        for vid, gi in zip(node.in_vids, gins):
            if gi is None:
                continue
            if vid in store:
                store[vid] = store[vid] + gi
            else:
                store[vid] = gi
    out = Grads()
    for p in tape.params.values():
        g = store.get(p.vid)
        if g is None:
            g = np.zeros_like(p.array)
        elif g.shape != p.array.shape:
            raise ShapeError(f"gradient for {p.name} has shape {g.shape}, expected {p.array.shape}")
        out[p.name] = g
    return out


def tracked_matmul(tape: Tape, a: Val, b: Val) -> Val:
    """2-D product recorded on the tape; grads are g @ b.T and a.T @ g."""
    if a.array.shape[1] != b.array.shape[0]:
        raise ShapeError(f"tracked_matmul: {a.array.shape} @ {b.array.shape}")
    out = Val(a.array @ b.array)
    aa, bb = a.array, b.array

    def back(g):
        return g @ bb.T, aa.T @ g

    tape.record(out, (a, b), back)
    return out


def tracked_sum(tape: Tape, x: Val) -> Val:
    out = Val(x.array.sum())
    shape = x.array.shape

    def back(g):
        return (np.broadcast_to(np.asarray(g), shape).copy(),)

    tape.record(out, (x,), back)
    return out


def tracked_mul(tape: Tape, x: Val, y: Val) -> Val:
    out = Val(x.array * y.array)
    xa, ya = x.array, y.array

    def back(g):
        return g * ya, g * xa

    tape.record(out, (x, y), back)
    return out


def neocell_backward(x: Tensor4, spec: NeoCellSpec, params: NeoCellParams, grad_out: Tensor4):
    """Analytic gradients of the patchwise forward.

    Per patch with output gradient G: grad_L accumulates G @ (X @ R)^T,
    grad_R accumulates (L @ X)^T @ G, grad_bias accumulates G, and
    grad_X = L^T @ G @ R^T; shifted groups route gradients through the same
    cyclic rolls as the forward.  Returns (grad_x, grad_params) with
    grad_params shaped exactly like ``params``.
    """
    spec.validate_input(x.dims)
    params.validate(spec)
    n, c, H, W = x.dims
    if grad_out.dims[:2] != (n, c):
        raise ShapeError(f"grad_out dims {grad_out.dims} do not match input {x.dims}")
    gx = np.empty((n, c, H, W), dtype=np.float64)
    gl: list = [None] * c
    gr: list = [None] * c
    gb: list = [None] * c if spec.use_bias else None
    for g in spec.groups:
        L, R, _ = params.stacked(g)
        gxg, gL, gR, gB = group_backward(
            x.array[:, g.start : g.stop],
            L,
            R,
            spec.use_bias,
            g.shift,
            grad_out.array[:, g.start : g.stop],
        )
        gx[:, g.start : g.stop] = gxg
        for i, ch in enumerate(g.channels):
            gl[ch] = Matrix(gL[i])
            gr[ch] = Matrix(gR[i])
            if spec.use_bias:
                gb[ch] = Matrix(gB[i])
    return Tensor4(gx), NeoCellParams(gl, gr, gb)


@dataclass
class FdRow:
    name: str
    checked: int
    max_rel_err: float
    passed: bool


@dataclass
class FdReport:
    rows: list[FdRow] = field(default_factory=list)
    threshold: float = 0.0

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def table(self) -> str:
        lines = [f"{'parameter':<40} {'entries':>7} {'max rel err':>12}  status"]
        for r in self.rows:
            lines.append(
                f"{r.name:<40} {r.checked:>7} {r.max_rel_err:>12.3e}  "
                + ("pass" if r.passed else "FAIL")
            )
        return "\n".join(lines)


def fd_check(
    f,
    params: list[Param],
    grads: Grads,
    eps: float = 1e-5,
    threshold: float = 1e-4,
    entries_per_param: int | None = None,
    rel_floor: float = 1e-5,
) -> FdReport:
    """Central-difference verification of analytic gradients.

    ``f()`` must be a pure scalar function of the current parameter arrays.
    For each selected entry the analytic value is compared against
    (f(p + eps*e) - f(p - eps*e)) / (2*eps) with relative error
    |a - fd| / max(|a|, |fd|, rel_floor).

    When ``entries_per_param`` is set, the probed subset per parameter is
    the entries with the largest analytic magnitude: central differences of
    a deep loss carry an absolute noise floor, so only entries above it are
    resolvable.  ``entries_per_param=None`` probes everything.
    """
    if eps <= 0:
        raise ValueError(f"fd_check: eps must be positive, got {eps}")
    report = FdReport(threshold=threshold)
    for p in params:
        flat = p.array.reshape(-1)
        n = flat.size
        gflat = np.asarray(grads[p.name]).reshape(-1)
        if entries_per_param is None or entries_per_param >= n:
            idx = np.arange(n)
        else:
            idx = np.argsort(-np.abs(gflat), kind="stable")[:entries_per_param]
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f())
            flat[i] = orig - eps
            f_minus = float(f())
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while probing {p.name}[{int(i)}]")
            fd = (f_plus - f_minus) / (2.0 * eps)
            a = gflat[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), rel_floor)
            worst = max(worst, rel)
        report.rows.append(FdRow(p.name, len(idx), worst, worst <= threshold))
    return report
