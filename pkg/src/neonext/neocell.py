"""The patch-wise left/right matrix-multiplication operator and its
block-diagonal execution path.

A layer splits each channel plane into an (H/h) x (W/w) grid of h x w
patches and maps every patch X to ``L @ X @ R`` (plus an optional per-channel
bias), where L is (h_out x h) and R is (w x w_out).  Channels are organized
into groups that may differ in patch size, in resampling factors, and in a
cyclic spatial shift of the patch grid.

Two equivalent executions are kept side by side:

- ``forward_patchwise``: explicit patch split, batched small products; this
  is the reference path and the one the model uses;
- ``forward_blockdiag``: one product per channel plane with materialized
  block-diagonal factors A (left) and B (right); shifts rotate A and B
  cyclically along both axes, so the grid corners wrap instead of zeroing.

Shifted groups are computed by pre-rolling the input by -shift on both
spatial axes, applying the unshifted operator, and rolling the result back
by +shift, which is exactly the conjugation the rotated block matrices
perform.  Shifts are restricted to square non-resampling groups; combining a
shift with h != h_out has no defined output alignment.

Non-divisible spatial sizes are a hard error; the operator defines no
padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError
from .neoinit import neoinit_pattern
from .rng import Rng
from .tensor import Matrix, Tensor4, read_tensor, write_tensor


@dataclass(frozen=True)
class GroupSpec:
    """One contiguous channel range sharing patch geometry and shift."""

    start: int
    stop: int
    h: int
    w: int
    h_out: int
    w_out: int
    shift: int = 0

    def __post_init__(self):
        if self.start < 0 or self.stop <= self.start:
            raise ParameterError(f"group channels [{self.start}, {self.stop}) is empty or negative")
        for name in ("h", "w", "h_out", "w_out"):
            if getattr(self, name) < 1:
                raise ParameterError(f"group dim {name} must be >= 1, got {getattr(self, name)}")
        if self.shift < 0 or self.shift >= self.h or self.shift >= self.w:
            raise ParameterError(
                f"group shift {self.shift} must satisfy 0 <= shift < min(h={self.h}, w={self.w})"
            )
        if self.shift > 0 and (self.h_out != self.h or self.w_out != self.w):
            raise ParameterError(
                "shifts are only defined for square non-resampling groups "
                f"(h={self.h}->h_out={self.h_out}, w={self.w}->w_out={self.w_out}, shift={self.shift})"
            )

    @property
    def channels(self) -> range:
        return range(self.start, self.stop)

    @property
    def count(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class NeoCellSpec:
    """Ordered groups covering all channels exactly once, plus the bias flag."""

    groups: tuple[GroupSpec, ...]
    use_bias: bool = False

    def __post_init__(self):
        groups = tuple(self.groups)
        object.__setattr__(self, "groups", groups)
        if not groups:
            raise ParameterError("NeoCellSpec needs at least one group")
        covered = []
        for g in groups:
            covered.append((g.start, g.stop))
        covered.sort()
        if covered[0][0] != 0:
            raise ParameterError(f"channel 0 not covered, first group starts at {covered[0][0]}")
        for (a0, a1), (b0, b1) in zip(covered, covered[1:]):
            if b0 != a1:
                raise ParameterError(f"channel ranges [{a0},{a1}) and [{b0},{b1}) overlap or leave a gap")

    @property
    def channel_count(self) -> int:
        return max(g.stop for g in self.groups)

    def validate_input(self, dims) -> None:
        """Check divisibility and output-size agreement for a given input."""
        h_in, w_in = _spatial(dims)
        out_hw = None
        for idx, g in enumerate(self.groups):
            if h_in % g.h != 0:
                raise ShapeError(f"group {idx}: height {h_in} not divisible by patch h={g.h}")
            if w_in % g.w != 0:
                raise ShapeError(f"group {idx}: width {w_in} not divisible by patch w={g.w}")
            hw = (h_in // g.h * g.h_out, w_in // g.w * g.w_out)
            if out_hw is None:
                out_hw = hw
            elif hw != out_hw:
                raise ShapeError(
                    f"group {idx}: output size {hw} disagrees with {out_hw} from earlier groups"
                )
        if len(dims) == 4 and dims[1] != self.channel_count:
            raise ShapeError(
                f"input has {dims[1]} channels but spec covers {self.channel_count}"
            )


def _spatial(dims):
    if len(dims) == 2:
        return dims
    if len(dims) == 4:
        return dims[2], dims[3]
    raise ShapeError(f"expected (H, W) or (n, c, H, W), got {dims}")


def output_shape(spec: NeoCellSpec, in_dims):
    """Output dims for an input of the given dims (pure shape arithmetic)."""
    spec.validate_input(in_dims)
    g = spec.groups[0]
    h_in, w_in = _spatial(in_dims)
    out_h, out_w = h_in // g.h * g.h_out, w_in // g.w * g.w_out
    if len(in_dims) == 2:
        return (out_h, out_w)
    return (in_dims[0], in_dims[1], out_h, out_w)


class NeoCellParams:
    """Per-channel weights: left (h_out x h), right (w x w_out), optional bias."""

    def __init__(self, left: list[Matrix], right: list[Matrix], bias: list[Matrix] | None = None):
        self.left = list(left)
        self.right = list(right)
        self.bias = list(bias) if bias is not None else None
        if len(self.left) != len(self.right):
            raise ParameterError(
                f"left/right channel counts differ: {len(self.left)} vs {len(self.right)}"
            )
        if self.bias is not None and len(self.bias) != len(self.left):
            raise ParameterError(
                f"bias channel count {len(self.bias)} differs from {len(self.left)}"
            )

    def validate(self, spec: NeoCellSpec) -> None:
        if len(self.left) != spec.channel_count:
            raise ParameterError(
                f"params cover {len(self.left)} channels, spec needs {spec.channel_count}"
            )
        if spec.use_bias and self.bias is None:
            raise ParameterError("spec enables bias but params carry none")
        for idx, g in enumerate(spec.groups):
            for c in g.channels:
                L, R = self.left[c], self.right[c]
                if (L.rows, L.cols) != (g.h_out, g.h):
                    raise ParameterError(
                        f"group {idx} channel {c}: left is {L.rows}x{L.cols}, "
                        f"expected {g.h_out}x{g.h}"
                    )
                if (R.rows, R.cols) != (g.w, g.w_out):
                    raise ParameterError(
                        f"group {idx} channel {c}: right is {R.rows}x{R.cols}, "
                        f"expected {g.w}x{g.w_out}"
                    )
                if spec.use_bias:
                    B = self.bias[c]
                    if (B.rows, B.cols) != (g.h_out, g.w_out):
                        raise ParameterError(
                            f"group {idx} channel {c}: bias is {B.rows}x{B.cols}, "
                            f"expected {g.h_out}x{g.w_out}"
                        )

    def stacked(self, g: GroupSpec):
        """Group weights as stacked arrays (cg, h_out, h), (cg, w, w_out), bias or None."""
        L = np.stack([self.left[c].array for c in g.channels])
        R = np.stack([self.right[c].array for c in g.channels])
        B = None
        if self.bias is not None:
            B = np.stack([self.bias[c].array for c in g.channels])
        return L, R, B


def identity_params(spec: NeoCellSpec) -> NeoCellParams:
    """Exact-identity weights; only valid for square non-resampling groups."""
    left, right, bias = {}, {}, {}
    for g in spec.groups:
        if g.h_out != g.h or g.w_out != g.w:
            raise ParameterError("identity params need square non-resampling groups")
        for c in g.channels:
            left[c] = Matrix(np.eye(g.h))
            right[c] = Matrix(np.eye(g.w))
            bias[c] = Matrix(np.zeros((g.h_out, g.w_out)))
    C = spec.channel_count
    return NeoCellParams(
        [left[c] for c in range(C)],
        [right[c] for c in range(C)],
        [bias[c] for c in range(C)] if spec.use_bias else None,
    )


def neoinit_params(spec: NeoCellSpec, rng: Rng, noise: bool = True) -> NeoCellParams:
    """Identity / skewed-identity weights, optionally perturbed by the rng."""
    left, right, bias = {}, {}, {}
    for g in spec.groups:
        for c in g.channels:
            l = neoinit_pattern(g.h_out, g.h)
            r = neoinit_pattern(g.w, g.w_out)
            if noise:
                l = l + rng.normal((g.h_out, g.h), 1.0 / np.sqrt(g.h_out * g.h))
                r = r + rng.normal((g.w, g.w_out), 1.0 / np.sqrt(g.w * g.w_out))
            left[c] = Matrix(l)
            right[c] = Matrix(r)
            bias[c] = Matrix(np.zeros((g.h_out, g.w_out)))
    C = spec.channel_count
    return NeoCellParams(
        [left[c] for c in range(C)],
        [right[c] for c in range(C)],
        [bias[c] for c in range(C)] if spec.use_bias else None,
    )


def random_normal_params(spec: NeoCellSpec, rng: Rng) -> NeoCellParams:
    """Baseline init: left ~ N(0, 1/h) elementwise std 1/sqrt(h), right ~ std 1/sqrt(w)."""
    left, right, bias = {}, {}, {}
    for g in spec.groups:
        for c in g.channels:
            left[c] = Matrix(rng.normal((g.h_out, g.h), 1.0 / np.sqrt(g.h)))
            right[c] = Matrix(rng.normal((g.w, g.w_out), 1.0 / np.sqrt(g.w)))
            bias[c] = Matrix(np.zeros((g.h_out, g.w_out)))
    C = spec.channel_count
    return NeoCellParams(
        [left[c] for c in range(C)],
        [right[c] for c in range(C)],
        [bias[c] for c in range(C)] if spec.use_bias else None,
    )


class MultCounter:
    """Tally of scalar multiplications performed inside instrumented kernels."""

    def __init__(self):
        self.multiplies = 0

    def add(self, n: int):
        self.multiplies += int(n)


def save_params(directory, spec: NeoCellSpec, params: NeoCellParams) -> None:
    """Write one layer's weights: a group-spec manifest plus stacked tensors.

    Layout: ``manifest.txt`` describing every group and the bias flag, and
    per group ``g{i}_left.t4`` (cg, 1, h_out, h), ``g{i}_right.t4`` and,
    when biased, ``g{i}_bias.t4`` in the flat binary tensor format.
    """
    params.validate(spec)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"use_bias {int(spec.use_bias)}"]
    for i, g in enumerate(spec.groups):
        lines.append(
            f"group {i} channels {g.start} {g.stop} h {g.h} w {g.w} "
            f"h_out {g.h_out} w_out {g.w_out} shift {g.shift}"
        )
        L, R, B = params.stacked(g)
        write_tensor(d / f"g{i}_left.t4", Tensor4(L[:, None]))
        write_tensor(d / f"g{i}_right.t4", Tensor4(R[:, None]))
        if spec.use_bias:
            write_tensor(d / f"g{i}_bias.t4", Tensor4(B[:, None]))
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_params(directory) -> tuple[NeoCellSpec, NeoCellParams]:
    d = Path(directory)
    lines = (d / "manifest.txt").read_text().splitlines()
    use_bias = bool(int(lines[0].split()[1]))
    groups = []
    for ln in lines[1:]:
        t = ln.split()
        groups.append(
            GroupSpec(int(t[3]), int(t[4]), int(t[6]), int(t[8]), int(t[10]), int(t[12]), int(t[14]))
        )
    spec = NeoCellSpec(tuple(groups), use_bias=use_bias)
    C = spec.channel_count
    left: list = [None] * C
    right: list = [None] * C
    bias: list = [None] * C
    for i, g in enumerate(spec.groups):
        L = read_tensor(d / f"g{i}_left.t4").array[:, 0]
        R = read_tensor(d / f"g{i}_right.t4").array[:, 0]
        B = read_tensor(d / f"g{i}_bias.t4").array[:, 0] if use_bias else None
        for j, c in enumerate(g.channels):
            left[c] = Matrix(L[j])
            right[c] = Matrix(R[j])
            if use_bias:
                bias[c] = Matrix(B[j])
    params = NeoCellParams(left, right, bias if use_bias else None)
    params.validate(spec)
    return spec, params


def group_forward(
    xg: np.ndarray,
    L: np.ndarray,
    R: np.ndarray,
    bias: np.ndarray | None,
    shift: int,
    counter: MultCounter | None = None,
) -> np.ndarray:
    """Patchwise kernel for one group.

    xg is (n, cg, H, W); L is (cg, h_out, h); R is (cg, w, w_out).
    Returns (n, cg, H/h*h_out, W/w*w_out).
    """
    n, cg, H, W = xg.shape
    h_out, h = L.shape[1], L.shape[2]
    w, w_out = R.shape[1], R.shape[2]
    if shift:
        xg = np.roll(xg, (-shift, -shift), axis=(2, 3))
    nh, nw = H // h, W // w
    patches = xg.reshape(n, cg, nh, h, nw, w).transpose(0, 1, 2, 4, 3, 5)
    lx = np.matmul(L[:, None, None], patches)
    y = np.matmul(lx, R[:, None, None])
    if counter is not None:
        counter.add(n * cg * nh * nw * (h_out * h * w + h_out * w * w_out))
    if bias is not None:
        y = y + bias[:, None, None]
    y = y.transpose(0, 1, 2, 4, 3, 5).reshape(n, cg, nh * h_out, nw * w_out)
    if shift:
        y = np.roll(y, (shift, shift), axis=(2, 3))
    return y


def group_backward(
    xg: np.ndarray,
    L: np.ndarray,
    R: np.ndarray,
    has_bias: bool,
    shift: int,
    gy: np.ndarray,
):
    """Gradients of ``group_forward`` for one group.

    Returns (grad_x, grad_L, grad_R, grad_bias-or-None).  Weight gradients
    sum patch and batch contributions in one fixed reduction, so repeated
    backward passes are bit-identical.
    """
    n, cg, H, W = xg.shape
    h_out, h = L.shape[1], L.shape[2]
    w, w_out = R.shape[1], R.shape[2]
    if shift:
        xg = np.roll(xg, (-shift, -shift), axis=(2, 3))
        gy = np.roll(gy, (-shift, -shift), axis=(2, 3))
    nh, nw = H // h, W // w
    p = xg.reshape(n, cg, nh, h, nw, w).transpose(0, 1, 2, 4, 3, 5)
    g6 = gy.reshape(n, cg, nh, h_out, nw, w_out).transpose(0, 1, 2, 4, 3, 5)
    lx = np.matmul(L[:, None, None], p)                      # (n,cg,nh,nw,h_out,w)
    xr = np.matmul(p, R[:, None, None])                      # (n,cg,nh,nw,h,w_out)
    grad_l = np.matmul(g6, np.swapaxes(xr, -1, -2)).sum(axis=(0, 2, 3))
    grad_r = np.matmul(np.swapaxes(lx, -1, -2), g6).sum(axis=(0, 2, 3))
    grad_b = g6.sum(axis=(0, 2, 3)) if has_bias else None
    gp = np.matmul(
        np.swapaxes(L, 1, 2)[:, None, None],
        np.matmul(g6, np.swapaxes(R, 1, 2)[:, None, None]),
    )
    gx = gp.transpose(0, 1, 2, 4, 3, 5).reshape(n, cg, H, W)
    if shift:
        gx = np.roll(gx, (shift, shift), axis=(2, 3))
    return gx, grad_l, grad_r, grad_b


def forward_patchwise(
    x: Tensor4,
    spec: NeoCellSpec,
    params: NeoCellParams,
    counter: MultCounter | None = None,
) -> Tensor4:
    """Reference execution: explicit patch split per group."""
    spec.validate_input(x.dims)
    params.validate(spec)
    n, c, H, W = x.dims
    out_h, out_w = output_shape(spec, (H, W))
    out = np.empty((n, c, out_h, out_w), dtype=np.float64)
    for g in spec.groups:
        L, R, B = params.stacked(g)
        if not spec.use_bias:
            B = None
        out[:, g.start : g.stop] = group_forward(
            x.array[:, g.start : g.stop], L, R, B, g.shift, counter
        )
    return Tensor4(out)


def materialize_block_diagonal(group: GroupSpec, left: Matrix, right: Matrix, H: int, W: int):
    """Block-diagonal factors (A, B) for one channel of a group.

    A is (H/h*h_out x H) with ``left`` repeated along the diagonal; B is
    (W x W/w*w_out) with ``right`` repeated.  A positive shift rotates both
    matrices cyclically by (shift, shift), filling the corners with the
    wrapped parts of the boundary blocks.
    """
    if H % group.h != 0:
        raise ShapeError(f"height {H} not divisible by patch h={group.h}")
    if W % group.w != 0:
        raise ShapeError(f"width {W} not divisible by patch w={group.w}")
    if (left.rows, left.cols) != (group.h_out, group.h):
        raise ParameterError(
            f"left is {left.rows}x{left.cols}, expected {group.h_out}x{group.h}"
        )
    if (right.rows, right.cols) != (group.w, group.w_out):
        raise ParameterError(
            f"right is {right.rows}x{right.cols}, expected {group.w}x{group.w_out}"
        )
    nh, nw = H // group.h, W // group.w
    A = np.zeros((nh * group.h_out, H), dtype=np.float64)
    for b in range(nh):
        A[b * group.h_out : (b + 1) * group.h_out, b * group.h : (b + 1) * group.h] = left.array
    B = np.zeros((W, nw * group.w_out), dtype=np.float64)
    for b in range(nw):
        B[b * group.w : (b + 1) * group.w, b * group.w_out : (b + 1) * group.w_out] = right.array
    if group.shift:
        A = np.roll(A, (group.shift, group.shift), axis=(0, 1))
        B = np.roll(B, (group.shift, group.shift), axis=(0, 1))
    return Matrix(A), Matrix(B)


def _stacked_left_product(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """(c, r, m) @ (n, c, m, W) -> (n, c, r, W), accumulated in ascending k.

    Per output element this performs the same rounded multiply/add sequence
    as ``tensor.matmul``, so single-channel results are bit-identical to it.
    """
    n, c, m, W = X.shape
    r = A.shape[1]
    out = np.zeros((n, c, r, W), dtype=np.float64)
    for k in range(m):
        out += A[None, :, :, k, None] * X[:, :, None, k, :]
    return out


def _stacked_right_product(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """(n, c, r, m) @ (c, m, q) -> (n, c, r, q), accumulated in ascending k."""
    n, c, r, m = X.shape
    q = B.shape[2]
    out = np.zeros((n, c, r, q), dtype=np.float64)
    for k in range(m):
        out += X[:, :, :, k, None] * B[None, :, None, k, :]
    return out


def forward_blockdiag(
    x: Tensor4,
    spec: NeoCellSpec,
    params: NeoCellParams,
    counter: MultCounter | None = None,
) -> Tensor4:
    """Whole-plane execution via materialized block-diagonal factors.

    Uses the package's deterministic ascending-k product, so for unshifted
    groups every output element reproduces the corresponding ``tensor.matmul``
    patch product bit-exactly (the zero blocks contribute exact no-op
    additions in between).
    """
    spec.validate_input(x.dims)
    params.validate(spec)
    n, c, H, W = x.dims
    out_h, out_w = output_shape(spec, (H, W))
    out = np.empty((n, c, out_h, out_w), dtype=np.float64)
    for g in spec.groups:
        mats = [
            materialize_block_diagonal(g, params.left[ch], params.right[ch], H, W)
            for ch in g.channels
        ]
        A = np.stack([m[0].array for m in mats])
        B = np.stack([m[1].array for m in mats])
        xg = x.array[:, g.start : g.stop]
        y = _stacked_right_product(_stacked_left_product(A, xg), B)
        if counter is not None:
            counter.add(g.count * n * (A.shape[1] * H * W + A.shape[1] * W * B.shape[2]))
        if spec.use_bias:
            _, _, bias = params.stacked(g)
            nh, nw = H // g.h, W // g.w
            tiled = np.tile(bias, (1, nh, nw))
            if g.shift:
                tiled = np.roll(tiled, (g.shift, g.shift), axis=(1, 2))
            y = y + tiled[None]
        out[:, g.start : g.stop] = y
    return Tensor4(out)
