"""Model assembly: stem, stages of patch-operator blocks, downsample units,
and the classifier head.

Architecture produced by ``build_model``:

- stem: space-to-depth (patch ``stem_patch``) -> pointwise to the first
  stage width -> batchnorm;
- four stages of blocks, each block being
  NeoCell -> batchnorm -> pointwise expand -> GELU -> pointwise project
  -> drop-path -> residual add;
- between stages: NeoCell(h=2,h_out=1,w=2,w_out=1) -> BN -> GELU
  -> pointwise(C_i, C_{i+1}) -> BN -> GELU;
- head: global average pool -> linear classifier.

Group policy: stages 0-2 split the channels into two equal parts requesting
4x4 and 7x7 patch matrices, each part further split into k subgroups with
cyclic shifts 0..k-1 (remainder channels go to the earliest subgroups); the
last stage uses a single unshifted part requesting 7x7.  When a stage's map
size is not divisible by the requested size, the largest of {7, 4, 2, 1}
that divides the map is substituted and the substitution is recorded in the
manifest.

Initialization: patch matrices via the identity/skewed-identity scheme with
Gaussian noise ("neoinit") or, for the ablation baseline, random normal with
std 1/sqrt(h) (left) and 1/sqrt(w) (right); pointwise and classifier weights
are N(0, 2/fan_in); biases zero; batchnorm gamma 1, beta 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autodiff import Param, Tape, Val
from .blocks import (
    BN_EPS,
    BN_MOMENTUM,
    BatchNormStats,
    _bn_eval_fwd,
    _bn_train_bwd,
    _bn_train_fwd,
    _gelu_bwd,
    _gelu_cdf,
    _pw_bwd,
    _pw_fwd,
    _s2d_bwd,
    _s2d_fwd,
)
from .errors import ConfigError, ParameterError, ShapeError
from .neocell import GroupSpec, NeoCellSpec, group_backward, group_forward, neoinit_pattern
from .rng import Rng
from .tensor import Tensor4, read_tensor, write_tensor

SIZE_FALLBACKS = (7, 4, 2, 1)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    depths: tuple[int, int, int, int]
    widths: tuple[int, int, int, int]
    stem_patch: int = 4
    classes: int = 1000
    expansion: int = 4
    drop_path_rate: float = 0.0
    group_policy: tuple[str, ...] = ("mixed-shift", "mixed-shift", "mixed-shift", "single-7")

    def __post_init__(self):
        if len(self.depths) != 4 or len(self.widths) != 4:
            raise ConfigError("ModelSpec needs 4 stage depths and 4 stage widths")
        if any(d < 1 for d in self.depths):
            raise ConfigError(f"stage depths must be positive, got {self.depths}")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"stage widths must be positive, got {self.widths}")
        if any(b < a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"stage widths must be non-decreasing, got {self.widths}")
        if self.expansion < 1:
            raise ConfigError(f"expansion ratio must be >= 1, got {self.expansion}")
        if not (0.0 <= self.drop_path_rate < 1.0):
            raise ConfigError(f"drop-path rate must be in [0, 1), got {self.drop_path_rate}")
        if len(self.group_policy) != 4:
            raise ConfigError("group_policy needs one entry per stage")


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    neocell: NeoCellSpec
    expansion: int
    drop_path: float

    def __post_init__(self):
        if self.expansion < 1:
            raise ParameterError(f"expansion ratio must be >= 1, got {self.expansion}")
        if not (0.0 <= self.drop_path < 1.0):
            raise ParameterError(f"drop-path rate must be in [0, 1), got {self.drop_path}")


MODEL_SPECS = {
    "neonext-micro": ModelSpec("neonext-micro", (1, 1, 2, 1), (24, 48, 96, 192), drop_path_rate=0.05),
    "neonext-t": ModelSpec("neonext-t", (3, 3, 9, 3), (96, 192, 384, 768), drop_path_rate=0.1),
    "neonext-s": ModelSpec("neonext-s", (3, 3, 27, 3), (96, 192, 384, 768), drop_path_rate=0.4),
    "neonext-b": ModelSpec("neonext-b", (3, 3, 27, 3), (128, 256, 512, 1024), drop_path_rate=0.5),
}


def named_spec(name: str, classes: int | None = None, drop_path_rate: float | None = None) -> ModelSpec:
    if name not in MODEL_SPECS:
        raise ConfigError(f"unknown model spec {name!r}; known: {sorted(MODEL_SPECS)}")
    base = MODEL_SPECS[name]
    kwargs = {}
    if classes is not None:
        kwargs["classes"] = classes
    if drop_path_rate is not None:
        kwargs["drop_path_rate"] = drop_path_rate
    if not kwargs:
        return base
    return replace(base, **kwargs)


# ----------------------------------------------------------- group building

def _effective_size(requested: int, map_size: int) -> int:
    if map_size % requested == 0:
        return requested
    for k in SIZE_FALLBACKS:
        if map_size % k == 0:
            return k
    return 1


def make_stage_groups(channels: int, map_size: int, policy: str):
    """Group layout for one stage; returns (NeoCellSpec groups, notes)."""
    notes: list[str] = []
    if policy == "mixed-shift":
        if channels % 2:
            raise ConfigError(f"mixed policy needs an even channel count, got {channels}")
        parts = [(channels // 2, 4, True), (channels - channels // 2, 7, True)]
    elif policy == "single-7":
        parts = [(channels, 7, False)]
    elif policy == "single-4":
        parts = [(channels, 4, False)]
    else:
        raise ConfigError(f"unknown stage group policy {policy!r}")
    groups: list[GroupSpec] = []
    base_ch = 0
    for part_channels, requested, shifted in parts:
        k = _effective_size(requested, map_size)
        if k != requested:
            notes.append(f"requested {requested}x{requested} at map {map_size} -> using {k}x{k}")
        n_sub = k if shifted else 1
        sizes = [part_channels // n_sub] * n_sub
        for i in range(part_channels % n_sub):
            sizes[i] += 1
        for shift, size in enumerate(sizes):
            if size == 0:
                continue
            groups.append(
                GroupSpec(base_ch, base_ch + size, k, k, k, k, shift=shift if shifted else 0)
            )
            base_ch += size
    return tuple(groups), notes


# ------------------------------------------------------------------- layers

def _record(tape: Tape | None, out: Val, ins, back):
    if tape is not None:
        tape.record(out, ins, back)


@dataclass
class ForwardCtx:
    mode: str = "eval"
    rng: Rng | None = None
    update_stats: bool = False


@dataclass(frozen=True)
class _Part:
    """Contiguous run of groups sharing patch geometry, merged for speed."""

    start: int
    stop: int
    h: int
    w: int
    h_out: int
    w_out: int
    shifts: tuple[tuple[int, int, int], ...]   # (offset-in-part, size, shift)


def _merge_parts(spec: NeoCellSpec) -> list[_Part]:
    ordered = sorted(spec.groups, key=lambda g: g.start)
    parts: list[_Part] = []
    run: list[GroupSpec] = []
    for g in ordered:
        if run and (g.h, g.w, g.h_out, g.w_out) == (run[0].h, run[0].w, run[0].h_out, run[0].w_out):
            run.append(g)
        else:
            if run:
                parts.append(_part_from_run(run))
            run = [g]
    parts.append(_part_from_run(run))
    return parts


def _part_from_run(run: list[GroupSpec]) -> _Part:
    base = run[0].start
    shifts = tuple((g.start - base, g.count, g.shift) for g in run)
    return _Part(base, run[-1].stop, run[0].h, run[0].w, run[0].h_out, run[0].w_out, shifts)


def _roll_subgroups(a: np.ndarray, shifts, sign: int) -> np.ndarray:
    """Per-subgroup cyclic roll on the spatial axes; returns a fresh array."""
    out = a.copy()
    for off, size, s in shifts:
        if s:
            out[:, off : off + size] = np.roll(
                a[:, off : off + size], (sign * s, sign * s), axis=(2, 3)
            )
    return out


class NeoCellLayer:
    def __init__(self, name: str, spec: NeoCellSpec, rng: Rng, init: str = "neoinit"):
        self.name = name
        self.spec = spec
        self.parts = _merge_parts(spec)
        self.part_params: list[tuple[Param, Param, Param | None]] = []
        for pi, part in enumerate(self.parts):
            count = part.stop - part.start
            if init == "neoinit":
                left = np.stack(
                    [
                        neoinit_pattern(part.h_out, part.h)
                        + rng.normal((part.h_out, part.h), 1.0 / np.sqrt(part.h_out * part.h))
                        for _ in range(count)
                    ]
                )
                right = np.stack(
                    [
                        neoinit_pattern(part.w, part.w_out)
                        + rng.normal((part.w, part.w_out), 1.0 / np.sqrt(part.w * part.w_out))
                        for _ in range(count)
                    ]
                )
            elif init == "random-normal":
                left = rng.normal((count, part.h_out, part.h), 1.0 / np.sqrt(part.h))
                right = rng.normal((count, part.w, part.w_out), 1.0 / np.sqrt(part.w))
            elif init == "zeros":
                left = np.zeros((count, part.h_out, part.h))
                right = np.zeros((count, part.w, part.w_out))
            else:
                raise ConfigError(f"unknown neocell init {init!r}")
            pl = Param(f"{name}.p{pi}.left", left, "neocell_left")
            pr = Param(f"{name}.p{pi}.right", right, "neocell_right")
            pb = None
            if spec.use_bias:
                pb = Param(f"{name}.p{pi}.bias", np.zeros((count, part.h_out, part.w_out)), "neocell_bias")
            self.part_params.append((pl, pr, pb))

    def params(self):
        out = []
        for pl, pr, pb in self.part_params:
            out.extend([pl, pr] + ([pb] if pb is not None else []))
        return out

    def out_shape(self, dims):
        g = self.spec.groups[0]
        n, c, H, W = dims
        return (n, c, H // g.h * g.h_out, W // g.w * g.w_out)

    def forward(self, v: Val, tape: Tape | None, ctx: ForwardCtx) -> Val:
        x = v.array
        self.spec.validate_input(x.shape)
        n, c, H, W = x.shape
        oh, ow = self.out_shape(x.shape)[2:]
        out = np.empty((n, c, oh, ow), dtype=np.float64)
        rolled_parts = []
        for part, (pl, pr, pb) in zip(self.parts, self.part_params):
            xs = _roll_subgroups(x[:, part.start : part.stop], part.shifts, -1)
            rolled_parts.append(xs)
            y = group_forward(xs, pl.array, pr.array, pb.array if pb is not None else None, 0)
            out[:, part.start : part.stop] = _roll_subgroups(y, part.shifts, +1)
        ov = Val(out)
        if tape is not None:
            parts = self.parts
            pparams = self.part_params
            use_bias = self.spec.use_bias

            def back(gout):
                gx = np.empty_like(x)
                grads = []
                for part, (pl, pr, pb), xs in zip(parts, pparams, rolled_parts):
                    g0 = _roll_subgroups(gout[:, part.start : part.stop], part.shifts, -1)
                    gxs, gl, gr, gb = group_backward(xs, pl.array, pr.array, use_bias, 0, g0)
                    gx[:, part.start : part.stop] = _roll_subgroups(gxs, part.shifts, +1)
                    grads.extend([gl, gr] + ([gb] if pb is not None else []))
                return [gx] + grads

            ins = [v]
            for pl, pr, pb in pparams:
                ins.extend([pl, pr] + ([pb] if pb is not None else []))
            tape.record(ov, tuple(ins), back)
        return ov


class BatchNormLayer:
    def __init__(self, name: str, channels: int):
        self.name = name
        self.channels = channels
        self.gamma = Param(f"{name}.gamma", np.ones(channels), "bn_gamma")
        self.beta = Param(f"{name}.beta", np.zeros(channels), "bn_beta")
        self.stats = BatchNormStats.fresh(channels)

    def params(self):
        return [self.gamma, self.beta]

    def out_shape(self, dims):
        return dims

    def forward(self, v: Val, tape: Tape | None, ctx: ForwardCtx) -> Val:
        x = v.array
        if ctx.mode == "train":
            out, bctx = _bn_train_fwd(x, self.gamma.array, self.beta.array)
            if ctx.update_stats:
                _, _, mu, var = bctx
                self.stats.mean = (1 - BN_MOMENTUM) * self.stats.mean + BN_MOMENTUM * mu
                self.stats.var = (1 - BN_MOMENTUM) * self.stats.var + BN_MOMENTUM * var
            ov = Val(out)
            if tape is not None:
                gamma = self.gamma.array

                def back(g):
                    return _bn_train_bwd(bctx, gamma, g)

                tape.record(ov, (v, self.gamma, self.beta), back)
            return ov
        out, scale = _bn_eval_fwd(x, self.gamma.array, self.beta.array, self.stats)
        ov = Val(out)
        if tape is not None:
            stats = self.stats

            def back(g):
                invstd = 1.0 / np.sqrt(stats.var + BN_EPS)
                xhat = (x - stats.mean[None, :, None, None]) * invstd[None, :, None, None]
                gx = g * scale[None, :, None, None]
                ggamma = (g * xhat).sum(axis=(0, 2, 3))
                gbeta = g.sum(axis=(0, 2, 3))
                return gx, ggamma, gbeta

            tape.record(ov, (v, self.gamma, self.beta), back)
        return ov


class PointwiseLayer:
    def __init__(self, name: str, c_in: int, c_out: int, rng: Rng, zero_init: bool = False):
        self.name = name
        std = np.sqrt(2.0 / c_in)
        w = np.zeros((c_out, c_in)) if zero_init else rng.normal((c_out, c_in), std)
        self.weight = Param(f"{name}.weight", w, "pointwise")
        self.bias = Param(f"{name}.bias", np.zeros(c_out), "bias")

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, dims):
        n, c, h, w = dims
        return (n, self.weight.array.shape[0], h, w)

    def forward(self, v: Val, tape: Tape | None, ctx: ForwardCtx) -> Val:
        x = v.array
        out = _pw_fwd(x, self.weight.array, self.bias.array)
        ov = Val(out)
        if tape is not None:
            W = self.weight.array

            def back(g):
                return _pw_bwd(x, W, g, True)

            tape.record(ov, (v, self.weight, self.bias), back)
        return ov


class GeluLayer:
    name = "gelu"

    def params(self):
        return []

    def out_shape(self, dims):
        return dims

    def forward(self, v: Val, tape: Tape | None, ctx: ForwardCtx) -> Val:
        x = v.array
        cdf = _gelu_cdf(x)
        ov = Val(x * cdf)
        _record(tape, ov, (v,), lambda g: (_gelu_bwd(x, g, cdf),))
        return ov


class SpaceToDepthLayer:
    def __init__(self, p: int):
        self.name = f"space_to_depth(p={p})"
        self.p = p

    def params(self):
        return []

    def out_shape(self, dims):
        n, c, h, w = dims
        if h % self.p or w % self.p:
            raise ShapeError(f"stem: {h}x{w} not divisible by patch {self.p}")
        return (n, c * self.p * self.p, h // self.p, w // self.p)

    def forward(self, v: Val, tape: Tape | None, ctx: ForwardCtx) -> Val:
        p = self.p
        ov = Val(_s2d_fwd(v.array, p))
        _record(tape, ov, (v,), lambda g: (_s2d_bwd(g, p),))
        return ov


class Block:
    """Residual block: NeoCell -> BN -> expand -> GELU -> project (+skip)."""

    def __init__(self, name: str, spec: BlockSpec, rng: Rng, init: str):
        C = spec.channels
        self.name = name
        self.spec = spec
        self.neocell = NeoCellLayer(f"{name}.neocell", spec.neocell, rng, init)
        self.norm = BatchNormLayer(f"{name}.norm", C)
        self.expand = PointwiseLayer(f"{name}.expand", C, spec.expansion * C, rng)
        self.gelu = GeluLayer()
        self.project = PointwiseLayer(f"{name}.project", spec.expansion * C, C, rng)

    def params(self):
        return (
            self.neocell.params()
            + self.norm.params()
            + self.expand.params()
            + self.gelu.params()
            + self.project.params()
        )

    def out_shape(self, dims):
        return dims

    def forward(self, v: Val, tape: Tape | None, ctx: ForwardCtx) -> Val:
        h = self.neocell.forward(v, tape, ctx)
        h = self.norm.forward(h, tape, ctx)
        h = self.expand.forward(h, tape, ctx)
        h = self.gelu.forward(h, tape, ctx)
        h = self.project.forward(h, tape, ctx)
        rate = self.spec.drop_path
        if ctx.mode == "train" and rate > 0.0:
            if ctx.rng is None:
                raise ParameterError(f"{self.name}: drop-path needs a ForwardCtx rng in train mode")
            n = h.array.shape[0]
            keep = (ctx.rng.uniform(n) >= rate).astype(np.float64) / (1.0 - rate)
            hv = Val(h.array * keep[:, None, None, None])
            _record(tape, hv, (h,), lambda g: (g * keep[:, None, None, None],))
            h = hv
        out = Val(v.array + h.array)
        _record(tape, out, (v, h), lambda g: (g, g))
        return out


class GlobalPoolLayer:
    name = "global_avg_pool"

    def params(self):
        return []

    def out_shape(self, dims):
        n, c, h, w = dims
        return (n, c)

    def forward(self, v: Val, tape: Tape | None, ctx: ForwardCtx) -> Val:
        n, c, h, w = v.array.shape
        ov = Val(v.array.mean(axis=(2, 3)))

        def back(g):
            return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

        _record(tape, ov, (v,), back)
        return ov


class LinearLayer:
    def __init__(self, name: str, c_in: int, c_out: int, rng: Rng):
        self.name = name
        self.weight = Param(f"{name}.weight", rng.normal((c_out, c_in), np.sqrt(2.0 / c_in)), "linear")
        self.bias = Param(f"{name}.bias", np.zeros(c_out), "bias")

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, dims):
        return (dims[0], self.weight.array.shape[0])

    def forward(self, v: Val, tape: Tape | None, ctx: ForwardCtx) -> Val:
        x = v.array
        ov = Val(x @ self.weight.array.T + self.bias.array[None])
        if tape is not None:
            W = self.weight.array

            def back(g):
                return g @ W, g.T @ x, g.sum(axis=0)

            tape.record(ov, (v, self.weight, self.bias), back)
        return ov


# -------------------------------------------------------------------- model

class Model:
    def __init__(self, spec: ModelSpec, input_size: int, layers, manifest_lines):
        self.spec = spec
        self.input_size = input_size
        self.layers = layers
        self._manifest_lines = manifest_lines

    def params(self) -> list[Param]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_count(self) -> int:
        return sum(p.array.size for p in self.params())

    def bn_layers(self):
        out = []
        for layer in self.layers:
            if isinstance(layer, BatchNormLayer):
                out.append(layer)
            elif isinstance(layer, Block):
                out.append(layer.norm)
        return out

    def forward(self, x: Tensor4, ctx: ForwardCtx | None = None, tape: Tape | None = None) -> Val:
        if ctx is None:
            ctx = ForwardCtx()
        if x.dims[2] != self.input_size or x.dims[3] != self.input_size:
            raise ShapeError(
                f"model built for {self.input_size}x{self.input_size} inputs, got {x.dims}"
            )
        v = Val(x.array)
        if tape is not None:
            tape.watch(*self.params())
        for layer in self.layers:
            v = layer.forward(v, tape, ctx)
        return v

    def logits(self, x: Tensor4, mode: str = "eval", rng: Rng | None = None) -> np.ndarray:
        return self.forward(x, ForwardCtx(mode=mode, rng=rng)).array

    def shape_chain(self, batch: int = 1):
        dims = (batch, 3, self.input_size, self.input_size)
        chain = [("input", dims)]
        for layer in self.layers:
            dims = layer.out_shape(dims)
            chain.append((layer.name, dims))
        return chain

    def manifest(self) -> str:
        lines = list(self._manifest_lines)
        lines.append("per-layer parameters:")
        for layer in self.layers:
            n = sum(p.array.size for p in layer.params())
            if n:
                lines.append(f"  {layer.name}: {n}")
        lines.append(f"total parameters: {self.param_count()}")
        return "\n".join(lines) + "\n"


def softmax_cross_entropy(tape: Tape | None, logits: Val, targets: np.ndarray) -> Val:
    """Mean cross-entropy against target distributions (rows sum to 1)."""
    z = logits.array
    if targets.shape != z.shape:
        raise ShapeError(f"targets shape {targets.shape} does not match logits {z.shape}")
    zmax = z.max(axis=1, keepdims=True)
    zs = z - zmax
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    n = z.shape[0]
    loss = Val(-(targets * logp).sum() / n)
    if tape is not None:
        p = np.exp(logp)

        def back(g):
            return (np.asarray(g) * (p - targets) / n,)

        tape.record(loss, (logits,), back)
    return loss


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((labels.size, classes), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def smooth_targets(targets: np.ndarray, smoothing: float) -> np.ndarray:
    if smoothing == 0.0:
        return targets
    k = targets.shape[1]
    return (1.0 - smoothing) * targets + smoothing / k


# ------------------------------------------------------------------ builder

def build_model(spec: ModelSpec, input_size: int, rng: Rng, init: str = "neoinit") -> Model:
    """Assemble a model for square inputs of ``input_size``.

    Raises at build time, naming the stage, when a spatial size is not
    divisible as required.
    """
    if input_size % spec.stem_patch:
        raise ShapeError(f"input {input_size} not divisible by stem patch {spec.stem_patch}")
    manifest = [f"model {spec.name} input {input_size}x{input_size} classes {spec.classes}"]
    layers: list = []
    layers.append(SpaceToDepthLayer(spec.stem_patch))
    stem_ch = 3 * spec.stem_patch * spec.stem_patch
    layers.append(PointwiseLayer("stem.pointwise", stem_ch, spec.widths[0], rng))
    layers.append(BatchNormLayer("stem.norm", spec.widths[0]))
    map_size = input_size // spec.stem_patch
    manifest.append(f"stem: space_to_depth p={spec.stem_patch} -> {stem_ch} ch -> pointwise {spec.widths[0]} -> norm; map {map_size}")
    for si in range(4):
        C = spec.widths[si]
        groups, notes = make_stage_groups(C, map_size, spec.group_policy[si])
        for note in notes:
            manifest.append(f"stage{si}: {note}")
        cell_spec = NeoCellSpec(groups, use_bias=False)
        cell_spec.validate_input((map_size, map_size))
        gdesc = ", ".join(
            f"[{g.start}:{g.stop}) {g.h}x{g.w} shift {g.shift}" for g in groups
        )
        manifest.append(f"stage{si}: map {map_size}, {spec.depths[si]} blocks, groups: {gdesc}")
        for bi in range(spec.depths[si]):
            bspec = BlockSpec(C, cell_spec, spec.expansion, spec.drop_path_rate)
            layers.append(Block(f"stage{si}.block{bi}", bspec, rng, init))
        if si < 3:
            if map_size % 2:
                raise ShapeError(f"stage{si}: map {map_size} not even, cannot downsample")
            down_groups = (GroupSpec(0, C, 2, 2, 1, 1, shift=0),)
            down_spec = NeoCellSpec(down_groups, use_bias=False)
            layers.append(NeoCellLayer(f"down{si}.neocell", down_spec, rng, init))
            layers.append(BatchNormLayer(f"down{si}.norm1", C))
            layers.append(GeluLayer())
            layers.append(PointwiseLayer(f"down{si}.pointwise", C, spec.widths[si + 1], rng))
            layers.append(BatchNormLayer(f"down{si}.norm2", spec.widths[si + 1]))
            layers.append(GeluLayer())
            manifest.append(f"down{si}: neocell 2->1, pointwise {C}->{spec.widths[si + 1]}")
            map_size //= 2
    layers.append(GlobalPoolLayer())
    layers.append(LinearLayer("head", spec.widths[3], spec.classes, rng))
    model = Model(spec, input_size, layers, manifest)
    expected = analytic_param_count(spec, input_size)
    actual = model.param_count()
    if expected != actual:
        raise ParameterError(f"parameter accounting drifted: formula {expected}, allocated {actual}")
    return model


def analytic_param_count(spec: ModelSpec, input_size: int) -> int:
    """Closed-form parameter count; asserted against actual allocation.

    Per block at width C with group sizes k_g over c_g channels:
    sum_g 2*c_g*k_g^2 (patch matrices) + 2C (norm) + (e*C^2 + e*C) (expand)
    + (e*C^2 + C) (project).  Downsample C->C': 4C + 2C + CC' + C' + 2C'.
    Stem: 48*C0 + C0 + 2*C0.  Head: C3*classes + classes.
    """
    stem_ch = 3 * spec.stem_patch * spec.stem_patch
    total = stem_ch * spec.widths[0] + spec.widths[0] + 2 * spec.widths[0]
    map_size = input_size // spec.stem_patch
    for si in range(4):
        C = spec.widths[si]
        groups, _ = make_stage_groups(C, map_size, spec.group_policy[si])
        cell = sum(2 * g.count * g.h * g.h for g in groups)
        e = spec.expansion
        block = cell + 2 * C + (e * C * C + e * C) + (e * C * C + C)
        total += spec.depths[si] * block
        if si < 3:
            Cn = spec.widths[si + 1]
            total += 4 * C + 2 * C + C * Cn + Cn + 2 * Cn
            map_size //= 2
    total += spec.widths[3] * spec.classes + spec.classes
    return total


# ------------------------------------------------------------- checkpoints

def _pack4(a: np.ndarray) -> Tensor4:
    shape = a.shape
    padded = (1,) * (4 - a.ndim) + shape
    return Tensor4(a.reshape(padded))


def save_checkpoint(model: Model, directory: str | Path) -> None:
    d = Path(directory)
    (d / "params").mkdir(parents=True, exist_ok=True)
    (d / "manifest.txt").write_text(model.manifest())
    index = []
    for i, p in enumerate(model.params()):
        fname = f"params/{i:04d}.t4"
        write_tensor(d / fname, _pack4(p.array))
        index.append(f"{p.name}\t{fname}\t{','.join(map(str, p.array.shape))}")
    for j, bn in enumerate(model.bn_layers()):
        for stat, arr in (("mean", bn.stats.mean), ("var", bn.stats.var)):
            fname = f"params/stats{j:04d}_{stat}.t4"
            write_tensor(d / fname, _pack4(arr))
            index.append(f"{bn.name}.running_{stat}\t{fname}\t{arr.size}")
    (d / "index.txt").write_text("\n".join(index) + "\n")


def load_checkpoint(model: Model, directory: str | Path) -> None:
    d = Path(directory)
    entries = {}
    for line in (d / "index.txt").read_text().splitlines():
        name, fname, _ = line.split("\t")
        entries[name] = fname
    for p in model.params():
        if p.name not in entries:
            raise ConfigError(f"checkpoint misses parameter {p.name}")
        arr = read_tensor(d / entries[p.name]).array.reshape(p.array.shape)
        p.array[...] = arr
    for bn in model.bn_layers():
        bn.stats.mean = read_tensor(d / entries[f"{bn.name}.running_mean"]).array.reshape(-1).copy()
        bn.stats.var = read_tensor(d / entries[f"{bn.name}.running_var"]).array.reshape(-1).copy()
