"""Analytic multiply counting and wall-clock micro-benchmarks.

For a (c, h, w) input and size-k kernels/matrices:

- depthwise convolution ('same' output, every tap counted even where it
  reads a padded zero): c*h*w*k^2 multiplies;
- the patch operator with k x k left and right matrices: 2*c*h*w*k
  multiplies, i.e. exactly 2/k of depthwise.

The instrumented kernels tally the multiplies they actually perform, so the
analytic formulas are checked against executed work, not a model.  Wall
times are reported, never asserted: only the multiply ratios are portable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParameterError, ShapeError
from .neocell import (
    GroupSpec,
    MultCounter,
    NeoCellSpec,
    forward_blockdiag,
    forward_patchwise,
    neoinit_params,
)
from .rng import Rng
from .tensor import Tensor4

FLOAT64_BYTES = 8


@dataclass(frozen=True)
class OpCost:
    multiplies: int
    traffic_bytes: int    # input read + output write + weights read, once each

    def __post_init__(self):
        if self.multiplies < 0:
            raise ParameterError(f"multiplies must be >= 0, got {self.multiplies}")


@dataclass
class BenchResult:
    op: str
    shape: tuple
    iters: int
    t_min: float
    t_median: float
    t_mean: float
    multiplies: int
    checksum: float
    threads: int = 1
    dtype: str = "float64"
    warmup: int = 0

    @property
    def mults_per_s(self) -> float:
        return self.multiplies / self.t_median if self.t_median > 0 else float("inf")


def flops_dwconv(c: int, h: int, w: int, k: int) -> OpCost:
    """Multiply count of a depthwise k x k convolution with 'same' output."""
    if min(c, h, w, k) < 1:
        raise ParameterError(f"dims must be positive, got c={c} h={h} w={w} k={k}")
    mults = c * h * w * k * k
    traffic = FLOAT64_BYTES * (2 * c * h * w + c * k * k)
    return OpCost(mults, traffic)


def flops_neocell(c: int, h: int, w: int, k: int) -> OpCost:
    """Multiply count of the patch operator with k x k left/right matrices."""
    if min(c, h, w, k) < 1:
        raise ParameterError(f"dims must be positive, got c={c} h={h} w={w} k={k}")
    if h % k:
        raise ShapeError(f"height {h} not divisible by k={k}")
    if w % k:
        raise ShapeError(f"width {w} not divisible by k={k}")
    mults = 2 * c * h * w * k
    traffic = FLOAT64_BYTES * (2 * c * h * w + 2 * c * k * k)
    return OpCost(mults, traffic)


def neocell_to_dwconv_ratio(k: int) -> Fraction:
    """Exact multiply ratio; equals 2/k for every valid shape."""
    cost_n = flops_neocell(1, k, k, k)
    cost_d = flops_dwconv(1, k, k, k)
    return Fraction(cost_n.multiplies, cost_d.multiplies)


# ------------------------------------------------------- depthwise reference

def dwconv_reference(x: Tensor4, kernels: np.ndarray, counter: MultCounter | None = None) -> Tensor4:
    """Depthwise convolution, zero padding, stride 1, 'same' output.

    ``kernels`` is (c, k, k) with odd k.  Taps accumulate in row-major
    (di, dj) order, one rounded multiply and add per tap, matching a scalar
    loop with the same tap order bit for bit.  Taps that read padded zeros
    still count as multiplies.
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    n, c, H, W = x.dims
    if kernels.ndim != 3 or kernels.shape[0] != c or kernels.shape[1] != kernels.shape[2]:
        raise ShapeError(f"kernels must be (c, k, k) with c={c}, got {kernels.shape}")
    k = kernels.shape[1]
    if k % 2 == 0:
        raise ShapeError(f"kernel size must be odd for symmetric padding, got {k}")
    pad = k // 2
    padded = np.zeros((n, c, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    padded[:, :, pad : pad + H, pad : pad + W] = x.array
    out = np.zeros((n, c, H, W), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            out += kernels[None, :, di, dj, None, None] * padded[:, :, di : di + H, dj : dj + W]
    if counter is not None:
        counter.add(n * c * H * W * k * k)
    return Tensor4(out)


# -------------------------------------------------------- counted execution

def _square_spec(c: int, k: int) -> NeoCellSpec:
    return NeoCellSpec((GroupSpec(0, c, k, k, k, k),), use_bias=False)


def counted_neocell(c: int, h: int, w: int, k: int, seed: int = 0) -> int:
    """Multiplies executed by the patchwise forward on a (1, c, h, w) input."""
    spec = _square_spec(c, k)
    params = neoinit_params(spec, Rng(seed))
    x = Tensor4(Rng(seed + 1).normal((1, c, h, w), 1.0))
    counter = MultCounter()
    forward_patchwise(x, spec, params, counter)
    return counter.multiplies


def counted_dwconv(c: int, h: int, w: int, k: int, seed: int = 0) -> int:
    """Multiplies executed by the depthwise reference on a (1, c, h, w) input."""
    x = Tensor4(Rng(seed + 1).normal((1, c, h, w), 1.0))
    kernels = Rng(seed).normal((c, k, k), 1.0)
    counter = MultCounter()
    dwconv_reference(x, kernels, counter)
    return counter.multiplies


# -------------------------------------------------------------- wall clocks

BENCH_OPS = ("neocell", "dwconv", "blockdiag")

BENCH_CSV_HEADER = (
    "op,c,h,w,k,dtype,threads,iters,warmup,multiplies,checksum,"
    "t_min_s,t_median_s,t_mean_s,mults_per_s"
)
# columns from t_min_s on are timing-dependent; everything before is
# a pure function of (op, shape, seed)


def _bench_callable(op: str, c: int, h: int, w: int, k: int, seed: int, dtype: str):
    rng = Rng(seed)
    if op in ("neocell", "blockdiag"):
        spec = _square_spec(c, k)
        params = neoinit_params(spec, rng)
        x = Tensor4(rng.normal((1, c, h, w), 1.0))
        if op == "neocell":
            mults = flops_neocell(c, h, w, k).multiplies
            fn = lambda: forward_patchwise(x, spec, params)
        else:
            counter = MultCounter()
            forward_blockdiag(x, spec, params, counter)
            mults = counter.multiplies
            fn = lambda: forward_blockdiag(x, spec, params)
    elif op == "dwconv":
        if k % 2 == 0:
            raise ConfigError(f"dwconv benchmark needs odd k, got {k}")
        kernels = rng.normal((c, k, k), 1.0)
        x = Tensor4(rng.normal((1, c, h, w), 1.0))
        mults = flops_dwconv(c, h, w, k).multiplies
        fn = lambda: dwconv_reference(x, kernels)
    else:
        raise ConfigError(f"unknown bench op {op!r}; known: {BENCH_OPS}")
    if dtype == "float32":
        # 32-bit is a benchmark-only option: cast once, time raw numpy work
        x32 = x.array.astype(np.float32)
        if op == "dwconv":
            k32 = kernels.astype(np.float32)
            pad = k // 2
            padded = np.zeros((1, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
            padded[:, :, pad : pad + h, pad : pad + w] = x32

            def fn32():
                out = np.zeros((1, c, h, w), dtype=np.float32)
                for di in range(k):
                    for dj in range(k):
                        out += k32[None, :, di, dj, None, None] * padded[:, :, di : di + h, dj : dj + w]
                return out

            return fn32, mults
        L32 = np.stack([params.left[ch].array for ch in range(c)]).astype(np.float32)
        R32 = np.stack([params.right[ch].array for ch in range(c)]).astype(np.float32)

        def fn32():
            p = x32.reshape(1, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
            y = np.matmul(np.matmul(L32[:, None, None], p), R32[:, None, None])
            return y

        return fn32, mults
    return fn, mults


def _checksum(result) -> float:
    arr = result.array if isinstance(result, Tensor4) else np.asarray(result)
    return float(arr.sum())


def bench(
    op: str,
    c: int,
    h: int,
    w: int,
    k: int,
    iters: int = 10,
    warmup: int = 2,
    seed: int = 0,
    threads: int = 1,
    dtype: str = "float64",
) -> BenchResult:
    """Time one operator on fixed seeded inputs and report stable statistics."""
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    if dtype not in ("float64", "float32"):
        raise ConfigError(f"dtype must be float64 or float32, got {dtype!r}")
    fn, mults = _bench_callable(op, c, h, w, k, seed, dtype)
    if threads > 1:
        import concurrent.futures

        pool = concurrent.futures.ThreadPoolExecutor(max_workers=threads)

        def run_once():
            futures = [pool.submit(fn) for _ in range(threads)]
            return [f.result() for f in futures][0]

    else:
        run_once = fn
    result = None
    for _ in range(warmup):
        result = run_once()
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        result = run_once()
        times.append(time.perf_counter() - t0)
    times_arr = np.asarray(times)
    return BenchResult(
        op=op,
        shape=(c, h, w, k),
        iters=iters,
        t_min=float(times_arr.min()),
        t_median=float(np.median(times_arr)),
        t_mean=float(times_arr.mean()),
        multiplies=mults,
        checksum=_checksum(result),
        threads=threads,
        dtype=dtype,
        warmup=warmup,
    )


def append_bench_csv(path, result: BenchResult) -> None:
    """Append one CSV row, writing the header if the file is new."""
    p = Path(path)
    new = not p.exists()
    with open(p, "a") as f:
        if new:
            f.write(BENCH_CSV_HEADER + "\n")
        c, h, w, k = result.shape
        f.write(
            f"{result.op},{c},{h},{w},{k},{result.dtype},{result.threads},"
            f"{result.iters},{result.warmup},{result.multiplies},{result.checksum!r},"
            f"{result.t_min!r},{result.t_median!r},{result.t_mean!r},{result.mults_per_s!r}\n"
        )
