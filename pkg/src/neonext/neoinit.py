"""Identity / skewed-identity weight initialization for patch matrices.

Noise-free pattern for an h x w matrix:

- square: the identity;
- h < w: row i carries the value 1/(end-start) on columns [start, end),
  where start = i*step, end = min((i+1)*step, w) and step = round(w/h);
  rows act like local averaging over their column band;
- h > w: the transposed construction, column i carries 1/(end-start) on
  rows [start, end) with step = round(h/w) and end capped at h.

Bounds are half-open so bands never overlap; rounding is half-away-from-zero
(round(2.5) = 3) so the pattern is platform-independent.  Bands that the
capping leaves empty stay zero, as do any trailing uncovered rows/columns.

With noise enabled, i.i.d. N(0, 1/(h*w)) samples (std 1/sqrt(h*w)) are added
to every element on top of the pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .rng import Rng, gaussian_fill
from .tensor import Matrix


@dataclass(frozen=True)
class InitSpec:
    rows: int
    cols: int
    noise: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ParameterError(f"InitSpec dims must be positive, got {self.rows}x{self.cols}")


def _round_half_away(x: float) -> int:
    # positive operands only; round(2.5) = 3
    return int(math.floor(x + 0.5))


def neoinit_pattern(rows: int, cols: int) -> np.ndarray:
    """The noise-free initialization pattern as a plain array."""
    if rows < 1 or cols < 1:
        raise ParameterError(f"pattern dims must be positive, got {rows}x{cols}")
    out = np.zeros((rows, cols), dtype=np.float64)
    if rows == cols:
        np.fill_diagonal(out, 1.0)
    elif rows < cols:
        step = _round_half_away(cols / rows)
        for i in range(rows):
            start = i * step
            end = min((i + 1) * step, cols)
            if end > start:
                out[i, start:end] = 1.0 / (end - start)
    else:
        step = _round_half_away(rows / cols)
        for i in range(cols):
            start = i * step
            end = min((i + 1) * step, rows)
            if end > start:
                out[start:end, i] = 1.0 / (end - start)
    return out


def neoinit(spec: InitSpec, rng: Rng | None = None) -> Matrix:
    """Initialization matrix for the given spec.

    The noisy result decomposes exactly as the noise-free pattern plus
    ``gaussian_fill(rng, rows, cols, 1/sqrt(rows*cols))``.
    """
    base = neoinit_pattern(spec.rows, spec.cols)
    if not spec.noise:
        return Matrix(base)
    if rng is None:
        rng = Rng(spec.seed)
    sigma = 1.0 / math.sqrt(spec.rows * spec.cols)
    return Matrix(base + gaussian_fill(rng, spec.rows, spec.cols, sigma).array)


def format_grid(m: Matrix, width: int = 9, decimals: int = 5) -> str:
    """Aligned plain-text rendering for human inspection."""
    lines = []
    for row in m.array:
        lines.append(" ".join(f"{v:{width}.{decimals}f}" for v in row))
    return "\n".join(lines) + "\n"
