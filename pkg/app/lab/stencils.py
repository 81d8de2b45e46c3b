# Fourth-order finite-difference stencils along one array axis.
# Periodic axes use np.roll; bounded axes use one-sided fourth-order stencils
# on the two outermost layers at each end.
import numpy as np


def _roll(f: np.ndarray, shift: int, axis: int) -> np.ndarray:
    return np.roll(f, shift, axis=axis)


def d1(f: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (-_roll(f, -2, axis) + 8 * _roll(f, -1, axis) - 8 * _roll(f, 1, axis) + _roll(f, 2, axis)) / (12 * h)
    g = np.moveaxis(f, axis, 0)
    out = np.empty_like(g, dtype=float)
    out[2:-2] = (-g[4:] + 8 * g[3:-1] - 8 * g[1:-3] + g[:-4]) / (12 * h)
    out[0] = (-25 * g[0] + 48 * g[1] - 36 * g[2] + 16 * g[3] - 3 * g[4]) / (12 * h)
    out[1] = (-3 * g[0] - 10 * g[1] + 18 * g[2] - 6 * g[3] + g[4]) / (12 * h)
    out[-1] = -(-25 * g[-1] + 48 * g[-2] - 36 * g[-3] + 16 * g[-4] - 3 * g[-5]) / (12 * h)
    out[-2] = -(-3 * g[-1] - 10 * g[-2] + 18 * g[-3] - 6 * g[-4] + g[-5]) / (12 * h)
    return np.moveaxis(out, 0, axis)


def d2(f: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (
            -_roll(f, -2, axis) + 16 * _roll(f, -1, axis) - 30 * f + 16 * _roll(f, 1, axis) - _roll(f, 2, axis)
        ) / (12 * h * h)
    g = np.moveaxis(f, axis, 0)
    out = np.empty_like(g, dtype=float)
    out[2:-2] = (-g[4:] + 16 * g[3:-1] - 30 * g[2:-2] + 16 * g[1:-3] - g[:-4]) / (12 * h * h)
    out[0] = (45 * g[0] - 154 * g[1] + 214 * g[2] - 156 * g[3] + 61 * g[4] - 10 * g[5]) / (12 * h * h)
    out[1] = (10 * g[0] - 15 * g[1] - 4 * g[2] + 14 * g[3] - 6 * g[4] + g[5]) / (12 * h * h)
    out[-1] = (45 * g[-1] - 154 * g[-2] + 214 * g[-3] - 156 * g[-4] + 61 * g[-5] - 10 * g[-6]) / (12 * h * h)
    out[-2] = (10 * g[-1] - 15 * g[-2] - 4 * g[-3] + 14 * g[-4] - 6 * g[-5] + g[-6]) / (12 * h * h)
    return np.moveaxis(out, 0, axis)


def partials(f: np.ndarray, spacing, periodic, offset: int = 0) -> np.ndarray:
    """All first partials of f over its leading ``len(spacing)`` axes, stacked last.

    ``offset`` skips leading batch axes (e.g. a time axis).
    """
    return np.stack(
        [d1(f, offset + i, spacing[i], periodic[i]) for i in range(len(spacing))],
        axis=-1,
    )


def second_partials(f: np.ndarray, spacing, periodic, offset: int = 0) -> np.ndarray:
    n = len(spacing)
    out = np.empty(f.shape + (n, n), dtype=float)
    first = [d1(f, offset + i, spacing[i], periodic[i]) for i in range(n)]
    for i in range(n):
        out[..., i, i] = d2(f, offset + i, spacing[i], periodic[i])
        for j in range(i + 1, n):
            mixed = d1(first[i], offset + j, spacing[j], periodic[j])
            out[..., i, j] = mixed
            out[..., j, i] = mixed
    return out


def grid_partials(f: np.ndarray, spacing, periodic, tensor_rank: int) -> np.ndarray:
    """First partials of a tensor field whose trailing ``tensor_rank`` axes are components.

    The derivative index is placed first among the component axes: result[..., k, *comp].
    """
    n = len(spacing)
    out = np.stack([d1(f, i, spacing[i], periodic[i]) for i in range(n)], axis=f.ndim - tensor_rank)
    return out
