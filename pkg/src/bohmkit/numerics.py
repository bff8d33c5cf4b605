"""Finite-difference stencils, quadrature, interpolation and sampling helpers.

All grids in this package are uniform with hard-wall (Dirichlet) boundaries:
stored nodes are strictly interior and the field vanishes at the walls one
spacing outside either end.  Every stencil here bakes in that convention, so
derivative fields stay consistent between the propagator, the velocity field
and the local-expectation stencils.
"""

import numpy as np
from scipy import ndimage


def _axis_slice(ndim, axis, sl):
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


def pad_walls(a, axis, width=1):
    """Pad an array with zeros along one axis (the hard-wall values)."""
    pad = [(0, 0)] * a.ndim
    pad[axis] = (width, width)
    return np.pad(a, pad, mode="constant")


def first_derivative(a, spacing, axis=0):
    """Central first difference, O(h^2), with psi = 0 at the walls."""
    ap = pad_walls(a, axis)
    hi = ap[_axis_slice(a.ndim, axis, slice(2, None))]
    lo = ap[_axis_slice(a.ndim, axis, slice(None, -2))]
    return (hi - lo) / (2.0 * spacing)


def second_derivative(a, spacing, axis=0):
    """3-point second difference, O(h^2), with psi = 0 at the walls."""
    ap = pad_walls(a, axis)
    hi = ap[_axis_slice(a.ndim, axis, slice(2, None))]
    lo = ap[_axis_slice(a.ndim, axis, slice(None, -2))]
    return (hi - 2.0 * a + lo) / spacing**2


def second_derivative_5pt(a, spacing, axis=0):
    """5-point second difference, O(h^4) in the interior.

    The two nodes nearest each wall use zero padding beyond the wall, which is
    only O(h^2) accurate there; callers that care restrict evaluation to the
    interior (see the stencil-range checks in conditional.py).
    """
    ap = pad_walls(a, axis, width=2)
    nd = a.ndim

    def take(k):
        return ap[_axis_slice(nd, axis, slice(k, k + a.shape[axis]))]

    return (-take(0) + 16.0 * take(1) - 30.0 * take(2)
            + 16.0 * take(3) - take(4)) / (12.0 * spacing**2)


def trapezoid_integral(values, cell):
    """Integral over the closed domain; walls carry zero so this is the
    trapezoid rule collapsed to cell * sum."""
    return cell * np.sum(values)


def grid_inner(a, b, cell):
    return cell * np.vdot(a, b)


def norm_sq(a, cell):
    return float(cell * np.sum(np.abs(a) ** 2))


def low_density_mask(rho, floor_fraction):
    """True where the density is at or below floor_fraction * max(rho)."""
    return rho <= floor_fraction * np.max(rho)


def fill_from_nearest(values, invalid_mask):
    """Replace invalid entries with the value at the nearest valid node.

    Euclidean nearest in index space; works for 1D and 2D fields alike.
    """
    if not invalid_mask.any():
        return values
    if invalid_mask.all():
        return np.zeros_like(values)
    idx = ndimage.distance_transform_edt(invalid_mask, return_distances=False,
                                         return_indices=True)
    return values[tuple(idx)]


def linear_interp(nodes, values, x):
    """np.interp that also works on complex node values."""
    x = np.asarray(x)
    if np.iscomplexobj(values):
        re = np.interp(x, nodes, values.real)
        im = np.interp(x, nodes, values.imag)
        return re + 1j * im
    return np.interp(x, nodes, values)


def bilinear_interp(xs, ys, field, px, py):
    """Vectorised bilinear interpolation on a uniform 2D grid.

    Query points are clamped to the node hull, matching the edge-value
    behaviour of np.interp in 1D.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    hx = xs[1] - xs[0]
    hy = ys[1] - ys[0]
    fx = np.clip((px - xs[0]) / hx, 0.0, len(xs) - 1.0)
    fy = np.clip((py - ys[0]) / hy, 0.0, len(ys) - 1.0)
    ix = np.minimum(fx.astype(int), len(xs) - 2)
    iy = np.minimum(fy.astype(int), len(ys) - 2)
    wx = fx - ix
    wy = fy - iy
    f00 = field[ix, iy]
    f10 = field[ix + 1, iy]
    f01 = field[ix, iy + 1]
    f11 = field[ix + 1, iy + 1]
    return ((1 - wx) * (1 - wy) * f00 + wx * (1 - wy) * f10
            + (1 - wx) * wy * f01 + wx * wy * f11)


def global_factor_fit(reference, target):
    """Least-squares complex scalar c minimising ||c*reference - target||."""
    denom = np.vdot(reference, reference)
    if denom == 0:
        return 0.0 + 0.0j
    return np.vdot(reference, target) / denom


def global_factor_error(reference, target):
    """Relative L2 distance after projecting out one global complex factor."""
    c = global_factor_fit(reference, target)
    num = np.linalg.norm(c * reference - target)
    den = np.linalg.norm(target)
    if den == 0:
        return 0.0 if num == 0 else np.inf
    return float(num / den)


def _wall_cdf(axis_lo, axis_hi, nodes, density):
    """Piecewise-linear CDF on [lo, hi] with zero density at the walls."""
    xs = np.concatenate(([axis_lo], nodes, [axis_hi]))
    rho = np.concatenate(([0.0], np.clip(density, 0.0, None), [0.0]))
    seg = 0.5 * (rho[1:] + rho[:-1]) * np.diff(xs)
    cdf = np.concatenate(([0.0], np.cumsum(seg)))
    total = cdf[-1]
    if total <= 0:
        raise ValueError("density integrates to zero; cannot sample")
    return xs, cdf / total


def sample_density_1d(axis_lo, axis_hi, nodes, density, count, rng):
    """Inverse-CDF draws from a nodal density with hard-wall zeros."""
    xs, cdf = _wall_cdf(axis_lo, axis_hi, nodes, density)
    u = rng.random(count)
    return np.interp(u, cdf, xs)


def sample_density_2d(x_axis, y_axis, nodes_x, nodes_y, density, count, rng):
    """Marginal-then-conditional inverse-CDF sampling on a 2D nodal density.

    x_axis and y_axis are (lo, hi) wall pairs.  The conditional density at the
    sampled x is linearly interpolated between the two bracketing x rows.
    """
    hy = nodes_y[1] - nodes_y[0]
    marg_x = density.sum(axis=1) * hy
    px = sample_density_1d(x_axis[0], x_axis[1], nodes_x, marg_x, count, rng)

    hx = nodes_x[1] - nodes_x[0]
    fx = np.clip((px - nodes_x[0]) / hx, 0.0, len(nodes_x) - 1.0)
    ix = np.minimum(fx.astype(int), len(nodes_x) - 2)
    wx = (fx - ix)[:, None]
    rows = (1 - wx) * density[ix] + wx * density[ix + 1]

    ys = np.concatenate(([y_axis[0]], nodes_y, [y_axis[1]]))
    rho = np.concatenate([np.zeros((count, 1)), np.clip(rows, 0.0, None),
                          np.zeros((count, 1))], axis=1)
    seg = 0.5 * (rho[:, 1:] + rho[:, :-1]) * np.diff(ys)[None, :]
    cdf = np.concatenate([np.zeros((count, 1)), np.cumsum(seg, axis=1)], axis=1)
    total = cdf[:, -1:]
    bad = total[:, 0] <= 0
    if bad.any():
        # conditional row vanished numerically; fall back to the y marginal
        marg_y = density.sum(axis=0) * hx
        fallback = sample_density_1d(y_axis[0], y_axis[1], nodes_y, marg_y,
                                     int(bad.sum()), rng)
    cdf = np.where(total > 0, cdf / np.where(total > 0, total, 1.0), cdf)

    u = rng.random(count)
    # row-wise inverse CDF: offset each row so one searchsorted call works
    offsets = 2.0 * np.arange(count)[:, None]
    flat = (cdf + offsets).ravel()
    pos = np.searchsorted(flat, u + 2.0 * np.arange(count), side="right") - 1
    pos -= np.arange(count) * cdf.shape[1]
    pos = np.clip(pos, 0, cdf.shape[1] - 2)
    c0 = np.take_along_axis(cdf, pos[:, None], axis=1)[:, 0]
    c1 = np.take_along_axis(cdf, pos[:, None] + 1, axis=1)[:, 0]
    y0 = ys[pos]
    y1 = ys[pos + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(c1 > c0, (u - c0) / (c1 - c0), 0.0)
    py = y0 + frac * (y1 - y0)
    if bad.any():
        py[bad] = fallback
    return np.column_stack([px, py])
