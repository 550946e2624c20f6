"""Reliability over a grid of two departure times.

Every other plan entry stays fixed.  Useful for inspecting the shape of the
objective: its grid maximum, and how many separate local maxima it has.
"""

import re
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .evaluator import reliability_batch

__all__ = ["UnknownVariable", "ContourGrid", "parse_variable", "contour_grid", "local_maxima"]

_NAME = re.compile(r"^t_(fa|df|sd)(?:\[(\d+)\]|(\d+))?$")


class UnknownVariable(KeyError):
    """A grid variable name does not refer to a dispatched vehicle's time."""


def parse_variable(name, plan):
    """Map ``"t_fa[0]"`` (or ``"t_fa0"``) to ``("t_fa", 0)``.

    The index may be left out when the level has a single vehicle.  Only
    dispatched vehicles qualify, since other times do not enter the
    objective.
    """
    m = _NAME.match(name.strip())
    if not m:
        raise UnknownVariable(f"unknown variable {name!r}; expected t_fa[i], t_df[i] or t_sd[i]")
    field = "t_" + m.group(1)
    idx = m.group(2) or m.group(3)
    size = getattr(plan, field).size
    if idx is None:
        if size != 1:
            raise UnknownVariable(f"{name!r} is ambiguous: give an index below {size}")
        idx = 0
    idx = int(idx)
    if idx >= size:
        raise UnknownVariable(f"{name!r}: index out of range (0..{size - 1})")
    if not plan.dispatched(m.group(1).upper())[idx]:
        raise UnknownVariable(f"{name!r}: vehicle is not dispatched")
    return field, idx


@dataclass
class ContourGrid:
    """``R[i, j]`` is the reliability at ``(x[i], y[j])``."""

    names: tuple
    x: np.ndarray
    y: np.ndarray
    R: np.ndarray

    @property
    def argmax(self):
        i, j = np.unravel_index(int(np.argmax(self.R)), self.R.shape)
        return float(self.x[i]), float(self.y[j]), float(self.R[i, j])

    def rows(self):
        for i, xv in enumerate(self.x):
            for j, yv in enumerate(self.y):
                yield float(xv), float(yv), float(self.R[i, j])


def contour_grid(s, plan, x_name, y_name, x_range, y_range, n=200, *, zeta=None, force_prob_one=False):
    """Evaluate the reliability on an ``n`` by ``n`` grid of two times.

    Parameters
    ----------
    s : Scenario
    plan : DispatchPlan
        Supplies dispatch, cargo and every time not on the grid.
    x_name, y_name : str
        Grid variables, see :func:`parse_variable`.
    x_range, y_range : (float, float)
    n : int
    zeta : float or ndarray, optional
        Penalty scale override.

    Returns
    -------
    ContourGrid
    """
    fx = parse_variable(x_name, plan)
    fy = parse_variable(y_name, plan)
    if fx == fy:
        raise UnknownVariable("the two grid variables must differ")
    if zeta is not None:
        zeta = np.broadcast_to(np.asarray(zeta, dtype=float), s.zeta.shape)
    x = np.linspace(*x_range, n)
    y = np.linspace(*y_range, n)
    X, Y = np.meshgrid(x, y, indexing="ij")
    times = {name: np.repeat(getattr(plan, name)[None, :], X.size, axis=0) for name in ("t_fa", "t_df", "t_sd")}
    times[fx[0]][:, fx[1]] = X.ravel()
    times[fy[0]][:, fy[1]] = Y.ravel()
    R = reliability_batch(s, plan, times["t_fa"], times["t_df"], times["t_sd"], zeta=zeta,
                          force_prob_one=force_prob_one)
    return ContourGrid((x_name, y_name), x, y, np.asarray(R).reshape(n, n))


def local_maxima(grid, *, rel_tol=1e-9):
    """Separate local maxima of a grid surface.

    A cell qualifies when no neighbour (8-neighbourhood) is higher and at
    least one is lower, so flat regions do not count.  Touching qualifying
    cells form one maximum, reported at its highest cell.

    Returns
    -------
    list of (x, y, R)
        Highest first.
    """
    R = grid.R
    tol = rel_tol * max(1.0, float(np.abs(R).max()))
    hi = ndimage.maximum_filter(R, size=3, mode="nearest")
    lo = ndimage.minimum_filter(R, size=3, mode="nearest")
    mask = (R >= hi - tol) & (R > lo + tol)
    labels, k = ndimage.label(mask, structure=np.ones((3, 3)))
    out = []
    for lab in range(1, k + 1):
        idx = np.flatnonzero(labels.ravel() == lab)
        best = idx[np.argmax(R.ravel()[idx])]
        i, j = np.unravel_index(best, R.shape)
        out.append((float(grid.x[i]), float(grid.y[j]), float(R[i, j])))
    out.sort(key=lambda t: -t[2])
    return out
