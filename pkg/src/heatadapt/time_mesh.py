"""Time partitions built by trisection, grading checks and Doerfler marking.

Breakpoints are stored exactly as integer ticks of ``h0 * 3**-depth``; floating
point times are derived on demand. An element of level ``l`` has size
``h0 * 3**-l``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from ._validation import check_int, check_positive, check_theta
from .errors import InvalidArgumentError

__all__ = [
    "TimeMesh",
    "MarkSet",
    "uniform_mesh",
    "trisect",
    "trisect_level",
    "refine",
    "check_grading",
    "doerfler_mark",
    "dumps_mesh",
    "loads_mesh",
]


@dataclass(frozen=True)
class TimeMesh:
    """Partition of ``[0, t_end]`` obtained from a uniform mesh by trisection.

    Parameters
    ----------
    ticks : tuple of int
        Breakpoints in units of ``h0 * 3**-depth``, strictly increasing.
    levels : tuple of int
        Refinement level of each element.
    depth : int
        Exponent of the tick unit; equals ``max(levels)`` in canonical form.
    h0 : float
        Size of the initial uniform elements.
    t_end : float
        Final time, ``h0`` times the number of initial elements.
    """

    ticks: tuple
    levels: tuple
    depth: int
    h0: float
    t_end: float

    def __post_init__(self):
        if len(self.ticks) != len(self.levels) + 1:
            raise InvalidArgumentError("need exactly one more tick than levels")
        unit = 3**self.depth
        for i, lvl in enumerate(self.levels):
            if lvl < 0 or lvl > self.depth:
                raise InvalidArgumentError(f"level {lvl} outside [0, {self.depth}]")
            if self.ticks[i + 1] - self.ticks[i] != unit // 3**lvl:
                raise InvalidArgumentError(f"element {i} size disagrees with its level")
        if self.ticks[0] != 0:
            raise InvalidArgumentError("mesh must start at 0")

    @property
    def n_elements(self):
        return len(self.levels)

    def __len__(self):
        return len(self.levels)

    @cached_property
    def breakpoints(self):
        total = self.ticks[-1]
        t_end = Fraction(self.t_end)
        pts = np.array([float(t_end * Fraction(k, total)) for k in self.ticks])
        pts.flags.writeable = False
        return pts

    @cached_property
    def sizes(self):
        """Element sizes derived from levels (treated as ground truth)."""
        out = self.h0 * np.power(3.0, -np.asarray(self.levels, dtype=float))
        out.flags.writeable = False
        return out

    def element(self, i):
        """Return ``(left, right)`` of element ``i`` as floats."""
        return float(self.breakpoints[i]), float(self.breakpoints[i + 1])

    def key(self, i):
        """Hashable identity of element ``i``, stable under refinement elsewhere."""
        return (Fraction(self.ticks[i], 3**self.depth), self.levels[i])

    def index_of(self, key):
        """Index of the element with identity ``key`` or ``None`` if absent."""
        start, lvl = key
        tick = start * 3**self.depth
        if tick.denominator != 1:
            return None
        i = bisect.bisect_left(self.ticks, int(tick))
        if i < len(self.levels) and self.ticks[i] == tick and self.levels[i] == lvl:
            return i
        return None


@dataclass(frozen=True)
class MarkSet:
    """Indices marked for refinement together with the bulk parameter."""

    indices: tuple
    theta: float

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in self.indices


def uniform_mesh(t_end, n):
    t_end = check_positive(t_end, name="t_end")
    n = check_int(n, name="n", minimum=1)
    return TimeMesh(tuple(range(n + 1)), (0,) * n, 0, t_end / n, t_end)


class _Work:
    """Mutable working copy used during a batch of trisections."""

    def __init__(self, mesh, min_depth):
        self.depth = max(mesh.depth, min_depth)
        scale = 3 ** (self.depth - mesh.depth)
        self.starts = [t * scale for t in mesh.ticks[:-1]]
        self.end = mesh.ticks[-1] * scale
        self.level = dict(zip(self.starts, mesh.levels))
        self.h0 = mesh.h0
        self.t_end = mesh.t_end

    def size(self, lvl):
        return 3 ** (self.depth - lvl)

    def present(self, start, lvl):
        return self.level.get(start) == lvl

    def window(self, lo, hi):
        """Pre-existing elements meeting ``[lo, hi]`` in tick units, left to right."""
        i0 = max(bisect.bisect_right(self.starts, lo) - 1, 0)
        i1 = bisect.bisect_right(self.starts, hi)
        return [(s, self.level[s]) for s in self.starts[i0:i1]]

    def split(self, start, lvl):
        child = self.size(lvl + 1)
        i = bisect.bisect_left(self.starts, start)
        self.starts[i + 1:i + 1] = [start + child, start + 2 * child]
        for s in (start, start + child, start + 2 * child):
            self.level[s] = lvl + 1

    def freeze(self):
        levels = tuple(self.level[s] for s in self.starts)
        depth = max(levels)
        shrink = 3 ** (self.depth - depth)
        ticks = tuple(s // shrink for s in self.starts) + (self.end // shrink,)
        return TimeMesh(ticks, levels, depth, self.h0, self.t_end)


def _gap(a0, a1, b0, b1):
    return max(0, b0 - a1, a0 - b1)


def _trisect_graded(work, start, lvl, G):
    if not work.present(start, lvl):
        return
    size = work.size(lvl)
    reach = G * size
    for s2, l2 in work.window(start - reach, start + size + reach):
        if l2 > lvl - 1 or not work.present(s2, l2):
            continue
        if _gap(start, start + size, s2, s2 + work.size(l2)) <= reach:
            _trisect_graded(work, s2, l2, G)
    work.split(start, lvl)


def _trisect_by_level(work, start, lvl, reach_fn):
    if not work.present(start, lvl):
        return
    size = work.size(lvl)
    reach = reach_fn(lvl)
    for s2, l2 in work.window(start - reach, start + size + reach):
        if l2 != lvl - 1 or not work.present(s2, l2):
            continue
        if _gap(start, start + size, s2, s2 + work.size(l2)) <= reach:
            _trisect_by_level(work, s2, l2, reach_fn)
    work.split(start, lvl)


def _check_index(mesh, elem):
    if isinstance(elem, bool) or not isinstance(elem, (int, np.integer)):
        raise InvalidArgumentError(f"element index must be an integer, got {elem!r}")
    if not 0 <= elem < mesh.n_elements:
        raise InvalidArgumentError(f"element index {elem} out of range [0, {mesh.n_elements})")
    return int(elem)


def refine(mesh, elems, G):
    """Trisect every element in ``elems`` (indices into ``mesh``) in ascending order.

    Elements already removed by an earlier recursive closure are skipped.
    """
    G = check_int(G, name="G", minimum=1)
    elems = sorted({_check_index(mesh, e) for e in elems})
    if not elems:
        return mesh
    work = _Work(mesh, max(mesh.levels[e] for e in elems) + 1)
    scale = 3 ** (work.depth - mesh.depth)
    for e in elems:
        _trisect_graded(work, mesh.ticks[e] * scale, mesh.levels[e], G)
    return work.freeze()


def trisect(mesh, elem, G):
    """Trisect one element after recursively trisecting coarse elements within reach ``G|T|``."""
    return refine(mesh, [elem], G)


def trisect_level(mesh, elem, G_tilde):
    """Level-based trisection: neighbours one level coarser within ``G_tilde * 3**-(l+1)``."""
    elem = _check_index(mesh, elem)
    G_tilde = check_positive(G_tilde, name="G_tilde")
    work = _Work(mesh, mesh.levels[elem] + 1)
    ratio = G_tilde / mesh.h0

    def reach(lvl):
        # reach in ticks, padded against rounding in G_tilde / h0
        return math.floor(ratio * 3 ** (work.depth - lvl - 1) * (1 + 1e-12))

    scale = 3 ** (work.depth - mesh.depth)
    _trisect_by_level(work, mesh.ticks[elem] * scale, mesh.levels[elem], reach)
    return work.freeze()


def check_grading(mesh, C_g, g0):
    """True iff ``|T_i|/|T_j| <= C_g * g0**-|i-j|`` for all element pairs."""
    if not C_g >= 1 or not 0 < g0 < 1:
        raise InvalidArgumentError("need C_g >= 1 and 0 < g0 < 1")
    if isinstance(mesh, TimeMesh):
        log_size = -np.asarray(mesh.levels, dtype=float) * math.log(3.0)
    else:
        log_size = np.log(np.diff(np.asarray(mesh, dtype=float)))
    idx = np.arange(log_size.size)
    lhs = log_size[:, None] - log_size[None, :]
    rhs = math.log(C_g) - np.abs(idx[:, None] - idx[None, :]) * math.log(g0)
    return bool(np.all(lhs <= rhs + 1e-12))


def doerfler_mark(eta_sq, theta):
    """Minimal-cardinality Doerfler set; ties go to the smaller index."""
    theta = check_theta(theta)
    eta_sq = np.asarray(eta_sq, dtype=float)
    if eta_sq.ndim != 1 or np.any(eta_sq < 0) or not np.all(np.isfinite(eta_sq)):
        raise InvalidArgumentError("eta_sq must be a finite nonnegative 1-D array")
    positive = np.flatnonzero(eta_sq > 0)
    if positive.size == 0:
        return MarkSet((), theta)
    if theta == 1.0:
        return MarkSet(tuple(int(i) for i in positive), theta)
    order = np.argsort(-eta_sq, kind="stable")
    csum = np.cumsum(eta_sq[order])
    k = int(np.searchsorted(csum, theta * csum[-1], side="left"))
    return MarkSet(tuple(sorted(int(i) for i in order[: k + 1])), theta)


def dumps_mesh(mesh):
    lines = [f"t_end={float(mesh.t_end)!r} h0={float(mesh.h0)!r}"]
    lines += [repr(float(t)) for t in mesh.breakpoints]
    lines.append(" ".join(str(l) for l in mesh.levels))
    return "\n".join(lines) + "\n"


def loads_mesh(text):
    rows = [r.strip() for r in text.strip().splitlines()]
    if len(rows) < 4:
        raise InvalidArgumentError("mesh text too short")
    try:
        header = dict(item.split("=", 1) for item in rows[0].split())
        t_end, h0 = float(header["t_end"]), float(header["h0"])
        points = [float(r) for r in rows[1:-1]]
        levels = tuple(int(v) for v in rows[-1].split())
    except (KeyError, ValueError) as exc:
        raise InvalidArgumentError(f"malformed mesh text: {exc}") from None
    if len(points) != len(levels) + 1:
        raise InvalidArgumentError("breakpoint and level counts disagree")
    depth = max(levels)
    unit = 3**depth
    ticks = [0]
    for lvl in levels:
        ticks.append(ticks[-1] + unit // 3**lvl)
    mesh = TimeMesh(tuple(ticks), levels, depth, h0, t_end)
    if not np.allclose(mesh.breakpoints, points, rtol=0, atol=1e-12 * t_end):
        raise InvalidArgumentError("breakpoints disagree with levels")
    return mesh
