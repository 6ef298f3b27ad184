"""Constraint sets and the sensed knowledge about them.

Regions are small immutable expression trees over the joint ``(x, u)``
space.  A :class:`KnowledgeState` tracks what has been sensed so far and
derives the verified safe set and the optimistic estimated set from it.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .dynamics import SystemModel, steady_residual

__all__ = [
    "SafetyBreach",
    "Setpoint",
    "HyperBox",
    "OutputDisk",
    "FinitePointSet",
    "Intersection",
    "Union",
    "RegionExpr",
    "KnowledgeState",
    "SensingReport",
    "contains",
    "contains_with_margin",
    "region_violation",
    "sense",
    "update_knowledge",
    "is_steady_admissible",
    "region_from_dict",
    "region_to_dict",
    "STEADY_TOL",
]

STEADY_TOL = 1e-8
MARGIN_ROUNDING = 1e-12


class SafetyBreach(RuntimeError):
    """The real system is outside the true constraint set."""


@dataclass(frozen=True)
class Setpoint:
    x: object
    u: object

    @property
    def discrete(self) -> bool:
        return not isinstance(self.x, np.ndarray)

    def z(self):
        if self.discrete:
            return (self.x, self.u)
        return np.concatenate([np.atleast_1d(self.x), np.atleast_1d(self.u)]).astype(float)

    def to_dict(self) -> dict:
        if self.discrete:
            return {"x": self.x, "u": self.u}
        return {"x": [float(a) for a in self.x], "u": [float(a) for a in self.u]}

    @classmethod
    def from_dict(cls, data: dict) -> "Setpoint":
        if isinstance(data["x"], list):
            return cls(np.asarray(data["x"], dtype=float), np.asarray(data["u"], dtype=float))
        return cls(data["x"], data["u"])

    def __eq__(self, other):
        if not isinstance(other, Setpoint):
            return NotImplemented
        if self.discrete or other.discrete:
            return self.x == other.x and self.u == other.u
        return bool(np.array_equal(self.x, other.x) and np.array_equal(self.u, other.u))

    def __hash__(self):
        if self.discrete:
            return hash((self.x, self.u))
        return hash((tuple(self.x), tuple(self.u)))


# -- region expressions ------------------------------------------------------


@dataclass(frozen=True)
class HyperBox:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("box bounds differ in length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("box has lower > upper")


@dataclass(frozen=True)
class OutputDisk:
    """Closed disk in the output plane spanned by ``axes`` of ``z``."""

    center: tuple
    radius: float
    sense: str = "inside"
    axes: tuple = (0, 1)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")
        if self.sense not in ("inside", "outside"):
            raise ValueError(f"unknown disk sense {self.sense!r}")

    def distance(self, z) -> float:
        return math.hypot(float(z[self.axes[0]]) - self.center[0], float(z[self.axes[1]]) - self.center[1])


@dataclass(frozen=True)
class FinitePointSet:
    points: frozenset

    @classmethod
    def of(cls, pts: Iterable) -> "FinitePointSet":
        return cls(frozenset(tuple(p) for p in pts))


@dataclass(frozen=True)
class Intersection:
    parts: tuple


@dataclass(frozen=True)
class Union:
    parts: tuple

    @functools.cached_property
    def _disk_table(self):
        """Centers and radii when every part is an inside-disk on one pair of axes."""
        parts = self.parts
        if not parts or not all(isinstance(p, OutputDisk) and p.sense == "inside" for p in parts):
            return None
        axes = parts[0].axes
        if any(p.axes != axes for p in parts):
            return None
        centers = np.array([p.center for p in parts], dtype=float)
        radii = np.array([p.radius for p in parts], dtype=float)
        return axes, centers, radii


RegionExpr = HyperBox | OutputDisk | FinitePointSet | Intersection | Union


def _zvec(z):
    if isinstance(z, np.ndarray):
        return z
    if isinstance(z, tuple) and len(z) == 2 and isinstance(z[0], np.ndarray):
        return np.concatenate([z[0], np.atleast_1d(z[1])])
    return z


def contains(region: RegionExpr, z) -> bool:
    """Exact membership of ``z = (x, u)`` in ``region``."""
    return contains_with_margin(region, z, 0.0, strict_obstacles=True)


def contains_with_margin(region: RegionExpr, z, margin: float, strict_obstacles: bool = False) -> bool:
    """Whether the closed ``margin``-ball around ``z`` lies inside ``region``.

    Finite point sets ignore the margin.  With ``strict_obstacles`` an
    outside-disk also rejects points on its boundary circle.
    """
    if isinstance(region, FinitePointSet):
        key = tuple(z) if not isinstance(z, tuple) else z
        return key in region.points
    z = _zvec(z)
    # a positive margin is compared with a rounding allowance, so that a
    # point placed exactly margin away from a face (e.g. 12 - 0.01) counts
    m = margin - MARGIN_ROUNDING if margin > 0 else margin
    if isinstance(region, HyperBox):
        for i, (lo, hi) in enumerate(zip(region.lower, region.upper)):
            if z[i] - lo < m or hi - z[i] < m:
                return False
        return True
    if isinstance(region, OutputDisk):
        d = region.distance(z)
        if region.sense == "inside":
            return d <= region.radius - m
        if strict_obstacles and margin == 0.0:
            return d > region.radius
        return d >= region.radius + m
    if isinstance(region, Intersection):
        return all(contains_with_margin(p, z, margin, strict_obstacles) for p in region.parts)
    if isinstance(region, Union):
        table = region._disk_table
        if table is not None and len(region.parts) > 8:
            return _in_disk_union(region, table, z, margin, strict_obstacles)
        return any(contains_with_margin(p, z, margin, strict_obstacles) for p in region.parts)
    raise TypeError(f"not a region: {region!r}")


def _in_disk_union(region, table, z, margin, strict_obstacles) -> bool:
    # the vectorized distance only shortlists disks; the verdict comes from the scalar test
    axes, centers, radii = table
    y = np.array([float(z[axes[0]]), float(z[axes[1]])])
    d = np.hypot(centers[:, 0] - y[0], centers[:, 1] - y[1])
    slack = radii - margin - d
    for i in np.argsort(-slack):
        if slack[i] < -1e-9:
            return False
        if contains_with_margin(region.parts[i], z, margin, strict_obstacles):
            return True
    return False


def region_violation(region: RegionExpr, z, margin: float = 0.0) -> float:
    """How far ``z`` is from satisfying ``contains_with_margin`` (0 when inside).

    Magnitudes are in coordinate units; finite sets report ``inf`` for
    non-members.
    """
    if isinstance(region, FinitePointSet):
        key = tuple(z) if not isinstance(z, tuple) else z
        return 0.0 if key in region.points else math.inf
    z = _zvec(z)
    if isinstance(region, HyperBox):
        worst = 0.0
        for i, (lo, hi) in enumerate(zip(region.lower, region.upper)):
            worst = max(worst, lo + margin - z[i], z[i] - (hi - margin))
        return float(worst)
    if isinstance(region, OutputDisk):
        d = region.distance(z)
        if region.sense == "inside":
            return max(0.0, d - (region.radius - margin))
        return max(0.0, region.radius + margin - d)
    if isinstance(region, Intersection):
        return max((region_violation(p, z, margin) for p in region.parts), default=0.0)
    if isinstance(region, Union):
        return min((region_violation(p, z, margin) for p in region.parts), default=math.inf)
    raise TypeError(f"not a region: {region!r}")


def region_to_dict(region: RegionExpr) -> dict:
    if isinstance(region, HyperBox):
        return {"type": "box", "lower": [_num_out(v) for v in region.lower], "upper": [_num_out(v) for v in region.upper]}
    if isinstance(region, OutputDisk):
        return {"type": "disk", "center": list(region.center), "radius": region.radius,
                "sense": region.sense, "axes": list(region.axes)}
    if isinstance(region, FinitePointSet):
        return {"type": "points", "points": [list(p) for p in sorted(region.points)]}
    if isinstance(region, Intersection):
        return {"type": "intersection", "parts": [region_to_dict(p) for p in region.parts]}
    if isinstance(region, Union):
        return {"type": "union", "parts": [region_to_dict(p) for p in region.parts]}
    raise TypeError(f"not a region: {region!r}")


def region_from_dict(data: dict) -> RegionExpr:
    kind = data["type"]
    if kind == "box":
        return HyperBox(tuple(_num_in(v) for v in data["lower"]), tuple(_num_in(v) for v in data["upper"]))
    if kind == "disk":
        return OutputDisk(tuple(float(c) for c in data["center"]), float(data["radius"]),
                          data.get("sense", "inside"), tuple(data.get("axes", (0, 1))))
    if kind == "points":
        return FinitePointSet.of(data["points"])
    if kind == "intersection":
        return Intersection(tuple(region_from_dict(p) for p in data["parts"]))
    if kind == "union":
        return Union(tuple(region_from_dict(p) for p in data["parts"]))
    raise ValueError(f"unknown region type {kind!r}")


def _num_out(v):
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return v


def _num_in(v):
    if isinstance(v, str):
        return float(v)
    return float(v)


# -- knowledge ---------------------------------------------------------------


@dataclass(frozen=True)
class SensingReport:
    center: tuple
    newly_discovered: frozenset = frozenset()


@dataclass(frozen=True)
class KnowledgeState:
    """Ground truth plus what the vehicle has sensed of it.

    For sensed scenarios ``truth = base minus obstacles``; the safe set is
    ``base`` intersected with the union of sensed disks, minus every obstacle
    that touches a sensed disk, and the estimated set is ``base`` minus the
    discovered obstacles.  Finite scenarios set ``static_safe`` and
    ``static_estimated`` instead and never change.
    """

    base: Optional[RegionExpr] = None
    obstacles: tuple = ()
    discovered: frozenset = frozenset()
    sensed_centers: tuple = ()
    sense_radius: float = 2.5
    lambda_margin: float = 0.01
    discovery: str = "intersection"
    static_truth: Optional[RegionExpr] = None
    static_safe: Optional[RegionExpr] = None
    static_estimated: Optional[RegionExpr] = None
    output_axes: tuple = (0, 1)

    @property
    def is_static(self) -> bool:
        return self.static_safe is not None

    @property
    def truth(self) -> RegionExpr:
        if self.static_truth is not None:
            return self.static_truth
        return Intersection((self.base, *self.obstacles))

    def _touching(self) -> frozenset:
        # obstacles whose closed disk meets some sensed disk
        out = set()
        for i, obs in enumerate(self.obstacles):
            for c in self.sensed_centers:
                if math.hypot(c[0] - obs.center[0], c[1] - obs.center[1]) <= self.sense_radius + obs.radius:
                    out.add(i)
                    break
        return frozenset(out)

    @property
    def known_obstacles(self) -> frozenset:
        return self.discovered | self._touching()

    @property
    def safe(self) -> RegionExpr:
        if self.static_safe is not None:
            return self.static_safe
        disks = tuple(OutputDisk(tuple(c), self.sense_radius, "inside", self.output_axes) for c in self.sensed_centers)
        obs = tuple(self.obstacles[i] for i in sorted(self.known_obstacles))
        return Intersection((self.base, Union(disks), *obs))

    @property
    def estimated(self) -> RegionExpr:
        if self.static_estimated is not None:
            return self.static_estimated
        obs = tuple(self.obstacles[i] for i in sorted(self.known_obstacles))
        return Intersection((self.base, *obs))

    def known_obstacle_disks(self) -> list:
        return [self.obstacles[i] for i in sorted(self.known_obstacles)]


def sense(k: KnowledgeState, z) -> SensingReport:
    if not contains(k.truth, z):
        raise SafetyBreach(f"closed-loop pair {z!r} left the constraint set")
    if k.is_static:
        return SensingReport(center=(), newly_discovered=frozenset())
    zv = _zvec(z)
    y = (float(zv[k.output_axes[0]]), float(zv[k.output_axes[1]]))
    found = set()
    for i, obs in enumerate(k.obstacles):
        if i in k.discovered:
            continue
        d = math.hypot(y[0] - obs.center[0], y[1] - obs.center[1])
        reach = k.sense_radius + obs.radius if k.discovery == "intersection" else k.sense_radius
        if d <= reach:
            found.add(i)
    return SensingReport(center=y, newly_discovered=frozenset(found))


def update_knowledge(k: KnowledgeState, report: SensingReport) -> KnowledgeState:
    if k.is_static:
        return k
    centers = k.sensed_centers
    if report.center and tuple(report.center) not in centers:
        centers = centers + (tuple(report.center),)
    return replace(k, sensed_centers=centers, discovered=k.discovered | report.newly_discovered)


def is_steady_admissible(model: SystemModel, r: Setpoint, region: RegionExpr, lam: float) -> bool:
    res = steady_residual(model, r)
    if model.discrete:
        if res != 0:
            return False
        return contains(region, (r.x, r.u))
    if res > STEADY_TOL:
        return False
    return contains_with_margin(region, r.z(), lam)
