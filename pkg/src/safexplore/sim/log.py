"""Per-step records of a closed-loop run and their JSON-lines encoding."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..mpc import TrajectoryPair

__all__ = ["StepLog", "LogFormatError", "write_log", "read_log", "LOG_VERSION"]

LOG_VERSION = 1


class LogFormatError(ValueError):
    """A run log could not be parsed."""


def _num(v):
    # JSON has no infinities; null stands for +inf (an unset F_hat)
    if v is None:
        return None
    v = float(v)
    if math.isinf(v) and v > 0:
        return None
    if not math.isfinite(v):
        raise LogFormatError(f"cannot encode {v!r}")
    return v


def _plain(v):
    if isinstance(v, np.ndarray):
        return [float(a) for a in v]
    if isinstance(v, (tuple, list)):
        return [_plain(a) for a in v]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _state(v, discrete):
    if discrete:
        return tuple(v) if isinstance(v, list) else v
    return np.asarray(v, dtype=float)


@dataclass
class StepLog:
    """Everything known at step ``t``; ``S``/``F_hat`` are the values the solve saw."""

    t: int
    x: Any
    u: Any
    y: Any
    S: float
    F_hat: float
    F_star: float
    objective: float
    stage0: float
    pair: TrajectoryPair
    sensed_center: tuple = ()
    newly_discovered: tuple = ()
    solver_status: str = ""
    wall_ms: float = 0.0
    discrete: bool = False

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "x": _plain(self.x),
            "u": _plain(self.u),
            "y": _plain(self.y),
            "S": _num(self.S),
            "F_hat": _num(self.F_hat),
            "F_star": _num(self.F_star),
            "objective": _num(self.objective),
            "stage0": _num(self.stage0),
            "pair": self.pair.to_dict(),
            "sensed_center": [float(c) for c in self.sensed_center],
            "newly_discovered": sorted(int(i) for i in self.newly_discovered),
            "solver_status": self.solver_status,
            "wall_ms": float(self.wall_ms),
            "discrete": self.discrete,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepLog":
        try:
            disc = bool(d["discrete"])
            fl = lambda k: math.inf if d[k] is None else float(d[k])  # noqa: E731
            return cls(
                t=int(d["t"]),
                x=_state(d["x"], disc),
                u=_state(d["u"], disc),
                y=_state(d["y"], disc),
                S=fl("S"),
                F_hat=fl("F_hat"),
                F_star=fl("F_star"),
                objective=fl("objective"),
                stage0=fl("stage0"),
                pair=TrajectoryPair.from_dict(d["pair"], disc),
                sensed_center=tuple(float(c) for c in d["sensed_center"]),
                newly_discovered=tuple(int(i) for i in d["newly_discovered"]),
                solver_status=str(d["solver_status"]),
                wall_ms=float(d["wall_ms"]),
                discrete=disc,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(f"malformed step record: {exc}") from exc


def write_log(path, logs, header: Optional[dict] = None) -> Path:
    """First line is a ``{"header": ...}`` record, then one step per line."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": {"version": LOG_VERSION, **(header or {})}}, allow_nan=False) + "\n")
        for rec in logs:
            fh.write(json.dumps(rec.to_dict(), allow_nan=False) + "\n")
    return path


def read_log(path):
    """Returns ``(header, [StepLog, ...])``."""
    header, steps = None, []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"{path}:{lineno}: {exc}") from exc
            if lineno == 1:
                if "header" not in rec:
                    raise LogFormatError(f"{path}: missing header record")
                header = rec["header"]
                continue
            steps.append(StepLog.from_dict(rec))
    if header is None:
        raise LogFormatError(f"{path}: empty log")
    for i, s in enumerate(steps):
        if s.t != i:
            raise LogFormatError(f"{path}: step {i} is labelled t={s.t}")
    return header, steps

