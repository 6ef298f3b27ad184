"""Kernel dispatch: the compiled extension when importable, NumPy otherwise.

Set ``SAFEXPLORE_PURE_PYTHON=1`` to force the fallback.
"""
import os

BACKEND = "python"

if os.environ.get("SAFEXPLORE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._core._bicycle import bicycle_rollout, bicycle_rollout_sens, bicycle_step

        BACKEND = "compiled"
    except ImportError:
        pass

if BACKEND == "python":
    from ._core._fallback import bicycle_rollout, bicycle_rollout_sens, bicycle_step

__all__ = ["BACKEND", "bicycle_step", "bicycle_rollout", "bicycle_rollout_sens"]
