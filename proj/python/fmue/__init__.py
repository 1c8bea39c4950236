"""Evidential uncertainty classifier for layered retinal scans."""

from ._fmue import *  # noqa: F401,F403
from ._fmue import Model, CalibrationReport

__all__ = [name for name in dir() if not name.startswith("_")]
