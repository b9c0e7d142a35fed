"""Publication-style figures from tilted-piston CSV outputs.

The renderers only read the delimited files the simulation CLI writes;
no physics is recomputed here.
"""

from .jobs import FigureError, FigureJob, FigureKind, build_job
from .render import render

__all__ = ["FigureError", "FigureJob", "FigureKind", "build_job", "render"]
