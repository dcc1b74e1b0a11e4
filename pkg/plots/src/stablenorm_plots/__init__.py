"""Static figures from stablenorm run outputs.

Strictly file-to-file: the readers validate the frozen CSV/JSON formats
and the renderers draw what the files say.  Nothing here recomputes a
tension, a Wulff shape, or an energy.
"""

from .io import (SchemaError, read_fan, read_field, read_mask,
                 read_planelike, read_report, read_wulff)
from .figures import FigureSpec, figure_metadata, render

__all__ = [
    "FigureSpec",
    "SchemaError",
    "figure_metadata",
    "read_fan",
    "read_field",
    "read_mask",
    "read_planelike",
    "read_report",
    "read_wulff",
    "render",
]
