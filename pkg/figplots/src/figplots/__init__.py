"""Figure rendering for qreadout simulation datasets."""

__version__ = "0.1.0"

from .spec import FIGURE_IDS, FigureDataError, FigureSpec
from .render import render
