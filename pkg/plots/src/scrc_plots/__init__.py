"""Static figure panels for scrc sweep results."""

from .figures import (
    ALL_KINDS,
    EmptyPanelError,
    FigureSpec,
    SchemaMismatchError,
    delta_table_cells,
    load_aggregate,
    render,
)

__version__ = "0.1.0"
