"""Immutable columnar numeric datasets, CSV ingestion, and row-subset views.

Every fit, predict, and target call in the engine receives a ``Dataset``. Columns
are float64 vectors (binary variables encoded as 0/1); a row subset is a
materialized copy, so callers never observe shared mutable state.
"""

from collections.abc import Iterator, Mapping, Sequence
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from .errors import CrossfitError, ErrorCode

FloatArray = npt.NDArray[np.float64]

# Full round-trip precision for float64.
CSV_FLOAT_FORMAT: str = "%.17g"


class Dataset:
    """Ordered map of column name to numeric vector with a fixed row count."""

    __slots__ = ("_columns", "_n_rows")

    def __init__(self, columns: Mapping[str, Sequence[float] | npt.ArrayLike]) -> None:
        """Validate and freeze the columns.

        Raises:
            CrossfitError: On empty or duplicate names, or ragged columns.
        """
        frozen: dict[str, FloatArray] = {}
        n_rows: int | None = None
        for name, values in columns.items():
            if not isinstance(name, str) or not name:
                raise CrossfitError(ErrorCode.INVALID_DATA, "Column names must be non-empty")
            array: FloatArray = np.array(values, dtype=np.float64)
            if array.ndim != 1:
                raise CrossfitError(
                    ErrorCode.INVALID_DATA, f"Column {name!r} must be one-dimensional"
                )
            if n_rows is None:
                n_rows = array.shape[0]
            elif array.shape[0] != n_rows:
                raise CrossfitError(
                    ErrorCode.INVALID_DATA,
                    f"Column {name!r} has {array.shape[0]} rows, expected {n_rows}",
                    {"column": name},
                )
            array.flags.writeable = False
            frozen[name] = array
        self._columns: dict[str, FloatArray] = frozen
        self._n_rows: int = n_rows or 0

    @property
    def n_rows(self) -> int:
        """Number of rows."""
        return self._n_rows

    @property
    def names(self) -> tuple[str, ...]:
        """Column names in order."""
        return tuple(self._columns)

    def __contains__(self, name: object) -> bool:
        return name in self._columns

    def __iter__(self) -> Iterator[str]:
        return iter(self._columns)

    def __len__(self) -> int:
        return self._n_rows

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.names != other.names or self.n_rows != other.n_rows:
            return False
        return all(np.array_equal(self._columns[name], other._columns[name]) for name in self)

    def __hash__(self) -> int:
        return hash((self.names, self.n_rows))

    def __repr__(self) -> str:
        return f"Dataset(n_rows={self._n_rows}, columns={list(self.names)})"

    def column(self, name: str) -> FloatArray:
        """Return the named column (read-only view)."""
        return column(self, name)

    def select_rows(self, idx: Sequence[int] | npt.NDArray[np.intp]) -> "Dataset":
        """Return the rows in ``idx`` order."""
        return select_rows(self, idx)

    def matrix(self, names: Sequence[str]) -> FloatArray:
        """Stack the named columns into an ``n_rows x len(names)`` matrix."""
        if not names:
            return np.empty((self._n_rows, 0), dtype=np.float64)
        return np.column_stack([column(self, name) for name in names])

    def with_columns(self, extra: Mapping[str, npt.ArrayLike]) -> "Dataset":
        """Return a copy with ``extra`` columns added or replaced."""
        merged: dict[str, npt.ArrayLike] = {**self._columns, **extra}
        return Dataset(merged)


def column(data: Dataset, name: str) -> FloatArray:
    """Return column ``name`` of ``data``.

    Raises:
        CrossfitError: ``UNKNOWN_COLUMN`` listing the available names.
    """
    try:
        return data._columns[name]
    except KeyError:
        raise CrossfitError(
            ErrorCode.UNKNOWN_COLUMN,
            f"Unknown column {name!r}; available: {', '.join(data.names) or '(none)'}",
            {"column": name, "available": list(data.names)},
        ) from None


def select_rows(data: Dataset, idx: Sequence[int] | npt.NDArray[np.intp]) -> Dataset:
    """Return a dataset holding exactly the rows in ``idx``, in ``idx`` order.

    Raises:
        CrossfitError: ``ROW_OUT_OF_RANGE`` for any index outside ``[0, n_rows)``.
    """
    indices: npt.NDArray[np.intp] = np.asarray(idx, dtype=np.intp).reshape(-1)
    if indices.size and (indices.min() < 0 or indices.max() >= data.n_rows):
        bad: int = int(indices[(indices < 0) | (indices >= data.n_rows)][0])
        raise CrossfitError(
            ErrorCode.ROW_OUT_OF_RANGE,
            f"Row index {bad} out of range for {data.n_rows} rows",
            {"index": bad, "n_rows": data.n_rows},
        )
    return Dataset({name: data._columns[name][indices] for name in data.names})


def read_csv(path: str | Path, header: bool = True) -> Dataset:
    """Load a comma-separated numeric table.

    Without a header row, columns are named ``x1 .. xk``.

    Raises:
        CrossfitError: ``IO_ERROR`` for a missing file, ``INVALID_DATA`` for an
            empty file, ragged rows, missing values, or non-numeric cells (the
            message names the 1-based data row and the column).
    """
    source: Path = Path(path)
    if not source.is_file():
        raise CrossfitError(ErrorCode.IO_ERROR, f"File not found: {source}", {"path": str(source)})

    try:
        frame: pd.DataFrame = pd.read_csv(
            source,
            header=0 if header else None,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise CrossfitError(ErrorCode.INVALID_DATA, f"{source}: no rows") from None
    except pd.errors.ParserError as exc:
        raise CrossfitError(
            ErrorCode.INVALID_DATA, f"{source}: ragged rows ({exc})", {"path": str(source)}
        ) from None

    if frame.empty:
        raise CrossfitError(ErrorCode.INVALID_DATA, f"{source}: no rows")
    if not header:
        frame.columns = [f"x{position + 1}" for position in range(frame.shape[1])]

    columns: dict[str, FloatArray] = {}
    for name in frame.columns:
        columns[str(name)] = _parse_column(source, str(name), frame[name])
    return Dataset(columns)


def _parse_column(source: Path, name: str, cells: "pd.Series[str]") -> FloatArray:
    """Parse one text column into floats, naming the first offending row.

    ``pd.to_numeric`` only screens the cells; the values come from a correctly
    rounded string-to-float conversion so written columns read back bit for bit.
    """
    numeric: pd.Series = pd.to_numeric(cells, errors="coerce")
    invalid: pd.Series = numeric.isna() | ~np.isfinite(numeric.to_numpy(dtype=np.float64))
    if invalid.any():
        row: int = int(np.flatnonzero(invalid.to_numpy())[0])
        cell: object = cells.iloc[row]
        problem: str = f"non-numeric cell {cell!r}"
        if not isinstance(cell, str):
            problem = "ragged row (too few fields)"
        elif not cell:
            problem = "missing value"
        raise CrossfitError(
            ErrorCode.INVALID_DATA,
            f"{source}: {problem} at row {row + 1}, column {name!r}",
            {"row": row + 1, "column": name},
        )
    return cells.astype(np.float64).to_numpy()


def write_csv(data: Dataset, path: str | Path) -> None:
    """Write ``data`` with a header row at full float precision."""
    frame: pd.DataFrame = pd.DataFrame({name: column(data, name) for name in data.names})
    try:
        frame.to_csv(Path(path), index=False, float_format=CSV_FLOAT_FORMAT)
    except OSError as exc:
        raise CrossfitError(ErrorCode.IO_ERROR, f"Cannot write {path}: {exc}") from None
