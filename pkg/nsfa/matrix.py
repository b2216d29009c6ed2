'''
UTF-8 CSV codec for observation matrices: rows are dimensions, columns are
samples, the literal token NA marks a missing entry.
'''
from io import StringIO
from pathlib import Path
from typing import Optional

import numpy as np

from nsfa.entity import ObservationMatrix
from nsfa.errors import ParseError

MISSING_TOKEN = 'NA'


def parse_matrix(text: str, header: bool = False) -> ObservationMatrix:
    rows: list[list[float]] = []
    masks: list[list[bool]] = []
    width: Optional[int] = None

    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if header and number == 1:
            continue

        tokens = [token.strip() for token in line.split(',')]
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise ParseError(
                f'expected {width} values, got {len(tokens)}', number
            )

        values, mask = [], []
        for token in tokens:
            if token == MISSING_TOKEN:
                values.append(0.0)
                mask.append(False)
                continue
            try:
                value = float(token)
            except ValueError:
                raise ParseError(f'not a number: {token!r}', number) from None
            if not np.isfinite(value):
                raise ParseError(f'non-finite value: {token!r}', number)
            values.append(value)
            mask.append(True)

        rows.append(values)
        masks.append(mask)

    if not rows:
        raise ParseError('empty matrix file')

    return ObservationMatrix(np.array(rows), np.array(masks))


def load_matrix(path: str | Path, header: bool = False) -> ObservationMatrix:
    path = Path(path)
    if not path.exists():
        raise LookupError(f'matrix file not found: {path}')
    return parse_matrix(path.read_text(encoding='utf-8'), header)


def format_matrix(
    values: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> str:
    values = np.atleast_2d(np.asarray(values))
    fmt = '%d' if np.issubdtype(values.dtype, np.integer) else '%.17g'
    buffer = StringIO()
    if mask is None or np.all(mask):
        np.savetxt(buffer, values, fmt=fmt, delimiter=',')
    else:
        tokens = np.where(mask, np.char.mod(fmt, values), MISSING_TOKEN)
        np.savetxt(buffer, tokens, fmt='%s', delimiter=',')
    return buffer.getvalue()
