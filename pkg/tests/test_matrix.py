from pathlib import Path

import numpy as np
from pytest import raises

from nsfa.errors import ParseError
from nsfa.matrix import format_matrix, load_matrix, parse_matrix


def test_parse_with_missing_entry():
    matrix = parse_matrix('1.0,2.0\n3.0,NA\n')
    assert matrix.values.shape == (2, 2)
    assert matrix.mask.tolist() == [[True, True], [True, False]]
    assert matrix.values[1, 0] == 3.0


def test_parse_header():
    matrix = parse_matrix('s1,s2,s3\n1,2,3\n', header=True)
    assert matrix.values.tolist() == [[1.0, 2.0, 3.0]]


def test_empty_file():
    with raises(ParseError):
        parse_matrix('')
    with raises(ParseError):
        parse_matrix('\n  \n')


def test_ragged_rows():
    with raises(ParseError) as error:
        parse_matrix('1,2\n3,4,5\n')
    assert error.value.line == 2
    assert 'line 2' in str(error.value)


def test_non_numeric_token():
    with raises(ParseError) as error:
        parse_matrix('1,2\n3,4\nx,5\n')
    assert error.value.line == 3
    with raises(ParseError):
        parse_matrix('1,inf\n')


def test_round_trip():
    rng = np.random.default_rng(0)
    values = rng.standard_normal((4, 6))
    mask = rng.random((4, 6)) > 0.2
    matrix = parse_matrix(format_matrix(values, mask))
    assert np.array_equal(matrix.mask, mask)
    assert np.array_equal(matrix.values[mask], values[mask])


def test_format_integers():
    assert format_matrix(np.array([[1, 0], [0, 1]], dtype=np.int8)) == (
        '1,0\n0,1\n'
    )


def test_load_matrix(tmp_path: Path):
    path = tmp_path / 'data.csv'
    path.write_text('0.5,NA\n', encoding='utf-8')
    assert load_matrix(path).has_missing
    with raises(LookupError):
        load_matrix(tmp_path / 'missing.csv')


def test_format_keeps_full_precision():
    values = np.array([[0.1 + 0.2, 1 / 3], [np.pi, -0.5]])
    text = format_matrix(values)
    assert text.splitlines()[0] == '0.30000000000000004,0.33333333333333331'
    assert np.array_equal(parse_matrix(text).values, values)

    mask = np.array([[True, False], [False, True]])
    assert format_matrix(values, mask).splitlines() == [
        '0.30000000000000004,NA', 'NA,-0.5',
    ]
