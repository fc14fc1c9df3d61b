import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsepcm import io as pcmio
from sparsepcm.core import ComparisonSet, DensePcm, ScoreVector


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_sniff(tmp_path):
    assert pcmio.sniff(write(tmp_path, "s.csv", "i,j,value\n0,1,2\n")) == "sparse"
    assert pcmio.sniff(write(tmp_path, "c.csv", "i,j,wins_i,wins_j\n0,1,2,1\n")) == "counts"
    assert pcmio.sniff(write(tmp_path, "d.csv", "1,2\n0.5,1\n")) == "dense"


def test_sparse_round_trip(tmp_path):
    obs = ComparisonSet.from_edges(4, [(0, 1, 3.0), (2, 1, 1 / 7), (3, 0, 1e-5)])
    path = tmp_path / "s.csv"
    pcmio.write_sparse(obs, path)
    back = pcmio.read_sparse(path)
    assert back.edges == obs.edges


def test_sparse_n_override(tmp_path):
    path = write(tmp_path, "s.csv", "i,j,value\n0,1,2\n")
    assert pcmio.read_sparse(path, n=5).n == 5


@pytest.mark.parametrize(
    "body, line",
    [
        ("0,1,abc\n", 2),
        ("0,1\n", 2),
        ("0,1,2\n0,1,3\n", 3),
        ("0,0,2\n", 2),
        ("0,1,2\n1,x,2\n", 3),
        ("0,1,-2\n", 2),
    ],
)
def test_sparse_errors_carry_line(tmp_path, body, line):
    path = write(tmp_path, "s.csv", "i,j,value\n" + body)
    with pytest.raises(pcmio.PcmParseError) as info:
        pcmio.read_sparse(path)
    assert info.value.line == line


def test_counts_round_trip(tmp_path):
    obs = ComparisonSet.from_counts(3, [(0, 1, 3, 1), (1, 2, 0, 2)])
    path = tmp_path / "c.csv"
    pcmio.write_counts(obs, path)
    assert path.read_text() == "i,j,wins_i,wins_j\n0,1,3,1\n1,2,0,2\n"
    assert pcmio.read_counts(path).edges == obs.edges


def test_counts_reject_fractional(tmp_path):
    path = write(tmp_path, "c.csv", "i,j,wins_i,wins_j\n0,1,1.5,0\n")
    with pytest.raises(pcmio.PcmParseError):
        pcmio.read_counts(path)


def test_dense_fractions(tmp_path):
    path = write(tmp_path, "d.csv", "1,3,4\n1/3,1,2\n1/4,1/2,1\n")
    a = pcmio.read_dense(path).entries
    assert a[1, 0] == 1 / 3 and a[2, 1] == 0.5


def test_dense_ragged(tmp_path):
    with pytest.raises(pcmio.PcmParseError) as info:
        pcmio.read_dense(write(tmp_path, "d.csv", "1,2\n0.5\n"))
    assert info.value.line == 2


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
def test_dense_round_trip_is_exact(vals):
    x = np.array(vals)
    pcm = DensePcm(np.exp(x[:, None] - x[None, :]))
    buf = io.StringIO()
    for row in pcm.entries:
        buf.write(",".join(pcmio.fmt(v) for v in row) + "\n")
    parsed = np.array([[float(c) for c in line.split(",")] for line in buf.getvalue().splitlines()])
    np.testing.assert_array_equal(parsed, pcm.entries)


def test_fmt_folds_negative_zero():
    assert pcmio.fmt(-0.0) == "0.0"


def test_ranking_ties_by_id():
    x = ScoreVector([0.5, 1.0, 0.5, -1.0])
    assert [i for _, i, _ in pcmio.ranking(x)] == [1, 0, 2, 3]
    buf = io.StringIO()
    pcmio.write_ranking(x, buf)
    assert buf.getvalue().splitlines()[:2] == ["rank,i,score", "1,1,1.0"]


def test_scores_file(tmp_path):
    path = tmp_path / "x.csv"
    pcmio.write_scores(ScoreVector([1.5, -1.5]), path)
    assert path.read_text() == "i,score\n0,1.5\n1,-1.5\n"
