import numpy as np
import pytest

from netdrift.datasets import load_libsvm, save_libsvm
from netdrift.errors import LabelDomainError, MalformedLine

from conftest import make_rng


def test_basic_sparse_line(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("+1 1:0.5 3:2\n")
    h, y = load_libsvm(p, expected_dim=3)
    assert np.array_equal(h, np.array([[0.5, 0.0, 2.0]]))
    assert np.array_equal(y, np.array([1.0]))


def test_zero_one_labels_mapped(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("0 1:1\n1 2:1\n")
    h, y = load_libsvm(p)
    assert np.array_equal(y, np.array([-1.0, 1.0]))


def test_dimension_inferred_from_max_index(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("-1 2:1.5\n+1 5:1\n")
    h, _ = load_libsvm(p)
    assert h.shape == (2, 5)


def test_malformed_line_reports_number(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("+1 1:1\n+1 oops\n")
    with pytest.raises(MalformedLine) as err:
        load_libsvm(p)
    assert err.value.line_no == 2


def test_non_binary_labels_rejected(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("3 1:1\n")
    with pytest.raises(LabelDomainError):
        load_libsvm(p)


def test_round_trip_lossless(tmp_path):
    rng = make_rng(1)
    h = np.round(rng.standard_normal((1000, 7)), 6)
    h[rng.random((1000, 7)) < 0.5] = 0.0  # sparsity
    y = np.where(rng.random(1000) < 0.5, 1.0, -1.0)
    p = tmp_path / "rt.txt"
    save_libsvm(p, h, y)
    h2, y2 = load_libsvm(p, expected_dim=7)
    assert np.array_equal(h, h2)
    assert np.array_equal(y, y2)
