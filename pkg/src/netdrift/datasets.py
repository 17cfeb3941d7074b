"""Sparse-text dataset I/O.

Reads the `label idx:val ...` format (1-indexed feature ids) used by the
common binary-classification benchmark dumps; labels are normalized to
{-1, +1}, with {0, 1} inputs mapped to -1/+1.
"""

import numpy as np

from .errors import LabelDomainError, MalformedLine


def load_libsvm(path, expected_dim=None):
    """Parse a sparse-text file into (features (n, M), labels (n,)).

    The dimension is inferred from the largest feature index unless
    `expected_dim` pins (and validates) it.
    """
    rows = []
    labels = []
    max_idx = 0
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise MalformedLine(path, line_no, f"bad label field {parts[0]!r}")
            entries = []
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise MalformedLine(path, line_no, f"expected idx:val, got {tok!r}")
                try:
                    idx = int(idx)
                    val = float(val)
                except ValueError:
                    raise MalformedLine(path, line_no, f"bad entry {tok!r}")
                if idx < 1:
                    raise MalformedLine(path, line_no, f"feature ids are 1-indexed, got {idx}")
                entries.append((idx, val))
                max_idx = max(max_idx, idx)
            rows.append(entries)
            labels.append(label)
    dim = expected_dim if expected_dim is not None else max_idx
    if expected_dim is not None and max_idx > expected_dim:
        raise MalformedLine(path, 0, f"feature id {max_idx} exceeds dim {expected_dim}")
    h = np.zeros((len(rows), dim))
    for r, entries in enumerate(rows):
        for idx, val in entries:
            h[r, idx - 1] = val
    y = _normalize_labels(np.asarray(labels, dtype=float))
    return h, y


def _normalize_labels(y):
    vals = set(np.unique(y).tolist())
    if vals <= {-1.0, 1.0}:
        return y
    if vals <= {0.0, 1.0}:
        return np.where(y == 0.0, -1.0, 1.0)
    raise LabelDomainError(f"labels must be binary (-1/+1 or 0/1), got {sorted(vals)}")


def save_libsvm(path, features, labels):
    """Write (features, labels) in the sparse-text format (round-trippable)."""
    h = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    with open(path, "w") as fh:
        for row, label in zip(h, y):
            toks = [f"{int(label):+d}"]
            for j in np.flatnonzero(row != 0.0):
                toks.append(f"{j + 1}:{row[j]:.17g}")
            fh.write(" ".join(toks) + "\n")
