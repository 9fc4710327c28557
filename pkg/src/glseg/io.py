"""Readers and writers for every on-disk format the package uses.

Feature matrices: CSV (optional header) or the ``GLSEGF01`` binary layout.
Labels / fidelity: CSV ``index,label``. Results: CSV ``index,label,u``.
Energy traces: CSV ``iter,eps,smoothing,potential,fidelity,total``.
Graph edges: CSV ``i,j,w`` with ``i < j``. Images: binary PGM (P5).
MNIST: IDX.

Floats are written with ``repr`` so files round-trip exactly and repeat
runs produce byte-identical output.
"""

from __future__ import annotations

import csv
import gzip
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

BINARY_MAGIC = b"GLSEGF01"

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# feature matrices
# ---------------------------------------------------------------------------


def _is_number(field: str) -> bool:
    try:
        float(field)
    except ValueError:
        return False
    return True


def read_features_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise FormatError(f"{path}: empty feature file")
    if not all(_is_number(f) for f in rows[0]):
        rows = rows[1:]
    try:
        X = np.array([[float(f) for f in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric feature value ({exc})") from None
    if X.ndim != 2 or X.shape[0] == 0:
        raise FormatError(f"{path}: rows have inconsistent lengths or no data")
    return X


def write_features_csv(path, X: np.ndarray, header: bool = False) -> None:
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"x{k}" for k in range(X.shape[1])])
        for row in X:
            w.writerow([_fmt(v) for v in row])


def read_features_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != BINARY_MAGIC:
        raise FormatError(f"{path}: missing {BINARY_MAGIC!r} magic")
    if len(data) < 24:
        raise FormatError(f"{path}: truncated header")
    n, d = struct.unpack("<QQ", data[8:24])
    if len(data) != 24 + 8 * n * d:
        raise FormatError(f"{path}: expected {n}x{d} doubles, file size {len(data)} disagrees")
    return np.frombuffer(data, dtype="<f8", offset=24).reshape(n, d).astype(np.float64)


def write_features_binary(path, X: np.ndarray) -> None:
    X = np.ascontiguousarray(X, dtype="<f8")
    n, d = X.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQ", n, d))
        fh.write(X.tobytes())


def read_features(path) -> np.ndarray:
    """Load a feature matrix, detecting the binary layout by its magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == BINARY_MAGIC:
        return read_features_binary(path)
    return read_features_csv(path)


# ---------------------------------------------------------------------------
# labels, results, traces, edges
# ---------------------------------------------------------------------------


def read_index_label_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read the first two columns of an ``index,label[,...]`` CSV; a header row is skipped."""
    idx, lab = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if lineno == 1 and not _is_number(row[0]):
                continue
            if len(row) < 2:
                raise FormatError(f"{path}:{lineno}: expected index,label")
            try:
                idx.append(int(row[0]))
                lab.append(int(row[1]))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer index or label") from None
    return np.array(idx, dtype=np.int64), np.array(lab, dtype=np.int64)


def read_label_vector(path) -> np.ndarray:
    """Dense label vector from an ``index,label`` CSV covering indices ``0..n-1`` once each."""
    idx, lab = read_index_label_csv(path)
    n = idx.size
    if n == 0 or not np.array_equal(np.sort(idx), np.arange(n)):
        raise FormatError(f"{path}: indices must cover 0..n-1 exactly once")
    out = np.empty(n, dtype=np.int64)
    out[idx] = lab
    return out


def write_labels_csv(path, labels, indices=None) -> None:
    labels = np.asarray(labels)
    indices = np.arange(labels.size) if indices is None else np.asarray(indices)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        for i, k in zip(indices.tolist(), labels.tolist()):
            w.writerow([i, k])


def write_result_csv(path, labels, state) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label", "u"])
        for i, (k, u) in enumerate(zip(np.asarray(labels).tolist(), np.asarray(state).tolist())):
            w.writerow([i, k, _fmt(u)])


def write_energy_csv(path, trace, eps) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "eps", "smoothing", "potential", "fidelity", "total"])
        for m, (e, ep) in enumerate(zip(trace, eps), 1):
            w.writerow([m, _fmt(ep), _fmt(e.smoothing), _fmt(e.potential), _fmt(e.fidelity), _fmt(e.total)])


def write_edges_csv(path, graph) -> None:
    i, j, wts = graph.edge_list()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "w"])
        for a, b, c in zip(i.tolist(), j.tolist(), wts.tolist()):
            w.writerow([a, b, _fmt(c)])


def write_confusion_csv(path, matrix: np.ndarray) -> None:
    """Rows are obtained labels, columns true labels; first row/column carry class indices."""
    K = matrix.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obtained/true", *range(K)])
        for k in range(K):
            w.writerow([k, *matrix[k].tolist()])


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def read_pgm(path) -> np.ndarray:
    """Load an 8-bit grayscale image as a ``(height, width)`` uint8 array."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise FormatError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
            return np.array(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: unreadable image ({exc})") from None


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise FormatError("PGM output needs a 2-D uint8 array")
    Image.fromarray(img, mode="L").save(path, format="PPM")


# ---------------------------------------------------------------------------
# IDX (MNIST)
# ---------------------------------------------------------------------------


def _open_maybe_gz(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Unsigned-byte IDX file (optionally gzipped) as an ndarray of its stated shape."""
    with _open_maybe_gz(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", data[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: IDX magic {magic}, expected {expected_magic}")
    if magic >> 8 != 0x08:
        raise FormatError(f"{path}: only unsigned-byte IDX data is supported (magic {magic})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) != header + count:
        raise FormatError(f"{path}: dimensions {dims} disagree with file size {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    payload = struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()
    with (gzip.GzipFile(path, "wb", mtime=0) if str(path).endswith(".gz") else open(path, "wb")) as fh:
        fh.write(payload)


def read_mnist(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """MNIST image/label pair as ``(n, rows*cols)`` uint8 pixels and ``(n,)`` labels."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3 or labels.ndim != 1:
        raise FormatError("MNIST images must be 3-D and labels 1-D")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images.reshape(images.shape[0], -1), labels.astype(np.int64)
