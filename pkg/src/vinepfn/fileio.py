"""On-disk formats: PFN weights, pixel grids, dataset CSV.

Binary formats are little-endian and end with a CRC32 of every preceding
byte. All writers go through :func:`atomic_write`.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
import zlib

import numpy as np

WEIGHTS_MAGIC = b"PFNW"
WEIGHTS_VERSION = 1
GRID_MAGIC = b"PXGR"
GRID_VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str):
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _check_crc(data: bytes, what: str) -> bytes:
    if len(data) < 8:
        raise FormatError(f"{what} file is truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError(f"{what} file CRC mismatch")
    return body


class _Reader:
    def __init__(self, data, what):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what} file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def text(self):
        return self.take(self.u32()).decode("utf-8")


def _pack_text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


# ------------------------------------------------------------------- weights


def weights_to_bytes(weights) -> bytes:
    from .pfn import param_shapes

    cfg = weights.config.to_dict()
    out = [WEIGHTS_MAGIC, struct.pack("<I", WEIGHTS_VERSION),
           _pack_text(json.dumps(cfg, sort_keys=True))]
    shapes = param_shapes(weights.config)
    out.append(struct.pack("<I", len(shapes)))
    for name in shapes:
        arr = np.ascontiguousarray(weights.params[name], dtype="<f4")
        out.append(_pack_text(name))
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return _with_crc(b"".join(out))


def weights_from_bytes(data: bytes):
    from .pfn import PfnConfig, PfnWeights

    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError("bad weights magic")
    r = _Reader(_check_crc(data, "weights"), "weights")
    r.take(4)
    version = r.u32()
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weights version {version}")
    try:
        cfg = PfnConfig(**json.loads(r.text()))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad weights config: {exc}") from exc
    params = {}
    for _ in range(r.u32()):
        name = r.text()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float64)
    try:
        return PfnWeights(cfg, params)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save_weights(weights, path):
    atomic_write(path, weights_to_bytes(weights))


def load_weights(path):
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())


def default_weights_path():
    return os.path.join(os.path.dirname(__file__), "data", "default.pfnw")


# ---------------------------------------------------------------------- grid


def grid_to_bytes(grid) -> bytes:
    n_pix = grid.width * grid.height
    out = [GRID_MAGIC, struct.pack("<IIII", GRID_VERSION, grid.width, grid.height, grid.n_features),
           struct.pack("<4d", *grid.geo)]
    out.extend(_pack_text(n) for n in grid.names)
    out.append(np.packbits(grid.nodata.reshape(-1).astype(np.uint8), bitorder="little").tobytes())
    out.append(np.ascontiguousarray(grid.planes, dtype="<f4").tobytes())
    if grid.block_id is None:
        out.append(struct.pack("<I", 0))
    else:
        out.append(struct.pack("<I", 1))
        out.append(np.ascontiguousarray(grid.block_id.reshape(n_pix), dtype="<i4").tobytes())
    return _with_crc(b"".join(out))


def grid_from_bytes(data: bytes):
    from .geomap import PixelGrid

    if data[:4] != GRID_MAGIC:
        raise FormatError("bad grid magic")
    r = _Reader(_check_crc(data, "grid"), "grid")
    r.take(4)
    version, width, height, n_features = struct.unpack("<IIII", r.take(16))
    if version != GRID_VERSION:
        raise FormatError(f"unsupported grid version {version}")
    geo = struct.unpack("<4d", r.take(32))
    names = [r.text() for _ in range(n_features)]
    n_pix = width * height
    bits = np.frombuffer(r.take((n_pix + 7) // 8), dtype=np.uint8)
    nodata = np.unpackbits(bits, bitorder="little")[:n_pix].astype(bool).reshape(height, width)
    planes = np.frombuffer(r.take(4 * n_pix * n_features), dtype="<f4").reshape(n_features, height, width)
    block_id = None
    if r.u32():
        block_id = np.frombuffer(r.take(4 * n_pix), dtype="<i4").reshape(height, width).astype(np.int64)
    if r.pos != len(r.data):
        raise FormatError("trailing bytes in grid file")
    return PixelGrid(width, height, names, planes.copy(), nodata, block_id, geo)


def save_grid(grid, path):
    atomic_write(path, grid_to_bytes(grid))


def load_grid(path):
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())


# ----------------------------------------------------------------------- CSV

DISEASE_PREFIX = "disease:"


def _fmt(v):
    return "" if not np.isfinite(v) else f"{v:.6g}"


def dataset_to_csv(ds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = list(ds.names)
    if ds.labels.ndim == 2:
        header += [DISEASE_PREFIX + d for d in ds.disease_names]
    else:
        header.append("label")
    if ds.block_id is not None:
        header.append("block_id")
    w.writerow(header)
    labels = ds.labels.reshape(len(ds.labels), -1)
    for i in range(ds.n_rows):
        row = [_fmt(v) for v in ds.x[i]] + [str(int(v)) for v in labels[i]]
        if ds.block_id is not None:
            row.append(str(ds.block_id[i]))
        w.writerow(row)
    return buf.getvalue()


def write_dataset_csv(ds, path):
    atomic_write(path, dataset_to_csv(ds))


def read_dataset_csv(path, require_labels=True):
    """Parse a dataset CSV; empty cells become NaN."""
    from .eval.protocol import TabularDataset

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    disease_cols = [j for j, h in enumerate(header) if h.startswith(DISEASE_PREFIX)]
    label_col = header.index("label") if "label" in header else None
    block_col = header.index("block_id") if "block_id" in header else None
    skip = set(disease_cols) | {label_col, block_col}
    feat_cols = [j for j in range(len(header)) if j not in skip]
    if require_labels and not disease_cols and label_col is None:
        raise FormatError(f"{path}: no 'label' or 'disease:<name>' columns")

    def num(cell, r, c):
        if cell.strip() == "":
            return np.nan
        try:
            return float(cell)
        except ValueError:
            raise FormatError(f"{path}: row {r + 2}, column {header[c]!r}: not a number: {cell!r}") from None

    for r, row in enumerate(body):
        if len(row) != len(header):
            raise FormatError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
    x = np.array([[num(row[c], r, c) for c in feat_cols] for r, row in enumerate(body)], dtype=np.float64)
    x = x.reshape(len(body), len(feat_cols))
    if disease_cols:
        labels = np.array([[int(num(row[c], r, c)) for c in disease_cols] for r, row in enumerate(body)])
        labels = labels.reshape(len(body), len(disease_cols))
        diseases = [header[c][len(DISEASE_PREFIX):] for c in disease_cols]
    elif label_col is not None:
        labels = np.array([int(num(row[label_col], r, label_col)) for r, row in enumerate(body)])
        diseases = None
    else:
        labels = np.zeros(len(body), dtype=np.int64)
        diseases = None
    blocks = np.array([row[block_col] for row in body]) if block_col is not None else None
    return TabularDataset([header[c] for c in feat_cols], x, labels, blocks, diseases)
