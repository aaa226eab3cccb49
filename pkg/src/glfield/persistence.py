"""State dumps and density exports.

A state dump is ``MAGIC | u64 header length | JSON header | float64 payload``.
The header records the grid metadata, the configuration needed to rebuild
the discrete problem, the payload layout and its SHA-256.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

STATE_MAGIC = b"GLSTATE1"
DENSITY_MAGIC = b"GLDENS01"


class ChecksumError(ValueError):
    """The dump is truncated, corrupted or not a dump at all."""


def _write(path, magic, header: dict, payload: bytes):
    header = dict(header)
    header["sha256"] = hashlib.sha256(payload).hexdigest()
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def _read(path, magic):
    raw = Path(path).read_bytes()
    if raw[:len(magic)] != magic or len(raw) < len(magic) + 8:
        raise ChecksumError(f"{path}: bad magic")
    (n,) = struct.unpack("<Q", raw[len(magic):len(magic) + 8])
    start = len(magic) + 8
    try:
        header = json.loads(raw[start:start + n])
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ChecksumError(f"{path}: unreadable header") from err
    payload = raw[start + n:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ChecksumError(f"{path}: payload checksum mismatch")
    return header, payload


def save_state(path, state, prob, meta: dict | None = None):
    """Dump x, y, Re psi, Im psi, |psi|^2, B0 per node and the edge line integrals."""
    g = prob.grid
    nodes = np.stack([g.x, g.y, state.psi.real, state.psi.imag, np.abs(state.psi) ** 2,
                      prob.field(g.x, g.y)], axis=1).astype("<f8")
    edges = np.asarray(state.a, "<f8")
    header = {
        "format": 1,
        "n_nodes": int(g.n_nodes), "n_edges": int(g.n_a), "grid_h": g.h,
        "node_columns": ["x1", "x2", "re_psi", "im_psi", "abs_psi2", "B0"],
        "lattice_N": int(g.N), "lattice_origin": g.origin,
        "meta": meta or {},
    }
    _write(path, STATE_MAGIC, header, nodes.tobytes() + edges.tobytes())


def load_state(path):
    """Return ``(header, nodes[n, 6], a[m])``."""
    header, payload = _read(path, STATE_MAGIC)
    n, m = header["n_nodes"], header["n_edges"]
    if len(payload) != 8 * (6 * n + m):
        raise ChecksumError(f"{path}: payload size does not match header")
    arr = np.frombuffer(payload, "<f8")
    return header, arr[:6 * n].reshape(n, 6).copy(), arr[6 * n:].copy()


def export_density(dump_path, fmt: str, out_path):
    """Write ``x1, x2, |psi|^2, B0`` per active node as CSV or binary; returns the row count."""
    _, nodes, _ = load_state(dump_path)
    cols = nodes[:, [0, 1, 4, 5]]
    if fmt == "csv":
        with open(out_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x1", "x2", "psi2", "B0"])
            for row in cols:
                wr.writerow([repr(float(v)) for v in row])
    elif fmt == "bin":
        _write(out_path, DENSITY_MAGIC, {"columns": ["x1", "x2", "psi2", "B0"],
                                         "rows": int(cols.shape[0])},
               np.ascontiguousarray(cols, "<f8").tobytes())
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return int(cols.shape[0])


def load_density(path) -> np.ndarray:
    header, payload = _read(path, DENSITY_MAGIC)
    return np.frombuffer(payload, "<f8").reshape(header["rows"], 4).copy()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
