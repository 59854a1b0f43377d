"""On-disk formats: binary time tags, histogram CSV, JSON sidecars.

Time tags go into a little-endian binary file: a 16-byte header (magic
"TTAG", u16 version, 10 reserved zero bytes) followed by 16-byte records
(u64 timestamp in ps, u8 channel with 0 = A and 1 = B, 7 zero pad bytes),
sorted by timestamp with channel breaking ties.  The header has no room
for metadata, so the acquisition duration and provenance travel in a JSON
sidecar next to the file ("<file>.json").

Histograms are CSV with columns lag_ps, counts, g2, sigma (full float
precision) plus a JSON sidecar holding the normalisation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .correlator import CorrelationHistogram, TimeTagStream

__all__ = [
    "TTAG_MAGIC",
    "TTAG_VERSION",
    "write_time_tags",
    "read_time_tags",
    "write_histogram_csv",
    "read_histogram_csv",
    "write_json",
    "sha256_file",
]

TTAG_MAGIC = b"TTAG"
TTAG_VERSION = 1
_HEADER = struct.Struct("<4sH10x")
_RECORD_DTYPE = np.dtype([("t", "<u8"), ("ch", "u1"), ("pad", "V7")])


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_time_tags(path, a: TimeTagStream, b: TimeTagStream, metadata: dict | None = None) -> Path:
    """Write both channels into one TTAG file plus its JSON sidecar."""
    path = Path(path)
    times = np.concatenate([a.tags, b.tags])
    chans = np.concatenate([
        np.zeros(len(a), dtype=np.uint8),
        np.ones(len(b), dtype=np.uint8),
    ])
    order = np.lexsort((chans, times))
    records = np.zeros(times.size, dtype=_RECORD_DTYPE)
    records["t"] = times[order].astype(np.uint64)
    records["ch"] = chans[order]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TTAG_MAGIC, TTAG_VERSION))
        fh.write(records.tobytes())
    sidecar = {
        "format": "ttag",
        "version": TTAG_VERSION,
        "duration_ps": int(min(a.duration, b.duration)),
        "n_a": len(a),
        "n_b": len(b),
    }
    if metadata:
        sidecar["metadata"] = metadata
    write_json(_sidecar_path(path), sidecar)
    return path


def read_time_tags(path) -> tuple[TimeTagStream, TimeTagStream, dict]:
    """Read a TTAG file; returns (channel A, channel B, sidecar metadata)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version = _HEADER.unpack_from(raw)
    if magic != TTAG_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {TTAG_MAGIC!r}")
    if version != TTAG_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size:]
    if len(body) % _RECORD_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated record block")
    records = np.frombuffer(body, dtype=_RECORD_DTYPE)
    bad = ~np.isin(records["ch"], (0, 1))
    if np.any(bad):
        raise ValueError(f"{path}: invalid channel byte {records['ch'][bad][0]}")
    meta: dict = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    tags = records["t"].astype(np.int64)
    duration = int(meta.get("duration_ps", tags[-1] if tags.size else 1))
    a = TimeTagStream(tags[records["ch"] == 0], "A", duration)
    b = TimeTagStream(tags[records["ch"] == 1], "B", duration)
    return a, b, meta


def write_histogram_csv(path, hist: CorrelationHistogram, metadata: dict | None = None) -> Path:
    """CSV of (lag_ps, counts, g2, sigma) plus a normalisation sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag_ps", "counts", "g2", "sigma"])
        for edge, n, g, s in zip(hist.lag_edges, hist.counts, hist.g2, hist.sigma):
            writer.writerow([int(edge), int(n), repr(float(g)), repr(float(s))])
    sidecar = {
        "format": "g2-histogram",
        "bin_width_ps": hist.bin_width,
        "lag_min_ps": hist.lag_min,
        "lag_max_ps": hist.lag_max,
        "duration_ps": hist.duration,
        "rate_a_hz": hist.rate_a,
        "rate_b_hz": hist.rate_b,
    }
    if metadata:
        sidecar["metadata"] = metadata
    write_json(_sidecar_path(path), sidecar)
    return path


def read_histogram_csv(path) -> tuple[CorrelationHistogram, dict]:
    """Rebuild a histogram from the CSV and its sidecar."""
    path = Path(path)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FileNotFoundError(f"{sidecar}: histogram sidecar is required for normalisation")
    meta = json.loads(sidecar.read_text())
    edges, counts, g2, sigma = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            edges.append(int(row["lag_ps"]))
            counts.append(int(row["counts"]))
            g2.append(float(row["g2"]))
            sigma.append(float(row["sigma"]))
    hist = CorrelationHistogram(
        counts=np.asarray(counts, dtype=np.int64),
        bin_width=int(meta["bin_width_ps"]),
        lag_min=int(meta["lag_min_ps"]),
        lag_max=int(meta["lag_max_ps"]),
        duration=int(meta["duration_ps"]),
        rate_a=float(meta["rate_a_hz"]),
        rate_b=float(meta["rate_b_hz"]),
        g2=np.asarray(g2),
        sigma=np.asarray(sigma),
    )
    if edges and (edges[0] != hist.lag_min or len(edges) != hist.n_bins):
        raise ValueError(f"{path}: lag column does not match the sidecar window")
    return hist, meta.get("metadata", {})


def write_json(path, payload: dict) -> Path:
    """Deterministic JSON: sorted keys, newline-terminated."""
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
