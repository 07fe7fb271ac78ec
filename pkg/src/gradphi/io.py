"""Deterministic artifact I/O: CSV with fixed formatting, the compact
binary frame format, and run manifests with content checksums."""

import hashlib
import json
import struct
import time

import numpy as np

__all__ = ["write_csv", "read_csv", "write_frames", "read_frames",
           "sha256_file", "Manifest"]

FRAME_MAGIC = b"GPHI"
FRAME_VERSION = 1


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, columns, rows, manifest_ref=""):
    """Write rows (iterables matching columns) with reproducible float
    formatting; the final line carries the manifest reference."""
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
        fh.write(f"# manifest={manifest_ref}\n")
    return path


def read_csv(path):
    """(columns, array of float rows, manifest_ref)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        ref = ""
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                if "manifest=" in line:
                    ref = line.split("manifest=")[1]
                continue
            if line:
                rows.append([float(v) for v in line.split(",")])
    return header, np.array(rows), ref


def write_frames(path, d, n, times, frames):
    """Binary frame format: magic 'GPHI', uint32 version, d, n, frame
    count; then per frame a float64 time and n^d float64 site values."""
    times = np.asarray(times, dtype=np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<III", FRAME_VERSION, d, n))
        fh.write(struct.pack("<I", len(times)))
        for t, f in zip(times, frames):
            fh.write(struct.pack("<d", t))
            fh.write(f.astype("<f8").tobytes())
    return path


def read_frames(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FRAME_MAGIC:
            raise ValueError("not a GPHI frame file")
        version, d, n = struct.unpack("<III", fh.read(12))
        if version != FRAME_VERSION:
            raise ValueError(f"unsupported frame version {version}")
        count, = struct.unpack("<I", fh.read(4))
        nsites = n ** d
        times = np.empty(count)
        frames = np.empty((count, nsites))
        for k in range(count):
            times[k], = struct.unpack("<d", fh.read(8))
            frames[k] = np.frombuffer(fh.read(8 * nsites), dtype="<f8")
    return d, n, times, frames


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Self-describing record of one experiment run."""

    def __init__(self, config_dict, code_version):
        self.config = config_dict
        self.code_version = code_version
        canon = json.dumps(config_dict, sort_keys=True, default=str)
        self.config_hash = hashlib.sha256(canon.encode()).hexdigest()[:16]
        self.outputs = {}
        self.results = {}
        self._t0 = time.time()

    def add_output(self, path):
        self.outputs[str(path)] = sha256_file(path)

    def write(self, path):
        payload = {
            "config": self.config,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "outputs": self.outputs,
            "results": self.results,
            "wall_clock_seconds": round(time.time() - self._t0, 3),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return path
