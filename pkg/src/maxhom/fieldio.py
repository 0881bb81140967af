"""On-disk formats: binary field records, CSV logs, JSON reports.

Binary field record layout (all little-endian):
    8 bytes   magic b"MAXHOM01"
    u32       number of dimensions d
    u32 * d   dimension sizes (C order)
    u32       snapshot stride (steps between stored levels)
    f64       time step
    u64       payload length in float64 values
    f64 * n   payload, C order

CSV files carry a header row, comma separators and '.' decimals; floats
are written with repr-level precision so repeated runs produce
byte-identical files. JSON is UTF-8 with sorted keys for the same reason.
"""

from __future__ import annotations

import json
import struct
import numpy as np

from .errors import InputError

MAGIC = b"MAXHOM01"

__all__ = ["write_field", "read_field", "write_energy_csv",
           "write_trajectory_csv", "write_convergence_csv", "write_json",
           "format_float"]


def format_float(v):
    v = float(v)
    return repr(v)


def write_field(path, array, stride=1, dt=0.0):
    """Write one field array as a binary record."""
    a = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(struct.pack("<I", int(stride)))
        fh.write(struct.pack("<d", float(dt)))
        fh.write(struct.pack("<Q", a.size))
        fh.write(a.tobytes(order="C"))


def read_field(path):
    """Read a binary field record; returns (array, meta dict)."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise InputError(f"{path}: not a field record (bad magic)")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        (stride,) = struct.unpack("<I", fh.read(4))
        (dt,) = struct.unpack("<d", fh.read(8))
        (count,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
    if count != int(np.prod(shape)):
        raise InputError(f"{path}: payload length does not match the header")
    return data.reshape(shape).copy(), {"stride": stride, "dt": dt}


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            format_float(v) if isinstance(v, float) or isinstance(v, np.floating)
            else str(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_energy_csv(path, energy_log):
    """Per-step energy budget of a run."""
    log = energy_log.arrays()
    header = ["step", "t", "ED", "HB", "cum_dissipation", "rhs_bound"]
    rows = [
        (int(s), float(t), float(ed), float(hb), float(cd), float(rb))
        for s, t, ed, hb, cd, rb in zip(log["step"], log["t"], log["ED"],
                                        log["HB"], log["cum_dissipation"],
                                        log["rhs_bound"])
    ]
    _write_csv(path, header, rows)


def write_trajectory_csv(path, times, psi):
    """Reduced spectral trajectory: t, psi_1..psi_2n."""
    psi = np.atleast_2d(psi)
    header = ["t"] + [f"psi_{i + 1}" for i in range(psi.shape[1])]
    rows = [(float(t),) + tuple(float(v) for v in row)
            for t, row in zip(times, psi)]
    _write_csv(path, header, rows)


def write_convergence_csv(path, report):
    """Pairing table of a convergence study."""
    header = ["epsilon", "f_index", "I_eps", "stderr", "I_0", "gap",
              "resolved"]
    rows = [(float(r["epsilon"]), int(r["f_index"]), float(r["I_eps"]),
             float(r["stderr"]), float(r["I_0"]), float(r["gap"]),
             str(bool(r["resolved"])).lower())
            for r in report.rows()]
    _write_csv(path, header, rows)


def write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
