"""Binary and text artifacts: frame stacks, Gamma matrices, projections, images.

BPFS (frame stack), little-endian::

    magic "BPFS" | version u16 | mode u8 | width u16 | height u16 |
    frame_count u32 | calibration 6 x f64 | frames u16[count][height][width]

BPGM (joint distribution), little-endian::

    magic "BPGM" | version u16 | mode u8 | width u16 | height u16 |
    frame_count u32 | calibration 6 x f64 | clipped u8 |
    lower triangle of the P x P matrix, row-major (row i holds j <= i), f64
"""

from __future__ import annotations

import csv
import math
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .reconstruction import JointDistribution, ProjectionImage, ProjectionKind
from .simulator import CameraSpec, FrameStack, ImagingMode

BPFS_MAGIC = b"BPFS"
BPGM_MAGIC = b"BPGM"
VERSION = 1
_BPFS_HEADER = struct.Struct("<4sHBHHI6d")
_BPGM_HEADER = struct.Struct("<4sHBHHI6dB")


def _check_magic(found: bytes, expected: bytes, path) -> None:
    if found != expected:
        raise FormatError(f"{path}: expected magic {expected!r}, found {found!r}")


def _read_header(path, header: struct.Struct, magic: bytes):
    with open(path, "rb") as fh:
        raw = fh.read(header.size)
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short")
    _check_magic(raw[:4], magic, path)
    if len(raw) < header.size:
        raise FormatError(f"{path}: truncated header")
    fields = header.unpack(raw)
    if fields[1] != VERSION:
        raise FormatError(f"{path}: unsupported version {fields[1]}")
    if fields[2] not in (0, 1):
        raise FormatError(f"{path}: unknown mode byte {fields[2]}")
    return fields


def write_bpfs(path, stack: FrameStack) -> None:
    spec = stack.spec
    n, h, w = stack.frames.shape
    with open(path, "wb") as fh:
        fh.write(_BPFS_HEADER.pack(BPFS_MAGIC, VERSION, int(stack.mode), w, h, n, *spec.calibration))
        fh.write(np.ascontiguousarray(stack.frames, dtype="<u2").tobytes())


def bpfs_info(path) -> tuple[CameraSpec, ImagingMode, int]:
    _, _, mode, w, h, n, *cal = _read_header(path, _BPFS_HEADER, BPFS_MAGIC)
    return CameraSpec(w, h, tuple(cal)), ImagingMode(mode), n


def read_bpfs(path, spec: CameraSpec | None = None, mmap: bool = False) -> FrameStack:
    """Load a frame stack.

    The file carries geometry and calibration only; pass ``spec`` to attach
    the full camera model (its geometry must match).
    """
    file_spec, mode, n = bpfs_info(path)
    expected = _BPFS_HEADER.size + 2 * n * file_spec.pixels
    size = Path(path).stat().st_size
    if size != expected:
        raise FormatError(f"{path}: size {size} does not match header ({expected} bytes)")
    if spec is not None:
        if (spec.width, spec.height, tuple(spec.calibration)) != \
                (file_spec.width, file_spec.height, tuple(file_spec.calibration)):
            raise FormatError(f"{path}: geometry differs from the supplied camera spec")
        file_spec = spec
    shape = (n, file_spec.height, file_spec.width)
    if mmap:
        frames = np.memmap(path, dtype="<u2", mode="r", offset=_BPFS_HEADER.size, shape=shape)
    else:
        frames = np.fromfile(path, dtype="<u2", offset=_BPFS_HEADER.size).reshape(shape)
    return FrameStack(file_spec, mode, frames.astype(np.uint16, copy=False))


def write_bpgm(path, gamma: JointDistribution, clipped: bool = False) -> None:
    """Store Gamma; the unclipped matrix unless ``clipped`` is set (flagged in the header)."""
    spec = gamma.spec
    G = gamma.values if clipped else gamma.raw
    P = spec.pixels
    with open(path, "wb") as fh:
        fh.write(_BPGM_HEADER.pack(BPGM_MAGIC, VERSION, int(gamma.mode), spec.width, spec.height,
                                   gamma.frame_count, *spec.calibration, int(bool(clipped))))
        # row-major lower triangle, written a block of rows at a time
        for start in range(0, P, 256):
            rows = G[start:min(P, start + 256)]
            parts = [rows[k, :start + k + 1] for k in range(len(rows))]
            fh.write(np.concatenate(parts).astype("<f8").tobytes())


def read_bpgm(path) -> JointDistribution:
    _, _, mode, w, h, n, *rest = _read_header(path, _BPGM_HEADER, BPGM_MAGIC)
    cal, clipped = tuple(rest[:6]), bool(rest[6])
    spec = CameraSpec(w, h, cal)
    P = spec.pixels
    count = P * (P + 1) // 2
    data = np.fromfile(path, dtype="<f8", offset=_BPGM_HEADER.size)
    if data.size != count:
        raise FormatError(f"{path}: expected {count} matrix entries, found {data.size}")
    G = np.zeros((P, P))
    G[np.tril_indices(P)] = data
    G += np.tril(G, -1).T
    return JointDistribution(G, spec, ImagingMode(mode), n, clipped_input=clipped)


def write_pgm(path, image, lo: float | None = None, hi: float | None = None) -> None:
    """16-bit binary PGM (P5, big-endian samples), linearly scaled to [lo, hi].

    NaN pixels are written as 0.
    """
    a = np.asarray(image, dtype=float)
    if a.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    finite = np.isfinite(a)
    lo = float(np.min(a[finite])) if lo is None and finite.any() else (lo or 0.0)
    hi = float(np.max(a[finite])) if hi is None and finite.any() else (hi or 1.0)
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip(np.where(finite, (a - lo) / span, 0.0), 0.0, 1.0)
    data = np.rint(scaled * 65535).astype(">u2")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.frombuffer(parts[4][: w * h * np.dtype(dtype).itemsize], dtype=dtype)
    return pixels.reshape(h, w).astype(np.uint16)


def _diag_bins(kind: ProjectionKind, shape) -> np.ndarray:
    d = np.zeros(shape, bool)
    if kind is ProjectionKind.SUM:
        d[::2, ::2] = True
    elif kind is ProjectionKind.MINUS:
        d[shape[0] // 2, shape[1] // 2] = True
    else:
        d[np.diag_indices(shape[0])] = True
    return d


def write_projection_csv(path, proj: ProjectionImage) -> None:
    """Projection grid as CSV with ``# key=value`` metadata lines; masked bins are nan."""
    values = np.where(proj.mask, np.nan, proj.values)
    with open(path, "w", newline="") as fh:
        for key, value in (("kind", proj.kind.value), ("mode", proj.mode.name), ("x0", proj.x0),
                           ("dx", proj.dx), ("y0", proj.y0), ("dy", proj.dy),
                           ("include_diagonal", int(proj.include_diagonal))):
            fh.write(f"# {key}={float(value)!r}\n" if isinstance(value, (float, np.floating)) else f"# {key}={value}\n")
        writer = csv.writer(fh)
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def read_projection_csv(path) -> ProjectionImage:
    meta, rows = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            elif line.strip():
                rows.append([float(v) for v in line.strip().split(",")])
    try:
        kind = ProjectionKind(meta["kind"])
        mode = ImagingMode[meta["mode"]]
        x0, dx, y0, dy = (float(meta[k]) for k in ("x0", "dx", "y0", "dy"))
        include_diagonal = bool(int(meta.get("include_diagonal", "0")))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: missing or invalid projection metadata ({exc})") from None
    values = np.array(rows, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise FormatError(f"{path}: no projection data")
    mask = np.isnan(values)
    return ProjectionImage(kind, np.where(mask, 0.0, values), x0, dx, y0, dy, mode, mask=mask,
                           diag_bins=_diag_bins(kind, values.shape), include_diagonal=include_diagonal)


TABLE_COLUMNS = ["scenario", "lc_um", "sigma_k_rad_per_mm", "sigma_r_um", "K_exp", "K_exp_err", "K_theory"]


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)  # numpy scalars would otherwise print as np.float64(...)
        return "inf" if math.isinf(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_rows_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _cell(row[c]) for c in columns})


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
