"""Minimal NIfTI-1 single-file reader and writer.

Supported subset, everything else fails loudly: single-file .nii or
.nii.gz, 3D or 4D, element types uint8 / int16 / float32, either byte
order on read (always little-endian on write). The on-disk layout is
Fortran-ordered with the first dimension fastest, so a C-ordered
[D, H, W] (or [T, D, H, W]) array maps onto file dims (W, H, D[, T])
and spacing (sd, sh, sw) onto (pixdim[3], pixdim[2], pixdim[1]).
"""

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import NiftiFormatError, UnsupportedNiftiError

HEADER_SIZE = 348
DATA_OFFSET = 352  # header + 4-byte empty extension flag

_DTYPE_CODES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
}
_CODE_FOR_DTYPE = {dt: code for code, dt in _DTYPE_CODES.items()}


def _read_raw(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_nifti(path):
    """Parse a supported NIfTI-1 file into (volume, spacing).

    Returns ([D,H,W] or [T,D,H,W] ndarray, (sd, sh, sw) floats). The
    scl_slope/scl_inter rescaling is applied when nontrivial, promoting
    the payload to float32; otherwise the stored dtype passes through
    untouched.
    """
    raw = _read_raw(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(f"{path}: truncated header "
                               f"({len(raw)} bytes)")
    order = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise NiftiFormatError(f"{path}: sizeof_hdr is not 348; not a "
                                   "NIfTI-1 file")
        order = ">"
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise UnsupportedNiftiError(f"{path}: two-file (.hdr/.img) NIfTI "
                                    "is not supported")
    if magic != b"n+1\x00":
        raise NiftiFormatError(f"{path}: bad magic {magic!r}")

    dim = struct.unpack_from(order + "8h", raw, 40)
    (datatype, bitpix) = struct.unpack_from(order + "2h", raw, 70)
    pixdim = struct.unpack_from(order + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(order + "f", raw, 108)
    (scl_slope, scl_inter) = struct.unpack_from(order + "2f", raw, 112)

    ndim = dim[0]
    if ndim not in (3, 4):
        raise UnsupportedNiftiError(f"{path}: dim[0]={ndim}; only 3D and 4D "
                                    "volumes are supported")
    sizes = dim[1:1 + ndim]
    if any(s < 1 for s in sizes):
        raise NiftiFormatError(f"{path}: non-positive dim entries {sizes}")
    if datatype not in _DTYPE_CODES:
        raise UnsupportedNiftiError(
            f"{path}: datatype code {datatype}; supported: uint8 (2), "
            "int16 (4), float32 (16)")
    dt = _DTYPE_CODES[datatype].newbyteorder(order)
    if bitpix != dt.itemsize * 8:
        raise NiftiFormatError(f"{path}: bitpix {bitpix} does not match "
                               f"datatype code {datatype}")

    count = int(np.prod(sizes))
    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise NiftiFormatError(f"{path}: vox_offset {vox_offset} inside "
                               "header")
    if len(raw) < offset + count * dt.itemsize:
        raise NiftiFormatError(f"{path}: payload truncated (need "
                               f"{count * dt.itemsize} bytes at {offset})")
    flat = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
    # Fortran file order, first dim fastest == C order on reversed dims.
    volume = flat.reshape(tuple(reversed(sizes)))
    volume = np.ascontiguousarray(volume.astype(dt.newbyteorder("="),
                                                copy=False))

    slope = scl_slope if scl_slope != 0.0 else 1.0
    if slope != 1.0 or scl_inter != 0.0:
        volume = volume.astype(np.float32) * np.float32(slope) \
            + np.float32(scl_inter)
    spacing = (float(pixdim[3]), float(pixdim[2]), float(pixdim[1]))
    return volume, spacing


def write_nifti(path, volume, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a [D,H,W] or [T,D,H,W] array as single-file NIfTI-1.

    The array dtype must already be one of the supported element types;
    values are stored verbatim (scl_slope 1, scl_inter 0) so a read
    back is bit-exact.
    """
    arr = np.asarray(volume)
    if arr.ndim not in (3, 4):
        raise UnsupportedNiftiError(f"volume must be rank 3 or 4, got rank "
                                    f"{arr.ndim}")
    dt = arr.dtype.newbyteorder("=")
    if dt not in _CODE_FOR_DTYPE:
        raise UnsupportedNiftiError(
            f"dtype {arr.dtype} not in the supported set (uint8, int16, "
            "float32); convert explicitly before writing")
    sd, sh, sw = (float(s) for s in spacing)

    sizes = tuple(reversed(arr.shape))  # (W, H, D[, T])
    dim = [arr.ndim, *sizes] + [1] * (7 - arr.ndim)
    pixdim = [1.0, sw, sh, sd] + [1.0] * (arr.ndim - 3) + [0.0] * (7 - arr.ndim)

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<2h", hdr, 70, _CODE_FOR_DTYPE[dt], dt.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(DATA_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    hdr[344:348] = b"n+1\x00"

    payload = np.ascontiguousarray(arr).astype(dt.newbyteorder("<"),
                                               copy=False).tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00\x00\x00\x00")
        fh.write(payload)
