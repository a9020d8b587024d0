"""Raw tensor payload I/O: row-major little-endian arrays, shape kept in a JSON sidecar.

Payload files carry no header; the manifest entry (name, path, shape, dtype)
is the single source of truth for interpretation.  f32/i32 are the on-disk
dtypes for bundle tensors; f64 is used by feature artifacts where downstream
selection must be bit-exact with the in-memory pipeline.
"""

import os

import numpy as np

from .errors import IoFailure, MissingFile, ShapeMismatch

DTYPES = {
    "f32": np.dtype("<f4"),
    "i32": np.dtype("<i4"),
    "f64": np.dtype("<f8"),
}


def dtype_tag(arr):
    """Return the manifest dtype tag for an array."""
    kind = arr.dtype.kind
    if kind == "f":
        return "f64" if arr.dtype.itemsize == 8 else "f32"
    if kind in "iu":
        return "i32"
    raise ValueError(f"unsupported dtype {arr.dtype}")


def write_tensor(path, arr):
    """Write an array as a raw row-major little-endian payload."""
    tag = dtype_tag(arr)
    data = np.ascontiguousarray(arr, dtype=DTYPES[tag])
    try:
        with open(path, "wb") as fh:
            fh.write(data.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_tensor(path, shape, dtype):
    """Read a raw payload back into an array, checking byte length against shape."""
    if dtype not in DTYPES:
        raise ShapeMismatch(f"{path}: unknown dtype tag {dtype!r}")
    dt = DTYPES[dtype]
    if not os.path.isfile(path):
        raise MissingFile(f"tensor file not found: {path}")
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise ShapeMismatch(
            f"{path}: {actual} bytes on disk, shape {list(shape)} needs {expected}"
        )
    data = np.fromfile(path, dtype=dt)
    return data.reshape(shape)


def tensor_entry(name, path, arr):
    """Manifest entry for one tensor."""
    return {
        "name": name,
        "path": path,
        "shape": [int(s) for s in arr.shape],
        "dtype": dtype_tag(arr),
    }
