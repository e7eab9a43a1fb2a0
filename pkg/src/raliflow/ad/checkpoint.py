"""Binary checkpoint format.

Layout (all little-endian):
    magic   4 bytes  "RLFW"
    version u32
    count   u32      number of tensors
    per tensor:
        name_len u16, name UTF-8, ndim u8, dims u32[ndim], data f64[prod(dims)]

Adam state rides along as extra tensors named "<param>.adam_m",
"<param>.adam_v" and "<param>.adam_t" (step count as a 0-d tensor), so a
resumed run continues bit-for-bit where it left off.
"""

import struct
from typing import Dict

import numpy as np

VERSION = 1
MAGIC = b"RLFW"


def write_tensors(path: str, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype=np.float64)
            if a.ndim and not a.flags.c_contiguous:
                a = np.ascontiguousarray(a)
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            for d in a.shape:
                f.write(struct.pack("<I", d))
            f.write(a.astype("<f8").tobytes())


def read_tensors(path: str) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(dims)
            out[name] = data.copy()
    return out


def save_params(path: str, params, extra: Dict[str, np.ndarray] = None) -> None:
    tensors: Dict[str, np.ndarray] = {}
    for p in params:
        tensors[p.name] = p.tensor.data
        tensors[p.name + ".adam_m"] = p.m
        tensors[p.name + ".adam_v"] = p.v
        tensors[p.name + ".adam_t"] = np.float64(p.step)
    if extra:
        tensors.update(extra)
    write_tensors(path, tensors)


def load_params(path: str, params) -> Dict[str, np.ndarray]:
    """Restore parameter values and Adam state in place; returns leftovers."""
    tensors = read_tensors(path)
    for p in params:
        if p.name not in tensors:
            raise KeyError(f"checkpoint missing parameter {p.name!r}")
        if tensors[p.name].shape != p.tensor.data.shape:
            raise ValueError(f"checkpoint shape {tensors[p.name].shape} != "
                             f"{p.tensor.data.shape} for {p.name!r}")
        p.tensor.data = tensors.pop(p.name)
        p.m = tensors.pop(p.name + ".adam_m", np.zeros_like(p.tensor.data))
        p.v = tensors.pop(p.name + ".adam_v", np.zeros_like(p.tensor.data))
        p.step = int(float(tensors.pop(p.name + ".adam_t", 0.0)))
    return tensors
