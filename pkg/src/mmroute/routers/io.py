"""Binary router files.

Layout (little-endian)::

    b"MMRR" | u32 version | u32 meta_len | meta JSON (utf-8)
    u32 n_arrays, then per array:
        u16 name_len | name | u8 dtype (4 = f32, 8 = f64) | u8 ndim | u32 * ndim shape | data

The JSON meta echoes the router kind and config, K, feature dim, and the
featurizer (fusion config plus its frozen statistics live in the array
section under ``featurizer.*``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..fusion import ConfidenceStats, Featurizer, FusionConfig
from . import ROUTER_CLASSES, Router, RouterConfig

MAGIC = b"MMRR"
VERSION = 1


class RouterFileError(ValueError):
    pass


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = 4 if arr.dtype == np.float32 else 8
    data = arr.astype("<f4" if code == 4 else "<f8")
    nb = name.encode()
    return (struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, data.ndim)
            + struct.pack(f"<{data.ndim}I", *data.shape) + data.tobytes())


def save_router(path, router: Router, featurizer: Featurizer) -> None:
    arrays = {f"router.{k}": v for k, v in router.state().items()}
    if featurizer.stats is not None:
        st = featurizer.stats
        arrays["featurizer.prototypes"] = np.stack(st.prototypes)
        arrays["featurizer.norm_mean"] = np.array(st.norm_mean)
        arrays["featurizer.norm_std"] = np.array(st.norm_std)
    fc = featurizer.config
    meta = {
        "kind": router.kind,
        "config": router.config.to_dict(),
        **router.meta(),
        "fusion": {"mode": fc.mode, "temperature": fc.temperature,
                   "interaction_alpha": fc.interaction_alpha,
                   "interaction_beta": fc.interaction_beta},
        "diagnostics": list(router.diagnostics),
    }
    mj = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(mj)), mj, struct.pack("<I", len(arrays))]
    parts += [_pack_array(k, arrays[k]) for k in sorted(arrays)]
    Path(path).write_bytes(b"".join(parts))


def load_router(path, expected_dim: int | None = None) -> tuple[Router, Featurizer]:
    """Read a router file; ``expected_dim`` guards against embeddings of a
    different width than the router was trained on."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise RouterFileError(f"{path}: not a router file")
    version, mlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise RouterFileError(f"{path}: unsupported router file version {version}")
    off = 12
    meta = json.loads(raw[off:off + mlen].decode())
    off += mlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nl].decode()
        off += nl
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        dt = np.dtype("<f4" if code == 4 else "<f8")
        size = int(np.prod(shape)) * dt.itemsize
        arrays[name] = np.frombuffer(raw, dtype=dt, count=int(np.prod(shape)),
                                     offset=off).reshape(shape).astype(np.float64)
        off += size
    if off != len(raw):
        raise RouterFileError(f"{path}: {len(raw) - off} trailing bytes")

    dim = meta.get("dim")
    if expected_dim is not None and dim is not None and dim != expected_dim:
        raise RouterFileError(f"{path}: router trained on d={dim}, embeddings have d={expected_dim}")
    kind = meta["kind"]
    if kind not in ROUTER_CLASSES or kind == "oracle":
        raise RouterFileError(f"{path}: cannot load router kind {kind!r}")
    router = ROUTER_CLASSES[kind](RouterConfig.from_dict(meta["config"]))
    router.load_state(meta, {k[len("router."):]: v for k, v in arrays.items()
                             if k.startswith("router.")})
    router.diagnostics = list(meta.get("diagnostics", []))
    featurizer = Featurizer(FusionConfig(**meta["fusion"]))
    if "featurizer.prototypes" in arrays:
        p = arrays["featurizer.prototypes"]
        featurizer.stats = ConfidenceStats(
            (p[0], p[1]), tuple(float(x) for x in arrays["featurizer.norm_mean"]),
            tuple(float(x) for x in arrays["featurizer.norm_std"]))
    return router, featurizer
