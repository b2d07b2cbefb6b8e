"""Fixed on-container layout shared by the writers, readers, and validator."""

from __future__ import annotations

import numpy as np

from ..container import ContainerHandle, ROOT_ID

GLOBAL_PATH = "/global"
SOURCES_PATH = "/sources"
DATA_PATH = "/data"
RELATIONS_PATH = "/relations"
DERIVED_PATH = "/relations/derived"
GROUPS_PATH = "/relations/groups"
EXT_PATH = "/ext"   # reserved for dataset-level metadata outside this schema

ENTITY_KIND_ATTR = "entity_kind"

# numpy dtype -> container dtype name, for arrays stored as-is.
_NP_TO_CONTAINER = {
    np.dtype("<u1"): "u8", np.dtype("<i1"): "i8",
    np.dtype("<u2"): "u16", np.dtype("<i2"): "i16",
    np.dtype("<u4"): "u32", np.dtype("<i4"): "i32",
    np.dtype("<u8"): "u64", np.dtype("<i8"): "i64",
    np.dtype("<f4"): "f32", np.dtype("<f8"): "f64",
}


def container_dtype(arr: np.ndarray) -> str | None:
    return _NP_TO_CONTAINER.get(arr.dtype.newbyteorder("<"))


def default_chunk(shape) -> tuple[int, ...]:
    """Deterministic chunking: cap the leading axis, keep the rest whole."""
    if not shape:
        return ()
    head = max(1, min(int(shape[0]), 4096))
    return (head,) + tuple(max(1, int(s)) for s in shape[1:])


def ensure_group(handle: ContainerHandle, path: str) -> int:
    """Resolve a group path, creating missing components."""
    current = ROOT_ID
    for part in path.split("/"):
        if not part:
            continue
        child = handle.child_id(current, part)
        current = child if child is not None else handle.create_group(current, part)
    return current


def source_path(source_id: str) -> str:
    return f"{SOURCES_PATH}/{source_id}"


def data_path(name: str) -> str:
    return f"{DATA_PATH}/{name}"


def group_path(group_id: str) -> str:
    return f"{GROUPS_PATH}/{group_id}"


def derived_path(rel_id: str) -> str:
    return f"{DERIVED_PATH}/{rel_id}"


def store_array(handle: ContainerHandle, parent_id: int, name: str,
                arr: np.ndarray, dtype: str | None = None,
                chunk=None) -> int:
    """Create a dataset shaped like ``arr`` and write it in one slab."""
    if dtype is None:
        dtype = container_dtype(arr)
    shape = arr.shape
    ds = handle.create_dataset(parent_id, name, dtype, shape,
                               chunk or default_chunk(shape))
    if arr.size:
        handle.write_slab(ds, (0,) * arr.ndim, arr, shape)
    return ds


def store_strings(handle: ContainerHandle, parent_id: int, name: str,
                  values: list[str]) -> int:
    ds = handle.create_dataset(parent_id, name, "utf8", (len(values),), (1,))
    if values:
        handle.write_slab(ds, (0,), values, (len(values),))
    return ds
