"""Single-file binary container: groups, chunked datasets, attributes.

The container is a write-once-then-read format aimed at acquisition-style
workloads: a single writer appends data, ``finalize()`` seals the file with
a trailing footer index, and any number of readers may then open it
concurrently. Torn writes can only lose data that was never finalized.

File layout, bit-exact (all multi-byte integers little-endian, floats
IEEE-754):

superblock
    magic          8 bytes   45 50 48 59 50 4B 31 0A ("EPHYPK1\\n")
    major, minor   u16, u16
    reserved       u32
    uuid           16 bytes  (RFC 4122 v4)
    footer_offset  u64       (0 until the file has been finalized)
    created_time   u16 byte length + UTF-8 ISO 8601 with timezone offset
    crc32c         u32       over every preceding superblock byte

chunk records, back to back
    object_id      u64
    ncoords        u8
    coords         u64 x ncoords
    codec          u8        (0 = raw; the only codec in format 1.x)
    payload_len    u64
    payload        bytes
    crc32c         u32       over the payload

    Fixed-dtype datasets store one record per materialized chunk; the
    payload is the row-major bytes of the chunk region clipped to the
    dataset shape. Variable-length string (utf8) datasets store two
    streams under the same object_id, each as chunk records whose payload
    begins with a stream-tag byte: 1 = u64 offsets stream (N+1 entries),
    2 = UTF-8 byte stream.

footer, at footer_offset
    three sections, each   tag u32 | body length u64 | body | crc32c(body) u32
        "OBJT" object table: count u64, then per object in id order:
               object_id u64 | kind u8 (0 group, 1 dataset) | parent_id u64
               | name (u16 len + UTF-8) | datasets add: dtype u8 | rank u8
               | shape u64 x rank | chunk_shape u64 x rank
        "ATTR" attribute table: count u64, then per attribute sorted by
               (object_id, key): object_id u64 | key (u16 len + UTF-8)
               | value (tag u8 + payload, see _encode_attr_value)
        "CHNK" chunk index: count u64, then per chunk sorted by
               (object_id, stream, coords): object_id u64 | stream u8
               | ncoords u8 | coords u64 x | record offset u64
               | payload length u64 | crc32c u32
    terminator             magic 46 4F 4F 54 ("FOOT") + crc32c u32 over
                           every footer byte from footer_offset through the
                           terminator magic

Chunk data is buffered in memory while a handle is writable and flushed in
canonical order (object id, stream, coordinates) during ``finalize``, so a
given logical content always produces the same bytes. Reopening a finalized
file in append mode leaves the existing records and footer untouched; new
records go after the old footer and a fresh footer is written at the end,
so a crash mid-session still leaves the previous state readable.
"""

from __future__ import annotations

import itertools
import os
import struct
import threading
import uuid as _uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .crc32c import crc32c
from .errors import (
    AttributeBudgetExceeded,
    BadMagic,
    ChunkChecksumMismatch,
    ContainerLocked,
    CorruptFooter,
    DtypeMismatch,
    DuplicateName,
    InvalidName,
    IoFailure,
    LengthMismatch,
    NoSuchKey,
    NoSuchObject,
    NotADataset,
    NotAGroup,
    OutOfBounds,
    PathExists,
    RankMismatch,
    RankTooHigh,
    ReadOnlyHandle,
    TruncatedFile,
    UnsupportedVersion,
    ZeroChunkExtent,
)

MAGIC = b"EPHYPK1\n"
FOOT_MAGIC = b"FOOT"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0
MAX_RANK = 8
ATTR_BUDGET = 64 * 1024
ROOT_ID = 0

GROUP = "group"
DATASET = "dataset"

DTYPES = ("u8", "i8", "u16", "i16", "u32", "i32", "u64", "i64", "f32", "f64", "utf8")
_NP_DTYPES = {
    "u8": "<u1", "i8": "<i1", "u16": "<u2", "i16": "<i2",
    "u32": "<u4", "i32": "<i4", "u64": "<u8", "i64": "<i8",
    "f32": "<f4", "f64": "<f8",
}
_DTYPE_CODES = {name: i for i, name in enumerate(DTYPES)}

_STREAM_MAIN = 0
_STREAM_OFFSETS = 1
_STREAM_BYTES = 2

# Attribute value type tags.
_A_UTF8, _A_F64, _A_I64, _A_U64, _A_BOOL, _A_F64SEQ, _A_UTF8SEQ = range(7)
_ATTR_SEQ_MAX = 64

_U64_MAX = (1 << 64) - 1
_I64_MIN, _I64_MAX = -(1 << 63), (1 << 63) - 1


class U64(int):
    """Marks an integer attribute value as unsigned 64-bit on disk."""


def _utf16len(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for u16 length prefix")
    return struct.pack("<H", len(raw)) + raw


def _attr_tag(value) -> int:
    if isinstance(value, U64):
        return _A_U64
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return _A_BOOL
    if isinstance(value, (int, np.integer)):
        v = int(value)
        if _I64_MIN <= v <= _I64_MAX:
            return _A_I64
        if 0 <= v <= _U64_MAX:
            return _A_U64
        raise TypeError(f"integer attribute out of 64-bit range: {v}")
    if isinstance(value, (float, np.floating)):
        return _A_F64
    if isinstance(value, str):
        return _A_UTF8
    if isinstance(value, (list, tuple, np.ndarray)):
        items = list(value)
        if len(items) > _ATTR_SEQ_MAX:
            raise TypeError(f"sequence attribute longer than {_ATTR_SEQ_MAX} elements")
        if all(isinstance(x, str) for x in items):
            return _A_UTF8SEQ
        if all(isinstance(x, (int, float, np.integer, np.floating))
               and not isinstance(x, bool) for x in items):
            return _A_F64SEQ
        raise TypeError("sequence attribute must be all-strings or all-numbers")
    raise TypeError(f"unsupported attribute value type: {type(value).__name__}")


def _encode_attr_value(value) -> bytes:
    tag = _attr_tag(value)
    head = struct.pack("<B", tag)
    if tag == _A_UTF8:
        raw = value.encode("utf-8")
        return head + struct.pack("<I", len(raw)) + raw
    if tag == _A_F64:
        return head + struct.pack("<d", float(value))
    if tag == _A_I64:
        return head + struct.pack("<q", int(value))
    if tag == _A_U64:
        return head + struct.pack("<Q", int(value))
    if tag == _A_BOOL:
        return head + struct.pack("<B", 1 if value else 0)
    if tag == _A_F64SEQ:
        items = [float(x) for x in value]
        return head + struct.pack("<H", len(items)) + struct.pack(f"<{len(items)}d", *items)
    items = list(value)
    out = [head, struct.pack("<H", len(items))]
    for s in items:
        raw = s.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


def _normalize_attr(value):
    """Return the value as it will read back (tag-faithful Python value)."""
    tag = _attr_tag(value)
    if tag == _A_UTF8:
        return value
    if tag == _A_F64:
        return float(value)
    if tag == _A_I64:
        return int(value)
    if tag == _A_U64:
        return U64(value)
    if tag == _A_BOOL:
        return bool(value)
    if tag == _A_F64SEQ:
        return [float(x) for x in value]
    return [str(x) for x in value]


class _Reader:
    """Cursor over a bytes object with bounds-checked reads."""

    def __init__(self, buf: bytes, context: str):
        self.buf = buf
        self.pos = 0
        self.context = context

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptFooter(f"{self.context}: truncated structure")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def utf16len(self) -> str:
        n = self.u16()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFooter(f"{self.context}: invalid UTF-8") from exc


def _decode_attr_value(r: _Reader):
    tag = r.u8()
    if tag == _A_UTF8:
        n = r.u32()
        try:
            return r.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFooter(f"{r.context}: invalid UTF-8 attribute") from exc
    if tag == _A_F64:
        return struct.unpack("<d", r.take(8))[0]
    if tag == _A_I64:
        return struct.unpack("<q", r.take(8))[0]
    if tag == _A_U64:
        return U64(r.u64())
    if tag == _A_BOOL:
        return r.u8() != 0
    if tag == _A_F64SEQ:
        n = r.u16()
        return list(struct.unpack(f"<{n}d", r.take(8 * n)))
    if tag == _A_UTF8SEQ:
        n = r.u16()
        out = []
        for _ in range(n):
            m = r.u32()
            out.append(r.take(m).decode("utf-8"))
        return out
    raise CorruptFooter(f"{r.context}: unknown attribute type tag {tag}")


@dataclass
class DatasetMeta:
    dtype: str
    shape: tuple[int, ...]
    chunk_shape: tuple[int, ...]


@dataclass
class _Object:
    object_id: int
    kind: str
    name: str
    parent_id: int
    children: dict[str, int] = field(default_factory=dict)
    meta: DatasetMeta | None = None


@dataclass
class _ChunkEntry:
    offset: int   # file offset of the record start
    length: int   # payload byte length
    crc: int


def _chunk_coords_range(shape, chunk_shape, offset, extent):
    """Yield (coords, chunk_slices, request_slices) for chunks touching a region."""
    if any(e == 0 for e in extent):
        return
    ranges = []
    for o, e, cs in zip(offset, extent, chunk_shape):
        ranges.append(range(o // cs, (o + e - 1) // cs + 1))
    for coords in itertools.product(*ranges):
        chunk_sl = []
        req_sl = []
        for d, c in enumerate(coords):
            cs = chunk_shape[d]
            start = c * cs
            stop = min(start + cs, shape[d])
            a = max(offset[d], start)
            b = min(offset[d] + extent[d], stop)
            chunk_sl.append(slice(a - start, b - start))
            req_sl.append(slice(a - offset[d], b - offset[d]))
        yield coords, tuple(chunk_sl), tuple(req_sl)


def _chunk_stored_shape(shape, chunk_shape, coords):
    """Shape of the stored chunk payload: the chunk clipped to the dataset."""
    return tuple(
        max(0, min((c + 1) * cs, s) - c * cs)
        for c, cs, s in zip(coords, chunk_shape, shape)
    )


class ContainerHandle:
    """Open container file. Obtain via create_container / open_container."""

    def __init__(self):
        raise TypeError("use create_container() or open_container()")

    @classmethod
    def _blank(cls) -> "ContainerHandle":
        self = object.__new__(cls)
        self._file = None
        self._path = None
        self._writable = False
        self._closed = False
        self._lock_path = None
        self._objects: dict[int, _Object] = {
            ROOT_ID: _Object(ROOT_ID, GROUP, "", ROOT_ID)
        }
        self._attrs: dict[int, dict[str, object]] = {}
        self._next_id = 1
        self._chunk_index: dict[tuple[int, int, tuple[int, ...]], _ChunkEntry] = {}
        self._dirty: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}
        self._varlen: dict[int, list[str]] = {}
        self._varlen_dirty: set[int] = set()
        self._cache: dict[tuple[int, int, tuple[int, ...]], np.ndarray | bytes] = {}
        self._cache_lock = threading.Lock()
        self._data_end = 0
        self.uuid = ""
        self.format_version = (FORMAT_MAJOR, FORMAT_MINOR)
        self.created_time = ""
        return self

    # -- lifecycle ---------------------------------------------------------

    @property
    def path(self) -> Path:
        return self._path

    @property
    def writable(self) -> bool:
        return self._writable

    @property
    def root(self) -> int:
        return ROOT_ID

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def close(self) -> None:
        """Close the file handle. Does not finalize; unfinalized data is lost."""
        if self._closed:
            return
        self._closed = True
        try:
            if self._file is not None:
                self._file.close()
        finally:
            self._release_lock()

    def _release_lock(self) -> None:
        if self._lock_path is not None:
            try:
                os.unlink(self._lock_path)
            except OSError:
                pass
            self._lock_path = None

    def _check_open(self) -> None:
        if self._closed:
            raise IoFailure("container handle is closed")

    def _check_writable(self) -> None:
        self._check_open()
        if not self._writable:
            raise ReadOnlyHandle("container handle is read-only")

    # -- object lookup -----------------------------------------------------

    def _object(self, object_id: int) -> _Object:
        try:
            return self._objects[object_id]
        except KeyError:
            raise NoSuchObject(f"no object with id {object_id}") from None

    def _group(self, object_id: int) -> _Object:
        obj = self._object(object_id)
        if obj.kind != GROUP:
            raise NotAGroup(f"object {object_id} ({obj.name!r}) is not a group")
        return obj

    def _dataset(self, object_id: int) -> _Object:
        obj = self._object(object_id)
        if obj.kind != DATASET:
            raise NotADataset(f"object {object_id} ({obj.name!r}) is not a dataset")
        return obj

    def object_kind(self, object_id: int) -> str:
        self._check_open()
        return self._object(object_id).kind

    def object_name(self, object_id: int) -> str:
        self._check_open()
        return self._object(object_id).name

    def dataset_meta(self, dataset_id: int) -> DatasetMeta:
        self._check_open()
        meta = self._dataset(dataset_id).meta
        return DatasetMeta(meta.dtype, meta.shape, meta.chunk_shape)

    def object_path(self, object_id: int) -> str:
        self._check_open()
        obj = self._object(object_id)
        parts = []
        while obj.object_id != ROOT_ID:
            parts.append(obj.name)
            obj = self._objects[obj.parent_id]
        return "/" + "/".join(reversed(parts))

    def resolve_path(self, path: str) -> int:
        """Resolve a slash-joined path from the root to an object id."""
        self._check_open()
        current = ROOT_ID
        for part in path.split("/"):
            if not part:
                continue
            obj = self._objects[current]
            if obj.kind != GROUP or part not in obj.children:
                raise NoSuchObject(f"no object at path {path!r}")
            current = obj.children[part]
        return current

    def has_path(self, path: str) -> bool:
        try:
            self.resolve_path(path)
            return True
        except NoSuchObject:
            return False

    def child_id(self, group_id: int, name: str):
        """Object id of a named child, or None."""
        self._check_open()
        return self._group(group_id).children.get(name)

    def list_children(self, group_id: int):
        """Children of a group as (name, object_id, kind), sorted by name bytes."""
        self._check_open()
        group = self._group(group_id)
        out = [
            (name, oid, self._objects[oid].kind)
            for name, oid in group.children.items()
        ]
        out.sort(key=lambda item: item[0].encode("utf-8"))
        return out

    def all_objects(self):
        """All (object_id, path, kind) except the root, sorted by id."""
        self._check_open()
        return [
            (oid, self.object_path(oid), obj.kind)
            for oid, obj in sorted(self._objects.items())
            if oid != ROOT_ID
        ]

    # -- creation ----------------------------------------------------------

    def _new_child(self, parent_id: int, name: str, kind: str) -> _Object:
        self._check_writable()
        parent = self._group(parent_id)
        if not name or "/" in name:
            raise InvalidName(f"invalid object name: {name!r}")
        if name in parent.children:
            raise DuplicateName(f"{self.object_path(parent_id)!r} already has a child {name!r}")
        obj = _Object(self._next_id, kind, name, parent_id)
        self._next_id += 1
        self._objects[obj.object_id] = obj
        parent.children[name] = obj.object_id
        return obj

    def create_group(self, parent_id: int, name: str) -> int:
        return self._new_child(parent_id, name, GROUP).object_id

    def create_dataset(self, parent_id: int, name: str, dtype: str,
                       shape, chunk_shape) -> int:
        self._check_writable()
        if dtype not in DTYPES:
            raise DtypeMismatch(f"unknown dtype {dtype!r}")
        shape = tuple(int(s) for s in shape)
        chunk_shape = tuple(int(c) for c in chunk_shape)
        if len(shape) != len(chunk_shape):
            raise RankMismatch(
                f"shape rank {len(shape)} != chunk rank {len(chunk_shape)}")
        if len(shape) > MAX_RANK:
            raise RankTooHigh(f"rank {len(shape)} exceeds limit {MAX_RANK}")
        if len(shape) == 0:
            raise RankMismatch("rank-0 datasets are not supported")
        if any(s < 0 for s in shape):
            raise ValueError("negative dataset extent")
        if any(c < 1 for c in chunk_shape):
            raise ZeroChunkExtent("every chunk extent must be >= 1")
        if dtype == "utf8" and len(shape) != 1:
            raise RankMismatch("utf8 datasets must have rank 1")
        obj = self._new_child(parent_id, name, DATASET)
        obj.meta = DatasetMeta(dtype, shape, chunk_shape)
        if dtype == "utf8":
            self._varlen[obj.object_id] = [""] * shape[0]
            self._varlen_dirty.add(obj.object_id)
        return obj.object_id

    # -- attributes --------------------------------------------------------

    def _attr_size(self, object_id: int, override: dict | None = None) -> int:
        attrs = dict(self._attrs.get(object_id, {}))
        if override:
            attrs.update(override)
        total = 0
        for key, value in attrs.items():
            total += len(_utf16len(key)) + len(_encode_attr_value(value))
        return total

    def set_attribute(self, object_id: int, key: str, value) -> None:
        self._check_writable()
        self._object(object_id)
        if not key:
            raise InvalidName("attribute key must be non-empty")
        value = _normalize_attr(value)
        new_size = self._attr_size(object_id, {key: value})
        if new_size > ATTR_BUDGET:
            raise AttributeBudgetExceeded(
                f"attributes of object {object_id} would encode to {new_size} bytes "
                f"(budget {ATTR_BUDGET})")
        self._attrs.setdefault(object_id, {})[key] = value

    def get_attribute(self, object_id: int, key: str):
        self._check_open()
        self._object(object_id)
        attrs = self._attrs.get(object_id, {})
        if key not in attrs:
            raise NoSuchKey(f"object {object_id} has no attribute {key!r}")
        value = attrs[key]
        return list(value) if isinstance(value, list) else value

    def has_attribute(self, object_id: int, key: str) -> bool:
        self._check_open()
        self._object(object_id)
        return key in self._attrs.get(object_id, {})

    def attributes(self, object_id: int) -> dict:
        """A copy of all attributes of one object."""
        self._check_open()
        self._object(object_id)
        return {
            k: (list(v) if isinstance(v, list) else v)
            for k, v in self._attrs.get(object_id, {}).items()
        }

    def delete_attribute(self, object_id: int, key: str) -> None:
        self._check_writable()
        attrs = self._attrs.get(object_id, {})
        if key not in attrs:
            raise NoSuchKey(f"object {object_id} has no attribute {key!r}")
        del attrs[key]

    # -- dataset I/O ---------------------------------------------------------

    def write_slab(self, dataset_id: int, offset, data, extent=None) -> None:
        """Write a rectangular region; ``data`` holds product(extent) elements."""
        self._check_writable()
        meta = self._dataset(dataset_id).meta
        offset = tuple(int(o) for o in offset)
        if meta.dtype == "utf8":
            self._write_varlen(dataset_id, meta, offset, data, extent)
            return
        arr = np.asarray(data)
        if extent is None:
            extent = arr.shape if arr.shape else (1,)
        extent = tuple(int(e) for e in extent)
        self._check_region(meta, offset, extent)
        if arr.size != int(np.prod(extent)):
            raise LengthMismatch(
                f"data has {arr.size} elements, extent needs {int(np.prod(extent))}")
        target = np.dtype(_NP_DTYPES[meta.dtype])
        if arr.dtype.kind not in "uif" or not np.can_cast(arr.dtype, target, "same_kind"):
            raise DtypeMismatch(
                f"cannot store {arr.dtype} data in a {meta.dtype} dataset")
        arr = np.ascontiguousarray(arr, dtype=target).reshape(extent)
        for coords, chunk_sl, req_sl in _chunk_coords_range(
                meta.shape, meta.chunk_shape, offset, extent):
            chunk = self._chunk_for_write(dataset_id, meta, coords)
            chunk[chunk_sl] = arr[req_sl]

    def read_slab(self, dataset_id: int, offset, extent):
        """Read a rectangular region as a flat row-major array (or str list)."""
        self._check_open()
        meta = self._dataset(dataset_id).meta
        offset = tuple(int(o) for o in offset)
        extent = tuple(int(e) for e in extent)
        self._check_region(meta, offset, extent)
        if meta.dtype == "utf8":
            values = self._varlen_values(dataset_id, meta)
            return list(values[offset[0]:offset[0] + extent[0]])
        out = np.zeros(extent, dtype=_NP_DTYPES[meta.dtype])
        for coords, chunk_sl, req_sl in _chunk_coords_range(
                meta.shape, meta.chunk_shape, offset, extent):
            chunk = self._chunk_for_read(dataset_id, meta, coords)
            if chunk is not None:
                out[req_sl] = chunk[chunk_sl]
        return out.reshape(-1)

    def read_full(self, dataset_id: int):
        """Read the whole dataset, shaped."""
        meta = self._dataset(dataset_id).meta
        flat = self.read_slab(dataset_id, (0,) * len(meta.shape), meta.shape)
        if meta.dtype == "utf8":
            return flat
        return np.asarray(flat).reshape(meta.shape)

    def _check_region(self, meta: DatasetMeta, offset, extent) -> None:
        rank = len(meta.shape)
        if len(offset) != rank or len(extent) != rank:
            raise RankMismatch(
                f"offset/extent rank must be {rank}, got {len(offset)}/{len(extent)}")
        for o, e, s in zip(offset, extent, meta.shape):
            if o < 0 or e < 0 or o + e > s:
                raise OutOfBounds(
                    f"region offset={offset} extent={extent} exceeds shape {meta.shape}")

    def _chunk_for_write(self, dataset_id: int, meta: DatasetMeta, coords) -> np.ndarray:
        key = (dataset_id, coords)
        chunk = self._dirty.get(key)
        if chunk is None:
            stored = self._chunk_for_read(dataset_id, meta, coords)
            shape = _chunk_stored_shape(meta.shape, meta.chunk_shape, coords)
            if stored is None:
                chunk = np.zeros(shape, dtype=_NP_DTYPES[meta.dtype])
            else:
                chunk = stored.copy()
            self._dirty[key] = chunk
            # The on-disk copy (if any) is superseded until finalize.
            self._cache.pop((dataset_id, _STREAM_MAIN, coords), None)
        return chunk

    def _chunk_for_read(self, dataset_id: int, meta: DatasetMeta, coords):
        dirty = self._dirty.get((dataset_id, coords))
        if dirty is not None:
            return dirty
        key = (dataset_id, _STREAM_MAIN, coords)
        with self._cache_lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        entry = self._chunk_index.get(key)
        if entry is None:
            return None
        payload = self._load_record(dataset_id, _STREAM_MAIN, coords, entry)
        shape = _chunk_stored_shape(meta.shape, meta.chunk_shape, coords)
        chunk = np.frombuffer(payload, dtype=_NP_DTYPES[meta.dtype]).reshape(shape)
        with self._cache_lock:
            self._cache[key] = chunk
        return chunk

    def _pread(self, n: int, offset: int) -> bytes:
        return os.pread(self._file.fileno(), n, offset)

    def _load_record(self, dataset_id: int, stream: int, coords, entry: _ChunkEntry) -> bytes:
        """Read one chunk record, verifying the header against the index and
        the payload against both stored checksums."""

        def bad(msg: str):
            return ChunkChecksumMismatch(
                f"dataset {dataset_id} chunk {coords}: {msg}", dataset_id, tuple(coords))

        head_len = 8 + 1 + 8 * len(coords) + 1 + 8
        tag_len = 1 if stream != _STREAM_MAIN else 0
        total = head_len + tag_len + entry.length + 4
        raw = self._pread(total, entry.offset)
        if len(raw) != total:
            raise bad("record extends past end of file")
        pos = 0
        rec_id, = struct.unpack_from("<Q", raw, pos)
        pos += 8
        ncoords = raw[pos]
        pos += 1
        rec_coords = struct.unpack_from(f"<{ncoords}Q", raw, pos) if ncoords else ()
        pos += 8 * ncoords
        codec = raw[pos]
        pos += 1
        payload_len, = struct.unpack_from("<Q", raw, pos)
        pos += 8
        if (rec_id != dataset_id or ncoords != len(coords)
                or rec_coords != tuple(coords) or codec != 0
                or payload_len != entry.length + tag_len):
            raise bad("record header disagrees with footer index")
        payload = raw[pos:pos + payload_len]
        stored_crc, = struct.unpack_from("<I", raw, pos + payload_len)
        if crc32c(payload) != stored_crc or stored_crc != entry.crc:
            raise bad("payload checksum mismatch")
        if stream != _STREAM_MAIN:
            if payload[0] != stream:
                raise bad("stream tag mismatch")
            payload = payload[1:]
        return payload

    def chunk_keys(self):
        """All materialized chunk keys: (dataset_id, stream, coords), sorted."""
        self._check_open()
        return sorted(self._chunk_index)

    def verify_chunk(self, dataset_id: int, stream: int, coords) -> None:
        """Re-read one chunk record and verify it against its checksums."""
        self._check_open()
        entry = self._chunk_index[(dataset_id, stream, tuple(coords))]
        self._load_record(dataset_id, stream, tuple(coords), entry)

    def chunk_location(self, dataset_id: int, stream: int, coords):
        """(record_offset, payload_offset, payload_length) of one chunk record."""
        self._check_open()
        coords = tuple(coords)
        entry = self._chunk_index[(dataset_id, stream, coords)]
        head = 8 + 1 + 8 * len(coords) + 1 + 8 + (1 if stream != _STREAM_MAIN else 0)
        return entry.offset, entry.offset + head, entry.length

    # -- variable-length string datasets ------------------------------------

    def _varlen_values(self, dataset_id: int, meta: DatasetMeta) -> list[str]:
        values = self._varlen.get(dataset_id)
        if values is not None:
            return values
        n = meta.shape[0]
        off_entry = self._chunk_index.get((dataset_id, _STREAM_OFFSETS, (0,)))
        byte_entry = self._chunk_index.get((dataset_id, _STREAM_BYTES, (0,)))
        if off_entry is None or byte_entry is None:
            raise ChunkChecksumMismatch(
                f"dataset {dataset_id}: string streams missing from chunk index",
                dataset_id, (0,))
        off_raw = self._load_record(dataset_id, _STREAM_OFFSETS, (0,), off_entry)
        data = self._load_record(dataset_id, _STREAM_BYTES, (0,), byte_entry)
        offsets = np.frombuffer(off_raw, dtype="<u8")
        if len(offsets) != n + 1 or (n and offsets[0] != 0):
            raise ChunkChecksumMismatch(
                f"dataset {dataset_id}: malformed string offsets", dataset_id, (0,))
        values = [
            data[int(offsets[i]):int(offsets[i + 1])].decode("utf-8")
            for i in range(n)
        ]
        self._varlen[dataset_id] = values
        return values

    def _write_varlen(self, dataset_id: int, meta: DatasetMeta, offset, data, extent) -> None:
        items = list(data)
        if extent is None:
            extent = (len(items),)
        extent = tuple(int(e) for e in extent)
        self._check_region(meta, offset, extent)
        if len(items) != extent[0]:
            raise LengthMismatch(
                f"data has {len(items)} elements, extent needs {extent[0]}")
        if not all(isinstance(x, str) for x in items):
            raise DtypeMismatch("utf8 dataset values must be str")
        values = self._varlen_values(dataset_id, meta)
        values[offset[0]:offset[0] + extent[0]] = items
        self._varlen_dirty.add(dataset_id)

    # -- finalize ------------------------------------------------------------

    def _append_record(self, object_id: int, stream: int, coords, payload: bytes) -> None:
        record = bytearray()
        record += struct.pack("<Q", object_id)
        record += struct.pack("<B", len(coords))
        for c in coords:
            record += struct.pack("<Q", c)
        record += struct.pack("<B", 0)  # codec: raw
        body = (struct.pack("<B", stream) + payload) if stream != _STREAM_MAIN else payload
        record += struct.pack("<Q", len(body))
        record += body
        crc = crc32c(body)
        record += struct.pack("<I", crc)
        offset = self._data_end
        self._file.seek(offset)
        self._file.write(record)
        self._data_end = offset + len(record)
        self._chunk_index[(object_id, stream, tuple(coords))] = _ChunkEntry(
            offset, len(payload), crc)

    def _flush_chunks(self) -> None:
        pending: list[tuple[int, int, tuple[int, ...], bytes]] = []
        for (dataset_id, coords), chunk in self._dirty.items():
            pending.append((dataset_id, _STREAM_MAIN, coords, chunk.tobytes()))
        for dataset_id in self._varlen_dirty:
            values = self._varlen[dataset_id]
            blobs = [v.encode("utf-8") for v in values]
            offsets = np.zeros(len(blobs) + 1, dtype="<u8")
            offsets[1:] = np.cumsum([len(b) for b in blobs], dtype="<u8") if blobs else 0
            pending.append((dataset_id, _STREAM_OFFSETS, (0,), offsets.tobytes()))
            pending.append((dataset_id, _STREAM_BYTES, (0,), b"".join(blobs)))
        pending.sort(key=lambda item: (item[0], item[1], item[2]))
        for dataset_id, stream, coords, payload in pending:
            self._append_record(dataset_id, stream, coords, payload)
        self._dirty.clear()
        self._varlen_dirty.clear()

    def _section(self, tag: bytes, body: bytes) -> bytes:
        return tag + struct.pack("<Q", len(body)) + body + struct.pack("<I", crc32c(body))

    def _footer_bytes(self) -> bytes:
        objt = bytearray()
        objects = [o for oid, o in sorted(self._objects.items()) if oid != ROOT_ID]
        objt += struct.pack("<Q", len(objects))
        for obj in objects:
            objt += struct.pack("<Q", obj.object_id)
            objt += struct.pack("<B", 0 if obj.kind == GROUP else 1)
            objt += struct.pack("<Q", obj.parent_id)
            objt += _utf16len(obj.name)
            if obj.kind == DATASET:
                meta = obj.meta
                objt += struct.pack("<BB", _DTYPE_CODES[meta.dtype], len(meta.shape))
                for s in meta.shape:
                    objt += struct.pack("<Q", s)
                for c in meta.chunk_shape:
                    objt += struct.pack("<Q", c)

        attr = bytearray()
        entries = []
        for oid in sorted(self._attrs):
            for key in sorted(self._attrs[oid]):
                entries.append((oid, key, self._attrs[oid][key]))
        attr += struct.pack("<Q", len(entries))
        for oid, key, value in entries:
            attr += struct.pack("<Q", oid)
            attr += _utf16len(key)
            attr += _encode_attr_value(value)

        chnk = bytearray()
        keys = sorted(self._chunk_index)
        chnk += struct.pack("<Q", len(keys))
        for oid, stream, coords in keys:
            entry = self._chunk_index[(oid, stream, coords)]
            chnk += struct.pack("<QBB", oid, stream, len(coords))
            for c in coords:
                chnk += struct.pack("<Q", c)
            chnk += struct.pack("<QQI", entry.offset, entry.length, entry.crc)

        footer = (self._section(b"OBJT", bytes(objt))
                  + self._section(b"ATTR", bytes(attr))
                  + self._section(b"CHNK", bytes(chnk))
                  + FOOT_MAGIC)
        return footer + struct.pack("<I", crc32c(footer))

    def finalize(self) -> None:
        """Flush buffered chunks, write the footer, and seal the handle.

        A second call (or a call on an already-finalized handle) is a no-op.
        """
        if not self._writable:
            return
        self._check_open()
        try:
            self._flush_chunks()
            footer_offset = self._data_end
            self._file.seek(footer_offset)
            self._file.write(self._footer_bytes())
            self._file.truncate()
            self._patch_superblock(footer_offset)
            self._file.flush()
            os.fsync(self._file.fileno())
        except OSError as exc:
            raise IoFailure(f"finalize failed: {exc}") from exc
        self._writable = False
        self._release_lock()

    def _superblock_bytes(self, footer_offset: int) -> bytes:
        created = self.created_time.encode("utf-8")
        body = (MAGIC
                + struct.pack("<HHI", *self.format_version, 0)
                + _uuid.UUID(self.uuid).bytes
                + struct.pack("<Q", footer_offset)
                + struct.pack("<H", len(created)) + created)
        return body + struct.pack("<I", crc32c(body))

    def _patch_superblock(self, footer_offset: int) -> None:
        self._file.seek(0)
        self._file.write(self._superblock_bytes(footer_offset))


def _acquire_lock(path: Path) -> str:
    lock_path = str(path) + ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ContainerLocked(f"{path} is locked by {lock_path}") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(str(os.getpid()))
    return lock_path


def create_container(path, identification: dict[str, str] | None = None, *,
                     file_uuid=None, created_time: str | None = None) -> ContainerHandle:
    """Create a new container file and return a writable handle.

    ``identification`` entries are stored as root attributes under the
    ``id.`` prefix. ``file_uuid`` and ``created_time`` default to a fresh
    random UUID and the current local time; passing them explicitly makes
    the output bytes reproducible.
    """
    path = Path(path)
    if path.exists():
        raise PathExists(f"{path} already exists")
    if file_uuid is None:
        file_uuid = _uuid.uuid4()
    elif isinstance(file_uuid, bytes):
        file_uuid = _uuid.UUID(bytes=file_uuid, version=4)
    elif isinstance(file_uuid, str):
        file_uuid = _uuid.UUID(file_uuid)
    if file_uuid.version != 4 or file_uuid.int == 0:
        raise ValueError("file uuid must be a non-zero RFC 4122 version-4 UUID")
    if created_time is None:
        created_time = datetime.now(timezone.utc).astimezone().isoformat()
    _check_tz_timestamp(created_time)

    handle = ContainerHandle._blank()
    handle._path = path
    handle.uuid = str(file_uuid)
    handle.created_time = created_time
    handle._lock_path = _acquire_lock(path)
    try:
        handle._file = open(path, "x+b")
    except FileExistsError:
        handle._release_lock()
        raise PathExists(f"{path} already exists") from None
    except OSError as exc:
        handle._release_lock()
        raise IoFailure(f"cannot create {path}: {exc}") from exc
    handle._writable = True
    sb = handle._superblock_bytes(0)
    handle._file.write(sb)
    handle._data_end = len(sb)
    for key, value in (identification or {}).items():
        handle.set_attribute(ROOT_ID, f"id.{key}", str(value))
    return handle


def _check_tz_timestamp(text: str) -> datetime:
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"not an ISO 8601 timestamp: {text!r}") from exc
    if parsed.tzinfo is None:
        raise ValueError(f"timestamp lacks a timezone offset: {text!r}")
    return parsed


def open_container(path, mode: str = "r") -> ContainerHandle:
    """Open an existing container. ``mode`` is ``"r"`` or ``"a"`` (append)."""
    if mode not in ("r", "a"):
        raise ValueError(f"mode must be 'r' or 'a', got {mode!r}")
    path = Path(path)
    if not path.exists():
        raise IoFailure(f"{path} does not exist")

    handle = ContainerHandle._blank()
    handle._path = path
    if mode == "a":
        handle._lock_path = _acquire_lock(path)
    try:
        handle._file = open(path, "r+b" if mode == "a" else "rb")
    except OSError as exc:
        handle._release_lock()
        raise IoFailure(f"cannot open {path}: {exc}") from exc
    try:
        _load_container(handle)
    except Exception:
        handle.close()
        raise
    handle._writable = mode == "a"
    return handle


def _load_container(handle: ContainerHandle) -> None:
    size = os.fstat(handle._file.fileno()).st_size
    fixed = 8 + 2 + 2 + 4 + 16 + 8 + 2
    head = handle._pread(fixed, 0)
    if len(head) < fixed:
        raise TruncatedFile(f"file is {size} bytes, superblock needs at least {fixed + 4}")
    if head[:8] != MAGIC:
        raise BadMagic("not a container file (magic mismatch)")
    major, minor, _reserved = struct.unpack_from("<HHI", head, 8)
    uuid_bytes = head[16:32]
    footer_offset, created_len = struct.unpack_from("<QH", head, 32)
    sb_len = fixed + created_len + 4
    if size < sb_len:
        raise TruncatedFile("superblock is truncated")
    rest = handle._pread(created_len + 4, fixed)
    stored_crc, = struct.unpack_from("<I", rest, created_len)
    if crc32c(head + rest[:created_len]) != stored_crc:
        raise CorruptFooter("superblock checksum mismatch")
    if major != FORMAT_MAJOR:
        raise UnsupportedVersion(
            f"file format major version {major}, reader supports {FORMAT_MAJOR}")
    try:
        created_time = rest[:created_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptFooter("superblock created_time is not UTF-8") from exc

    handle.format_version = (major, minor)
    handle.uuid = str(_uuid.UUID(bytes=uuid_bytes))
    handle.created_time = created_time

    if footer_offset == 0:
        raise CorruptFooter("file has no footer (it was never finalized)")
    if footer_offset < sb_len or footer_offset + 8 > size:
        raise CorruptFooter(f"footer offset {footer_offset} is out of bounds")
    footer = handle._pread(size - footer_offset, footer_offset)
    if len(footer) < 8:
        raise TruncatedFile("footer is truncated")
    stored_crc, = struct.unpack_from("<I", footer, len(footer) - 4)
    if crc32c(footer[:-4]) != stored_crc:
        raise CorruptFooter("footer checksum mismatch")
    if footer[-8:-4] != FOOT_MAGIC:
        raise CorruptFooter("footer terminator missing")

    sections: dict[bytes, bytes] = {}
    pos = 0
    body_end = len(footer) - 8
    for expected in (b"OBJT", b"ATTR", b"CHNK"):
        if pos + 12 > body_end:
            raise CorruptFooter("footer section table is truncated")
        tag = footer[pos:pos + 4]
        length, = struct.unpack_from("<Q", footer, pos + 4)
        pos += 12
        if tag != expected:
            raise CorruptFooter(f"expected footer section {expected!r}, found {tag!r}")
        if pos + length + 4 > body_end:
            raise CorruptFooter(f"footer section {tag!r} overruns the footer")
        body = footer[pos:pos + length]
        pos += length
        crc, = struct.unpack_from("<I", footer, pos)
        pos += 4
        if crc32c(body) != crc:
            raise CorruptFooter(f"footer section {tag!r} checksum mismatch")
        sections[tag] = body
    if pos != body_end:
        raise CorruptFooter("footer contains trailing bytes")

    r = _Reader(sections[b"OBJT"], "object table")
    count = r.u64()
    for _ in range(count):
        oid = r.u64()
        kind = r.u8()
        parent = r.u64()
        name = r.utf16len()
        if kind not in (0, 1):
            raise CorruptFooter(f"object {oid}: unknown kind {kind}")
        obj = _Object(oid, GROUP if kind == 0 else DATASET, name, parent)
        if kind == 1:
            dcode = r.u8()
            rank = r.u8()
            if dcode >= len(DTYPES) or rank > MAX_RANK:
                raise CorruptFooter(f"object {oid}: bad dataset metadata")
            shape = tuple(r.u64() for _ in range(rank))
            chunk = tuple(r.u64() for _ in range(rank))
            obj.meta = DatasetMeta(DTYPES[dcode], shape, chunk)
        if oid in handle._objects or oid == ROOT_ID:
            raise CorruptFooter(f"duplicate object id {oid}")
        handle._objects[oid] = obj
    for obj in handle._objects.values():
        if obj.object_id == ROOT_ID:
            continue
        parent = handle._objects.get(obj.parent_id)
        if parent is None or parent.kind != GROUP:
            raise CorruptFooter(
                f"object {obj.object_id} has invalid parent {obj.parent_id}")
        if obj.name in parent.children:
            raise CorruptFooter(
                f"duplicate sibling name {obj.name!r} under object {obj.parent_id}")
        parent.children[obj.name] = obj.object_id
    # Reject parent cycles among non-root objects.
    for obj in handle._objects.values():
        seen = set()
        cur = obj
        while cur.object_id != ROOT_ID:
            if cur.object_id in seen:
                raise CorruptFooter("object parent links contain a cycle")
            seen.add(cur.object_id)
            cur = handle._objects[cur.parent_id]
    handle._next_id = max(handle._objects) + 1 if len(handle._objects) > 1 else 1

    r = _Reader(sections[b"ATTR"], "attribute table")
    count = r.u64()
    for _ in range(count):
        oid = r.u64()
        key = r.utf16len()
        value = _decode_attr_value(r)
        if oid not in handle._objects:
            raise CorruptFooter(f"attribute on unknown object {oid}")
        handle._attrs.setdefault(oid, {})[key] = value

    r = _Reader(sections[b"CHNK"], "chunk index")
    count = r.u64()
    for _ in range(count):
        oid = r.u64()
        stream = r.u8()
        ncoords = r.u8()
        coords = tuple(r.u64() for _ in range(ncoords))
        offset = r.u64()
        length = r.u64()
        crc = r.u32()
        obj = handle._objects.get(oid)
        if obj is None or obj.kind != DATASET:
            raise CorruptFooter(f"chunk index entry for non-dataset object {oid}")
        if offset + length > size:
            raise CorruptFooter(f"chunk index entry for object {oid} is out of bounds")
        handle._chunk_index[(oid, stream, coords)] = _ChunkEntry(offset, length, crc)

    handle._data_end = size
