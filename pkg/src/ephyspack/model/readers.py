"""Entity readers: reconstruct typed values from a container.

Readers check the stored layout as they parse and raise
:class:`~ephyspack.errors.SchemaViolation` carrying the entity path and the
stable rule code (the same codes the validator reports) on the first
violation they meet.
"""

from __future__ import annotations

import numpy as np

from ..container import ContainerHandle, DATASET, GROUP
from ..errors import (
    NoSuchEntity,
    NoSuchKey,
    NoSuchObject,
    NoSuchSource,
    SchemaViolation,
)
from . import layout as L
from .types import (
    DIM_SEMANTICS,
    DerivedFrom,
    EventProperty,
    ExclusiveUnits,
    ExperimentalEvents,
    ExplicitGeometry,
    GenericArray,
    GlobalMetadata,
    Grouping,
    ImageStack,
    IrregularSampling,
    MultiUnits,
    ProbabilisticUnits,
    PropertySet,
    RaggedChannels,
    RectangularGeometry,
    RegularSampling,
    RoiGeometry,
    SessionProps,
    SignalEvents,
    SignalSource,
    SOURCE_KINDS,
    SpikeTemplates,
    TimeSeries,
    Trigger,
    UNIT_SOURCE_KINDS,
    Waveforms,
    bad_prob_row,
    is_non_decreasing,
    is_strictly_increasing,
    marker_problem,
    offsets_problem,
    parse_timestamp,
)


def _attr(handle, oid: int, path: str, key: str, code: str):
    try:
        return handle.get_attribute(oid, key)
    except NoSuchKey:
        raise SchemaViolation(path, code, f"missing attribute {key!r}") from None


def _opt_attr(handle, oid: int, key: str, default=None):
    try:
        return handle.get_attribute(oid, key)
    except NoSuchKey:
        return default


def _child(handle, gid: int, path: str, name: str, code: str,
           kind: str = DATASET) -> int:
    cid = handle.child_id(gid, name)
    if cid is None or handle.object_kind(cid) != kind:
        raise SchemaViolation(path, code, f"missing {kind} {name!r}")
    return cid


def _opt_dataset(handle, gid: int, name: str):
    cid = handle.child_id(gid, name)
    if cid is None or handle.object_kind(cid) != DATASET:
        return None
    return cid


def _prefixed_attrs(attrs: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in attrs.items() if k.startswith(prefix)}


def _resolve_entity(handle: ContainerHandle, path: str) -> int:
    try:
        return handle.resolve_path(path)
    except NoSuchObject:
        raise NoSuchEntity(f"no entity at {path!r}") from None


def _check_sources(handle, path: str, ids, code: str) -> None:
    for sid in ids:
        if not handle.has_path(L.source_path(sid)):
            raise SchemaViolation(path, code, f"unknown source {sid!r}")


# -- global metadata ----------------------------------------------------------

def read_global_metadata(handle: ContainerHandle) -> GlobalMetadata:
    if not handle.has_path(L.GLOBAL_PATH):
        raise SchemaViolation(L.GLOBAL_PATH, "G001", "global metadata group missing")
    gid = handle.resolve_path(L.GLOBAL_PATH)
    attrs = handle.attributes(gid)
    if "session_start" not in attrs:
        raise SchemaViolation(L.GLOBAL_PATH, "G002", "session_start attribute missing")
    session_start = attrs["session_start"]
    try:
        parse_timestamp(session_start)
    except (ValueError, TypeError) as exc:
        raise SchemaViolation(L.GLOBAL_PATH, "G003", str(exc)) from None
    return GlobalMetadata(
        identification=_prefixed_attrs(attrs, "id."),
        session_start=session_start,
        format_version=handle.format_version,
        file_uuid=handle.uuid,
    )


# -- signal sources -----------------------------------------------------------

def source_ids(handle: ContainerHandle) -> list[str]:
    if not handle.has_path(L.SOURCES_PATH):
        return []
    gid = handle.resolve_path(L.SOURCES_PATH)
    return [name for name, _oid, kind in handle.list_children(gid) if kind == GROUP]


def get_source(handle: ContainerHandle, source_id: str) -> SignalSource:
    path = L.source_path(source_id)
    if not handle.has_path(path):
        raise NoSuchSource(f"no source {source_id!r}")
    gid = handle.resolve_path(path)
    attrs = handle.attributes(gid)
    kind = attrs.get("kind")
    if kind not in SOURCE_KINDS:
        raise SchemaViolation(path, "S001", f"missing or unknown source kind {kind!r}")
    parent = attrs.get("parent")
    if parent is not None and not handle.has_path(L.source_path(parent)):
        raise SchemaViolation(path, "S002", f"parent source {parent!r} does not exist")
    position = None
    if "position" in attrs:
        pos = attrs["position"]
        if not isinstance(pos, list) or len(pos) != 3:
            raise SchemaViolation(path, "S008", "position must be three coordinates")
        position = tuple(float(v) for v in pos)

    roi = None
    roi_gid = handle.child_id(gid, "roi")
    if roi_gid is not None:
        if kind != "roi":
            raise SchemaViolation(
                path, "S004", f"roi geometry on source of kind {kind!r}")
        vid = _child(handle, roi_gid, path, "vertices", "S005")
        vertices = handle.read_full(vid)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise SchemaViolation(path, "S005", "roi vertices must be V x 2")
        times = moving = None
        tid = _opt_dataset(handle, roi_gid, "times")
        mid = _opt_dataset(handle, roi_gid, "moving_vertices")
        if (tid is None) != (mid is None):
            raise SchemaViolation(
                path, "S005", "roi times and moving vertices must come together")
        if tid is not None:
            times = handle.read_full(tid)
            moving = handle.read_full(mid)
            if moving.ndim != 3 or moving.shape[1:] != vertices.shape:
                raise SchemaViolation(path, "S005", "moving roi vertices must be T x V x 2")
            if times.ndim != 1 or len(times) != moving.shape[0]:
                raise SchemaViolation(path, "S005", "roi times must match moving vertices")
            if not is_strictly_increasing(times):
                raise SchemaViolation(path, "S006", "roi times not strictly increasing")
        roi = RoiGeometry(vertices=vertices, times=times, moving_vertices=moving)
    elif kind == "roi":
        pass  # an ROI source without stored geometry is allowed

    return SignalSource(
        source_id=source_id,
        kind=kind,
        parent_source=parent,
        static_meta=_prefixed_attrs(attrs, "meta."),
        position=position,
        roi_geometry=roi,
    )


def source_tree(handle: ContainerHandle):
    """All sources as a forest of SourceTreeNode, children sorted by id."""
    from .types import SourceTreeNode

    sources = {sid: get_source(handle, sid) for sid in source_ids(handle)}
    for sid, src in sources.items():
        seen = {sid}
        cur = src.parent_source
        while cur is not None:
            if cur in seen:
                raise SchemaViolation(
                    L.source_path(sid), "S003", "source parent links form a cycle")
            seen.add(cur)
            cur = sources[cur].parent_source if cur in sources else None
    nodes = {sid: SourceTreeNode(source=src) for sid, src in sources.items()}
    roots = []
    for sid in sorted(sources):
        parent = sources[sid].parent_source
        if parent is not None and parent in nodes:
            nodes[parent].children.append(nodes[sid])
        else:
            roots.append(nodes[sid])
    return roots


def source_children(handle: ContainerHandle) -> dict[str, list[str]]:
    """source id -> sorted child ids, for every stored source."""
    children: dict[str, list[str]] = {sid: [] for sid in source_ids(handle)}
    for sid in children:
        gid = handle.resolve_path(L.source_path(sid))
        parent = _opt_attr(handle, gid, "parent")
        if parent is not None and parent in children:
            children[parent].append(sid)
    return {k: sorted(v) for k, v in children.items()}


# -- time series ----------------------------------------------------------------

def _core_attrs(handle, gid: int, path: str, code: str) -> tuple[str, float, float]:
    label = _attr(handle, gid, path, "label", code)
    start = _attr(handle, gid, path, "start_time", code)
    duration = _attr(handle, gid, path, "duration", code)
    if not isinstance(label, str) or not label:
        raise SchemaViolation(path, code, "label must be a non-empty string")
    if not isinstance(start, float) or not isinstance(duration, float) or duration < 0:
        raise SchemaViolation(path, code, "start_time/duration must be valid")
    return label, start, duration


def read_time_series(handle: ContainerHandle, path: str) -> TimeSeries:
    gid = _resolve_entity(handle, path)
    if _opt_attr(handle, gid, L.ENTITY_KIND_ATTR) != "time_series":
        raise SchemaViolation(path, "D001", "not a time_series entity")
    label, start, duration = _core_attrs(handle, gid, path, "T014")

    vid = _child(handle, gid, path, "values", "T001")
    if len(handle.dataset_meta(vid).shape) != 2:
        raise SchemaViolation(path, "T001", "values must be samples x channels")
    values = handle.read_full(vid)
    n, c = values.shape

    unit = _opt_attr(handle, gid, "unit")
    cu_id = _opt_dataset(handle, gid, "channel_units")
    if unit is not None:
        if not isinstance(unit, str) or not unit:
            raise SchemaViolation(path, "T002", "unit must be a non-empty string")
    elif cu_id is not None:
        unit = handle.read_full(cu_id)
        if len(unit) != c or any(not u for u in unit):
            raise SchemaViolation(
                path, "T003", f"channel_units must be {c} non-empty strings")
    else:
        raise SchemaViolation(path, "T002", "no unit attribute or channel_units")

    sid = _child(handle, gid, path, "sources", "T004")
    sources = handle.read_full(sid)
    if len(sources) != c:
        raise SchemaViolation(path, "T004", f"{len(sources)} sources for {c} channels")
    _check_sources(handle, path, sources, "T005")

    mode = _opt_attr(handle, gid, "sampling")
    if mode == "regular":
        rate = _opt_attr(handle, gid, "rate_hz")
        if not isinstance(rate, float) or not rate > 0:
            raise SchemaViolation(path, "T007", f"rate_hz missing or not positive: {rate!r}")
        sync_index = handle.read_full(_child(handle, gid, path, "sync_index", "T011"))
        sync_time = handle.read_full(_child(handle, gid, path, "sync_time", "T011"))
        if sync_index.shape != sync_time.shape:
            raise SchemaViolation(path, "T011", "sync marker arrays differ in length")
        problem = marker_problem(sync_index, sync_time, rate, start)
        if problem is None and len(sync_index) and int(sync_index[-1]) >= max(n, 1):
            problem = "marker index beyond the sample count"
        if problem:
            raise SchemaViolation(path, "T012", f"sync markers: {problem}")
        sampling = RegularSampling(rate_hz=rate, sync_index=sync_index,
                                   sync_time=sync_time)
    elif mode == "irregular":
        tid = _child(handle, gid, path, "timestamps", "T008")
        timestamps = handle.read_full(tid)
        if timestamps.ndim != 1 or len(timestamps) != n:
            raise SchemaViolation(
                path, "T008", f"{len(timestamps)} timestamps for {n} samples")
        if not is_strictly_increasing(timestamps):
            raise SchemaViolation(path, "T009", "timestamps not strictly increasing")
        if n and (timestamps[0] < start or timestamps[-1] > start + duration):
            raise SchemaViolation(path, "T010", "timestamps outside the series window")
        sampling = IrregularSampling(timestamps=timestamps)
    else:
        raise SchemaViolation(path, "T006", f"invalid sampling mode {mode!r}")

    return TimeSeries(
        label=label,
        values=values,
        unit=unit,
        start_time=start,
        duration=duration,
        sampling=sampling,
        sources=list(sources),
        provenance=_opt_attr(handle, gid, "provenance"),
    )


# -- signal events ----------------------------------------------------------------

def _read_trigger(handle, gid: int, path: str):
    mode = _opt_attr(handle, gid, "trigger_mode")
    if mode == "none":
        return None
    if mode == "session":
        ttype = _attr(handle, gid, path, "trigger.type", "E010")
        threshold = _attr(handle, gid, path, "trigger.threshold", "E010")
        unit = _attr(handle, gid, path, "trigger.unit", "E010")
        if not isinstance(ttype, str) or not ttype or not isinstance(threshold, float):
            raise SchemaViolation(path, "E010", "session trigger attrs malformed")
        return Trigger(type=ttype, threshold=threshold, unit=unit)
    if mode == "per_channel":
        tgid = handle.child_id(gid, "trigger")
        if tgid is None or handle.object_kind(tgid) != GROUP:
            raise SchemaViolation(path, "E010", "missing per-channel trigger group")
        srcs = handle.read_full(_child(handle, tgid, path, "source", "E010"))
        types = handle.read_full(_child(handle, tgid, path, "type", "E010"))
        units = handle.read_full(_child(handle, tgid, path, "unit", "E010"))
        thresholds = handle.read_full(_child(handle, tgid, path, "threshold", "E010"))
        if not (len(srcs) == len(types) == len(units) == len(thresholds)):
            raise SchemaViolation(path, "E010", "trigger table columns differ in length")
        _check_sources(handle, path, srcs, "E010")
        return {
            s: Trigger(type=t, threshold=float(th), unit=u)
            for s, t, u, th in zip(srcs, types, units, thresholds)
        }
    raise SchemaViolation(path, "E010", f"invalid trigger_mode {mode!r}")


def _read_property_set(handle, sgid: int, path: str, set_name: str,
                       n_events: int) -> PropertySet:
    ps = PropertySet(set_name=set_name)

    uid = _opt_dataset(handle, sgid, "unit_ids")
    if uid is not None:
        ps.unit_ids = handle.read_full(uid)
        for sid in ps.unit_ids:
            spath = L.source_path(sid)
            if not handle.has_path(spath):
                raise SchemaViolation(path, "E008", f"unknown unit source {sid!r}")
            kind = _opt_attr(handle, handle.resolve_path(spath), "kind")
            if kind not in UNIT_SOURCE_KINDS:
                raise SchemaViolation(
                    path, "E008", f"unit source {sid!r} has kind {kind!r}")
    n_units = len(ps.unit_ids) if ps.unit_ids is not None else 0

    mode = _opt_attr(handle, sgid, "assignment")
    if mode not in ("none", "exclusive", "multi", "probabilistic"):
        raise SchemaViolation(path, "E012", f"invalid assignment mode {mode!r}")
    if mode != "none" and ps.unit_ids is None:
        raise SchemaViolation(path, "E008", "unit assignment without unit_ids")
    if mode == "exclusive":
        unit_of = handle.read_full(_child(handle, sgid, path, "unit_of", "E012"))
        if unit_of.ndim != 1 or len(unit_of) != n_events:
            raise SchemaViolation(path, "E012", "unit_of must have one entry per event")
        if unit_of.size and (unit_of.min() < -1 or unit_of.max() >= n_units):
            raise SchemaViolation(path, "E012", "unit_of index out of range")
        ps.assignment = ExclusiveUnits(unit_of=unit_of)
    elif mode == "multi":
        unit_index = handle.read_full(_child(handle, sgid, path, "unit_index", "E012"))
        offsets = handle.read_full(_child(handle, sgid, path, "unit_offsets", "E012"))
        problem = offsets_problem(offsets, n_events, len(unit_index))
        if problem:
            raise SchemaViolation(path, "E005", f"multi-unit offsets: {problem}")
        if unit_index.size and (unit_index.min() < 0 or unit_index.max() >= n_units):
            raise SchemaViolation(path, "E012", "unit index out of range")
        ps.assignment = MultiUnits(unit_index=unit_index, offsets=offsets)
    elif mode == "probabilistic":
        probs = handle.read_full(_child(handle, sgid, path, "probs", "E012"))
        if probs.ndim != 2 or probs.shape != (n_events, n_units):
            raise SchemaViolation(
                path, "E012", f"probs must be {n_events} x {n_units}, got {probs.shape}")
        bad = bad_prob_row(probs)
        if bad:
            code = "E007" if "outside" in bad[1] else "E006"
            raise SchemaViolation(path, code, f"event {bad[0]}: {bad[1]}")
        ps.assignment = ProbabilisticUnits(probs=probs)

    cid = _opt_dataset(handle, sgid, "channel_ids")
    if cid is not None:
        ps.channel_ids = handle.read_full(cid)
        _check_sources(handle, path, ps.channel_ids, "E004")
    n_channels = len(ps.channel_ids) if ps.channel_ids is not None else 0
    cmode = _opt_attr(handle, sgid, "channel_mode", "none")
    if cmode not in ("none", "flat", "ragged"):
        raise SchemaViolation(path, "E015", f"invalid channel_mode {cmode!r}")
    if cmode != "none" and ps.channel_ids is None:
        raise SchemaViolation(path, "E015", "per-event channels without channel_ids")
    if cmode == "flat":
        idx = handle.read_full(_child(handle, sgid, path, "event_channel", "E015"))
        if idx.ndim != 1 or len(idx) != n_events:
            raise SchemaViolation(path, "E015", "event_channel must match event count")
        if idx.size and (idx.min() < 0 or idx.max() >= n_channels):
            raise SchemaViolation(path, "E015", "per-event channel index out of range")
        ps.per_event_channels = idx
    elif cmode == "ragged":
        idx = handle.read_full(_child(handle, sgid, path, "event_channels", "E015"))
        offsets = handle.read_full(
            _child(handle, sgid, path, "event_channel_offsets", "E015"))
        problem = offsets_problem(offsets, n_events, len(idx))
        if problem:
            raise SchemaViolation(path, "E005", f"per-event channel offsets: {problem}")
        if idx.size and (idx.min() < 0 or idx.max() >= n_channels):
            raise SchemaViolation(path, "E015", "per-event channel index out of range")
        ps.per_event_channels = RaggedChannels(channel_index=idx, offsets=offsets)

    wgid = handle.child_id(sgid, "waveforms")
    if wgid is not None:
        wpath = f"{path}/props/{set_name}/waveforms"
        rate = _attr(handle, wgid, path, "rate_hz", "E013")
        unit = _attr(handle, wgid, path, "unit", "E013")
        pre = _attr(handle, wgid, path, "pre_trigger_samples", "E013")
        if not isinstance(rate, float) or not rate > 0 or not unit or int(pre) < 0:
            raise SchemaViolation(path, "E013", f"waveform metadata malformed at {wpath}")
        payload = handle.read_full(_child(handle, wgid, path, "payload", "E013"))
        offsets = handle.read_full(_child(handle, wgid, path, "offsets", "E013"))
        if payload.ndim != 2:
            raise SchemaViolation(path, "E013", "waveform payload must be 2-d")
        problem = offsets_problem(offsets, n_events, payload.shape[0])
        if problem:
            raise SchemaViolation(path, "E005", f"waveform offsets: {problem}")
        ps.waveforms = Waveforms(payload=payload, offsets=offsets, rate_hz=rate,
                                 unit=unit, pre_trigger_samples=int(pre))

    fid = _opt_dataset(handle, sgid, "features")
    if fid is not None:
        feats = handle.read_full(fid)
        if feats.ndim != 2 or feats.shape[0] != n_events:
            raise SchemaViolation(path, "E011", "features must be events x F")
        nid = _opt_dataset(handle, sgid, "feature_names")
        names = handle.read_full(nid) if nid is not None else None
        if names is None or len(names) != feats.shape[1]:
            raise SchemaViolation(
                path, "E011", "feature_names must name every feature column")
        ps.features = feats
        ps.feature_names = names
    return ps


def read_signal_events(handle: ContainerHandle, path: str) -> SignalEvents:
    gid = _resolve_entity(handle, path)
    if _opt_attr(handle, gid, L.ENTITY_KIND_ATTR) != "signal_events":
        raise SchemaViolation(path, "D001", "not a signal_events entity")
    label, start, duration = _core_attrs(handle, gid, path, "E014")
    detection = _attr(handle, gid, path, "detection_description", "E014")

    tid = _child(handle, gid, path, "event_times", "E001")
    times = handle.read_full(tid)
    if times.ndim != 1 or not is_non_decreasing(times):
        raise SchemaViolation(path, "E001", "event times must be 1-d and non-decreasing")
    if times.size and (times[0] < start or times[-1] > start + duration):
        raise SchemaViolation(path, "E002", "event time outside the recording window")
    n_events = len(times)

    sp = SessionProps(detection_description=detection)
    scid = _opt_dataset(handle, gid, "source_channels")
    if scid is not None:
        sp.source_channels = handle.read_full(scid)
        _check_sources(handle, path, sp.source_channels, "E004")
    tpl_id = _opt_dataset(handle, gid, "templates")
    if tpl_id is not None:
        tpl = handle.read_full(tpl_id)
        unit = _opt_attr(handle, tpl_id, "unit")
        rate = _opt_attr(handle, tpl_id, "rate_hz")
        if tpl.ndim != 3 or not unit or not isinstance(rate, float) or not rate > 0:
            raise SchemaViolation(path, "E009", "spike templates malformed")
        sp.spike_templates = SpikeTemplates(values=tpl, unit=unit, rate_hz=rate)
    sp.trigger = _read_trigger(handle, gid, path)

    property_sets: dict[str, PropertySet] = {}
    pgid = handle.child_id(gid, "props")
    has_event_channels = False
    if pgid is not None:
        for set_name, sgid, kind in handle.list_children(pgid):
            if kind != GROUP:
                continue
            ps = _read_property_set(handle, sgid, path, set_name, n_events)
            property_sets[set_name] = ps
            if ps.per_event_channels is not None:
                has_event_channels = True
    if sp.source_channels is None and not has_event_channels:
        raise SchemaViolation(
            path, "E003", "no session source_channels and no per-event channels")

    return SignalEvents(
        label=label,
        start_time=start,
        duration=duration,
        event_times=times,
        session_props=sp,
        property_sets=property_sets,
    )


# -- image stacks -------------------------------------------------------------------

def read_image_stack(handle: ContainerHandle, path: str) -> ImageStack:
    gid = _resolve_entity(handle, path)
    if _opt_attr(handle, gid, L.ENTITY_KIND_ATTR) != "image_stack":
        raise SchemaViolation(path, "D001", "not an image_stack entity")
    label, start, duration = _core_attrs(handle, gid, path, "I009")

    pid = _child(handle, gid, path, "pixels", "I008")
    meta = handle.dataset_meta(pid)
    if len(meta.shape) not in (3, 4):
        raise SchemaViolation(path, "I008", f"pixels rank {len(meta.shape)}, need 3 or 4")
    sem = _attr(handle, gid, path, "dim_semantics", "I001")
    if (not isinstance(sem, list) or len(sem) != len(meta.shape)
            or any(s not in DIM_SEMANTICS for s in sem)):
        raise SchemaViolation(path, "I001", f"invalid dim_semantics {sem!r}")
    time_dims = [i for i, s in enumerate(sem) if s == "time"]
    if len(time_dims) != 1:
        raise SchemaViolation(
            path, "I002", f"{len(time_dims)} time dimensions, need exactly 1")
    ftid = _child(handle, gid, path, "frame_times", "I003")
    frame_times = handle.read_full(ftid)
    if frame_times.ndim != 1 or len(frame_times) != meta.shape[time_dims[0]]:
        raise SchemaViolation(
            path, "I003",
            f"{len(frame_times)} frame times for time extent {meta.shape[time_dims[0]]}")
    if not is_strictly_increasing(frame_times):
        raise SchemaViolation(path, "I004", "frame times not strictly increasing")
    unit = _opt_attr(handle, gid, "pixel_unit")
    if not isinstance(unit, str) or not unit:
        raise SchemaViolation(path, "I006", "pixel_unit missing or empty")

    geometry = _opt_attr(handle, gid, "geometry")
    if geometry == "rectangular":
        dy = _attr(handle, gid, path, "geom.dy", "I005")
        dx = _attr(handle, gid, path, "geom.dx", "I005")
        origin = _attr(handle, gid, path, "geom.origin", "I005")
        if (not isinstance(dy, float) or not isinstance(dx, float)
                or not np.isfinite(dy) or not np.isfinite(dx) or dy <= 0 or dx <= 0
                or not isinstance(origin, list) or len(origin) != 2):
            raise SchemaViolation(path, "I005", "rectangular pixel geometry malformed")
        geom = RectangularGeometry(dy=dy, dx=dx, origin=tuple(origin))
    elif geometry == "explicit":
        dims = {s: meta.shape[i] for i, s in enumerate(sem)}
        if "y" not in dims or "x" not in dims:
            raise SchemaViolation(
                path, "I005", "explicit geometry requires y and x dimensions")
        cid = _child(handle, gid, path, "pixel_coords", "I005")
        coords = handle.read_full(cid)
        if coords.shape != (dims["y"], dims["x"], 2) or not np.all(np.isfinite(coords)):
            raise SchemaViolation(path, "I005", "explicit pixel coords malformed")
        geom = ExplicitGeometry(coords=coords)
    else:
        raise SchemaViolation(path, "I005", f"invalid geometry mode {geometry!r}")

    sources = None
    sid = _opt_dataset(handle, gid, "sources")
    if sid is not None:
        sources = handle.read_full(sid)
        _check_sources(handle, path, sources, "I007")

    return ImageStack(
        label=label,
        start_time=start,
        duration=duration,
        pixels=handle.read_full(pid),
        dim_semantics=sem,
        frame_times=frame_times,
        pixel_unit=unit,
        pixel_geometry=geom,
        sources=sources,
    )


# -- experimental events ---------------------------------------------------------------

def read_experimental_events(handle: ContainerHandle, path: str) -> ExperimentalEvents:
    gid = _resolve_entity(handle, path)
    if _opt_attr(handle, gid, L.ENTITY_KIND_ATTR) != "experimental_events":
        raise SchemaViolation(path, "D001", "not an experimental_events entity")
    label = _attr(handle, gid, path, "label", "X006")
    description = _attr(handle, gid, path, "description", "X006")
    if not label or not isinstance(description, str) or not description:
        raise SchemaViolation(path, "X006", "label/description missing or empty")
    mon_start = _attr(handle, gid, path, "monitor_start", "X006")
    mon_end = _attr(handle, gid, path, "monitor_end", "X006")
    if not isinstance(mon_start, float) or not isinstance(mon_end, float):
        raise SchemaViolation(path, "X006", "monitor window attrs must be numbers")
    if mon_start > mon_end:
        raise SchemaViolation(path, "X001", "monitor_start exceeds monitor_end")

    tid = _child(handle, gid, path, "event_times", "X002")
    times = handle.read_full(tid)
    if times.ndim != 1 or not is_non_decreasing(times):
        raise SchemaViolation(path, "X002", "event times must be 1-d and non-decreasing")
    if times.size and (times[0] < mon_start or times[-1] > mon_end):
        raise SchemaViolation(path, "X003", "event time outside the monitor window")

    properties: dict[str, EventProperty] = {}
    pgid = handle.child_id(gid, "props")
    if pgid is not None:
        for pname, pid, kind in handle.list_children(pgid):
            if kind != GROUP:
                continue
            vid = _opt_dataset(handle, pid, "values")
            if vid is None:
                raise SchemaViolation(
                    path, "X005", f"property {pname!r} has no values dataset")
            values = handle.read_full(vid)
            length = len(values)
            if length != len(times):
                raise SchemaViolation(
                    path, "X004",
                    f"property {pname!r} has {length} values for {len(times)} events")
            interp = _opt_attr(handle, pid, "interpretation")
            if not isinstance(interp, str):
                raise SchemaViolation(
                    path, "X005", f"property {pname!r} lacks an interpretation")
            properties[pname] = EventProperty(
                values=values, interpretation=interp,
                unit=_opt_attr(handle, pid, "unit"))

    return ExperimentalEvents(
        label=label,
        monitor_start=mon_start,
        monitor_end=mon_end,
        description=description,
        event_times=times,
        properties=properties,
    )


# -- generic arrays ----------------------------------------------------------------------

def read_generic_array(handle: ContainerHandle, path: str) -> GenericArray:
    gid = _resolve_entity(handle, path)
    if _opt_attr(handle, gid, L.ENTITY_KIND_ATTR) != "generic_array":
        raise SchemaViolation(path, "D001", "not a generic_array entity")
    description = _opt_attr(handle, gid, "description")
    if not isinstance(description, str) or not description:
        raise SchemaViolation(path, "A001", "description missing or empty")
    did = _child(handle, gid, path, "data", "A006")
    meta = handle.dataset_meta(did)
    data = handle.read_full(did)
    dims = _opt_attr(handle, gid, "dim_descriptions")
    if not isinstance(dims, list) or len(dims) != len(meta.shape):
        raise SchemaViolation(
            path, "A002", f"dim_descriptions must have {len(meta.shape)} entries")

    headings = None
    hgid = handle.child_id(gid, "headings")
    if hgid is not None:
        headings = {}
        for name, hid, kind in handle.list_children(hgid):
            if kind != DATASET or not name.startswith("dim"):
                raise SchemaViolation(path, "A003", f"unexpected heading entry {name!r}")
            try:
                dim = int(name[3:])
            except ValueError:
                raise SchemaViolation(path, "A003", f"bad heading name {name!r}") from None
            if not 0 <= dim < len(meta.shape):
                raise SchemaViolation(path, "A003", f"headings for unknown dim {dim}")
            labels = handle.read_full(hid)
            if len(labels) != meta.shape[dim]:
                raise SchemaViolation(
                    path, "A003",
                    f"dim {dim} has extent {meta.shape[dim]} but {len(labels)} headings")
            headings[dim] = labels

    categories = None
    cgid = handle.child_id(gid, "categories")
    if cgid is not None:
        nid = _opt_dataset(handle, cgid, "names")
        wid = _opt_dataset(handle, cgid, "weights")
        if nid is None or wid is None:
            raise SchemaViolation(path, "A004", "categories need names and weights")
        names = handle.read_full(nid)
        weights = handle.read_full(wid)
        if len(names) != len(weights) or (weights.size and weights.min() < 0):
            raise SchemaViolation(path, "A004", "categories malformed")
        categories = list(zip(names, (float(w) for w in weights)))

    references = []
    rgid = handle.child_id(gid, "refs")
    if rgid is not None:
        pid = _opt_dataset(handle, rgid, "paths")
        did2 = _opt_dataset(handle, rgid, "descriptions")
        if pid is None or did2 is None:
            raise SchemaViolation(path, "A005", "refs need paths and descriptions")
        paths = handle.read_full(pid)
        descs = handle.read_full(did2)
        if len(paths) != len(descs):
            raise SchemaViolation(path, "A005", "refs columns differ in length")
        for p in paths:
            if not handle.has_path(p):
                raise SchemaViolation(path, "A005", f"reference to missing entity {p!r}")
        references = list(zip(paths, descs))

    return GenericArray(
        description=description,
        data=data,
        dim_descriptions=dims,
        slice_headings=headings,
        categories=categories,
        references=references,
    )


# -- relationships -------------------------------------------------------------------------

def derivation_ids(handle: ContainerHandle) -> list[str]:
    if not handle.has_path(L.DERIVED_PATH):
        return []
    gid = handle.resolve_path(L.DERIVED_PATH)
    return [name for name, _oid, kind in handle.list_children(gid) if kind == GROUP]


def read_derived_from(handle: ContainerHandle, rel_id: str) -> DerivedFrom:
    path = L.derived_path(rel_id)
    if not handle.has_path(path):
        raise NoSuchEntity(f"no derivation record {rel_id!r}")
    gid = handle.resolve_path(path)
    attrs = handle.attributes(gid)
    activity = attrs.get("activity")
    timestamp = attrs.get("timestamp")
    if not isinstance(activity, str) or timestamp is None:
        raise SchemaViolation(path, "R010", "derivation record attrs malformed")
    if not activity:
        raise SchemaViolation(path, "R004", "derivation activity is empty")
    try:
        parse_timestamp(timestamp, require_tz=False)
    except (ValueError, TypeError) as exc:
        raise SchemaViolation(path, "R009", f"timestamp: {exc}") from None
    inputs_id = _opt_dataset(handle, gid, "inputs")
    outputs_id = _opt_dataset(handle, gid, "outputs")
    agents_id = _opt_dataset(handle, gid, "agents")
    if inputs_id is None or outputs_id is None or agents_id is None:
        raise SchemaViolation(path, "R010", "derivation record datasets missing")
    inputs = handle.read_full(inputs_id)
    outputs = handle.read_full(outputs_id)
    agents = handle.read_full(agents_id)
    if not inputs or not outputs:
        raise SchemaViolation(path, "R005", "derivation needs inputs and outputs")
    if not agents or any(not a for a in agents):
        raise SchemaViolation(path, "R003", "derivation agents empty")
    for p in list(inputs) + list(outputs):
        if not handle.has_path(p):
            raise SchemaViolation(path, "R001", f"derivation references missing {p!r}")
    return DerivedFrom(
        outputs=outputs,
        inputs=inputs,
        activity=activity,
        agents=agents,
        params=_prefixed_attrs(attrs, "param."),
        timestamp=timestamp,
    )


def grouping_ids(handle: ContainerHandle) -> list[str]:
    if not handle.has_path(L.GROUPS_PATH):
        return []
    gid = handle.resolve_path(L.GROUPS_PATH)
    return [name for name, _oid, kind in handle.list_children(gid) if kind == GROUP]


def read_grouping(handle: ContainerHandle, group_id: str) -> Grouping:
    path = L.group_path(group_id)
    if not handle.has_path(path):
        raise NoSuchEntity(f"no grouping {group_id!r}")
    gid = handle.resolve_path(path)
    label = _opt_attr(handle, gid, "label")
    if not isinstance(label, str):
        raise SchemaViolation(path, "R011", "grouping label missing")
    mid = _opt_dataset(handle, gid, "members")
    if mid is None:
        raise SchemaViolation(path, "R011", "grouping members dataset missing")
    members = handle.read_full(mid)
    if not members:
        raise SchemaViolation(path, "R007", "grouping has no members")
    for p in members:
        if not handle.has_path(p):
            raise SchemaViolation(path, "R006", f"grouping member missing: {p!r}")
    overrides = None
    ogid = handle.child_id(gid, "overrides")
    if ogid is not None:
        overrides = {}
        for name, oid, kind in handle.list_children(ogid):
            if kind != GROUP or not name.isdigit() or int(name) >= len(members):
                raise SchemaViolation(path, "R008", f"override entry {name!r} invalid")
            overrides[members[int(name)]] = handle.attributes(oid)
    return Grouping(
        group_id=group_id,
        label=label,
        members=members,
        per_member_overrides=overrides,
    )


# -- entity dispatch -------------------------------------------------------------------------

ENTITY_READERS = {
    "time_series": read_time_series,
    "signal_events": read_signal_events,
    "image_stack": read_image_stack,
    "experimental_events": read_experimental_events,
    "generic_array": read_generic_array,
}


def entity_paths(handle: ContainerHandle) -> list[str]:
    """Paths of all payload entities, sorted."""
    if not handle.has_path(L.DATA_PATH):
        return []
    gid = handle.resolve_path(L.DATA_PATH)
    return [L.data_path(name) for name, _oid, kind in handle.list_children(gid)
            if kind == GROUP]


def entity_kind(handle: ContainerHandle, path: str) -> str:
    gid = _resolve_entity(handle, path)
    kind = _opt_attr(handle, gid, L.ENTITY_KIND_ATTR)
    if kind not in ENTITY_READERS:
        raise SchemaViolation(path, "D001", f"missing or unknown entity_kind {kind!r}")
    return kind


def read_entity(handle: ContainerHandle, path: str):
    """(kind, typed value) for any payload entity."""
    kind = entity_kind(handle, path)
    return kind, ENTITY_READERS[kind](handle, path)
