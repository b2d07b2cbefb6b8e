"""Entity writers: validate an in-memory value, then lay it out on a container.

Every writer validates the full entity before touching the container, so a
rejected write leaves the file inventory unchanged.
"""

from __future__ import annotations

import numpy as np

from ..container import ContainerHandle
from ..errors import (
    BadOffsets,
    CycleDetected,
    DanglingReference,
    DerivationCycle,
    DimSemanticsMismatch,
    DtypeMismatch,
    DuplicateGroupId,
    DuplicateName,
    DuplicatePropertySetName,
    DuplicateSourceId,
    EmptyAgents,
    EventOutsideMonitorWindow,
    EventTimeOutOfWindow,
    FrameTimeCountMismatch,
    HeadingCountMismatch,
    IndexOutOfRange,
    InvalidName,
    LengthMismatch,
    MissingDescription,
    MissingUnit,
    NonMonotonicFrameTimes,
    NonMonotonicTimestamps,
    NonPositiveRate,
    NoTimeDimension,
    PropertyLengthMismatch,
    RankMismatch,
    RoiGeometryOnNonRoi,
    SchemaViolation,
    SourceCountMismatch,
    UnknownParent,
    UnknownUnitSource,
    UuidMismatch,
)
from . import layout as L
from .types import (
    DIM_SEMANTICS,
    DerivedFrom,
    ExclusiveUnits,
    ExperimentalEvents,
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
    SignalEvents,
    SignalSource,
    SOURCE_KINDS,
    SpikeTemplates,
    TimeSeries,
    Trigger,
    UNIT_SOURCE_KINDS,
    bad_prob_row,
    is_non_decreasing,
    is_strictly_increasing,
    marker_problem,
    offsets_problem,
    parse_timestamp,
)


def _f64(x, what: str) -> float:
    try:
        return float(x)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be a number, got {x!r}") from None


def _as_array(x, what: str, dtype=None) -> np.ndarray:
    arr = np.asarray(x) if dtype is None else np.asarray(x, dtype=dtype)
    if dtype is None and L.container_dtype(arr) is None:
        raise DtypeMismatch(f"{what}: dtype {arr.dtype} is not storable")
    return arr


def _check_name(name: str) -> str:
    if not name or "/" in name:
        raise InvalidName(f"invalid name {name!r}: must be non-empty without '/'")
    return name


def _source_exists(handle: ContainerHandle, source_id: str) -> bool:
    return handle.has_path(L.source_path(source_id))


def _require_sources(handle: ContainerHandle, ids, what: str,
                     exc=DanglingReference) -> None:
    for sid in ids:
        if not isinstance(sid, str) or not _source_exists(handle, sid):
            raise exc(f"{what}: unknown source {sid!r}")


def _entity_exists(handle: ContainerHandle, path: str) -> bool:
    """True for a payload entity or source path."""
    if not isinstance(path, str):
        return False
    parts = [p for p in path.split("/") if p]
    if len(parts) != 2 or parts[0] not in ("data", "sources"):
        return False
    return handle.has_path(path)


def _require_entities(handle: ContainerHandle, paths, what: str) -> None:
    for p in paths:
        if not _entity_exists(handle, p):
            raise DanglingReference(f"{what}: no entity at {p!r}")


def _new_entity_group(handle: ContainerHandle, name: str, kind: str) -> int:
    data_gid = L.ensure_group(handle, L.DATA_PATH)
    if handle.child_id(data_gid, name) is not None:
        raise DuplicateName(f"entity {name!r} already exists")
    gid = handle.create_group(data_gid, name)
    handle.set_attribute(gid, L.ENTITY_KIND_ATTR, kind)
    return gid


# -- global metadata ----------------------------------------------------------

def write_global_metadata(handle: ContainerHandle, meta: GlobalMetadata) -> None:
    """Write session metadata and create the standard group skeleton."""
    if meta.file_uuid is not None and meta.file_uuid != handle.uuid:
        raise UuidMismatch(
            f"metadata uuid {meta.file_uuid} != container uuid {handle.uuid}")
    if meta.format_version is not None and tuple(meta.format_version) != handle.format_version:
        raise UuidMismatch(
            f"metadata format version {meta.format_version} != "
            f"container {handle.format_version}")
    try:
        parse_timestamp(meta.session_start)
    except ValueError as exc:
        raise SchemaViolation(L.GLOBAL_PATH, "G003", str(exc)) from None
    if handle.has_path(L.GLOBAL_PATH):
        raise DuplicateName("global metadata already written")
    gid = L.ensure_group(handle, L.GLOBAL_PATH)
    handle.set_attribute(gid, "session_start", meta.session_start)
    for key, value in meta.identification.items():
        handle.set_attribute(gid, f"id.{key}", str(value))
    for path in (L.SOURCES_PATH, L.DATA_PATH, L.DERIVED_PATH, L.GROUPS_PATH, L.EXT_PATH):
        L.ensure_group(handle, path)


# -- signal sources -----------------------------------------------------------

def add_source(handle: ContainerHandle, src: SignalSource) -> str:
    _check_name(src.source_id)
    if src.kind not in SOURCE_KINDS:
        raise ValueError(f"unknown source kind {src.kind!r}; expected one of {SOURCE_KINDS}")
    if _source_exists(handle, src.source_id):
        raise DuplicateSourceId(f"source {src.source_id!r} already exists")
    if src.parent_source is not None:
        if src.parent_source == src.source_id:
            raise CycleDetected(f"source {src.source_id!r} cannot be its own parent")
        if not _source_exists(handle, src.parent_source):
            raise UnknownParent(f"parent source {src.parent_source!r} does not exist")
    if src.roi_geometry is not None and src.kind != "roi":
        raise RoiGeometryOnNonRoi(
            f"source {src.source_id!r} of kind {src.kind!r} carries roi geometry")

    roi = src.roi_geometry
    vertices = times = moving = None
    if roi is not None:
        vertices = np.asarray(roi.vertices, dtype="<f8")
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("roi vertices must be V x 2")
        if (roi.times is None) != (roi.moving_vertices is None):
            raise ValueError("roi times and moving vertices must come together")
        if roi.times is not None:
            times = np.asarray(roi.times, dtype="<f8")
            moving = np.asarray(roi.moving_vertices, dtype="<f8")
            if moving.ndim != 3 or moving.shape[1:] != vertices.shape:
                raise ValueError("moving roi vertices must be T x V x 2")
            if times.ndim != 1 or len(times) != moving.shape[0]:
                raise ValueError("roi times must match the moving vertex count")
            if not is_strictly_increasing(times):
                raise NonMonotonicTimestamps("roi times must be strictly increasing")
    position = None
    if src.position is not None:
        position = [float(v) for v in src.position]
        if len(position) != 3:
            raise ValueError("source position must have exactly 3 coordinates")

    sources_gid = L.ensure_group(handle, L.SOURCES_PATH)
    gid = handle.create_group(sources_gid, src.source_id)
    handle.set_attribute(gid, "kind", src.kind)
    if src.parent_source is not None:
        handle.set_attribute(gid, "parent", src.parent_source)
    if position is not None:
        handle.set_attribute(gid, "position", position)
    for key, value in src.static_meta.items():
        handle.set_attribute(gid, f"meta.{key}", value)
    if roi is not None:
        roi_gid = handle.create_group(gid, "roi")
        L.store_array(handle, roi_gid, "vertices", vertices)
        if times is not None:
            L.store_array(handle, roi_gid, "times", times)
            L.store_array(handle, roi_gid, "moving_vertices", moving)
    return L.source_path(src.source_id)


# -- time series ---------------------------------------------------------------

def write_time_series(handle: ContainerHandle, ts: TimeSeries,
                      name: str | None = None) -> str:
    name = _check_name(name if name is not None else ts.label)
    values = _as_array(ts.values, "time series values")
    if values.ndim != 2:
        raise RankMismatch(f"values must be samples x channels, got rank {values.ndim}")
    n, c = values.shape
    start = _f64(ts.start_time, "start_time")
    duration = _f64(ts.duration, "duration")
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    if not ts.label:
        raise MissingDescription("time series label must be non-empty")

    channel_units = None
    if isinstance(ts.unit, str):
        if not ts.unit:
            raise MissingUnit("unit must be non-empty")
        unit = ts.unit
    else:
        units = list(ts.unit)
        if len(units) != c or any(not isinstance(u, str) or not u for u in units):
            raise MissingUnit(
                f"per-channel units must be {c} non-empty strings, got {units!r}")
        unit = None
        channel_units = units

    if len(ts.sources) != c:
        raise SourceCountMismatch(
            f"{len(ts.sources)} sources for {c} channels")
    _require_sources(handle, ts.sources, "time series sources")

    sampling = ts.sampling
    if isinstance(sampling, RegularSampling):
        rate = _f64(sampling.rate_hz, "rate_hz")
        if not rate > 0:
            raise NonPositiveRate(f"sampling rate must be > 0, got {rate}")
        sync_index = np.asarray(sampling.sync_index, dtype="<u8")
        sync_time = np.asarray(sampling.sync_time, dtype="<f8")
        problem = marker_problem(sync_index, sync_time, rate, start)
        if problem:
            raise NonMonotonicTimestamps(f"sync markers: {problem}")
        if len(sync_index) and int(sync_index[-1]) >= max(n, 1):
            raise IndexOutOfRange("sync marker index beyond the sample count")
        timestamps = None
    elif isinstance(sampling, IrregularSampling):
        timestamps = np.asarray(sampling.timestamps, dtype="<f8")
        if timestamps.ndim != 1 or len(timestamps) != n:
            raise LengthMismatch(
                f"{len(timestamps)} timestamps for {n} samples")
        if not is_strictly_increasing(timestamps):
            raise NonMonotonicTimestamps("timestamps must be strictly increasing")
        if n and (timestamps[0] < start or timestamps[-1] > start + duration):
            raise EventTimeOutOfWindow(
                "timestamps must lie within [start_time, start_time + duration]")
    else:
        raise TypeError("sampling must be RegularSampling or IrregularSampling")

    gid = _new_entity_group(handle, name, "time_series")
    handle.set_attribute(gid, "label", ts.label)
    handle.set_attribute(gid, "start_time", start)
    handle.set_attribute(gid, "duration", duration)
    if unit is not None:
        handle.set_attribute(gid, "unit", unit)
    if ts.provenance is not None:
        handle.set_attribute(gid, "provenance", ts.provenance)
    L.store_array(handle, gid, "values", values,
                  chunk=(max(1, min(n, 4096)), max(1, c)))
    L.store_strings(handle, gid, "sources", list(ts.sources))
    if channel_units is not None:
        L.store_strings(handle, gid, "channel_units", channel_units)
    if isinstance(sampling, RegularSampling):
        handle.set_attribute(gid, "sampling", "regular")
        handle.set_attribute(gid, "rate_hz", rate)
        L.store_array(handle, gid, "sync_index", sync_index)
        L.store_array(handle, gid, "sync_time", sync_time)
    else:
        handle.set_attribute(gid, "sampling", "irregular")
        L.store_array(handle, gid, "timestamps", timestamps)
    return L.data_path(name)


# -- signal events --------------------------------------------------------------

def _validate_property_set(handle: ContainerHandle, ps: PropertySet, n_events: int):
    """Validate one property set; returns arrays ready to store."""
    _check_name(ps.set_name)
    out = {}

    if ps.unit_ids is not None:
        if not ps.unit_ids:
            raise UnknownUnitSource("unit_ids must be non-empty when present")
        for sid in ps.unit_ids:
            if not _source_exists(handle, sid):
                raise UnknownUnitSource(f"unit source {sid!r} does not exist")
            kind = handle.get_attribute(
                handle.resolve_path(L.source_path(sid)), "kind")
            if kind not in UNIT_SOURCE_KINDS:
                raise UnknownUnitSource(
                    f"unit source {sid!r} has kind {kind!r}, expected one of "
                    f"{UNIT_SOURCE_KINDS}")
    n_units = len(ps.unit_ids) if ps.unit_ids is not None else 0

    asn = ps.assignment
    if asn is not None:
        if ps.unit_ids is None:
            raise UnknownUnitSource(
                f"property set {ps.set_name!r} has a unit assignment but no unit_ids")
        if isinstance(asn, ExclusiveUnits):
            unit_of = np.asarray(asn.unit_of, dtype="<i8")
            if unit_of.ndim != 1 or len(unit_of) != n_events:
                raise LengthMismatch(
                    f"unit_of must have one entry per event ({n_events})")
            if unit_of.size and (unit_of.min() < -1 or unit_of.max() >= n_units):
                raise UnknownUnitSource(
                    f"unit_of values must be -1 (unassigned) or < {n_units}")
            out["unit_of"] = unit_of
        elif isinstance(asn, MultiUnits):
            unit_index = np.asarray(asn.unit_index, dtype="<i8")
            offsets = np.asarray(asn.offsets, dtype="<u8")
            problem = offsets_problem(offsets, n_events, len(unit_index))
            if problem:
                raise BadOffsets(f"multi-unit offsets: {problem}")
            if unit_index.size and (unit_index.min() < 0 or unit_index.max() >= n_units):
                raise UnknownUnitSource(f"unit indices must be in [0, {n_units})")
            out["unit_index"] = unit_index
            out["unit_offsets"] = offsets
        elif isinstance(asn, ProbabilisticUnits):
            probs = np.asarray(asn.probs, dtype="<f8")
            if probs.ndim != 2 or probs.shape != (n_events, n_units):
                raise LengthMismatch(
                    f"probs must be {n_events} x {n_units}, got {probs.shape}")
            bad = bad_prob_row(probs)
            if bad:
                from ..errors import ProbRowNotNormalized
                raise ProbRowNotNormalized(
                    f"event {bad[0]}: {bad[1]}", event_index=bad[0])
            out["probs"] = probs
        else:
            raise TypeError(f"unknown unit assignment type {type(asn).__name__}")

    if ps.per_event_channels is not None:
        if ps.channel_ids is None or not ps.channel_ids:
            raise ValueError(
                f"property set {ps.set_name!r} has per-event channels but no channel_ids")
        _require_sources(handle, ps.channel_ids,
                         f"property set {ps.set_name!r} channel_ids")
        n_channels = len(ps.channel_ids)
        pec = ps.per_event_channels
        if isinstance(pec, RaggedChannels):
            idx = np.asarray(pec.channel_index, dtype="<i8")
            offsets = np.asarray(pec.offsets, dtype="<u8")
            problem = offsets_problem(offsets, n_events, len(idx))
            if problem:
                raise BadOffsets(f"per-event channel offsets: {problem}")
            out["event_channels"] = idx
            out["event_channel_offsets"] = offsets
        else:
            idx = np.asarray(pec, dtype="<i8")
            if idx.ndim != 1 or len(idx) != n_events:
                raise LengthMismatch(
                    f"per-event channels must have one entry per event ({n_events})")
            out["event_channel"] = idx
        if idx.size and (idx.min() < 0 or idx.max() >= n_channels):
            raise IndexOutOfRange(
                f"per-event channel indices must be in [0, {n_channels})")
    elif ps.channel_ids is not None:
        _require_sources(handle, ps.channel_ids,
                         f"property set {ps.set_name!r} channel_ids")

    if ps.waveforms is not None:
        wf = ps.waveforms
        payload = _as_array(wf.payload, "waveform payload")
        if payload.ndim != 2:
            raise RankMismatch("waveform payload must be total_samples x channels")
        offsets = np.asarray(wf.offsets, dtype="<u8")
        problem = offsets_problem(offsets, n_events, payload.shape[0])
        if problem:
            raise BadOffsets(f"waveform offsets: {problem}")
        if not _f64(wf.rate_hz, "waveform rate_hz") > 0:
            raise NonPositiveRate("waveform sampling rate must be > 0")
        if not wf.unit:
            raise MissingUnit("waveform unit must be non-empty")
        if int(wf.pre_trigger_samples) < 0:
            raise ValueError("pre_trigger_samples must be >= 0")
        out["wf_payload"] = payload
        out["wf_offsets"] = offsets

    if ps.features is not None:
        feats = np.asarray(ps.features, dtype="<f8")
        if feats.ndim != 2 or feats.shape[0] != n_events:
            raise LengthMismatch(
                f"features must be {n_events} x F, got {feats.shape}")
        if ps.feature_names is None or len(ps.feature_names) != feats.shape[1]:
            raise LengthMismatch(
                f"feature_names must name all {feats.shape[1]} feature columns")
        out["features"] = feats
    elif ps.feature_names is not None:
        raise LengthMismatch("feature_names given without a features matrix")

    return out


def _validate_trigger(handle: ContainerHandle, trigger) -> None:
    if isinstance(trigger, Trigger):
        if not trigger.type:
            raise ValueError("trigger type must be non-empty")
        _f64(trigger.threshold, "trigger threshold")
        return
    for sid, trg in trigger.items():
        if not _source_exists(handle, sid):
            raise DanglingReference(f"trigger table: unknown source {sid!r}")
        if not isinstance(trg, Trigger):
            raise TypeError("trigger table values must be Trigger records")
        if not trg.type:
            raise ValueError(f"trigger for {sid!r}: type must be non-empty")
        _f64(trg.threshold, "trigger threshold")


def write_signal_events(handle: ContainerHandle, ev: SignalEvents,
                        name: str | None = None) -> str:
    name = _check_name(name if name is not None else ev.label)
    if not ev.label:
        raise MissingDescription("signal events label must be non-empty")
    start = _f64(ev.start_time, "start_time")
    duration = _f64(ev.duration, "duration")
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    times = np.asarray(ev.event_times, dtype="<f8")
    if times.ndim != 1:
        raise RankMismatch("event_times must be 1-d")
    if not is_non_decreasing(times):
        raise NonMonotonicTimestamps("event times must be non-decreasing")
    if times.size and (times[0] < start or times[-1] > start + duration):
        raise EventTimeOutOfWindow(
            "event times must lie within [start_time, start_time + duration]")
    n_events = len(times)

    sp = ev.session_props
    if sp.source_channels is not None:
        if not sp.source_channels:
            raise SourceCountMismatch("source_channels must be non-empty when present")
        _require_sources(handle, sp.source_channels, "session source channels")
    templates = None
    if sp.spike_templates is not None:
        st = sp.spike_templates
        templates = np.asarray(st.values, dtype="<f8")
        if templates.ndim != 3:
            raise RankMismatch("spike templates must be K x L x C")
        if not st.unit:
            raise MissingUnit("spike template unit must be non-empty")
        if not _f64(st.rate_hz, "template rate_hz") > 0:
            raise NonPositiveRate("spike template rate must be > 0")
    if sp.trigger is not None:
        _validate_trigger(handle, sp.trigger)

    prepared = {}
    has_event_channels = False
    for key, ps in ev.property_sets.items():
        if key != ps.set_name:
            raise DuplicatePropertySetName(
                f"property set keyed {key!r} but named {ps.set_name!r}")
        prepared[key] = _validate_property_set(handle, ps, n_events)
        if ps.per_event_channels is not None:
            has_event_channels = True
    if sp.source_channels is None and not has_event_channels:
        raise SourceCountMismatch(
            "signal events need session source_channels or per-event channels")

    gid = _new_entity_group(handle, name, "signal_events")
    handle.set_attribute(gid, "label", ev.label)
    handle.set_attribute(gid, "start_time", start)
    handle.set_attribute(gid, "duration", duration)
    handle.set_attribute(gid, "detection_description", sp.detection_description)
    L.store_array(handle, gid, "event_times", times)
    if sp.source_channels is not None:
        L.store_strings(handle, gid, "source_channels", list(sp.source_channels))
    if templates is not None:
        ds = L.store_array(handle, gid, "templates", templates)
        handle.set_attribute(ds, "unit", sp.spike_templates.unit)
        handle.set_attribute(ds, "rate_hz", float(sp.spike_templates.rate_hz))
    if sp.trigger is None:
        handle.set_attribute(gid, "trigger_mode", "none")
    elif isinstance(sp.trigger, Trigger):
        handle.set_attribute(gid, "trigger_mode", "session")
        handle.set_attribute(gid, "trigger.type", sp.trigger.type)
        handle.set_attribute(gid, "trigger.threshold", float(sp.trigger.threshold))
        handle.set_attribute(gid, "trigger.unit", sp.trigger.unit)
    else:
        handle.set_attribute(gid, "trigger_mode", "per_channel")
        tgid = handle.create_group(gid, "trigger")
        sids = sorted(sp.trigger)
        L.store_strings(handle, tgid, "source", sids)
        L.store_strings(handle, tgid, "type", [sp.trigger[s].type for s in sids])
        L.store_strings(handle, tgid, "unit", [sp.trigger[s].unit for s in sids])
        L.store_array(handle, tgid, "threshold",
                      np.asarray([sp.trigger[s].threshold for s in sids], dtype="<f8"))

    if ev.property_sets:
        props_gid = handle.create_group(gid, "props")
        for key in ev.property_sets:
            ps = ev.property_sets[key]
            arrays = prepared[key]
            sgid = handle.create_group(props_gid, key)
            if ps.unit_ids is not None:
                L.store_strings(handle, sgid, "unit_ids", list(ps.unit_ids))
            if isinstance(ps.assignment, ExclusiveUnits):
                handle.set_attribute(sgid, "assignment", "exclusive")
                L.store_array(handle, sgid, "unit_of", arrays["unit_of"])
            elif isinstance(ps.assignment, MultiUnits):
                handle.set_attribute(sgid, "assignment", "multi")
                L.store_array(handle, sgid, "unit_index", arrays["unit_index"])
                L.store_array(handle, sgid, "unit_offsets", arrays["unit_offsets"])
            elif isinstance(ps.assignment, ProbabilisticUnits):
                handle.set_attribute(sgid, "assignment", "probabilistic")
                L.store_array(handle, sgid, "probs", arrays["probs"])
            else:
                handle.set_attribute(sgid, "assignment", "none")
            if ps.channel_ids is not None:
                L.store_strings(handle, sgid, "channel_ids", list(ps.channel_ids))
            if "event_channel" in arrays:
                handle.set_attribute(sgid, "channel_mode", "flat")
                L.store_array(handle, sgid, "event_channel", arrays["event_channel"])
            elif "event_channels" in arrays:
                handle.set_attribute(sgid, "channel_mode", "ragged")
                L.store_array(handle, sgid, "event_channels", arrays["event_channels"])
                L.store_array(handle, sgid, "event_channel_offsets",
                              arrays["event_channel_offsets"])
            else:
                handle.set_attribute(sgid, "channel_mode", "none")
            if ps.waveforms is not None:
                wgid = handle.create_group(sgid, "waveforms")
                handle.set_attribute(wgid, "rate_hz", float(ps.waveforms.rate_hz))
                handle.set_attribute(wgid, "unit", ps.waveforms.unit)
                handle.set_attribute(wgid, "pre_trigger_samples",
                                     int(ps.waveforms.pre_trigger_samples))
                L.store_array(handle, wgid, "payload", arrays["wf_payload"])
                L.store_array(handle, wgid, "offsets", arrays["wf_offsets"])
            if ps.features is not None:
                L.store_array(handle, sgid, "features", arrays["features"])
                L.store_strings(handle, sgid, "feature_names", list(ps.feature_names))
    return L.data_path(name)


# -- image stacks ----------------------------------------------------------------

def write_image_stack(handle: ContainerHandle, st: ImageStack,
                      name: str | None = None) -> str:
    name = _check_name(name if name is not None else st.label)
    if not st.label:
        raise MissingDescription("image stack label must be non-empty")
    pixels = _as_array(st.pixels, "pixels")
    if pixels.ndim not in (3, 4):
        raise DimSemanticsMismatch(
            f"pixels must have rank 3 or 4, got {pixels.ndim}")
    sem = list(st.dim_semantics)
    if len(sem) != pixels.ndim:
        raise DimSemanticsMismatch(
            f"{len(sem)} dimension labels for rank {pixels.ndim}")
    bad = [s for s in sem if s not in DIM_SEMANTICS]
    if bad:
        raise DimSemanticsMismatch(
            f"unknown dimension labels {bad!r}; expected {DIM_SEMANTICS}")
    time_dims = [i for i, s in enumerate(sem) if s == "time"]
    if not time_dims:
        raise NoTimeDimension("exactly one dimension must be labelled 'time'")
    if len(time_dims) > 1:
        raise DimSemanticsMismatch("more than one dimension labelled 'time'")
    frame_times = np.asarray(st.frame_times, dtype="<f8")
    if frame_times.ndim != 1 or len(frame_times) != pixels.shape[time_dims[0]]:
        raise FrameTimeCountMismatch(
            f"{len(frame_times)} frame times for time extent "
            f"{pixels.shape[time_dims[0]]}")
    if not is_strictly_increasing(frame_times):
        raise NonMonotonicFrameTimes("frame times must be strictly increasing")
    if not st.pixel_unit:
        raise MissingUnit("pixel unit must be non-empty")
    start = _f64(st.start_time, "start_time")
    duration = _f64(st.duration, "duration")
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")

    geom = st.pixel_geometry
    coords = None
    if isinstance(geom, RectangularGeometry):
        dy, dx = _f64(geom.dy, "dy"), _f64(geom.dx, "dx")
        if not (np.isfinite(dy) and np.isfinite(dx) and dy > 0 and dx > 0):
            raise DimSemanticsMismatch("pixel pitch dy/dx must be finite and > 0")
        origin = [float(v) for v in geom.origin]
        if len(origin) != 2:
            raise DimSemanticsMismatch("pixel grid origin must be a (y, x) pair")
    else:
        dims = {s: pixels.shape[i] for i, s in enumerate(sem)}
        if "y" not in dims or "x" not in dims:
            raise DimSemanticsMismatch(
                "explicit pixel geometry requires 'y' and 'x' dimensions")
        coords = np.asarray(geom.coords, dtype="<f8")
        if coords.shape != (dims["y"], dims["x"], 2):
            raise DimSemanticsMismatch(
                f"pixel coords must be {dims['y']} x {dims['x']} x 2, "
                f"got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise DimSemanticsMismatch("pixel coords must be finite")
    if st.sources is not None:
        _require_sources(handle, st.sources, "image stack sources")

    gid = _new_entity_group(handle, name, "image_stack")
    handle.set_attribute(gid, "label", st.label)
    handle.set_attribute(gid, "start_time", start)
    handle.set_attribute(gid, "duration", duration)
    handle.set_attribute(gid, "pixel_unit", st.pixel_unit)
    handle.set_attribute(gid, "dim_semantics", sem)
    L.store_array(handle, gid, "pixels", pixels,
                  chunk=(1,) + tuple(max(1, s) for s in pixels.shape[1:]))
    L.store_array(handle, gid, "frame_times", frame_times)
    if coords is None:
        handle.set_attribute(gid, "geometry", "rectangular")
        handle.set_attribute(gid, "geom.dy", dy)
        handle.set_attribute(gid, "geom.dx", dx)
        handle.set_attribute(gid, "geom.origin", origin)
    else:
        handle.set_attribute(gid, "geometry", "explicit")
        L.store_array(handle, gid, "pixel_coords", coords)
    if st.sources is not None:
        L.store_strings(handle, gid, "sources", list(st.sources))
    return L.data_path(name)


# -- experimental events -----------------------------------------------------------

def write_experimental_events(handle: ContainerHandle, ev: ExperimentalEvents,
                              name: str | None = None) -> str:
    name = _check_name(name if name is not None else ev.label)
    if not ev.label:
        raise MissingDescription("experimental events label must be non-empty")
    if not ev.description:
        raise MissingDescription("experimental events description must be non-empty")
    mon_start = _f64(ev.monitor_start, "monitor_start")
    mon_end = _f64(ev.monitor_end, "monitor_end")
    if mon_start > mon_end:
        raise EventOutsideMonitorWindow(
            f"monitor_start {mon_start} exceeds monitor_end {mon_end}")
    times = np.asarray(ev.event_times, dtype="<f8")
    if times.ndim != 1:
        raise RankMismatch("event_times must be 1-d")
    if not is_non_decreasing(times):
        raise NonMonotonicTimestamps("event times must be non-decreasing")
    if times.size and (times[0] < mon_start or times[-1] > mon_end):
        raise EventOutsideMonitorWindow(
            "event times must lie within [monitor_start, monitor_end]")
    n_events = len(times)

    prepared = {}
    for pname, prop in ev.properties.items():
        _check_name(pname)
        if isinstance(prop.values, (list, tuple)) and all(
                isinstance(v, str) for v in prop.values):
            values = list(prop.values)
            length = len(values)
        else:
            values = _as_array(prop.values, f"property {pname!r} values")
            if values.ndim != 1:
                raise RankMismatch(f"property {pname!r} values must be 1-d")
            length = len(values)
        if length != n_events:
            raise PropertyLengthMismatch(
                f"property {pname!r} has {length} values for {n_events} events")
        prepared[pname] = values

    gid = _new_entity_group(handle, name, "experimental_events")
    handle.set_attribute(gid, "label", ev.label)
    handle.set_attribute(gid, "monitor_start", mon_start)
    handle.set_attribute(gid, "monitor_end", mon_end)
    handle.set_attribute(gid, "description", ev.description)
    L.store_array(handle, gid, "event_times", times)
    if ev.properties:
        props_gid = handle.create_group(gid, "props")
        for pname, prop in ev.properties.items():
            pgid = handle.create_group(props_gid, pname)
            handle.set_attribute(pgid, "interpretation", prop.interpretation)
            if prop.unit is not None:
                handle.set_attribute(pgid, "unit", prop.unit)
            values = prepared[pname]
            if isinstance(values, list):
                L.store_strings(handle, pgid, "values", values)
            else:
                L.store_array(handle, pgid, "values", values)
    return L.data_path(name)


# -- generic arrays -------------------------------------------------------------------

def write_generic_array(handle: ContainerHandle, ga: GenericArray, name: str) -> str:
    name = _check_name(name)
    if not ga.description:
        raise MissingDescription("generic array description must be non-empty")
    if isinstance(ga.data, (list, tuple)) and all(isinstance(v, str) for v in ga.data):
        data = list(ga.data)
        shape = (len(data),)
    else:
        data = _as_array(ga.data, "generic array data")
        shape = data.shape
    dims = list(ga.dim_descriptions)
    if len(dims) != len(shape):
        raise HeadingCountMismatch(
            f"{len(dims)} dimension descriptions for rank {len(shape)}")
    headings = {}
    if ga.slice_headings:
        for dim, labels in ga.slice_headings.items():
            dim = int(dim)
            if not 0 <= dim < len(shape):
                raise HeadingCountMismatch(f"slice headings for unknown dimension {dim}")
            labels = [str(x) for x in labels]
            if len(labels) != shape[dim]:
                raise HeadingCountMismatch(
                    f"dimension {dim} has extent {shape[dim]} but "
                    f"{len(labels)} headings")
            headings[dim] = labels
    categories = None
    if ga.categories is not None:
        categories = [(str(c), float(w)) for c, w in ga.categories]
        if any(w < 0 for _, w in categories):
            raise ValueError("category counts/weights must be >= 0")
    references = [(str(p), str(d)) for p, d in ga.references]
    _require_entities(handle, [p for p, _ in references], "generic array references")

    gid = _new_entity_group(handle, name, "generic_array")
    handle.set_attribute(gid, "description", ga.description)
    handle.set_attribute(gid, "dim_descriptions", dims)
    if isinstance(data, list):
        L.store_strings(handle, gid, "data", data)
    else:
        L.store_array(handle, gid, "data", data)
    if headings:
        hgid = handle.create_group(gid, "headings")
        for dim in sorted(headings):
            L.store_strings(handle, hgid, f"dim{dim}", headings[dim])
    if categories is not None:
        cgid = handle.create_group(gid, "categories")
        L.store_strings(handle, cgid, "names", [c for c, _ in categories])
        L.store_array(handle, cgid, "weights",
                      np.asarray([w for _, w in categories], dtype="<f8"))
    if references:
        rgid = handle.create_group(gid, "refs")
        L.store_strings(handle, rgid, "paths", [p for p, _ in references])
        L.store_strings(handle, rgid, "descriptions", [d for _, d in references])
    return L.data_path(name)


# -- relationships ---------------------------------------------------------------------

def _derivation_edges(handle: ContainerHandle):
    """(inputs, outputs) path lists of every stored derivation record."""
    edges = []
    if not handle.has_path(L.DERIVED_PATH):
        return edges
    gid = handle.resolve_path(L.DERIVED_PATH)
    for _name, rid, _kind in handle.list_children(gid):
        inputs = handle.read_full(handle.resolve_path(
            handle.object_path(rid) + "/inputs"))
        outputs = handle.read_full(handle.resolve_path(
            handle.object_path(rid) + "/outputs"))
        edges.append((list(inputs), list(outputs)))
    return edges


def _has_cycle(edges) -> bool:
    graph: dict[str, set[str]] = {}
    for inputs, outputs in edges:
        for i in inputs:
            for o in outputs:
                graph.setdefault(i, set()).add(o)
                graph.setdefault(o, set())
    state: dict[str, int] = {}

    def visit(node: str) -> bool:
        if state.get(node) == 1:
            return True
        if state.get(node) == 2:
            return False
        state[node] = 1
        found = any(visit(nxt) for nxt in graph[node])
        state[node] = 2
        return found

    return any(visit(n) for n in graph if n not in state)


def add_derived_from(handle: ContainerHandle, rel: DerivedFrom) -> str:
    if not rel.inputs or not rel.outputs:
        raise ValueError("a derivation needs at least one input and one output")
    _require_entities(handle, rel.inputs, "derivation inputs")
    _require_entities(handle, rel.outputs, "derivation outputs")
    if not rel.activity:
        raise MissingDescription("derivation activity must be non-empty")
    if not rel.agents or any(not a for a in rel.agents):
        raise EmptyAgents("a derivation needs at least one non-empty agent")
    try:
        parse_timestamp(rel.timestamp, require_tz=False)
    except ValueError as exc:
        raise ValueError(f"derivation timestamp: {exc}") from None
    edges = _derivation_edges(handle)
    edges.append((list(rel.inputs), list(rel.outputs)))
    if _has_cycle(edges):
        raise DerivationCycle("derivation would create a cycle")

    gid = L.ensure_group(handle, L.DERIVED_PATH)
    rel_id = f"d{len(handle.list_children(gid)):04d}"
    rgid = handle.create_group(gid, rel_id)
    handle.set_attribute(rgid, "activity", rel.activity)
    handle.set_attribute(rgid, "timestamp", rel.timestamp)
    for key, value in rel.params.items():
        handle.set_attribute(rgid, f"param.{key}", value)
    L.store_strings(handle, rgid, "inputs", list(rel.inputs))
    L.store_strings(handle, rgid, "outputs", list(rel.outputs))
    L.store_strings(handle, rgid, "agents", list(rel.agents))
    return rel_id


def add_grouping(handle: ContainerHandle, g: Grouping) -> None:
    _check_name(g.group_id)
    if handle.has_path(L.group_path(g.group_id)):
        raise DuplicateGroupId(f"grouping {g.group_id!r} already exists")
    if not g.members:
        raise ValueError("a grouping needs at least one member")
    _require_entities(handle, g.members, f"grouping {g.group_id!r} members")
    overrides = g.per_member_overrides or {}
    for path in overrides:
        if path not in g.members:
            raise DanglingReference(
                f"override target {path!r} is not a member of {g.group_id!r}")

    gid = L.ensure_group(handle, L.GROUPS_PATH)
    ggid = handle.create_group(gid, g.group_id)
    handle.set_attribute(ggid, "label", g.label)
    L.store_strings(handle, ggid, "members", list(g.members))
    if overrides:
        ogid = handle.create_group(ggid, "overrides")
        for index, path in enumerate(g.members):
            if path in overrides:
                mgid = handle.create_group(ogid, str(index))
                for key, value in overrides[path].items():
                    handle.set_attribute(mgid, key, value)
