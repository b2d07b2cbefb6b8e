"""Typed entities stored in a container: sources, payload entities, relationships.

All times on entities are f64 seconds relative to the session start stored in
the global metadata (which carries the date and timezone offset). Arrays are
held as numpy arrays with the dtype they will have on disk, so write->read
round trips are bit-exact.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, fields, is_dataclass
from datetime import datetime

import numpy as np

from ..errors import IndexOutOfRange, NoWaveforms

SOURCE_KINDS = (
    "electrode",
    "electrode_array",
    "amplifier",
    "subject",
    "brain_region",
    "mua",
    "neuron",
    "roi",
)
UNIT_SOURCE_KINDS = ("neuron", "mua")

ENTITY_KINDS = (
    "time_series",
    "signal_events",
    "image_stack",
    "experimental_events",
    "generic_array",
)

DIM_SEMANTICS = ("time", "y", "x", "z", "plane", "channel")


def parse_timestamp(text: str, require_tz: bool = True) -> datetime:
    """Parse an ISO 8601 timestamp; raise ValueError if invalid or tz-naive."""
    parsed = datetime.fromisoformat(text)
    if require_tz and parsed.tzinfo is None:
        raise ValueError(f"timestamp lacks a timezone offset: {text!r}")
    return parsed


# -- global metadata ---------------------------------------------------------

@dataclass
class GlobalMetadata:
    identification: dict[str, str] = field(default_factory=dict)
    session_start: str = "1970-01-01T00:00:00+00:00"
    format_version: tuple[int, int] | None = None  # filled in by the reader
    file_uuid: str | None = None                   # filled in by the reader


# -- signal sources ----------------------------------------------------------

@dataclass
class RoiGeometry:
    """Region-of-interest outline in image coordinates.

    ``vertices`` is the static outline (V x 2). A moving outline adds
    ``times`` (T, strictly increasing) and ``moving_vertices`` (T x V x 2).
    """
    vertices: np.ndarray
    times: np.ndarray | None = None
    moving_vertices: np.ndarray | None = None


@dataclass
class SignalSource:
    source_id: str
    kind: str
    parent_source: str | None = None
    static_meta: dict = field(default_factory=dict)
    position: tuple[float, float, float] | None = None  # meters, device frame
    roi_geometry: RoiGeometry | None = None


@dataclass
class SourceTreeNode:
    source: SignalSource
    children: list["SourceTreeNode"] = field(default_factory=list)


# -- time series -------------------------------------------------------------

@dataclass
class RegularSampling:
    rate_hz: float
    sync_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<u8"))
    sync_time: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<f8"))


@dataclass
class IrregularSampling:
    timestamps: np.ndarray


@dataclass
class TimeSeries:
    label: str
    values: np.ndarray                     # samples x channels
    unit: str | list[str]                  # one per series, or one per channel
    start_time: float
    duration: float
    sampling: RegularSampling | IrregularSampling
    sources: list[str]                     # one source id per channel
    provenance: str | None = None          # id of a derivation record


def time_at_index(ts: TimeSeries, i: int) -> float:
    """Time of sample ``i`` in seconds relative to the session start.

    Regular series honor sync markers: the marker with the largest index
    <= i anchors the clock (a virtual marker at index 0 with the series
    start time always exists), and the remaining samples extrapolate at
    the nominal rate.
    """
    n = ts.values.shape[0]
    if not 0 <= i < n:
        raise IndexOutOfRange(f"sample index {i} outside [0, {n})")
    if isinstance(ts.sampling, IrregularSampling):
        return float(ts.sampling.timestamps[i])
    s = ts.sampling
    indices = s.sync_index
    k = bisect_right(indices, i) - 1
    if k < 0:
        anchor_index, anchor_time = 0, ts.start_time
    else:
        anchor_index, anchor_time = int(indices[k]), float(s.sync_time[k])
    return anchor_time + (i - anchor_index) / s.rate_hz


# -- signal events -----------------------------------------------------------

@dataclass
class Trigger:
    type: str
    threshold: float
    unit: str


@dataclass
class SpikeTemplates:
    values: np.ndarray      # templates x samples x channels
    unit: str
    rate_hz: float


@dataclass
class SessionProps:
    detection_description: str = ""
    source_channels: list[str] | None = None
    spike_templates: SpikeTemplates | None = None
    # One trigger for the whole session, or one per channel keyed by
    # source id. A per-channel table overrides the session trigger.
    trigger: Trigger | dict[str, Trigger] | None = None


@dataclass
class Waveforms:
    """Ragged per-event waveforms: rows ``offsets[k]:offsets[k+1]`` of
    ``payload`` belong to event ``k``; sample ``pre_trigger_samples`` falls
    exactly on the event time."""
    payload: np.ndarray     # total_samples x channels
    offsets: np.ndarray     # E+1, u64
    rate_hz: float
    unit: str
    pre_trigger_samples: int = 0


@dataclass
class ExclusiveUnits:
    unit_of: np.ndarray     # E, i64 index into the set's unit_ids; -1 = unassigned


@dataclass
class MultiUnits:
    unit_index: np.ndarray  # flat i64 indices into unit_ids
    offsets: np.ndarray     # E+1, u64


@dataclass
class ProbabilisticUnits:
    probs: np.ndarray       # E x U, rows sum to 1


@dataclass
class RaggedChannels:
    channel_index: np.ndarray  # flat i64 indices into channel_ids
    offsets: np.ndarray        # E+1, u64


@dataclass
class PropertySet:
    """One named bundle of per-event properties (e.g. one sorter's output)."""
    set_name: str
    unit_ids: list[str] | None = None       # neuron/MUA source ids, length U
    assignment: ExclusiveUnits | MultiUnits | ProbabilisticUnits | None = None
    channel_ids: list[str] | None = None    # per-set channel table
    per_event_channels: np.ndarray | RaggedChannels | None = None
    waveforms: Waveforms | None = None
    features: np.ndarray | None = None      # E x F
    feature_names: list[str] | None = None  # length F


@dataclass
class SignalEvents:
    label: str
    start_time: float
    duration: float
    event_times: np.ndarray                 # E, f64, non-decreasing
    session_props: SessionProps = field(default_factory=SessionProps)
    property_sets: dict[str, PropertySet] = field(default_factory=dict)


def property_sets_by_name(sets) -> dict[str, PropertySet]:
    """Key property sets by name, rejecting duplicates."""
    from ..errors import DuplicatePropertySetName
    out: dict[str, PropertySet] = {}
    for ps in sets:
        if ps.set_name in out:
            raise DuplicatePropertySetName(f"duplicate property set {ps.set_name!r}")
        out[ps.set_name] = ps
    return out


def get_waveform(ev: SignalEvents, set_name: str, event_index: int):
    """Waveform of one event: (samples x channels, rate_hz, unit, pre_trigger)."""
    ps = ev.property_sets.get(set_name)
    if ps is None or ps.waveforms is None:
        raise NoWaveforms(f"property set {set_name!r} has no waveforms")
    n_events = len(ev.event_times)
    if not 0 <= event_index < n_events:
        raise IndexOutOfRange(f"event index {event_index} outside [0, {n_events})")
    wf = ps.waveforms
    lo = int(wf.offsets[event_index])
    hi = int(wf.offsets[event_index + 1])
    return wf.payload[lo:hi], wf.rate_hz, wf.unit, wf.pre_trigger_samples


# -- image stacks ------------------------------------------------------------

@dataclass
class RectangularGeometry:
    dy: float               # meters per pixel along y
    dx: float               # meters per pixel along x
    origin: tuple[float, float] = (0.0, 0.0)


@dataclass
class ExplicitGeometry:
    """Per-pixel coordinates (H x W x 2) for hexagonal or irregular grids."""
    coords: np.ndarray


@dataclass
class ImageStack:
    label: str
    start_time: float
    duration: float
    pixels: np.ndarray                      # rank 3 or 4
    dim_semantics: list[str]                # one of DIM_SEMANTICS per dim
    frame_times: np.ndarray                 # T, strictly increasing
    pixel_unit: str
    pixel_geometry: RectangularGeometry | ExplicitGeometry = field(
        default_factory=lambda: RectangularGeometry(1.0, 1.0))
    sources: list[str] | None = None


# -- experimental events -----------------------------------------------------

@dataclass
class EventProperty:
    values: np.ndarray | list[str]          # length E
    interpretation: str
    unit: str | None = None


@dataclass
class ExperimentalEvents:
    label: str
    monitor_start: float                    # earliest detectable event time
    monitor_end: float                      # latest detectable event time
    description: str
    event_times: np.ndarray
    properties: dict[str, EventProperty] = field(default_factory=dict)


# -- generic arrays ----------------------------------------------------------

@dataclass
class GenericArray:
    description: str
    data: np.ndarray | list[str]
    dim_descriptions: list[str]             # one per dimension, unit included
    slice_headings: dict[int, list[str]] | None = None
    categories: list[tuple[str, float]] | None = None
    references: list[tuple[str, str]] = field(default_factory=list)


# -- relationships -----------------------------------------------------------

@dataclass
class DerivedFrom:
    outputs: list[str]
    inputs: list[str]
    activity: str
    agents: list[str]
    params: dict = field(default_factory=dict)
    timestamp: str = "1970-01-01T00:00:00+00:00"


@dataclass
class Grouping:
    group_id: str
    label: str
    members: list[str]
    per_member_overrides: dict[str, dict] | None = None


# -- shared validation predicates --------------------------------------------

def is_non_decreasing(a) -> bool:
    a = np.asarray(a)
    return bool(len(a) < 2 or np.all(np.diff(a) >= 0))


def is_strictly_increasing(a) -> bool:
    a = np.asarray(a)
    return bool(len(a) < 2 or np.all(np.diff(a) > 0))


def offsets_problem(offsets, n: int, total: int) -> str | None:
    """Why an offsets array is invalid for n events over total rows, else None."""
    offsets = np.asarray(offsets)
    if offsets.ndim != 1 or len(offsets) != n + 1:
        return f"offsets length {offsets.size} != events + 1 ({n + 1})"
    if n >= 0 and len(offsets) and int(offsets[0]) != 0:
        return f"offsets[0] is {int(offsets[0])}, expected 0"
    if not is_non_decreasing(offsets):
        return "offsets are not non-decreasing"
    if int(offsets[-1]) != total:
        return f"offsets[-1] is {int(offsets[-1])}, expected total rows {total}"
    return None


PROB_ROW_TOL = 1e-9


def bad_prob_row(probs) -> tuple[int, str] | None:
    """First offending row of a probability matrix, or None if all rows are
    in [0, 1] and sum to 1 within PROB_ROW_TOL."""
    probs = np.asarray(probs)
    if probs.size == 0:
        return None
    if np.any((probs < 0) | (probs > 1)):
        row = int(np.argwhere((probs < 0) | (probs > 1))[0][0])
        return row, "probability outside [0, 1]"
    sums = probs.sum(axis=1)
    off = np.abs(sums - 1.0) > PROB_ROW_TOL
    if np.any(off):
        row = int(np.argmax(off))
        return row, f"row sums to {sums[row]!r}"
    return None


def marker_problem(sync_index, sync_time, rate_hz: float, start_time: float) -> str | None:
    """Why a sync marker set is invalid, else None.

    Markers must be strictly increasing in index and time, not precede the
    series start, and never pull the clock behind the extrapolation from the
    previous marker (desynchronization only ever loses samples), which keeps
    the index->time mapping non-decreasing.
    """
    idx = np.asarray(sync_index)
    tim = np.asarray(sync_time)
    if idx.shape != tim.shape or idx.ndim != 1:
        return "marker index and time arrays must be 1-d and the same length"
    if len(idx) == 0:
        return None
    if not is_strictly_increasing(idx):
        return "marker indices are not strictly increasing"
    if not is_strictly_increasing(tim):
        return "marker times are not strictly increasing"
    if float(tim[0]) < start_time:
        return "first marker time precedes the series start"
    prev_i, prev_t = 0, start_time
    for i, t in zip(idx.tolist(), tim.tolist()):
        nominal = prev_t + (i - prev_i) / rate_hz
        if t < nominal - 1e-12:
            return f"marker ({i}, {t}) pulls time behind the nominal clock"
        prev_i, prev_t = i, t
    return None


# -- structural equality -----------------------------------------------------

def deep_equal(a, b) -> bool:
    """Structural equality with bit-exact array and float comparison."""
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        if not isinstance(a, np.ndarray) or not isinstance(b, np.ndarray):
            return False
        return (a.dtype == b.dtype and a.shape == b.shape
                and a.tobytes() == b.tobytes())
    if is_dataclass(a) or is_dataclass(b):
        if type(a) is not type(b):
            return False
        return all(
            deep_equal(getattr(a, f.name), getattr(b, f.name)) for f in fields(a)
        )
    if isinstance(a, float) or isinstance(b, float):
        if not isinstance(a, (int, float)) or not isinstance(b, (int, float)):
            return False
        fa, fb = float(a), float(b)
        if math.isnan(fa) or math.isnan(fb):
            return math.isnan(fa) and math.isnan(fb)
        return fa == fb and math.copysign(1, fa) == math.copysign(1, fb)
    if isinstance(a, (list, tuple)):
        if not isinstance(b, (list, tuple)) or len(a) != len(b):
            return False
        return all(deep_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        if not isinstance(b, dict) or set(a) != set(b):
            return False
        return all(deep_equal(a[k], b[k]) for k in a)
    return a == b
