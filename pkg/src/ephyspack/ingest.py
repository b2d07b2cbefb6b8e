"""Text-format import, synthetic session generation, and fault injection.

The generator produces fully-valid sessions deterministically: the same seed
yields byte-identical files (the creation timestamp is pinned and the file
uuid is drawn from the seeded generator). The mutation registry injects one
targeted fault per validation rule into such a session, driving the
validator sensitivity suite.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .container import create_container, open_container, DATASET
from .crc32c import crc32c
from .errors import ManifestError, ParseError, UnknownMutation
from .model import layout as L
from .validate import FULL, ValidationReport, validate_file


# -- deterministic random numbers ----------------------------------------------

class XorShiftStar:
    """xorshift64* generator.

    state' = state ^ (state >> 12); ^= state' << 25 (mod 2^64);
    ^= state' >> 27; output = (state' * 0x2545F4914F6CDD1D) mod 2^64.
    A zero seed is replaced by 0x9E3779B97F4A7C15.
    """

    MULTIPLIER = 0x2545F4914F6CDD1D
    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = (seed & self.MASK) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & self.MASK
        x ^= x >> 27
        self.state = x
        return (x * self.MULTIPLIER) & self.MASK

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def randint(self, n: int) -> int:
        return self.next_u64() % n

    def bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += struct.pack("<Q", self.next_u64())
        return bytes(out[:n])

    def exponential(self, rate: float) -> float:
        return -math.log(1.0 - self.uniform()) / rate

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n)
        for i in range(0, n, 2):
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < n:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
        return out


# -- synthetic sessions ----------------------------------------------------------

ASSIGNMENT_MODES = ("exclusive", "multi", "probabilistic")


@dataclass
class GenSpec:
    seed: int = 0
    n_channels: int = 4
    n_units: int = 2
    duration_s: float = 2.0
    rate_hz: float = 1000.0
    with_image_stack: bool = False
    with_irregular: bool = False
    assignment_mode: str = "exclusive"

    def validate(self) -> None:
        if self.n_channels < 0 or self.n_units < 0:
            raise ValueError("channel and unit counts must be >= 0")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be > 0")
        if self.assignment_mode not in ASSIGNMENT_MODES:
            raise ValueError(f"assignment_mode must be one of {ASSIGNMENT_MODES}")


SESSION_START = "2024-01-01T00:00:00+00:00"
PINNED_CREATED_TIME = "1970-01-01T00:00:00+00:00"


def _spike_times(rng: XorShiftStar, n_units: int, duration: float,
                 rate: float = 5.0):
    """Homogeneous Poisson spike times per unit, merged and sorted."""
    events = []
    for unit in range(n_units):
        t = rng.exponential(rate)
        while t < duration:
            events.append((t, unit))
            t += rng.exponential(rate)
    events.sort()
    times = np.array([t for t, _ in events], dtype="<f8")
    units = np.array([u for _, u in events], dtype="<i8")
    return times, units


def generate_session(spec: GenSpec, out_path) -> dict:
    """Write a deterministic synthetic session; returns a manifest of paths."""
    spec.validate()
    rng = XorShiftStar(spec.seed)
    handle = create_container(
        out_path,
        {"generator": "synthetic session", "seed": str(spec.seed)},
        file_uuid=rng.bytes(16),
        created_time=PINNED_CREATED_TIME,
    )
    manifest: dict = {
        "seed": spec.seed, "sources": [], "time_series": [],
        "signal_events": [], "image_stacks": [], "experimental_events": [],
        "generic_arrays": [], "derivations": [], "groupings": [],
    }
    try:
        _generate_into(handle, spec, rng, manifest)
        handle.finalize()
    finally:
        handle.close()
    return manifest


def _generate_into(handle, spec: GenSpec, rng: XorShiftStar, manifest: dict) -> None:
    M.write_global_metadata(handle, M.GlobalMetadata(
        {"lab": "synthetic", "seed": str(spec.seed)}, SESSION_START))

    def src(*args, **kwargs):
        path = M.add_source(handle, M.SignalSource(*args, **kwargs))
        manifest["sources"].append(path)
        return path

    src("subject0", "subject", static_meta={"species": "synthetic"})
    src("region0", "brain_region", parent_source="subject0")
    unit_ids = [f"unit{i}" for i in range(spec.n_units)]
    for uid in unit_ids:
        src(uid, "neuron", parent_source="region0")
    src("amp0", "amplifier", static_meta={"model": "synth-amp"})
    src("array0", "electrode_array", parent_source="amp0",
        static_meta={"geometry": "tetrode"})
    channels = [f"ch{i}" for i in range(spec.n_channels)]
    for i, ch in enumerate(channels):
        src(ch, "electrode", parent_source="array0",
            position=(25e-6 * i, 0.0, 0.0))

    duration = float(spec.duration_s)
    n = int(round(duration * spec.rate_hz))
    if spec.duration_s >= 2.0:
        marker_index = n // 2
        sync_index = np.array([marker_index], dtype="<u8")
        sync_time = np.array([marker_index / spec.rate_hz + 0.005], dtype="<f8")
    else:
        sync_index = np.zeros(0, dtype="<u8")
        sync_time = np.zeros(0, dtype="<f8")
    values = rng.normals(n * max(spec.n_channels, 1))[:n * spec.n_channels]
    raw = M.TimeSeries(
        label="raw", unit="uV", start_time=0.0, duration=duration,
        values=(values * 50.0).astype("<f4").reshape(n, spec.n_channels),
        sampling=M.RegularSampling(rate_hz=float(spec.rate_hz),
                                   sync_index=sync_index, sync_time=sync_time),
        sources=channels)
    raw_path = M.write_time_series(handle, raw)
    manifest["time_series"].append(raw_path)

    if spec.with_irregular:
        k = 40
        gaps = np.array([0.5 + rng.uniform() for _ in range(k)])
        stamps = np.cumsum(gaps)
        stamps = stamps / stamps[-1] * duration * 0.95
        irr = M.TimeSeries(
            label="lfp_irregular", unit=["mV"], start_time=0.0, duration=duration,
            values=rng.normals(k).astype("<f8").reshape(k, 1),
            sampling=M.IrregularSampling(timestamps=stamps.astype("<f8")),
            sources=[channels[0]] if channels else ["array0"])
        manifest["time_series"].append(M.write_time_series(handle, irr))

    times, true_units = _spike_times(rng, spec.n_units, duration)
    n_events = len(times)
    wf_lengths = [24 + rng.randint(17) for _ in range(n_events)]
    offsets = np.zeros(n_events + 1, dtype="<u8")
    offsets[1:] = np.cumsum(wf_lengths, dtype="<u8") if wf_lengths else 0
    total = int(offsets[-1])
    wf_payload = (rng.normals(total * max(spec.n_channels, 1))[:total * spec.n_channels]
                  * 30.0).astype("<f4").reshape(total, spec.n_channels)

    assignment = None
    if spec.n_units:
        if spec.assignment_mode == "exclusive":
            unit_of = true_units.copy()
            for i in range(n_events):
                if rng.randint(10) == 0:
                    unit_of[i] = -1
            assignment = M.ExclusiveUnits(unit_of=unit_of)
        elif spec.assignment_mode == "multi":
            flat = []
            moffsets = np.zeros(n_events + 1, dtype="<u8")
            for i, u in enumerate(true_units):
                flat.append(int(u))
                if spec.n_units > 1 and rng.randint(4) == 0:
                    flat.append((int(u) + 1) % spec.n_units)
                moffsets[i + 1] = len(flat)
            assignment = M.MultiUnits(
                unit_index=np.array(flat, dtype="<i8"), offsets=moffsets)
        else:
            probs = np.full((n_events, spec.n_units), 0.1)
            for i, u in enumerate(true_units):
                probs[i, u] += 1.0
            if n_events:
                probs /= probs.sum(axis=1, keepdims=True)
            assignment = M.ProbabilisticUnits(probs=probs.astype("<f8"))

    features = rng.normals(n_events * 3).astype("<f8").reshape(n_events, 3)
    sorter = M.PropertySet(
        set_name="sorter0",
        unit_ids=unit_ids if spec.n_units else None,
        assignment=assignment,
        waveforms=M.Waveforms(payload=wf_payload, offsets=offsets,
                              rate_hz=float(spec.rate_hz) * 4.0, unit="uV",
                              pre_trigger_samples=8),
        features=features,
        feature_names=["pc1", "pc2", "pc3"])
    resorted = M.PropertySet(
        set_name="resorted",
        channel_ids=channels if channels else ["array0"],
        per_event_channels=np.array(
            [rng.randint(max(len(channels), 1)) for _ in range(n_events)],
            dtype="<i8"))
    templates = M.SpikeTemplates(
        values=rng.normals(max(spec.n_units, 1) * 16 * spec.n_channels)
        .astype("<f8").reshape(max(spec.n_units, 1), 16, spec.n_channels),
        unit="uV", rate_hz=float(spec.rate_hz) * 4.0)
    spikes = M.SignalEvents(
        label="spikes", start_time=0.0, duration=duration, event_times=times,
        session_props=M.SessionProps(
            detection_description="negative threshold crossing",
            source_channels=channels if channels else ["array0"],
            spike_templates=templates,
            trigger=M.Trigger("negative peak", -4.0, "sigma")),
        property_sets=M.property_sets_by_name([sorter, resorted]))
    spikes_path = M.write_signal_events(handle, spikes)
    manifest["signal_events"].append(spikes_path)

    n_trials = max(1, int(duration))
    trial_times = np.array([(k + 0.5) * duration / n_trials
                            for k in range(n_trials)], dtype="<f8")
    trials = M.ExperimentalEvents(
        label="trials", monitor_start=0.0, monitor_end=duration,
        description="trial onsets", event_times=trial_times,
        properties={
            "condition": M.EventProperty(
                [("go" if k % 2 == 0 else "nogo") for k in range(n_trials)],
                "trial condition"),
            "reward_ul": M.EventProperty(
                np.array([float(2 + rng.randint(5)) for _ in range(n_trials)],
                         dtype="<f8"),
                "reward volume", "ul"),
        })
    trials_path = M.write_experimental_events(handle, trials)
    manifest["experimental_events"].append(trials_path)

    stack_path = None
    if spec.with_image_stack:
        hexagon = np.array(
            [[math.cos(a) + 1.5, math.sin(a) + 1.5]
             for a in np.linspace(0, 2 * math.pi, 6, endpoint=False)])
        roi_times = np.array([0.1, 0.4, 0.7]) * duration
        moving = np.stack([hexagon + 0.05 * k for k in range(3)])
        M.add_source(handle, M.SignalSource(
            "roi0", "roi",
            roi_geometry=M.RoiGeometry(vertices=hexagon.astype("<f8"),
                                       times=roi_times.astype("<f8"),
                                       moving_vertices=moving.astype("<f8"))))
        manifest["sources"].append(L.source_path("roi0"))
        frames = 5
        pix = rng.bytes(frames * 4 * 4 * 2)
        stack = M.ImageStack(
            label="stack", start_time=0.0, duration=duration,
            pixels=np.frombuffer(pix, dtype="<u2").reshape(frames, 4, 4),
            dim_semantics=["time", "y", "x"],
            frame_times=np.array([(k + 0.5) * duration / frames
                                  for k in range(frames)], dtype="<f8"),
            pixel_unit="gray",
            pixel_geometry=M.RectangularGeometry(dy=1e-5, dx=1e-5),
            sources=["roi0"])
        stack_path = M.write_image_stack(handle, stack)
        manifest["image_stacks"].append(stack_path)

    bins = 20
    counts, _edges = np.histogram(times, bins=bins, range=(0.0, duration))
    hist = M.GenericArray(
        description="histogram of spike event times",
        data=counts.astype("<f8"),
        dim_descriptions=["time bin (s)"],
        slice_headings={0: [f"bin{k:02d}" for k in range(bins)]},
        categories=[("detected", float(n_events))],
        references=[(spikes_path, "histogram of this entity's event times")])
    hist_path = M.write_generic_array(handle, hist, "spike_histogram")
    manifest["generic_arrays"].append(hist_path)

    manifest["derivations"].append(M.add_derived_from(handle, M.DerivedFrom(
        outputs=[spikes_path], inputs=[raw_path],
        activity=f"threshold crossing -4 sigma (seed {spec.seed})",
        agents=["spike detector v1"],
        params={"threshold_sigma": -4.0},
        timestamp=SESSION_START)))
    manifest["derivations"].append(M.add_derived_from(handle, M.DerivedFrom(
        outputs=[hist_path], inputs=[spikes_path],
        activity=f"event-time histogram (seed {spec.seed})",
        agents=["histogrammer v1"],
        params={"bins": bins},
        timestamp=SESSION_START)))
    if stack_path is not None:
        manifest["derivations"].append(M.add_derived_from(handle, M.DerivedFrom(
            outputs=[L.source_path("roi0")], inputs=[stack_path],
            activity=f"roi outline extraction (seed {spec.seed})",
            agents=["outline tracer v1"],
            timestamp=SESSION_START)))

    members = (manifest["time_series"] + manifest["signal_events"]
               + manifest["image_stacks"] + manifest["experimental_events"]
               + manifest["generic_arrays"])
    M.add_grouping(handle, M.Grouping(
        "session1", "synthetic session", members,
        per_member_overrides={raw_path: {"amplifier_gain": 500.0}}))
    manifest["groupings"].append("session1")


# -- import from delimited text ---------------------------------------------------

@dataclass
class ManifestEntry:
    kind: str
    file: str = ""
    mapping: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)


@dataclass
class ImportManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    identification: dict = field(default_factory=dict)
    session_start: str = "1970-01-01T00:00:00+00:00"


def load_manifest(path) -> ImportManifest:
    """Parse a line-delimited manifest: one JSON object per line."""
    manifest = ImportManifest()
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest entry is not valid JSON: {exc}",
                             str(path), lineno) from None
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ManifestError(f"{path}:{lineno}: entry needs a 'kind' key")
        if obj["kind"] == "session":
            manifest.identification = dict(obj.get("identification", {}))
            manifest.session_start = obj.get("session_start", manifest.session_start)
            continue
        manifest.entries.append(ManifestEntry(
            kind=obj["kind"], file=obj.get("file", ""),
            mapping=dict(obj.get("mapping", {})),
            params=dict(obj.get("params", {}))))
    return manifest


def _read_table(path: str):
    """Comma-separated table: '#' comments, required header row."""
    header: list[str] | None = None
    rows: list[tuple[int, list[str]]] = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read data file {path}: {exc}") from None
    reader = csv.reader(text.splitlines())
    for lineno, row in enumerate(reader, start=1):
        if not row or (row[0].lstrip().startswith("#")):
            continue
        row = [cell.strip() for cell in row]
        if header is None:
            header = row
        else:
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} columns, found {len(row)}",
                    path, lineno)
            rows.append((lineno, row))
    if header is None:
        raise ParseError("no header row found", path, 1)
    return header, rows


def _column(header, rows, name, path):
    if name not in header:
        raise ManifestError(f"column {name!r} not present in {path} "
                            f"(header: {header})")
    idx = header.index(name)
    return [(lineno, row[idx]) for lineno, row in rows], idx


def _float_column(header, rows, name, path) -> np.ndarray:
    cells, idx = _column(header, rows, name, path)
    out = np.empty(len(cells), dtype="<f8")
    for k, (lineno, text) in enumerate(cells):
        try:
            out[k] = float(text)
        except ValueError:
            raise ParseError(f"not a number: {text!r}", path, lineno,
                             idx + 1) from None
    return out


def _require_param(entry: ManifestEntry, index: int, key: str, clause: str):
    if key not in entry.params:
        raise ManifestError(
            f"entry {index} ({entry.kind}): missing required param {key!r} "
            f"({clause})")
    return entry.params[key]


def _import_time_series(handle, entry: ManifestEntry, index: int) -> str:
    label = _require_param(entry, index, "label",
                           "a time series carries a descriptive label")
    unit = _require_param(entry, index, "unit",
                          "the sample values must include units")
    header, rows = _read_table(entry.file)
    if "values" in entry.mapping:
        cols = list(entry.mapping["values"])
    elif "value" in entry.mapping:
        cols = [entry.mapping["value"]]
    else:
        raise ManifestError(
            f"entry {index} (time_series): mapping needs 'value' or 'values' "
            f"(the sample values themselves are required)")
    data = np.column_stack([_float_column(header, rows, c, entry.file)
                            for c in cols]) if rows else np.zeros((0, len(cols)))
    sources = entry.params.get("sources") or [f"ch{i}" for i in range(len(cols))]
    start = float(entry.params.get("start_time", 0.0))
    if "time" in entry.mapping:
        stamps = _float_column(header, rows, entry.mapping["time"], entry.file)
        duration = float(entry.params.get(
            "duration", (stamps[-1] - start) if len(stamps) else 0.0))
        sampling = M.IrregularSampling(timestamps=stamps)
    else:
        rate = float(_require_param(
            entry, index, "rate_hz",
            "regularly sampled data must carry its sampling rate"))
        duration = float(entry.params.get("duration", len(rows) / rate))
        sampling = M.RegularSampling(rate_hz=rate)
    ts = M.TimeSeries(label=label, values=data, unit=unit, start_time=start,
                      duration=duration, sampling=sampling,
                      sources=list(sources))
    return M.write_time_series(handle, ts, entry.params.get("name"))


def _import_experimental_events(handle, entry: ManifestEntry, index: int) -> str:
    label = _require_param(entry, index, "label",
                           "events carry a descriptive label")
    description = _require_param(entry, index, "description",
                                 "a description of the events is required")
    if "time" not in entry.mapping:
        raise ManifestError(
            f"entry {index} (experimental_events): mapping needs 'time' "
            f"(the sequence of event times is required)")
    header, rows = _read_table(entry.file)
    times = _float_column(header, rows, entry.mapping["time"], entry.file)
    order = np.argsort(times, kind="stable")
    times = times[order]
    interpretations = entry.params.get("interpretations", {})
    units = entry.params.get("units", {})
    properties = {}
    for pname, col in entry.mapping.items():
        if pname == "time":
            continue
        if pname not in interpretations:
            raise ManifestError(
                f"entry {index} (experimental_events): property {pname!r} has no "
                f"interpretation (metadata required for interpreting the values)")
        cells, _ = _column(header, rows, col, entry.file)
        try:
            values = _float_column(header, rows, col, entry.file)[order]
        except ParseError:
            values = [cells[i][1] for i in order]
        properties[pname] = M.EventProperty(
            values=values, interpretation=interpretations[pname],
            unit=units.get(pname))
    mon_start = float(entry.params.get(
        "monitor_start", times[0] if len(times) else 0.0))
    mon_end = float(entry.params.get(
        "monitor_end", times[-1] if len(times) else 0.0))
    ev = M.ExperimentalEvents(label=label, monitor_start=mon_start,
                              monitor_end=mon_end, description=description,
                              event_times=times, properties=properties)
    return M.write_experimental_events(handle, ev, entry.params.get("name"))


def _import_generic_array(handle, entry: ManifestEntry, index: int) -> str:
    name = _require_param(entry, index, "name",
                          "generic arrays are stored under a name")
    description = _require_param(
        entry, index, "description",
        "a textual description of the array contents is required")
    if "value" not in entry.mapping:
        raise ManifestError(
            f"entry {index} (generic_array): mapping needs 'value'")
    header, rows = _read_table(entry.file)
    data = _float_column(header, rows, entry.mapping["value"], entry.file)
    ga = M.GenericArray(
        description=description, data=data,
        dim_descriptions=[entry.params.get("dim_description", "row")])
    return M.write_generic_array(handle, ga, name)


_IMPORTERS = {
    "time_series": _import_time_series,
    "experimental_events": _import_experimental_events,
    "generic_array": _import_generic_array,
}


def import_manifest(manifest: ImportManifest | str | Path, out_path) -> ValidationReport:
    """Import manifest entries into a fresh container, then fully validate it."""
    if not isinstance(manifest, ImportManifest):
        manifest = load_manifest(manifest)
    for i, entry in enumerate(manifest.entries):
        if entry.kind != "source" and entry.kind not in _IMPORTERS:
            raise ManifestError(f"entry {i}: unsupported kind {entry.kind!r}")

    handle = create_container(out_path, manifest.identification)
    try:
        M.write_global_metadata(handle, M.GlobalMetadata(
            manifest.identification, manifest.session_start))
        for i, entry in enumerate(manifest.entries):
            if entry.kind == "source":
                sid = _require_param(entry, i, "source_id",
                                     "sources carry an identifier")
                M.add_source(handle, M.SignalSource(
                    source_id=sid,
                    kind=entry.params.get("source_kind", "electrode"),
                    parent_source=entry.params.get("parent"),
                    static_meta=dict(entry.params.get("static_meta", {}))))
        # Auto-create plain electrodes for referenced but undeclared sources.
        referenced: set[str] = set()
        for entry in manifest.entries:
            if entry.kind == "time_series":
                cols = entry.mapping.get("values") or [entry.mapping.get("value")]
                referenced.update(
                    entry.params.get("sources")
                    or [f"ch{i}" for i in range(len(cols))])
        for sid in sorted(referenced):
            if not handle.has_path(L.source_path(sid)):
                M.add_source(handle, M.SignalSource(sid, "electrode"))
        for i, entry in enumerate(manifest.entries):
            if entry.kind != "source":
                _IMPORTERS[entry.kind](handle, entry, i)
        handle.finalize()
    finally:
        handle.close()
    return validate_file(out_path, FULL)


# -- fault injection ----------------------------------------------------------------

@dataclass(frozen=True)
class Mutation:
    mutation_id: str
    codes: tuple[str, ...]     # finding codes the fault must trigger
    description: str
    apply: object              # callable (in_path, out_path) -> None


def mutation_base_spec() -> GenSpec:
    """The session every registered mutation targets."""
    return GenSpec(seed=20240101, n_channels=4, n_units=2, duration_s=2.0,
                   rate_hz=500.0, with_image_stack=True, with_irregular=True,
                   assignment_mode="probabilistic")


def _superblock_span(raw: bytes) -> int:
    created_len = struct.unpack_from("<H", raw, 40)[0]
    return 42 + created_len + 4


def _refix_superblock(raw: bytearray) -> None:
    span = _superblock_span(raw)
    crc = crc32c(bytes(raw[:span - 4]))
    struct.pack_into("<I", raw, span - 4, crc)


def _byte_mutation(fn):
    def apply(in_path, out_path):
        raw = bytearray(Path(in_path).read_bytes())
        raw = fn(raw)
        Path(out_path).write_bytes(bytes(raw))
    return apply


def _flip_magic(raw):
    raw[0] ^= 0xFF
    return raw


def _bump_major(raw):
    struct.pack_into("<H", raw, 8, 99)
    _refix_superblock(raw)
    return raw


def _flip_footer(raw):
    footer_offset = struct.unpack_from("<Q", raw, 32)[0]
    raw[footer_offset + 13] ^= 0x01
    return raw


def _truncate_superblock(raw):
    return raw[:20]


def _zero_uuid(raw):
    raw[16:32] = b"\x00" * 16
    _refix_superblock(raw)
    return raw


def _flip_chunk_payload(in_path, out_path):
    with open_container(in_path) as src:
        did = src.resolve_path("/data/raw/values")
        stream, coords = 0, src.chunk_keys()[0][2]
        for key in src.chunk_keys():
            if key[0] == did:
                _, stream, coords = key
                break
        _, payload_offset, _length = src.chunk_location(did, stream, coords)
    raw = bytearray(Path(in_path).read_bytes())
    raw[payload_offset] ^= 0x01
    Path(out_path).write_bytes(bytes(raw))


def _rebuild(in_path, out_path, *, skip=(), attr_del=(), attr_set=(),
             dataset_data=None, dataset_meta=None, post=None):
    """Copy a container object by object, applying targeted edits.

    skip: paths whose subtree is dropped. attr_del: (path, key) pairs.
    attr_set: (path, key, value) triples applied after the copy.
    dataset_data: path -> fn(array_or_list) same-shape content edit.
    dataset_meta: path -> (dtype, shape, chunk_shape, data) full replacement.
    post: fn(dst_handle) for arbitrary extra structure.
    """
    dataset_data = dataset_data or {}
    dataset_meta = dataset_meta or {}
    skip = set(skip)
    with open_container(in_path) as src:
        dst = create_container(out_path, {}, file_uuid=src.uuid,
                               created_time=src.created_time)
        try:
            for key, value in src.attributes(src.root).items():
                dst.set_attribute(dst.root, key, value)
            created = {"/": dst.root}
            for oid, path, kind in src.all_objects():
                parent_path = path.rsplit("/", 1)[0] or "/"
                if path in skip or parent_path not in created:
                    continue
                parent_gid = created[parent_path]
                name = path.rsplit("/", 1)[1]
                if kind == DATASET:
                    if path in dataset_meta:
                        dtype, shape, chunk, data = dataset_meta[path]
                        new_id = dst.create_dataset(parent_gid, name, dtype,
                                                    shape, chunk)
                        if int(np.prod(shape)) > 0:
                            dst.write_slab(new_id, (0,) * len(shape), data, shape)
                    else:
                        meta = src.dataset_meta(oid)
                        data = src.read_full(oid)
                        if path in dataset_data:
                            data = dataset_data[path](data)
                        new_id = dst.create_dataset(parent_gid, name, meta.dtype,
                                                    meta.shape, meta.chunk_shape)
                        if int(np.prod(meta.shape)) > 0:
                            dst.write_slab(new_id, (0,) * len(meta.shape), data,
                                           meta.shape)
                else:
                    new_id = dst.create_group(parent_gid, name)
                created[path] = new_id
                for key, value in src.attributes(oid).items():
                    if (path, key) in attr_del:
                        continue
                    dst.set_attribute(new_id, key, value)
            for path, key, value in attr_set:
                dst.set_attribute(dst.resolve_path(path), key, value)
            if post is not None:
                post(dst)
            dst.finalize()
        finally:
            dst.close()


def _rebuilder(**kwargs):
    def apply(in_path, out_path):
        _rebuild(in_path, out_path, **kwargs)
    return apply


def _drop_payloads(in_path, out_path):
    with open_container(in_path) as src:
        skip = [p for p in (f"/data/{name}" for name, _o, _k in
                            src.list_children(src.resolve_path("/data")))]
        skip += [f"/relations/derived/{r}"
                 for r, _o, _k in src.list_children(src.resolve_path("/relations/derived"))]
        skip += [f"/relations/groups/{g}"
                 for g, _o, _k in src.list_children(src.resolve_path("/relations/groups"))]
    _rebuild(in_path, out_path, skip=skip)


def _reversed_data(arr):
    return arr[::-1]


def _scale_row0(arr):
    out = arr.copy()
    out[0] *= 0.9
    return out


def _negate_prob(arr):
    out = arr.copy()
    out[0, 0] -= 0.2
    out[0, 1] += 0.2
    out[0, 0] = -abs(out[0, 0]) - 0.01
    out[0, 1] = 1.0 - out[0, np.arange(out.shape[1]) != 1].sum()
    return out


def _push_last_out(shift):
    def fn(arr):
        out = arr.copy()
        out[-1] = out[-1] + shift
        return out
    return fn


def _first_to_ghost(values):
    out = list(values)
    out[0] = "ghost"
    return out


def _break_offsets(arr):
    out = arr.copy()
    out[-1] = out[-1] + 1
    return out


def _add_roi_group(path):
    def post(dst):
        gid = dst.create_group(dst.resolve_path(path), "roi")
        vid = dst.create_dataset(gid, "vertices", "f64", (3, 2), (3, 2))
        dst.write_slab(vid, (0, 0), np.zeros((3, 2)), (3, 2))
    return post


def _add_override_entry(dst):
    ogid = dst.resolve_path("/relations/groups/session1/overrides")
    dst.create_group(ogid, "99")


_SORTER = "/data/spikes/props/sorter0"
_RESORTED = "/data/spikes/props/resorted"


def _mutations() -> dict[str, Mutation]:
    utf8 = lambda items: ("utf8", (len(items),), (1,), items)
    f64 = lambda arr: ("f64", np.shape(arr), tuple(max(1, s) for s in np.shape(arr)),
                       np.asarray(arr, dtype="<f8"))
    entries = [
        # container envelope
        ("flip_magic", ("C001",), "corrupt the file signature",
         _byte_mutation(_flip_magic)),
        ("bump_major_version", ("C002",), "claim an unsupported format version",
         _byte_mutation(_bump_major)),
        ("flip_footer_byte", ("C003",), "flip one byte inside the footer",
         _byte_mutation(_flip_footer)),
        ("truncate_superblock", ("C004",), "cut the file inside the superblock",
         _byte_mutation(_truncate_superblock)),
        ("zero_uuid", ("C005",), "zero out the file uuid",
         _byte_mutation(_zero_uuid)),
        ("flip_chunk_payload", ("C006",), "flip one byte of a chunk payload",
         _flip_chunk_payload),
        # data section / global
        ("unknown_entity_kind", ("D001",), "invalid entity_kind attribute",
         _rebuilder(attr_set=[("/data/raw", "entity_kind", "wavelet")])),
        ("drop_payloads", ("D002",), "remove every payload entity",
         _drop_payloads),
        ("drop_global", ("G001",), "remove the global metadata group",
         _rebuilder(skip=["/global"])),
        ("drop_session_start", ("G002",), "remove the session start attribute",
         _rebuilder(attr_del=[("/global", "session_start")])),
        ("naive_session_start", ("G003",), "session start without timezone",
         _rebuilder(attr_set=[("/global", "session_start", "2024-01-01T00:00:00")])),
        # sources
        ("unknown_source_kind", ("S001",), "invalid source kind",
         _rebuilder(attr_set=[("/sources/ch0", "kind", "tetrode")])),
        ("dangling_parent", ("S002",), "parent source does not exist",
         _rebuilder(attr_set=[("/sources/ch0", "parent", "ghost")])),
        ("source_cycle", ("S003",), "parent links form a cycle",
         _rebuilder(attr_set=[("/sources/array0", "parent", "ch0")])),
        ("roi_on_electrode", ("S004",), "roi geometry on an electrode",
         _rebuilder(post=_add_roi_group("/sources/ch0"))),
        ("bad_roi_vertices", ("S005",), "roi vertices with 3 columns",
         _rebuilder(dataset_meta={"/sources/roi0/roi/vertices":
                                  ("f64", (3, 3), (3, 3), np.zeros((3, 3)))})),
        ("roi_times_decreasing", ("S006",), "roi times reversed",
         _rebuilder(dataset_data={"/sources/roi0/roi/times": _reversed_data})),
        ("roi_kind_marker", ("S007",), "mark a source as roi",
         _rebuilder(attr_set=[("/sources/subject0", "kind", "roi")])),
        ("bad_position", ("S008",), "source position with 2 coordinates",
         _rebuilder(attr_set=[("/sources/ch0", "position", [1.0, 2.0])])),
        # time series
        ("values_rank1", ("T001",), "time series values flattened to 1-d",
         _rebuilder(dataset_meta={"/data/raw/values":
                                  ("f32", (8,), (8,),
                                   np.zeros(8, dtype="<f4"))})),
        ("drop_unit", ("T002",), "remove the unit attribute",
         _rebuilder(attr_del=[("/data/raw", "unit")])),
        ("bad_channel_units", ("T003",), "channel_units with the wrong length",
         _rebuilder(dataset_meta={"/data/lfp_irregular/channel_units":
                                  utf8(["mV", "mV"])})),
        ("drop_sources", ("T004",), "remove the sources dataset",
         _rebuilder(skip=["/data/raw/sources"])),
        ("dangling_ts_source", ("T005",), "time series names a missing source",
         _rebuilder(dataset_data={"/data/raw/sources": _first_to_ghost})),
        ("bad_sampling_mode", ("T006",), "invalid sampling attribute",
         _rebuilder(attr_set=[("/data/raw", "sampling", "both")])),
        ("negative_rate", ("T007",), "non-positive sampling rate",
         _rebuilder(attr_set=[("/data/raw", "rate_hz", -1.0)])),
        ("timestamps_wrong_length", ("T008",), "irregular timestamps too short",
         _rebuilder(dataset_meta={"/data/lfp_irregular/timestamps":
                                  f64(np.arange(3) * 0.1)})),
        ("timestamps_decreasing", ("T009",), "irregular timestamps reversed",
         _rebuilder(dataset_data={"/data/lfp_irregular/timestamps": _reversed_data})),
        ("timestamps_outside", ("T010",), "last timestamp beyond the window",
         _rebuilder(dataset_data={"/data/lfp_irregular/timestamps":
                                  _push_last_out(100.0)})),
        ("sync_length_mismatch", ("T011",), "marker arrays differ in length",
         _rebuilder(dataset_meta={"/data/raw/sync_index":
                                  ("u64", (2,), (2,),
                                   np.array([1, 2], dtype="<u8"))})),
        ("sync_backward", ("T012",), "marker pulls time behind the clock",
         _rebuilder(dataset_data={"/data/raw/sync_time":
                                  lambda a: a - 1.0})),
        ("duration_off", ("T013",), "duration inconsistent with sample count",
         _rebuilder(dataset_meta={
             "/data/raw/sync_index": ("u64", (0,), (1,), np.zeros(0, "<u8")),
             "/data/raw/sync_time": ("f64", (0,), (1,), np.zeros(0, "<f8"))},
             attr_set=[("/data/raw", "duration", 7.5)])),
        ("drop_ts_label", ("T014",), "remove the label attribute",
         _rebuilder(attr_del=[("/data/raw", "label")])),
        # signal events
        ("events_decreasing", ("E001",), "event times reversed",
         _rebuilder(dataset_data={"/data/spikes/event_times": _reversed_data})),
        ("event_outside_window", ("E002",), "event time beyond the recording",
         _rebuilder(dataset_data={"/data/spikes/event_times":
                                  _push_last_out(100.0)})),
        ("no_channel_info", ("E003",), "remove all channel information",
         _rebuilder(skip=["/data/spikes/source_channels", _RESORTED])),
        ("dangling_channel", ("E004",), "session channel names a missing source",
         _rebuilder(dataset_data={"/data/spikes/source_channels": _first_to_ghost})),
        ("waveform_offsets_broken", ("E005",), "waveform offsets end past payload",
         _rebuilder(dataset_data={f"{_SORTER}/waveforms/offsets": _break_offsets})),
        ("prob_row_scaled", ("E006",), "probability row scaled by 0.9",
         _rebuilder(dataset_data={f"{_SORTER}/probs": _scale_row0})),
        ("prob_negative", ("E007",), "probability entry below zero",
         _rebuilder(dataset_data={f"{_SORTER}/probs": _negate_prob})),
        ("unit_wrong_kind", ("E008",), "unit id references an electrode",
         _rebuilder(dataset_data={f"{_SORTER}/unit_ids":
                                  lambda v: ["ch0"] + list(v[1:])})),
        ("templates_no_rate", ("E009",), "spike templates lose their rate",
         _rebuilder(attr_del=[("/data/spikes/templates", "rate_hz")])),
        ("bad_trigger_mode", ("E010",), "invalid trigger_mode attribute",
         _rebuilder(attr_set=[("/data/spikes", "trigger_mode", "weird")])),
        ("feature_names_short", ("E011",), "fewer feature names than columns",
         _rebuilder(dataset_meta={f"{_SORTER}/feature_names": utf8(["pc1"])})),
        ("probs_wrong_shape", ("E012",), "probability matrix with extra column",
         _rebuilder(dataset_meta={f"{_SORTER}/probs":
                                  ("f64", (5, 3), (5, 3), np.full((5, 3), 1 / 3))})),
        ("waveform_negative_rate", ("E013",), "waveform rate made negative",
         _rebuilder(attr_set=[(f"{_SORTER}/waveforms", "rate_hz", -5.0)])),
        ("drop_detection_description", ("E014",), "detection description removed",
         _rebuilder(attr_del=[("/data/spikes", "detection_description")])),
        ("event_channel_short", ("E015",), "per-event channels wrong length",
         _rebuilder(dataset_meta={f"{_RESORTED}/event_channel":
                                  ("i64", (2,), (2,),
                                   np.zeros(2, dtype="<i8"))})),
        # image stacks
        ("dim_semantics_short", ("I001",), "two labels for a rank-3 stack",
         _rebuilder(attr_set=[("/data/stack", "dim_semantics", ["time", "y"])])),
        ("two_time_dims", ("I002",), "two dimensions labelled time",
         _rebuilder(attr_set=[("/data/stack", "dim_semantics",
                               ["time", "time", "x"])])),
        ("frame_times_short", ("I003",), "frame times shorter than the stack",
         _rebuilder(dataset_meta={"/data/stack/frame_times":
                                  f64(np.arange(2) * 0.1)})),
        ("frame_times_decreasing", ("I004",), "frame times reversed",
         _rebuilder(dataset_data={"/data/stack/frame_times": _reversed_data})),
        ("bad_geometry_mode", ("I005",), "invalid geometry attribute",
         _rebuilder(attr_set=[("/data/stack", "geometry", "polar")])),
        ("drop_pixel_unit", ("I006",), "pixel unit removed",
         _rebuilder(attr_del=[("/data/stack", "pixel_unit")])),
        ("dangling_stack_source", ("I007",), "stack names a missing source",
         _rebuilder(dataset_data={"/data/stack/sources": _first_to_ghost})),
        ("pixels_rank2", ("I008", "I001"), "pixels flattened to 2-d",
         _rebuilder(dataset_meta={"/data/stack/pixels":
                                  ("u16", (5, 16), (5, 16),
                                   np.zeros((5, 16), dtype="<u2"))})),
        ("drop_stack_label", ("I009",), "stack label removed",
         _rebuilder(attr_del=[("/data/stack", "label")])),
        # experimental events
        ("inverted_monitor", ("X001",), "monitor window inverted",
         _rebuilder(attr_set=[("/data/trials", "monitor_start", 100.0)])),
        ("trials_decreasing", ("X002",), "trial times reversed",
         _rebuilder(dataset_data={"/data/trials/event_times": _reversed_data})),
        ("trial_outside_monitor", ("X003",), "trial beyond the monitor window",
         _rebuilder(dataset_data={"/data/trials/event_times":
                                  _push_last_out(100.0)})),
        ("trial_prop_short", ("X004",), "property values wrong length",
         _rebuilder(dataset_meta={"/data/trials/props/reward_ul/values":
                                  f64(np.arange(1))})),
        ("drop_interpretation", ("X005",), "property interpretation removed",
         _rebuilder(attr_del=[("/data/trials/props/reward_ul", "interpretation")])),
        ("drop_trials_description", ("X006",), "events description removed",
         _rebuilder(attr_del=[("/data/trials", "description")])),
        # generic arrays
        ("drop_array_description", ("A001",), "array description removed",
         _rebuilder(attr_del=[("/data/spike_histogram", "description")])),
        ("dim_descriptions_short", ("A002",), "too few dimension descriptions",
         _rebuilder(attr_set=[("/data/spike_histogram", "dim_descriptions",
                               ["a", "b"])])),
        ("headings_short", ("A003",), "slice headings wrong length",
         _rebuilder(dataset_meta={"/data/spike_histogram/headings/dim0":
                                  utf8(["bin00", "bin01"])})),
        ("negative_category", ("A004",), "negative category weight",
         _rebuilder(dataset_data={"/data/spike_histogram/categories/weights":
                                  lambda a: a - 1e9})),
        ("dangling_reference", ("A005",), "reference to a missing entity",
         _rebuilder(dataset_data={"/data/spike_histogram/refs/paths":
                                  lambda v: ["/data/ghost"] + list(v[1:])})),
        ("drop_array_data", ("A006",), "data dataset removed",
         _rebuilder(skip=["/data/spike_histogram/data"])),
        # relationships
        ("derivation_dangling", ("R001",), "derivation input path missing",
         _rebuilder(dataset_meta={"/relations/derived/d0000/inputs":
                                  utf8(["/data/ghost"])})),
        ("derivation_cycle", ("R002",), "derivations form a cycle",
         _rebuilder(dataset_meta={"/relations/derived/d0001/outputs":
                                  utf8(["/data/raw"])})),
        ("empty_agents", ("R003",), "derivation with no agents",
         _rebuilder(dataset_meta={"/relations/derived/d0000/agents": utf8([])})),
        ("empty_activity", ("R004",), "derivation activity blanked",
         _rebuilder(attr_set=[("/relations/derived/d0000", "activity", "")])),
        ("empty_inputs", ("R005",), "derivation with no inputs",
         _rebuilder(dataset_meta={"/relations/derived/d0000/inputs": utf8([])})),
        ("grouping_dangling_member", ("R006",), "grouping member path missing",
         _rebuilder(dataset_data={"/relations/groups/session1/members":
                                  _first_to_ghost})),
        ("grouping_empty", ("R007", "R008"), "grouping with no members",
         _rebuilder(dataset_meta={"/relations/groups/session1/members": utf8([])})),
        ("override_out_of_range", ("R008",), "override entry index 99",
         _rebuilder(post=_add_override_entry)),
        ("bad_rel_timestamp", ("R009",), "unparseable derivation timestamp",
         _rebuilder(attr_set=[("/relations/derived/d0000", "timestamp",
                               "not-a-time")])),
        ("drop_agents_dataset", ("R010",), "agents dataset removed",
         _rebuilder(skip=["/relations/derived/d0000/agents"])),
        ("drop_members_dataset", ("R011",), "members dataset removed",
         _rebuilder(skip=["/relations/groups/session1/members"])),
    ]
    out = {}
    for mutation_id, codes, description, apply in entries:
        out[mutation_id] = Mutation(mutation_id, codes, description, apply)
    return out


MUTATIONS = _mutations()


def list_mutations() -> list[Mutation]:
    return [MUTATIONS[k] for k in sorted(MUTATIONS)]


def mutate_for_test(in_path, mutation_id: str, out_path=None):
    """Inject one registered fault into a session file; returns the output path.

    Mutations target the layout produced by ``generate_session`` with
    ``mutation_base_spec()``.
    """
    if mutation_id not in MUTATIONS:
        raise UnknownMutation(f"unknown mutation {mutation_id!r}; "
                              f"see list_mutations()")
    if out_path is None:
        out_path = str(in_path) + f".mut-{mutation_id}.ephys"
    out = Path(out_path)
    if out.exists():
        out.unlink()
    MUTATIONS[mutation_id].apply(in_path, out_path)
    return out_path
