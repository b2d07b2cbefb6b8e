"""Structural validation of container files.

``validate_file`` walks a file and reports every schema or invariant
violation it can reach as a coded finding instead of throwing: a corrupt
region must not mask findings elsewhere. Severities follow the normative
strength of the violated requirement: broken MUSTs are errors, advisory
checks are warnings, and extensions in use are informational.

Codes are stable within a major format version; ``rule_catalog`` lists
them all.
"""

from __future__ import annotations

import json
import uuid as _uuid
from dataclasses import dataclass, field

import numpy as np

from .container import DATASET, GROUP, ContainerHandle, open_container
from .errors import (
    BadMagic,
    ChunkChecksumMismatch,
    CorruptFooter,
    EphysPackError,
    IoFailure,
    NoSuchKey,
    SchemaViolation,
    TruncatedFile,
    UnsupportedVersion,
)
from .model import layout as L
from .model import readers as R

ERROR = "error"
WARNING = "warning"
INFO = "info"

FAST = "fast"
FULL = "full"


@dataclass(frozen=True)
class Rule:
    code: str
    severity: str
    level: str          # cheapest level at which the rule runs
    description: str
    requirement: str    # normative requirement the rule enforces


_RULES = [
    # container envelope
    Rule("C001", ERROR, FAST, "file magic invalid",
         "files carry the container signature"),
    Rule("C002", ERROR, FAST, "unsupported major format version",
         "files identify their format version"),
    Rule("C003", ERROR, FAST, "superblock or footer corrupt (structure/checksum)",
         "file integrity is verifiable"),
    Rule("C004", ERROR, FAST, "file truncated",
         "file integrity is verifiable"),
    Rule("C005", ERROR, FAST, "file uuid missing or not RFC 4122 v4",
         "each file carries a unique id (UUID) for referencing"),
    Rule("C006", ERROR, FULL, "chunk payload checksum mismatch",
         "stored values are retrieved accurately"),
    # data section
    Rule("D001", ERROR, FAST, "entity kind attribute missing or unknown",
         "each payload entity declares one of the defined data types"),
    Rule("D002", INFO, FAST, "file contains no payload entities",
         "a file with only metadata is conformant"),
    # global metadata
    Rule("G001", ERROR, FAST, "global metadata group missing",
         "each file carries global metadata"),
    Rule("G002", ERROR, FAST, "session start attribute missing",
         "times resolve against a session start"),
    Rule("G003", ERROR, FAST, "session start not ISO 8601 with timezone offset",
         "time = date, local time, and time zone"),
    # sources
    Rule("S001", ERROR, FAST, "source kind missing or unknown",
         "sources declare one of the defined source types"),
    Rule("S002", ERROR, FAST, "parent source unresolved",
         "sources form a hierarchy"),
    Rule("S003", ERROR, FAST, "source parent links form a cycle",
         "source hierarchy is a forest"),
    Rule("S004", ERROR, FAST, "roi geometry on a non-roi source",
         "roi geometry belongs to roi sources"),
    Rule("S005", ERROR, FAST, "roi geometry malformed",
         "roi outlines are V x 2 vertex sets, optionally per time step"),
    Rule("S006", ERROR, FULL, "roi times not strictly increasing",
         "time-varying roi outlines are ordered in time"),
    Rule("S007", INFO, FAST, "roi source kind in use (format extension)",
         "roi sources extend the base source type list"),
    Rule("S008", ERROR, FAST, "source position malformed",
         "source positions are 3-d coordinates"),
    # time series
    Rule("T001", ERROR, FAST, "values dataset missing or not samples x channels",
         "a time series stores its sample values"),
    Rule("T002", ERROR, FAST, "unit missing or empty",
         "sample values include units"),
    Rule("T003", ERROR, FAST, "per-channel units malformed",
         "sample values include units"),
    Rule("T004", ERROR, FAST, "sources dataset missing or wrong length",
         "a time series names its signal sources"),
    Rule("T005", ERROR, FULL, "time series source unresolved",
         "a time series names its signal sources"),
    Rule("T006", ERROR, FAST, "sampling mode invalid",
         "sampling is regular (rate) or irregular (timestamps)"),
    Rule("T007", ERROR, FAST, "sampling rate missing or not positive",
         "regular sampling stores the sampling rate"),
    Rule("T008", ERROR, FAST, "irregular timestamps missing or wrong length",
         "irregular sampling stores the time of every sample"),
    Rule("T009", ERROR, FULL, "irregular timestamps not strictly increasing",
         "sample times are ordered"),
    Rule("T010", ERROR, FULL, "irregular timestamps outside the series window",
         "start time and duration bound the series"),
    Rule("T011", ERROR, FAST, "sync marker arrays malformed",
         "resynchronization reference points are well-formed"),
    Rule("T012", ERROR, FULL, "sync markers invalid (order, start, or backward jump)",
         "reference time points keep index-derived times correct"),
    Rule("T013", WARNING, FAST, "duration inconsistent with sample count at the rate",
         "start time, duration, and rate are stored redundantly"),
    Rule("T014", ERROR, FAST, "label/start_time/duration missing or invalid",
         "a time series stores label, starting time, and duration"),
    # signal events
    Rule("E001", ERROR, FAST, "event times missing, not 1-d, or decreasing",
         "signal events store the time of each event"),
    Rule("E002", ERROR, FULL, "event time outside the recording window",
         "event times fall within the recording"),
    Rule("E003", ERROR, FAST, "no channel information (session or per-event)",
         "signal events store their source channels"),
    Rule("E004", ERROR, FULL, "referenced channel source unresolved",
         "signal events store their source channels"),
    Rule("E005", ERROR, FULL, "ragged offsets invalid",
         "variable-length per-event data is indexed by offsets"),
    Rule("E006", ERROR, FULL, "probability row not normalized",
         "probabilistic unit assignment rows sum to one"),
    Rule("E007", ERROR, FULL, "probability outside [0, 1]",
         "probabilistic unit assignments are probabilities"),
    Rule("E008", ERROR, FULL, "unit table invalid (missing/unresolved/wrong kind)",
         "unit assignments reference neuron or multi-unit sources"),
    Rule("E009", ERROR, FAST, "spike templates malformed",
         "spike templates carry unit and sampling rate"),
    Rule("E010", ERROR, FAST, "trigger information malformed",
         "trigger type and threshold are stored, per channel if they vary"),
    Rule("E011", ERROR, FAST, "feature matrix or headings malformed",
         "feature vectors used for sorting are stored with headings"),
    Rule("E012", ERROR, FAST, "unit assignment data malformed",
         "one of the three unit assignment modes is stored"),
    Rule("E013", ERROR, FAST, "waveform metadata malformed",
         "waveforms carry sampling rate, unit, and trigger alignment"),
    Rule("E014", ERROR, FAST, "label/start/duration/detection description missing",
         "signal events store recording start, duration, and detection info"),
    Rule("E015", ERROR, FAST, "per-event channel data malformed",
         "per-event source channels are stored when they vary"),
    # image stacks
    Rule("I001", ERROR, FAST, "dimension semantics missing or invalid",
         "the meaning of stack dimensions is specified"),
    Rule("I002", ERROR, FAST, "time dimension count is not exactly one",
         "one stack dimension is time"),
    Rule("I003", ERROR, FAST, "frame time count mismatches the time extent",
         "the time each image is recorded is stored"),
    Rule("I004", ERROR, FULL, "frame times not strictly increasing",
         "image times are ordered"),
    Rule("I005", ERROR, FAST, "pixel geometry malformed",
         "pixel positions support rectangular and irregular grids"),
    Rule("I006", ERROR, FAST, "pixel unit missing or empty",
         "units of measure of each image pixel are stored"),
    Rule("I007", ERROR, FULL, "image stack source unresolved",
         "image stacks may name their sources"),
    Rule("I008", ERROR, FAST, "pixels dataset missing or wrong rank",
         "the collection of images is stored"),
    Rule("I009", ERROR, FAST, "label/start_time/duration missing or invalid",
         "image stacks store label, starting time, and duration"),
    # experimental events
    Rule("X001", ERROR, FAST, "monitor window inverted",
         "event monitoring start and end times are stored"),
    Rule("X002", ERROR, FAST, "event times missing, not 1-d, or decreasing",
         "experimental events store the sequence of event times"),
    Rule("X003", ERROR, FULL, "event time outside the monitor window",
         "event times fall within the monitoring window"),
    Rule("X004", ERROR, FAST, "property values length mismatches event count",
         "each event carries its property values"),
    Rule("X005", ERROR, FAST, "event property malformed",
         "property values carry interpretation metadata"),
    Rule("X006", ERROR, FAST, "label/description/monitor attrs missing",
         "experimental events store description and monitoring window"),
    # generic arrays
    Rule("A001", ERROR, FAST, "description missing or empty",
         "generic arrays carry a textual description"),
    Rule("A002", ERROR, FAST, "dimension descriptions mismatch the rank",
         "each array dimension is described"),
    Rule("A003", ERROR, FAST, "slice headings malformed",
         "slice headings match their dimension extents"),
    Rule("A004", ERROR, FAST, "categories malformed or negative",
         "categories carry a count or relative quantity"),
    Rule("A005", ERROR, FULL, "referenced entity unresolved",
         "generic arrays reference related entities"),
    Rule("A006", ERROR, FAST, "data dataset missing",
         "generic arrays store an array of any dimensionality"),
    # relationships
    Rule("R001", ERROR, FULL, "derivation input/output unresolved",
         "derived data links to the data it was derived from"),
    Rule("R002", ERROR, FULL, "derivation graph has a cycle",
         "derivation relationships form a directed acyclic graph"),
    Rule("R003", ERROR, FAST, "derivation agents empty",
         "derivations store the agents that performed them"),
    Rule("R004", ERROR, FAST, "derivation activity empty",
         "derivations store the activity that produced them"),
    Rule("R005", ERROR, FAST, "derivation inputs or outputs empty",
         "derivations link at least one input to one output"),
    Rule("R006", ERROR, FULL, "grouping member unresolved",
         "logical groupings list stored entities"),
    Rule("R007", ERROR, FAST, "grouping has no members",
         "logical groupings are non-empty"),
    Rule("R008", ERROR, FAST, "grouping override entry invalid",
         "per-member overrides target group members"),
    Rule("R009", ERROR, FAST, "relationship timestamp invalid",
         "derivations record when they happened"),
    Rule("R010", ERROR, FAST, "derivation record malformed",
         "derivations store inputs, outputs, agents, and activity"),
    Rule("R011", ERROR, FAST, "grouping record malformed",
         "groupings store a label and a member list"),
]

_RULES_BY_CODE = {r.code: r for r in _RULES}


def rule_catalog() -> tuple[Rule, ...]:
    """The complete, stable rule listing."""
    return tuple(_RULES)


@dataclass
class Finding:
    severity: str
    code: str
    path: str
    message: str
    detail: dict | None = None

    def to_text(self) -> str:
        return f"{self.severity.upper()} {self.code} {self.path} — {self.message}"

    def to_json(self) -> str:
        obj = {"severity": self.severity, "code": self.code, "path": self.path,
               "message": self.message, "detail": self.detail or {}}
        return json.dumps(obj, sort_keys=True)


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    checked_rules: int = 0

    @property
    def n_errors(self) -> int:
        return self.counts.get(ERROR, 0)

    @property
    def n_warnings(self) -> int:
        return self.counts.get(WARNING, 0)

    def codes(self) -> set[str]:
        return {f.code for f in self.findings}

    def to_text(self) -> str:
        lines = [f.to_text() for f in self.findings]
        lines.append(
            f"{self.counts.get(ERROR, 0)} errors, {self.counts.get(WARNING, 0)} warnings, "
            f"{self.counts.get(INFO, 0)} info ({self.checked_rules} rules checked)")
        return "\n".join(lines)

    def to_jsonl(self) -> str:
        return "\n".join(f.to_json() for f in self.findings)


class _Ctx:
    def __init__(self, level: str):
        self.level = level
        self.findings: dict[tuple, Finding] = {}

    def fail(self, code: str, path: str, message: str, detail: dict | None = None):
        rule = _RULES_BY_CODE[code]
        key = (path, code, message)
        if key not in self.findings:
            self.findings[key] = Finding(rule.severity, code, path, message, detail)

    def check(self, code: str, ok: bool, path: str, message: str,
              detail: dict | None = None) -> bool:
        if not ok:
            self.fail(code, path, message, detail)
        return ok

    def report(self) -> ValidationReport:
        findings = sorted(self.findings.values(),
                          key=lambda f: (f.path, f.code, f.message))
        counts = {ERROR: 0, WARNING: 0, INFO: 0}
        for f in findings:
            counts[f.severity] += 1
        checked = sum(1 for r in _RULES if self.level == FULL or r.level == FAST)
        return ValidationReport(findings=findings, counts=counts,
                                checked_rules=checked)


def _attr(handle, oid, key, default=None):
    try:
        return handle.get_attribute(oid, key)
    except NoSuchKey:
        return default


def _dataset(handle, gid, name):
    cid = handle.child_id(gid, name)
    if cid is None or handle.object_kind(cid) != DATASET:
        return None
    return cid


def _shape(handle, did):
    return handle.dataset_meta(did).shape


# -- fast (structural) checks -------------------------------------------------

def _check_global(ctx: _Ctx, handle: ContainerHandle) -> None:
    path = L.GLOBAL_PATH
    if not ctx.check("G001", handle.has_path(path), path,
                     "global metadata group missing"):
        return
    gid = handle.resolve_path(path)
    start = _attr(handle, gid, "session_start")
    if not ctx.check("G002", start is not None, path,
                     "session_start attribute missing"):
        return
    try:
        R.parse_timestamp(start)
        ctx.check("G003", True, path, "")
    except (ValueError, TypeError) as exc:
        ctx.fail("G003", path, f"session_start: {exc}")


def _check_sources_fast(ctx: _Ctx, handle: ContainerHandle) -> None:
    ids = R.source_ids(handle)
    parents = {}
    for sid in ids:
        path = L.source_path(sid)
        gid = handle.resolve_path(path)
        kind = _attr(handle, gid, "kind")
        ctx.check("S001", kind in R.SOURCE_KINDS, path,
                  f"source kind {kind!r} missing or unknown")
        if kind == "roi":
            ctx.fail("S007", path, "roi source kind is a format extension")
        parent = _attr(handle, gid, "parent")
        if parent is not None:
            parents[sid] = parent
            ctx.check("S002", parent in ids, path,
                      f"parent source {parent!r} does not exist")
        pos = _attr(handle, gid, "position")
        if pos is not None:
            ctx.check("S008", isinstance(pos, list) and len(pos) == 3
                      and all(isinstance(v, float) for v in pos),
                      path, f"position must be three numbers, got {pos!r}")
        roi_gid = handle.child_id(gid, "roi")
        if roi_gid is not None:
            ctx.check("S004", kind == "roi", path,
                      f"roi geometry on source of kind {kind!r}")
            vid = _dataset(handle, roi_gid, "vertices")
            if not ctx.check("S005", vid is not None, path,
                             "roi vertices dataset missing"):
                continue
            vshape = _shape(handle, vid)
            ctx.check("S005", len(vshape) == 2 and vshape[1] == 2, path,
                      f"roi vertices must be V x 2, got {vshape}")
            tid = _dataset(handle, roi_gid, "times")
            mid = _dataset(handle, roi_gid, "moving_vertices")
            if (tid is None) != (mid is None):
                ctx.fail("S005", path, "roi times and moving vertices must come together")
            elif tid is not None:
                tshape, mshape = _shape(handle, tid), _shape(handle, mid)
                ctx.check("S005",
                          len(tshape) == 1 and len(mshape) == 3
                          and mshape[0] == tshape[0] and mshape[1:] == vshape,
                          path, "moving roi vertices must be T x V x 2 with T times")
    # cycle detection over parent links
    for sid in ids:
        seen = set()
        cur = sid
        while cur in parents:
            if cur in seen:
                ctx.fail("S003", L.source_path(sid), "source parent links form a cycle")
                break
            seen.add(cur)
            cur = parents[cur]


def _check_core_attrs(ctx, handle, gid, path, code, keys=("label", "start_time", "duration")):
    ok = True
    for key in keys:
        value = _attr(handle, gid, key)
        if value is None:
            ctx.fail(code, path, f"missing attribute {key!r}")
            ok = False
        elif key in ("start_time", "duration", "monitor_start", "monitor_end"):
            if not isinstance(value, float):
                ctx.fail(code, path, f"attribute {key!r} must be a number")
                ok = False
            elif key == "duration" and value < 0:
                ctx.fail(code, path, "duration must be >= 0")
                ok = False
        elif key in ("label", "description") and (not isinstance(value, str) or not value):
            ctx.fail(code, path, f"attribute {key!r} must be a non-empty string")
            ok = False
    return ok


def _check_time_series_fast(ctx, handle, gid, path):
    _check_core_attrs(ctx, handle, gid, path, "T014")
    vid = _dataset(handle, gid, "values")
    if not ctx.check("T001", vid is not None, path, "values dataset missing"):
        return
    vshape = _shape(handle, vid)
    if not ctx.check("T001", len(vshape) == 2, path,
                     f"values must be samples x channels, got rank {len(vshape)}"):
        return
    n, c = vshape
    unit = _attr(handle, gid, "unit")
    cu = _dataset(handle, gid, "channel_units")
    if unit is not None:
        ctx.check("T002", isinstance(unit, str) and bool(unit), path,
                  "unit attribute must be a non-empty string")
    elif cu is not None:
        ctx.check("T003", _shape(handle, cu) == (c,), path,
                  f"channel_units must have {c} entries")
    else:
        ctx.fail("T002", path, "no unit attribute or channel_units dataset")
    sid = _dataset(handle, gid, "sources")
    if ctx.check("T004", sid is not None, path, "sources dataset missing"):
        ctx.check("T004", _shape(handle, sid) == (c,), path,
                  f"sources must have {c} entries, got {_shape(handle, sid)}")
    mode = _attr(handle, gid, "sampling")
    if not ctx.check("T006", mode in ("regular", "irregular"), path,
                     f"invalid sampling mode {mode!r}"):
        return
    if mode == "regular":
        rate = _attr(handle, gid, "rate_hz")
        rate_ok = ctx.check("T007", isinstance(rate, float) and rate > 0, path,
                            f"rate_hz missing or not positive: {rate!r}")
        iid = _dataset(handle, gid, "sync_index")
        tid = _dataset(handle, gid, "sync_time")
        if ctx.check("T011", iid is not None and tid is not None, path,
                     "sync marker datasets missing"):
            ilen, tlen = _shape(handle, iid)[0], _shape(handle, tid)[0]
            ctx.check("T011", ilen == tlen, path,
                      f"sync marker arrays differ in length ({ilen} vs {tlen})")
            duration = _attr(handle, gid, "duration")
            if (rate_ok and ilen == 0 and isinstance(duration, float)
                    and abs(duration - n / rate) > 1 / rate):
                ctx.fail("T013", path,
                         f"duration {duration} vs {n} samples at {rate} Hz "
                         f"(no sync markers)")
    else:
        tid = _dataset(handle, gid, "timestamps")
        if ctx.check("T008", tid is not None, path, "timestamps dataset missing"):
            ctx.check("T008", _shape(handle, tid) == (n,), path,
                      f"timestamps must have {n} entries")


def _check_signal_events_fast(ctx, handle, gid, path):
    _check_core_attrs(ctx, handle, gid, path, "E014")
    ctx.check("E014", _attr(handle, gid, "detection_description") is not None,
              path, "missing attribute 'detection_description'")
    tid = _dataset(handle, gid, "event_times")
    if not ctx.check("E001", tid is not None and len(_shape(handle, tid)) == 1,
                     path, "event_times dataset missing or not 1-d"):
        return
    n_events = _shape(handle, tid)[0]

    mode = _attr(handle, gid, "trigger_mode")
    if mode == "session":
        ok = (isinstance(_attr(handle, gid, "trigger.type"), str)
              and isinstance(_attr(handle, gid, "trigger.threshold"), float)
              and isinstance(_attr(handle, gid, "trigger.unit"), str))
        ctx.check("E010", ok, path, "session trigger attributes malformed")
    elif mode == "per_channel":
        tgid = handle.child_id(gid, "trigger")
        if ctx.check("E010", tgid is not None and handle.object_kind(tgid) == GROUP,
                     path, "per-channel trigger group missing"):
            cols = [_dataset(handle, tgid, x)
                    for x in ("source", "type", "unit", "threshold")]
            if ctx.check("E010", all(c is not None for c in cols), path,
                         "trigger table datasets missing"):
                lens = {_shape(handle, c)[0] for c in cols}
                ctx.check("E010", len(lens) == 1, path,
                          "trigger table columns differ in length")
    else:
        ctx.check("E010", mode == "none", path, f"invalid trigger_mode {mode!r}")

    tpl = _dataset(handle, gid, "templates")
    if tpl is not None:
        rate = _attr(handle, tpl, "rate_hz")
        ok = (len(_shape(handle, tpl)) == 3
              and isinstance(_attr(handle, tpl, "unit"), str)
              and isinstance(rate, float) and rate > 0)
        ctx.check("E009", ok, path, "spike templates malformed")

    has_channels = _dataset(handle, gid, "source_channels") is not None
    pgid = handle.child_id(gid, "props")
    if pgid is not None:
        for set_name, sgid, kind in handle.list_children(pgid):
            if kind != GROUP:
                continue
            uid = _dataset(handle, sgid, "unit_ids")
            n_units = _shape(handle, uid)[0] if uid is not None else 0
            amode = _attr(handle, sgid, "assignment")
            if not ctx.check("E012", amode in ("none", "exclusive", "multi",
                                               "probabilistic"),
                             path, f"set {set_name!r}: invalid assignment {amode!r}"):
                continue
            if amode != "none":
                ctx.check("E008", uid is not None, path,
                          f"set {set_name!r}: unit assignment without unit_ids")
            if amode == "exclusive":
                did = _dataset(handle, sgid, "unit_of")
                ctx.check("E012", did is not None and _shape(handle, did) == (n_events,),
                          path, f"set {set_name!r}: unit_of malformed")
            elif amode == "multi":
                did = _dataset(handle, sgid, "unit_index")
                oid = _dataset(handle, sgid, "unit_offsets")
                ctx.check("E012",
                          did is not None and oid is not None
                          and _shape(handle, oid) == (n_events + 1,),
                          path, f"set {set_name!r}: multi-unit data malformed")
            elif amode == "probabilistic":
                did = _dataset(handle, sgid, "probs")
                ctx.check("E012",
                          did is not None and uid is not None
                          and _shape(handle, did) == (n_events, n_units),
                          path, f"set {set_name!r}: probs must be E x U")

            cmode = _attr(handle, sgid, "channel_mode", "none")
            cid = _dataset(handle, sgid, "channel_ids")
            if cmode == "flat":
                did = _dataset(handle, sgid, "event_channel")
                ctx.check("E015",
                          cid is not None and did is not None
                          and _shape(handle, did) == (n_events,),
                          path, f"set {set_name!r}: flat per-event channels malformed")
                has_channels = True
            elif cmode == "ragged":
                did = _dataset(handle, sgid, "event_channels")
                oid = _dataset(handle, sgid, "event_channel_offsets")
                ctx.check("E015",
                          cid is not None and did is not None and oid is not None
                          and _shape(handle, oid) == (n_events + 1,),
                          path, f"set {set_name!r}: ragged per-event channels malformed")
                has_channels = True
            else:
                ctx.check("E015", cmode == "none", path,
                          f"set {set_name!r}: invalid channel_mode {cmode!r}")

            wgid = handle.child_id(sgid, "waveforms")
            if wgid is not None:
                rate = _attr(handle, wgid, "rate_hz")
                pre = _attr(handle, wgid, "pre_trigger_samples")
                pid = _dataset(handle, wgid, "payload")
                oid = _dataset(handle, wgid, "offsets")
                ok = (isinstance(rate, float) and rate > 0
                      and isinstance(_attr(handle, wgid, "unit"), str)
                      and _attr(handle, wgid, "unit")
                      and isinstance(pre, int) and int(pre) >= 0
                      and pid is not None and len(_shape(handle, pid)) == 2
                      and oid is not None)
                ctx.check("E013", ok, path, f"set {set_name!r}: waveforms malformed")
                if oid is not None:
                    ctx.check("E005", _shape(handle, oid) == (n_events + 1,), path,
                              f"set {set_name!r}: waveform offsets length")
            fid = _dataset(handle, sgid, "features")
            if fid is not None:
                nid = _dataset(handle, sgid, "feature_names")
                fshape = _shape(handle, fid)
                ok = (len(fshape) == 2 and fshape[0] == n_events
                      and nid is not None and _shape(handle, nid) == (fshape[1],))
                ctx.check("E011", ok, path, f"set {set_name!r}: features malformed")
    ctx.check("E003", has_channels, path,
              "no session source_channels and no per-event channels")


def _check_image_stack_fast(ctx, handle, gid, path):
    _check_core_attrs(ctx, handle, gid, path, "I009")
    pid = _dataset(handle, gid, "pixels")
    if not ctx.check("I008", pid is not None, path, "pixels dataset missing"):
        return
    pshape = _shape(handle, pid)
    ctx.check("I008", len(pshape) in (3, 4), path,
              f"pixels rank {len(pshape)}, need 3 or 4")
    sem = _attr(handle, gid, "dim_semantics")
    sem_ok = (isinstance(sem, list) and len(sem) == len(pshape)
              and all(s in R.DIM_SEMANTICS for s in sem))
    ctx.check("I001", sem_ok, path, f"invalid dim_semantics {sem!r}")
    unit = _attr(handle, gid, "pixel_unit")
    ctx.check("I006", isinstance(unit, str) and bool(unit), path,
              "pixel_unit missing or empty")
    time_dims = []
    if sem_ok:
        time_dims = [i for i, s in enumerate(sem) if s == "time"]
        ctx.check("I002", len(time_dims) == 1, path,
                  f"{len(time_dims)} time dimensions, need exactly 1")
    ftid = _dataset(handle, gid, "frame_times")
    if ctx.check("I003", ftid is not None, path, "frame_times dataset missing"):
        if sem_ok and len(time_dims) == 1:
            want = pshape[time_dims[0]]
            ctx.check("I003", _shape(handle, ftid) == (want,), path,
                      f"frame_times must have {want} entries")
    geometry = _attr(handle, gid, "geometry")
    if geometry == "rectangular":
        dy, dx = _attr(handle, gid, "geom.dy"), _attr(handle, gid, "geom.dx")
        origin = _attr(handle, gid, "geom.origin")
        ok = (isinstance(dy, float) and isinstance(dx, float)
              and np.isfinite(dy) and np.isfinite(dx) and dy > 0 and dx > 0
              and isinstance(origin, list) and len(origin) == 2)
        ctx.check("I005", ok, path, "rectangular pixel geometry malformed")
    elif geometry == "explicit":
        cid = _dataset(handle, gid, "pixel_coords")
        if ctx.check("I005", cid is not None, path, "pixel_coords dataset missing"):
            if sem_ok:
                dims = {s: pshape[i] for i, s in enumerate(sem)}
                ok = ("y" in dims and "x" in dims
                      and _shape(handle, cid) == (dims["y"], dims["x"], 2))
                ctx.check("I005", ok, path, "explicit pixel coords malformed")
    else:
        ctx.fail("I005", path, f"invalid geometry mode {geometry!r}")


def _check_experimental_events_fast(ctx, handle, gid, path):
    _check_core_attrs(ctx, handle, gid, path, "X006",
                      keys=("label", "description", "monitor_start", "monitor_end"))
    mon_start = _attr(handle, gid, "monitor_start")
    mon_end = _attr(handle, gid, "monitor_end")
    if isinstance(mon_start, float) and isinstance(mon_end, float):
        ctx.check("X001", mon_start <= mon_end, path,
                  f"monitor_start {mon_start} exceeds monitor_end {mon_end}")
    tid = _dataset(handle, gid, "event_times")
    if not ctx.check("X002", tid is not None and len(_shape(handle, tid)) == 1,
                     path, "event_times dataset missing or not 1-d"):
        return
    n_events = _shape(handle, tid)[0]
    pgid = handle.child_id(gid, "props")
    if pgid is not None:
        for pname, pid, kind in handle.list_children(pgid):
            if kind != GROUP:
                continue
            vid = _dataset(handle, pid, "values")
            if not ctx.check("X005", vid is not None, path,
                             f"property {pname!r} has no values dataset"):
                continue
            ctx.check("X005", isinstance(_attr(handle, pid, "interpretation"), str),
                      path, f"property {pname!r} lacks an interpretation")
            ctx.check("X004", _shape(handle, vid) == (n_events,), path,
                      f"property {pname!r} length mismatches {n_events} events")


def _check_generic_array_fast(ctx, handle, gid, path):
    desc = _attr(handle, gid, "description")
    ctx.check("A001", isinstance(desc, str) and bool(desc), path,
              "description missing or empty")
    did = _dataset(handle, gid, "data")
    if not ctx.check("A006", did is not None, path, "data dataset missing"):
        return
    shape = _shape(handle, did)
    dims = _attr(handle, gid, "dim_descriptions")
    ctx.check("A002", isinstance(dims, list) and len(dims) == len(shape), path,
              f"dim_descriptions must have {len(shape)} entries")
    hgid = handle.child_id(gid, "headings")
    if hgid is not None:
        for name, hid, kind in handle.list_children(hgid):
            ok = kind == DATASET and name.startswith("dim") and name[3:].isdigit()
            if not ctx.check("A003", ok, path, f"unexpected heading entry {name!r}"):
                continue
            dim = int(name[3:])
            if ctx.check("A003", dim < len(shape), path,
                         f"headings for unknown dim {dim}"):
                ctx.check("A003", _shape(handle, hid) == (shape[dim],), path,
                          f"dim {dim} extent {shape[dim]} vs "
                          f"{_shape(handle, hid)[0]} headings")
    cgid = handle.child_id(gid, "categories")
    if cgid is not None:
        nid = _dataset(handle, cgid, "names")
        wid = _dataset(handle, cgid, "weights")
        if ctx.check("A004", nid is not None and wid is not None, path,
                     "categories need names and weights"):
            ctx.check("A004", _shape(handle, nid) == _shape(handle, wid), path,
                      "category names and weights differ in length")
    rgid = handle.child_id(gid, "refs")
    if rgid is not None:
        pid = _dataset(handle, rgid, "paths")
        did2 = _dataset(handle, rgid, "descriptions")
        if ctx.check("A005", pid is not None and did2 is not None, path,
                     "refs need paths and descriptions"):
            ctx.check("A005", _shape(handle, pid) == _shape(handle, did2), path,
                      "refs columns differ in length")


def _check_relations_fast(ctx, handle):
    for rel_id in R.derivation_ids(handle):
        path = L.derived_path(rel_id)
        gid = handle.resolve_path(path)
        activity = _attr(handle, gid, "activity")
        if ctx.check("R010", activity is not None, path, "activity attribute missing"):
            ctx.check("R004", isinstance(activity, str) and bool(activity), path,
                      "derivation activity is empty")
        timestamp = _attr(handle, gid, "timestamp")
        if ctx.check("R010", timestamp is not None, path, "timestamp attribute missing"):
            try:
                R.parse_timestamp(timestamp, require_tz=False)
            except (ValueError, TypeError) as exc:
                ctx.fail("R009", path, f"timestamp: {exc}")
        cols = {name: _dataset(handle, gid, name)
                for name in ("inputs", "outputs", "agents")}
        missing = [k for k, v in cols.items() if v is None]
        if not ctx.check("R010", not missing, path,
                         f"derivation datasets missing: {missing}"):
            continue
        ctx.check("R005",
                  _shape(handle, cols["inputs"])[0] > 0
                  and _shape(handle, cols["outputs"])[0] > 0,
                  path, "derivation needs at least one input and one output")
        ctx.check("R003", _shape(handle, cols["agents"])[0] > 0, path,
                  "derivation agents empty")
    for group_id in R.grouping_ids(handle):
        path = L.group_path(group_id)
        gid = handle.resolve_path(path)
        ctx.check("R011", isinstance(_attr(handle, gid, "label"), str), path,
                  "grouping label missing")
        mid = _dataset(handle, gid, "members")
        if not ctx.check("R011", mid is not None, path, "members dataset missing"):
            continue
        n = _shape(handle, mid)[0]
        ctx.check("R007", n > 0, path, "grouping has no members")
        ogid = handle.child_id(gid, "overrides")
        if ogid is not None:
            for name, _oid, kind in handle.list_children(ogid):
                ctx.check("R008", kind == GROUP and name.isdigit() and int(name) < n,
                          path, f"override entry {name!r} invalid")


_FAST_ENTITY_CHECKS = {
    "time_series": _check_time_series_fast,
    "signal_events": _check_signal_events_fast,
    "image_stack": _check_image_stack_fast,
    "experimental_events": _check_experimental_events_fast,
    "generic_array": _check_generic_array_fast,
}


# -- full (data-dependent) additions -------------------------------------------

def _full_entity_pass(ctx: _Ctx, handle: ContainerHandle) -> None:
    for path in R.entity_paths(handle):
        gid = handle.resolve_path(path)
        kind = _attr(handle, gid, L.ENTITY_KIND_ATTR)
        if kind not in R.ENTITY_READERS:
            continue  # D001 already reported by the fast pass
        try:
            R.ENTITY_READERS[kind](handle, path)
        except SchemaViolation as exc:
            ctx.fail(exc.rule_code, exc.path, str(exc))
        except ChunkChecksumMismatch as exc:
            ctx.fail("C006", path, str(exc),
                     detail={"coords": list(exc.coords)})


def _full_sources_pass(ctx: _Ctx, handle: ContainerHandle) -> None:
    for sid in R.source_ids(handle):
        try:
            R.get_source(handle, sid)
        except SchemaViolation as exc:
            ctx.fail(exc.rule_code, exc.path, str(exc))
        except ChunkChecksumMismatch as exc:
            ctx.fail("C006", L.source_path(sid), str(exc),
                     detail={"coords": list(exc.coords)})


def _full_relations_pass(ctx: _Ctx, handle: ContainerHandle) -> None:
    edges = []
    for rel_id in R.derivation_ids(handle):
        path = L.derived_path(rel_id)
        try:
            rel = R.read_derived_from(handle, rel_id)
            edges.append((rel.inputs, rel.outputs))
        except SchemaViolation as exc:
            ctx.fail(exc.rule_code, exc.path, str(exc))
        except ChunkChecksumMismatch as exc:
            ctx.fail("C006", path, str(exc), detail={"coords": list(exc.coords)})
    from .model.writers import _has_cycle
    if _has_cycle(edges):
        ctx.fail("R002", L.DERIVED_PATH, "derivation graph has a cycle")
    for group_id in R.grouping_ids(handle):
        path = L.group_path(group_id)
        try:
            R.read_grouping(handle, group_id)
        except SchemaViolation as exc:
            ctx.fail(exc.rule_code, exc.path, str(exc))
        except ChunkChecksumMismatch as exc:
            ctx.fail("C006", path, str(exc), detail={"coords": list(exc.coords)})


def _full_chunk_pass(ctx: _Ctx, handle: ContainerHandle) -> None:
    for dataset_id, stream, coords in handle.chunk_keys():
        try:
            handle.verify_chunk(dataset_id, stream, coords)
        except ChunkChecksumMismatch as exc:
            ctx.fail("C006", handle.object_path(dataset_id), str(exc),
                     detail={"coords": list(coords), "stream": stream})


# -- entry point -----------------------------------------------------------------

def validate_file(path, level: str = FULL) -> ValidationReport:
    """Validate a container file; structural problems become findings.

    ``level="fast"`` checks the envelope and schema structure without
    reading chunk payloads; ``level="full"`` additionally verifies every
    chunk checksum and all data-dependent invariants.
    """
    if level not in (FAST, FULL):
        raise ValueError(f"level must be 'fast' or 'full', got {level!r}")
    ctx = _Ctx(level)
    try:
        handle = open_container(path, "r")
    except BadMagic as exc:
        ctx.fail("C001", "/", str(exc))
        return ctx.report()
    except UnsupportedVersion as exc:
        ctx.fail("C002", "/", str(exc))
        return ctx.report()
    except TruncatedFile as exc:
        ctx.fail("C004", "/", str(exc))
        return ctx.report()
    except CorruptFooter as exc:
        ctx.fail("C003", "/", str(exc))
        return ctx.report()
    except IoFailure:
        raise
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    with handle:
        try:
            parsed = _uuid.UUID(handle.uuid)
            ctx.check("C005", parsed.int != 0 and parsed.version == 4, "/",
                      f"file uuid {handle.uuid} is not a non-zero RFC 4122 v4 uuid")
        except ValueError:
            ctx.fail("C005", "/", f"file uuid {handle.uuid!r} unparseable")

        _check_global(ctx, handle)
        _check_sources_fast(ctx, handle)

        paths = R.entity_paths(handle)
        ctx.check("D002", bool(paths), L.DATA_PATH, "file contains no payload entities")
        for epath in paths:
            gid = handle.resolve_path(epath)
            kind = _attr(handle, gid, L.ENTITY_KIND_ATTR)
            if not ctx.check("D001", kind in _FAST_ENTITY_CHECKS, epath,
                             f"missing or unknown entity_kind {kind!r}"):
                continue
            try:
                _FAST_ENTITY_CHECKS[kind](ctx, handle, gid, epath)
            except EphysPackError as exc:
                ctx.fail("C003", epath, f"structure unreadable: {exc}")
        _check_relations_fast(ctx, handle)

        if level == FULL:
            _full_sources_pass(ctx, handle)
            _full_entity_pass(ctx, handle)
            _full_relations_pass(ctx, handle)
            _full_chunk_pass(ctx, handle)

    return ctx.report()
