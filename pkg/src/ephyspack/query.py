"""Read-side query API over a finalized container.

All functions are pure reads: repeated calls on the same file return
identical results, and handles may be shared between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .container import ContainerHandle, GROUP
from .errors import NoSuchEntity, NoSuchGroup, NoSuchKey, NoSuchSource
from .model import layout as L
from .model import readers as R

PAYLOAD_PRINCIPAL_DATASET = {
    "time_series": "values",
    "signal_events": "event_times",
    "image_stack": "pixels",
    "experimental_events": "event_times",
    "generic_array": "data",
}


@dataclass
class InventoryEntry:
    path: str
    entity_kind: str          # payload kind, "source", or "relationship"
    dims: tuple[int, ...] | None = None
    start_time: float | None = None
    duration: float | None = None

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "entity_kind": self.entity_kind,
            "dims": list(self.dims) if self.dims is not None else None,
            "start_time": self.start_time,
            "duration": self.duration,
        }


@dataclass
class ProvenanceRecord:
    rel_id: str
    outputs: list[str]
    inputs: list[str]
    activity: str
    agents: list[str]
    params: dict = field(default_factory=dict)
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {
            "rel_id": self.rel_id,
            "outputs": list(self.outputs),
            "inputs": list(self.inputs),
            "activity": self.activity,
            "agents": list(self.agents),
            "params": dict(self.params),
            "timestamp": self.timestamp,
        }


def _attr(handle, oid, key, default=None):
    try:
        return handle.get_attribute(oid, key)
    except NoSuchKey:
        return default


def _payload_entry(handle: ContainerHandle, path: str) -> InventoryEntry:
    gid = handle.resolve_path(path)
    kind = _attr(handle, gid, L.ENTITY_KIND_ATTR)
    entry = InventoryEntry(path=path, entity_kind=kind)
    principal = PAYLOAD_PRINCIPAL_DATASET.get(kind)
    if principal is not None:
        did = handle.child_id(gid, principal)
        if did is not None:
            entry.dims = handle.dataset_meta(did).shape
    if kind in ("time_series", "signal_events", "image_stack"):
        entry.start_time = _attr(handle, gid, "start_time")
        entry.duration = _attr(handle, gid, "duration")
    elif kind == "experimental_events":
        start = _attr(handle, gid, "monitor_start")
        end = _attr(handle, gid, "monitor_end")
        entry.start_time = start
        if start is not None and end is not None:
            entry.duration = end - start
    return entry


def inventory(handle: ContainerHandle) -> list[InventoryEntry]:
    """One entry per stored entity (payload, source, relationship), by path."""
    entries = [_payload_entry(handle, path) for path in R.entity_paths(handle)]
    entries.extend(
        InventoryEntry(path=L.source_path(sid), entity_kind="source")
        for sid in R.source_ids(handle))
    entries.extend(
        InventoryEntry(path=L.derived_path(rid), entity_kind="relationship")
        for rid in R.derivation_ids(handle))
    entries.extend(
        InventoryEntry(path=L.group_path(gid), entity_kind="relationship")
        for gid in R.grouping_ids(handle))
    entries.sort(key=lambda e: e.path)
    return entries


def _require_entity(handle: ContainerHandle, path: str) -> int:
    parts = [p for p in path.split("/") if p]
    if len(parts) != 2 or parts[0] not in ("data", "sources"):
        raise NoSuchEntity(f"no entity at {path!r}")
    try:
        return handle.resolve_path(path)
    except Exception:
        raise NoSuchEntity(f"no entity at {path!r}") from None


def _provenance_records(handle: ContainerHandle) -> list[ProvenanceRecord]:
    records = []
    for rel_id in R.derivation_ids(handle):
        rel = R.read_derived_from(handle, rel_id)
        records.append(ProvenanceRecord(
            rel_id=rel_id, outputs=rel.outputs, inputs=rel.inputs,
            activity=rel.activity, agents=rel.agents, params=rel.params,
            timestamp=rel.timestamp))
    return records


def _entity_sources(handle: ContainerHandle, path: str) -> set[str]:
    """Every source id an entity lists (channels, per-set channels, units)."""
    gid = handle.resolve_path(path)
    kind = _attr(handle, gid, L.ENTITY_KIND_ATTR)
    out: set[str] = set()

    def dataset_strings(parent, name):
        did = handle.child_id(parent, name)
        return handle.read_full(did) if did is not None else []

    if kind in ("time_series", "image_stack"):
        out.update(dataset_strings(gid, "sources"))
    elif kind == "signal_events":
        out.update(dataset_strings(gid, "source_channels"))
        pgid = handle.child_id(gid, "props")
        if pgid is not None:
            for _name, sgid, k in handle.list_children(pgid):
                if k != GROUP:
                    continue
                out.update(dataset_strings(sgid, "channel_ids"))
                out.update(dataset_strings(sgid, "unit_ids"))
    return out


def entity_metadata(handle: ContainerHandle, path: str) -> dict:
    """All stored metadata of one entity plus the relationships touching it."""
    gid = _require_entity(handle, path)
    attrs = handle.attributes(gid)
    info: dict = {"path": path, "attributes": attrs}
    if path.startswith(L.SOURCES_PATH + "/"):
        info["entity_kind"] = "source"
        info["source_kind"] = attrs.get("kind")
    else:
        entry = _payload_entry(handle, path)
        info["entity_kind"] = entry.entity_kind
        info["dims"] = list(entry.dims) if entry.dims is not None else None
        info["start_time"] = entry.start_time
        info["duration"] = entry.duration
        sources = sorted(_entity_sources(handle, path))
        if sources:
            info["sources"] = sources
        cu = handle.child_id(gid, "channel_units")
        if "unit" in attrs:
            info["unit"] = attrs["unit"]
        elif cu is not None:
            info["unit"] = handle.read_full(cu)
    derived = []
    for rec in _provenance_records(handle):
        if path in rec.inputs:
            derived.append({"rel_id": rec.rel_id, "role": "input"})
        if path in rec.outputs:
            derived.append({"rel_id": rec.rel_id, "role": "output"})
    if derived:
        info["derivations"] = derived
    groups = []
    for group_id in R.grouping_ids(handle):
        g = R.read_grouping(handle, group_id)
        if path in g.members:
            groups.append(group_id)
    if groups:
        info["groupings"] = groups
    return info


def read_region(handle: ContainerHandle, path: str, offset, extent):
    """Slice the principal dataset of a payload entity."""
    gid = _require_entity(handle, path)
    kind = _attr(handle, gid, L.ENTITY_KIND_ATTR)
    principal = PAYLOAD_PRINCIPAL_DATASET.get(kind)
    if principal is None:
        raise NoSuchEntity(f"{path!r} is not a payload entity")
    did = handle.child_id(gid, principal)
    if did is None:
        raise NoSuchEntity(f"{path!r} has no {principal!r} dataset")
    return handle.read_slab(did, offset, extent)


def entities_by_source(handle: ContainerHandle, source_id: str,
                       include_descendants: bool = False) -> list[str]:
    """Payload entities recorded from a source (or its subtree)."""
    if not handle.has_path(L.source_path(source_id)):
        raise NoSuchSource(f"no source {source_id!r}")
    wanted = {source_id}
    if include_descendants:
        children = R.source_children(handle)
        frontier = [source_id]
        while frontier:
            cur = frontier.pop()
            for child in children.get(cur, []):
                if child not in wanted:
                    wanted.add(child)
                    frontier.append(child)
    return sorted(
        path for path in R.entity_paths(handle)
        if _entity_sources(handle, path) & wanted)


def related_entities(handle: ContainerHandle, path: str):
    """Entities related to ``path``: derivations, co-membership, references.

    Returns deduplicated, sorted (other_path, relation_kind, direction).
    """
    _require_entity(handle, path)
    out: set[tuple[str, str, str]] = set()
    for rec in _provenance_records(handle):
        if path in rec.inputs:
            out.update((o, "derived_from", "descendant") for o in rec.outputs)
        if path in rec.outputs:
            out.update((i, "derived_from", "ancestor") for i in rec.inputs)
    for group_id in R.grouping_ids(handle):
        g = R.read_grouping(handle, group_id)
        if path in g.members:
            out.update((m, "grouping", "co_member") for m in g.members if m != path)
    for epath in R.entity_paths(handle):
        gid = handle.resolve_path(epath)
        if _attr(handle, gid, L.ENTITY_KIND_ATTR) != "generic_array":
            continue
        rgid = handle.child_id(gid, "refs")
        if rgid is None:
            continue
        pid = handle.child_id(rgid, "paths")
        refs = handle.read_full(pid) if pid is not None else []
        if epath == path:
            out.update((p, "reference", "references") for p in refs)
        elif path in refs:
            out.add((epath, "reference", "referenced_by"))
    out.discard((path, "derived_from", "descendant"))
    out.discard((path, "derived_from", "ancestor"))
    return sorted(out)


def list_groupings(handle: ContainerHandle) -> list[tuple[str, str, int]]:
    """(group_id, label, member count) for every stored grouping."""
    out = []
    for group_id in R.grouping_ids(handle):
        g = R.read_grouping(handle, group_id)
        out.append((group_id, g.label, len(g.members)))
    out.sort(key=lambda item: item[0])
    return out


def grouping_members(handle: ContainerHandle, group_id: str):
    """Members of one grouping, in stored order, with per-member overrides.

    Overrides stay a separate field; they are never merged into the static
    metadata.
    """
    try:
        g = R.read_grouping(handle, group_id)
    except NoSuchEntity:
        raise NoSuchGroup(f"no grouping {group_id!r}") from None
    overrides = g.per_member_overrides or {}
    out = []
    for member in g.members:
        if member.startswith(L.DATA_PATH + "/"):
            entry = _payload_entry(handle, member)
        else:
            entry = InventoryEntry(path=member, entity_kind="source")
        out.append((member, entry, overrides.get(member, {})))
    return out


def derivation_chain(handle: ContainerHandle, path: str,
                     direction: str = "ancestors") -> list[ProvenanceRecord]:
    """Transitive derivation records up or down from an entity, topologically
    ordered (producers before consumers)."""
    if direction not in ("ancestors", "descendants"):
        raise ValueError(f"direction must be 'ancestors' or 'descendants', "
                         f"got {direction!r}")
    _require_entity(handle, path)
    records = _provenance_records(handle)

    relevant: list[ProvenanceRecord] = []
    closure = {path}
    changed = True
    picked: set[str] = set()
    while changed:
        changed = False
        for rec in records:
            if rec.rel_id in picked:
                continue
            touches = rec.outputs if direction == "ancestors" else rec.inputs
            grows = rec.inputs if direction == "ancestors" else rec.outputs
            if closure & set(touches):
                picked.add(rec.rel_id)
                relevant.append(rec)
                closure.update(grows)
                changed = True

    # Topological order over the relevant records: a record that produces
    # an input of another comes first. Kahn's algorithm, ties by rel_id.
    producers: dict[str, set[str]] = {}
    for rec in relevant:
        for out_path in rec.outputs:
            producers.setdefault(out_path, set()).add(rec.rel_id)
    deps = {
        rec.rel_id: set().union(
            *(producers.get(i, set()) for i in rec.inputs)) - {rec.rel_id}
        for rec in relevant
    }
    by_id = {rec.rel_id: rec for rec in relevant}
    ordered: list[ProvenanceRecord] = []
    remaining = dict(deps)
    while remaining:
        ready = sorted(r for r, d in remaining.items() if not d)
        if not ready:  # cycle: writers prevent this; order the rest by id
            ready = sorted(remaining)
        for rid in ready:
            ordered.append(by_id[rid])
            del remaining[rid]
        for d in remaining.values():
            d.difference_update(ready)
    return ordered


def search_provenance(handle: ContainerHandle, needle: str) -> list[ProvenanceRecord]:
    """Case-insensitive substring search over activity, agents, and parameter
    values. An empty needle matches every record."""
    needle = needle.lower()
    out = []
    for rec in _provenance_records(handle):
        haystacks = [rec.activity, *rec.agents,
                     *(str(v) for v in rec.params.values())]
        if any(needle in h.lower() for h in haystacks):
            out.append(rec)
    out.sort(key=lambda r: r.rel_id)
    return out
