"""Typed data model over the container: entities, relationships, readers, writers."""

from .types import (
    DIM_SEMANTICS,
    ENTITY_KINDS,
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
    SourceTreeNode,
    SpikeTemplates,
    TimeSeries,
    Trigger,
    UNIT_SOURCE_KINDS,
    Waveforms,
    deep_equal,
    get_waveform,
    parse_timestamp,
    property_sets_by_name,
    time_at_index,
)
from .writers import (
    add_derived_from,
    add_grouping,
    add_source,
    write_experimental_events,
    write_generic_array,
    write_global_metadata,
    write_image_stack,
    write_signal_events,
    write_time_series,
)
from .readers import (
    derivation_ids,
    entity_kind,
    entity_paths,
    get_source,
    grouping_ids,
    read_derived_from,
    read_entity,
    read_experimental_events,
    read_generic_array,
    read_global_metadata,
    read_grouping,
    read_image_stack,
    read_signal_events,
    read_time_series,
    source_children,
    source_ids,
    source_tree,
)

__all__ = [name for name in dir() if not name.startswith("_")]
