//! Parsing flow/event CSVs, per-window feature extraction and assembly of
//! user-week examples.

mod dataset;
mod features;
mod schema;
mod standardize;
mod weeks;

pub use dataset::{Dataset, DatasetMeta, Label, LabelTable};
pub use features::{
    extract_event_window, extract_flow_window, BitmapField, CountFeature, FeatureGroup, FeatureSpec, TopKFeature,
    TopKKey,
};
pub use schema::{
    parse_events, parse_flows, write_flows, Direction, EventRecord, FlowRecord, ParseReport, Protocol, RecordKind,
    Role, SchemaDescriptor,
};
pub use standardize::{ColumnStats, Standardizer, MIN_STD};
pub use weeks::{
    build_user_weeks, event_day_vectors, flow_day_vectors, week_index, week_start_day, weekday, Calendar,
    DayVector, UserWeek, WeekAssembly, WEEK_LEN,
};
