//! Per-window feature extraction: counts, flag bitmaps and top-K frequency
//! ranks.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::schema::{Direction, EventRecord, FlowRecord, Protocol, RecordKind};
use crate::error::{Error, Result};

/// Summed or distinct-count aggregation over the records of one window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountFeature {
    Flows,
    Bytes,
    Packets,
    DistinctPeers,
    DistinctSrcPorts,
    DistinctDstPorts,
    TcpFlows,
    UdpFlows,
    IcmpFlows,
    /// Flows whose destination port is below 1024.
    WellKnownPortFlows,
    /// Events of one type, optionally restricted to an activity and/or to
    /// off-hours (before 08:00 or from 18:00 local time).
    Events {
        event_type: String,
        #[serde(default)]
        activity: Option<String>,
        #[serde(default)]
        off_hours: bool,
    },
}

impl CountFeature {
    fn name(&self) -> String {
        match self {
            CountFeature::Events {
                event_type,
                activity,
                off_hours,
            } => {
                let mut s = format!("events.{event_type}");
                if let Some(a) = activity {
                    s.push('.');
                    s.push_str(a);
                }
                if *off_hours {
                    s.push_str(".off_hours");
                }
                s
            }
            other => serde_json::to_value(other)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        }
    }

    fn is_flow(&self) -> bool {
        !matches!(self, CountFeature::Events { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitmapField {
    /// The 8 TCP flag bits, least significant first.
    TcpFlags,
}

impl BitmapField {
    pub fn bits(self) -> usize {
        8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopKKey {
    DstPort,
    SrcPort,
    Peer,
    Protocol,
    EventType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKFeature {
    pub key: TopKKey,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureGroup {
    Count,
    Bitmap,
    TopK,
}

/// Declares the layout of one window's feature vector.
///
/// Features are laid out group by group (counts, bitmaps, top-K) and, when
/// `directional`, outgoing before incoming within each group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    #[serde(default)]
    pub count_features: Vec<CountFeature>,
    #[serde(default)]
    pub bitmap_features: Vec<BitmapField>,
    #[serde(default)]
    pub topk_features: Vec<TopKFeature>,
    #[serde(default)]
    pub directional: bool,
}

impl FeatureSpec {
    /// Default flow layout: 10 counts, TCP flag bitmap, top-5 destination
    /// ports and peers, each per direction (56 features).
    pub fn netflow_default() -> Self {
        use CountFeature::*;
        Self {
            count_features: vec![
                Flows,
                Bytes,
                Packets,
                DistinctPeers,
                DistinctSrcPorts,
                DistinctDstPorts,
                TcpFlows,
                UdpFlows,
                IcmpFlows,
                WellKnownPortFlows,
            ],
            bitmap_features: vec![BitmapField::TcpFlags],
            topk_features: vec![
                TopKFeature {
                    key: TopKKey::DstPort,
                    k: 5,
                },
                TopKFeature { key: TopKKey::Peer, k: 5 },
            ],
            directional: true,
        }
    }

    /// Default event layout: per event type, total and off-hours counts.
    pub fn cert_default() -> Self {
        let types = ["logon", "device", "file", "http", "email"];
        let mut count_features = Vec::new();
        for t in types {
            for off_hours in [false, true] {
                count_features.push(CountFeature::Events {
                    event_type: t.to_string(),
                    activity: None,
                    off_hours,
                });
            }
        }
        Self {
            count_features,
            bitmap_features: vec![],
            topk_features: vec![],
            directional: false,
        }
    }

    pub fn default_for(kind: RecordKind) -> Self {
        match kind {
            RecordKind::Flow => Self::netflow_default(),
            RecordKind::Event => Self::cert_default(),
        }
    }

    pub fn validate(&self, kind: RecordKind) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::config("features", "feature spec declares no features"));
        }
        if let Some(t) = self.topk_features.iter().find(|t| t.k == 0) {
            return Err(Error::config("features.topk_features", format!("K must be >= 1 for {:?}", t.key)));
        }
        let flow_only_topk = |k: TopKKey| !matches!(k, TopKKey::EventType);
        match kind {
            RecordKind::Flow => {
                if self.count_features.iter().any(|c| !c.is_flow())
                    || self.topk_features.iter().any(|t| t.key == TopKKey::EventType)
                {
                    return Err(Error::config("features", "event features in a flow spec"));
                }
            }
            RecordKind::Event => {
                if self.directional
                    || !self.bitmap_features.is_empty()
                    || self.count_features.iter().any(CountFeature::is_flow)
                    || self.topk_features.iter().any(|t| flow_only_topk(t.key))
                {
                    return Err(Error::config(
                        "features",
                        "event specs support only non-directional event counts and event_type top-K",
                    ));
                }
            }
        }
        Ok(())
    }

    fn directions(&self) -> &'static [Option<Direction>] {
        if self.directional {
            &[Some(Direction::Out), Some(Direction::In)]
        } else {
            &[None]
        }
    }

    fn group_width(&self, g: FeatureGroup) -> usize {
        match g {
            FeatureGroup::Count => self.count_features.len(),
            FeatureGroup::Bitmap => self.bitmap_features.iter().map(|b| b.bits()).sum(),
            FeatureGroup::TopK => self.topk_features.iter().map(|t| t.k).sum(),
        }
    }

    /// Dimension of one window's vector.
    pub fn dim(&self) -> usize {
        let dirs = self.directions().len();
        [FeatureGroup::Count, FeatureGroup::Bitmap, FeatureGroup::TopK]
            .iter()
            .map(|g| self.group_width(*g) * dirs)
            .sum()
    }

    /// Indices belonging to a group, in layout order.
    pub fn group_indices(&self, group: FeatureGroup) -> Vec<usize> {
        let dirs = self.directions().len();
        let mut start = 0;
        for g in [FeatureGroup::Count, FeatureGroup::Bitmap, FeatureGroup::TopK] {
            let len = self.group_width(g) * dirs;
            if g == group {
                return (start..start + len).collect();
            }
            start += len;
        }
        unreachable!()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let prefix = |d: Option<Direction>| d.map_or("all", Direction::as_str);
        let mut names = Vec::with_capacity(self.dim());
        for &d in self.directions() {
            for c in &self.count_features {
                names.push(format!("{}.{}", prefix(d), c.name()));
            }
        }
        for &d in self.directions() {
            for b in &self.bitmap_features {
                for bit in 0..b.bits() {
                    names.push(format!("{}.{}.bit{bit}", prefix(d), serde_key(b)));
                }
            }
        }
        for &d in self.directions() {
            for t in &self.topk_features {
                for rank in 1..=t.k {
                    names.push(format!("{}.top_{}.{rank}", prefix(d), serde_key(&t.key)));
                }
            }
        }
        names
    }
}

fn serde_key<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Frequencies of the K most common keys, descending, zero-padded to K.
fn top_k_counts<K: std::hash::Hash + Eq + Ord>(keys: impl Iterator<Item = K>, k: usize) -> Vec<f64> {
    let mut freq: HashMap<K, usize> = HashMap::new();
    for key in keys {
        *freq.entry(key).or_default() += 1;
    }
    let mut counts: Vec<usize> = freq.into_values().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let mut out: Vec<f64> = counts.into_iter().take(k).map(|c| c as f64).collect();
    out.resize(k, 0.0);
    out
}

fn flow_count(feature: &CountFeature, flows: &[&FlowRecord]) -> f64 {
    match feature {
        CountFeature::Flows => flows.len() as f64,
        CountFeature::Bytes => flows.iter().map(|f| f.bytes as f64).sum(),
        CountFeature::Packets => flows.iter().map(|f| f.packets as f64).sum(),
        CountFeature::DistinctPeers => flows.iter().map(|f| f.peer_id()).collect::<HashSet<_>>().len() as f64,
        CountFeature::DistinctSrcPorts => flows.iter().map(|f| f.src_port).collect::<HashSet<_>>().len() as f64,
        CountFeature::DistinctDstPorts => flows.iter().map(|f| f.dst_port).collect::<HashSet<_>>().len() as f64,
        CountFeature::TcpFlows => flows.iter().filter(|f| f.protocol == Protocol::Tcp).count() as f64,
        CountFeature::UdpFlows => flows.iter().filter(|f| f.protocol == Protocol::Udp).count() as f64,
        CountFeature::IcmpFlows => flows.iter().filter(|f| f.protocol == Protocol::Icmp).count() as f64,
        CountFeature::WellKnownPortFlows => flows.iter().filter(|f| f.dst_port < 1024).count() as f64,
        CountFeature::Events { .. } => 0.0,
    }
}

/// Feature vector for the flows of one user in one window.
///
/// Empty input yields the zero vector; the result never depends on record
/// order.
pub fn extract_flow_window(records: &[FlowRecord], spec: &FeatureSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.dim());
    let subsets: Vec<Vec<&FlowRecord>> = spec
        .directions()
        .iter()
        .map(|d| records.iter().filter(|r| d.is_none_or(|d| r.direction == d)).collect())
        .collect();

    for flows in &subsets {
        for c in &spec.count_features {
            out.push(flow_count(c, flows));
        }
    }
    for flows in &subsets {
        for b in &spec.bitmap_features {
            let mask = match b {
                BitmapField::TcpFlags => flows.iter().fold(0u8, |m, f| m | f.tcp_flags),
            };
            out.extend((0..b.bits()).map(|bit| f64::from((mask >> bit) & 1)));
        }
    }
    for flows in &subsets {
        for t in &spec.topk_features {
            let counts = match t.key {
                TopKKey::DstPort => top_k_counts(flows.iter().map(|f| f.dst_port), t.k),
                TopKKey::SrcPort => top_k_counts(flows.iter().map(|f| f.src_port), t.k),
                TopKKey::Peer => top_k_counts(flows.iter().map(|f| f.peer_id()), t.k),
                TopKKey::Protocol => top_k_counts(flows.iter().map(|f| f.protocol), t.k),
                TopKKey::EventType => vec![0.0; t.k],
            };
            out.extend(counts);
        }
    }
    debug_assert_eq!(out.len(), spec.dim());
    out
}

/// Feature vector for the events of one user in one window. `day_offset` is
/// added to timestamps to obtain local time for the off-hours rule.
pub fn extract_event_window(records: &[EventRecord], spec: &FeatureSpec, day_offset: i64) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.dim());
    for c in &spec.count_features {
        let v = match c {
            CountFeature::Events {
                event_type,
                activity,
                off_hours,
            } => records
                .iter()
                .filter(|r| &r.event_type == event_type)
                .filter(|r| activity.as_ref().is_none_or(|a| r.activity.as_deref() == Some(a.as_str())))
                .filter(|r| {
                    if !*off_hours {
                        return true;
                    }
                    let hour = (r.timestamp + day_offset).rem_euclid(86_400) / 3600;
                    !(8..18).contains(&hour)
                })
                .count() as f64,
            _ => 0.0,
        };
        out.push(v);
    }
    for t in &spec.topk_features {
        out.extend(top_k_counts(records.iter().map(|r| r.event_type.as_str()), t.k));
    }
    debug_assert_eq!(out.len(), spec.dim());
    out
}
