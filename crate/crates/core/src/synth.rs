//! Seeded synthetic flow generator with planted anomalous user-weeks.
//!
//! Each user is drawn from one behaviour archetype and gets personal
//! traffic rates, port preferences and peers. Every weekday carries at least
//! one flow so all weeks are complete. A fixed number of user-weeks,
//! `round(anomaly_rate · users · weeks)`, receive one anomaly transform on
//! one to three of their weekdays.

use std::collections::BTreeSet;
use std::io::Write;

use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{week_index, weekday, write_flows, Direction, FlowRecord, Label, LabelTable, Protocol};
use crate::numkernel::{derive_seed, Rng};

const DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub port: u16,
    pub protocol: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archetype {
    pub name: String,
    /// Mixture weight; weights over all archetypes sum to 1.
    pub weight: f64,
    /// Service ports this archetype talks to (outbound) or serves (inbound).
    pub ports: Vec<PortSpec>,
    /// Probability that a flow is initiated by the user.
    pub out_fraction: f64,
    /// Median weekday flow count of a typical user.
    pub flows_per_day: f64,
    /// Log-scale spread of per-user rates around `flows_per_day`.
    pub rate_spread: f64,
    /// Median bytes per flow.
    pub bytes_median: f64,
    pub bytes_sigma: f64,
    /// Peers per user are drawn from this many archetype hosts.
    pub peer_pool: usize,
    pub peers_per_user: usize,
    /// TCP flag byte of an ordinary session.
    pub tcp_flags: u8,
    /// Chance that a TCP flow ends in a reset (adds RST to the flags).
    pub reset_rate: f64,
    /// Fraction of flows that are ICMP echo.
    pub icmp_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Many more flows and bytes than usual.
    VolumeSpike,
    /// Short flows to many ports outside every archetype, scan-like.
    UnusualPorts,
    /// TCP sessions with flag combinations ordinary sessions never show.
    FlagShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyConfig {
    pub kinds: Vec<AnomalyKind>,
    /// Range of multipliers for flow counts and bytes in a spike.
    pub spike_factor: (f64, f64),
    /// Range of extra flows added by a port scan.
    pub scan_flows: (u32, u32),
    /// Flag byte given to shifted flows.
    pub shifted_flags: u8,
    /// Fraction of the day's TCP flows whose flags are shifted.
    pub shift_fraction: f64,
    /// Range of affected weekdays in an anomalous week.
    pub days: (usize, usize),
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            kinds: vec![AnomalyKind::VolumeSpike, AnomalyKind::UnusualPorts, AnomalyKind::FlagShift],
            spike_factor: (3.0, 6.0),
            scan_flows: (15, 40),
            // FIN, PSH, URG.
            shifted_flags: 0x29,
            shift_fraction: 0.5,
            days: (1, 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_weeks: usize,
    pub seed: u64,
    /// Fraction of user-weeks made anomalous.
    pub anomaly_rate: f64,
    /// First day (days since 1970-01-01); must be a Monday.
    pub start_day: i64,
    /// Probability that a weekend day has (light) traffic.
    pub weekend_activity: f64,
    /// Log-scale spread of each user's fixed Monday-to-Friday rhythm.
    pub weekday_sigma: f64,
    /// Log-scale spread of a per-week load factor shared by all its days.
    pub week_load_sigma: f64,
    pub archetypes: Vec<Archetype>,
    pub anomaly: AnomalyConfig,
}

fn ports(list: &[(u16, &str, f64)]) -> Vec<PortSpec> {
    list.iter()
        .map(|&(port, protocol, weight)| PortSpec {
            port,
            protocol: protocol.to_string(),
            weight,
        })
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_weeks: 8,
            seed: 7,
            anomaly_rate: 0.02,
            // 2024-01-01.
            start_day: 19_723,
            weekend_activity: 0.2,
            weekday_sigma: 0.3,
            week_load_sigma: 0.15,
            archetypes: vec![
                Archetype {
                    name: "workstation".into(),
                    weight: 0.75,
                    ports: ports(&[
                        (443, "tcp", 6.0),
                        (80, "tcp", 2.0),
                        (53, "udp", 3.0),
                        (993, "tcp", 0.8),
                        (587, "tcp", 0.4),
                        (123, "udp", 0.3),
                    ]),
                    out_fraction: 0.9,
                    flows_per_day: 40.0,
                    rate_spread: 0.35,
                    bytes_median: 20_000.0,
                    bytes_sigma: 1.0,
                    peer_pool: 60,
                    peers_per_user: 12,
                    // SYN, ACK, PSH, FIN.
                    tcp_flags: 0x1B,
                    reset_rate: 0.0,
                    icmp_rate: 0.0,
                },
                Archetype {
                    name: "server".into(),
                    weight: 0.25,
                    ports: ports(&[
                        (22, "tcp", 3.0),
                        (3306, "tcp", 2.0),
                        (8080, "tcp", 2.0),
                        (5432, "tcp", 1.0),
                        (161, "udp", 0.5),
                    ]),
                    out_fraction: 0.2,
                    flows_per_day: 120.0,
                    rate_spread: 0.3,
                    bytes_median: 4_000.0,
                    bytes_sigma: 0.8,
                    peer_pool: 40,
                    peers_per_user: 20,
                    tcp_flags: 0x1B,
                    reset_rate: 0.05,
                    icmp_rate: 0.02,
                },
            ],
            anomaly: AnomalyConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::config("n_users", "must be at least 1"));
        }
        if self.n_weeks == 0 {
            return Err(Error::config("n_weeks", "must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.anomaly_rate) {
            return Err(Error::config("anomaly_rate", "must be in [0, 0.5]"));
        }
        if weekday(self.start_day) != 0 {
            return Err(Error::config("start_day", "must be a Monday"));
        }
        if !(0.0..=1.0).contains(&self.weekend_activity) {
            return Err(Error::config("weekend_activity", "must be a probability"));
        }
        for (name, v) in [("weekday_sigma", self.weekday_sigma), ("week_load_sigma", self.week_load_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be non-negative"));
            }
        }
        if self.archetypes.is_empty() {
            return Err(Error::config("archetypes", "at least one archetype is required"));
        }
        let total: f64 = self.archetypes.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.archetypes.iter().any(|a| a.weight < 0.0) {
            return Err(Error::config("archetypes.weight", format!("weights must be non-negative and sum to 1, got {total}")));
        }
        for (i, a) in self.archetypes.iter().enumerate() {
            let field = |f: &str| format!("archetypes[{i}].{f}");
            if a.ports.is_empty() || a.ports.iter().any(|p| !(p.weight > 0.0)) {
                return Err(Error::config(field("ports"), "needs at least one port, all with positive weight"));
            }
            for p in &a.ports {
                match Protocol::parse(&p.protocol) {
                    Some(Protocol::Tcp | Protocol::Udp) => {}
                    _ => return Err(Error::config(field("ports.protocol"), format!("`{}` is not tcp or udp", p.protocol))),
                }
            }
            for (name, v) in [("out_fraction", a.out_fraction), ("reset_rate", a.reset_rate), ("icmp_rate", a.icmp_rate)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(field(name), "must be a probability"));
                }
            }
            for (name, v) in [("flows_per_day", a.flows_per_day), ("bytes_median", a.bytes_median)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::config(field(name), "must be positive"));
                }
            }
            for (name, v) in [("rate_spread", a.rate_spread), ("bytes_sigma", a.bytes_sigma)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::config(field(name), "must be non-negative"));
                }
            }
            if a.peer_pool == 0 || a.peers_per_user == 0 || a.peers_per_user > a.peer_pool {
                return Err(Error::config(field("peers_per_user"), "must be between 1 and peer_pool"));
            }
        }
        let an = &self.anomaly;
        if self.anomaly_rate > 0.0 && an.kinds.is_empty() {
            return Err(Error::config("anomaly.kinds", "at least one transform is needed when anomaly_rate > 0"));
        }
        if !(an.spike_factor.0 >= 1.0 && an.spike_factor.1 >= an.spike_factor.0) {
            return Err(Error::config("anomaly.spike_factor", "needs 1 <= low <= high"));
        }
        if an.scan_flows.1 < an.scan_flows.0 || an.scan_flows.0 == 0 {
            return Err(Error::config("anomaly.scan_flows", "needs 1 <= low <= high"));
        }
        if !(0.0..=1.0).contains(&an.shift_fraction) {
            return Err(Error::config("anomaly.shift_fraction", "must be a probability"));
        }
        if an.days.0 == 0 || an.days.1 < an.days.0 || an.days.1 > 5 {
            return Err(Error::config("anomaly.days", "needs 1 <= low <= high <= 5"));
        }
        Ok(())
    }

    /// Number of anomalous user-weeks.
    pub fn anomaly_count(&self) -> usize {
        (self.anomaly_rate * (self.n_users * self.n_weeks) as f64).round() as usize
    }
}

pub fn user_id(i: usize) -> String {
    format!("u{i:04}")
}

/// A planted anomaly, for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAnomaly {
    pub user_id: String,
    pub week_index: i64,
    pub kind: AnomalyKind,
    /// Weekdays (0 = Monday) the transform touched.
    pub days: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub flows: Vec<FlowRecord>,
    pub labels: LabelTable,
    pub planted: Vec<PlantedAnomaly>,
    /// Archetype index of every user.
    pub archetype_of: Vec<usize>,
}

struct UserProfile {
    id: String,
    arch: usize,
    rate: f64,
    port_weights: Vec<f64>,
    peers: Vec<String>,
    /// Weekday activity multipliers, Monday to Friday.
    day_shape: [f64; 5],
}

fn profile(cfg: &SynthConfig, i: usize, rng: &mut Rng) -> Result<UserProfile> {
    let weights: Vec<f64> = cfg.archetypes.iter().map(|a| a.weight).collect();
    let arch = rng.weighted_index(&weights);
    let a = &cfg.archetypes[arch];
    let rate = a.flows_per_day * LogNormal::new(0.0, a.rate_spread).map_err(|e| Error::invalid(e.to_string()))?.sample(rng);
    let port_weights = a.ports.iter().map(|p| p.weight * rng.uniform_range(0.5, 1.5)).collect();
    let peers = rng
        .sample_indices(a.peer_pool, a.peers_per_user)
        .into_iter()
        .map(|h| format!("{}-h{h:03}", a.name))
        .collect();
    let rhythm = LogNormal::new(0.0, cfg.weekday_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut day_shape = [1.0; 5];
    for s in &mut day_shape {
        *s = rhythm.sample(rng);
    }
    Ok(UserProfile {
        id: user_id(i),
        arch,
        rate,
        port_weights,
        peers,
        day_shape,
    })
}

fn poisson(mean: f64, rng: &mut Rng) -> Result<u64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(d.sample(rng) as u64)
}

fn packets_for(bytes: u64, rng: &mut Rng) -> u64 {
    let mtu = rng.uniform_range(500.0, 1400.0);
    ((bytes as f64 / mtu).ceil() as u64).max(1)
}

/// Seconds into the day, concentrated in working hours.
fn time_of_day(rng: &mut Rng) -> i64 {
    if rng.uniform() < 0.9 {
        rng.uniform_range(8.0 * 3600.0, 18.0 * 3600.0) as i64
    } else {
        rng.below(DAY as usize) as i64
    }
}

fn ephemeral(rng: &mut Rng) -> u16 {
    49_152 + rng.below(16_384) as u16
}

struct DayPlan<'a> {
    cfg: &'a SynthConfig,
    user: &'a UserProfile,
    day: i64,
    volume: f64,
}

impl DayPlan<'_> {
    fn arch(&self) -> &Archetype {
        &self.cfg.archetypes[self.user.arch]
    }

    fn flow(&self, rng: &mut Rng, port: u16, protocol: Protocol, bytes: u64, flags: u8) -> FlowRecord {
        let a = self.arch();
        let peer = self.user.peers[rng.below(self.user.peers.len())].clone();
        let ts = self.day * DAY + time_of_day(rng);
        let out = rng.uniform() < a.out_fraction;
        let (src_id, dst_id, direction, src_port, dst_port) = if out {
            (self.user.id.clone(), peer, Direction::Out, ephemeral(rng), port)
        } else {
            (peer, self.user.id.clone(), Direction::In, ephemeral(rng), port)
        };
        FlowRecord {
            timestamp: ts,
            src_id,
            dst_id,
            direction,
            bytes,
            packets: packets_for(bytes, rng),
            src_port,
            dst_port,
            protocol,
            tcp_flags: if protocol == Protocol::Tcp { flags } else { 0 },
        }
    }

    /// Ordinary traffic for the day; at least one flow when `at_least_one`.
    fn normal(&self, rng: &mut Rng, mean: f64, at_least_one: bool, bytes_scale: f64) -> Result<Vec<FlowRecord>> {
        let a = self.arch();
        let mut n = poisson(mean * self.volume, rng)?;
        if at_least_one {
            n = n.max(1);
        }
        let bytes_dist = LogNormal::new(a.bytes_median.ln(), a.bytes_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut flows = Vec::with_capacity(n as usize);
        for _ in 0..n {
            if rng.uniform() < a.icmp_rate {
                let mut f = self.flow(rng, 0, Protocol::Icmp, 84, 0);
                f.src_port = 0;
                f.packets = 1;
                flows.push(f);
                continue;
            }
            let spec = &a.ports[rng.weighted_index(&self.user.port_weights)];
            let protocol = Protocol::parse(&spec.protocol).unwrap_or(Protocol::Tcp);
            let bytes = (bytes_dist.sample(rng) * bytes_scale).max(40.0) as u64;
            let mut flags = a.tcp_flags;
            if rng.uniform() < a.reset_rate {
                flags |= 0x04;
            }
            flows.push(self.flow(rng, spec.port, protocol, bytes, flags));
        }
        Ok(flows)
    }
}

fn in_archetype_ports(cfg: &SynthConfig) -> BTreeSet<u16> {
    cfg.archetypes.iter().flat_map(|a| a.ports.iter().map(|p| p.port)).collect()
}

fn apply_anomaly(
    kind: AnomalyKind,
    plan: &DayPlan,
    rng: &mut Rng,
    flows: &mut Vec<FlowRecord>,
    known_ports: &BTreeSet<u16>,
) -> Result<()> {
    let an = &plan.cfg.anomaly;
    match kind {
        AnomalyKind::VolumeSpike => {
            let factor = rng.uniform_range(an.spike_factor.0, an.spike_factor.1);
            let base = plan.user.rate * plan.user.day_shape[weekday(plan.day)];
            let extra = plan.normal(rng, base * (factor - 1.0), false, factor)?;
            for f in flows.iter_mut() {
                f.bytes = (f.bytes as f64 * factor) as u64;
                f.packets = packets_for(f.bytes, rng);
            }
            flows.extend(extra);
        }
        AnomalyKind::UnusualPorts => {
            let n = an.scan_flows.0 + rng.below((an.scan_flows.1 - an.scan_flows.0 + 1) as usize) as u32;
            for _ in 0..n {
                let port = loop {
                    let p = 1024 + rng.below(48_000) as u16;
                    if !known_ports.contains(&p) {
                        break p;
                    }
                };
                let mut f = plan.flow(rng, port, Protocol::Tcp, 60, 0x02);
                f.direction = Direction::Out;
                f.src_id = plan.user.id.clone();
                f.dst_id = format!("scan-h{:03}", rng.below(500));
                f.packets = 1;
                flows.push(f);
            }
        }
        AnomalyKind::FlagShift => {
            for f in flows.iter_mut() {
                if f.protocol == Protocol::Tcp && rng.uniform() < an.shift_fraction {
                    f.tcp_flags = an.shifted_flags;
                }
            }
        }
    }
    Ok(())
}

/// Generates flows and ground truth; deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let known_ports = in_archetype_ports(cfg);
    let total = cfg.n_users * cfg.n_weeks;
    let mut pick = Rng::new(derive_seed(cfg.seed, "anomalies"));
    let chosen: BTreeSet<usize> = pick.sample_indices(total, cfg.anomaly_count()).into_iter().collect();

    let mut flows = Vec::new();
    let mut labels = LabelTable::default();
    let mut planted = Vec::new();
    let mut archetype_of = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let mut rng = Rng::new(derive_seed(cfg.seed, &format!("user-{u}")));
        let user = profile(cfg, u, &mut rng)?;
        archetype_of.push(user.arch);
        let load = LogNormal::new(0.0, cfg.week_load_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for w in 0..cfg.n_weeks {
            let monday = cfg.start_day + 7 * w as i64;
            let week = week_index(monday);
            let anomalous = chosen.contains(&(u * cfg.n_weeks + w));
            let volume = load.sample(&mut rng);
            let mut anomaly = None;
            if anomalous {
                let an = &cfg.anomaly;
                let kind = an.kinds[rng.below(an.kinds.len())];
                let n_days = an.days.0 + rng.below(an.days.1 - an.days.0 + 1);
                let mut days = rng.sample_indices(5, n_days);
                days.sort_unstable();
                anomaly = Some((kind, days));
            }
            for wd in 0..7 {
                let day = monday + wd as i64;
                let plan = DayPlan {
                    cfg,
                    user: &user,
                    day,
                    volume,
                };
                if wd >= 5 {
                    if rng.uniform() < cfg.weekend_activity {
                        flows.extend(plan.normal(&mut rng, user.rate * 0.1, true, 1.0)?);
                    }
                    continue;
                }
                let mut day_flows = plan.normal(&mut rng, user.rate * user.day_shape[wd], true, 1.0)?;
                if let Some((kind, days)) = &anomaly {
                    if days.contains(&wd) {
                        apply_anomaly(*kind, &plan, &mut rng, &mut day_flows, &known_ports)?;
                    }
                }
                flows.extend(day_flows);
            }
            let label = if anomalous { Label::Anomalous } else { Label::Normal };
            labels.insert(user.id.clone(), week, label);
            if let Some((kind, days)) = anomaly {
                planted.push(PlantedAnomaly {
                    user_id: user.id.clone(),
                    week_index: week,
                    kind,
                    days,
                });
            }
        }
    }
    flows.sort_by_key(|f| f.timestamp);
    Ok(SynthOutput {
        flows,
        labels,
        planted,
        archetype_of,
    })
}

impl SynthOutput {
    /// Flows in the `netflow-v1` layout, preceded by `#` comment lines.
    pub fn write_flows<W: Write>(&self, mut out: W, comment: &str) -> Result<()> {
        for line in comment.lines() {
            writeln!(out, "# {line}")?;
        }
        write_flows(out, &self.flows)
    }

    pub fn write_labels<W: Write>(&self, out: W, comment: &str) -> Result<()> {
        self.labels.write_csv(out, Some(comment))
    }
}
