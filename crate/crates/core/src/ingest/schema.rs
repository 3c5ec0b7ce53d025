//! Record types, schema descriptors and CSV parsing.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "in" | "i" | "incoming" => Some(Direction::In),
            "out" | "o" | "outgoing" => Some(Direction::Out),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::In => "in",
            Direction::Out => "out",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
    Other(u8),
}

impl Protocol {
    pub fn from_number(n: u8) -> Self {
        match n {
            6 => Protocol::Tcp,
            17 => Protocol::Udp,
            1 => Protocol::Icmp,
            other => Protocol::Other(other),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
            Protocol::Icmp => 1,
            Protocol::Other(n) => n,
        }
    }

    /// Accepts a protocol name (`tcp`, `udp`, `icmp`) or an IANA number.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Some(Protocol::Tcp),
            "udp" => Some(Protocol::Udp),
            "icmp" => Some(Protocol::Icmp),
            _ => s.parse::<u8>().ok().map(Protocol::from_number),
        }
    }

    pub fn name(self) -> String {
        match self {
            Protocol::Tcp => "tcp".into(),
            Protocol::Udp => "udp".into(),
            Protocol::Icmp => "icmp".into(),
            Protocol::Other(n) => n.to_string(),
        }
    }
}

/// One network flow as seen from the tracked user's side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    pub timestamp: i64,
    pub src_id: String,
    pub dst_id: String,
    pub direction: Direction,
    pub bytes: u64,
    pub packets: u64,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub tcp_flags: u8,
}

impl FlowRecord {
    /// The tracked user: the source of outgoing flows, the destination of
    /// incoming ones.
    pub fn user_id(&self) -> &str {
        match self.direction {
            Direction::Out => &self.src_id,
            Direction::In => &self.dst_id,
        }
    }

    pub fn peer_id(&self) -> &str {
        match self.direction {
            Direction::Out => &self.dst_id,
            Direction::In => &self.src_id,
        }
    }
}

/// One host or application event (logon, device, file, http, email, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub timestamp: i64,
    pub user_id: String,
    pub event_type: String,
    pub activity: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Flow,
    Event,
}

/// Column roles a schema can bind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Timestamp,
    SrcId,
    DstId,
    Direction,
    Bytes,
    Packets,
    SrcPort,
    DstPort,
    Protocol,
    TcpFlags,
    UserId,
    EventType,
    Activity,
}

const FLOW_ROLES: [Role; 10] = [
    Role::Timestamp,
    Role::SrcId,
    Role::DstId,
    Role::Direction,
    Role::Bytes,
    Role::Packets,
    Role::SrcPort,
    Role::DstPort,
    Role::Protocol,
    Role::TcpFlags,
];

const EVENT_ROLES: [Role; 3] = [Role::Timestamp, Role::UserId, Role::EventType];

/// Maps CSV column names onto record roles.
///
/// User-supplied descriptors are TOML:
///
/// ```toml
/// name = "my-flows"
/// kind = "flow"
/// [columns]
/// timestamp = "ts"
/// src_id = "sa"
/// # ...
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub name: String,
    pub kind: RecordKind,
    pub columns: BTreeMap<Role, String>,
}

impl SchemaDescriptor {
    pub fn builtin(name: &str) -> Option<Self> {
        let (kind, roles): (RecordKind, &[Role]) = match name {
            "netflow-v1" => (RecordKind::Flow, &FLOW_ROLES),
            "cert-events-v1" => (
                RecordKind::Event,
                &[Role::Timestamp, Role::UserId, Role::EventType, Role::Activity],
            ),
            _ => return None,
        };
        let columns = roles.iter().map(|r| (*r, role_column_name(*r).to_string())).collect();
        Some(Self {
            name: name.to_string(),
            kind,
            columns,
        })
    }

    /// A built-in name, or a path to a TOML descriptor.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(s) = Self::builtin(name_or_path) {
            return Ok(s);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::config(
                "schema",
                format!("`{name_or_path}` is neither a built-in schema (netflow-v1, cert-events-v1) nor a file"),
            ));
        }
        let schema: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn required_roles(&self) -> &'static [Role] {
        match self.kind {
            RecordKind::Flow => &FLOW_ROLES,
            RecordKind::Event => &EVENT_ROLES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in self.required_roles() {
            if !self.columns.contains_key(r) {
                return Err(Error::config(
                    format!("columns.{}", role_column_name(*r)),
                    format!("required for {:?} schemas", self.kind),
                ));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> Vec<&str> {
        let mut roles: Vec<Role> = self.required_roles().to_vec();
        if self.kind == RecordKind::Event && self.columns.contains_key(&Role::Activity) {
            roles.push(Role::Activity);
        }
        roles.iter().map(|r| self.columns[r].as_str()).collect()
    }
}

fn role_column_name(r: Role) -> &'static str {
    match r {
        Role::Timestamp => "timestamp",
        Role::SrcId => "src_id",
        Role::DstId => "dst_id",
        Role::Direction => "direction",
        Role::Bytes => "bytes",
        Role::Packets => "packets",
        Role::SrcPort => "src_port",
        Role::DstPort => "dst_port",
        Role::Protocol => "protocol",
        Role::TcpFlags => "tcp_flags",
        Role::UserId => "user_id",
        Role::EventType => "event_type",
        Role::Activity => "activity",
    }
}

/// Result of a parse run. `parsed + skipped` equals the number of data lines.
#[derive(Debug, Clone)]
pub struct ParseReport<T> {
    pub records: Vec<T>,
    pub skipped: usize,
}

impl<T> ParseReport<T> {
    pub fn total(&self) -> usize {
        self.records.len() + self.skipped
    }
}

struct Columns {
    index: BTreeMap<Role, usize>,
    width: usize,
}

fn bind_columns<R: Read>(rdr: &mut csv::Reader<R>, schema: &SchemaDescriptor) -> Result<Columns> {
    let header = rdr.headers()?.clone();
    let mut index = BTreeMap::new();
    for (role, name) in &schema.columns {
        match header.iter().position(|h| h.trim() == name) {
            Some(i) => {
                index.insert(*role, i);
            }
            None if schema.required_roles().contains(role) => {
                return Err(Error::MissingColumn(name.clone()));
            }
            None => {}
        }
    }
    Ok(Columns {
        index,
        width: header.len(),
    })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn parse_lines<R: Read, T>(
    input: R,
    schema: &SchemaDescriptor,
    strict: bool,
    parse: impl Fn(&csv::StringRecord, &Columns) -> std::result::Result<T, String>,
) -> Result<ParseReport<T>> {
    let mut rdr = reader(input);
    let cols = bind_columns(&mut rdr, schema)?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed = if row.len() != cols.width {
            Err(format!("expected {} fields, found {}", cols.width, row.len()))
        } else {
            parse(&row, &cols)
        };
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) if strict => return Err(Error::Malformed { line, reason }),
            Err(reason) => {
                if skipped < 10 {
                    log::warn!("skipping line {line}: {reason}");
                }
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed line(s) in total");
    }
    Ok(ParseReport { records, skipped })
}

fn field<'a>(row: &'a csv::StringRecord, cols: &Columns, role: Role) -> &'a str {
    row.get(cols.index[&role]).unwrap_or("")
}

fn num<T: std::str::FromStr>(row: &csv::StringRecord, cols: &Columns, role: Role) -> std::result::Result<T, String> {
    let raw = field(row, cols, role);
    raw.parse::<T>()
        .map_err(|_| format!("{} `{raw}` out of range or not a number", role_column_name(role)))
}

/// Parses flow records. Malformed lines are skipped and counted, or rejected
/// in strict mode.
pub fn parse_flows<R: Read>(input: R, schema: &SchemaDescriptor, strict: bool) -> Result<ParseReport<FlowRecord>> {
    if schema.kind != RecordKind::Flow {
        return Err(Error::invalid(format!("schema `{}` does not describe flows", schema.name)));
    }
    parse_lines(input, schema, strict, |row, cols| {
        let direction_raw = field(row, cols, Role::Direction);
        let direction = Direction::parse(direction_raw).ok_or_else(|| format!("bad direction `{direction_raw}`"))?;
        let protocol_raw = field(row, cols, Role::Protocol);
        let protocol = Protocol::parse(protocol_raw).ok_or_else(|| format!("bad protocol `{protocol_raw}`"))?;
        let src_id = field(row, cols, Role::SrcId).to_string();
        let dst_id = field(row, cols, Role::DstId).to_string();
        if src_id.is_empty() || dst_id.is_empty() {
            return Err("empty endpoint id".into());
        }
        Ok(FlowRecord {
            timestamp: num(row, cols, Role::Timestamp)?,
            src_id,
            dst_id,
            direction,
            bytes: num(row, cols, Role::Bytes)?,
            packets: num(row, cols, Role::Packets)?,
            src_port: num(row, cols, Role::SrcPort)?,
            dst_port: num(row, cols, Role::DstPort)?,
            protocol,
            tcp_flags: num(row, cols, Role::TcpFlags)?,
        })
    })
}

/// Parses host/application event records.
pub fn parse_events<R: Read>(input: R, schema: &SchemaDescriptor, strict: bool) -> Result<ParseReport<EventRecord>> {
    if schema.kind != RecordKind::Event {
        return Err(Error::invalid(format!("schema `{}` does not describe events", schema.name)));
    }
    parse_lines(input, schema, strict, |row, cols| {
        let user_id = field(row, cols, Role::UserId).to_string();
        let event_type = field(row, cols, Role::EventType).to_ascii_lowercase();
        if user_id.is_empty() || event_type.is_empty() {
            return Err("empty user_id or event_type".into());
        }
        let activity = cols
            .index
            .get(&Role::Activity)
            .and_then(|i| row.get(*i))
            .filter(|s| !s.is_empty())
            .map(str::to_ascii_lowercase);
        Ok(EventRecord {
            timestamp: num(row, cols, Role::Timestamp)?,
            user_id,
            event_type,
            activity,
        })
    })
}

/// Writes flows in the `netflow-v1` layout.
pub fn write_flows<W: std::io::Write>(out: W, flows: &[FlowRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FLOW_ROLES.iter().map(|r| role_column_name(*r)))?;
    for f in flows {
        w.write_record([
            f.timestamp.to_string(),
            f.src_id.clone(),
            f.dst_id.clone(),
            f.direction.as_str().to_string(),
            f.bytes.to_string(),
            f.packets.to_string(),
            f.src_port.to_string(),
            f.dst_port.to_string(),
            f.protocol.name(),
            f.tcp_flags.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "timestamp,src_id,dst_id,direction,bytes,packets,src_port,dst_port,protocol,tcp_flags\n";

    fn netflow() -> SchemaDescriptor {
        SchemaDescriptor::builtin("netflow-v1").unwrap()
    }

    #[test]
    fn one_line_one_record() {
        let csv = format!("{HEADER}1700000000,u1,h9,out,1200,10,50000,443,tcp,18\n");
        let rep = parse_flows(csv.as_bytes(), &netflow(), false).unwrap();
        assert_eq!(rep.skipped, 0);
        assert_eq!(
            rep.records,
            vec![FlowRecord {
                timestamp: 1_700_000_000,
                src_id: "u1".into(),
                dst_id: "h9".into(),
                direction: Direction::Out,
                bytes: 1200,
                packets: 10,
                src_port: 50000,
                dst_port: 443,
                protocol: Protocol::Tcp,
                tcp_flags: 18,
            }]
        );
        assert_eq!(rep.records[0].user_id(), "u1");
    }

    #[test]
    fn header_only_is_empty() {
        let rep = parse_flows(HEADER.as_bytes(), &netflow(), true).unwrap();
        assert!(rep.records.is_empty());
        assert_eq!(rep.skipped, 0);
    }

    #[test]
    fn out_of_range_port_lenient_and_strict() {
        let csv = format!("{HEADER}1,u1,h,out,1,1,99999,80,tcp,0\n2,u1,h,out,1,1,1000,80,tcp,0\n");
        let rep = parse_flows(csv.as_bytes(), &netflow(), false).unwrap();
        assert_eq!(rep.records.len(), 1);
        assert_eq!(rep.skipped, 1);
        assert_eq!(rep.total(), 2);
        let err = parse_flows(csv.as_bytes(), &netflow(), true).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_column_rejected() {
        let csv = "timestamp,src_id,dst_id,direction,bytes,packets,src_port,dst_port,protocol\n";
        let err = parse_flows(csv.as_bytes(), &netflow(), false).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "tcp_flags"));
    }

    #[test]
    fn wrong_field_count_and_negative_bytes_skipped() {
        let csv = format!("{HEADER}1,u1,h,out,1,1,1,80,tcp\n1,u1,h,in,-5,1,1,80,udp,0\n1,u1,h,in,5,1,1,80,17,0\n");
        let rep = parse_flows(csv.as_bytes(), &netflow(), false).unwrap();
        assert_eq!(rep.records.len(), 1);
        assert_eq!(rep.skipped, 2);
        assert_eq!(rep.records[0].protocol, Protocol::Udp);
    }

    #[test]
    fn comment_lines_ignored() {
        let csv = format!("# config_hash=abc seed=1\n{HEADER}1,u1,h,out,1,1,1,80,tcp,0\n");
        let rep = parse_flows(csv.as_bytes(), &netflow(), true).unwrap();
        assert_eq!(rep.records.len(), 1);
    }

    #[test]
    fn custom_schema_from_toml() {
        let text = r#"
name = "renamed"
kind = "flow"
[columns]
timestamp = "ts"
src_id = "sa"
dst_id = "da"
direction = "dir"
bytes = "ibyt"
packets = "ipkt"
src_port = "sp"
dst_port = "dp"
protocol = "pr"
tcp_flags = "flg"
"#;
        let schema: SchemaDescriptor = toml::from_str(text).unwrap();
        schema.validate().unwrap();
        let csv = "ts,sa,da,dir,ibyt,ipkt,sp,dp,pr,flg\n5,a,b,in,10,1,22,40000,6,2\n";
        let rep = parse_flows(csv.as_bytes(), &schema, true).unwrap();
        assert_eq!(rep.records[0].user_id(), "b");
    }

    #[test]
    fn events_parse() {
        let schema = SchemaDescriptor::builtin("cert-events-v1").unwrap();
        let csv = "timestamp,user_id,event_type,activity\n10,ACM1,Logon,logon\n11,ACM1,http,\n";
        let rep = parse_events(csv.as_bytes(), &schema, true).unwrap();
        assert_eq!(rep.records.len(), 2);
        assert_eq!(rep.records[0].event_type, "logon");
        assert_eq!(rep.records[1].activity, None);
    }

    #[test]
    fn write_then_parse() {
        let f = FlowRecord {
            timestamp: 42,
            src_id: "h".into(),
            dst_id: "u".into(),
            direction: Direction::In,
            bytes: 7,
            packets: 1,
            src_port: 22,
            dst_port: 51000,
            protocol: Protocol::Other(47),
            tcp_flags: 0,
        };
        let mut buf = Vec::new();
        write_flows(&mut buf, std::slice::from_ref(&f)).unwrap();
        let rep = parse_flows(buf.as_slice(), &netflow(), true).unwrap();
        assert_eq!(rep.records, vec![f]);
    }
}
