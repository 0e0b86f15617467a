//! RSS trace records and their CSV encoding.
//!
//! Trace CSV header:
//! `tick,tx_id,rx_id,mode,channel,tx_dir,rx_dir,tx_power_dbm,seq,received,rssi_dbm`.
//! `mode` is one of `omni`, `channel`, `directional`; columns that do not apply
//! to a record are left empty, as is `rssi_dbm` for a lost packet.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::{Link, PatternPair, Point2};

pub const TRACE_HEADER: &str =
    "tick,tx_id,rx_id,mode,channel,tx_dir,rx_dir,tx_power_dbm,seq,received,rssi_dbm";
pub const TRUTH_HEADER: &str = "tick,x,y";

/// What a record measures on its link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StreamKey {
    Omni,
    Channel(u8),
    Pattern(PatternPair),
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamKey::Omni => write!(f, "omni"),
            StreamKey::Channel(c) => write!(f, "ch{c}"),
            StreamKey::Pattern(p) => write!(f, "pair{p}"),
        }
    }
}

/// One measurement stream: a directed link plus what is measured on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub link: Link,
    pub key: StreamKey,
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.link, self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssRecord {
    pub tick: u32,
    pub tx_id: u32,
    pub rx_id: u32,
    pub key: StreamKey,
    pub tx_power_dbm: f64,
    pub seq: u32,
    /// `None` for a lost packet.
    pub rssi_dbm: Option<f64>,
}

impl RssRecord {
    pub fn received(&self) -> bool {
        self.rssi_dbm.is_some()
    }

    pub fn link(&self) -> Link {
        Link {
            tx: self.tx_id,
            rx: self.rx_id,
        }
    }

    pub fn stream(&self) -> StreamId {
        StreamId {
            link: self.link(),
            key: self.key,
        }
    }

    pub fn channel(&self) -> Option<u8> {
        match self.key {
            StreamKey::Channel(c) => Some(c),
            _ => None,
        }
    }

    pub fn pattern(&self) -> Option<PatternPair> {
        match self.key {
            StreamKey::Pattern(p) => Some(p),
            _ => None,
        }
    }

    fn to_csv_line(&self) -> String {
        let (mode, channel, tx_dir, rx_dir) = match self.key {
            StreamKey::Omni => ("omni", String::new(), String::new(), String::new()),
            StreamKey::Channel(c) => ("channel", c.to_string(), String::new(), String::new()),
            StreamKey::Pattern(p) => (
                "directional",
                String::new(),
                p.tx_direction.to_string(),
                p.rx_direction.to_string(),
            ),
        };
        let (received, rssi) = match self.rssi_dbm {
            Some(r) => ("1", r.to_string()),
            None => ("0", String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.tick,
            self.tx_id,
            self.rx_id,
            mode,
            channel,
            tx_dir,
            rx_dir,
            self.tx_power_dbm,
            self.seq,
            received,
            rssi
        )
    }

    fn parse_csv_line(line: &str, line_no: usize) -> Result<Self> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 11 {
            return Err(RtiError::parse(
                line_no,
                format!("expected 11 fields, found {}", f.len()),
            ));
        }
        fn int<T: std::str::FromStr>(s: &str, name: &str, line_no: usize) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            s.parse::<T>()
                .map_err(|e| RtiError::parse(line_no, format!("bad {name} `{s}`: {e}")))
        }
        let empty = |s: &str, name: &str| {
            if s.is_empty() {
                Ok(())
            } else {
                Err(RtiError::parse(
                    line_no,
                    format!("{name} must be empty for mode `{}`", f[3]),
                ))
            }
        };
        let key = match f[3] {
            "omni" => {
                empty(f[4], "channel")?;
                empty(f[5], "tx_dir")?;
                empty(f[6], "rx_dir")?;
                StreamKey::Omni
            }
            "channel" => {
                empty(f[5], "tx_dir")?;
                empty(f[6], "rx_dir")?;
                StreamKey::Channel(int(f[4], "channel", line_no)?)
            }
            "directional" => {
                empty(f[4], "channel")?;
                StreamKey::Pattern(PatternPair::new(
                    int(f[5], "tx_dir", line_no)?,
                    int(f[6], "rx_dir", line_no)?,
                ))
            }
            other => return Err(RtiError::parse(line_no, format!("unknown mode `{other}`"))),
        };
        let rssi_dbm = match f[9] {
            "1" => Some(int::<f64>(f[10], "rssi_dbm", line_no)?),
            "0" => {
                empty(f[10], "rssi_dbm")?;
                None
            }
            other => {
                return Err(RtiError::parse(
                    line_no,
                    format!("bad received flag `{other}`"),
                ))
            }
        };
        Ok(RssRecord {
            tick: int(f[0], "tick", line_no)?,
            tx_id: int(f[1], "tx_id", line_no)?,
            rx_id: int(f[2], "rx_id", line_no)?,
            key,
            tx_power_dbm: int(f[7], "tx_power_dbm", line_no)?,
            seq: int(f[8], "seq", line_no)?,
            rssi_dbm,
        })
    }
}

/// Records in collection order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RssTrace {
    pub records: Vec<RssRecord>,
}

impl RssTrace {
    pub fn new(records: Vec<RssRecord>) -> Self {
        RssTrace { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records with `t1 <= tick <= t2`.
    pub fn window(&self, t1: u32, t2: u32) -> impl Iterator<Item = &RssRecord> {
        self.records
            .iter()
            .filter(move |r| r.tick >= t1 && r.tick <= t2)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.to_csv_line())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        match lines.next().transpose()? {
            Some(h) if h.trim() == TRACE_HEADER => {}
            _ => return Err(RtiError::parse(1, "missing or wrong trace header")),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(RssRecord::parse_csv_line(&line, i + 2)?);
        }
        Ok(RssTrace { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        RssTrace::read_csv(std::fs::File::open(path)?)
    }
}

/// Ground-truth position of the person at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub tick: u32,
    pub position: Point2,
}

pub fn write_truth<W: Write>(samples: &[TruthSample], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{TRUTH_HEADER}")?;
    for s in samples {
        writeln!(w, "{},{},{}", s.tick, s.position.x, s.position.y)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth<R: Read>(input: R) -> Result<Vec<TruthSample>> {
    let mut lines = BufReader::new(input).lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == TRUTH_HEADER => {}
        _ => return Err(RtiError::parse(1, "missing or wrong truth header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(RtiError::parse(
                line_no,
                format!("expected 3 fields, found {}", f.len()),
            ));
        }
        let bad = |e: &dyn fmt::Display| RtiError::parse(line_no, e.to_string());
        out.push(TruthSample {
            tick: f[0].parse().map_err(|e| bad(&e))?,
            position: Point2::new(
                f[1].parse().map_err(|e| bad(&e))?,
                f[2].parse().map_err(|e| bad(&e))?,
            ),
        });
    }
    Ok(out)
}
