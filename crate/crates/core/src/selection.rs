//! Choosing the informative pattern pairs of each directed link.
//!
//! Ties are always broken by ascending (tx_direction, rx_direction).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::{angle_to_link, Link, NetworkLayout, PatternPair};
use crate::linkstats::stable_sum;
use crate::trace::{RssTrace, StreamKey};

/// Angles are compared after rounding to this resolution, so directions that
/// are symmetric about the link tie exactly.
const ANGLE_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMethod {
    Location { n_transmitter: u8, n_receiver: u8 },
    FadeLevel { k: usize },
    Prr { k: usize },
    All,
}

impl SelectionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionMethod::Location { .. } => "location",
            SelectionMethod::FadeLevel { .. } => "fadelevel",
            SelectionMethod::Prr { .. } => "prr",
            SelectionMethod::All => "all",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionMethod::Location {
                n_transmitter,
                n_receiver,
            } => {
                if !(1..=6).contains(&n_transmitter) || !(1..=6).contains(&n_receiver) {
                    return Err(RtiError::Config(format!(
                        "location selection needs 1..=6 directions per side, got ({n_transmitter}, {n_receiver})"
                    )));
                }
            }
            SelectionMethod::FadeLevel { k } | SelectionMethod::Prr { k } => {
                if !(1..=36).contains(&k) {
                    return Err(RtiError::Config(format!("k must be in 1..=36, got {k}")));
                }
            }
            SelectionMethod::All => {}
        }
        Ok(())
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMethod::Location {
                n_transmitter,
                n_receiver,
            } if n_transmitter == n_receiver => {
                write!(f, "location({n_transmitter})")
            }
            SelectionMethod::Location {
                n_transmitter,
                n_receiver,
            } => write!(f, "location({n_transmitter},{n_receiver})"),
            SelectionMethod::FadeLevel { k } => write!(f, "fadelevel({k})"),
            SelectionMethod::Prr { k } => write!(f, "prr({k})"),
            SelectionMethod::All => write!(f, "all"),
        }
    }
}

impl FromStr for SelectionMethod {
    type Err = RtiError;

    /// Parses `all`, `location(n)`, `location(nt,nr)`, `fadelevel(k)`, `prr(k)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "all" {
            return Ok(SelectionMethod::All);
        }
        let bad = || RtiError::Config(format!("unrecognized selection `{s}`"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args: Vec<usize> = rest
            .strip_suffix(')')
            .ok_or_else(bad)?
            .split(',')
            .map(|a| a.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let method = match (name.trim(), args.as_slice()) {
            ("location", [n]) => SelectionMethod::Location {
                n_transmitter: (*n).min(255) as u8,
                n_receiver: (*n).min(255) as u8,
            },
            ("location", [a, b]) => SelectionMethod::Location {
                n_transmitter: (*a).min(255) as u8,
                n_receiver: (*b).min(255) as u8,
            },
            ("fadelevel", [k]) => SelectionMethod::FadeLevel { k: *k },
            ("prr", [k]) => SelectionMethod::Prr { k: *k },
            _ => return Err(bad()),
        };
        method.validate()?;
        Ok(method)
    }
}

/// The chosen set for one directed link, in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSelection {
    pub link: Link,
    pub pairs: Vec<PatternPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    pub links: Vec<LinkSelection>,
}

impl SelectionResult {
    pub fn pairs_for(&self, link: Link) -> Option<&[PatternPair]> {
        self.links
            .iter()
            .find(|l| l.link == link)
            .map(|l| l.pairs.as_slice())
    }

    /// One `link <tx> <rx> method <name> pairs (t,r) ...` line per link.
    pub fn to_text(&self) -> String {
        let name = self.method.name();
        let mut out = String::new();
        for l in &self.links {
            out.push_str(&format!(
                "link {} {} method {} pairs",
                l.link.tx, l.link.rx, name
            ));
            for p in &l.pairs {
                out.push_str(&format!(" {p}"));
            }
            out.push('\n');
        }
        out
    }
}

/// One parsed line of a selection file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionLine {
    pub link: Link,
    pub method: String,
    pub pairs: Vec<PatternPair>,
}

pub fn parse_selection_text(text: &str) -> Result<Vec<SelectionLine>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 6 || f[0] != "link" || f[3] != "method" || f[5] != "pairs" {
            return Err(RtiError::parse(
                line_no,
                "expected `link <tx> <rx> method <name> pairs ...`",
            ));
        }
        let id = |s: &str| {
            s.parse::<u32>()
                .map_err(|e| RtiError::parse(line_no, format!("bad node id `{s}`: {e}")))
        };
        let pairs = f[6..]
            .iter()
            .map(|p| {
                let inner = p
                    .strip_prefix('(')
                    .and_then(|p| p.strip_suffix(')'))
                    .ok_or_else(|| RtiError::parse(line_no, format!("bad pair `{p}`")))?;
                let (a, b) = inner
                    .split_once(',')
                    .ok_or_else(|| RtiError::parse(line_no, format!("bad pair `{p}`")))?;
                let dir = |s: &str| {
                    s.parse::<u8>()
                        .map_err(|e| RtiError::parse(line_no, format!("bad direction `{s}`: {e}")))
                };
                Ok(PatternPair::new(dir(a)?, dir(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(SelectionLine {
            link: Link {
                tx: id(f[1])?,
                rx: id(f[2])?,
            },
            method: f[4].to_string(),
            pairs,
        });
    }
    Ok(out)
}

/// Directions of `node_id` ranked by angle to `toward_id`, ties by index.
fn ranked_directions(layout: &NetworkLayout, node_id: u32, toward_id: u32) -> Result<Vec<u8>> {
    let node = layout
        .node(node_id)
        .ok_or_else(|| RtiError::invalid(format!("unknown node {node_id}")))?;
    let other = layout
        .node(toward_id)
        .ok_or_else(|| RtiError::invalid(format!("unknown node {toward_id}")))?
        .position;
    let mut dirs = (1..=node.num_directions)
        .map(|d| Ok((d, angle_to_link(node, d, other)?)))
        .collect::<Result<Vec<_>>>()?;
    dirs.sort_by_key(|&(d, angle)| ((angle / ANGLE_TIE_EPS).round() as i64, d));
    Ok(dirs.into_iter().map(|(d, _)| d).collect())
}

/// Geometry-only selection: the best-aligned directions on each side and
/// their Cartesian product.
pub fn select_location(
    layout: &NetworkLayout,
    link: Link,
    n_transmitter: u8,
    n_receiver: u8,
) -> Result<LinkSelection> {
    SelectionMethod::Location {
        n_transmitter,
        n_receiver,
    }
    .validate()?;
    let tx = ranked_directions(layout, link.tx, link.rx)?;
    let rx = ranked_directions(layout, link.rx, link.tx)?;
    if tx.len() < n_transmitter as usize || rx.len() < n_receiver as usize {
        return Err(RtiError::invalid(format!(
            "link {link} has too few antenna directions"
        )));
    }
    let pairs = tx[..n_transmitter as usize]
        .iter()
        .flat_map(|&t| {
            rx[..n_receiver as usize]
                .iter()
                .map(move |&r| PatternPair::new(t, r))
        })
        .collect();
    Ok(LinkSelection { link, pairs })
}

/// Per link, per pattern pair: summed normalized RSS over the calibration window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FadeLevelTable {
    pub levels: BTreeMap<Link, BTreeMap<PatternPair, f64>>,
}

impl FadeLevelTable {
    pub fn get(&self, link: Link, pair: PatternPair) -> Option<f64> {
        self.levels.get(&link).and_then(|m| m.get(&pair)).copied()
    }
}

/// Fade level `h` of every pattern pair observed in `[t1, t2]`: the sum of
/// `rssi - tx_power` over received packets. Pairs never received are left out.
pub fn compute_fade_levels(trace: &RssTrace, t1: u32, t2: u32) -> Result<FadeLevelTable> {
    if t1 > t2 {
        return Err(RtiError::invalid(format!(
            "empty calibration window [{t1}, {t2}]"
        )));
    }
    let mut acc: BTreeMap<Link, BTreeMap<PatternPair, Vec<f64>>> = BTreeMap::new();
    for r in trace.window(t1, t2) {
        let StreamKey::Pattern(pair) = r.key else {
            continue;
        };
        let values = acc.entry(r.link()).or_default().entry(pair).or_default();
        if let Some(rssi) = r.rssi_dbm {
            values.push(rssi - r.tx_power_dbm);
        }
    }
    let mut table = FadeLevelTable::default();
    for (link, pairs) in acc {
        let entry = table.levels.entry(link).or_default();
        for (pair, mut values) in pairs {
            if values.is_empty() {
                warn!("pattern pair {pair} on link {link} never received during calibration; excluded");
                continue;
            }
            entry.insert(pair, stable_sum(&mut values));
        }
    }
    Ok(table)
}

/// The `k` pairs with the largest fade level (least faded).
pub fn select_fade_level(table: &FadeLevelTable, link: Link, k: usize) -> Result<LinkSelection> {
    let available = table.levels.get(&link).map(BTreeMap::len).unwrap_or(0);
    if k == 0 || k > available {
        return Err(RtiError::invalid(format!(
            "k = {k} but link {link} has {available} pattern pair(s) with a fade level"
        )));
    }
    let mut ranked: Vec<(PatternPair, f64)> =
        table.levels[&link].iter().map(|(p, h)| (*p, *h)).collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps it for ties.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(LinkSelection {
        link,
        pairs: ranked.into_iter().take(k).map(|(p, _)| p).collect(),
    })
}

/// Received and sent packet counts per pattern pair of one link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrrCount {
    pub received: u64,
    pub sent: u64,
}

impl PrrCount {
    pub fn rate(&self) -> f64 {
        self.received as f64 / self.sent as f64
    }
}

pub fn prr_counts(
    trace: &RssTrace,
    t1: u32,
    t2: u32,
    link: Link,
) -> BTreeMap<PatternPair, PrrCount> {
    let mut counts: BTreeMap<PatternPair, PrrCount> = BTreeMap::new();
    for r in trace.window(t1, t2).filter(|r| r.link() == link) {
        let StreamKey::Pattern(pair) = r.key else {
            continue;
        };
        let c = counts.entry(pair).or_default();
        c.sent += 1;
        if r.received() {
            c.received += 1;
        }
    }
    counts
}

/// The `k` pairs with the highest packet reception rate during `[t1, t2]`.
/// Rates are compared exactly as fractions.
pub fn select_prr(
    trace: &RssTrace,
    t1: u32,
    t2: u32,
    link: Link,
    k: usize,
) -> Result<LinkSelection> {
    if t1 > t2 {
        return Err(RtiError::invalid(format!(
            "empty calibration window [{t1}, {t2}]"
        )));
    }
    let counts = prr_counts(trace, t1, t2, link);
    select_prr_from_counts(&counts, link, k)
}

pub fn select_prr_from_counts(
    counts: &BTreeMap<PatternPair, PrrCount>,
    link: Link,
    k: usize,
) -> Result<LinkSelection> {
    let mut ranked: Vec<(PatternPair, PrrCount)> = counts
        .iter()
        .filter(|(p, c)| {
            if c.sent == 0 {
                warn!("pattern pair {p} on link {link} had no transmissions; excluded");
            }
            c.sent > 0
        })
        .map(|(p, c)| (*p, *c))
        .collect();
    if k == 0 || k > ranked.len() {
        return Err(RtiError::invalid(format!(
            "k = {k} but link {link} has {} pattern pair(s) with transmissions",
            ranked.len()
        )));
    }
    // a/b > c/d  <=>  a*d > c*b for positive denominators.
    ranked.sort_by(|(_, a), (_, b)| {
        (u128::from(b.received) * u128::from(a.sent))
            .cmp(&(u128::from(a.received) * u128::from(b.sent)))
    });
    Ok(LinkSelection {
        link,
        pairs: ranked.into_iter().take(k).map(|(p, _)| p).collect(),
    })
}

fn clamp_k(link: Link, k: usize, available: usize) -> usize {
    if available < k {
        warn!("link {link}: only {available} eligible pattern pair(s), wanted {k}");
    }
    k.min(available)
}

/// Runs `method` for every link of `layout`. Calibration-based methods use
/// the trace window `[t1, t2]`.
pub fn select_all_links(
    method: SelectionMethod,
    layout: &NetworkLayout,
    trace: &RssTrace,
    t1: u32,
    t2: u32,
) -> Result<SelectionResult> {
    method.validate()?;
    let links = match method {
        SelectionMethod::Location {
            n_transmitter,
            n_receiver,
        } => layout
            .links()
            .iter()
            .map(|&l| select_location(layout, l, n_transmitter, n_receiver))
            .collect::<Result<Vec<_>>>()?,
        SelectionMethod::All => layout
            .links()
            .iter()
            .map(|&link| {
                let n = layout.node(link.tx).map(|n| n.num_directions).unwrap_or(6);
                LinkSelection {
                    link,
                    pairs: PatternPair::all(n),
                }
            })
            .collect(),
        SelectionMethod::FadeLevel { k } => {
            let table = compute_fade_levels(trace, t1, t2)?;
            layout
                .links()
                .iter()
                .map(|&l| {
                    let available = table.levels.get(&l).map(BTreeMap::len).unwrap_or(0);
                    match clamp_k(l, k, available) {
                        0 => Ok(LinkSelection {
                            link: l,
                            pairs: Vec::new(),
                        }),
                        k => select_fade_level(&table, l, k),
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
        SelectionMethod::Prr { k } => {
            let mut per_link: BTreeMap<Link, BTreeMap<PatternPair, PrrCount>> = BTreeMap::new();
            for r in trace.window(t1, t2) {
                let StreamKey::Pattern(pair) = r.key else {
                    continue;
                };
                let c = per_link
                    .entry(r.link())
                    .or_default()
                    .entry(pair)
                    .or_default();
                c.sent += 1;
                if r.received() {
                    c.received += 1;
                }
            }
            layout
                .links()
                .iter()
                .map(|&l| {
                    let counts = per_link.remove(&l).unwrap_or_default();
                    let available = counts.values().filter(|c| c.sent > 0).count();
                    match clamp_k(l, k, available) {
                        0 => Ok(LinkSelection {
                            link: l,
                            pairs: Vec::new(),
                        }),
                        k => select_prr_from_counts(&counts, l, k),
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(SelectionResult { method, links })
}
