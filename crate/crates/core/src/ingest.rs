//! Turns recorded announcement logs into half-RTT-adjusted observations.
//!
//! Input is newline-delimited JSON with two record kinds interleaved in
//! capture order:
//!
//! ```text
//! {"kind":"announce","peer":"p1","block":"00ab..","ts_ms":1000.0,"size_bytes":15678}
//! {"kind":"rtt_sample","peer":"p1","rtt_ms":60.0,"ts_ms":990.0}
//! ```
//!
//! Each announcement is shifted back by half the peer's smoothed RTT at the
//! time it arrived. The earliest adjusted announcer of a block is taken as its
//! miner and every later announcer yields one observation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::{Observation, ObservationSet, PeerId, PeerTable};

/// RFC 6298 smoothing gain.
pub const DEFAULT_ALPHA: f64 = 0.125;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("RTT sample for {peer} must be positive, got {sample}")]
    NonPositiveSample { peer: String, sample: f64 },
    #[error("smoothing gain {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-peer exponentially weighted RTT average.
#[derive(Debug, Clone, PartialEq)]
pub struct RttEstimator {
    alpha: f64,
    smoothed: HashMap<String, f64>,
}

impl Default for RttEstimator {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA).expect("default gain is valid")
    }
}

impl RttEstimator {
    pub fn new(alpha: f64) -> Result<Self, IngestError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(IngestError::InvalidAlpha(alpha));
        }
        Ok(Self {
            alpha,
            smoothed: HashMap::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// First sample initializes; later ones blend in with gain `alpha`.
    pub fn update(&mut self, peer: &str, sample: f64) -> Result<f64, IngestError> {
        if !(sample.is_finite() && sample > 0.0) {
            return Err(IngestError::NonPositiveSample {
                peer: peer.to_owned(),
                sample,
            });
        }
        let alpha = self.alpha;
        let srtt = self
            .smoothed
            .entry(peer.to_owned())
            .and_modify(|s| *s = (1.0 - alpha) * *s + alpha * sample)
            .or_insert(sample);
        Ok(*srtt)
    }

    pub fn get(&self, peer: &str) -> Option<f64> {
        self.smoothed.get(peer).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Announce {
        peer: String,
        block: String,
        ts_ms: f64,
        size_bytes: u64,
    },
    RttSample {
        peer: String,
        rtt_ms: f64,
        ts_ms: f64,
    },
}

impl LogRecord {
    pub fn ts_ms(&self) -> f64 {
        match self {
            Self::Announce { ts_ms, .. } | Self::RttSample { ts_ms, .. } => *ts_ms,
        }
    }
}

pub fn read_ndjson<R: BufRead>(reader: R) -> Result<Vec<LogRecord>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| IngestError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_ndjson<W: Write>(records: &[LogRecord], mut writer: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// How the block source is chosen among its announcers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceOrdering {
    /// Earliest half-RTT-adjusted arrival.
    #[default]
    Adjusted,
    /// Earliest raw arrival.
    Raw,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestDiagnostics {
    pub announcements: usize,
    pub rtt_samples: usize,
    /// Announcements from peers without an RTT estimate yet.
    pub skipped_no_rtt: usize,
    /// Records whose timestamp went backwards.
    pub clock_violations: usize,
    pub rejected_rtt_samples: usize,
    pub duplicate_announcements: usize,
    pub single_announcer_blocks: usize,
    /// Observations with delta ≤ 0 (kept, but suspicious).
    pub nonpositive_deltas: usize,
    pub blocks: usize,
}

struct Arrival {
    peer: PeerId,
    raw: f64,
    adjusted: f64,
}

struct BlockLog {
    size: u64,
    arrivals: Vec<Arrival>,
}

/// Streaming single-pass ingestion.
pub struct Ingestor {
    rtt: RttEstimator,
    ordering: SourceOrdering,
    peers: PeerTable,
    blocks: Vec<BlockLog>,
    block_index: HashMap<String, usize>,
    last_ts: f64,
    diag: IngestDiagnostics,
}

impl Ingestor {
    pub fn new(rtt: RttEstimator, ordering: SourceOrdering) -> Self {
        Self {
            rtt,
            ordering,
            peers: PeerTable::new(),
            blocks: Vec::new(),
            block_index: HashMap::new(),
            last_ts: f64::NEG_INFINITY,
            diag: IngestDiagnostics::default(),
        }
    }

    pub fn push(&mut self, record: &LogRecord) {
        let ts = record.ts_ms();
        if !ts.is_finite() || ts < self.last_ts {
            self.diag.clock_violations += 1;
            return;
        }
        self.last_ts = ts;
        match record {
            LogRecord::RttSample { peer, rtt_ms, .. } => {
                self.diag.rtt_samples += 1;
                if self.rtt.update(peer, *rtt_ms).is_err() {
                    self.diag.rejected_rtt_samples += 1;
                }
            }
            LogRecord::Announce {
                peer,
                block,
                ts_ms,
                size_bytes,
            } => {
                self.diag.announcements += 1;
                let Some(srtt) = self.rtt.get(peer) else {
                    self.diag.skipped_no_rtt += 1;
                    return;
                };
                let peer = self.peers.intern(peer);
                let next = self.blocks.len();
                let idx = *self.block_index.entry(block.clone()).or_insert(next);
                if idx == next {
                    self.blocks.push(BlockLog {
                        size: *size_bytes,
                        arrivals: Vec::new(),
                    });
                }
                let log = &mut self.blocks[idx];
                if log.arrivals.iter().any(|a| a.peer == peer) {
                    self.diag.duplicate_announcements += 1;
                    return;
                }
                log.arrivals.push(Arrival {
                    peer,
                    raw: *ts_ms,
                    adjusted: ts_ms - srtt / 2.0,
                });
            }
        }
    }

    pub fn finish(mut self) -> (ObservationSet, IngestDiagnostics) {
        let mut observations = Vec::new();
        self.diag.blocks = self.blocks.len();
        for (ordinal, block) in self.blocks.iter().enumerate() {
            if block.arrivals.len() < 2 {
                self.diag.single_announcer_blocks += 1;
                continue;
            }
            let key = |a: &Arrival| match self.ordering {
                SourceOrdering::Adjusted => a.adjusted,
                SourceOrdering::Raw => a.raw,
            };
            let source = block
                .arrivals
                .iter()
                .min_by(|x, y| {
                    key(x)
                        .total_cmp(&key(y))
                        .then_with(|| self.peers.name(x.peer).cmp(self.peers.name(y.peer)))
                })
                .expect("at least two arrivals");
            for a in block.arrivals.iter().filter(|a| a.peer != source.peer) {
                let delta_ms = a.adjusted - source.adjusted;
                if delta_ms <= 0.0 {
                    self.diag.nonpositive_deltas += 1;
                }
                observations.push(Observation {
                    source: source.peer,
                    relay: a.peer,
                    block_size: block.size,
                    delta_ms,
                    repetition: ordinal as u32,
                    true_hops: None,
                });
            }
        }
        (
            ObservationSet {
                peers: self.peers,
                observations,
            },
            self.diag,
        )
    }
}

/// Runs a whole log through an [`Ingestor`].
pub fn build_observations(
    records: &[LogRecord],
    rtt: RttEstimator,
    ordering: SourceOrdering,
) -> (ObservationSet, IngestDiagnostics) {
    let mut ing = Ingestor::new(rtt, ordering);
    for r in records {
        ing.push(r);
    }
    ing.finish()
}

/// Peers that are the source of at least `min_blocks` distinct blocks.
pub fn filter_miners(observations: &[Observation], min_blocks: usize) -> BTreeSet<PeerId> {
    let mut blocks: BTreeMap<PeerId, BTreeSet<u32>> = BTreeMap::new();
    for o in observations {
        blocks.entry(o.source).or_default().insert(o.repetition);
    }
    blocks
        .into_iter()
        .filter(|(_, b)| b.len() >= min_blocks.max(1))
        .map(|(p, _)| p)
        .collect()
}

/// Renders simulated observations as a capture log.
///
/// Each (repetition, source) becomes one block starting at
/// `ordinal · spacing_ms`; peers announce at their arrival time plus half
/// their RTT, and every peer's RTT is sampled once at time zero.
pub fn synthesize_log(
    set: &ObservationSet,
    rtt_ms: &dyn Fn(PeerId) -> f64,
    spacing_ms: f64,
) -> Vec<LogRecord> {
    let mut blocks: BTreeMap<(u32, PeerId), Vec<&Observation>> = BTreeMap::new();
    for o in &set.observations {
        blocks.entry((o.repetition, o.source)).or_default().push(o);
    }
    let mut peers: BTreeSet<PeerId> = BTreeSet::new();
    let mut announces: Vec<(f64, LogRecord)> = Vec::new();
    for (ordinal, ((rep, source), obs)) in blocks.iter().enumerate() {
        let start = ordinal as f64 * spacing_ms;
        let hash = format!("r{rep}-s{}", set.peers.name(*source));
        let size = obs[0].block_size;
        let mut announce = |peer: PeerId, at: f64| {
            peers.insert(peer);
            let ts = at + rtt_ms(peer) / 2.0;
            announces.push((
                ts,
                LogRecord::Announce {
                    peer: set.peers.name(peer).to_owned(),
                    block: hash.clone(),
                    ts_ms: ts,
                    size_bytes: size,
                },
            ));
        };
        announce(*source, start);
        for o in obs {
            announce(o.relay, start + o.delta_ms);
        }
    }
    announces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<LogRecord> = peers
        .iter()
        .map(|p| LogRecord::RttSample {
            peer: set.peers.name(*p).to_owned(),
            rtt_ms: rtt_ms(*p),
            ts_ms: 0.0,
        })
        .collect();
    out.extend(announces.into_iter().map(|(_, r)| r));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn announce(peer: &str, block: &str, ts: f64) -> LogRecord {
        LogRecord::Announce {
            peer: peer.into(),
            block: block.into(),
            ts_ms: ts,
            size_bytes: 1000,
        }
    }

    fn rtt(peer: &str, rtt: f64, ts: f64) -> LogRecord {
        LogRecord::RttSample {
            peer: peer.into(),
            rtt_ms: rtt,
            ts_ms: ts,
        }
    }

    #[test]
    fn ewma_update() {
        let mut e = RttEstimator::default();
        assert_eq!(e.update("a", 100.0).unwrap(), 100.0);
        assert_eq!(e.update("a", 200.0).unwrap(), 112.5);
        assert_eq!(e.update("b", 40.0).unwrap(), 40.0);
        assert_eq!(e.get("a"), Some(112.5));
        assert!(e.update("a", 0.0).is_err());
        assert!(e.update("a", -5.0).is_err());
        assert!(RttEstimator::new(0.0).is_err());
        assert!(RttEstimator::new(1.5).is_err());
    }

    #[test]
    fn ewma_fixed_point() {
        let mut e = RttEstimator::default();
        for _ in 0..1000 {
            e.update("a", 37.5).unwrap();
        }
        assert_eq!(e.get("a"), Some(37.5));
    }

    #[test]
    fn half_rtt_adjustment() {
        let log = vec![
            rtt("S", 60.0, 0.0),
            rtt("R", 100.0, 0.0),
            announce("S", "b1", 1000.0),
            announce("R", "b1", 1500.0),
        ];
        let (set, diag) =
            build_observations(&log, RttEstimator::default(), SourceOrdering::Adjusted);
        assert_eq!(set.observations.len(), 1);
        let o = set.observations[0];
        assert_eq!(set.peers.name(o.source), "S");
        assert_eq!(o.delta_ms, 480.0);
        assert_eq!(diag.blocks, 1);
    }

    #[test]
    fn adjusted_order_picks_source() {
        // Raw: S first. Adjusted: R at 1010 − 100 = 910 < S at 1000 − 5 = 995.
        let log = vec![
            rtt("S", 10.0, 0.0),
            rtt("R", 200.0, 0.0),
            announce("S", "b", 1000.0),
            announce("R", "b", 1010.0),
        ];
        let (set, _) = build_observations(&log, RttEstimator::default(), SourceOrdering::Adjusted);
        assert_eq!(set.peers.name(set.observations[0].source), "R");
        assert_eq!(set.observations[0].delta_ms, 85.0);
        let (raw, diag) = build_observations(&log, RttEstimator::default(), SourceOrdering::Raw);
        assert_eq!(raw.peers.name(raw.observations[0].source), "S");
        assert_eq!(raw.observations[0].delta_ms, -85.0);
        assert_eq!(diag.nonpositive_deltas, 1);
    }

    #[test]
    fn skips_and_diagnostics() {
        let log = vec![
            rtt("A", 10.0, 0.0),
            rtt("B", 10.0, 0.0),
            announce("A", "solo", 5.0),
            announce("X", "b", 10.0),
            announce("A", "b", 20.0),
            announce("A", "b", 21.0),
            announce("B", "b", 30.0),
            announce("B", "b2", 25.0),
        ];
        let (set, diag) =
            build_observations(&log, RttEstimator::default(), SourceOrdering::Adjusted);
        assert_eq!(diag.skipped_no_rtt, 1);
        assert_eq!(diag.duplicate_announcements, 1);
        assert_eq!(diag.clock_violations, 1);
        assert_eq!(diag.single_announcer_blocks, 1);
        assert_eq!(set.observations.len(), 1);
        assert_eq!(set.observations[0].delta_ms, 10.0);
        assert_eq!(set.observations[0].repetition, 1);
    }

    #[test]
    fn ties_break_by_peer_name() {
        let log = vec![
            rtt("b", 10.0, 0.0),
            rtt("a", 10.0, 0.0),
            announce("b", "x", 50.0),
            announce("a", "x", 50.0),
        ];
        let (set, _) = build_observations(&log, RttEstimator::default(), SourceOrdering::Adjusted);
        assert_eq!(set.peers.name(set.observations[0].source), "a");
    }

    #[test]
    fn ndjson_round_trip() {
        let text = "{\"kind\":\"announce\",\"peer\":\"p\",\"block\":\"h\",\"ts_ms\":1.5,\"size_bytes\":9}\n\n\
                    {\"kind\":\"rtt_sample\",\"peer\":\"p\",\"rtt_ms\":60.0,\"ts_ms\":2.0}\n";
        let recs = read_ndjson(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        let mut buf = Vec::new();
        write_ndjson(&recs, &mut buf).unwrap();
        assert_eq!(read_ndjson(buf.as_slice()).unwrap(), recs);
        let err = read_ndjson("{\"kind\":\"nope\"}".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 1"));
    }

    #[test]
    fn miner_filter() {
        let obs = |s: PeerId, rep: u32| Observation {
            source: s,
            relay: 99,
            block_size: 1,
            delta_ms: 1.0,
            repetition: rep,
            true_hops: None,
        };
        let mut v: Vec<Observation> = (0..4).map(|r| obs(1, r)).collect();
        v.extend((0..5).map(|r| obs(2, 10 + r)));
        v.push(obs(2, 10));
        assert_eq!(filter_miners(&v, 5), BTreeSet::from([2]));
        assert_eq!(filter_miners(&v, 1), BTreeSet::from([1, 2]));
    }
}
