//! Timing observations shared by the simulator, log ingestion and inference.
//!
//! CSV layout: `source,relay,block_size_bytes,delta_ms,repetition,true_hops`.
//! `repetition` identifies the block instance a delta was measured on: the
//! repetition index for simulated data, the block's ordinal in the capture
//! for recorded logs. `true_hops` is empty when ground truth is unknown.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// Dense peer index into a [`PeerTable`].
pub type PeerId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub source: PeerId,
    pub relay: PeerId,
    pub block_size: u64,
    /// Half-RTT-adjusted arrival difference, ms.
    pub delta_ms: f64,
    pub repetition: u32,
    pub true_hops: Option<u32>,
}

/// Interned peer names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeerTable {
    names: Vec<String>,
    index: HashMap<String, PeerId>,
}

impl PeerTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Peers `0..n` named by their decimal index.
    pub fn numeric(n: usize) -> Self {
        let mut t = Self::new();
        for i in 0..n {
            t.intern(&i.to_string());
        }
        t
    }

    pub fn intern(&mut self, name: &str) -> PeerId {
        if let Some(id) = self.index.get(name) {
            return *id;
        }
        let id = self.names.len() as PeerId;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<PeerId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: PeerId) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    pub peers: PeerTable,
    pub observations: Vec<Observation>,
}

#[derive(Serialize, Deserialize)]
struct ObservationRow {
    source: String,
    relay: String,
    block_size_bytes: u64,
    delta_ms: f64,
    repetition: u32,
    true_hops: Option<u32>,
}

impl ObservationSet {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        for o in &self.observations {
            wtr.serialize(ObservationRow {
                source: self.peers.name(o.source).to_owned(),
                relay: self.peers.name(o.relay).to_owned(),
                block_size_bytes: o.block_size,
                delta_ms: o.delta_ms,
                repetition: o.repetition,
                true_hops: o.true_hops,
            })?;
        }
        if self.observations.is_empty() {
            wtr.write_record([
                "source",
                "relay",
                "block_size_bytes",
                "delta_ms",
                "repetition",
                "true_hops",
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads observations, interning peer names into `peers`.
    pub fn read_csv_into<R: Read>(reader: R, mut peers: PeerTable) -> Result<Self, csv::Error> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut observations = Vec::new();
        for row in rdr.deserialize() {
            let row: ObservationRow = row?;
            observations.push(Observation {
                source: peers.intern(&row.source),
                relay: peers.intern(&row.relay),
                block_size: row.block_size_bytes,
                delta_ms: row.delta_ms,
                repetition: row.repetition,
                true_hops: row.true_hops,
            });
        }
        Ok(Self {
            peers,
            observations,
        })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, csv::Error> {
        Self::read_csv_into(reader, PeerTable::new())
    }
}
