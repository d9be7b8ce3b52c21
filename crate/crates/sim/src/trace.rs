//! State traces: CSV with header `slot,device,o_level,h_level,w_level,has_task`.
//!
//! Rows may come in any order; each device needs every slot from 1 to its
//! last one. Levels of idle rows are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use offload_core::model::DeviceState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: u64,
    pub device: usize,
    pub o_level: usize,
    pub h_level: usize,
    pub w_level: usize,
    #[serde(deserialize_with = "flag")]
    pub has_task: bool,
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.as_str() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(serde::de::Error::custom(format!("has_task: expected 0/1/true/false, got `{other}`"))),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("device {device}: slot {slot} is missing")]
    Gap { device: usize, slot: u64 },
    #[error("device {device}: slot {slot} appears twice")]
    Duplicate { device: usize, slot: u64 },
}

pub fn parse_trace<R: std::io::Read>(reader: R) -> Result<BTreeMap<usize, Vec<DeviceState>>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows: BTreeMap<usize, BTreeMap<u64, DeviceState>> = BTreeMap::new();
    for rec in rdr.deserialize() {
        let r: TraceRow = rec?;
        let state = if r.has_task {
            DeviceState::task(r.o_level, r.h_level, r.w_level)
        } else {
            DeviceState::IDLE
        };
        if rows.entry(r.device).or_default().insert(r.slot, state).is_some() {
            return Err(TraceError::Duplicate {
                device: r.device,
                slot: r.slot,
            });
        }
    }
    let mut out = BTreeMap::new();
    for (device, slots) in rows {
        let mut states = Vec::with_capacity(slots.len());
        for (i, (slot, s)) in slots.into_iter().enumerate() {
            if slot != i as u64 + 1 {
                return Err(TraceError::Gap {
                    device,
                    slot: i as u64 + 1,
                });
            }
            states.push(s);
        }
        out.insert(device, states);
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<BTreeMap<usize, Vec<DeviceState>>, TraceError> {
    let f = std::fs::File::open(path).map_err(csv::Error::from)?;
    parse_trace(std::io::BufReader::new(f))
}

pub fn write_trace<W: std::io::Write>(writer: W, states: &BTreeMap<usize, Vec<DeviceState>>) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(writer);
    for (&device, seq) in states {
        for (i, s) in seq.iter().enumerate() {
            w.serialize(TraceRow {
                slot: i as u64 + 1,
                device,
                o_level: s.o_level,
                h_level: s.h_level,
                w_level: s.w_level,
                has_task: s.has_task,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
