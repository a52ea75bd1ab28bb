//! File formats: trajectory CSV, the compact binary trajectory layout, and
//! JSON helpers.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic   5 bytes  "KWSK1"
//! d       u32
//! N       u32
//! m       u64      number of snapshots
//! seed    u64
//! stream  u64
//! m × { t: f64, ceil(N^d / 64) × u64 occupation words, site i at bit i % 64 of word i / 64 }
//! ```

use std::io::{Read, Write};

use serde::{Serialize, Serializer};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::lattice::{Configuration, Torus};

pub const MAGIC: &[u8; 5] = b"KWSK1";

/// Serializes a float, writing non-finite values as the strings `"inf"`,
/// `"-inf"` and `"nan"`.
pub fn extended_float<S: Serializer>(value: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else if value.is_nan() {
        s.serialize_str("nan")
    } else if *value > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))
}

/// Writes `t,site,occupancy` rows for every snapshot.
pub fn write_trajectory_csv<W: Write>(trajectory: &Trajectory, mut w: W) -> Result<()> {
    writeln!(w, "t,site,occupancy")?;
    for (t, s) in trajectory.times.iter().zip(&trajectory.snapshots) {
        for x in 0..s.len() {
            writeln!(w, "{t:.16e},{x},{}", s.occ(x))?;
        }
    }
    Ok(())
}

pub fn write_trajectory_binary<W: Write>(torus: &Torus, trajectory: &Trajectory, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(torus.dim() as u32).to_le_bytes())?;
    w.write_all(&(torus.side() as u32).to_le_bytes())?;
    w.write_all(&(trajectory.snapshots.len() as u64).to_le_bytes())?;
    w.write_all(&trajectory.seed.to_le_bytes())?;
    w.write_all(&trajectory.stream.to_le_bytes())?;
    for (t, s) in trajectory.times.iter().zip(&trajectory.snapshots) {
        if s.len() != torus.sites() {
            return Err(Error::Mismatch("snapshot size differs from the torus".into()));
        }
        w.write_all(&t.to_le_bytes())?;
        for word in s.words() {
            w.write_all(&word.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const K: usize, R: Read>(r: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Reads a trajectory written by [`write_trajectory_binary`]; event counters
/// are not stored and come back as zero.
pub fn read_trajectory_binary<R: Read>(mut r: R) -> Result<(Torus, Trajectory)> {
    let magic: [u8; 5] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Serialization("not a KWSK1 trajectory file".into()));
    }
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let side = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let stream = u64::from_le_bytes(read_array(&mut r)?);
    let torus = Torus::new(dim, side)?;
    let words = torus.sites().div_ceil(64);
    let mut times = Vec::with_capacity(count);
    let mut snapshots = Vec::with_capacity(count);
    for _ in 0..count {
        times.push(f64::from_le_bytes(read_array(&mut r)?));
        let mut ws = Vec::with_capacity(words);
        for _ in 0..words {
            ws.push(u64::from_le_bytes(read_array(&mut r)?));
        }
        snapshots.push(Configuration::from_words(ws, torus.sites())?);
    }
    Ok((
        torus,
        Trajectory {
            times,
            snapshots,
            seed,
            stream,
            events: 0,
            rejected: 0,
        },
    ))
}
