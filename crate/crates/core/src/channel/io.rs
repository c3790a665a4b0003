//! Binary channel container.
//!
//! Layout, all little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `MCNC` | 4 bytes |
//! | version | u8 (currently 1) |
//! | side | u8 (0 broadcast, 1 multiple access) |
//! | users, rows, cols, subcarriers | 4 × u32 |
//! | partition, per block: user, start, len | 3 × u32 each |
//! | has seed, seed | u8, u64 |
//! | scenario hash | 32 bytes |
//! | noise count (1 or N) | u32 |
//! | noise matrices, row-major (re, im) | f64 pairs |
//! | channel matrices, row-major (re, im) | f64 pairs |

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ChannelSet, LinkSide, UserBlock};
use crate::error::{Error, Result};
use crate::linalg::{c64, CMat};

pub const FORMAT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"MCNC";

pub fn encode_channels(set: &ChannelSet) -> Vec<u8> {
    let mut out = Vec::new();
    let (rows, cols) = set.matrix(0).shape();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(match set.side() {
        LinkSide::Broadcast => 0,
        LinkSide::MultipleAccess => 1,
    });
    for v in [set.num_users(), rows, cols, set.num_subcarriers()] {
        out.write_u32::<LittleEndian>(v as u32).unwrap();
    }
    for b in set.blocks() {
        for v in [b.user, b.start, b.len] {
            out.write_u32::<LittleEndian>(v as u32).unwrap();
        }
    }
    out.push(set.seed().is_some() as u8);
    out.write_u64::<LittleEndian>(set.seed().unwrap_or(0)).unwrap();
    out.extend_from_slice(&set.scenario_hash());
    out.write_u32::<LittleEndian>(set.noise_matrices().len() as u32).unwrap();
    for m in set.noise_matrices().iter().chain(set.matrices()) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.write_f64::<LittleEndian>(m[(r, c)].re).unwrap();
                out.write_f64::<LittleEndian>(m[(r, c)].im).unwrap();
            }
        }
    }
    out
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.cur.position(),
            message: message.into(),
        })
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let at = self.cur.position();
        self.cur.read_u8().map_err(|_| truncated(at, what))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let at = self.cur.position();
        self.cur
            .read_u32::<LittleEndian>()
            .map(|v| v as usize)
            .map_err(|_| truncated(at, what))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let at = self.cur.position();
        self.cur.read_u64::<LittleEndian>().map_err(|_| truncated(at, what))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.cur.position();
        self.cur.read_f64::<LittleEndian>().map_err(|_| truncated(at, what))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<CMat> {
        let mut m = CMat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let re = self.f64(what)?;
                let im = self.f64(what)?;
                m[(r, c)] = c64(re, im);
            }
        }
        Ok(m)
    }
}

fn truncated(offset: u64, what: &str) -> Error {
    Error::Parse {
        offset,
        message: format!("unexpected end of file reading {what}"),
    }
}

pub fn decode_channels(bytes: &[u8]) -> Result<ChannelSet> {
    let mut rd = Reader {
        cur: Cursor::new(bytes),
    };
    let mut magic = [0u8; 4];
    if rd.cur.read_exact(&mut magic).is_err() {
        return Err(truncated(0, "magic"));
    }
    if &magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, not a channel file".into(),
        });
    }
    let version = rd.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let side = match rd.u8("side")? {
        0 => LinkSide::Broadcast,
        1 => LinkSide::MultipleAccess,
        other => return rd.fail(format!("unknown link side {other}")),
    };
    let users = rd.u32("user count")?;
    let rows = rd.u32("rows")?;
    let cols = rd.u32("cols")?;
    let n_sc = rd.u32("subcarrier count")?;
    // Guard against absurd headers before allocating.
    let remaining = bytes.len() as u64 - rd.cur.position();
    let payload = 16u64 * rows as u64 * cols as u64 * n_sc as u64;
    if users == 0 || n_sc == 0 || payload > remaining {
        return rd.fail(format!(
            "header declares {users} users, {n_sc} subcarriers of {rows}x{cols}; file too short"
        ));
    }
    let mut blocks = Vec::with_capacity(users);
    for _ in 0..users {
        let user = rd.u32("partition user")?;
        let start = rd.u32("partition start")?;
        let len = rd.u32("partition length")?;
        blocks.push(UserBlock { user, start, len });
    }
    let has_seed = rd.u8("seed flag")?;
    let seed_value = rd.u64("seed")?;
    let seed = match has_seed {
        0 => None,
        1 => Some(seed_value),
        other => return rd.fail(format!("bad seed flag {other}")),
    };
    let mut hash = [0u8; 32];
    if rd.cur.read_exact(&mut hash).is_err() {
        return Err(truncated(rd.cur.position(), "scenario hash"));
    }
    let noise_count = rd.u32("noise count")?;
    if noise_count != 1 && noise_count != n_sc {
        return rd.fail(format!("noise count {noise_count} must be 1 or {n_sc}"));
    }
    let noise = (0..noise_count)
        .map(|_| rd.matrix(rows, rows, "noise covariance"))
        .collect::<Result<Vec<_>>>()?;
    let matrices = (0..n_sc)
        .map(|_| rd.matrix(rows, cols, "channel matrix"))
        .collect::<Result<Vec<_>>>()?;
    if (rd.cur.position() as usize) != bytes.len() {
        return rd.fail("trailing bytes after channel data");
    }
    let set = ChannelSet::from_parts_unchecked(side, matrices, blocks, noise, seed, hash);
    set.validate()?;
    Ok(set)
}

pub fn save_channels(set: &ChannelSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_channels(set)).map_err(|e| Error::io(path, e))
}

pub fn load_channels(path: impl AsRef<Path>) -> Result<ChannelSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_channels(&bytes)
}
