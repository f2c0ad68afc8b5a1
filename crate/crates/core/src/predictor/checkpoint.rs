//! Portable checkpoint format. All integers and floats are little-endian:
//!
//! | offset | size | field                           |
//! |--------|------|---------------------------------|
//! | 0      | 8    | magic `b"DFILLNET"`             |
//! | 8      | 4    | format version (u32, = 1)       |
//! | 12     | 4    | input width (u32)               |
//! | 16     | 4    | input height (u32)              |
//! | 20     | 4    | input channels (u32)            |
//! | 24     | 4    | levels (u32)                    |
//! | 28     | 4    | base channels (u32)             |
//! | 32     | 8    | init seed (u64)                 |
//! | 40     | 8    | parameter count N (u64)         |
//! | 48     | 8·N  | parameters (f64), layer order   |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetworkSpec, PredictorModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DFILLNET";
pub const CHECKPOINT_VERSION: u32 = 1;

fn u32_field(value: usize, name: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Checkpoint(format!("{name} {value} does not fit in u32")))
}

impl PredictorModel {
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let s = &self.spec;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for (v, name) in [
            (s.input_size.0, "width"),
            (s.input_size.1, "height"),
            (s.input_channels, "input_channels"),
            (s.levels, "levels"),
            (s.base_channels, "base_channels"),
        ] {
            out.write_all(&u32_field(v, name)?.to_le_bytes())?;
        }
        out.write_all(&s.seed.to_le_bytes())?;
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut u32s = [0u32; 6];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        if u32s[0] != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", u32s[0])));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;

        let spec = NetworkSpec {
            input_size: (u32s[1] as usize, u32s[2] as usize),
            input_channels: u32s[3] as usize,
            levels: u32s[4] as usize,
            base_channels: u32s[5] as usize,
            seed,
        };
        spec.validate()
            .map_err(|e| Error::Checkpoint(format!("invalid network header: {e}")))?;
        if count != spec.parameter_count() {
            return Err(Error::Checkpoint(format!(
                "header declares {count} parameters, spec needs {}",
                spec.parameter_count()
            )));
        }
        let mut bytes = vec![0u8; count * 8];
        input.read_exact(&mut bytes)?;
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        PredictorModel::from_parameters(spec, params).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::super::init_model;
    use super::*;

    fn model() -> PredictorModel {
        init_model(&NetworkSpec {
            input_size: (8, 4),
            input_channels: 1,
            levels: 2,
            base_channels: 2,
            seed: 99,
        })
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let m = model();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"DFILLNET");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[32..40].try_into().unwrap()), 99);
        let n = m.parameters().len();
        assert_eq!(u64::from_le_bytes(buf[40..48].try_into().unwrap()) as usize, n);
        assert_eq!(buf.len(), 48 + 8 * n);
        assert_eq!(f64::from_le_bytes(buf[48..56].try_into().unwrap()), m.parameters()[0]);
        assert_eq!(PredictorModel::read_checkpoint(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        model().write_checkpoint(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(PredictorModel::read_checkpoint(&bad[..]).is_err());

        let mut bad = buf.clone();
        bad[8] = 2;
        assert!(PredictorModel::read_checkpoint(&bad[..]).is_err());

        assert!(PredictorModel::read_checkpoint(&buf[..buf.len() - 1]).is_err());

        let mut long = buf.clone();
        long.push(0);
        assert!(PredictorModel::read_checkpoint(&long[..]).is_err());
    }
}
