//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "MGCCFCKP"
//! version    u32      1
//! header     u64 length + UTF-8 JSON (model description)
//! count      u64      number of parameters
//! per parameter:
//!   name     u64 length + UTF-8
//!   rows     u64
//!   cols     u64
//!   steps    u64      Adam step counter
//!   flags    u8       bit 0 = frozen, bit 1 = regularized
//!   value    rows*cols f64
//!   adam_m   rows*cols f64
//!   adam_v   rows*cols f64
//! ```
//!
//! Gradient buffers are not stored; they are zero between optimizer steps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Matrix, Parameter, ParameterStore};
use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MGCCFCKP";
const VERSION: u32 = 1;

/// A parameter store plus a free-form JSON header describing the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BinWriter::new(out);
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u32(VERSION)?;
        w.str(&serde_json::to_string(&self.header)?)?;
        w.u64(self.params.len() as u64)?;
        for p in self.params.iter() {
            if !p.value.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", p.name)));
            }
            w.str(&p.name)?;
            w.u64(p.value.rows() as u64)?;
            w.u64(p.value.cols() as u64)?;
            w.u64(p.step_count)?;
            w.u8(u8::from(p.frozen) | (u8::from(p.regularized) << 1))?;
            w.f64s(p.value.as_slice())?;
            w.f64s(p.adam_m.as_slice())?;
            w.f64s(p.adam_v.as_slice())?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = BinReader::new(input);
        if &r.exact::<8>()? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header = serde_json::from_str(&r.str()?)?;
        let count = r.len(1 << 20)?;
        let mut params = ParameterStore::new();
        for _ in 0..count {
            let name = r.str()?;
            let rows = r.len(1 << 32)?;
            let cols = r.len(1 << 32)?;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format("parameter too large".into()))?;
            let step_count = r.u64()?;
            let flags = r.u8()?;
            let value = Matrix::from_vec(rows, cols, r.f64s(n)?)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
            let mut p = Parameter::new(name, value);
            p.adam_m = Matrix::from_vec(rows, cols, r.f64s(n)?)?;
            p.adam_v = Matrix::from_vec(rows, cols, r.f64s(n)?)?;
            p.step_count = step_count;
            p.frozen = flags & 1 != 0;
            p.regularized = flags & 2 != 0;
            params.add(p);
        }
        Ok(Checkpoint { header, params })
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    ckpt.write_to(BufWriter::new(File::create(path)?))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn bits(m: &Matrix) -> Vec<u64> {
        m.as_slice().iter().map(|x| x.to_bits()).collect()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shapes in proptest::collection::vec((1usize..5, 1usize..5), 1..4),
            seed in any::<u64>(),
            steps in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut params = ParameterStore::new();
            for (i, (r, c)) in shapes.iter().enumerate() {
                let mut gen = || {
                    let data = (0..r * c).map(|_| rng.gen_range(-1e3..1e3)).collect();
                    Matrix::from_vec(*r, *c, data).unwrap()
                };
                let mut p = Parameter::new(format!("w{i}"), gen());
                p.adam_m = gen();
                p.adam_v = gen();
                p.step_count = steps;
                p.frozen = i % 2 == 0;
                p.regularized = i % 3 != 0;
                params.add(p);
            }
            let ckpt = Checkpoint { header: serde_json::json!({"kind": "test"}), params };
            let mut buf = Vec::new();
            ckpt.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(&back.header, &ckpt.header);
            for (a, b) in back.params.iter().zip(ckpt.params.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(bits(&a.value), bits(&b.value));
                prop_assert_eq!(bits(&a.adam_m), bits(&b.adam_m));
                prop_assert_eq!(bits(&a.adam_v), bits(&b.adam_v));
                prop_assert_eq!(a.step_count, b.step_count);
                prop_assert_eq!((a.frozen, a.regularized), (b.frozen, b.regularized));
            }
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            prop_assert_eq!(again, buf);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Checkpoint::read_from(&b"NOTACKPTxxxx"[..]).is_err());
        assert!(Checkpoint::read_from(&b"MGC"[..]).is_err());
    }

    #[test]
    fn refuses_to_write_nan() {
        let mut params = ParameterStore::new();
        params.add(Parameter::new("bad", Matrix::row_vector(&[f64::NAN])));
        let ckpt = Checkpoint { header: serde_json::Value::Null, params };
        let err = ckpt.write_to(Vec::new()).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }
}
