//! `.dt` layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes   "DTNS"
//! version  u8        1
//! ndim     u64
//! extents  ndim x u64
//! payload  product(extents) x f32, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::DenseTensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DTNS";
pub const FORMAT_VERSION: u8 = 1;

const MAX_NDIM: u64 = 32;

pub fn write_tensor<W: Write>(t: &DenseTensor, mut w: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(13 + 8 * t.ndim() + 4 * t.len());
    buf.extend_from_slice(&MAGIC);
    buf.push(FORMAT_VERSION);
    buf.extend_from_slice(&(t.ndim() as u64).to_le_bytes());
    for &extent in t.shape() {
        buf.extend_from_slice(&(extent as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_tensor(bytes: &[u8]) -> Result<DenseTensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur
        .take(4)
        .ok_or_else(|| Error::MalformedHeader("file shorter than the magic string".into()))?;
    if magic != MAGIC {
        return Err(Error::MalformedHeader(format!("bad magic {magic:02x?}")));
    }
    let version = cur
        .take(1)
        .ok_or_else(|| Error::MalformedHeader("missing version byte".into()))?[0];
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let ndim = cur
        .u64()
        .ok_or_else(|| Error::MalformedHeader("missing rank".into()))?;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::MalformedHeader(format!("rank {ndim} out of range")));
    }
    let mut shape = Vec::with_capacity(ndim as usize);
    for axis in 0..ndim {
        let extent = cur
            .u64()
            .ok_or_else(|| Error::MalformedHeader(format!("missing extent for axis {axis}")))?;
        if extent == 0 {
            return Err(Error::MalformedHeader(format!("zero extent on axis {axis}")));
        }
        shape.push(usize::try_from(extent).map_err(|_| {
            Error::MalformedHeader(format!("extent {extent} does not fit in memory"))
        })?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::MalformedHeader(format!("element count of {shape:?} overflows")))?;

    let payload = cur.rest();
    let found = payload.len() / 4;
    if payload.len() < count.saturating_mul(4) {
        return Err(Error::TruncatedPayload {
            expected: count,
            found,
        });
    }
    if payload.len() != count * 4 {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            payload.len() - count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DenseTensor::new(shape, data)
}

pub fn save_tensor(t: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_tensor(t, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_tensor(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(t: &DenseTensor) -> Vec<u8> {
        let mut out = Vec::new();
        write_tensor(t, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trips_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let zeros = DenseTensor::zeros(vec![2, 3]).unwrap();
        let path = dir.path().join("z.dt");
        save_tensor(&zeros, &path).unwrap();
        assert_eq!(load_tensor(&path).unwrap(), zeros);

        let one = DenseTensor::new(vec![1], vec![1.5]).unwrap();
        save_tensor(&one, &path).unwrap();
        assert_eq!(load_tensor(&path).unwrap().data(), &[1.5]);
    }

    #[test]
    fn layout_is_stable() {
        let t = DenseTensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t);
        let mut expected = b"DTNS\x01".to_vec();
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let t = DenseTensor::zeros(vec![2, 2]).unwrap();
        let mut bytes = encode(&t);
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            read_tensor(&bytes),
            Err(Error::TruncatedPayload { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn header_errors_are_distinct() {
        let t = DenseTensor::zeros(vec![2]).unwrap();
        let good = encode(&t);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_tensor(&bad_magic), Err(Error::MalformedHeader(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 7;
        assert!(matches!(read_tensor(&bad_version), Err(Error::UnsupportedVersion(7))));

        assert!(matches!(read_tensor(&good[..9]), Err(Error::MalformedHeader(_))));

        let mut zero_extent = good.clone();
        zero_extent[13..21].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(read_tensor(&zero_extent), Err(Error::MalformedHeader(_))));

        let mut trailing = good;
        trailing.push(0);
        assert!(matches!(read_tensor(&trailing), Err(Error::MalformedHeader(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
            let t = DenseTensor::new(shape, data).unwrap();
            let back = read_tensor(&encode(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
