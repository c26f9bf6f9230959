//! The ABSD byte layout for quantized tensors, and headerless raw `f32`
//! files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "ABSD"
//! 4       2           version (u16, currently 1)
//! 6       2           format id (u16)
//! 8       2           rank (u16)
//! 10      8 * rank    dims (u64 each)
//! ..      4           alpha (f32)
//! ..      n_blocks    scale bytes, row-major
//! ..      ..          element codes, bit-packed, each row padded to whole blocks
//! ```
//!
//! All integers and floats are little-endian. Codes are packed first-code
//! in the least significant bits.

pub mod bitpack;

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::formats::FormatId;
use crate::quantizer::QuantizedTensor;
use crate::tensor::TensorView;

pub const MAGIC: &[u8; 4] = b"ABSD";
pub const VERSION: u16 = 1;

/// Serializes `q` into the ABSD layout.
pub fn to_bytes(q: &QuantizedTensor) -> Result<Vec<u8>> {
    q.validate()?;
    if q.shape.len() > u16::MAX as usize {
        return Err(Error::Shape(format!("rank {} too large", q.shape.len())));
    }
    let mut out = Vec::with_capacity(14 + 8 * q.shape.len() + q.scale_bytes.len() + q.packed_codes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&q.format.code().to_le_bytes());
    out.extend_from_slice(&(q.shape.len() as u16).to_le_bytes());
    for &d in &q.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&q.alpha.to_le_bytes());
    out.extend_from_slice(&q.scale_bytes);
    out.extend_from_slice(&q.packed_codes);
    Ok(out)
}

/// Writes `q` to any sink.
pub fn write<W: Write>(q: &QuantizedTensor, mut w: W) -> Result<()> {
    w.write_all(&to_bytes(q)?)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "truncated {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses an ABSD byte string. The whole buffer must be consumed.
pub fn from_bytes(bytes: &[u8]) -> Result<QuantizedTensor> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::Corrupt(format!("unsupported version {version}")));
    }
    let format = FormatId::from_code(c.u16("format id")?).map_err(|e| Error::Corrupt(e.to_string()))?;
    let rank = c.u16("rank")? as usize;
    if rank == 0 {
        return Err(Error::Corrupt("rank 0".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = c.u64("dims")?;
        let d = usize::try_from(d).map_err(|_| Error::Corrupt(format!("dimension {d} too large")))?;
        if d == 0 {
            return Err(Error::Corrupt("zero dimension".into()));
        }
        shape.push(d);
    }
    let alpha = f32::from_le_bytes(c.take(4, "alpha")?.try_into().unwrap());

    let spec = format.spec();
    let row_len = *shape.last().unwrap();
    let rows = shape[..rank - 1]
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Corrupt("shape overflows".into()))?;
    let n_blocks = rows
        .checked_mul(row_len.div_ceil(spec.block_size))
        .ok_or_else(|| Error::Corrupt("shape overflows".into()))?;
    let code_bytes = n_blocks
        .checked_mul(spec.block_size * spec.element_bits() as usize / 8)
        .ok_or_else(|| Error::Corrupt("shape overflows".into()))?;
    let scale_bytes = c.take(n_blocks, "scale section")?.to_vec();
    let packed_codes = c.take(code_bytes, "code section")?.to_vec();
    if c.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after code section",
            bytes.len() - c.pos
        )));
    }
    let q = QuantizedTensor {
        format,
        shape,
        alpha,
        scale_bytes,
        packed_codes,
    };
    q.validate()?;
    Ok(q)
}

/// Reads an ABSD stream to the end and parses it.
pub fn read<R: Read>(mut r: R) -> Result<QuantizedTensor> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

/// Interprets headerless little-endian `f32` data with an external shape.
pub fn read_raw_f32(bytes: &[u8], shape: &[usize]) -> Result<TensorView> {
    crate::tensor::check_shape(shape)?;
    let n: usize = shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {} bytes, got {}",
            4 * n,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    TensorView::new(data, shape.to_vec())
}

pub fn raw_f32_bytes(x: &TensorView) -> Vec<u8> {
    x.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::ScaleType;
    use crate::quantizer::{quantize_with_alpha, QuantOptions};

    fn worked_example() -> QuantizedTensor {
        let mut v = vec![0.0f32; 16];
        v[..4].copy_from_slice(&[6.0, 18.0, 36.0, 42.0]);
        let x = TensorView::new(v, vec![1, 16]).unwrap();
        quantize_with_alpha(&x, FormatId::If4.spec(), &QuantOptions::default(), 1.0)
            .unwrap()
            .0
    }

    #[test]
    fn worked_example_layout() {
        let bytes = to_bytes(&worked_example()).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"ABSD");
        expect.extend_from_slice(&[1, 0]);
        expect.extend_from_slice(&(FormatId::If4 as u16).to_le_bytes());
        expect.extend_from_slice(&[2, 0]);
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&16u64.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.push(ScaleType::UE4M3.encode(7.0, true).unwrap());
        expect.extend_from_slice(&[0x31, 0x76, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes, expect);
        assert_eq!(expect[expect.len() - 9], 0x80 | 0x4E);
    }

    #[test]
    fn round_trip() {
        let q = worked_example();
        assert_eq!(from_bytes(&to_bytes(&q).unwrap()).unwrap(), q);
    }

    #[test]
    fn bad_magic() {
        let mut b = to_bytes(&worked_example()).unwrap();
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(Error::Corrupt(_))));
    }

    #[test]
    fn truncated_and_trailing() {
        let b = to_bytes(&worked_example()).unwrap();
        for cut in [3, 9, 20, b.len() - 1] {
            assert!(from_bytes(&b[..cut]).is_err(), "cut {cut}");
        }
        let mut long = b.clone();
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }

    #[test]
    fn rank_zero_rejected() {
        let mut q = worked_example();
        q.shape.clear();
        assert!(to_bytes(&q).is_err());
        let mut b = to_bytes(&worked_example()).unwrap();
        b[8] = 0;
        assert!(from_bytes(&b).is_err());
    }

    #[test]
    fn indicator_on_nvfp4_file() {
        let mut v = vec![1.0f32; 16];
        v[0] = 6.0;
        let x = TensorView::new(v, vec![16]).unwrap();
        let q = quantize_with_alpha(&x, FormatId::Nvfp4.spec(), &QuantOptions::default(), 1.0)
            .unwrap()
            .0;
        let mut b = to_bytes(&q).unwrap();
        let scale_at = 4 + 2 + 2 + 2 + 8 + 4;
        assert_eq!(b[scale_at] & 0x80, 0);
        b[scale_at] |= 0x80;
        assert!(matches!(from_bytes(&b), Err(Error::Corrupt(_))));
    }

    #[test]
    fn raw_f32() {
        let t = read_raw_f32(&[0x00, 0x00, 0x80, 0x3F], &[1]).unwrap();
        assert_eq!(t.data(), &[1.0]);
        assert!(read_raw_f32(&[0; 7], &[2]).is_err());
        let x = TensorView::new(vec![1.5, -2.25, 3e-8], vec![3]).unwrap();
        assert_eq!(read_raw_f32(&raw_f32_bytes(&x), &[3]).unwrap(), x);
    }

    #[test]
    fn atomic_write() {
        let dir = std::env::temp_dir().join(format!("absd-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("out.absd");
        write_atomic(&p, b"hello").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"hello");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
