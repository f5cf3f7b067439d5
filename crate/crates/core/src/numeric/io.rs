//! Named-tensor file format.
//!
//! ```text
//! magic   b"GNRT"
//! version u32 = 1
//! count   u32
//! count × { name_len u32, name utf-8, ndim u32 = 2, rows u64, cols u64,
//!           rows·cols f64 }
//! ```
//! All integers and floats little-endian, values row-major.

use std::io::{Read, Write};

use super::{Matrix, NumericError};

const MAGIC: &[u8; 4] = b"GNRT";
const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(out: &mut W, tensors: &[(&str, &Matrix)]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&2u32.to_le_bytes())?;
        out.write_all(&(m.rows() as u64).to_le_bytes())?;
        out.write_all(&(m.cols() as u64).to_le_bytes())?;
        for v in m.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32, NumericError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NumericError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_string<R: Read>(r: &mut R) -> Result<String, NumericError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| NumericError::Format("tensor name is not utf-8".into()))
}

pub fn read_tensors<R: Read>(input: &mut R) -> Result<Vec<(String, Matrix)>, NumericError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumericError::Format("bad tensor magic".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(NumericError::Format(format!(
            "unsupported tensor version {version}"
        )));
    }
    let count = read_u32(input)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = read_string(input)?;
        let ndim = read_u32(input)?;
        if ndim != 2 {
            return Err(NumericError::Format(format!(
                "tensor {name}: ndim {ndim} != 2"
            )));
        }
        let rows = read_u64(input)? as usize;
        let cols = read_u64(input)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            input.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(rows in 0usize..5, cols in 0usize..5, seed in any::<u64>(), name in "[a-z.]{0,12}") {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| f64::from_bits(seed.rotate_left(i as u32) & 0x7FEF_FFFF_FFFF_FFFF))
                .collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            let mut buf = Vec::new();
            write_tensors(&mut buf, &[(name.as_str(), &m)]).unwrap();
            let back = read_tensors(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            prop_assert_eq!(&back[0].1, &m);
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let m = Matrix::row_vector(&[1.0]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("a", &m)]).unwrap();
        assert_eq!(&buf[..4], b"GNRT");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(&buf[buf.len() - 8..], &1.0f64.to_le_bytes());
        assert!(read_tensors(&mut &buf[..buf.len() - 1]).is_err());
    }
}
