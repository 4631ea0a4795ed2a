//! Minimal NPY v1.0 reader/writer.
//!
//! Only little-endian, C-order arrays of `f4`, `f8`, `u1`, `u2` and `u4` are
//! supported, which is all the cube and ground-truth files need.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    U1,
    U2,
    U4,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "<u1" | "|u1" => Ok(Dtype::U1),
            "<u2" => Ok(Dtype::U2),
            "<u4" => Ok(Dtype::U4),
            other => Err(Error::Shape(format!("unsupported dtype '{other}'"))),
        }
    }

    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::U1 => "|u1",
            Dtype::U2 => "<u2",
            Dtype::U4 => "<u4",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F4 | Dtype::U4 => 4,
            Dtype::F8 => 8,
            Dtype::U1 => 1,
            Dtype::U2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
            NpyData::U8(v) => v.len(),
            NpyData::U16(v) => v.len(),
            NpyData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            NpyData::F32(_) => Dtype::F4,
            NpyData::F64(_) => Dtype::F8,
            NpyData::U8(_) => Dtype::U1,
            NpyData::U16(_) => Dtype::U2,
            NpyData::U32(_) => Dtype::U4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

pub fn read_npy<R: Read>(reader: &mut R) -> Result<NpyArray> {
    let mut preamble = [0u8; 10];
    reader
        .read_exact(&mut preamble)
        .map_err(|_| Error::Format("file too short for NPY preamble".into()))?;
    if &preamble[..6] != MAGIC {
        return Err(Error::Format("missing NPY magic".into()));
    }
    if preamble[6] != 1 || preamble[7] != 0 {
        return Err(Error::Format(format!(
            "unsupported NPY version {}.{}",
            preamble[6], preamble[7]
        )));
    }
    let header_len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
    let mut raw = vec![0u8; header_len];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated NPY header".into()))?;
    let text =
        std::str::from_utf8(&raw).map_err(|_| Error::Format("NPY header is not ASCII".into()))?;
    let header = parse_header(text)?;
    if header.fortran_order {
        return Err(Error::Shape(
            "Fortran-order arrays are not supported".into(),
        ));
    }

    let count: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; count * header.dtype.size()];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("NPY payload shorter than {count} elements")))?;

    let data = match header.dtype {
        Dtype::F4 => NpyData::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F8 => NpyData::F64(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::U1 => NpyData::U8(bytes),
        Dtype::U2 => NpyData::U16(
            bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::U4 => NpyData::U32(
            bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

pub fn write_npy<W: Write>(writer: &mut W, array: &NpyArray) -> std::io::Result<()> {
    let expected: usize = array.shape.iter().product();
    assert_eq!(
        expected,
        array.data.len(),
        "shape does not match data length"
    );

    let shape = match array.shape.len() {
        1 => format!("({},)", array.shape[0]),
        _ => format!(
            "({})",
            array
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.data.dtype().descr(),
        shape
    );
    // Pad with spaces so the payload starts on an aligned offset; newline terminates.
    let unpadded = 10 + dict.len() + 1;
    let pad = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    writer.write_all(MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(dict.len() as u16).to_le_bytes())?;
    writer.write_all(dict.as_bytes())?;

    let mut buf = Vec::with_capacity(array.data.len() * array.data.dtype().size());
    match &array.data {
        NpyData::F32(v) => v
            .iter()
            .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        NpyData::F64(v) => v
            .iter()
            .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        NpyData::U8(v) => buf.extend_from_slice(v),
        NpyData::U16(v) => v
            .iter()
            .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        NpyData::U32(v) => v
            .iter()
            .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    writer.write_all(&buf)
}

fn parse_header(text: &str) -> Result<Header> {
    let body = text.trim();
    if !body.starts_with('{') || !body.ends_with('}') {
        return Err(Error::Format("NPY header is not a dict literal".into()));
    }
    let descr = dict_value(body, "descr")?;
    let descr = descr
        .trim()
        .strip_prefix('\'')
        .and_then(|s| s.strip_suffix('\''))
        .ok_or_else(|| Error::Format("descr is not a quoted string".into()))?;
    let fortran = match dict_value(body, "fortran_order")?.trim() {
        "False" => false,
        "True" => true,
        other => return Err(Error::Format(format!("bad fortran_order '{other}'"))),
    };
    let shape_text = dict_value(body, "shape")?.trim();
    let inner = shape_text
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("bad shape '{shape_text}'")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape dimension '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        dtype: Dtype::parse(descr)?,
        fortran_order: fortran,
        shape,
    })
}

/// Returns the raw text of the value stored under `key` in a Python dict literal.
fn dict_value<'a>(body: &'a str, key: &str) -> Result<&'a str> {
    let needle = format!("'{key}':");
    let start = body
        .find(&needle)
        .ok_or_else(|| Error::Format(format!("NPY header missing '{key}'")))?
        + needle.len();
    let rest = &body[start..];
    let mut depth = 0usize;
    let mut in_str = false;
    for (i, ch) in rest.char_indices() {
        match ch {
            '\'' => in_str = !in_str,
            '(' if !in_str => depth += 1,
            ')' if !in_str => depth = depth.saturating_sub(1),
            ',' | '}' if !in_str && depth == 0 => return Ok(&rest[..i]),
            _ => {}
        }
    }
    Err(Error::Format(format!("unterminated value for '{key}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(array: &NpyArray) -> Vec<u8> {
        let mut out = Vec::new();
        write_npy(&mut out, array).unwrap();
        out
    }

    #[test]
    fn header_is_aligned_and_newline_terminated() {
        let bytes = encode(&NpyArray {
            shape: vec![2, 3],
            data: NpyData::U16(vec![0, 1, 2, 3, 4, 5]),
        });
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(bytes[10 + header_len - 1], b'\n');
        assert_eq!(bytes.len(), 10 + header_len + 12);
    }

    #[test]
    fn parses_numpy_style_header() {
        let h = parse_header("{'descr': '<f8', 'fortran_order': False, 'shape': (4, 5, 6), }   ")
            .unwrap();
        assert_eq!(h.dtype, Dtype::F8);
        assert!(!h.fortran_order);
        assert_eq!(h.shape, vec![4, 5, 6]);

        let h = parse_header("{'descr': '|u1', 'fortran_order': False, 'shape': (7,), }").unwrap();
        assert_eq!(h.dtype, Dtype::U1);
        assert_eq!(h.shape, vec![7]);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode(&NpyArray {
            shape: vec![1],
            data: NpyData::F32(vec![1.0]),
        });
        let mut v2 = bytes.clone();
        v2[6] = 2;
        assert!(matches!(
            read_npy(&mut v2.as_slice()),
            Err(Error::Format(_))
        ));
        bytes[0] = 0;
        assert!(matches!(
            read_npy(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rejects_unsupported_dtype_and_fortran_order() {
        let bytes = encode(&NpyArray {
            shape: vec![1],
            data: NpyData::F32(vec![1.0]),
        });
        let mut patched = bytes.clone();
        let at = bytes.windows(3).position(|w| w == b"<f4").unwrap();
        patched[at..at + 3].copy_from_slice(b"<i4");
        assert!(matches!(
            read_npy(&mut patched.as_slice()),
            Err(Error::Shape(_))
        ));

        let mut patched = bytes.clone();
        let at = bytes.windows(5).position(|w| w == b"False").unwrap();
        patched[at..at + 5].copy_from_slice(b"True ");
        assert!(matches!(
            read_npy(&mut patched.as_slice()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = encode(&NpyArray {
            shape: vec![4],
            data: NpyData::F64(vec![1.0, 2.0, 3.0, 4.0]),
        });
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(read_npy(&mut &cut[..]), Err(Error::Format(_))));
    }

    #[test]
    fn round_trips_every_dtype() {
        for data in [
            NpyData::F32(vec![0.5, -1.25]),
            NpyData::F64(vec![1e-300, 3.5]),
            NpyData::U8(vec![0, 255]),
            NpyData::U16(vec![7, 65535]),
            NpyData::U32(vec![1, u32::MAX]),
        ] {
            let array = NpyArray {
                shape: vec![2],
                data,
            };
            let back = read_npy(&mut encode(&array).as_slice()).unwrap();
            assert_eq!(back, array);
        }
    }
}
