//! TSB1 binary layout for a time series.
//!
//! ```text
//! "TSB1" | name_len u32 | name | start_s i64 | interval_s u32 | count u32 | count x f64
//! ```
//! All integers and floats are big-endian.

use thiserror::Error;

use crate::model::{is_valid_sample, TimeSeries};

pub const MAGIC: [u8; 4] = *b"TSB1";
pub const MAX_NAME_LEN: usize = u16::MAX as usize;

const FIXED_LEN: usize = 4 + 4 + 8 + 4 + 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("series name is {0} octets, limit is 65535")]
    NameTooLong(usize),
    #[error("bad magic, expected TSB1")]
    BadMagic,
    #[error("payload truncated: need {needed} octets, have {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("sample {0} is non-finite or outside [0, 100]")]
    InvalidSample(usize),
    #[error("series name is not valid UTF-8")]
    InvalidName,
    #[error("interval must be at least 1 s")]
    InvalidInterval,
    #[error("{0} trailing octets after the last sample")]
    TrailingBytes(usize),
}

pub fn encoded_len(series: &TimeSeries) -> usize {
    FIXED_LEN + series.name.len() + 8 * series.samples.len()
}

pub fn encode_series(series: &TimeSeries) -> Result<Vec<u8>, CodecError> {
    let name = series.name.as_bytes();
    if name.len() > MAX_NAME_LEN {
        return Err(CodecError::NameTooLong(name.len()));
    }
    let count = u32::try_from(series.samples.len()).expect("sample count fits in u32");
    let mut out = Vec::with_capacity(encoded_len(series));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(name.len() as u32).to_be_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&series.start_s.to_be_bytes());
    out.extend_from_slice(&series.interval_s.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    for v in &series.samples {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(CodecError::TruncatedPayload { needed: n, available });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        self.array().map(u32::from_be_bytes)
    }
}

pub fn decode_series(bytes: &[u8]) -> Result<TimeSeries, CodecError> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let name_len = cur.u32()? as usize;
    if name_len > MAX_NAME_LEN {
        return Err(CodecError::NameTooLong(name_len));
    }
    let name = std::str::from_utf8(cur.take(name_len)?)
        .map_err(|_| CodecError::InvalidName)?
        .to_string();
    let start_s = i64::from_be_bytes(cur.array()?);
    let interval_s = cur.u32()?;
    if interval_s == 0 {
        return Err(CodecError::InvalidInterval);
    }
    let count = cur.u32()? as usize;
    // checked before allocating so a forged count cannot reserve memory
    let payload = cur.take(count.checked_mul(8).unwrap_or(usize::MAX))?;
    let samples = payload
        .chunks_exact(8)
        .enumerate()
        .map(|(i, c)| {
            let v = f64::from_be_bytes(c.try_into().expect("chunk of 8"));
            if is_valid_sample(v) {
                Ok(v)
            } else {
                Err(CodecError::InvalidSample(i))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rest = bytes.len() - cur.pos;
    if rest != 0 {
        return Err(CodecError::TrailingBytes(rest));
    }
    Ok(TimeSeries {
        name,
        start_s,
        interval_s,
        samples,
    })
}
