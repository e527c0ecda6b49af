//! Framed request/response protocol spoken by the series service.
//!
//! Request:  `0x54 0x4D | 0x01 | opcode | name_len u32 | name | payload_len u32 | payload`
//! Response: `status | payload_len u32 | payload`

use std::io::{self, Read, Write};

use thiserror::Error;

pub const REQUEST_MAGIC: [u8; 2] = [0x54, 0x4D];
pub const VERSION: u8 = 0x01;
pub const MAX_NAME_LEN: u32 = u16::MAX as u32;
pub const MAX_PAYLOAD_LEN: u32 = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Put = 0x01,
    Get = 0x02,
    List = 0x03,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0x00,
    NotFound = 0x01,
    Error = 0x02,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub op: Opcode,
    /// Series name, or the prefix for LIST.
    pub name: String,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: Status,
    pub payload: Vec<u8>,
}

impl Response {
    pub fn ok(payload: Vec<u8>) -> Self {
        Self { status: Status::Ok, payload }
    }

    pub fn not_found() -> Self {
        Self {
            status: Status::NotFound,
            payload: Vec::new(),
        }
    }

    pub fn error(msg: impl std::fmt::Display) -> Self {
        Self {
            status: Status::Error,
            payload: msg.to_string().into_bytes(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad request magic")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown opcode {0:#04x}")]
    BadOpcode(u8),
    #[error("unknown status {0:#04x}")]
    BadStatus(u8),
    #[error("name length {0} exceeds limit")]
    NameTooLong(u32),
    #[error("payload length {0} exceeds limit")]
    PayloadTooLong(u32),
    #[error("name is not valid UTF-8")]
    BadName,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FrameError {
    /// True when the peer closed the stream partway through a frame.
    pub fn is_disconnect(&self) -> bool {
        matches!(self, FrameError::Io(e) if e.kind() == io::ErrorKind::UnexpectedEof)
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_vec<R: Read>(r: &mut R, len: u32) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(u64::from(len)).read_to_end(&mut buf)?;
    if buf.len() != len as usize {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    Ok(buf)
}

pub fn encode_request(req: &Request) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + req.name.len() + req.payload.len());
    out.extend_from_slice(&REQUEST_MAGIC);
    out.push(VERSION);
    out.push(req.op as u8);
    out.extend_from_slice(&(req.name.len() as u32).to_be_bytes());
    out.extend_from_slice(req.name.as_bytes());
    out.extend_from_slice(&(req.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&req.payload);
    out
}

pub fn write_request<W: Write>(w: &mut W, req: &Request) -> io::Result<()> {
    w.write_all(&encode_request(req))?;
    w.flush()
}

/// Reads one request. `Ok(None)` means the stream ended cleanly between frames.
pub fn read_request<R: Read>(r: &mut R) -> Result<Option<Request>, FrameError> {
    let mut first = [0u8; 1];
    loop {
        match r.read(&mut first) {
            Ok(0) => return Ok(None),
            Ok(_) => break,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let mut second = [0u8; 1];
    r.read_exact(&mut second)?;
    if [first[0], second[0]] != REQUEST_MAGIC {
        return Err(FrameError::BadMagic);
    }
    let mut rest = [0u8; 2];
    r.read_exact(&mut rest)?;
    if rest[0] != VERSION {
        return Err(FrameError::BadVersion(rest[0]));
    }
    let op = match rest[1] {
        0x01 => Opcode::Put,
        0x02 => Opcode::Get,
        0x03 => Opcode::List,
        other => return Err(FrameError::BadOpcode(other)),
    };
    let name_len = read_u32(r)?;
    if name_len > MAX_NAME_LEN {
        return Err(FrameError::NameTooLong(name_len));
    }
    let name = String::from_utf8(read_vec(r, name_len)?).map_err(|_| FrameError::BadName)?;
    let payload_len = read_u32(r)?;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(FrameError::PayloadTooLong(payload_len));
    }
    let payload = read_vec(r, payload_len)?;
    Ok(Some(Request { op, name, payload }))
}

pub fn write_response<W: Write>(w: &mut W, resp: &Response) -> io::Result<()> {
    let mut out = Vec::with_capacity(5 + resp.payload.len());
    out.push(resp.status as u8);
    out.extend_from_slice(&(resp.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&resp.payload);
    w.write_all(&out)?;
    w.flush()
}

pub fn read_response<R: Read>(r: &mut R) -> Result<Response, FrameError> {
    let mut status = [0u8; 1];
    r.read_exact(&mut status)?;
    let status = match status[0] {
        0x00 => Status::Ok,
        0x01 => Status::NotFound,
        0x02 => Status::Error,
        other => return Err(FrameError::BadStatus(other)),
    };
    let len = read_u32(r)?;
    if len > MAX_PAYLOAD_LEN {
        return Err(FrameError::PayloadTooLong(len));
    }
    Ok(Response {
        status,
        payload: read_vec(r, len)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_layout() {
        let req = Request {
            op: Opcode::Get,
            name: "w1".into(),
            payload: vec![],
        };
        let bytes = encode_request(&req);
        assert_eq!(bytes, [0x54, 0x4D, 0x01, 0x02, 0, 0, 0, 2, b'w', b'1', 0, 0, 0, 0]);
        assert_eq!(read_request(&mut bytes.as_slice()).unwrap(), Some(req));
    }

    #[test]
    fn response_layout() {
        let mut out = Vec::new();
        write_response(&mut out, &Response::not_found()).unwrap();
        assert_eq!(out, [0x01, 0, 0, 0, 0]);
        let back = read_response(&mut out.as_slice()).unwrap();
        assert_eq!(back, Response::not_found());
    }

    #[test]
    fn clean_eof_between_frames() {
        assert!(read_request(&mut [].as_slice()).unwrap().is_none());
    }

    #[test]
    fn framing_errors() {
        assert!(matches!(read_request(&mut &b"XXXXXXXX"[..]), Err(FrameError::BadMagic)));
        assert!(matches!(
            read_request(&mut &[0x54, 0x4D, 0x02, 0x01][..]),
            Err(FrameError::BadVersion(2))
        ));
        assert!(matches!(
            read_request(&mut &[0x54, 0x4D, 0x01, 0x09][..]),
            Err(FrameError::BadOpcode(9))
        ));
        let mut huge = vec![0x54, 0x4D, 0x01, 0x01];
        huge.extend_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(read_request(&mut huge.as_slice()), Err(FrameError::NameTooLong(_))));
        // declared 5-byte name, stream ends after 2
        let short = [0x54, 0x4D, 0x01, 0x02, 0, 0, 0, 5, b'a', b'b'];
        assert!(read_request(&mut &short[..]).unwrap_err().is_disconnect());
    }
}
