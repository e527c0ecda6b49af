use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};

use thiserror::Error;

use super::codec::{decode_series, encode_series, CodecError};
use super::protocol::{read_response, write_request, FrameError, Opcode, Request, Status};
use crate::model::TimeSeries;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("series `{0}` not found")]
    NotFound(String),
    #[error("server error: {0}")]
    Remote(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("connection failed: {0}")]
    Connect(std::io::Error),
}

/// Blocking client holding one connection. Open one per worker.
pub struct TimesClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TimesClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(ClientError::Connect)?;
        let _ = stream.set_nodelay(true);
        let write_half = stream.try_clone().map_err(ClientError::Connect)?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer: BufWriter::new(write_half),
        })
    }

    fn call(&mut self, op: Opcode, name: &str, payload: Vec<u8>) -> Result<Vec<u8>, ClientError> {
        let req = Request {
            op,
            name: name.to_string(),
            payload,
        };
        write_request(&mut self.writer, &req).map_err(FrameError::from)?;
        let resp = read_response(&mut self.reader)?;
        match resp.status {
            Status::Ok => Ok(resp.payload),
            Status::NotFound => Err(ClientError::NotFound(name.to_string())),
            Status::Error => Err(ClientError::Remote(String::from_utf8_lossy(&resp.payload).into_owned())),
        }
    }

    pub fn put(&mut self, name: &str, series: &TimeSeries) -> Result<(), ClientError> {
        let blob = encode_series(series)?;
        self.put_raw(name, blob)
    }

    pub fn put_raw(&mut self, name: &str, blob: Vec<u8>) -> Result<(), ClientError> {
        self.call(Opcode::Put, name, blob).map(drop)
    }

    pub fn get(&mut self, name: &str) -> Result<TimeSeries, ClientError> {
        let blob = self.get_raw(name)?;
        Ok(decode_series(&blob)?)
    }

    pub fn get_raw(&mut self, name: &str) -> Result<Vec<u8>, ClientError> {
        self.call(Opcode::Get, name, Vec::new())
    }

    pub fn list(&mut self, prefix: &str) -> Result<Vec<String>, ClientError> {
        let payload = self.call(Opcode::List, prefix, Vec::new())?;
        let text = String::from_utf8_lossy(&payload);
        Ok(text.split('\n').filter(|s| !s.is_empty()).map(str::to_string).collect())
    }
}
