use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use log::{debug, warn};

use super::codec::encode_series;
use super::protocol::{read_request, write_response, Opcode, Request, Response};
use super::store::{SeriesStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
}

/// TCP front end for a [`SeriesStore`]. One thread per connection.
pub struct TimesServer {
    listener: TcpListener,
    store: Arc<SeriesStore>,
    shutdown: Arc<AtomicBool>,
}

impl TimesServer {
    pub fn bind(store: SeriesStore, addr: impl ToSocketAddrs + std::fmt::Debug) -> Result<Self, ServerError> {
        let listener = TcpListener::bind(&addr).map_err(|source| ServerError::BindFailure {
            addr: format!("{addr:?}"),
            source,
        })?;
        Ok(Self {
            listener,
            store: Arc::new(store),
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Accepts connections until the shutdown flag of a spawned handle is set.
    pub fn run(self) {
        for conn in self.listener.incoming() {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let store = Arc::clone(&self.store);
                    thread::spawn(move || handle_connection(&store, stream));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> ServerHandle {
        let addr = self.local_addr();
        let shutdown = Arc::clone(&self.shutdown);
        let thread = thread::spawn(move || self.run());
        ServerHandle {
            addr,
            shutdown,
            thread: Some(thread),
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting new connections. Open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(t) = self.thread.take() {
            self.shutdown.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn handle_connection(store: &SeriesStore, stream: TcpStream) {
    let peer = stream.peer_addr().ok();
    let Ok(write_half) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(stream);
    let mut writer = BufWriter::new(write_half);
    loop {
        match read_request(&mut reader) {
            Ok(None) => break,
            Ok(Some(req)) => {
                let resp = answer(store, req);
                if write_response(&mut writer, &resp).is_err() {
                    break;
                }
            }
            Err(e) if e.is_disconnect() => break,
            Err(e) => {
                // framing is lost; answer once and drop the connection
                debug!("protocol error from {peer:?}: {e}");
                let _ = write_response(&mut writer, &Response::error(&e));
                break;
            }
        }
    }
}

pub(crate) fn answer(store: &SeriesStore, req: Request) -> Response {
    match req.op {
        Opcode::Put => match store.put_raw(&req.name, &req.payload) {
            Ok(()) => Response::ok(Vec::new()),
            Err(e) => Response::error(e),
        },
        Opcode::Get => match store.get(&req.name) {
            Ok(series) => match encode_series(&series) {
                Ok(bytes) => Response::ok(bytes),
                Err(e) => Response::error(e),
            },
            Err(StoreError::NotFound(_)) => Response::not_found(),
            Err(e) => Response::error(e),
        },
        Opcode::List => match store.list(&req.name) {
            Ok(names) => Response::ok(names.join("\n").into_bytes()),
            Err(e) => Response::error(e),
        },
    }
}
