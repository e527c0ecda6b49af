//! Workload series service: binary codec, file store, wire protocol,
//! server and client.

pub mod client;
pub mod codec;
pub mod protocol;
pub mod server;
pub mod store;

pub use client::{ClientError, TimesClient};
pub use codec::{decode_series, encode_series, CodecError};
pub use server::{ServerError, ServerHandle, TimesServer};
pub use store::{is_valid_name, SeriesStore, StoreError};
