//! Where simulations get their time series from.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TimeSeries;
use crate::times::{ClientError, SeriesStore, StoreError, TimesClient};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("series `{0}` not found")]
    Missing(String),
    #[error("workload source: {0}")]
    Source(String),
}

impl From<StoreError> for WorkloadError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(n) => WorkloadError::Missing(n),
            other => WorkloadError::Source(other.to_string()),
        }
    }
}

impl From<ClientError> for WorkloadError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::NotFound(n) => WorkloadError::Missing(n),
            other => WorkloadError::Source(other.to_string()),
        }
    }
}

pub trait WorkloadSource {
    fn fetch(&mut self, name: &str) -> Result<TimeSeries, WorkloadError>;

    fn names(&mut self, prefix: &str) -> Result<Vec<String>, WorkloadError>;
}

impl WorkloadSource for SeriesStore {
    fn fetch(&mut self, name: &str) -> Result<TimeSeries, WorkloadError> {
        Ok(self.get(name)?)
    }

    fn names(&mut self, prefix: &str) -> Result<Vec<String>, WorkloadError> {
        Ok(self.list(prefix)?)
    }
}

impl WorkloadSource for TimesClient {
    fn fetch(&mut self, name: &str) -> Result<TimeSeries, WorkloadError> {
        Ok(self.get(name)?)
    }

    fn names(&mut self, prefix: &str) -> Result<Vec<String>, WorkloadError> {
        Ok(self.list(prefix)?)
    }
}

/// In-process series catalog, mostly for tests and generated workloads.
#[derive(Debug, Clone, Default)]
pub struct MemoryWorkloads(BTreeMap<String, TimeSeries>);

impl MemoryWorkloads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, series: TimeSeries) {
        self.0.insert(series.name.clone(), series);
    }

    pub fn with(mut self, series: TimeSeries) -> Self {
        self.insert(series);
        self
    }
}

impl FromIterator<TimeSeries> for MemoryWorkloads {
    fn from_iter<I: IntoIterator<Item = TimeSeries>>(iter: I) -> Self {
        let mut w = Self::new();
        for s in iter {
            w.insert(s);
        }
        w
    }
}

impl WorkloadSource for MemoryWorkloads {
    fn fetch(&mut self, name: &str) -> Result<TimeSeries, WorkloadError> {
        self.0.get(name).cloned().ok_or_else(|| WorkloadError::Missing(name.to_string()))
    }

    fn names(&mut self, prefix: &str) -> Result<Vec<String>, WorkloadError> {
        Ok(self.0.keys().filter(|k| k.starts_with(prefix)).cloned().collect())
    }
}

/// Declarative workload location: a local store directory or a live service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum WorkloadLocation {
    Dir(PathBuf),
    Addr(String),
}

impl WorkloadLocation {
    pub fn open(&self) -> Result<Box<dyn WorkloadSource + Send>, WorkloadError> {
        match self {
            Self::Dir(p) => {
                if !p.is_dir() {
                    return Err(WorkloadError::Source(format!("{} is not a directory", p.display())));
                }
                Ok(Box::new(SeriesStore::open(p)?))
            }
            Self::Addr(a) => Ok(Box::new(TimesClient::connect(a.as_str())?)),
        }
    }
}
