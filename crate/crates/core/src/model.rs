//! Domain types shared by every part of the simulator: workload time series,
//! server and VM capacities, allocations, and demand estimation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("time {t_s} s is before series start {start_s} s")]
    TimeBeforeSeriesStart { t_s: i64, start_s: i64 },
    #[error("series is empty")]
    EmptySeries,
    #[error("interval must be at least 1 s")]
    InvalidInterval,
    #[error("sample {index} = {value} is outside [0, 100]")]
    InvalidSample { index: usize, value: f64 },
    #[error("unknown demand estimator `{0}`")]
    UnknownEstimator(String),
    #[error("workload csv: {0}")]
    Csv(String),
}

/// CPU utilization of a single VM sampled at a fixed interval.
///
/// Samples are percent of the VM's own CPU capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    pub start_s: i64,
    pub interval_s: u32,
    pub samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        name: impl Into<String>,
        start_s: i64,
        interval_s: u32,
        samples: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if interval_s == 0 {
            return Err(ModelError::InvalidInterval);
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !is_valid_sample(**v))
        {
            return Err(ModelError::InvalidSample { index, value });
        }
        Ok(Self {
            name: name.into(),
            start_s,
            interval_s,
            samples,
        })
    }

    /// A series holding `value` for `len` samples.
    pub fn constant(name: impl Into<String>, interval_s: u32, value: f64, len: usize) -> Result<Self, ModelError> {
        Self::new(name, 0, interval_s, vec![value; len])
    }

    /// Sample covering `t_s`. Times past the last sample hold the last value.
    pub fn sample_at(&self, t_s: i64) -> Result<f64, ModelError> {
        if t_s < self.start_s {
            return Err(ModelError::TimeBeforeSeriesStart {
                t_s,
                start_s: self.start_s,
            });
        }
        let last = self.samples.len().checked_sub(1).ok_or(ModelError::EmptySeries)?;
        let offset = (t_s - self.start_s) as u64 / u64::from(self.interval_s);
        let index = usize::try_from(offset).map_or(last, |i| i.min(last));
        Ok(self.samples[index])
    }
}

pub(crate) fn is_valid_sample(v: f64) -> bool {
    v.is_finite() && (0.0..=100.0).contains(&v)
}

/// Reads a workload from CSV with header `t_s,util_pct`.
///
/// The interval is taken from the first two rows and must stay constant.
pub fn parse_workload_csv<R: std::io::Read>(name: &str, reader: R) -> Result<TimeSeries, ModelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ModelError::Csv(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["t_s", "util_pct"] {
        return Err(ModelError::Csv(format!(
            "expected header `t_s,util_pct`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ModelError::Csv(e.to_string()))?;
        let line = row + 2;
        let t: i64 = record[0]
            .parse()
            .map_err(|_| ModelError::Csv(format!("line {line}: bad t_s `{}`", &record[0])))?;
        let v: f64 = record[1]
            .parse()
            .map_err(|_| ModelError::Csv(format!("line {line}: bad util_pct `{}`", &record[1])))?;
        times.push(t);
        samples.push(v);
    }
    let start_s = *times
        .first()
        .ok_or_else(|| ModelError::Csv("no samples".into()))?;
    let interval = match times.get(1) {
        Some(t1) => t1 - start_s,
        None => 1,
    };
    if interval < 1 || interval > i64::from(u32::MAX) {
        return Err(ModelError::Csv(format!("invalid interval {interval}")));
    }
    for (i, pair) in times.windows(2).enumerate() {
        if pair[1] - pair[0] != interval {
            return Err(ModelError::Csv(format!(
                "line {}: interval {} differs from {interval}",
                i + 3,
                pair[1] - pair[0]
            )));
        }
    }
    TimeSeries::new(name, start_s, interval as u32, samples)
}

/// Writes a series in the `t_s,util_pct` CSV format.
pub fn write_workload_csv<W: std::io::Write>(series: &TimeSeries, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t_s,util_pct")?;
    for (i, v) in series.samples.iter().enumerate() {
        let t = series.start_s + i as i64 * i64::from(series.interval_s);
        writeln!(out, "{t},{v}")?;
    }
    Ok(())
}

/// A VM flavor and the probability of drawing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSize {
    pub cpu_units: u32,
    pub memory_mb: u32,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub id: String,
    pub cpu_units: u32,
    pub memory_mb: u32,
    #[serde(default)]
    pub base_cpu_units: u32,
}

impl ServerSpec {
    pub fn new(id: impl Into<String>, cpu_units: u32, memory_mb: u32, base_cpu_units: u32) -> Self {
        Self {
            id: id.into(),
            cpu_units,
            memory_mb,
            base_cpu_units,
        }
    }

    /// CPU units left for VMs once the server's own base demand is paid.
    pub fn placeable_cpu(&self) -> f64 {
        f64::from(self.cpu_units.saturating_sub(self.base_cpu_units))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmSpec {
    pub id: String,
    pub cpu_units: u32,
    pub memory_mb: u32,
    pub series_name: String,
}

/// VM id to server id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation(BTreeMap<String, String>);

impl Allocation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assigns `vm` to `server`, returning the previous server if any.
    pub fn assign(&mut self, vm: impl Into<String>, server: impl Into<String>) -> Option<String> {
        self.0.insert(vm.into(), server.into())
    }

    pub fn remove(&mut self, vm: &str) -> Option<String> {
        self.0.remove(vm)
    }

    pub fn server_of(&self, vm: &str) -> Option<&str> {
        self.0.get(vm).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(v, s)| (v.as_str(), s.as_str()))
    }

    pub fn vms_on<'a>(&'a self, server: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.iter().filter(move |(_, s)| *s == server).map(|(v, _)| v)
    }

    /// Number of distinct servers hosting at least one VM.
    pub fn servers_used(&self) -> usize {
        let mut used: Vec<&str> = self.0.values().map(String::as_str).collect();
        used.sort_unstable();
        used.dedup();
        used.len()
    }
}

impl FromIterator<(String, String)> for Allocation {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Statistic of a VM's series reserved as its capacity during packing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandEstimator {
    Max,
    Mean,
    P95,
    P99,
}

impl DemandEstimator {
    pub const ALL: [DemandEstimator; 4] = [Self::Max, Self::Mean, Self::P95, Self::P99];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::Mean => "mean",
            Self::P95 => "p95",
            Self::P99 => "p99",
        }
    }

    /// Statistic over the samples, in percent.
    pub fn statistic(self, samples: &[f64]) -> Result<f64, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptySeries);
        }
        Ok(match self {
            Self::Max => samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Self::Mean => samples.iter().sum::<f64>() / samples.len() as f64,
            Self::P95 => nearest_rank(samples, 95),
            Self::P99 => nearest_rank(samples, 99),
        })
    }
}

/// Nearest-rank percentile: the value at 1-based rank ceil(pct/100 * n).
fn nearest_rank(samples: &[f64], pct: usize) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (pct * n).div_ceil(100).clamp(1, n);
    sorted[rank - 1]
}

impl fmt::Display for DemandEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DemandEstimator {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| ModelError::UnknownEstimator(s.to_string()))
    }
}

/// Estimated CPU demand of a VM in cpu units.
pub fn estimate_demand(series: &TimeSeries, est: DemandEstimator, vm_cpu_units: u32) -> Result<f64, ModelError> {
    let pct = est.statistic(&series.samples)?;
    Ok(load_from_percent(pct, vm_cpu_units))
}

/// Converts a utilization percent of a VM into server cpu units.
pub fn load_from_percent(pct: f64, vm_cpu_units: u32) -> f64 {
    pct * f64::from(vm_cpu_units) / 100.0
}

/// Server utilization in percent of total capacity. Values above 100 mean
/// the server is overloaded and are left unclamped.
pub fn server_utilization(spec: &ServerSpec, resident_loads: &[f64], migration_overheads: &[f64]) -> f64 {
    let total = f64::from(spec.base_cpu_units)
        + resident_loads.iter().sum::<f64>()
        + migration_overheads.iter().sum::<f64>();
    total / f64::from(spec.cpu_units) * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s3() -> TimeSeries {
        TimeSeries::new("s", 0, 3, vec![10.0, 20.0, 30.0]).unwrap()
    }

    #[test]
    fn sample_lookup() {
        assert_eq!(s3().sample_at(4).unwrap(), 20.0);
        assert_eq!(s3().sample_at(100).unwrap(), 30.0);
        assert_eq!(s3().sample_at(0).unwrap(), 10.0);
        assert!(matches!(
            s3().sample_at(-1),
            Err(ModelError::TimeBeforeSeriesStart { .. })
        ));
    }

    #[test]
    fn sample_far_future_holds_last() {
        assert_eq!(s3().sample_at(i64::MAX).unwrap(), 30.0);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(matches!(
            TimeSeries::new("x", 0, 1, vec![1.0, 100.5]),
            Err(ModelError::InvalidSample { index: 1, .. })
        ));
        assert!(TimeSeries::new("x", 0, 1, vec![f64::NAN]).is_err());
        assert!(TimeSeries::new("x", 0, 1, vec![-0.1]).is_err());
        assert_eq!(TimeSeries::new("x", 0, 0, vec![1.0]), Err(ModelError::InvalidInterval));
    }

    #[test]
    fn demand_estimates() {
        let s = TimeSeries::new("s", 0, 1, vec![10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
        assert_eq!(estimate_demand(&s, DemandEstimator::Mean, 100).unwrap(), 30.0);
        assert_eq!(estimate_demand(&s, DemandEstimator::Max, 50).unwrap(), 25.0);
        assert_eq!(estimate_demand(&s, DemandEstimator::P95, 100).unwrap(), 50.0);
        let c = TimeSeries::constant("c", 1, 42.0, 10).unwrap();
        for est in DemandEstimator::ALL {
            assert_eq!(estimate_demand(&c, est, 100).unwrap(), 42.0);
        }
        let empty = TimeSeries::new("e", 0, 1, vec![]).unwrap();
        assert_eq!(estimate_demand(&empty, DemandEstimator::Max, 1), Err(ModelError::EmptySeries));
    }

    #[test]
    fn nearest_rank_definition() {
        // ranks ceil(0.95*20)=19 and ceil(0.99*20)=20
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(DemandEstimator::P95.statistic(&v).unwrap(), 19.0);
        assert_eq!(DemandEstimator::P99.statistic(&v).unwrap(), 20.0);
        let v: Vec<f64> = (1..=200).map(|i| f64::from(i) / 2.0).collect();
        assert_eq!(DemandEstimator::P95.statistic(&v).unwrap(), 95.0);
        assert_eq!(DemandEstimator::P99.statistic(&v).unwrap(), 99.0);
    }

    #[test]
    fn utilization_examples() {
        let spec = ServerSpec::new("s1", 100, 1024, 5);
        assert_eq!(server_utilization(&spec, &[10.0, 25.0], &[]), 40.0);
        assert_eq!(server_utilization(&spec, &[], &[]), 5.0);
        assert_eq!(server_utilization(&spec, &[10.0, 25.0], &[2.5]), 42.5);
        let bare = ServerSpec::new("s2", 100, 1024, 0);
        assert_eq!(server_utilization(&bare, &[60.0, 60.0], &[]), 120.0);
    }

    #[test]
    fn estimator_names_round_trip() {
        for est in DemandEstimator::ALL {
            assert_eq!(est.as_str().parse::<DemandEstimator>().unwrap(), est);
        }
        assert!("p50".parse::<DemandEstimator>().is_err());
    }

    #[test]
    fn workload_csv_import() {
        let csv = "t_s,util_pct\n100,10\n103,20.5\n106,30\n";
        let s = parse_workload_csv("w", csv.as_bytes()).unwrap();
        assert_eq!(s, TimeSeries::new("w", 100, 3, vec![10.0, 20.5, 30.0]).unwrap());
        let mut out = Vec::new();
        write_workload_csv(&s, &mut out).unwrap();
        assert_eq!(parse_workload_csv("w", out.as_slice()).unwrap(), s);

        let uneven = "t_s,util_pct\n0,1\n3,1\n7,1\n";
        assert!(parse_workload_csv("w", uneven.as_bytes()).is_err());
        let bad_header = "time,util\n0,1\n";
        assert!(parse_workload_csv("w", bad_header.as_bytes()).is_err());
        let out_of_range = "t_s,util_pct\n0,101\n";
        assert!(matches!(
            parse_workload_csv("w", out_of_range.as_bytes()),
            Err(ModelError::InvalidSample { .. })
        ));
    }

    #[test]
    fn allocation_counts_servers() {
        let mut a = Allocation::new();
        a.assign("v1", "s1");
        a.assign("v2", "s1");
        a.assign("v3", "s2");
        assert_eq!(a.servers_used(), 2);
        assert_eq!(a.assign("v3", "s1"), Some("s2".to_string()));
        assert_eq!(a.servers_used(), 1);
        assert_eq!(a.vms_on("s1").count(), 3);
    }

    fn series_strategy() -> impl Strategy<Value = TimeSeries> {
        (
            -1000i64..1000,
            1u32..60,
            prop::collection::vec(0.0f64..=100.0, 1..64),
        )
            .prop_map(|(start, interval, samples)| TimeSeries::new("p", start, interval, samples).unwrap())
    }

    proptest! {
        #[test]
        fn sample_at_is_piecewise_constant(s in series_strategy(), a in 0i64..10_000, b in 0i64..10_000) {
            let (ta, tb) = (s.start_s + a, s.start_s + b);
            let iv = i64::from(s.interval_s);
            if a / iv == b / iv {
                prop_assert_eq!(s.sample_at(ta).unwrap(), s.sample_at(tb).unwrap());
            }
        }

        #[test]
        fn max_dominates_other_estimators(s in series_strategy(), cpu in 1u32..256) {
            let max = estimate_demand(&s, DemandEstimator::Max, cpu).unwrap();
            for est in [DemandEstimator::Mean, DemandEstimator::P95, DemandEstimator::P99] {
                // mean may round a hair above max for near-constant series
                prop_assert!(estimate_demand(&s, est, cpu).unwrap() <= max * (1.0 + 1e-12));
            }
        }

        #[test]
        fn utilization_is_monotone(
            loads in prop::collection::vec(0.0f64..100.0, 0..8),
            overheads in prop::collection::vec(0.0f64..10.0, 0..4),
            bump in 0.0f64..50.0,
            pick in any::<prop::sample::Index>(),
        ) {
            let spec = ServerSpec::new("s", 100, 1, 7);
            let base = server_utilization(&spec, &loads, &overheads);
            if !loads.is_empty() {
                let mut more = loads.clone();
                more[pick.index(loads.len())] += bump;
                prop_assert!(server_utilization(&spec, &more, &overheads) >= base);
            }
            let mut more = overheads.clone();
            more.push(bump);
            prop_assert!(server_utilization(&spec, &loads, &more) >= base);
        }

        #[test]
        fn idle_server_is_base_demand(cap in 1u32..1000, base_frac in 0.0f64..1.0) {
            let base = ((f64::from(cap) * base_frac) as u32).min(cap - 1);
            let spec = ServerSpec::new("s", cap, 1, base);
            prop_assert_eq!(server_utilization(&spec, &[], &[]), f64::from(base) / f64::from(cap) * 100.0);
        }
    }
}
