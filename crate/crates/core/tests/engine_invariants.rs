use proptest::prelude::*;

use vmsim_core::model::{DemandEstimator, DomainSize, TimeSeries};
use vmsim_core::schedule::{build_schedule, BuilderParams, LifetimeDist};
use vmsim_core::{MemoryWorkloads, ServerPool, Simulation, SimulationConfig};

fn workloads() -> MemoryWorkloads {
    let mut w = MemoryWorkloads::new();
    for (i, base) in [10.0, 40.0, 70.0].iter().enumerate() {
        let samples = (0..60).map(|k| (base + (k as f64 * 7.0) % 30.0).min(100.0)).collect();
        w.insert(TimeSeries::new(format!("w{i}"), 0, 15, samples).unwrap());
    }
    w
}

fn sizes() -> Vec<DomainSize> {
    vec![
        DomainSize {
            cpu_units: 10,
            memory_mb: 1024,
            probability: 0.6,
        },
        DomainSize {
            cpu_units: 30,
            memory_mb: 4096,
            probability: 0.4,
        },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn memory_residency_and_clock(seed in 0u64..1000, realloc in prop::sample::select(vec!["none", "ffd-repack", "exact"])) {
        let schedule = build_schedule(&BuilderParams {
            id: "p".into(),
            arrival_rate_per_s: 0.02,
            mean_lifetime_s: 400.0,
            lifetime_dist: LifetimeDist::Exponential,
            horizon_s: 1200,
            sizes: sizes(),
            series_pool: vec!["w0".into(), "w1".into(), "w2".into()],
            seed,
        }).unwrap();
        let mut cfg = SimulationConfig::new("ffd", DemandEstimator::Mean, ServerPool::homogeneous(12, 100, 16384, 0), 1200);
        cfg.reallocation = realloc.into();
        cfg.reallocation_interval_s = 300;
        cfg.seed = seed;
        cfg.exact_budget.max_nodes = Some(5000);

        let mut sim = Simulation::new(&cfg, &schedule, &mut workloads()).unwrap();
        let mut last_clock = 0;
        while sim.step().unwrap() {
            let state = sim.state();
            prop_assert!(state.clock_ms >= last_clock);
            last_clock = state.clock_ms;

            let alloc = state.allocation();
            prop_assert_eq!(alloc.len(), state.live_vms().count());
            for s in &state.servers {
                let resident: u64 = state
                    .live_vms()
                    .filter(|(id, _)| alloc.server_of(id) == Some(s.id.as_str()))
                    .map(|(_, v)| u64::from(v.spec().memory_mb))
                    .sum();
                prop_assert!(resident + state.reserved_mb(&s.id) <= u64::from(s.memory_mb));
            }
            for m in state.in_flight() {
                prop_assert_ne!(alloc.server_of(&m.vm), Some(m.target.as_str()));
            }
        }
        let r = sim.run().unwrap().result;
        prop_assert!(r.sla_violation_rate >= 0.0 && r.sla_violation_rate <= 1.0);
        if realloc == "none" {
            prop_assert_eq!(r.migration_count, 0);
        }
    }

    #[test]
    fn reruns_are_identical(seed in 0u64..1000) {
        let schedule = build_schedule(&BuilderParams {
            id: "d".into(),
            arrival_rate_per_s: 0.03,
            mean_lifetime_s: 300.0,
            lifetime_dist: LifetimeDist::Exponential,
            horizon_s: 900,
            sizes: sizes(),
            series_pool: vec!["w0".into(), "w1".into(), "w2".into()],
            seed,
        }).unwrap();
        let mut cfg = SimulationConfig::new("random", DemandEstimator::P95, ServerPool::homogeneous(10, 100, 16384, 0), 900);
        cfg.placement = "random-online".into();
        cfg.reallocation = "ffd-repack".into();
        cfg.reallocation_interval_s = 300;
        cfg.seed = seed;
        let a = Simulation::new(&cfg, &schedule, &mut workloads()).unwrap().run().unwrap();
        let b = Simulation::new(&cfg, &schedule, &mut workloads()).unwrap().run().unwrap();
        prop_assert_eq!(a.trace_hash, b.trace_hash);
        let (mut ra, mut rb) = (a.result, b.result);
        ra.wall_ms = 0;
        rb.wall_ms = 0;
        prop_assert_eq!(ra, rb);
    }
}
