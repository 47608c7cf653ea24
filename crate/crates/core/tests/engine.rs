use edgesim::engine::workload::{Arrivals, CellSpec, RequestChoice, SessionWorkload};
use edgesim::engine::{output, run, RunOutput};
use edgesim::estimator::EstimatorParams;
use edgesim::network::{BackgroundTraffic, CliqueParams, DumbbellParams, FatTreeParams};
use edgesim::policies::{PolicyConfig, PolicyKind};
use edgesim::scenario::{
    BackgroundSpec, ChainSpec, ClassSpec, ClientSpec, ComputerPlacement, Scenario, TopologySpec,
};
use edgesim::simcomputer::{ComputerSpec, ContainerSpec};
use edgesim::types::{LambdaClass, ReturnCode};

fn container(class: &str, workers: usize, ops_offset: f64, ops_slope: f64) -> ContainerSpec {
    ContainerSpec {
        class: LambdaClass::new(class),
        workers,
        ops_offset,
        ops_slope,
        mem_offset: 0.0,
        mem_slope: 0.0,
    }
}

fn computer(node: &str, cores: usize, containers: Vec<ContainerSpec>) -> ComputerPlacement {
    ComputerPlacement {
        node: node.into(),
        spec: ComputerSpec {
            cores,
            core_speed: 1.0,
            memory: 1e12,
            containers,
            load_window: 1.0,
        },
    }
}

fn client(name: &str, node: &str, arrivals: Arrivals, class: &str, sizes: &[u64]) -> ClientSpec {
    ClientSpec {
        name: name.into(),
        node: node.into(),
        dispatcher: None,
        tagged: true,
        arrivals,
        requests: sizes
            .iter()
            .map(|&size| RequestChoice {
                class: LambdaClass::new(class),
                size,
            })
            .collect(),
        roaming: None,
    }
}

fn base(kind: PolicyKind) -> Scenario {
    Scenario {
        name: "test".into(),
        seed: 1,
        duration: 20.0,
        warmup_fraction: 0.0,
        topology: TopologySpec::Clique(CliqueParams::new(2)),
        classes: vec![ClassSpec::new("f")],
        computers: vec![computer("e0", 1, vec![container("f", 4, 0.01, 0.0)])],
        policy: PolicyConfig::new(kind, EstimatorParams::with_buckets(vec![1000, 5000])),
        dispatcher_overhead: 0.0,
        probe_overhead: 0.0,
        root: "root".into(),
        clients: vec![client("t", "c0_0", Arrivals::Periodic { period: 1.0 }, "f", &[1000])],
        sessions: None,
        background: vec![],
        load_sample_interval: 1.0,
    }
}

/// Clique of four with heterogeneous computers and a mix of clients.
fn busy(kind: PolicyKind) -> Scenario {
    let mut s = base(kind);
    s.topology = TopologySpec::Clique(CliqueParams::new(4));
    s.duration = 30.0;
    s.warmup_fraction = 0.1;
    s.computers = (0..4)
        .map(|i| computer(&format!("e{i}"), i + 1, vec![container("f", 4, 0.02, 2e-6)]))
        .collect();
    s.clients = (0..4)
        .map(|i| {
            client(
                &format!("t{i}"),
                &format!("c{i}_0"),
                Arrivals::Poisson { rate: 6.0 },
                "f",
                &[2000, 8000, 20000],
            )
        })
        .collect();
    s
}

fn check_invariants(out: &RunOutput) {
    let c = out.counts;
    assert_eq!(c.issued, c.ok + c.no_destination + c.dropped);
    assert_eq!(c.issued as usize, out.transactions.len());
    for t in &out.transactions {
        if t.code != ReturnCode::Ok {
            continue;
        }
        let delay = t.delay.unwrap();
        let legs = t.uplink + t.dispatch + t.forward + t.queueing + t.execution + t.back + t.downlink;
        assert!((delay - legs).abs() < 1e-9, "txn {}: {delay} vs {legs}", t.id);
        assert!((t.p - (t.queueing + t.execution)).abs() < 1e-9);
        assert!(t.uplink >= 0.0 && t.forward >= 0.0 && t.back >= 0.0 && t.downlink >= 0.0);
        assert!(t.queueing >= -1e-12 && t.execution > 0.0);
    }
    let ok_tagged = out
        .transactions
        .iter()
        .filter(|t| t.code == ReturnCode::Ok && t.tagged && t.measured && t.chain_root == t.id)
        .count();
    assert!(out.delays.len() <= ok_tagged);
}

#[test]
fn co_located_delay_is_two_access_legs_plus_processing() {
    let out = run(&base(PolicyKind::Est), 1).unwrap();
    // Independent oracle: 1000 B each way over a 25 Mb/s, 100 us link, and
    // 0.01 ops on a 1 op/s core.
    let access = 1000.0 * 8.0 / 25e6 + 100e-6;
    let expected = 2.0 * access + 0.01;
    assert_eq!(out.counts.ok, 19);
    for d in &out.delays {
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }
    check_invariants(&out);
}

#[test]
fn empty_workload_produces_nothing() {
    let mut s = base(PolicyKind::Est);
    s.clients.clear();
    let out = run(&s, 3).unwrap();
    assert!(out.delays.is_empty());
    assert_eq!(out.counts.issued, 0);
    assert_eq!(out.throughput, 0.0);
}

#[test]
fn missing_class_yields_no_destination() {
    let mut s = base(PolicyKind::Est);
    s.classes.push(ClassSpec::new("g"));
    s.clients[0].requests[0].class = LambdaClass::new("g");
    let out = run(&s, 1).unwrap();
    assert_eq!(out.counts.ok, 0);
    assert_eq!(out.counts.no_destination, out.counts.issued);
    check_invariants(&out);
}

#[test]
fn every_policy_conserves_transactions() {
    for kind in PolicyKind::ALL {
        let mut s = busy(kind);
        if kind == PolicyKind::Centralized {
            s.root = "e0".into();
        }
        let out = run(&s, 11).unwrap();
        check_invariants(&out);
        assert!(out.counts.ok > 500, "{kind}: {:?}", out.counts);
        assert!(out.counts.dropped < 20, "{kind}: {:?}", out.counts);
    }
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for (i, seed) in [5, 5, 6].into_iter().enumerate() {
        let out = run(&busy(PolicyKind::Est), seed).unwrap();
        let path = dir.path().join(i.to_string());
        output::write(&path, &out).unwrap();
        digests.push(output::digest(&path).unwrap());
    }
    assert_eq!(digests[0], digests[1]);
    assert_ne!(digests[0], digests[2]);
}

#[test]
fn legacy_stays_local_and_est_spreads() {
    let legacy = run(&busy(PolicyKind::Legacy), 2).unwrap();
    for t in &legacy.transactions {
        if let Some(exec) = &t.executor {
            assert_eq!(exec, &t.dispatcher);
        }
    }
    let mesh: f64 = legacy.links.iter().filter(|l| !l.a.starts_with('c') && !l.b.starts_with('c')).map(|l| l.throughput).sum();
    assert_eq!(mesh, 0.0);
    let est = run(&busy(PolicyKind::Est), 2).unwrap();
    let remote = est
        .transactions
        .iter()
        .filter(|t| t.executor.as_ref().is_some_and(|e| e != &t.dispatcher))
        .count();
    assert!(remote > 0);
}

#[test]
fn probe_on_idle_identical_computers_uses_one() {
    let mut s = base(PolicyKind::Probe);
    s.topology = TopologySpec::DumbbellHet(DumbbellParams::new(0));
    s.computers = vec![
        computer("lhs", 1, vec![container("f", 2, 0.05, 0.0)]),
        computer("rhs", 1, vec![container("f", 2, 0.05, 0.0)]),
    ];
    s.clients = vec![client("t", "tagged", Arrivals::uniform_around(0.2), "f", &[20000])];
    let out = run(&s, 4).unwrap();
    let execs: std::collections::BTreeSet<_> = out.transactions.iter().filter_map(|t| t.executor.clone()).collect();
    assert_eq!(execs.len(), 1, "{execs:?}");
    assert!(out.transactions.iter().all(|t| t.dispatcher == "root"));
    check_invariants(&out);
}

#[test]
fn background_slows_the_loaded_link() {
    let mut s = base(PolicyKind::Legacy);
    s.topology = TopologySpec::DumbbellHet(DumbbellParams::new(0));
    s.computers = vec![computer("lhs", 1, vec![container("f", 2, 0.001, 0.0)])];
    s.clients = vec![client("t", "tagged", Arrivals::Periodic { period: 0.5 }, "f", &[20000])];
    let quiet = run(&s, 1).unwrap();
    s.background.push(BackgroundSpec {
        a: "root".into(),
        b: "lhs".into(),
        traffic: BackgroundTraffic {
            fraction: 0.8,
            on: 3.0,
            period: 5.0,
            offset: 0.0,
        },
        both_directions: true,
    });
    let loaded = run(&s, 1).unwrap();
    assert!(loaded.delay_percentile(90.0).unwrap() > quiet.delay_percentile(90.0).unwrap() + 0.004);
    assert!(loaded.background_throughput > 0.0);
}

#[test]
fn chains_measure_the_whole_job() {
    let mut s = base(PolicyKind::Est);
    s.classes = vec![
        ClassSpec {
            chain: Some(ChainSpec {
                class: LambdaClass::new("g"),
                size_ratio: 0.1,
            }),
            ..ClassSpec::new("f")
        },
        ClassSpec::new("g"),
    ];
    s.computers = vec![computer("e0", 1, vec![container("f", 1, 0.01, 0.0), container("g", 1, 0.002, 0.0)])];
    let out = run(&s, 1).unwrap();
    assert_eq!(out.counts.issued, 2 * out.delays.len() as u64);
    let access = |b: f64| b * 8.0 / 25e6 + 100e-6;
    let expected = 2.0 * access(1000.0) + 0.01 + 2.0 * access(100.0) + 0.002;
    for d in &out.delays {
        assert!((d - expected).abs() < 1e-12);
    }
    check_invariants(&out);
}

#[test]
fn sessions_on_a_fat_tree() {
    let mut s = base(PolicyKind::Est);
    let ft = FatTreeParams::new(1, 3);
    s.topology = TopologySpec::FatTree(ft);
    s.classes = vec![ClassSpec::new("ar")];
    s.computers = (0..3)
        .map(|i| computer(&format!("bs{i}"), 2, vec![container("ar", 8, 0.002, 1e-6)]))
        .collect();
    s.clients.clear();
    s.sessions = Some(SessionWorkload {
        cells: vec![CellSpec {
            sectors: vec!["bs0_s0".into(), "bs0_s1".into()],
            rate: 0.2,
        }],
        period: 0.033,
        duration_min: 5.0,
        duration_max: 10.0,
        class: LambdaClass::new("ar"),
        size_min: 5000,
        size_max: 15000,
        tagged: true,
    });
    let out = run(&s, 9).unwrap();
    assert!(out.counts.ok > 100);
    // Only bs0 hosts clients; every dispatch happens there.
    assert!(out.transactions.iter().all(|t| t.dispatcher == "bs0"));
    check_invariants(&out);
}

#[test]
fn roaming_clients_move() {
    let mut s = busy(PolicyKind::Legacy);
    s.clients[0].roaming = Some(edgesim::scenario::RoamingSpec {
        nodes: (0..4).map(|i| format!("c{i}_0")).collect(),
        interval: 1.0,
    });
    let out = run(&s, 3).unwrap();
    let dispatchers: std::collections::BTreeSet<_> = out
        .transactions
        .iter()
        .filter(|t| t.client == "t0")
        .map(|t| t.dispatcher.clone())
        .collect();
    assert!(dispatchers.len() > 1);
}
