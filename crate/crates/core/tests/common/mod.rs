//! Helpers shared by the integration tests: a replay driver for the
//! simulated computer and an independent fixed-step integrator.
#![allow(dead_code)]

use edgesim::simcomputer::{ComputerSpec, ContainerSpec, SimComputer, TaskId};
use edgesim::types::{LambdaClass, LambdaRequest, NodeId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ops and memory both equal the input size, so sizes read as ops.
pub fn unit_container(class: &str, workers: usize) -> ContainerSpec {
    ContainerSpec {
        class: LambdaClass::new(class),
        workers,
        ops_offset: 0.0,
        ops_slope: 1.0,
        mem_offset: 0.0,
        mem_slope: 1.0,
    }
}

pub fn request(class: &str, size: u64, t: f64) -> LambdaRequest {
    LambdaRequest::new(LambdaClass::new(class), size, NodeId(0), t)
}

/// Completion time each active task would have at the current rate.
pub fn projections(c: &SimComputer) -> Vec<(TaskId, f64)> {
    c.active_tasks()
        .iter()
        .map(|t| (t.id, c.now() + t.remaining_ops / c.rate()))
        .collect()
}

pub fn projection(c: &SimComputer, id: TaskId) -> Option<f64> {
    projections(c).into_iter().find(|p| p.0 == id).map(|p| p.1)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ev {
    Arrive(usize),
    Activate(usize),
    Complete(usize),
}

/// Drives a computer through `arrivals` (time, size), logging arrivals,
/// activations and completions in order, plus the projections of every
/// task right after each event.
pub struct Replay {
    pub log: Vec<(f64, Ev)>,
    pub projections: Vec<(f64, Vec<(usize, f64)>)>,
}

pub fn replay(spec: ComputerSpec, arrivals: &[(f64, u64)]) -> Replay {
    let mut c = SimComputer::new(spec).unwrap();
    let mut ids: Vec<TaskId> = Vec::new();
    let mut active: Vec<bool> = vec![false; arrivals.len()];
    let mut log = Vec::new();
    let mut projections_log = Vec::new();
    let index = |ids: &[TaskId], id: TaskId| ids.iter().position(|&x| x == id).unwrap() + 1;
    let mut next_arrival = 0;
    loop {
        let completion = c.next_completion_time();
        let arrival = arrivals.get(next_arrival).map(|a| a.0);
        let now = match (completion, arrival) {
            (None, None) => break,
            (Some(t), None) => t,
            (None, Some(a)) => a,
            (Some(t), Some(a)) => t.min(a),
        };
        for done in c.advance(now).unwrap() {
            let i = index(&ids, done.id);
            log.push((done.completion_time, Ev::Complete(i)));
            active[i - 1] = false;
        }
        if arrival == Some(now) {
            let (_, size) = arrivals[next_arrival];
            ids.push(c.submit(&request("f", size, now), now).unwrap());
            next_arrival += 1;
            log.push((now, Ev::Arrive(ids.len())));
        }
        for t in c.active_tasks() {
            let i = index(&ids, t.id);
            if !active[i - 1] {
                active[i - 1] = true;
                log.push((t.activation_time.unwrap(), Ev::Activate(i)));
            }
        }
        let mut p: Vec<(usize, f64)> = projections(&c).into_iter().map(|(id, t)| (index(&ids, id), t)).collect();
        p.sort_by_key(|x| x.0);
        projections_log.push((now, p));
    }
    Replay {
        log,
        projections: projections_log,
    }
}

pub fn single_core(memory: f64) -> ComputerSpec {
    ComputerSpec {
        cores: 1,
        core_speed: 1.0,
        memory,
        containers: vec![unit_container("f", 2)],
        load_window: 1.0,
    }
}

/// Three tasks of 4, 6 and 1 ops at t = 0, 1, 2 on one core, two workers.
pub const FIGURE_ARRIVALS: [(f64, u64); 3] = [(0.0, 4), (1.0, 6), (2.0, 1)];

pub fn log_matches(got: &[(f64, Ev)], want: &[(f64, Ev)]) -> bool {
    got.len() == want.len()
        && got
            .iter()
            .zip(want)
            .all(|((gt, ge), (wt, we))| ge == we && (gt - wt).abs() < 1e-9)
}

pub fn assert_log(got: &[(f64, Ev)], want: &[(f64, Ev)]) {
    assert!(log_matches(got, want), "{got:?}\nexpected {want:?}");
}

/// Hand-computed event sequence of [`FIGURE_ARRIVALS`] on a 1 op/s core.
///
/// Without a memory limit:
/// t=0  λ1 alone, projected 0 + 4 = 4.
/// t=1  λ1 has 3 left, λ2 arrives: both at 1/2, λ1 -> 1 + 6 = 7,
///      λ2 -> 1 + 12 = 13.
/// t=2  λ3 waits, both workers busy.
/// t=7  λ1 done; λ2 has 6 - 3 = 3 left; λ3 starts, still two active,
///      λ2 stays at 7 + 6 = 13, λ3 -> 7 + 2 = 9.
/// t=9  λ3 done; λ2 has 2 left and runs alone -> 11.
///
/// With memory 9, λ1 (4) + λ2 (6) do not fit while λ1 + λ3 (1) would:
/// t=0  λ1 alone -> 4, and it stays 4 since nobody else activates.
/// t=4  λ1 done; λ2 and λ3 start together at 1/2: λ3 -> 4 + 2 = 6.
/// t=6  λ3 done; λ2 has 5 left alone -> 11.
pub fn figure_log(memory_limited: bool) -> Vec<(f64, Ev)> {
    if memory_limited {
        vec![
            (0.0, Ev::Arrive(1)),
            (0.0, Ev::Activate(1)),
            (1.0, Ev::Arrive(2)),
            (2.0, Ev::Arrive(3)),
            (4.0, Ev::Complete(1)),
            (4.0, Ev::Activate(2)),
            (4.0, Ev::Activate(3)),
            (6.0, Ev::Complete(3)),
            (11.0, Ev::Complete(2)),
        ]
    } else {
        vec![
            (0.0, Ev::Arrive(1)),
            (0.0, Ev::Activate(1)),
            (1.0, Ev::Arrive(2)),
            (1.0, Ev::Activate(2)),
            (2.0, Ev::Arrive(3)),
            (7.0, Ev::Complete(1)),
            (7.0, Ev::Activate(3)),
            (9.0, Ev::Complete(3)),
            (11.0, Ev::Complete(2)),
        ]
    }
}

/// Projection checks of the figure replays: (memory limited, time, task,
/// expected projection or `None` when the task must not be active).
pub const FIGURE_PROJECTIONS: [(bool, f64, usize, Option<f64>); 13] = [
    (false, 0.0, 1, Some(4.0)),
    (false, 1.0, 1, Some(7.0)),
    (false, 1.0, 2, Some(13.0)),
    (false, 2.0, 2, Some(13.0)),
    (false, 7.0, 2, Some(13.0)),
    (false, 7.0, 3, Some(9.0)),
    (false, 9.0, 2, Some(11.0)),
    (true, 0.0, 1, Some(4.0)),
    (true, 1.0, 1, Some(4.0)),
    (true, 2.0, 1, Some(4.0)),
    (true, 1.0, 2, None),
    (true, 2.0, 2, None),
    (true, 2.0, 3, None),
];

/// Replays both figures and checks logs and projections.
pub fn figures_hold() -> bool {
    [false, true].into_iter().all(|limited| {
        let r = replay(single_core(if limited { 9.0 } else { 1e9 }), &FIGURE_ARRIVALS);
        log_matches(&r.log, &figure_log(limited))
            && FIGURE_PROJECTIONS
                .iter()
                .filter(|c| c.0 == limited)
                .all(|&(_, t, task, want)| match (projection_at(&r, t, task), want) {
                    (Some(got), Some(want)) => (got - want).abs() < 1e-9,
                    (None, None) => true,
                    _ => false,
                })
    })
}

pub fn projection_at(r: &Replay, time: f64, task: usize) -> Option<f64> {
    r.projections
        .iter()
        .rfind(|(t, _)| (t - time).abs() < 1e-12)
        .and_then(|(_, p)| p.iter().find(|x| x.0 == task).map(|x| x.1))
}
// ---------------------------------------------------------------------------
// Processor-sharing oracle

#[derive(Debug, Clone)]
pub struct Instance {
    pub cores: usize,
    pub memory: f64,
    pub containers: Vec<(usize, f64, f64)>,
    /// (arrival, container, input size)
    pub tasks: Vec<(f64, usize, u64)>,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let cores = rng.random_range(1..=2);
        let containers: Vec<(usize, f64, f64)> = (0..rng.random_range(1..=2))
            .map(|_| {
                (
                    rng.random_range(1..=3),
                    rng.random_range(0.0..0.05),
                    rng.random_range(1e-4..5e-4),
                )
            })
            .collect();
        let n = rng.random_range(1..=5);
        let mut tasks: Vec<(f64, usize, u64)> = (0..n)
            .map(|_| {
                (
                    (rng.random_range(0.0..0.5f64) * 1000.0).round() / 1000.0,
                    rng.random_range(0..containers.len()),
                    rng.random_range(100..1000),
                )
            })
            .collect();
        tasks.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Memory tight enough to block some of the time.
        let memory = rng.random_range(1000.0..3000.0);
        Self {
            cores,
            memory,
            containers,
            tasks,
        }
    }

    pub fn spec(&self) -> ComputerSpec {
        ComputerSpec {
            cores: self.cores,
            core_speed: 1.0,
            memory: self.memory,
            containers: self
                .containers
                .iter()
                .enumerate()
                .map(|(i, &(workers, offset, slope))| ContainerSpec {
                    class: LambdaClass::new(format!("c{i}")),
                    workers,
                    ops_offset: offset,
                    ops_slope: slope,
                    mem_offset: 0.0,
                    mem_slope: 1.0,
                })
                .collect(),
            load_window: 1.0,
        }
    }
}

/// Event-driven completion times, in task order.
pub fn event_driven(inst: &Instance) -> Vec<f64> {
    let mut c = SimComputer::new(inst.spec()).unwrap();
    let mut ids = Vec::new();
    let mut done = vec![f64::NAN; inst.tasks.len()];
    let mut record = |c: &mut SimComputer, ids: &[TaskId], now: f64| {
        for x in c.advance(now).unwrap() {
            let i = ids.iter().position(|&id| id == x.id).unwrap();
            done[i] = x.completion_time;
        }
    };
    for &(t, k, size) in &inst.tasks {
        while let Some(next) = c.next_completion_time().filter(|&n| n < t) {
            record(&mut c, &ids, next);
        }
        ids.push(c.submit(&request(&format!("c{k}"), size, t), t).unwrap());
    }
    while let Some(next) = c.next_completion_time() {
        record(&mut c, &ids, next);
    }
    done
}

/// Fixed-step integration of the same sharing and admission rules.
pub fn integrated(inst: &Instance, dt: f64) -> Vec<f64> {
    #[derive(Clone, Copy, PartialEq)]
    enum S {
        NotArrived,
        Waiting,
        Active,
        Done,
    }
    let n = inst.tasks.len();
    let ops: Vec<f64> = inst
        .tasks
        .iter()
        .map(|&(_, k, size)| inst.containers[k].1 + inst.containers[k].2 * size as f64)
        .collect();
    let mem: Vec<f64> = inst.tasks.iter().map(|&(_, _, size)| size as f64).collect();
    let mut remaining = ops.clone();
    let mut state = vec![S::NotArrived; n];
    let mut done = vec![f64::NAN; n];
    let mut step: u64 = 0;
    let admit = |state: &mut [S]| {
        // Arrival order. Memory is checked first: a task that does not fit
        // stops everyone behind it; one that fits but has no free worker
        // only holds back its own container.
        loop {
            let mut changed = false;
            let used: f64 = (0..n).filter(|&i| state[i] == S::Active).map(|i| mem[i]).sum();
            for i in 0..n {
                if state[i] != S::Waiting {
                    continue;
                }
                if used + mem[i] > inst.memory {
                    return;
                }
                let k = inst.tasks[i].1;
                let busy = (0..n).filter(|&j| state[j] == S::Active && inst.tasks[j].1 == k).count();
                if busy >= inst.containers[k].0 {
                    continue;
                }
                state[i] = S::Active;
                changed = true;
                break;
            }
            if !changed {
                return;
            }
        }
    };
    while state.iter().any(|&s| s != S::Done) {
        let t = step as f64 * dt;
        let mut arrived = false;
        for i in 0..n {
            if state[i] == S::NotArrived && inst.tasks[i].0 <= t + dt * 1e-6 {
                state[i] = S::Waiting;
                arrived = true;
            }
        }
        if arrived {
            admit(&mut state);
        }
        let active: Vec<usize> = (0..n).filter(|&i| state[i] == S::Active).collect();
        let rate = (inst.cores as f64 / active.len().max(1) as f64).min(1.0);
        let mut finished = false;
        for &i in &active {
            if remaining[i] <= rate * dt {
                // Completion inside the step, interpolated.
                done[i] = t + remaining[i] / rate;
                remaining[i] = 0.0;
                state[i] = S::Done;
                finished = true;
            } else {
                remaining[i] -= rate * dt;
            }
        }
        if finished {
            admit(&mut state);
        }
        step += 1;
    }
    done
}

