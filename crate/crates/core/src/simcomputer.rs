//! Event-driven model of a multi-core edge computer.
//!
//! Tasks are admitted first-come first-served. A task becomes active when
//! its container has a free worker and the residual memory can hold it;
//! active tasks share the cores equally, each capped at one core. A task
//! that does not fit in memory blocks every later task until it is admitted,
//! while a task that only lacks a worker lets tasks of other containers
//! through.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::types::{LambdaClass, LambdaRequest, Seconds};

/// Two event times closer than this are treated as simultaneous.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub class: LambdaClass,
    pub workers: usize,
    /// Operations required by any invocation.
    #[serde(default)]
    pub ops_offset: f64,
    /// Operations per input byte.
    #[serde(default)]
    pub ops_slope: f64,
    /// Memory (bytes) required by any invocation.
    #[serde(default)]
    pub mem_offset: f64,
    /// Memory bytes per input byte.
    #[serde(default)]
    pub mem_slope: f64,
}

impl ContainerSpec {
    pub fn required_ops(&self, input_size: u64) -> f64 {
        self.ops_offset + self.ops_slope * input_size as f64
    }

    pub fn required_mem(&self, input_size: u64) -> f64 {
        self.mem_offset + self.mem_slope * input_size as f64
    }
}

fn default_load_window() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputerSpec {
    pub cores: usize,
    /// Operations per second of a single core.
    pub core_speed: f64,
    /// Installed memory in bytes.
    pub memory: f64,
    pub containers: Vec<ContainerSpec>,
    /// Length of the trailing window used for the reported load, seconds.
    #[serde(default = "default_load_window")]
    pub load_window: f64,
}

impl ComputerSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidSpec(msg));
        if self.cores == 0 {
            return bad("cores must be at least 1".into());
        }
        if !(self.core_speed > 0.0 && self.core_speed.is_finite()) {
            return bad(format!("core_speed must be positive, got {}", self.core_speed));
        }
        if !(self.memory > 0.0) {
            return bad(format!("memory must be positive, got {}", self.memory));
        }
        if !(self.load_window > 0.0) {
            return bad(format!("load_window must be positive, got {}", self.load_window));
        }
        for (i, c) in self.containers.iter().enumerate() {
            if c.workers == 0 {
                return bad(format!("container {} needs at least one worker", c.class));
            }
            let fields = [c.ops_offset, c.ops_slope, c.mem_offset, c.mem_slope];
            if fields.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad(format!("container {} has a negative or non-finite requirement", c.class));
            }
            if self.containers[..i].iter().any(|o| o.class == c.class) {
                return bad(format!("duplicate container for class {}", c.class));
            }
        }
        Ok(())
    }

    pub fn container(&self, class: &LambdaClass) -> Option<&ContainerSpec> {
        self.containers.iter().find(|c| &c.class == class)
    }

    pub fn offers(&self, class: &LambdaClass) -> bool {
        self.container(class).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("no container for class {0}")]
    UnknownClass(LambdaClass),
    #[error("task needs {required} bytes but only {installed} are installed")]
    ExceedsMemory { required: f64, installed: f64 },
    #[error("time went backwards: {now} < {last}")]
    TimeRegression { now: Seconds, last: Seconds },
    #[error("expected processing time must be positive, got {0}")]
    NonPositiveExpected(Seconds),
    #[error("invalid computer spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskState {
    Waiting,
    Active,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub id: TaskId,
    pub class: LambdaClass,
    container: usize,
    pub required_ops: f64,
    pub remaining_ops: f64,
    pub required_mem: f64,
    pub state: TaskState,
    pub arrival_time: Seconds,
    pub activation_time: Option<Seconds>,
    /// Load observed when the task arrived, before its execution.
    pub load_at_arrival: f64,
}

/// A finished task, as handed back to whoever submitted it.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub id: TaskId,
    pub class: LambdaClass,
    pub arrival_time: Seconds,
    pub activation_time: Seconds,
    pub completion_time: Seconds,
    pub required_ops: f64,
    pub load_at_arrival: f64,
}

impl Completion {
    /// Time spent in the computer, waiting included.
    pub fn processing_time(&self) -> Seconds {
        self.completion_time - self.arrival_time
    }

    pub fn waiting_time(&self) -> Seconds {
        self.activation_time - self.arrival_time
    }
}

#[derive(Debug, Clone)]
pub struct SimComputer {
    spec: ComputerSpec,
    now: Seconds,
    active: Vec<Task>,
    waiting: VecDeque<Task>,
    active_per_container: Vec<usize>,
    next_id: u64,
    /// Change points of the number of busy cores, oldest first.
    busy_segments: VecDeque<(Seconds, usize)>,
    busy_core_seconds: f64,
    /// Completions produced by `submit` advancing the clock, not yet returned.
    pending: Vec<Completion>,
}

impl SimComputer {
    pub fn new(spec: ComputerSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let containers = spec.containers.len();
        Ok(Self {
            spec,
            now: 0.0,
            active: Vec::new(),
            waiting: VecDeque::new(),
            active_per_container: vec![0; containers],
            next_id: 0,
            busy_segments: VecDeque::from([(0.0, 0)]),
            busy_core_seconds: 0.0,
            pending: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ComputerSpec {
        &self.spec
    }

    pub fn now(&self) -> Seconds {
        self.now
    }

    pub fn active_tasks(&self) -> &[Task] {
        &self.active
    }

    pub fn waiting_tasks(&self) -> impl Iterator<Item = &Task> {
        self.waiting.iter()
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.active
            .iter()
            .chain(self.waiting.iter())
            .find(|t| t.id == id)
    }

    pub fn memory_in_use(&self) -> f64 {
        self.active.iter().map(|t| t.required_mem).sum()
    }

    /// Per-task execution rate with the current number of active tasks.
    pub fn rate(&self) -> f64 {
        rate_for(&self.spec, self.active.len())
    }

    pub fn busy_cores(&self) -> usize {
        self.active.len().min(self.spec.cores)
    }

    /// Busy core-seconds accumulated since time 0, up to the current clock.
    pub fn busy_core_seconds(&self) -> f64 {
        self.busy_core_seconds
    }

    /// Creates a task for `request` and tries to admit it.
    ///
    /// The clock is first advanced to `now`; tasks finishing at or before
    /// `now` complete before the new one is considered. Those completions
    /// are returned by the next call to [`SimComputer::advance`].
    pub fn submit(&mut self, request: &LambdaRequest, now: Seconds) -> Result<TaskId, SimError> {
        let (container, spec) = self
            .spec
            .containers
            .iter()
            .enumerate()
            .find(|(_, c)| c.class == request.class)
            .ok_or_else(|| SimError::UnknownClass(request.class.clone()))?;
        let required_ops = spec.required_ops(request.input_size);
        let required_mem = spec.required_mem(request.input_size);
        if required_mem > self.spec.memory {
            return Err(SimError::ExceedsMemory {
                required: required_mem,
                installed: self.spec.memory,
            });
        }
        let done = self.advance(now)?;
        self.pending.extend(done);

        let id = TaskId(self.next_id);
        self.next_id += 1;
        let load_at_arrival = self.reported_load(now);
        self.waiting.push_back(Task {
            id,
            class: request.class.clone(),
            container,
            required_ops,
            remaining_ops: required_ops,
            required_mem,
            state: TaskState::Waiting,
            arrival_time: now,
            activation_time: None,
            load_at_arrival,
        });
        self.admit();
        Ok(id)
    }

    /// Runs the computer forward to `now` and returns the tasks that
    /// completed, in completion order.
    pub fn advance(&mut self, now: Seconds) -> Result<Vec<Completion>, SimError> {
        if now < self.now - TIME_EPS {
            return Err(SimError::TimeRegression {
                now,
                last: self.now,
            });
        }
        let mut completed = std::mem::take(&mut self.pending);
        while !self.active.is_empty() {
            let rate = self.rate();
            let min_remaining = self
                .active
                .iter()
                .map(|t| t.remaining_ops)
                .fold(f64::INFINITY, f64::min);
            let finish = self.now + min_remaining / rate;
            if finish > now + TIME_EPS {
                break;
            }
            let finish = finish.min(now).max(self.now);
            let elapsed = finish - self.now;
            self.progress(elapsed, rate);
            let threshold = min_remaining * (1.0 + 1e-12) - rate * elapsed;
            let mut i = 0;
            while i < self.active.len() {
                if self.active[i].remaining_ops <= threshold.max(0.0) {
                    let task = self.active.remove(i);
                    self.active_per_container[task.container] -= 1;
                    completed.push(Completion {
                        id: task.id,
                        class: task.class,
                        arrival_time: task.arrival_time,
                        activation_time: task.activation_time.unwrap_or(task.arrival_time),
                        completion_time: finish,
                        required_ops: task.required_ops,
                        load_at_arrival: task.load_at_arrival,
                    });
                } else {
                    i += 1;
                }
            }
            self.admit();
            self.mark_busy();
        }
        if now > self.now {
            let rate = self.rate();
            self.progress(now - self.now, rate);
        }
        Ok(completed)
    }

    /// Time of the next completion if nothing else arrives.
    pub fn next_completion_time(&self) -> Option<Seconds> {
        if !self.pending.is_empty() {
            return Some(self.now);
        }
        let min_remaining = self
            .active
            .iter()
            .map(|t| t.remaining_ops)
            .fold(f64::INFINITY, f64::min);
        min_remaining
            .is_finite()
            .then(|| self.now + min_remaining / self.rate())
    }

    /// Busy fraction of the cores over the trailing load window ending at
    /// `now`. The caller is expected to have advanced the computer to `now`.
    pub fn reported_load(&self, now: Seconds) -> f64 {
        let window = self.spec.load_window;
        let start = now - window;
        let mut busy = 0.0;
        for (i, &(seg_start, cores)) in self.busy_segments.iter().enumerate() {
            let seg_end = self
                .busy_segments
                .get(i + 1)
                .map_or(now, |&(next, _)| next);
            let lo = seg_start.max(start);
            let hi = seg_end.min(now);
            if hi > lo {
                busy += cores as f64 * (hi - lo);
            }
        }
        (busy / (self.spec.cores as f64 * window)).clamp(0.0, 1.0)
    }

    /// Completion delay (from `now`) that `request` would experience if
    /// nothing else arrived. The computer itself is left untouched.
    pub fn probe_completion(&self, request: &LambdaRequest, now: Seconds) -> Result<Seconds, SimError> {
        let mut shadow = self.projection_copy();
        let id = shadow.submit(request, now)?;
        loop {
            let next = shadow
                .next_completion_time()
                .expect("a submitted task is always active or waiting behind an active one");
            let done = shadow.advance(next)?;
            if let Some(c) = done.iter().find(|c| c.id == id) {
                return Ok(c.completion_time - now);
            }
        }
    }

    /// Completion time of every task currently in the computer, assuming no
    /// further arrivals.
    pub fn projected_completions(&self) -> Vec<(TaskId, Seconds)> {
        let mut shadow = self.projection_copy();
        let mut out = std::mem::take(&mut shadow.pending)
            .into_iter()
            .map(|c| (c.id, c.completion_time))
            .collect::<Vec<_>>();
        while let Some(next) = shadow.next_completion_time() {
            let done = shadow
                .advance(next)
                .expect("projection never moves backwards");
            out.extend(done.into_iter().map(|c| (c.id, c.completion_time)));
        }
        out
    }

    fn projection_copy(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            now: self.now,
            active: self.active.clone(),
            waiting: self.waiting.clone(),
            active_per_container: self.active_per_container.clone(),
            next_id: self.next_id,
            busy_segments: VecDeque::from([(self.now, self.busy_cores())]),
            busy_core_seconds: 0.0,
            pending: self.pending.clone(),
        }
    }

    fn progress(&mut self, elapsed: f64, rate: f64) {
        if elapsed <= 0.0 {
            return;
        }
        let work = rate * elapsed;
        for t in &mut self.active {
            t.remaining_ops = (t.remaining_ops - work).max(0.0);
        }
        self.busy_core_seconds += self.busy_cores() as f64 * elapsed;
        self.now += elapsed;
        let horizon = self.now - self.spec.load_window;
        while self.busy_segments.len() > 1 && self.busy_segments[1].0 <= horizon {
            self.busy_segments.pop_front();
        }
    }

    fn admit(&mut self) {
        let mut i = 0;
        let mut mem_in_use = self.memory_in_use();
        while i < self.waiting.len() {
            let task = &self.waiting[i];
            if task.required_mem > self.spec.memory - mem_in_use + 1e-9 {
                break;
            }
            let workers = self.spec.containers[task.container].workers;
            if self.active_per_container[task.container] >= workers {
                i += 1;
                continue;
            }
            let mut task = self.waiting.remove(i).expect("index checked above");
            task.state = TaskState::Active;
            task.activation_time = Some(self.now);
            mem_in_use += task.required_mem;
            self.active_per_container[task.container] += 1;
            self.active.push(task);
        }
        self.mark_busy();
    }

    fn mark_busy(&mut self) {
        let busy = self.busy_cores();
        match self.busy_segments.back_mut() {
            Some(last) if last.0 >= self.now => last.1 = busy,
            Some(last) if last.1 == busy => {}
            _ => self.busy_segments.push_back((self.now, busy)),
        }
    }
}

fn rate_for(spec: &ComputerSpec, active: usize) -> f64 {
    if active == 0 {
        return spec.core_speed;
    }
    spec.core_speed * (spec.cores as f64 / active as f64).min(1.0)
}

/// Ratio between actual and expected processing time, minus one.
pub fn relative_execution_error(actual: Seconds, expected: Seconds) -> Result<f64, SimError> {
    if !(expected > 0.0) {
        return Err(SimError::NonPositiveExpected(expected));
    }
    Ok(actual / expected - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::NodeId;

    fn one_class(cores: usize, speed: f64, workers: usize, memory: f64) -> ComputerSpec {
        ComputerSpec {
            cores,
            core_speed: speed,
            memory,
            containers: vec![ContainerSpec {
                class: LambdaClass::new("f"),
                workers,
                ops_offset: 0.0,
                ops_slope: 1.0,
                mem_offset: 0.0,
                mem_slope: 1.0,
            }],
            load_window: 1.0,
        }
    }

    fn req(size: u64) -> LambdaRequest {
        LambdaRequest::new(LambdaClass::new("f"), size, NodeId(0), 0.0)
    }

    fn run_to_end(c: &mut SimComputer) -> Vec<Completion> {
        let mut all = Vec::new();
        while let Some(t) = c.next_completion_time() {
            all.extend(c.advance(t).unwrap());
        }
        all
    }

    #[test]
    fn single_task_runs_at_full_core() {
        let mut c = SimComputer::new(one_class(1, 100.0, 2, 1e9)).unwrap();
        c.submit(&req(100), 0.0).unwrap();
        assert_eq!(c.next_completion_time(), Some(1.0));
    }

    #[test]
    fn second_arrival_halves_the_rate() {
        let mut c = SimComputer::new(one_class(1, 100.0, 2, 1e9)).unwrap();
        let a = c.submit(&req(100), 0.0).unwrap();
        let b = c.submit(&req(100), 0.5).unwrap();
        let done = run_to_end(&mut c);
        assert_eq!(done[0].id, a);
        assert!((done[0].completion_time - 1.5).abs() < 1e-12);
        assert_eq!(done[1].id, b);
        assert!((done[1].completion_time - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rate_is_capped_at_one_core() {
        let mut c = SimComputer::new(one_class(2, 100.0, 4, 1e9)).unwrap();
        c.submit(&req(100), 0.0).unwrap();
        c.submit(&req(100), 0.0).unwrap();
        assert_eq!(c.rate(), 100.0);
        let mut c = SimComputer::new(one_class(1, 100.0, 4, 1e9)).unwrap();
        for _ in 0..4 {
            c.submit(&req(100), 0.0).unwrap();
        }
        assert_eq!(c.rate(), 25.0);
    }

    #[test]
    fn unknown_class_is_rejected() {
        let mut c = SimComputer::new(one_class(1, 100.0, 1, 1e9)).unwrap();
        let r = LambdaRequest::new(LambdaClass::new("g"), 1, NodeId(0), 0.0);
        assert_eq!(c.submit(&r, 0.0), Err(SimError::UnknownClass(LambdaClass::new("g"))));
        assert!(c.probe_completion(&r, 0.0).is_err());
    }

    #[test]
    fn oversized_task_is_rejected() {
        let mut c = SimComputer::new(one_class(1, 100.0, 1, 50.0)).unwrap();
        assert!(matches!(c.submit(&req(100), 0.0), Err(SimError::ExceedsMemory { .. })));
    }

    #[test]
    fn time_regression_is_an_error() {
        let mut c = SimComputer::new(one_class(1, 100.0, 1, 1e9)).unwrap();
        c.advance(2.0).unwrap();
        assert!(matches!(c.advance(1.0), Err(SimError::TimeRegression { .. })));
    }

    #[test]
    fn zero_ops_completes_at_submission() {
        let mut c = SimComputer::new(one_class(1, 100.0, 1, 1e9)).unwrap();
        let id = c.submit(&req(0), 3.0).unwrap();
        assert_eq!(c.next_completion_time(), Some(3.0));
        let done = c.advance(3.0).unwrap();
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].id, id);
        assert_eq!(done[0].completion_time, 3.0);
    }

    #[test]
    fn completion_frees_worker_before_same_instant_arrival() {
        let mut c = SimComputer::new(one_class(1, 100.0, 1, 1e9)).unwrap();
        c.submit(&req(100), 0.0).unwrap();
        let b = c.submit(&req(100), 1.0).unwrap();
        assert_eq!(c.task(b).unwrap().state, TaskState::Active);
        assert_eq!(c.task(b).unwrap().activation_time, Some(1.0));
        let done = c.advance(1.0).unwrap();
        assert_eq!(done.len(), 1);
    }

    #[test]
    fn reported_load_integrates_busy_cores() {
        let mut c = SimComputer::new(one_class(1, 100.0, 2, 1e9)).unwrap();
        assert_eq!(c.reported_load(0.0), 0.0);
        c.submit(&req(30), 0.7).unwrap();
        c.advance(1.0).unwrap();
        assert!((c.reported_load(1.0) - 0.3).abs() < 1e-12);

        let mut c = SimComputer::new(one_class(2, 100.0, 2, 1e9)).unwrap();
        c.submit(&req(1000), 0.0).unwrap();
        c.submit(&req(1000), 0.0).unwrap();
        c.advance(2.0).unwrap();
        assert!((c.reported_load(2.0) - 1.0).abs() < 1e-12);
        // One of two cores busy.
        let mut c = SimComputer::new(one_class(2, 100.0, 2, 1e9)).unwrap();
        c.submit(&req(1000), 0.0).unwrap();
        c.advance(2.0).unwrap();
        assert!((c.reported_load(2.0) - 0.5).abs() < 1e-12);
        assert!((c.busy_core_seconds() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn probe_completion_leaves_state_untouched() {
        let mut c = SimComputer::new(one_class(1, 100.0, 2, 1e9)).unwrap();
        assert!((c.probe_completion(&req(100), 0.0).unwrap() - 1.0).abs() < 1e-12);
        c.submit(&req(100), 0.0).unwrap();
        c.advance(0.5).unwrap();
        // Resident has 50 ops left: both at 50 ops/s for 1 s, then the
        // newcomer runs its last 50 ops alone in 0.5 s.
        let probe = c.probe_completion(&req(100), 0.5).unwrap();
        assert!((probe - 1.5).abs() < 1e-12);
        assert_eq!(c.active_tasks().len(), 1);
        assert!((c.active_tasks()[0].remaining_ops - 50.0).abs() < 1e-9);
    }

    #[test]
    fn probe_includes_waiting_for_a_worker() {
        let mut c = SimComputer::new(one_class(1, 100.0, 1, 1e9)).unwrap();
        c.submit(&req(100), 0.0).unwrap();
        // Waits 1 s for the worker, then runs 1 s.
        assert!((c.probe_completion(&req(100), 0.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn worker_blocked_head_does_not_block_other_containers() {
        let mut spec = one_class(2, 100.0, 1, 1e9);
        spec.containers.push(ContainerSpec {
            class: LambdaClass::new("g"),
            workers: 1,
            ops_offset: 0.0,
            ops_slope: 1.0,
            mem_offset: 0.0,
            mem_slope: 1.0,
        });
        let mut c = SimComputer::new(spec).unwrap();
        c.submit(&req(100), 0.0).unwrap();
        let blocked = c.submit(&req(100), 0.0).unwrap();
        let g = LambdaRequest::new(LambdaClass::new("g"), 100, NodeId(0), 0.0);
        let other = c.submit(&g, 0.0).unwrap();
        assert_eq!(c.task(blocked).unwrap().state, TaskState::Waiting);
        assert_eq!(c.task(other).unwrap().state, TaskState::Active);
    }

    #[test]
    fn memory_blocked_head_blocks_everyone() {
        let mut spec = one_class(2, 100.0, 4, 150.0);
        spec.containers.push(ContainerSpec {
            class: LambdaClass::new("g"),
            workers: 4,
            ops_offset: 0.0,
            ops_slope: 1.0,
            mem_offset: 0.0,
            mem_slope: 1.0,
        });
        let mut c = SimComputer::new(spec).unwrap();
        c.submit(&req(100), 0.0).unwrap();
        let big = c.submit(&req(100), 0.0).unwrap();
        let g = LambdaRequest::new(LambdaClass::new("g"), 10, NodeId(0), 0.0);
        let small = c.submit(&g, 0.0).unwrap();
        assert_eq!(c.task(big).unwrap().state, TaskState::Waiting);
        assert_eq!(c.task(small).unwrap().state, TaskState::Waiting);
        let done = c.advance(1.0).unwrap();
        assert_eq!(done.len(), 1);
        assert_eq!(c.task(big).unwrap().state, TaskState::Active);
        assert_eq!(c.task(small).unwrap().state, TaskState::Active);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = one_class(1, 100.0, 1, 1.0);
        s.cores = 0;
        assert!(SimComputer::new(s).is_err());
        let mut s = one_class(1, 100.0, 1, 1.0);
        s.containers[0].workers = 0;
        assert!(SimComputer::new(s).is_err());
        let mut s = one_class(1, 100.0, 1, 1.0);
        s.containers.push(s.containers[0].clone());
        assert!(SimComputer::new(s).is_err());
        let mut s = one_class(1, 100.0, 1, 1.0);
        s.containers[0].ops_slope = -1.0;
        assert!(SimComputer::new(s).is_err());
    }

    #[test]
    fn relative_error() {
        assert_eq!(relative_execution_error(3.0, 3.0).unwrap(), 0.0);
        assert!((relative_execution_error(1.1, 1.0).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(relative_execution_error(2.0, 4.0).unwrap(), -0.5);
        assert!(relative_execution_error(1.0, 0.0).is_err());
        assert!(relative_execution_error(1.0, -1.0).is_err());
    }
}
