//! Result files of a run: `transactions.csv`, `loads.csv`, `links.csv` and
//! `summary.json`. Headers are always written, even with no rows.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{ComputerSummary, Counts, RunOutput};
use crate::scenario::Scenario;
use crate::stats;

pub const TRANSACTIONS_HEADER: [&str; 25] = [
    "id",
    "client",
    "class",
    "size",
    "issue_time",
    "code",
    "dispatcher",
    "executor",
    "delay",
    "uplink",
    "dispatch",
    "forward",
    "queueing",
    "execution",
    "back",
    "downlink",
    "p",
    "tau",
    "u",
    "est_tau",
    "est_p",
    "tagged",
    "measured",
    "chain_root",
    "seed",
];

pub const FILES: [&str; 4] = ["transactions.csv", "loads.csv", "links.csv", "summary.json"];

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelaySummary {
    pub samples: usize,
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
    pub p99: Option<f64>,
}

impl DelaySummary {
    pub fn of(samples: &[f64]) -> Self {
        let q = |p| stats::percentile(samples, p).ok();
        Self {
            samples: samples.len(),
            mean: (!samples.is_empty()).then(|| stats::mean(samples)),
            p50: q(50.0),
            p90: q(90.0),
            p99: q(99.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary<'a> {
    pub scenario: &'a Scenario,
    pub seed: u64,
    pub config_hash: &'a str,
    pub counts: Counts,
    pub delay: DelaySummary,
    pub computers: &'a [ComputerSummary],
    pub throughput: f64,
    pub background_throughput: f64,
    pub score_evaluations: u64,
    pub max_stored_samples: usize,
}

pub fn summary(out: &RunOutput) -> Summary<'_> {
    Summary {
        scenario: &out.scenario,
        seed: out.seed,
        config_hash: &out.config_hash,
        counts: out.counts,
        delay: DelaySummary::of(&out.delays),
        computers: &out.computers,
        throughput: out.throughput,
        background_throughput: out.background_throughput,
        score_evaluations: out.score_evaluations,
        max_stored_samples: out.max_stored_samples,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn transactions_csv(out: &RunOutput) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRANSACTIONS_HEADER)?;
    let seed = out.seed.to_string();
    for t in &out.transactions {
        w.write_record([
            t.id.to_string(),
            t.client.clone(),
            t.class.to_string(),
            t.size.to_string(),
            t.issue_time.to_string(),
            t.code.to_string(),
            t.dispatcher.clone(),
            t.executor.clone().unwrap_or_default(),
            opt(t.delay),
            t.uplink.to_string(),
            t.dispatch.to_string(),
            t.forward.to_string(),
            t.queueing.to_string(),
            t.execution.to_string(),
            t.back.to_string(),
            t.downlink.to_string(),
            t.p.to_string(),
            t.tau.to_string(),
            t.u.to_string(),
            opt(t.est_tau),
            opt(t.est_p),
            t.tagged.to_string(),
            t.measured.to_string(),
            t.chain_root.to_string(),
            seed.clone(),
        ])?;
    }
    into_bytes(w)
}

pub fn loads_csv(out: &RunOutput) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "computer", "load"])?;
    for s in &out.loads {
        w.write_record([s.time.to_string(), s.computer.clone(), s.load.to_string()])?;
    }
    into_bytes(w)
}

pub fn links_csv(out: &RunOutput) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["a", "b", "bytes", "throughput_bps"])?;
    for l in &out.links {
        w.write_record([l.a.clone(), l.b.clone(), l.bytes.to_string(), l.throughput.to_string()])?;
    }
    into_bytes(w)
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, OutputError> {
    w.into_inner().map_err(|e| OutputError::Io {
        path: "<memory>".into(),
        source: io::Error::other(e.to_string()),
    })
}

pub fn summary_json(out: &RunOutput) -> String {
    let mut text = serde_json::to_string_pretty(&summary(out)).expect("summaries always serialize");
    text.push('\n');
    text
}

/// Writes the four result files into `dir`, creating it if needed.
pub fn write(dir: &Path, out: &RunOutput) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let contents = [
        transactions_csv(out)?,
        loads_csv(out)?,
        links_csv(out)?,
        summary_json(out).into_bytes(),
    ];
    for (name, bytes) in FILES.iter().zip(contents) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_error(&path))?;
    }
    Ok(())
}

/// Hex SHA-256 over the result files of `dir`, in a fixed order.
pub fn digest(dir: &Path) -> Result<String, OutputError> {
    let mut hasher = Sha256::new();
    for name in FILES {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(io_error(&path))?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
