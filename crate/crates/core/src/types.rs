//! Domain types shared by every part of the simulator: lambda classes,
//! requests, responses and the transaction record a dispatcher builds once
//! a response comes back.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Simulated time, in seconds.
pub type Seconds = f64;

/// Identifier of a node in the topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Name of a lambda function, used as the key into container tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LambdaClass(Arc<str>);

impl LambdaClass {
    pub fn new(name: impl AsRef<str>) -> Self {
        Self(Arc::from(name.as_ref()))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LambdaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for LambdaClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for LambdaClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Self::new(s))
    }
}

/// A request to execute one lambda function.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRequest {
    pub class: LambdaClass,
    /// Input size in bytes, always positive.
    pub input_size: u64,
    pub client: NodeId,
    pub issue_time: Seconds,
    /// Ask the dispatcher for its delay estimate without executing anything.
    pub dry_run: bool,
}

impl LambdaRequest {
    pub fn new(class: LambdaClass, input_size: u64, client: NodeId, issue_time: Seconds) -> Self {
        Self {
            class,
            input_size,
            client,
            issue_time,
            dry_run: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnCode {
    Ok,
    /// No computer offers the requested class.
    NoDestination,
    /// The simulation ended before the transaction completed.
    Dropped,
}

impl fmt::Display for ReturnCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReturnCode::Ok => "ok",
            ReturnCode::NoDestination => "no_destination",
            ReturnCode::Dropped => "dropped",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaResponse {
    pub return_code: ReturnCode,
    pub output_size: u64,
    pub executor: Option<NodeId>,
    /// Time spent inside the computer, waiting included.
    pub processing_time: Seconds,
    /// Short-term busy fraction of the executor, in `[0, 1]`.
    pub reported_load: f64,
}

impl LambdaResponse {
    pub fn failed(return_code: ReturnCode) -> Self {
        Self {
            return_code,
            output_size: 0,
            executor: None,
            processing_time: 0.0,
            reported_load: 0.0,
        }
    }
}

/// A completed request/response exchange as observed by whoever measured
/// `delay` (the dispatcher for house-keeping, the client for metrics).
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionRecord {
    pub request: LambdaRequest,
    pub response: LambdaResponse,
    /// End-to-end time between sending the request and receiving the response.
    pub delay: Seconds,
    pub dispatch_latency: Seconds,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransactionError {
    #[error("transaction has return code {0}, expected ok")]
    NotOk(ReturnCode),
    #[error("processing time {processing_time} exceeds measured delay {delay}")]
    NegativeLatency { delay: Seconds, processing_time: Seconds },
}

impl TransactionRecord {
    /// Builds a record and fills `dispatch_latency` from the other fields.
    pub fn new(
        request: LambdaRequest,
        response: LambdaResponse,
        delay: Seconds,
    ) -> Result<Self, TransactionError> {
        let mut record = Self {
            request,
            response,
            delay,
            dispatch_latency: 0.0,
        };
        record.dispatch_latency = derive_comm_latency(&record)?;
        Ok(record)
    }
}

/// Communication latency of a transaction: measured delay minus the
/// processing time reported by the executor.
pub fn derive_comm_latency(record: &TransactionRecord) -> Result<Seconds, TransactionError> {
    if record.response.return_code != ReturnCode::Ok {
        return Err(TransactionError::NotOk(record.response.return_code));
    }
    let tau = record.delay - record.response.processing_time;
    // Values in (-1e-12, 0) are rounding noise from summing the legs.
    if tau < -1e-12 * record.delay.abs().max(1.0) {
        return Err(TransactionError::NegativeLatency {
            delay: record.delay,
            processing_time: record.response.processing_time,
        });
    }
    Ok(tau.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(delay: f64, p: f64, code: ReturnCode) -> TransactionRecord {
        TransactionRecord {
            request: LambdaRequest::new(LambdaClass::new("f"), 1000, NodeId(0), 0.0),
            response: LambdaResponse {
                return_code: code,
                output_size: 1000,
                executor: Some(NodeId(1)),
                processing_time: p,
                reported_load: 0.0,
            },
            delay,
            dispatch_latency: 0.0,
        }
    }

    #[test]
    fn latency_is_delay_minus_processing() {
        let tau = derive_comm_latency(&record(0.015, 0.010, ReturnCode::Ok)).unwrap();
        assert!((tau - 0.005).abs() < 1e-15);
        let tau = derive_comm_latency(&record(0.010, 0.010, ReturnCode::Ok)).unwrap();
        assert_eq!(tau, 0.0);
    }

    #[test]
    fn non_ok_records_are_rejected() {
        for code in [ReturnCode::NoDestination, ReturnCode::Dropped] {
            assert_eq!(
                derive_comm_latency(&record(0.01, 0.0, code)),
                Err(TransactionError::NotOk(code))
            );
        }
    }

    #[test]
    fn processing_longer_than_delay_is_rejected() {
        assert!(matches!(
            derive_comm_latency(&record(0.010, 0.011, ReturnCode::Ok)),
            Err(TransactionError::NegativeLatency { .. })
        ));
    }

    #[test]
    fn new_fills_dispatch_latency() {
        let r = TransactionRecord::new(
            record(0.0, 0.0, ReturnCode::Ok).request,
            record(0.0, 0.002, ReturnCode::Ok).response,
            0.003,
        )
        .unwrap();
        assert!((r.dispatch_latency - 0.001).abs() < 1e-15);
    }

    #[test]
    fn class_serializes_as_plain_string() {
        let c = LambdaClass::new("face");
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"face\"");
        let back: LambdaClass = serde_json::from_str("\"face\"").unwrap();
        assert_eq!(back, c);
    }
}
