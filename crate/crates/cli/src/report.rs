use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::checks::{Outcome, Status};
use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// JSON has no infinities; non-finite values are written as strings.
pub fn float<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn opt_float<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => float(v, s),
        None => s.serialize_none(),
    }
}

pub fn floats<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&Float(*x))?;
    }
    seq.end()
}

struct Float(f64);

impl Serialize for Float {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        float(&self.0, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub status: Status,
    #[serde(serialize_with = "opt_float")]
    pub lhs: Option<f64>,
    #[serde(serialize_with = "opt_float")]
    pub rhs: Option<f64>,
    #[serde(serialize_with = "opt_float")]
    pub residual: Option<f64>,
    #[serde(serialize_with = "opt_float")]
    pub tolerance: Option<f64>,
    #[serde(serialize_with = "opt_float")]
    pub margin: Option<f64>,
    pub wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Whether the check was aborted by a numeric or domain error rather than
    /// failing its criterion.
    #[serde(skip)]
    pub numeric_error: bool,
}

impl CheckRecord {
    pub fn new(name: &str, result: mirrorplay::Result<Outcome>, wall_time_seconds: f64) -> Self {
        match result {
            Ok(o) => CheckRecord {
                name: name.to_string(),
                status: o.status,
                lhs: o.lhs,
                rhs: o.rhs,
                residual: o.residual,
                tolerance: o.tolerance,
                margin: o.margin,
                wall_time_seconds,
                note: o.note,
                error: None,
                numeric_error: false,
            },
            Err(e) => CheckRecord {
                name: name.to_string(),
                status: Status::Fail,
                lhs: None,
                rhs: None,
                residual: None,
                tolerance: None,
                margin: None,
                wall_time_seconds,
                note: None,
                numeric_error: !matches!(
                    e,
                    mirrorplay::Error::InsufficientPaths { .. } | mirrorplay::Error::InsufficientDecayData { .. }
                ),
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pass,
    Fail,
    Error,
}

impl RunStatus {
    pub fn exit_code(self) -> u8 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::Fail => 1,
            RunStatus::Error => 3,
        }
    }

    pub fn of(records: &[CheckRecord]) -> Self {
        if records.iter().any(|r| r.numeric_error) {
            RunStatus::Error
        } else if records.iter().any(|r| r.status == Status::Fail) {
            RunStatus::Fail
        } else {
            RunStatus::Pass
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub schema: u32,
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: RunStatus,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub checks: Vec<CheckRecord>,
}

impl VerificationReport {
    pub fn new(command: &str, cfg: &RunConfig, checks: Vec<CheckRecord>) -> Self {
        let status = RunStatus::of(&checks);
        VerificationReport {
            schema: crate::config::SCHEMA_VERSION,
            command: command.to_string(),
            version: VERSION.to_string(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            status,
            failed: status != RunStatus::Pass,
            error: None,
            checks,
        }
    }

    /// Report for a run that could not start its checks.
    pub fn aborted(command: &str, cfg: &RunConfig, error: &mirrorplay::Error) -> Self {
        VerificationReport {
            status: RunStatus::Error,
            failed: true,
            error: Some(error.to_string()),
            ..Self::new(command, cfg, Vec::new())
        }
    }
}

/// SHA-256 of the compact JSON form of the effective configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_values_become_strings() {
        let rec = CheckRecord {
            lhs: Some(f64::INFINITY),
            rhs: Some(f64::NEG_INFINITY),
            residual: Some(f64::NAN),
            ..CheckRecord::new("deviation", Ok(dummy()), 0.0)
        };
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["lhs"], "inf");
        assert_eq!(v["rhs"], "-inf");
        assert_eq!(v["residual"], "nan");
        assert_eq!(v["tolerance"], serde_json::Value::Null);
    }

    #[test]
    fn floats_round_trip_exactly() {
        let x = 0.1 + 0.2;
        let rec = CheckRecord {
            lhs: Some(x),
            ..CheckRecord::new("deviation", Ok(dummy()), 0.0)
        };
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["lhs"].as_f64().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn exit_codes_follow_worst_record() {
        let pass = CheckRecord::new("a", Ok(dummy()), 0.0);
        let fail = CheckRecord {
            status: Status::Fail,
            ..pass.clone()
        };
        let insufficient = CheckRecord::new(
            "b",
            Err(mirrorplay::Error::InsufficientPaths { time: 1.0, ratio: 0.9 }),
            0.0,
        );
        let domain = CheckRecord::new(
            "c",
            Err(mirrorplay::Error::PriceRegion {
                time: 1.0,
                min_price: -1.0,
            }),
            0.0,
        );
        assert_eq!(RunStatus::of(std::slice::from_ref(&pass)).exit_code(), 0);
        assert_eq!(RunStatus::of(&[pass.clone(), fail]).exit_code(), 1);
        assert_eq!(RunStatus::of(&[pass.clone(), insufficient]).exit_code(), 1);
        assert_eq!(RunStatus::of(&[pass, domain]).exit_code(), 3);
    }

    fn dummy() -> Outcome {
        Outcome {
            status: Status::Pass,
            lhs: None,
            rhs: None,
            residual: None,
            tolerance: None,
            margin: None,
            note: None,
        }
    }
}
