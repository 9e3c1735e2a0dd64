//! Auditable tester output: verdict, per-phase traces, parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "s-sparse")]
    Sparse,
    #[serde(rename = "far-from-T-sparse")]
    Far,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Sparse => "s-sparse",
            Verdict::Far => "far-from-T-sparse",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub name: String,
    pub fields: BTreeMap<String, Value>,
}

impl PhaseTrace {
    pub fn new(name: impl Into<String>) -> Self {
        PhaseTrace { name: name.into(), fields: BTreeMap::new() }
    }

    pub fn set(&mut self, key: &str, v: impl Serialize) {
        self.fields.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    pub fn with(mut self, key: &str, v: impl Serialize) -> Self {
        self.set(key, v);
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.fields.get(key)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TesterReport {
    pub verdict: Verdict,
    pub phases: Vec<PhaseTrace>,
    pub parameters: BTreeMap<String, Value>,
    pub samples_consumed: u64,
    pub seed: Option<u64>,
    /// Filled in by the caller that times the run; library code leaves it empty
    /// so reports stay comparable across runs.
    pub wall_time_ms: Option<f64>,
    /// Why the verdict is inconclusive, including the module that gave up.
    pub diagnostic: Option<String>,
}

impl TesterReport {
    pub fn new(verdict: Verdict) -> Self {
        TesterReport {
            verdict,
            phases: Vec::new(),
            parameters: BTreeMap::new(),
            samples_consumed: 0,
            seed: None,
            wall_time_ms: None,
            diagnostic: None,
        }
    }

    pub fn param(&mut self, key: &str, v: impl Serialize) {
        self.parameters.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseTrace> {
        self.phases.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        serde_json::from_str(s).map_err(|e| crate::Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let mut r = TesterReport::new(Verdict::Far);
        r.phases.push(PhaseTrace::new("coarse").with("order", 4).with("estimate", 2.5).with("noisy", vec![0.1, 1.2]));
        r.param("s", 1);
        r.samples_consumed = 1234;
        r.seed = Some(9);
        r.wall_time_ms = Some(12.5);
        let back = TesterReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_json().contains("\"far-from-T-sparse\""));
    }
}
