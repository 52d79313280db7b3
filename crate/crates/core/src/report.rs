//! Structured outcome of a numerical check.

use serde::{Serialize, Serializer};

/// Serializes `+inf`/`-inf`/`NaN` as strings, finite values as numbers.
pub fn ext_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
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

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Named {
    pub name: String,
    #[serde(serialize_with = "ext_f64")]
    pub value: f64,
}

impl Named {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Named { name: name.into(), value }
    }
}

/// `passed` holds iff the checked quantity is at most `bound * (1 + tolerance)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub lemma: String,
    pub inputs: String,
    pub computed: Vec<Named>,
    /// The quantity compared against the bound.
    pub checked: Named,
    pub bound: Named,
    #[serde(serialize_with = "ext_f64")]
    pub tolerance: f64,
    pub passed: bool,
    /// `bound * (1 + tolerance) - checked`; negative on failure.
    #[serde(serialize_with = "ext_f64")]
    pub margin: f64,
}

impl VerificationReport {
    pub fn new(
        lemma: impl Into<String>,
        inputs: impl Into<String>,
        computed: Vec<Named>,
        checked: Named,
        bound: Named,
        tolerance: f64,
    ) -> Self {
        let limit = bound.value * (1.0 + tolerance);
        let passed = checked.value <= limit;
        let margin = if checked.value.is_finite() || limit.is_infinite() { limit - checked.value } else { f64::NEG_INFINITY };
        VerificationReport { lemma: lemma.into(), inputs: inputs.into(), computed, checked, bound, tolerance, passed, margin }
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.computed.iter().find(|n| n.name == name).map(|n| n.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
