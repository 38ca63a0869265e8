//! Canonical answers: order-free multisets of scalars with tolerant numeric
//! equality.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::engine::{EngineError, ExecutionOutcome};
use super::schema::Value;

pub const REL_TOLERANCE: f64 = 1e-6;
pub const ABS_TOLERANCE: f64 = 1e-9;

/// Largest magnitude at which an integer-valued real is folded into an integer.
const EXACT_INT_LIMIT: f64 = 9_007_199_254_740_992.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Scalar {
    /// Applies the scalar rules: trim text, fold integer-valued reals.
    pub fn canonical(self) -> Scalar {
        match self {
            Scalar::Real(v) if v.fract() == 0.0 && v.abs() < EXACT_INT_LIMIT => Scalar::Int(v as i64),
            Scalar::Text(s) => {
                let t = s.trim();
                if t.len() == s.len() {
                    Scalar::Text(s)
                } else {
                    Scalar::Text(t.to_string())
                }
            }
            other => other,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(v) => Some(*v as f64),
            Scalar::Real(v) => Some(*v),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Scalar::Null => 0,
            Scalar::Int(_) | Scalar::Real(_) => 1,
            Scalar::Text(_) => 2,
        }
    }

    /// Total order used for storage: nulls, then numbers ascending, then text.
    fn storage_cmp(&self, other: &Scalar) -> Ordering {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a.cmp(b),
            (Scalar::Text(a), Scalar::Text(b)) => a.cmp(b),
            (a, b) if a.rank() == 1 && b.rank() == 1 => {
                let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
                x.total_cmp(&y).then_with(|| a.is_real().cmp(&b.is_real()))
            }
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }

    fn is_real(&self) -> bool {
        matches!(self, Scalar::Real(_))
    }

    /// Tolerant equality between canonical scalars.
    pub fn approx_eq(&self, other: &Scalar) -> bool {
        match (self, other) {
            (Scalar::Null, Scalar::Null) => true,
            (Scalar::Text(a), Scalar::Text(b)) => a == b,
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => numbers_close(x, y),
                _ => false,
            },
        }
    }
}

pub fn numbers_close(x: f64, y: f64) -> bool {
    let scale = x.abs().max(y.abs());
    (x - y).abs() <= (REL_TOLERANCE * scale).max(ABS_TOLERANCE)
}

impl From<&Value> for Scalar {
    fn from(v: &Value) -> Self {
        match v {
            Value::Null => Scalar::Null,
            Value::Integer(i) => Scalar::Int(*i),
            Value::Real(f) => Scalar::Real(*f),
            Value::Text(s) => Scalar::Text(s.clone()),
        }
        .canonical()
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Text(s.to_string()).canonical()
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Real(v).canonical()
    }
}

/// A multiset of canonical scalars. Stored sorted, so equality and overlap are
/// independent of the row order the engine produced.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Scalar>", into = "Vec<Scalar>")]
pub struct CanonicalAnswer {
    values: Vec<Scalar>,
}

impl From<Vec<Scalar>> for CanonicalAnswer {
    fn from(values: Vec<Scalar>) -> Self {
        CanonicalAnswer::new(values)
    }
}

impl From<CanonicalAnswer> for Vec<Scalar> {
    fn from(a: CanonicalAnswer) -> Self {
        a.values
    }
}

impl CanonicalAnswer {
    pub fn new(values: impl IntoIterator<Item = Scalar>) -> Self {
        let mut values: Vec<Scalar> = values.into_iter().map(Scalar::canonical).collect();
        values.sort_by(Scalar::storage_cmp);
        CanonicalAnswer { values }
    }

    pub fn values(&self) -> &[Scalar] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn partition(&self) -> (usize, Vec<f64>, Vec<&str>) {
        let mut nulls = 0;
        let mut nums = Vec::new();
        let mut texts = Vec::new();
        for v in &self.values {
            match v {
                Scalar::Null => nulls += 1,
                Scalar::Text(s) => texts.push(s.as_str()),
                other => nums.push(other.as_f64().unwrap()),
            }
        }
        (nulls, nums, texts)
    }

    /// Size of the multiset intersection `self ⊓ other` under the tolerant
    /// scalar equality.
    pub fn overlap(&self, other: &CanonicalAnswer) -> usize {
        let (n1, x1, t1) = self.partition();
        let (n2, x2, t2) = other.partition();
        let mut count = n1.min(n2);

        // Both sides are sorted; a two-pointer sweep gives a maximum matching
        // because each number's tolerance window is an interval.
        let (mut i, mut j) = (0, 0);
        while i < x1.len() && j < x2.len() {
            if numbers_close(x1[i], x2[j]) {
                count += 1;
                i += 1;
                j += 1;
            } else if x1[i] < x2[j] {
                i += 1;
            } else {
                j += 1;
            }
        }

        let (mut i, mut j) = (0, 0);
        while i < t1.len() && j < t2.len() {
            match t1[i].cmp(t2[j]) {
                Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
            }
        }
        count
    }

    /// `other ⊑ self` as multisets.
    pub fn contains_all(&self, other: &CanonicalAnswer) -> bool {
        self.overlap(other) == other.len()
    }
}

impl PartialEq for CanonicalAnswer {
    fn eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.approx_eq(b))
    }
}

/// Flattens a result set into a canonical answer; engine errors pass through.
pub fn canonicalize(outcome: &ExecutionOutcome) -> Result<CanonicalAnswer, EngineError> {
    match outcome {
        ExecutionOutcome::EngineError(e) => Err(e.clone()),
        ExecutionOutcome::ResultSet(rs) => Ok(CanonicalAnswer::new(rs.rows.iter().flatten().map(Scalar::from))),
    }
}
