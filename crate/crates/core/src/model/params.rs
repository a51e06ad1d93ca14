use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain of a single parameter entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Unconstrained,
    Positive,
    /// Open interval `(lo, hi)`.
    Interval { lo: f64, hi: f64 },
}

impl Constraint {
    pub fn contains(&self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match *self {
            Constraint::Unconstrained => true,
            Constraint::Positive => v > 0.0,
            Constraint::Interval { lo, hi } => v > lo && v < hi,
        }
    }

    /// Map to the unconstrained real line: identity, `ln`, or scaled `atanh`.
    pub fn to_free(&self, v: f64) -> f64 {
        match *self {
            Constraint::Unconstrained => v,
            Constraint::Positive => v.ln(),
            Constraint::Interval { lo, hi } => {
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                ((v - mid) / half).atanh()
            }
        }
    }

    pub fn from_free(&self, u: f64) -> f64 {
        match *self {
            Constraint::Unconstrained => u,
            Constraint::Positive => u.exp(),
            Constraint::Interval { lo, hi } => {
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                mid + half * u.tanh()
            }
        }
    }

    /// `dθ/du` evaluated at constrained value `v`.
    pub fn jacobian(&self, v: f64) -> f64 {
        match *self {
            Constraint::Unconstrained => 1.0,
            Constraint::Positive => v,
            Constraint::Interval { lo, hi } => {
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                let t = (v - mid) / half;
                half * (1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: f64,
    pub constraint: Constraint,
}

/// Named parameter vector θ ∈ Θ ⊆ R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelParams {
    pub entries: Vec<ParamEntry>,
}

impl ModelParams {
    pub fn new(entries: Vec<ParamEntry>) -> Self {
        ModelParams { entries }
    }

    pub fn entry(name: &str, value: f64, constraint: Constraint) -> ParamEntry {
        ParamEntry {
            name: name.to_string(),
            value,
            constraint,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.value)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !e.constraint.contains(e.value) {
                let reason = match e.constraint {
                    Constraint::Unconstrained => "must be finite".to_string(),
                    Constraint::Positive => "must be finite and > 0".to_string(),
                    Constraint::Interval { lo, hi } => format!("must lie in ({lo}, {hi})"),
                };
                return Err(Error::domain(&e.name, e.value, reason));
            }
        }
        Ok(())
    }

    /// Copy with new constrained values (validated).
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameter values, got {}",
                self.len(),
                values.len()
            )));
        }
        let mut out = self.clone();
        for (e, &v) in out.entries.iter_mut().zip(values) {
            e.value = v;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn to_free(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.constraint.to_free(e.value)).collect()
    }

    /// Inverse of [`ModelParams::to_free`]; the result always satisfies the
    /// constraints unless the transform saturates in floating point.
    pub fn from_free(&self, free: &[f64]) -> Result<Self> {
        let values: Vec<f64> = self
            .entries
            .iter()
            .zip(free)
            .map(|(e, &u)| e.constraint.from_free(u))
            .collect();
        self.with_values(&values)
    }

    /// Diagonal of `dθ/du` at the current values.
    pub fn free_jacobian(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.constraint.jacobian(e.value)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ModelParams {
        ModelParams::new(vec![
            ModelParams::entry("phi", 0.8, Constraint::Interval { lo: -1.0, hi: 1.0 }),
            ModelParams::entry("sigma2", 0.1, Constraint::Positive),
            ModelParams::entry("mu", -3.0, Constraint::Unconstrained),
        ])
    }

    #[test]
    fn validation_flags_each_constraint() {
        let p = sample();
        p.validate().unwrap();
        assert!(p.with_values(&[1.0, 0.1, 0.0]).is_err());
        assert!(p.with_values(&[0.5, 0.0, 0.0]).is_err());
        assert!(p.with_values(&[0.5, 0.1, f64::NAN]).is_err());
        assert!(p.with_values(&[0.5, 0.1]).is_err());
        assert_eq!(p.get("sigma2"), Some(0.1));
        assert_eq!(p.index_of("mu"), Some(2));
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let p = sample();
        let u = p.to_free();
        let jac = p.free_jacobian();
        let h = 1e-6;
        for k in 0..p.len() {
            let c = p.entries[k].constraint;
            let fd = (c.from_free(u[k] + h) - c.from_free(u[k] - h)) / (2.0 * h);
            assert!((fd - jac[k]).abs() < 1e-8, "entry {k}: {fd} vs {}", jac[k]);
        }
    }

    proptest! {
        #[test]
        fn free_transform_round_trips(phi in -0.999f64..0.999, s in 1e-4f64..1e3, mu in -1e3f64..1e3) {
            let p = sample().with_values(&[phi, s, mu]).unwrap();
            let back = p.from_free(&p.to_free()).unwrap();
            for (a, b) in p.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn any_free_vector_maps_into_domain(u in proptest::collection::vec(-15.0f64..15.0, 3)) {
            let p = sample().from_free(&u).unwrap();
            prop_assert!(p.validate().is_ok());
        }
    }
}
