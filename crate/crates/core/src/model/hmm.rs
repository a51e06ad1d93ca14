use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelParams, StateSpaceModel};
use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite-state HMM with a finite observation alphabet.
///
/// States and symbols are passed around as integral `f64` indices. The
/// matrices are structural, so θ is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteHmm {
    /// `transition[i][j] = P(X' = j | X = i)`
    pub transition: Vec<Vec<f64>>,
    /// `emission[i][o] = P(Y = o | X = i)`
    pub emission: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(Error::InvalidInput(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidInput(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the last cumulative value.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl FiniteHmm {
    pub fn new(transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let m = FiniteHmm {
            transition,
            emission,
            initial,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn symbols(&self) -> usize {
        self.emission.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.initial.len();
        if k == 0 {
            return Err(Error::InvalidInput("HMM needs at least one state".into()));
        }
        if self.transition.len() != k || self.emission.len() != k {
            return Err(Error::InvalidInput("HMM matrix shapes disagree with the state count".into()));
        }
        check_distribution("initial distribution", &self.initial)?;
        let symbols = self.symbols();
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidInput(format!("transition row {i} has length {}", row.len())));
            }
            check_distribution(&format!("transition row {i}"), row)?;
        }
        for (i, row) in self.emission.iter().enumerate() {
            if row.len() != symbols || symbols == 0 {
                return Err(Error::InvalidInput(format!("emission row {i} has length {}", row.len())));
            }
            check_distribution(&format!("emission row {i}"), row)?;
        }
        Ok(())
    }

    fn state(&self, x: f64) -> Option<usize> {
        (x >= 0.0 && x.fract() == 0.0 && (x as usize) < self.states()).then_some(x as usize)
    }

    fn symbol(&self, y: f64) -> Option<usize> {
        (y >= 0.0 && y.fract() == 0.0 && (y as usize) < self.symbols()).then_some(y as usize)
    }
}

impl StateSpaceModel for FiniteHmm {
    fn name(&self) -> &'static str {
        "hmm"
    }

    fn params(&self) -> ModelParams {
        ModelParams::default()
    }

    fn with_params(&self, params: &ModelParams) -> Result<Self> {
        if !params.is_empty() {
            return Err(Error::InvalidInput("the finite HMM has no free parameters".into()));
        }
        Ok(self.clone())
    }

    fn check_simulable(&self) -> Result<()> {
        self.validate()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_index(&self.initial, rng) as f64
    }

    fn sample_transition<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let i = self.state(x).expect("state index out of range");
        sample_index(&self.transition[i], rng) as f64
    }

    fn sample_observation<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let i = self.state(x).expect("state index out of range");
        sample_index(&self.emission[i], rng) as f64
    }

    fn log_initial(&self, x: f64) -> f64 {
        self.state(x).map_or(f64::NEG_INFINITY, |i| self.initial[i].ln())
    }

    fn log_transition(&self, x: f64, x_next: f64) -> f64 {
        match (self.state(x), self.state(x_next)) {
            (Some(i), Some(j)) => self.transition[i][j].ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    fn log_observation(&self, y: f64, x: f64) -> f64 {
        match (self.state(x), self.symbol(y)) {
            (Some(i), Some(o)) => self.emission[i][o].ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    fn grad_log_initial(&self, _x: f64, _out: &mut [f64]) {}
    fn grad_log_transition(&self, _x: f64, _x_next: f64, _out: &mut [f64]) {}
    fn grad_log_observation(&self, _y: f64, _x: f64, _out: &mut [f64]) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hmm() -> FiniteHmm {
        FiniteHmm::new(
            vec![vec![0.8, 0.15, 0.05], vec![0.1, 0.7, 0.2], vec![0.0, 0.3, 0.7]],
            vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.2, 0.7]],
            vec![0.5, 0.3, 0.2],
        )
        .unwrap()
    }

    #[test]
    fn rows_are_distributions() {
        let m = hmm();
        for x in 0..3 {
            let t: f64 = (0..3).map(|j| m.log_transition(x as f64, j as f64).exp()).sum();
            assert!((t - 1.0).abs() < 1e-12);
            let e: f64 = (0..3).map(|o| m.log_observation(o as f64, x as f64).exp()).sum();
            assert!((e - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.log_transition(2.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(m.log_transition(5.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let r = FiniteHmm::new(
            vec![vec![0.5, 0.6], vec![0.5, 0.5]],
            vec![vec![1.0], vec![1.0]],
            vec![1.0, 0.0],
        );
        assert!(r.is_err());
    }
}
