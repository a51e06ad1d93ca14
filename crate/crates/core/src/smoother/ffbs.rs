//! Batch forward-filtering backward-smoothing.
//!
//! Starting from `W_{n|n} = W_n`, the backward pass forms the pairwise weights
//!
//! ```text
//! ω_k(i, j) = W_{k|n}^(j) W_{k-1}^(i) f(X_k^(j) | X_{k-1}^(i)) / Σ_l W_{k-1}^(l) f(X_k^(j) | X_{k-1}^(l))
//! ```
//!
//! whose column sums over `j` give `W_{k-1|n}`, and accumulates
//! `Σ_k Σ_{i,j} ω_k(i, j) s_k(X_{k-1}^(i), X_k^(j), y_k) + Σ_i W_{0|n}^(i) s_0(X_0^(i), y_0)`.
//!
//! Transition densities are evaluated pair by pair with
//! [`StateSpaceModel::log_transition`] and the standard library `exp`, so
//! this route shares no kernel code with the forward recursion.

use serde::{Deserialize, Serialize};

use super::forward::BACKWARD_LOG_FLOOR;
use super::AdditiveFunctional;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::ParticleSet;
use crate::model::StateSpaceModel;

const BLOCK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfbsOutput {
    pub estimate: Vec<f64>,
    /// `table[k][i] = W_{k|n}^(i)`, present when requested.
    pub table: Option<Vec<Vec<f64>>>,
}

/// Partial results of one block of targets `j` at one backward step.
struct Partial {
    marginal: Vec<f64>,
    estimate: Vec<f64>,
}

/// Runs the backward pass over `history` (`history[k]` is the filter output at
/// time `k`, `ys[k]` the matching observation).
pub fn ffbs_backward<M, F>(
    history: &[ParticleSet],
    ys: &[f64],
    model: &M,
    func: &F,
    store_table: bool,
    exec: Execution,
) -> Result<FfbsOutput>
where
    M: StateSpaceModel,
    F: AdditiveFunctional + ?Sized,
{
    let Some(last) = history.last() else {
        return Err(Error::InvalidInput("empty filter history".into()));
    };
    if ys.len() < history.len() {
        return Err(Error::InvalidInput(format!(
            "{} observations for {} particle sets",
            ys.len(),
            history.len()
        )));
    }
    let m = func.dim();
    let n = history.len() - 1;
    let mut estimate = vec![0.0; m];
    let mut smoothed = last.weights.clone();
    let mut table = store_table.then(|| vec![Vec::new(); n + 1]);

    for k in (1..=n).rev() {
        let prev = &history[k - 1];
        let cur = &history[k];
        if let Some(t) = table.as_mut() {
            t[k] = smoothed.clone();
        }
        let (marginal, part) = backward_step(prev, cur, &smoothed, model, func, ys[k], exec)?;
        for (e, p) in estimate.iter_mut().zip(&part) {
            *e += p;
        }
        smoothed = marginal;
    }

    let mut s = vec![0.0; m];
    for (&x, &w) in history[0].positions.iter().zip(&smoothed) {
        if w == 0.0 {
            continue;
        }
        func.initial(x, ys[0], &mut s);
        for (e, v) in estimate.iter_mut().zip(&s) {
            *e += w * v;
        }
    }
    if let Some(t) = table.as_mut() {
        t[0] = smoothed;
    }
    Ok(FfbsOutput { estimate, table })
}

/// One backward step: returns `W_{k-1|n}` and the step's contribution.
fn backward_step<M, F>(
    prev: &ParticleSet,
    cur: &ParticleSet,
    smoothed: &[f64],
    model: &M,
    func: &F,
    y: f64,
    exec: Execution,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    M: StateSpaceModel,
    F: AdditiveFunctional + ?Sized,
{
    let n_prev = prev.len();
    let n_cur = cur.len();
    let m = func.dim();
    let log_w: Vec<f64> = prev.weights.iter().map(|w| w.ln()).collect();
    let blocks = n_cur.div_ceil(BLOCK);

    let partials: Vec<Result<Partial>> = exec.map_range(blocks, |b| {
        let mut marginal = vec![0.0; n_prev];
        let mut est = vec![0.0; m];
        let mut logs = vec![0.0; n_prev];
        let mut s = vec![0.0; m];
        for j in b * BLOCK..((b + 1) * BLOCK).min(n_cur) {
            let wj = smoothed[j];
            if wj == 0.0 {
                continue;
            }
            let xj = cur.positions[j];
            let mut max = f64::NEG_INFINITY;
            for (i, l) in logs.iter_mut().enumerate() {
                *l = log_w[i] + model.log_transition(prev.positions[i], xj);
                max = max.max(*l);
            }
            if !(max >= BACKWARD_LOG_FLOOR) || !max.is_finite() {
                return Err(Error::DegenerateBackwardKernel {
                    step: cur.time,
                    particle: j,
                    max_log_term: max,
                });
            }
            let mut total = 0.0;
            for l in logs.iter_mut() {
                *l = (*l - max).exp();
                total += *l;
            }
            let scale = wj / total;
            for (i, &l) in logs.iter().enumerate() {
                if l == 0.0 {
                    continue;
                }
                let omega = scale * l;
                marginal[i] += omega;
                func.step(prev.positions[i], xj, y, &mut s);
                for (e, v) in est.iter_mut().zip(&s) {
                    *e += omega * v;
                }
            }
        }
        Ok(Partial {
            marginal,
            estimate: est,
        })
    });

    let mut marginal = vec![0.0; n_prev];
    let mut est = vec![0.0; m];
    for p in partials {
        let p = p?;
        for (a, b) in marginal.iter_mut().zip(&p.marginal) {
            *a += b;
        }
        for (a, b) in est.iter_mut().zip(&p.estimate) {
            *a += b;
        }
    }
    Ok((marginal, est))
}
