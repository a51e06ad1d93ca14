use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FiniteHmm;
use crate::smoother::AdditiveFunctional;

/// Largest number of state paths [`hmm_enumerate`] will visit.
pub const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmSmoothing {
    /// `pairwise[k-1][i][j] = P(X_{k-1} = i, X_k = j | y_{0:n})`.
    pub pairwise: Vec<Vec<Vec<f64>>>,
    /// `marginals[k][i] = P(X_k = i | y_{0:n})`.
    pub marginals: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

fn symbol(hmm: &FiniteHmm, y: f64) -> Result<usize> {
    if y >= 0.0 && y.fract() == 0.0 && (y as usize) < hmm.symbols() {
        Ok(y as usize)
    } else {
        Err(Error::InvalidInput(format!("observation {y} is not a symbol index")))
    }
}

/// Scaled forward-backward recursion.
pub fn hmm_forward_backward(hmm: &FiniteHmm, ys: &[f64]) -> Result<HmmSmoothing> {
    hmm.validate()?;
    if ys.is_empty() {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let k_states = hmm.states();
    let obs: Vec<usize> = ys.iter().map(|&y| symbol(hmm, y)).collect::<Result<_>>()?;
    let n = ys.len() - 1;

    let mut alpha = vec![vec![0.0; k_states]; n + 1];
    let mut scale = vec![0.0; n + 1];
    for t in 0..=n {
        for j in 0..k_states {
            let prior = if t == 0 {
                hmm.initial[j]
            } else {
                (0..k_states).map(|i| alpha[t - 1][i] * hmm.transition[i][j]).sum()
            };
            alpha[t][j] = prior * hmm.emission[j][obs[t]];
        }
        scale[t] = alpha[t].iter().sum();
        if scale[t] <= 0.0 {
            return Err(Error::DegenerateWeights { step: t });
        }
        for a in alpha[t].iter_mut() {
            *a /= scale[t];
        }
    }

    let mut beta = vec![vec![1.0; k_states]; n + 1];
    for t in (0..n).rev() {
        for i in 0..k_states {
            beta[t][i] = (0..k_states)
                .map(|j| hmm.transition[i][j] * hmm.emission[j][obs[t + 1]] * beta[t + 1][j])
                .sum::<f64>()
                / scale[t + 1];
        }
    }

    let marginals = (0..=n)
        .map(|t| (0..k_states).map(|i| alpha[t][i] * beta[t][i]).collect())
        .collect();
    let pairwise = (1..=n)
        .map(|t| {
            (0..k_states)
                .map(|i| {
                    (0..k_states)
                        .map(|j| {
                            alpha[t - 1][i] * hmm.transition[i][j] * hmm.emission[j][obs[t]] * beta[t][j]
                                / scale[t]
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(HmmSmoothing {
        pairwise,
        marginals,
        log_likelihood: scale.iter().map(|s| s.ln()).sum(),
    })
}

/// Exact smoothed functional through the pairwise marginals.
pub fn hmm_exact_smoothed_functional<F: AdditiveFunctional + ?Sized>(
    hmm: &FiniteHmm,
    ys: &[f64],
    func: &F,
) -> Result<Vec<f64>> {
    let sm = hmm_forward_backward(hmm, ys)?;
    let m = func.dim();
    let mut out = vec![0.0; m];
    let mut s = vec![0.0; m];
    for (i, &p) in sm.marginals[0].iter().enumerate() {
        func.initial(i as f64, ys[0], &mut s);
        for l in 0..m {
            out[l] += p * s[l];
        }
    }
    for (t, table) in sm.pairwise.iter().enumerate() {
        for (i, row) in table.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                func.step(i as f64, j as f64, ys[t + 1], &mut s);
                for l in 0..m {
                    out[l] += p * s[l];
                }
            }
        }
    }
    Ok(out)
}

/// Exact smoothed functional by summing over all `K^(n+1)` state paths.
pub fn hmm_enumerate<F: AdditiveFunctional + ?Sized>(hmm: &FiniteHmm, ys: &[f64], func: &F) -> Result<Vec<f64>> {
    hmm.validate()?;
    if ys.is_empty() {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let k_states = hmm.states();
    let paths = (k_states as f64).powi(ys.len() as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            what: "HMM path enumeration",
            requested: paths,
            limit: ENUMERATION_LIMIT,
        });
    }
    let obs: Vec<usize> = ys.iter().map(|&y| symbol(hmm, y)).collect::<Result<_>>()?;
    let m = func.dim();
    let mut path = vec![0usize; ys.len()];
    let mut weighted = vec![0.0; m];
    let mut total = 0.0;
    let mut s = vec![0.0; m];
    for code in 0..paths as u64 {
        let mut c = code;
        for x in path.iter_mut() {
            *x = (c % k_states as u64) as usize;
            c /= k_states as u64;
        }
        let mut p = hmm.initial[path[0]] * hmm.emission[path[0]][obs[0]];
        for t in 1..path.len() {
            p *= hmm.transition[path[t - 1]][path[t]] * hmm.emission[path[t]][obs[t]];
        }
        if p == 0.0 {
            continue;
        }
        total += p;
        func.initial(path[0] as f64, ys[0], &mut s);
        let mut acc = s.clone();
        for t in 1..path.len() {
            func.step(path[t - 1] as f64, path[t] as f64, ys[t], &mut s);
            for l in 0..m {
                acc[l] += s[l];
            }
        }
        for l in 0..m {
            weighted[l] += p * acc[l];
        }
    }
    if total <= 0.0 {
        return Err(Error::DegenerateWeights { step: 0 });
    }
    Ok(weighted.into_iter().map(|v| v / total).collect())
}
