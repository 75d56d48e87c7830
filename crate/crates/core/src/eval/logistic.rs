//! Five-parameter logistic mapping
//! `ŷ = β₁(½ − 1/(1 + e^{β₂(x − β₃)})) + β₄x + β₅`, fitted by
//! Levenberg–Marquardt from several starts.
//!
//! Fitting happens on standardised `x` and `y`; the parameters are mapped
//! back to the original units afterwards. Because the starts are
//! symmetric under `x ↦ −x`, the fitted curve is (up to rounding) invariant
//! under affine transforms of the predictions.

use serde::{Deserialize, Serialize};

use super::metrics::pearson;
use crate::error::{contract, Result};

const MAX_ITERS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta: [f64; 5],
    /// Root-mean-square residual in the units of `mos`.
    pub residual: f64,
    pub converged: bool,
}

impl LogisticFit {
    pub fn apply(&self, x: f64) -> f64 {
        logistic5(&self.beta, x)
    }
}

pub fn logistic5(b: &[f64; 5], x: f64) -> f64 {
    b[0] * (0.5 - 1.0 / (1.0 + (b[1] * (x - b[2])).exp())) + b[3] * x + b[4]
}

fn jacobian_row(b: &[f64; 5], x: f64) -> [f64; 5] {
    let s = 1.0 / (1.0 + (b[1] * (x - b[2])).exp());
    let ds = s * (1.0 - s);
    [0.5 - s, b[0] * ds * (x - b[2]), -b[0] * ds * b[1], x, 1.0]
}

fn sse(b: &[f64; 5], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (logistic5(b, xi) - yi).powi(2)).sum()
}

/// Solves the 5×5 system `a·x = r` by Gaussian elimination with partial
/// pivoting; `None` when singular.
fn solve5(mut a: [[f64; 5]; 5], mut r: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let piv = (col..5).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..5 {
            let f = a[row][col] / a[col][col];
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut out = [0.0; 5];
    for row in (0..5).rev() {
        let s: f64 = (row + 1..5).map(|k| a[row][k] * out[k]).sum();
        out[row] = (r[row] - s) / a[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Levenberg–Marquardt from `start`. Returns the final parameters, their
/// SSE and whether a convergence criterion was met.
fn levenberg_marquardt(start: [f64; 5], x: &[f64], y: &[f64]) -> ([f64; 5], f64, bool) {
    let mut b = start;
    let mut cost = sse(&b, x, y);
    let mut damping = 1e-3;
    for _ in 0..MAX_ITERS {
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        for (&xi, &yi) in x.iter().zip(y) {
            let j = jacobian_row(&b, xi);
            let r = logistic5(&b, xi) - yi;
            for p in 0..5 {
                jtr[p] += j[p] * r;
                for q in 0..5 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let grad = jtr.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad < 1e-13 || cost < 1e-28 {
            return (b, cost, true);
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut a = jtj;
            for p in 0..5 {
                a[p][p] += damping * (jtj[p][p] + 1e-9);
            }
            let neg: [f64; 5] = jtr.map(|g| -g);
            if let Some(delta) = solve5(a, neg) {
                let cand: [f64; 5] = std::array::from_fn(|k| b[k] + delta[k]);
                let c = sse(&cand, x, y);
                if c.is_finite() && c <= cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    let step = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                    let size = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                    b = cand;
                    cost = c;
                    damping = (damping / 3.0).max(1e-12);
                    if rel < 1e-14 && step < 1e-9 * (1.0 + size) {
                        return (b, cost, true);
                    }
                    improved = true;
                    break;
                }
            }
            damping *= 4.0;
        }
        if !improved {
            // No step reduces the cost at any damping: a (numerical) minimum.
            return (b, cost, true);
        }
    }
    (b, cost, false)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Least-squares fit of the mapping from `pred` to `mos`.
pub fn fit_logistic(pred: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    if pred.len() != mos.len() || pred.len() < 6 {
        return Err(contract(format!(
            "logistic fit needs equal lengths of at least 6, got {} and {}",
            pred.len(),
            mos.len()
        )));
    }
    let (mx, sx) = mean_std(pred);
    let (my, sy) = mean_std(mos);
    if sx == 0.0 || sy == 0.0 {
        return Err(crate::Error::UndefinedCorrelation(
            "constant input to the logistic fit".into(),
        ));
    }
    let x: Vec<f64> = pred.iter().map(|v| (v - mx) / sx).collect();
    let y: Vec<f64> = mos.iter().map(|v| (v - my) / sy).collect();

    // Slope of the least-squares line on standardised data is the
    // correlation; its intercept is zero.
    let slope = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64;
    let range = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) - y.iter().copied().fold(f64::INFINITY, f64::min);
    let mid = median(&x);
    let mut starts = vec![[0.0, 1.0, mid, slope, 0.0]];
    for b2 in [1.0, -1.0, 3.0, -3.0, 0.3, -0.3] {
        starts.push([range, b2, mid, slope, 0.0]);
        starts.push([range, b2, mid, 0.0, 0.0]);
    }
    let mut best: Option<([f64; 5], f64)> = None;
    for s in starts {
        let (b, cost, ok) = levenberg_marquardt(s, &x, &y);
        if ok && best.is_none_or(|(_, c)| cost < c) {
            best = Some((b, cost));
        }
    }
    let n = pred.len() as f64;
    Ok(match best {
        Some((b, cost)) => LogisticFit {
            beta: [
                sy * b[0],
                b[1] / sx,
                mx + sx * b[2],
                sy * b[3] / sx,
                my + sy * (b[4] - b[3] * mx / sx),
            ],
            residual: sy * (cost / n).sqrt(),
            converged: true,
        },
        None => LogisticFit {
            beta: [0.0, 0.0, 0.0, sy * slope / sx, my - sy * slope * mx / sx],
            residual: f64::NAN,
            converged: false,
        },
    })
}

/// PLCC between the logistically mapped predictions and `mos`. When no
/// start converges the raw Pearson correlation is returned and the fit is
/// flagged `converged = false`.
pub fn plcc_after_fit(pred: &[f64], mos: &[f64]) -> Result<(f64, LogisticFit)> {
    let fit = fit_logistic(pred, mos)?;
    if !fit.converged {
        return Ok((pearson(pred, mos)?, fit));
    }
    let mapped: Vec<f64> = pred.iter().map(|&x| fit.apply(x)).collect();
    Ok((pearson(&mapped, mos)?, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_affine() {
        let mos: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 3.0 + i as f64).collect();
        let (p, fit) = plcc_after_fit(&mos, &mos).unwrap();
        assert!(fit.converged);
        assert!((p - 1.0).abs() < 1e-9);
        let aff: Vec<f64> = mos.iter().map(|m| 2.0 * m + 3.0).collect();
        assert!((plcc_after_fit(&aff, &mos).unwrap().0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn solver() {
        let mut a = [[0.0; 5]; 5];
        for i in 0..5 {
            a[i][i] = (i + 1) as f64;
            a[i][(i + 1) % 5] = 0.5;
        }
        let x = [1.0, -2.0, 0.5, 3.0, -1.0];
        let r: [f64; 5] = std::array::from_fn(|i| (0..5).map(|j| a[i][j] * x[j]).sum());
        let got = solve5(a, r).unwrap();
        assert!(got.iter().zip(&x).all(|(g, e)| (g - e).abs() < 1e-12));
        assert!(solve5([[0.0; 5]; 5], [0.0; 5]).is_none());
    }

    #[test]
    fn short_input_rejected() {
        assert!(plcc_after_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
