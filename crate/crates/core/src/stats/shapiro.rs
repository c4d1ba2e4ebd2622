//! Shapiro-Wilk W and its p-value, after Royston's AS R94.

use std::f64::consts::{FRAC_PI_3, PI};

use serde::{Deserialize, Serialize};

use super::special::{normal_quantile, normal_sf};
use crate::error::{Error, Result};

pub const MIN_N: usize = 3;
pub const MAX_N: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
    pub n: usize,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, k| acc * x + k)
}

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

/// Weights on `x_(n) - x_(1)`, `x_(n-1) - x_(2)`, ... in that order.
fn coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an25 = n as f64 + 0.25;
    let m: Vec<f64> = (1..=half)
        .map(|i| normal_quantile((i as f64 - 0.375) / an25))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;
    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac =
            ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
        (2, fac)
    } else {
        (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
    };
    for i in first..half {
        a[i] = -m[i] / fac;
    }
    a
}

pub fn shapiro_wilk(x: &[f64]) -> Result<ShapiroWilk> {
    let n = x.len();
    if !(MIN_N..=MAX_N).contains(&n) {
        return Err(Error::Range {
            n,
            min: MIN_N,
            max: MAX_N,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("Shapiro-Wilk input must be finite".into()));
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let range = xs[n - 1] - xs[0];
    if range < 1e-19 * xs[0].abs().max(1.0) {
        return Err(Error::Degenerate("all values are equal".into()));
    }
    // scale first for stability; W is affine invariant
    let mean = xs.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = xs.iter().map(|v| (v - mean) / range).collect();

    let a = coefficients(n);
    let mut sax = 0.0;
    let mut ssa = 0.0;
    for (i, ai) in a.iter().enumerate() {
        sax += ai * (z[n - 1 - i] - z[i]);
        ssa += 2.0 * ai * ai;
    }
    let ssx: f64 = z.iter().map(|v| v * v).sum();
    let root = (ssa * ssx).sqrt();
    // 1 - W written to avoid cancellation when W is near 1
    let one_minus_w = (root - sax.abs()) * (root + sax.abs()) / (ssa * ssx);
    let w = (1.0 - one_minus_w).clamp(0.0, 1.0);

    let p_value = if n == 3 {
        (6.0 / PI * (w.sqrt().asin() - FRAC_PI_3)).clamp(0.0, 1.0)
    } else {
        let w1 = one_minus_w.ln();
        let an = n as f64;
        let (y, m, s) = if n <= 11 {
            let gamma = poly(&G, an);
            if w1 >= gamma {
                return Ok(ShapiroWilk { w, p_value: 1e-99, n });
            }
            (-(gamma - w1).ln(), poly(&C3, an), poly(&C4, an).exp())
        } else {
            let ln_n = an.ln();
            (w1, poly(&C5, ln_n), poly(&C6, ln_n).exp())
        };
        normal_sf((y - m) / s)
    };
    Ok(ShapiroWilk { w, p_value, n })
}
