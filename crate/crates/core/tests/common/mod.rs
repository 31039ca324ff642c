//! Test-side reference implementations, kept independent of the crate's
//! numerics: double-double arithmetic for loss values, plain f64 for the
//! optimizer recurrence, and central finite differences.

#![allow(dead_code)]

use twofloat::{consts::LN_2, TwoFloat};

pub fn dd(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// `e^x` by argument reduction `x = k ln2 + r`, `|r| <= ln2/2`, a further
/// division by 2^10 and a Taylor series squared back up.
pub fn dd_exp(x: TwoFloat) -> TwoFloat {
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = (x - LN_2 * k) / 1024.0;
    let mut term = dd(1.0);
    let mut sum = dd(1.0);
    for n in 1..30 {
        term = term * r / (n as f64);
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

/// Natural log by Newton iteration on `e^y = x`, seeded from f64.
pub fn dd_ln(x: TwoFloat) -> TwoFloat {
    assert!(x.hi() > 0.0, "log of non-positive value");
    let mut y = dd(x.hi().ln());
    for _ in 0..3 {
        y = y + x * dd_exp(-y) - 1.0;
    }
    y
}

/// `-log sigmoid(l)` evaluated directly as `ln(1 + e^-l)`.
pub fn neg_log_sigmoid(l: f64) -> TwoFloat {
    dd_ln(dd_exp(-dd(l)) + 1.0)
}

/// `-log(1 - sigmoid(l))` evaluated directly as `ln(1 + e^l)`.
pub fn neg_log_one_minus_sigmoid(l: f64) -> TwoFloat {
    dd_ln(dd_exp(dd(l)) + 1.0)
}

/// `-log softmax(row)[label]`.
pub fn neg_log_softmax(row: &[f64], label: usize) -> TwoFloat {
    let mut sum = dd(0.0);
    for &l in row {
        sum += dd_exp(dd(l));
    }
    dd_ln(sum) - row[label]
}

pub fn mean(values: impl IntoIterator<Item = TwoFloat>) -> f64 {
    let mut n = 0usize;
    let mut s = dd(0.0);
    for v in values {
        s += v;
        n += 1;
    }
    (s / n as f64).hi()
}

pub fn oracle_gan_d(real: &[f64], fake: &[f64]) -> f64 {
    mean(real.iter().map(|&l| neg_log_sigmoid(l))) + mean(fake.iter().map(|&l| neg_log_one_minus_sigmoid(l)))
}

pub fn oracle_gan_g(fake: &[f64]) -> f64 {
    mean(fake.iter().map(|&l| neg_log_sigmoid(l)))
}

pub fn oracle_cross_entropy(logits: &[f64], labels: &[usize]) -> f64 {
    let k = logits.len() / labels.len();
    mean(labels.iter().enumerate().map(|(i, &y)| neg_log_softmax(&logits[i * k..(i + 1) * k], y)))
}

pub fn oracle_mse(a: &[f64], b: &[f64]) -> f64 {
    mean(a.iter().zip(b).map(|(&x, &y)| {
        let d = dd(x) - y;
        d * d
    }))
}

/// Parameters after `steps` bias-corrected Adam updates with a constant
/// gradient, written out directly from the recurrence.
pub fn adam_reference(p0: f64, g: f64, steps: u32, lr: f64, b1: f64, b2: f64, eps: f64) -> Vec<f64> {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        p -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(p);
    }
    out
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;
/// Below this magnitude both gradients count as zero.
pub const FD_FLOOR: f64 = 1e-7;

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < FD_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Largest relative error over all coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Panics with the worst coordinate when any relative error exceeds the
/// tolerance.
pub fn assert_grads_close(what: &str, analytic: &[f64], numeric: &[f64]) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient length");
    let worst = analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (&a, &n))| (i, relative_error(a, n), a, n))
        .fold((0, 0.0, 0.0, 0.0), |w, c| if c.1 > w.1 { c } else { w });
    assert!(
        worst.1 <= FD_TOL,
        "{what}: coordinate {} analytic {} numeric {} (rel err {:.3e})",
        worst.0,
        worst.2,
        worst.3,
        worst.1
    );
}
