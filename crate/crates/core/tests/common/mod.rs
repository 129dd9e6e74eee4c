//! Independent reference computations used by the integration tests. None of
//! these go through the crate's eigen-decompositions.
#![allow(dead_code)]

use nalgebra::DMatrix;
use optomirror::C64;

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Generalised Laguerre polynomial `L_n^(a)(x)`.
pub fn gen_laguerre(n: usize, a: usize, x: f64) -> f64 {
    let a = a as f64;
    let (mut prev, mut cur) = (1.0, 1.0 + a - x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `<m|D(beta)|n>` from the associated-Laguerre closed form, for the
/// untruncated operator.
pub fn displacement_element(beta: C64, m: usize, n: usize) -> C64 {
    let x = beta.norm_sqr();
    let gauss = (-x / 2.0).exp();
    if m >= n {
        let ratio = (0.5 * (ln_factorial(n) - ln_factorial(m))).exp();
        beta.powi((m - n) as i32) * (ratio * gauss * gen_laguerre(n, m - n, x))
    } else {
        let ratio = (0.5 * (ln_factorial(m) - ln_factorial(n))).exp();
        (-beta.conj()).powi((n - m) as i32) * (ratio * gauss * gen_laguerre(m, n - m, x))
    }
}

pub fn laguerre_displacement(beta: C64, dim: usize) -> DMatrix<C64> {
    DMatrix::from_fn(dim, dim, |m, n| displacement_element(beta, m, n))
}

/// `exp(-i H t)` by Taylor series with scaling and squaring.
pub fn taylor_expm(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let dim = h.nrows();
    let a = h * C64::new(0.0, -t);
    let norm = a.iter().map(|z| z.norm()).sum::<f64>();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = &a / C64::new(2f64.powi(squarings as i32), 0.0);
    let mut result = DMatrix::identity(dim, dim);
    let mut term = DMatrix::identity(dim, dim);
    for k in 1..40 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `<a(t)>` for a coherent field and a mirror starting in vacuum, from the
/// number-state expansion: `|n>|0>` evolves to
/// `e^{-i w n t} e^{i eta^2 n^2 (W t - sin W t)} |n>|eta n (1 - e^{-iWt})>`.
pub fn number_state_expect_a(alpha: C64, eta: f64, omega_field: f64, omega_mirror: f64, t: f64, n_max: usize) -> C64 {
    // amplitudes c_n of |alpha>
    let mut c = Vec::with_capacity(n_max + 2);
    let mut cn = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..=n_max + 1 {
        if n > 0 {
            cn *= alpha / (n as f64).sqrt();
        }
        c.push(cn);
    }
    let rot = C64::from_polar(1.0, -omega_mirror * t);
    let state = |n: usize| -> (C64, C64) {
        let nf = n as f64;
        let beta = (C64::new(1.0, 0.0) - rot) * (eta * nf);
        let phase = C64::from_polar(
            1.0,
            -omega_field * nf * t + eta * eta * nf * nf * (omega_mirror * t - (omega_mirror * t).sin()),
        );
        (phase, beta)
    };
    let overlap = |a: C64, b: C64| (-(a.norm_sqr() + b.norm_sqr()) / 2.0 + a.conj() * b).exp();
    let mut sum = C64::new(0.0, 0.0);
    for n in 0..=n_max {
        let (pn, bn) = state(n);
        let (pm, bm) = state(n + 1);
        sum += c[n].conj() * c[n + 1] * ((n + 1) as f64).sqrt() * pn.conj() * pm * overlap(bn, bm);
    }
    sum
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
