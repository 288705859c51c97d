//! Cylindrical and spherical Bessel functions, Legendre polynomials.
//!
//! Real arguments only. Ordinary functions use Miller's backward recurrence;
//! second-kind functions are started from Neumann series (moderate x) or the
//! Hankel asymptotic expansion (large x) and continued by forward recurrence.

use num_complex::Complex64;
use std::f64::consts::PI;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const ASYMPTOTIC_THRESHOLD: f64 = 25.0;

fn miller_start(nmax: usize, x: f64) -> usize {
    let top = (nmax as f64).max(x);
    let m = top + 20.0 + (40.0 * top).sqrt();
    let m = m.ceil() as usize;
    m + (m % 2)
}

/// `J_0(x) .. J_nmax(x)` for `x >= 0`.
pub fn bessel_j_array(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let x = x.abs();
    let m = miller_start(nmax, x);
    let mut jp1 = 0.0f64;
    let mut j = 1e-300f64;
    let mut norm = 0.0f64;
    let mut vals = vec![0.0f64; m + 1];
    vals[m] = j;
    for k in (1..=m).rev() {
        let jm1 = (2.0 * k as f64 / x) * j - jp1;
        jp1 = j;
        j = jm1;
        vals[k - 1] = j;
        if j.abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
            jp1 *= 1e-250;
            j *= 1e-250;
        }
    }
    for (k, v) in vals.iter().enumerate() {
        if k == 0 {
            norm += v;
        } else if k % 2 == 0 {
            norm += 2.0 * v;
        }
    }
    for n in 0..=nmax {
        out[n] = vals[n] / norm;
    }
    out
}

pub fn bessel_j(n: i64, x: f64) -> f64 {
    let na = n.unsigned_abs() as usize;
    let v = bessel_j_array(na, x)[na];
    if n < 0 && na % 2 == 1 {
        -v
    } else {
        v
    }
}

fn hankel_asymptotic(nu: f64, x: f64) -> Complex64 {
    let mu = 4.0 * nu * nu;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let factor = (mu - odd * odd) / (k as f64 * 8.0 * x);
        let next = term * Complex64::new(0.0, factor);
        let mag = next.norm();
        if mag >= last || mag < 1e-17 * sum.norm() {
            if mag < last {
                sum += next;
            }
            break;
        }
        last = mag;
        term = next;
        sum += term;
    }
    let phase = x - nu * PI / 2.0 - PI / 4.0;
    (2.0 / (PI * x)).sqrt() * Complex64::from_polar(1.0, phase) * sum
}

fn y0_y1(x: f64) -> (f64, f64) {
    if x > ASYMPTOTIC_THRESHOLD {
        return (hankel_asymptotic(0.0, x).im, hankel_asymptotic(1.0, x).im);
    }
    let kmax = ((x + 30.0) as usize) / 2 + 20;
    let j = bessel_j_array(2 * kmax + 1, x);
    let lg = (x / 2.0).ln() + EULER_GAMMA;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for k in 1..=kmax {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s0 += sign * j[2 * k] / k as f64;
        s1 += sign * (j[2 * k - 1] - j[2 * k + 1]) / k as f64;
    }
    let y0 = 2.0 / PI * lg * j[0] - 4.0 / PI * s0;
    let y1 = -2.0 / (PI * x) * j[0] + 2.0 / PI * lg * j[1] + 2.0 / PI * s1;
    (y0, y1)
}

/// `Y_0(x) .. Y_nmax(x)` for `x > 0`.
pub fn bessel_y_array(nmax: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0, "Y_n requires a positive argument");
    let (y0, y1) = y0_y1(x);
    let mut out = Vec::with_capacity(nmax + 1);
    out.push(y0);
    if nmax >= 1 {
        out.push(y1);
    }
    for n in 1..nmax {
        let next = (2.0 * n as f64 / x) * out[n] - out[n - 1];
        out.push(next);
    }
    out
}

/// `H^(1)_0(x) .. H^(1)_nmax(x)`.
pub fn hankel1_array(nmax: usize, x: f64) -> Vec<Complex64> {
    let j = if x > ASYMPTOTIC_THRESHOLD && nmax <= 1 {
        let h0 = hankel_asymptotic(0.0, x);
        let h1 = hankel_asymptotic(1.0, x);
        return [h0, h1][..=nmax].to_vec();
    } else {
        bessel_j_array(nmax, x)
    };
    let y = bessel_y_array(nmax, x);
    j.iter()
        .zip(&y)
        .map(|(a, b)| Complex64::new(*a, *b))
        .collect()
}

pub fn hankel1(n: i64, x: f64) -> Complex64 {
    let na = n.unsigned_abs() as usize;
    let v = hankel1_array(na, x)[na];
    if n < 0 && na % 2 == 1 {
        -v
    } else {
        v
    }
}

/// `(H^(1)_0(x), H^(1)_1(x))` without allocation, for kernel evaluation.
pub fn hankel01(x: f64) -> (Complex64, Complex64) {
    debug_assert!(x > 0.0);
    if x > ASYMPTOTIC_THRESHOLD {
        return (hankel_asymptotic(0.0, x), hankel_asymptotic(1.0, x));
    }
    // One backward Miller sweep accumulates J_0, J_1, the normalization sum and
    // the Neumann-series sums for Y_0 and Y_1.
    let m = miller_start(1, x);
    let inv = 1.0 / x;
    let mut jp1 = 0.0f64;
    let mut j = 1e-300f64;
    let mut norm = 0.0f64;
    let mut s0 = 0.0f64;
    let mut s1 = 0.0f64;
    let mut k = m;
    loop {
        // j holds J_k (unnormalized), jp1 holds J_{k+1}.
        if k % 2 == 0 && k > 0 {
            let half = k / 2;
            let sign = if half % 2 == 0 { 1.0 } else { -1.0 };
            norm += 2.0 * j;
            s0 += sign * j / half as f64;
        }
        if k % 2 == 1 {
            // contributes to s1 through J_{2h-1} (k = 2h-1) and J_{2h+1} (k = 2h+1)
            let h_up = (k + 1) / 2;
            let sign_up = if h_up % 2 == 0 { 1.0 } else { -1.0 };
            s1 += sign_up * j / h_up as f64;
            let h_dn = (k - 1) / 2;
            if h_dn >= 1 {
                let sign_dn = if h_dn % 2 == 0 { 1.0 } else { -1.0 };
                s1 -= sign_dn * j / h_dn as f64;
            }
        }
        if k == 0 {
            norm += j;
            break;
        }
        let jm1 = 2.0 * k as f64 * inv * j - jp1;
        jp1 = j;
        j = jm1;
        k -= 1;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            s0 *= 1e-250;
            s1 *= 1e-250;
        }
    }
    let j0 = j / norm;
    let j1 = jp1 / norm;
    let s0 = s0 / norm;
    let s1 = s1 / norm;
    let lg = (x / 2.0).ln() + EULER_GAMMA;
    let y0 = 2.0 / PI * lg * j0 - 4.0 / PI * s0;
    let y1 = -2.0 / (PI * x) * j0 + 2.0 / PI * lg * j1 + 2.0 / PI * s1;
    (Complex64::new(j0, y0), Complex64::new(j1, y1))
}

/// Values and derivatives of cylinder functions for orders `0..=nmax`.
#[derive(Debug, Clone)]
pub struct CylinderTable {
    pub j: Vec<f64>,
    pub dj: Vec<f64>,
    pub h: Vec<Complex64>,
    pub dh: Vec<Complex64>,
}

impl CylinderTable {
    pub fn new(nmax: usize, x: f64) -> Self {
        let j = bessel_j_array(nmax + 1, x);
        let h = hankel1_array(nmax + 1, x);
        let mut dj = Vec::with_capacity(nmax + 1);
        let mut dh = Vec::with_capacity(nmax + 1);
        for n in 0..=nmax {
            if n == 0 {
                dj.push(-j[1]);
                dh.push(-h[1]);
            } else {
                dj.push(0.5 * (j[n - 1] - j[n + 1]));
                dh.push(0.5 * (h[n - 1] - h[n + 1]));
            }
        }
        CylinderTable {
            j: j[..=nmax].to_vec(),
            dj,
            h: h[..=nmax].to_vec(),
            dh,
        }
    }

    /// Signed-order accessors, using `f_{-n} = (-1)^n f_n`.
    pub fn j_at(&self, n: i64) -> (f64, f64) {
        let na = n.unsigned_abs() as usize;
        let s = if n < 0 && na % 2 == 1 { -1.0 } else { 1.0 };
        (s * self.j[na], s * self.dj[na])
    }

    pub fn h_at(&self, n: i64) -> (Complex64, Complex64) {
        let na = n.unsigned_abs() as usize;
        let s = if n < 0 && na % 2 == 1 { -1.0 } else { 1.0 };
        (s * self.h[na], s * self.dh[na])
    }
}

/// Spherical `j_0(x) .. j_nmax(x)`.
pub fn spherical_j_array(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let m = miller_start(nmax, x);
    let mut vals = vec![0.0f64; m + 2];
    vals[m] = 1e-300;
    for k in (1..=m).rev() {
        vals[k - 1] = ((2 * k + 1) as f64 / x) * vals[k] - vals[k + 1];
        if vals[k - 1].abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let scale = if j0.abs() > j1.abs() {
        j0 / vals[0]
    } else {
        j1 / vals[1]
    };
    for n in 0..=nmax {
        out[n] = vals[n] * scale;
    }
    out
}

/// Spherical `y_0(x) .. y_nmax(x)` for `x > 0`.
pub fn spherical_y_array(nmax: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0, "y_n requires a positive argument");
    let mut out = Vec::with_capacity(nmax + 1);
    out.push(-x.cos() / x);
    if nmax >= 1 {
        out.push(-x.cos() / (x * x) - x.sin() / x);
    }
    for n in 1..nmax {
        let next = ((2 * n + 1) as f64 / x) * out[n] - out[n - 1];
        out.push(next);
    }
    out
}

/// Spherical functions with derivatives for orders `0..=nmax`.
#[derive(Debug, Clone)]
pub struct SphericalTable {
    pub j: Vec<f64>,
    pub dj: Vec<f64>,
    pub h: Vec<Complex64>,
    pub dh: Vec<Complex64>,
}

impl SphericalTable {
    pub fn new(nmax: usize, x: f64) -> Self {
        let j = spherical_j_array(nmax + 1, x);
        let y = spherical_y_array(nmax + 1, x);
        let h: Vec<Complex64> = j
            .iter()
            .zip(&y)
            .map(|(a, b)| Complex64::new(*a, *b))
            .collect();
        let mut dj = Vec::with_capacity(nmax + 1);
        let mut dh = Vec::with_capacity(nmax + 1);
        for n in 0..=nmax {
            if n == 0 {
                dj.push(-j[1]);
                dh.push(-h[1]);
            } else {
                let c = (n + 1) as f64 / x;
                dj.push(j[n - 1] - c * j[n]);
                dh.push(h[n - 1] - c * h[n]);
            }
        }
        SphericalTable {
            j: j[..=nmax].to_vec(),
            dj,
            h: h[..=nmax].to_vec(),
            dh,
        }
    }
}

/// Legendre polynomials `P_0(t) .. P_nmax(t)`.
pub fn legendre_array(nmax: usize, t: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(nmax + 1);
    p.push(1.0);
    if nmax >= 1 {
        p.push(t);
    }
    for n in 1..nmax {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * t * p[n] - nf * p[n - 1]) / (nf + 1.0);
        p.push(next);
    }
    p
}
