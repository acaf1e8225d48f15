//! Instance generators and brute-force oracles shared by the integration
//! and acceptance tests. Nothing here calls the solvers under test.

#![allow(dead_code)]

use gdm::model::CovariateBasis;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Covariate design including the leading intercept column.
    pub c: DMatrix<f64>,
    pub basis: CovariateBasis,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Zero mean, unit population variance.
pub fn standardize(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() as f64;
    let m = v.sum() / n;
    let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt();
    v.map(|a| (a - m) / sd)
}

/// Random instance with `k` covariate columns (the intercept counts as one).
/// Labels are binary when `binary`, otherwise continuous; always
/// standardized.
pub fn instance(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, binary: bool) -> Instance {
    assert!(k >= 1 && n > k + 1);
    let x = DMatrix::from_fn(n, d, |_, _| normal(rng));
    let raw_cov = DMatrix::from_fn(n, k - 1, |_, _| normal(rng));
    let names: Vec<String> = (0..k - 1).map(|j| format!("c{j}")).collect();
    let basis = CovariateBasis::build(&raw_cov, &names, 1e-10).expect("random covariates are full rank");
    let y = loop {
        let raw = if binary {
            DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
        } else {
            DVector::from_fn(n, |_, _| normal(rng))
        };
        if raw.iter().any(|v| (*v - raw[0]).abs() > 0.0) {
            break standardize(&raw);
        }
    };
    Instance {
        c: basis.matrix().clone(),
        x,
        y,
        basis,
    }
}

/// The objective written out with plain loops.
pub fn objective_loops(x: &DMatrix<f64>, y: &DVector<f64>, c: &DMatrix<f64>, theta: &[f64], l1: f64, l2: f64) -> f64 {
    let (n, d) = x.shape();
    let k = c.ncols();
    let j = &theta[..d];
    let w0 = &theta[d..d + k];
    let a0 = |f: usize, q: usize| theta[d + k + f * k + q];
    let mut total: f64 = j.iter().map(|v| v * v).sum();
    for i in 0..n {
        let mut e = y[i];
        for f in 0..d {
            e -= x[(i, f)] * j[f];
        }
        for q in 0..k {
            e -= c[(i, q)] * w0[q];
        }
        total += l1 * e * e;
        for f in 0..d {
            let mut g = x[(i, f)] - j[f] * y[i];
            for q in 0..k {
                g -= a0(f, q) * c[(i, q)];
            }
            total += l2 * g * g;
        }
    }
    total
}

/// Minimizer of the objective from its joint normal equations in
/// `θ = (J, W0, vec A0)`, with Hessian and linear term recovered exactly
/// from objective values (the objective is quadratic).
pub fn brute_force(x: &DMatrix<f64>, y: &DVector<f64>, c: &DMatrix<f64>, l1: f64, l2: f64) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let (d, k) = (x.ncols(), c.ncols());
    let m = d + k + d * k;
    let f = |t: &[f64]| objective_loops(x, y, c, t, l1, l2);
    let zero = vec![0.0; m];
    let f0 = f(&zero);
    let unit = |i: usize, s: f64| {
        let mut t = zero.clone();
        t[i] = s;
        t
    };
    let fp: Vec<f64> = (0..m).map(|i| f(&unit(i, 1.0))).collect();
    let fm: Vec<f64> = (0..m).map(|i| f(&unit(i, -1.0))).collect();
    let mut h = DMatrix::zeros(m, m);
    for i in 0..m {
        h[(i, i)] = fp[i] + fm[i] - 2.0 * f0;
        for jj in i + 1..m {
            let mut t = zero.clone();
            t[i] = 1.0;
            t[jj] = 1.0;
            let v = f(&t) - fp[i] - fp[jj] + f0;
            h[(i, jj)] = v;
            h[(jj, i)] = v;
        }
    }
    // f(θ) = ½θᵀHθ + gᵀθ + f0, g_i = (f(e_i) − f(−e_i)) / 2
    let g = DVector::from_fn(m, |i, _| 0.5 * (fp[i] - fm[i]));
    let theta = h.lu().solve(&(-g)).expect("normal equations are nonsingular");
    let j = theta.rows(0, d).into_owned();
    let w0 = theta.rows(d, k).into_owned();
    let a0 = DMatrix::from_fn(d, k, |f, q| theta[d + k + f * k + q]);
    (j, w0, a0)
}

pub fn pack(j: &DVector<f64>, w0: &DVector<f64>, a0: &DMatrix<f64>) -> Vec<f64> {
    let (d, k) = a0.shape();
    let mut t: Vec<f64> = j.iter().chain(w0.iter()).copied().collect();
    for f in 0..d {
        for q in 0..k {
            t.push(a0[(f, q)]);
        }
    }
    t
}

/// Central-difference gradient of the loop objective.
pub fn fd_gradient(x: &DMatrix<f64>, y: &DVector<f64>, c: &DMatrix<f64>, theta: &[f64], l1: f64, l2: f64, h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[i] += h;
            m[i] -= h;
            (objective_loops(x, y, c, &p, l1, l2) - objective_loops(x, y, c, &m, l1, l2)) / (2.0 * h)
        })
        .collect()
}

/// Ridge weights from the textbook normal equations `(I/λ + XᵀX) w = XᵀY`.
pub fn ridge_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let d = x.ncols();
    let a = DMatrix::identity(d, d) / lambda + x.transpose() * x;
    a.lu().solve(&(x.transpose() * y)).unwrap()
}

/// Every permutation of `0..n` (including the identity), lexicographic.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
            return out;
        };
        let jdx = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, jdx);
        p[i + 1..].reverse();
    }
}

pub fn permute(y: &DVector<f64>, perm: &[usize]) -> DVector<f64> {
    DVector::from_fn(y.len(), |i, _| y[perm[i]])
}

/// Per-coordinate population standard deviation of `stat(y∘π)` over all
/// relabelings π.
pub fn exhaustive_std(y: &DVector<f64>, stat: impl Fn(&DVector<f64>) -> DVector<f64>) -> DVector<f64> {
    let perms = all_permutations(y.len());
    let stats: Vec<DVector<f64>> = perms.iter().map(|p| stat(&permute(y, p))).collect();
    let m = stats.len() as f64;
    let d = stats[0].len();
    DVector::from_fn(d, |i, _| {
        let mean = stats.iter().map(|s| s[i]).sum::<f64>() / m;
        (stats.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / m).sqrt()
    })
}
