//! Reference implementations used as test oracles. Written from scratch on
//! plain `Vec`s so they share no code path with the library.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type Mat = Vec<Vec<f64>>;

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Mat, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn se_kernel(sr2: f64, w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let q: f64 = w
        .iter()
        .zip(x)
        .zip(y)
        .map(|((d, a), b)| d * (a - b) * (a - b))
        .sum();
    sr2 * (-0.5 * q).exp()
}

/// Posterior mean and variance by two direct solves with the noisy Gram matrix.
pub fn gp_oracle(
    sr2: f64,
    w: &[f64],
    noise: f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    x: &[f64],
) -> (f64, f64) {
    let m = xs.len();
    let a: Mat = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| se_kernel(sr2, w, &xs[i], &xs[j]) + if i == j { noise } else { 0.0 })
                .collect()
        })
        .collect();
    let k: Vec<f64> = xs.iter().map(|xi| se_kernel(sr2, w, x, xi)).collect();
    let alpha = solve_dense(a.clone(), ys.to_vec());
    let v = solve_dense(a, k.clone());
    let mean = k.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let var = se_kernel(sr2, w, x, x) - k.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

/// Cyclic Jacobi eigenvalue iteration for symmetric matrices, ascending.
pub fn jacobi_eigenvalues(mut a: Mat) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off.sqrt() < 1e-15 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Random connected graph on `n` nodes (random spanning tree plus extra
/// edges) with a nonempty random set of leader-linked agents. Zero-based.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v));
    }
    let extra = rng.random_range(0..=n);
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b
            && !edges.contains(&(a.min(b), a.max(b)))
            && !edges.contains(&(a.max(b), a.min(b)))
        {
            edges.push((a.min(b), a.max(b)));
        }
    }
    let mut leaders: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
    if leaders.is_empty() {
        leaders.push(rng.random_range(0..n));
    }
    (edges, leaders)
}

/// `L + B` built directly from an edge list with unit weights.
pub fn grounded_from_edges(n: usize, edges: &[(usize, usize)], leaders: &[usize]) -> Mat {
    let mut l = vec![vec![0.0; n]; n];
    for &(a, b) in edges {
        l[a][b] -= 1.0;
        l[b][a] -= 1.0;
        l[a][a] += 1.0;
        l[b][b] += 1.0;
    }
    for &i in leaders {
        l[i][i] += 1.0;
    }
    l
}

/// Explicit Kronecker product `a ⊗ I_m`.
pub fn kron_identity(a: &Mat, m: usize) -> Mat {
    let n = a.len();
    let mut out = vec![vec![0.0; n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                out[i * m + k][j * m + k] = a[i][j];
            }
        }
    }
    out
}

pub fn mat_vec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

/// A sample path of a zero-mean GP with SE kernel `sr2 exp(-d (x-x')^2 / 2)`
/// on the real line, approximated by random Fourier features.
pub struct FourierSample {
    scale: f64,
    freqs: Vec<f64>,
    phases: Vec<f64>,
}

impl FourierSample {
    pub fn draw(rng: &mut ChaCha8Rng, sr2: f64, d: f64, features: usize) -> Self {
        let normal = Normal::new(0.0, d.sqrt()).unwrap();
        let freqs = (0..features).map(|_| normal.sample(rng)).collect();
        let phases = (0..features)
            .map(|_| rng.random_range(0.0..2.0 * std::f64::consts::PI))
            .collect();
        FourierSample {
            scale: (2.0 * sr2 / features as f64).sqrt(),
            freqs,
            phases,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.scale
            * self
                .freqs
                .iter()
                .zip(&self.phases)
                .map(|(w, b)| (w * x + b).cos())
                .sum::<f64>()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        -self.scale
            * self
                .freqs
                .iter()
                .zip(&self.phases)
                .map(|(w, b)| w * (w * x + b).sin())
                .sum::<f64>()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
