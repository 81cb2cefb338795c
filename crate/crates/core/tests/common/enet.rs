//! Closed-form and brute-force oracles for the elastic-net solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wordwriter::sparsepca::{fit_sparse_loading, DataMatrix};

pub fn random_problem(seed: u64, rows: usize, cols: usize) -> (DataMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DataMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let z = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
    (x, z)
}

/// Solves `A b = y` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut y: Vec<f64>) -> Vec<f64> {
    let n = y.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        y.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            y[r] -= f * y[col];
        }
    }
    let mut b = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * b[c]).sum();
        b[r] = (y[r] - s) / a[r][r];
    }
    b
}

/// `(X^T X + lambda I)^-1 X^T z`
pub fn ridge(x: &DataMatrix, z: &[f64], lambda: f64) -> Vec<f64> {
    let d = x.cols();
    let mut a = vec![vec![0.0; d]; d];
    let mut y = vec![0.0; d];
    for i in 0..x.rows() {
        let r = x.row(i);
        for j in 0..d {
            y[j] += r[j] * z[i];
            for k in 0..d {
                a[j][k] += r[j] * r[k];
            }
        }
    }
    for (j, row) in a.iter_mut().enumerate() {
        row[j] += lambda;
    }
    solve(a, y)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest violation of the elastic-net subgradient optimality conditions.
pub fn kkt_violation(x: &DataMatrix, z: &[f64], beta: &[f64], lambda: f64, lambda1: f64) -> f64 {
    let d = x.cols();
    let mut grad = vec![0.0; d];
    for i in 0..x.rows() {
        let r = x.row(i);
        let resid = z[i] - r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        for j in 0..d {
            grad[j] += -2.0 * r[j] * resid;
        }
    }
    (0..d)
        .map(|j| {
            let g = grad[j] + 2.0 * lambda * beta[j];
            if beta[j] != 0.0 {
                (g + lambda1 * beta[j].signum()).abs()
            } else {
                (g.abs() - lambda1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub struct EnetReport {
    pub least_squares: f64,
    pub ridge: f64,
    pub zero_exact: bool,
    pub monotone_instances: usize,
    pub instances: usize,
    pub kkt: f64,
}

pub fn run_suite() -> EnetReport {
    let mut report = EnetReport {
        least_squares: 0.0,
        ridge: 0.0,
        zero_exact: true,
        monotone_instances: 0,
        instances: 50,
        kkt: 0.0,
    };
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rows = rng.random_range(12..30);
        let cols = rng.random_range(2..8);
        let (x, z) = random_problem(seed, rows, cols);

        let ls = fit_sparse_loading(&x, &z, 0.0, 0.0).unwrap();
        report.least_squares = report.least_squares.max(max_abs_diff(&ls.beta, &ridge(&x, &z, 0.0)));

        let lambda = rng.random_range(0.01..3.0);
        let rd = fit_sparse_loading(&x, &z, lambda, 0.0).unwrap();
        report.ridge = report.ridge.max(max_abs_diff(&rd.beta, &ridge(&x, &z, lambda)));

        let c: Vec<f64> = (0..cols)
            .map(|j| (0..rows).map(|i| x.row(i)[j] * z[i]).sum())
            .collect();
        let kill = 2.0 * c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let zero = fit_sparse_loading(&x, &z, lambda, kill * rng.random_range(1.0..3.0)).unwrap();
        report.zero_exact &= zero.beta.iter().all(|b| *b == 0.0);

        let l1 = kill * rng.random_range(0.05..0.6);
        let en = fit_sparse_loading(&x, &z, lambda, l1).unwrap();
        let monotone = en.objective.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        report.monotone_instances += usize::from(monotone);
        report.kkt = report.kkt.max(kkt_violation(&x, &z, &en.beta, lambda, l1));
    }
    report
}
