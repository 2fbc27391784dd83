//! Stationary log-Gaussian permeability fields.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::ScenarioError;
use crate::reservoir::GridSpec;

/// Exponential covariance `σ²·exp(−r/ℓ)` with `r` and `ℓ` in cells.
fn covariance(std: f64, corr: f64, dx: f64, dy: f64) -> f64 {
    std * std * (-(dx * dx + dy * dy).sqrt() / corr).exp()
}

fn fft2(data: &mut [Complex64], rows: usize, cols: usize, planner: &mut FftPlanner<f64>) {
    let row_fft = planner.plan_fft_forward(cols);
    for r in data.chunks_mut(cols) {
        row_fft.process(r);
    }
    let col_fft = planner.plan_fft_forward(rows);
    let mut col = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + c];
        }
        col_fft.process(&mut col);
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
}

/// Eigenvalues of the covariance embedded periodically on an `mx×my` torus,
/// or `None` if the embedding is not non-negative definite.
fn embedding_spectrum(mx: usize, my: usize, std: f64, corr: f64) -> Option<Vec<f64>> {
    let mut c = vec![Complex64::new(0.0, 0.0); mx * my];
    for j in 0..my {
        let dj = j.min(my - j) as f64;
        for i in 0..mx {
            let di = i.min(mx - i) as f64;
            c[j * mx + i] = Complex64::new(covariance(std, corr, di, dj), 0.0);
        }
    }
    let mut planner = FftPlanner::new();
    fft2(&mut c, my, mx, &mut planner);
    let scale = c.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
    let lam: Vec<f64> = c.iter().map(|v| v.re).collect();
    let min = lam.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-9 * scale {
        return None;
    }
    Some(lam.into_iter().map(|v| v.max(0.0)).collect())
}

/// Zero-mean Gaussian field with exponential covariance, row-major `[ny, nx]`.
pub fn gaussian_field(
    seed: u64,
    nx: usize,
    ny: usize,
    std: f64,
    corr: f64,
) -> Result<Vec<f64>, ScenarioError> {
    if !(std >= 0.0) {
        return Err(ScenarioError::Param(format!(
            "standard deviation {std} must be non-negative"
        )));
    }
    if !(corr >= 1.0) {
        return Err(ScenarioError::Param(format!(
            "correlation length {corr} must be at least one cell"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if std == 0.0 {
        return Ok(vec![0.0; nx * ny]);
    }
    let mut mx = (2 * nx).next_power_of_two().max(2);
    let mut my = (2 * ny).next_power_of_two().max(2);
    for _ in 0..3 {
        if let Some(lam) = embedding_spectrum(mx, my, std, corr) {
            let m = (mx * my) as f64;
            let mut xi: Vec<Complex64> = lam
                .iter()
                .map(|l| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(a, b) * (l / m).sqrt()
                })
                .collect();
            let mut planner = FftPlanner::new();
            fft2(&mut xi, my, mx, &mut planner);
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    out.push(xi[j * mx + i].re);
                }
            }
            return Ok(out);
        }
        mx *= 2;
        my *= 2;
    }
    warn!("circulant embedding is indefinite for correlation length {corr}; using dense Cholesky");
    cholesky_field(&mut rng, nx, ny, std, corr)
}

fn cholesky_field(
    rng: &mut ChaCha8Rng,
    nx: usize,
    ny: usize,
    std: f64,
    corr: f64,
) -> Result<Vec<f64>, ScenarioError> {
    let n = nx * ny;
    let mut l = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..=a {
            let (ia, ja) = ((a % nx) as f64, (a / nx) as f64);
            let (ib, jb) = ((b % nx) as f64, (b / nx) as f64);
            l[a * n + b] = covariance(std, corr, ia - ib, ja - jb);
        }
    }
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 {
            return Err(ScenarioError::Param(
                "covariance matrix is not positive definite".into(),
            ));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = l[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok((0..n)
        .map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum())
        .collect())
}

/// Permeability in mD with `ln k ~ N(mean_log, std_log²)`, one independent
/// layer after another, laid out `[nz, ny, nx]`.
pub fn sample_log_perm_field(
    seed: u64,
    grid: &GridSpec,
    mean_log: f64,
    std_log: f64,
    corr_cells: f64,
) -> Result<Vec<f64>, ScenarioError> {
    let mut out = Vec::with_capacity(grid.cells());
    for layer in 0..grid.nz {
        let layer_seed = seed.wrapping_add((layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let g = gaussian_field(layer_seed, grid.nx, grid.ny, std_log, corr_cells)?;
        out.extend(g.into_iter().map(|v| (mean_log + v).exp()));
    }
    Ok(out)
}

/// `φ = 0.05·log10(k) + 0.1`, clamped to `[0.01, 0.4]`.
pub fn porosity_from_perm(perm: &[f64]) -> Vec<f64> {
    perm.iter()
        .map(|k| (0.05 * k.log10() + 0.1).clamp(0.01, 0.4))
        .collect()
}
