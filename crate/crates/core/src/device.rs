// SPDX-License-Identifier: Apache-2.0
//! Stochastic device models: programming noise, power-law drift and read noise.
//!
//! Each function consumes an explicit [`RngStream`] and draws in row-major
//! cell order, so identical streams give bit-identical grids.

use crate::config::NoiseModel;
use crate::error::{AimcError, Result};
use crate::matrix::Matrix;
use crate::rng::{standard_normal, RngStream};

/// Write targets with additive Gaussian error of std `c0 + c1·G + c2·G²`,
/// clipped to `[0, g_max]`.
pub fn program_conductances(
    targets: &Matrix,
    noise: &NoiseModel,
    g_max: f64,
    rng: RngStream,
) -> Result<Matrix> {
    if let Some(bad) = targets
        .as_slice()
        .iter()
        .find(|&&g| !(0.0..=g_max).contains(&g))
    {
        return Err(AimcError::MappingDomain(format!(
            "target conductance {bad} µS outside [0, {g_max}]"
        )));
    }
    if noise.prog_coeffs == [0.0; 3] {
        return Ok(targets.clone());
    }
    let mut gen = rng.generator();
    Ok(targets.map(|g| {
        let eps = standard_normal(&mut gen) * noise.prog_std(g);
        (g + eps).clamp(0.0, g_max)
    }))
}

/// Per-cell drift exponents of one programming event.
///
/// Re-deriving from the same stream always yields the same exponents.
pub fn drift_exponents(rows: usize, cols: usize, noise: &NoiseModel, rng: RngStream) -> Matrix {
    if noise.drift_nu_std == 0.0 {
        return Matrix::filled(rows, cols, noise.drift_nu_mean);
    }
    let mut gen = rng.generator();
    Matrix::from_fn(rows, cols, |_, _| {
        noise.drift_nu_mean + noise.drift_nu_std * standard_normal(&mut gen)
    })
}

/// Scale each cell by `((t − programmed_at) / t0)^(−ν)`.
pub fn apply_drift(
    g: &Matrix,
    t: f64,
    programmed_at: f64,
    noise: &NoiseModel,
    rng: RngStream,
) -> Result<Matrix> {
    let earliest = programmed_at + noise.t0;
    if !(t >= earliest) {
        return Err(AimcError::TemporalOrder { t, earliest });
    }
    let ratio = (t - programmed_at) / noise.t0;
    if ratio == 1.0 || (noise.drift_nu_mean == 0.0 && noise.drift_nu_std == 0.0) {
        return Ok(g.clone());
    }
    let nu = drift_exponents(g.rows(), g.cols(), noise, rng);
    let log_ratio = ratio.ln();
    g.zip_map(&nu, |g, nu| (g * (-nu * log_ratio).exp()).max(0.0))
}

/// Fresh additive read noise of std `a + b·G`, clipped at zero.
pub fn read_noise(g: &Matrix, noise: &NoiseModel, rng: RngStream) -> Matrix {
    if noise.read_coeffs == [0.0; 2] {
        return g.clone();
    }
    let mut gen = rng.generator();
    g.map(|g| {
        let eps = standard_normal(&mut gen) * noise.read_std(g);
        (g + eps).max(0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_with(f: impl FnOnce(&mut NoiseModel)) -> NoiseModel {
        let mut n = NoiseModel::noiseless();
        f(&mut n);
        n
    }

    fn mean_std(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn zero_programming_noise_is_identity() {
        let t = Matrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64);
        let out =
            program_conductances(&t, &NoiseModel::noiseless(), 25.0, RngStream::new(1, 0)).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn programming_noise_statistics() {
        let n = noise_with(|n| n.prog_coeffs = [0.5, 0.0, 0.0]);
        let t = Matrix::filled(1000, 1000, 10.0);
        let out = program_conductances(&t, &n, 25.0, RngStream::new(42, 7)).unwrap();
        let (m, s) = mean_std(out.as_slice());
        let se = 0.5 / 1000.0;
        assert!((m - 10.0).abs() < 3.0 * se, "mean {m}");
        assert!((s - 0.5).abs() < 0.02 * 0.5, "std {s}");
    }

    #[test]
    fn programming_respects_bounds_and_domain() {
        let n = noise_with(|n| n.prog_coeffs = [3.0, 0.1, 0.0]);
        let t = Matrix::filled(50, 50, 25.0);
        let out = program_conductances(&t, &n, 25.0, RngStream::new(3, 0)).unwrap();
        assert!(out.as_slice().iter().all(|&g| (0.0..=25.0).contains(&g)));
        let z =
            program_conductances(&Matrix::zeros(50, 50), &n, 25.0, RngStream::new(3, 0)).unwrap();
        assert!(z.as_slice().iter().all(|&g| g >= 0.0));

        let bad = Matrix::filled(1, 1, 25.5);
        assert!(matches!(
            program_conductances(&bad, &n, 25.0, RngStream::new(3, 0)),
            Err(AimcError::MappingDomain(_))
        ));
    }

    #[test]
    fn programming_is_deterministic() {
        let n = NoiseModel::default();
        let t = Matrix::from_fn(16, 16, |i, j| ((i + j) % 26) as f64);
        let a = program_conductances(&t, &n, 25.0, RngStream::new(9, 2)).unwrap();
        let b = program_conductances(&t, &n, 25.0, RngStream::new(9, 2)).unwrap();
        assert_eq!(a, b);
        let c = program_conductances(&t, &n, 25.0, RngStream::new(9, 3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn drift_at_reference_time_is_identity() {
        let n = NoiseModel::default();
        let g = Matrix::filled(3, 3, 12.0);
        let out = apply_drift(&g, 100.0 + n.t0, 100.0, &n, RngStream::new(1, 1)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn zero_exponent_drift_is_identity() {
        let n = noise_with(|_| {});
        let g = Matrix::filled(3, 3, 12.0);
        let out = apply_drift(&g, 1e7, 0.0, &n, RngStream::new(1, 1)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn fixed_exponent_drift_factor() {
        let n = noise_with(|n| {
            n.drift_nu_mean = 0.06;
            n.t0 = 20.0;
        });
        let g = Matrix::filled(2, 2, 1.0);
        let out = apply_drift(&g, 200.0, 0.0, &n, RngStream::new(1, 1)).unwrap();
        // 10^(−0.06) evaluated independently
        let expected = 10f64.powf(-0.06);
        assert!((expected - 0.870_963_589_956_080_7).abs() < 1e-15);
        for &v in out.as_slice() {
            assert!((v - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn drift_rejects_early_times() {
        let n = NoiseModel::default();
        let g = Matrix::filled(1, 1, 1.0);
        assert!(matches!(
            apply_drift(&g, 10.0, 0.0, &n, RngStream::new(0, 0)),
            Err(AimcError::TemporalOrder { .. })
        ));
    }

    #[test]
    fn drift_exponents_are_fixed_per_programming_event() {
        let n = NoiseModel::default();
        let g = Matrix::filled(8, 8, 20.0);
        let s = RngStream::new(5, 5);
        let a = apply_drift(&g, 200.0, 0.0, &n, s).unwrap();
        let b = apply_drift(&g, 2000.0, 0.0, &n, s).unwrap();
        // same exponents: log-decay ratio is exactly 2 per cell
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let ra = (x / 20.0).ln();
            let rb = (y / 20.0).ln();
            assert!((rb / ra - 2.0).abs() < 1e-9, "{ra} {rb}");
        }
    }

    #[test]
    fn read_noise_identities() {
        let g = Matrix::filled(4, 4, 7.0);
        assert_eq!(
            read_noise(&g, &NoiseModel::noiseless(), RngStream::new(1, 1)),
            g
        );
        let n = noise_with(|n| n.read_coeffs = [0.0, 0.3]);
        let z = Matrix::zeros(4, 4);
        assert_eq!(read_noise(&z, &n, RngStream::new(1, 1)), z);
    }

    #[test]
    fn read_noise_statistics_and_freshness() {
        let n = noise_with(|n| n.read_coeffs = [0.1, 0.0]);
        let g = Matrix::filled(1000, 1000, 10.0);
        let out = read_noise(&g, &n, RngStream::new(77, 0));
        let (_, s) = mean_std(out.as_slice());
        assert!((s - 0.1).abs() < 0.02 * 0.1, "std {s}");
        let other = read_noise(&g, &n, RngStream::new(77, 1));
        assert_ne!(out, other);
    }
}
