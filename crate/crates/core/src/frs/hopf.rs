//! Ellipsoidal bound on the input-driven part of the transformed error over
//! one step, and the exact support function it over-approximates.

use nalgebra::{DMatrix, DVector};

use crate::ellipsoid::min_trace_sum;
use crate::error::{FrsError, Result};

/// Composite trapezoid weights for `n` equally spaced samples over `dt`.
pub fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    let h = dt / (n - 1) as f64;
    (0..n).map(|j| if j == 0 || j == n - 1 { 0.5 * h } else { h }).collect()
}

fn check_samples(samples: &[DMatrix<f64>], betabar: &DVector<f64>) -> Result<()> {
    if samples.len() < 2 {
        return Err(FrsError::InvalidParameter("quadrature needs at least two samples".into()));
    }
    for s in samples {
        if s.ncols() != betabar.len() {
            return Err(FrsError::DimensionMismatch {
                expected: betabar.len(),
                got: s.ncols(),
            });
        }
        if s.nrows() != samples[0].nrows() {
            return Err(FrsError::DimensionMismatch {
                expected: samples[0].nrows(),
                got: s.nrows(),
            });
        }
    }
    Ok(())
}

/// Per-channel inverse shapes
/// `B_i = dt ∫ (β̄_i² f_i(τ) f_i(τ)ᵀ + ε I) dτ` by the trapezoid rule.
pub fn channel_shapes(samples: &[DMatrix<f64>], betabar: &DVector<f64>, dt: f64, epsilon: f64) -> Result<Vec<DMatrix<f64>>> {
    check_samples(samples, betabar)?;
    if !(epsilon > 0.0) || !(dt > 0.0) {
        return Err(FrsError::InvalidParameter("epsilon and dt must be positive".into()));
    }
    let n = samples[0].nrows();
    let weights = trapezoid_weights(samples.len(), dt);
    let floor = DMatrix::<f64>::identity(n, n) * (dt * dt * epsilon);
    Ok((0..betabar.len())
        .map(|i| {
            let mut b = floor.clone();
            let scale = dt * betabar[i] * betabar[i];
            if scale > 0.0 {
                for (s, w) in samples.iter().zip(&weights) {
                    let f = s.column(i);
                    b.ger(scale * w, &f, &f, 1.0);
                }
            }
            b
        })
        .collect())
}

/// `B_η`: minimal-trace sum of the per-channel shapes (inverse-shape convention).
pub fn hopf_step_shape(samples: &[DMatrix<f64>], betabar: &DVector<f64>, dt: f64, epsilon: f64) -> Result<DMatrix<f64>> {
    min_trace_sum(&channel_shapes(samples, betabar, dt, epsilon)?)
}

/// Support of the exact input set in direction `ν`:
/// `Σ_i β̄_i ∫ |νᵀ f_i(τ)| dτ`, trapezoid rule on the same samples.
pub fn support_oracle_g(samples: &[DMatrix<f64>], betabar: &DVector<f64>, dt: f64, direction: &DVector<f64>) -> Result<f64> {
    check_samples(samples, betabar)?;
    if direction.len() != samples[0].nrows() {
        return Err(FrsError::DimensionMismatch {
            expected: samples[0].nrows(),
            got: direction.len(),
        });
    }
    if direction.iter().all(|v| *v == 0.0) {
        return Err(FrsError::ZeroDirection);
    }
    let weights = trapezoid_weights(samples.len(), dt);
    let mut total = 0.0;
    for (s, w) in samples.iter().zip(&weights) {
        let proj = s.tr_mul(direction);
        for i in 0..betabar.len() {
            total += betabar[i] * w * proj[i].abs();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<DMatrix<f64>> {
        (0..3).map(|_| DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn zero_input_is_regularization_floor() {
        let samples = vec![DMatrix::from_element(15, 4, 1.0); 3];
        let beta = DVector::zeros(4);
        let dt = 0.02;
        let eps = 1e-9;
        let b = hopf_step_shape(&samples, &beta, dt, eps).unwrap();
        // Four equal members: each a_i = 1/4, sum = 16 * dt² ε I.
        let expected = DMatrix::<f64>::identity(15, 15) * (16.0 * dt * dt * eps);
        assert_relative_eq!(b, expected, max_relative = 1e-12);
        assert_eq!(support_oracle_g(&samples, &beta, dt, &DVector::from_element(15, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn single_constant_channel() {
        let u0 = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let samples = vec![DMatrix::from_columns(&[u0.clone()]); 3];
        let beta = DVector::from_vec(vec![2.0]);
        let dt = 0.5;
        let eps = 1e-12;
        let b = hopf_step_shape(&samples, &beta, dt, eps).unwrap();
        let expected = &u0 * u0.transpose() * (dt * dt * 4.0) + DMatrix::identity(3, 3) * (dt * dt * eps);
        assert_relative_eq!(b, expected, max_relative = 1e-12);

        // Reach along u0 is β dt ‖u0‖² in the direction u0.
        let support = (u0.dot(&(&b * &u0))).sqrt();
        assert_relative_eq!(support, 2.0 * dt * u0.norm_squared(), max_relative = 1e-6);
        let nu = DVector::from_vec(vec![0.3, -0.1, 0.7]);
        assert_relative_eq!(
            support_oracle_g(&samples, &beta, dt, &nu).unwrap(),
            2.0 * dt * nu.dot(&u0).abs(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn ellipsoid_support_dominates_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for m in [3, 12] {
            let samples = random_samples(&mut rng, 15, m);
            let beta = DVector::from_fn(m, |_, _| rng.gen_range(0.0..3.0));
            let b = hopf_step_shape(&samples, &beta, 0.02, 1e-9).unwrap();
            for _ in 0..100 {
                let nu = DVector::from_fn(15, |_, _| rng.gen_range(-1.0..1.0));
                let ell = nu.dot(&(&b * &nu)).sqrt();
                let exact = support_oracle_g(&samples, &beta, 0.02, &nu).unwrap();
                assert!(ell >= exact - 1e-9, "{ell} < {exact}");
            }
        }
    }

    #[test]
    fn rejects_malformed_inputs() {
        let one = vec![DMatrix::zeros(15, 3)];
        assert!(hopf_step_shape(&one, &DVector::zeros(3), 0.02, 1e-9).is_err());
        let two = vec![DMatrix::zeros(15, 3); 2];
        assert!(hopf_step_shape(&two, &DVector::zeros(4), 0.02, 1e-9).is_err());
        assert!(support_oracle_g(&two, &DVector::zeros(3), 0.02, &DVector::zeros(15)).is_err());
    }
}
