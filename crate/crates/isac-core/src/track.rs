//! Extended Kalman filtering of the receiver's polar state.
//!
//! The filter is deliberately thin: the measurement function is the
//! *identity*, because [`crate::measure::cr_from_scatterer`] has already
//! pushed the raw (angle, delay, Doppler) estimate through the nonlinear
//! conversion and propagated its variances — the linearization lives in the
//! conversion, not here.  What remains is the nonlinear state evolution,
//! handled with an analytic Jacobian, and standard predict/update algebra
//! kept symmetric by a Joseph-form covariance update.
//!
//! # Features
//!
//! - [`evolution_jacobian`]: exact partial derivatives of the Euler
//!   evolution step (checked against finite differences in the tests).
//! - [`ekf_predict`] / [`ekf_update`]: pure value-to-value operations, so
//!   one filter per tracked vehicle can run on any thread.
//! - Covariances are re-symmetrized and eigenvalue-clipped after every
//!   operation; a genuinely indefinite result is an error, not a warning.
//! - [`nees`] for consistency monitoring (4-dof target ≈ 4).
//!
//! Measurement cross-covariances are dropped: the conversion produces four
//! scalar variances, and `R` is their diagonal.  This is an approximation —
//! the converted components share the underlying angle/delay errors — and
//! it is the reason consistency checks use a loose band around 4.

use nalgebra::{Cholesky, Matrix4, Vector4};
use rand::rngs::mock::StepRng;

use crate::measure::CrMeasurement;
use crate::scenario::{evolve_state, PolarState};
use crate::{Error, Result};

/// Most negative covariance eigenvalue tolerated before the state is
/// declared indefinite; anything between this and zero is clipped to zero.
const PSD_CLIP: f64 = 1e-12;

// ── Domain types ────────────────────────────────────────────────────────────

/// Filter state: mean, covariance, and the (diagonal) process noise used by
/// every prediction.  A value type — operations return new states.
#[derive(Debug, Clone, Copy)]
pub struct TrackState {
    /// State estimate.
    pub mean: PolarState,
    /// Estimate covariance, symmetric PSD.
    pub cov: Matrix4<f64>,
    /// Per-step transition noise, diagonal (σ²_θ, σ²_φ, σ²_d, σ²_v).
    pub process_noise: Matrix4<f64>,
}

impl TrackState {
    /// Builds a filter state from a mean, covariance, and the four process
    /// noise variances.
    pub fn new(mean: PolarState, cov: Matrix4<f64>, noise_var: [f64; 4]) -> Result<Self> {
        if noise_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput {
                name: "noise_var",
                reason: "process noise variances must be nonnegative".into(),
            });
        }
        let state = Self {
            mean,
            cov: enforce_psd(&cov)?,
            process_noise: Matrix4::from_diagonal(&Vector4::from(noise_var)),
        };
        Ok(state)
    }
}

// ── Covariance hygiene ──────────────────────────────────────────────────────

/// Symmetrizes `m` and clips slightly negative eigenvalues to zero.
///
/// # Errors
///
/// [`Error::NotPositiveDefinite`] when an eigenvalue is below `-`[`PSD_CLIP`]
/// — that is a real algebra failure, not roundoff.
fn enforce_psd(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -PSD_CLIP) {
        return Err(Error::NotPositiveDefinite("track covariance"));
    }
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(sym);
    }
    let clipped = Vector4::from_iterator(eig.eigenvalues.iter().map(|l| l.max(0.0)));
    let rebuilt = eig.eigenvectors * Matrix4::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok((rebuilt + rebuilt.transpose()) * 0.5)
}

// ── Operations ──────────────────────────────────────────────────────────────

/// Partial-derivative matrix `F[i][j] = ∂state′_i/∂state_j` of the noiseless
/// evolution step over `dt`.  Note the velocity column is nonzero whenever
/// the geometry couples speed into the other components — the *map* is the
/// identity at `v = 0`, but its derivative in `v` is not.
pub fn evolution_jacobian(s: &PolarState, dt: f64) -> Result<Matrix4<f64>> {
    let (st, ct) = (s.theta.sin(), s.theta.cos());
    let (sp, cp) = (s.phi.sin(), s.phi.cos());
    if ct.abs() < 1e-9 {
        return Err(Error::SingularAngle {
            context: "evolution Jacobian",
            theta: s.theta,
            phi: s.phi,
        });
    }
    if !(s.d > 0.0) {
        return Err(Error::InvalidInput {
            name: "d",
            reason: format!("range must be positive, got {}", s.d),
        });
    }
    let k = s.v * dt / s.d;
    Ok(Matrix4::new(
        // θ' = θ − k·sinφ·sinθ
        1.0 - k * sp * ct,
        -k * cp * st,
        s.v * dt * sp * st / (s.d * s.d),
        -dt / s.d * sp * st,
        // φ' = φ + k·cosφ/cosθ
        k * cp * st / (ct * ct),
        1.0 - k * sp / ct,
        -s.v * dt * cp / (s.d * s.d * ct),
        dt / s.d * cp / ct,
        // d' = d + v·dt·cosθ·sinφ
        -s.v * dt * st * sp,
        s.v * dt * ct * cp,
        1.0,
        dt * ct * sp,
        // v' = v
        0.0,
        0.0,
        0.0,
        1.0,
    ))
}

/// Propagates the filter one step: mean through the noiseless evolution,
/// covariance through `F·P·Fᵀ + Q`.
pub fn ekf_predict(t: &TrackState, dt: f64) -> Result<TrackState> {
    let f = evolution_jacobian(&t.mean, dt)?;
    // The noiseless branch never samples; the mock RNG satisfies the API.
    let mean = evolve_state(&t.mean, dt, None, &mut StepRng::new(0, 0))?;
    let cov = enforce_psd(&(f * t.cov * f.transpose() + t.process_noise))?;
    Ok(TrackState { mean, cov, process_noise: t.process_noise })
}

/// Folds in one converted receiver measurement (identity measurement
/// function, `R = diag` of the propagated variances) using the Joseph-form
/// covariance update.
pub fn ekf_update(t: &TrackState, z: &CrMeasurement) -> Result<TrackState> {
    let r_diag = [z.var_theta, z.var_phi, z.var_d, z.var_v];
    if r_diag.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput {
            name: "z",
            reason: "measurement variances must be positive".into(),
        });
    }
    let r = Matrix4::from_diagonal(&Vector4::from(r_diag));
    let s_mat = t.cov + r;
    let chol =
        Cholesky::new(s_mat).ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
    // K = P·S⁻¹; both symmetric, so K = (S⁻¹·P)ᵀ.
    let gain = chol.solve(&t.cov).transpose();

    let innovation = Vector4::new(
        z.theta_cr - t.mean.theta,
        z.phi_cr - t.mean.phi,
        z.d_cr - t.mean.d,
        z.v_cr - t.mean.v,
    );
    let mean_vec = Vector4::from(t.mean.to_vector()) + gain * innovation;
    let a = Matrix4::identity() - gain;
    let cov = enforce_psd(&(a * t.cov * a.transpose() + gain * r * gain.transpose()))?;
    Ok(TrackState {
        mean: PolarState::from_vector(mean_vec.into()),
        cov,
        process_noise: t.process_noise,
    })
}

/// Normalized estimation error squared, `eᵀ·P⁻¹·e` against the true state.
/// A consistent 4-state filter averages ≈ 4.
pub fn nees(t: &TrackState, truth: &PolarState) -> Result<f64> {
    let chol = Cholesky::new(t.cov).ok_or(Error::NotPositiveDefinite("track covariance"))?;
    let e = Vector4::from(truth.to_vector()) - Vector4::from(t.mean.to_vector());
    Ok(e.dot(&chol.solve(&e)))
}

// ── Tests ───────────────────────────────────────────────────────────────────
