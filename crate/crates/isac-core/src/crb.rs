//! Estimation floors for the monostatic echo: closed-form Cramér–Rao bounds
//! on (θ, φ, τ, μ), the 2×2 angular covariance, and an independent numeric
//! Fisher-information oracle.
//!
//! The echo observed across the receive array, subcarriers, and symbols has a
//! mean that factorizes into a receive steering term, a delay ramp across
//! subcarriers, and a Doppler ramp across symbols.  Because every parameter
//! enters through a linear phase on that grid, the Fisher information reduces
//! to second moments of the phase slopes, and — after eliminating the unknown
//! complex amplitude by a Schur complement — to *centered* second moments.
//! That yields closed forms in the grid sizes alone:
//!
//! ```text
//! CRB_θ   =  6 / (R·π²·cos²θ · N_r·(n_z²−1) · N_ss)
//! CRB_φ   =  6 / (R·π²·N_r·N_ss·cos²φ·cos²θ) · [ 1/(n_y²−1) + sin²φ·tan²θ/(n_z²−1) ]
//! CRB_θφ  =  6·tanφ·tanθ / (R·π²·cos²θ · N_r·(n_z²−1) · N_ss)
//! CRB_τ   =  3 / (2·R·π²·Δf²  · N_r·N_ss·(N_sub²−1))
//! CRB_μ   =  3 / (2·R·π²·T_s² · N_r·N_ss·(N_sym²−1))
//! ```
//!
//! with `R` the per-element, per-sample echo SNR, `N_r = n_z·n_y` receive
//! elements and `N_ss = N_sub·N_sym` samples.  The bounds are beam-dependent
//! only through `R`.
//!
//! # Features
//!
//! - **Closed forms** ([`crb_closed_form`]) valid for any rectangular receive
//!   array; for square arrays they collapse to the familiar `N²(N²−1)` form.
//! - **Angular covariance** ([`angular_covariance`]) — the joint 2×2 bound on
//!   (θ, φ) including the cross term, used to draw correlated angle errors.
//! - **Numeric oracle** ([`fim_numeric`] → [`crb_from_fim`]) that knows
//!   nothing of the closed forms: it differentiates the raw echo mean by
//!   central finite differences and inverts the resulting 6×6 information
//!   matrix (four echo parameters plus the complex amplitude).  Closed form
//!   and oracle agree to the finite-difference floor, which the test suite
//!   pins below `1e-6` relative.
//!
//! # Example
//!
//! ```
//! use isac_core::crb::{crb_closed_form, SensingDims};
//!
//! let dims = SensingDims {
//!     nz: 8, ny: 8, n_sub: 3300, n_sym: 112,
//!     delta_f_hz: 120e3, t_sym_s: 1.0 / 120e3,
//! };
//! let crbs = crb_closed_form(100.0, -0.17, -1.3, &dims).unwrap();
//! assert!(crbs.crb_theta > 0.0 && crbs.crb_tau > 0.0);
//! ```

use nalgebra::{Matrix2, Matrix4, Matrix6, SMatrix};
use num_complex::Complex64;

use crate::array::BeamDesign;
use crate::{Error, Result};

use std::f64::consts::PI;

/// Angles closer than this to grazing (|cosθ| or |cosφ| below it) make the
/// bounds blow up; treat them as a geometry error rather than returning
/// astronomically large variances.
const GRAZING_EPS: f64 = 1e-9;

/// Cap on the echo-mean length (`n_r·n_sub·n_sym`) accepted by the numeric
/// oracle; it allocates several dense vectors of this size per call.
const ORACLE_MAX_SAMPLES: usize = 200_000;

/// Finite-difference step for the two angles, radians.  Phase slopes across
/// the array are O(π·n), so the step keeps the FD bias near 1e-10 relative
/// while staying far above the roundoff floor.
const FD_STEP_ANGLE: f64 = 1e-6;

/// Finite-difference steps for delay and Doppler are this fraction of the
/// respective unambiguous spans `1/(N_sub·Δf)` and `1/(N_sym·T_s)`.  The
/// resulting phase perturbation of ~1e-4·2π keeps the FD bias below 1e-7
/// relative — comfortably under the 1e-6 oracle-equivalence tolerance.
const FD_SPAN_FRACTION: f64 = 1e-4;

/// Finite-difference step for the real and imaginary amplitude parts.  The
/// mean is exactly linear in them, so central differences are exact and the
/// step only needs to avoid underflow.
const FD_STEP_AMPLITUDE: f64 = 1e-6;

// ── Domain types ────────────────────────────────────────────────────────────

/// Dimensions of one coherent sensing dwell: the receive array (`nz` × `ny`),
/// the OFDM grid (`n_sub` subcarriers × `n_sym` symbols), the subcarrier
/// spacing, and the total symbol duration (useful part plus cyclic prefix).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingDims {
    /// Receive-array rows (vertical).
    pub nz: usize,
    /// Receive-array columns (horizontal).
    pub ny: usize,
    /// Subcarriers observed per symbol.
    pub n_sub: usize,
    /// OFDM symbols in the dwell.
    pub n_sym: usize,
    /// Subcarrier spacing Δf, Hz.
    pub delta_f_hz: f64,
    /// Total OFDM symbol duration T_s (1/Δf plus cyclic prefix), seconds.
    pub t_sym_s: f64,
}

impl SensingDims {
    /// Number of receive elements `N_r = nz·ny`.
    pub fn n_r(&self) -> usize {
        self.nz * self.ny
    }

    /// Number of time–frequency samples `N_ss = n_sub·n_sym`.
    pub fn n_ss(&self) -> usize {
        self.n_sub * self.n_sym
    }

    /// Checks that every grid dimension can actually localize its parameter:
    /// the bounds contain `n²−1` factors, so a single row, column, subcarrier,
    /// or symbol leaves the corresponding parameter unidentifiable.
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("nz", self.nz),
            ("ny", self.ny),
            ("n_sub", self.n_sub),
            ("n_sym", self.n_sym),
        ] {
            if n < 2 {
                return Err(Error::InvalidInput {
                    name,
                    reason: format!(
                        "need at least 2 along every sensing dimension to localize \
                         all parameters, got {n}"
                    ),
                });
            }
        }
        if self.delta_f_hz <= 0.0 || self.t_sym_s <= 0.0 {
            return Err(Error::InvalidInput {
                name: "delta_f_hz/t_sym_s",
                reason: format!(
                    "spacing and symbol duration must be positive, got {} Hz / {} s",
                    self.delta_f_hz, self.t_sym_s
                ),
            });
        }
        Ok(())
    }
}

/// The Cramér–Rao bounds for one scatterer: variances on elevation, azimuth,
/// delay, and Doppler, plus the elevation–azimuth covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbSet {
    /// Var(θ̂) floor, rad².
    pub crb_theta: f64,
    /// Var(φ̂) floor, rad².
    pub crb_phi: f64,
    /// Var(τ̂) floor, s².
    pub crb_tau: f64,
    /// Var(μ̂) floor, Hz².
    pub crb_mu: f64,
    /// Cov(θ̂, φ̂) floor, rad² (can be negative; zero on boresight).
    pub crb_theta_phi: f64,
}

impl CrbSet {
    /// Checks positivity of the variances and positive definiteness of the
    /// angular block — the conditions under which the set describes a valid
    /// Gaussian error model.
    pub fn validate(&self) -> Result<()> {
        let diag_ok = self.crb_theta > 0.0
            && self.crb_phi > 0.0
            && self.crb_tau > 0.0
            && self.crb_mu > 0.0;
        let det = self.crb_theta * self.crb_phi - self.crb_theta_phi * self.crb_theta_phi;
        if !diag_ok || !det.is_finite() || det <= 0.0 {
            return Err(Error::NotPositiveDefinite("angular bound block"));
        }
        Ok(())
    }
}

/// Ground-truth echo parameters for the numeric oracle: the geometry seen by
/// the receive array plus the unknown complex amplitude.
#[derive(Debug, Clone, Copy)]
pub struct EchoParams {
    /// Elevation, rad.
    pub theta: f64,
    /// Azimuth, rad.
    pub phi: f64,
    /// Round-trip delay, seconds.
    pub tau_s: f64,
    /// Doppler shift, Hz.
    pub mu_hz: f64,
    /// Complex reflection amplitude (path gain × RCS phase).
    pub beta: Complex64,
}

// ── Closed forms ────────────────────────────────────────────────────────────

/// Evaluates the closed-form bounds at echo SNR `r_snr` and the scatterer's
/// angles.  `r_snr` is the per-element, per-sample ratio produced by
/// [`crate::channel::echo_snr`]; the bounds scale as `1/r_snr`.
///
/// # Errors
///
/// Rejects non-positive SNR, degenerate dims, and grazing geometry
/// (`cosθ·cosφ ≈ 0`), where the angular information collapses.
pub fn crb_closed_form(r_snr: f64, theta: f64, phi: f64, dims: &SensingDims) -> Result<CrbSet> {
    dims.validate()?;
    if r_snr <= 0.0 || !r_snr.is_finite() {
        return Err(Error::InvalidInput {
            name: "r_snr",
            reason: format!("echo SNR must be positive and finite, got {r_snr}"),
        });
    }
    let (ct, st) = (theta.cos(), theta.sin());
    let (cp, sp) = (phi.cos(), phi.sin());
    if ct.abs() < GRAZING_EPS || cp.abs() < GRAZING_EPS {
        return Err(Error::SingularAngle {
            context: "estimation bounds at grazing angle",
            theta,
            phi,
        });
    }

    let n_r = dims.n_r() as f64;
    let n_ss = dims.n_ss() as f64;
    let nz2m1 = (dims.nz * dims.nz - 1) as f64;
    let ny2m1 = (dims.ny * dims.ny - 1) as f64;
    let nsub2m1 = (dims.n_sub * dims.n_sub - 1) as f64;
    let nsym2m1 = (dims.n_sym * dims.n_sym - 1) as f64;

    let common = 6.0 / (r_snr * PI * PI * n_r * n_ss);
    let crb_theta = common / (ct * ct * nz2m1);
    let crb_phi = common / (cp * cp * ct * ct)
        * (1.0 / ny2m1 + (sp * st / ct).powi(2) / nz2m1);
    let crb_theta_phi = common * (sp / cp) * (st / ct) / (ct * ct * nz2m1);

    let df2 = dims.delta_f_hz * dims.delta_f_hz;
    let ts2 = dims.t_sym_s * dims.t_sym_s;
    let crb_tau = 1.5 / (r_snr * PI * PI * df2 * n_r * n_ss * nsub2m1);
    let crb_mu = 1.5 / (r_snr * PI * PI * ts2 * n_r * n_ss * nsym2m1);

    let set = CrbSet { crb_theta, crb_phi, crb_tau, crb_mu, crb_theta_phi };
    set.validate()?;
    Ok(set)
}

/// Assembles the joint angular covariance
/// `Σ = [[CRB_θ, CRB_θφ], [CRB_θφ, CRB_φ]]`, checking positive definiteness.
pub fn angular_covariance(crbs: &CrbSet) -> Result<Matrix2<f64>> {
    crbs.validate()?;
    Ok(Matrix2::new(
        crbs.crb_theta,
        crbs.crb_theta_phi,
        crbs.crb_theta_phi,
        crbs.crb_phi,
    ))
}

// ── Echo mean model ─────────────────────────────────────────────────────────

/// Noiseless echo mean across the full sensing grid for a single scatterer.
///
/// Entry `[(i_r·n_sub + p)·n_sym + q]` (receive element `i_r = m·ny + k`,
/// subcarrier `p`, symbol `q`) is
///
/// ```text
/// amplitude · exp(jπ(k·u_y − m·u_z)) · exp(−j2π·Δf·τ·p) · exp(+j2π·T_s·μ·q)
/// ```
///
/// with direction cosines `u_z = sinθ`, `u_y = sinφ·cosθ`.  `amplitude`
/// carries everything that does not vary across the grid — reflection
/// coefficient times the transmit beamforming inner product.  Communication
/// symbols are assumed already divided out.
pub fn echo_mean(
    theta: f64,
    phi: f64,
    tau_s: f64,
    mu_hz: f64,
    amplitude: Complex64,
    dims: &SensingDims,
) -> Vec<Complex64> {
    let rx = crate::array::steering_vector(theta, phi, dims.nz, dims.ny);
    let delay_step = -2.0 * PI * dims.delta_f_hz * tau_s;
    let doppler_step = 2.0 * PI * dims.t_sym_s * mu_hz;
    let mut mean = Vec::with_capacity(dims.n_r() * dims.n_ss());
    for b in &rx {
        let lead = amplitude * b;
        for p in 0..dims.n_sub {
            let across_freq = lead * Complex64::from_polar(1.0, delay_step * p as f64);
            for q in 0..dims.n_sym {
                mean.push(across_freq * Complex64::from_polar(1.0, doppler_step * q as f64));
            }
        }
    }
    mean
}

// ── Numeric Fisher-information oracle ───────────────────────────────────────

/// Fisher information of the six-parameter echo model
/// `ξ = (θ, φ, τ, μ, Re β, Im β)` by central finite differences of the mean:
/// `J = (2/σ_R²)·Re{ D^H D }` with `D[:, i] = ∂m/∂ξ_i`.
///
/// The transmit beam factor `|a(θ,φ)^H w|` is evaluated once at the nominal
/// angles and held constant while differentiating: the bounds model the beam
/// as a fixed illumination gain, not as a pattern the estimator can slide
/// along, and the closed forms above make the same modeling choice.
///
/// # Errors
///
/// Rejects grids larger than the oracle cap (this routine allocates seven
/// dense complex vectors of the full grid size) and degenerate steps.
pub fn fim_numeric(
    params: &EchoParams,
    w: &BeamDesign,
    dims: &SensingDims,
    sigma_r2: f64,
) -> Result<Matrix6<f64>> {
    let n = dims.n_r() * dims.n_ss();
    if n == 0 || n > ORACLE_MAX_SAMPLES {
        return Err(Error::InvalidInput {
            name: "dims",
            reason: format!(
                "oracle grid has {n} samples; supported range is 1..={ORACLE_MAX_SAMPLES}"
            ),
        });
    }
    if sigma_r2 <= 0.0 {
        return Err(Error::InvalidInput {
            name: "sigma_r2",
            reason: format!("noise power must be positive, got {sigma_r2}"),
        });
    }

    let tx_amp = w.gain(params.theta, params.phi).sqrt();

    let step_tau = FD_SPAN_FRACTION / (dims.n_sub as f64 * dims.delta_f_hz);
    let step_mu = FD_SPAN_FRACTION / (dims.n_sym as f64 * dims.t_sym_s);
    for (name, h) in [("tau", step_tau), ("mu", step_mu)] {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::InvalidInput {
                name,
                reason: format!("finite-difference step underflowed to {h}"),
            });
        }
    }

    // Mean as a function of the six real parameters, with the transmit gain
    // frozen at its nominal value.
    let mean_at = |theta: f64, phi: f64, tau: f64, mu: f64, beta: Complex64| {
        echo_mean(theta, phi, tau, mu, beta * tx_amp, dims)
    };
    let b = params.beta;
    // One entry per real parameter: its finite-difference step and the mean
    // as a function of that parameter's perturbation.  (A type alias would
    // force `'static` on the boxed closures, which borrow `tx_amp`.)
    #[allow(clippy::type_complexity)]
    let columns: [(f64, Box<dyn Fn(f64) -> Vec<Complex64>>); 6] = [
        (FD_STEP_ANGLE, Box::new(move |h| {
            mean_at(params.theta + h, params.phi, params.tau_s, params.mu_hz, b)
        })),
        (FD_STEP_ANGLE, Box::new(move |h| {
            mean_at(params.theta, params.phi + h, params.tau_s, params.mu_hz, b)
        })),
        (step_tau, Box::new(move |h| {
            mean_at(params.theta, params.phi, params.tau_s + h, params.mu_hz, b)
        })),
        (step_mu, Box::new(move |h| {
            mean_at(params.theta, params.phi, params.tau_s, params.mu_hz + h, b)
        })),
        (FD_STEP_AMPLITUDE, Box::new(move |h| {
            mean_at(params.theta, params.phi, params.tau_s, params.mu_hz, b + h)
        })),
        (FD_STEP_AMPLITUDE, Box::new(move |h| {
            mean_at(
                params.theta,
                params.phi,
                params.tau_s,
                params.mu_hz,
                b + Complex64::new(0.0, h),
            )
        })),
    ];

    // D[:, i] = (m(ξ + h_i e_i) − m(ξ − h_i e_i)) / (2 h_i)
    let mut deriv: Vec<Vec<Complex64>> = Vec::with_capacity(6);
    for (h, mean_fn) in &columns {
        let plus = mean_fn(*h);
        let minus = mean_fn(-*h);
        let scale = 1.0 / (2.0 * h);
        deriv.push(
            plus.iter()
                .zip(&minus)
                .map(|(a, c)| (a - c) * scale)
                .collect(),
        );
    }

    let mut fim = Matrix6::zeros();
    for i in 0..6 {
        for j in i..6 {
            let dot: Complex64 = deriv[i]
                .iter()
                .zip(&deriv[j])
                .map(|(a, c)| a.conj() * c)
                .sum();
            let value = 2.0 * dot.re / sigma_r2;
            fim[(i, j)] = value;
            fim[(j, i)] = value;
        }
    }
    Ok(fim)
}

/// Eliminates the complex amplitude from a 6×6 information matrix by the
/// Schur complement, returning the 4×4 information on (θ, φ, τ, μ):
/// `Q = J_αα − J_αβ·J_ββ⁻¹·J_βα`.
pub fn schur_parameter_information(fim: &Matrix6<f64>) -> Result<Matrix4<f64>> {
    let j_aa: Matrix4<f64> = fim.fixed_view::<4, 4>(0, 0).into();
    let j_ab: SMatrix<f64, 4, 2> = fim.fixed_view::<4, 2>(0, 4).into();
    let j_bb: Matrix2<f64> = fim.fixed_view::<2, 2>(4, 4).into();
    let j_bb_inv = j_bb
        .try_inverse()
        .ok_or(Error::SingularMatrix("amplitude block of the information matrix"))?;
    Ok(j_aa - j_ab * j_bb_inv * j_ab.transpose())
}

/// Inverts the amplitude-eliminated information matrix and reads off the
/// bounds — the numeric counterpart of [`crb_closed_form`], sharing no
/// algebra with it.
pub fn crb_from_fim(fim: &Matrix6<f64>) -> Result<CrbSet> {
    let q = schur_parameter_information(fim)?;
    let cov = q
        .try_inverse()
        .ok_or(Error::SingularMatrix("echo information matrix (unidentifiable parameters)"))?;
    let set = CrbSet {
        crb_theta: cov[(0, 0)],
        crb_phi: cov[(1, 1)],
        crb_tau: cov[(2, 2)],
        crb_mu: cov[(3, 3)],
        crb_theta_phi: cov[(0, 1)],
    };
    set.validate()?;
    Ok(set)
}

// ── Tests ───────────────────────────────────────────────────────────────────
