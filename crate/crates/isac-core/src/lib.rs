//! Sensing-assisted beam management for an extended vehicular target.
//!
//! A base station with a uniform planar array (UPA) serves a single-antenna
//! communication receiver (CR) mounted on a vehicle while simultaneously
//! sensing the vehicle body through the monostatic echo of the same OFDM
//! downlink waveform.  The vehicle is an *extended* target: it spans several
//! resolvable scatterers, none of which is the CR itself, so the beam must be
//! shaped around what the radar can actually see.
//!
//! The crate provides the full chain from echo physics to beam decisions:
//!
//! # Features
//!
//! - **Exact Cramér-Rao bounds** for the elevation/azimuth/delay/Doppler of a
//!   scatterer observed through an arbitrary transmit beam, in closed form and
//!   through an independent numeric Fisher-information oracle ([`crb`]).
//! - **Signal-level validation path**: OFDM echo cube synthesis, 2D-FFT
//!   range-Doppler processing and a beamspace angle estimator at reduced
//!   dimensions ([`measure`]).
//! - **Confidence-ellipse geometry**: error ellipses from covariances,
//!   minimum enclosing circle, and minimum-area enclosing ellipses (general
//!   and axis-aligned) with containment certificates ([`ellipse`]).
//! - **Beam synthesis and antenna-count control** on the UPA, including the
//!   half-power-beamwidth mapping that turns angular regions into sub-array
//!   sizes ([`array`]).
//! - **Extended Kalman filter** over the polar CR state with the analytic
//!   evolution Jacobian ([`track`]).
//! - **Beam-management schemes**: iterative initial beam establishment,
//!   adaptive beam adjustment with sensing triggers, and the reference
//!   baselines (continuous sensing, whole-vehicle covering, point-target
//!   tracking, codebook sweeping, wide-beam omni) ([`schemes`]).
//! - **Deterministic experiment harness** with JSON configuration, CSV
//!   traces, and summary metrics ([`harness`]).
//!
//! # Example
//!
//! ```
//! use isac_core::harness::{SystemConfig, run_single};
//! use isac_core::schemes::SchemeKind;
//!
//! let mut cfg = SystemConfig::default_config();
//! cfg.run.n_slots = 200; // keep the doctest quick
//! let out = run_single(&cfg, SchemeKind::Aba, 7).unwrap();
//! assert!(out.summary.avg_rate_bps_hz > 0.0);
//! assert_eq!(out.trace.len(), 200);
//! ```

// Validation guards are written `!(v > 0.0)` rather than `v <= 0.0` on
// purpose: the negated form is false for NaN, so non-finite garbage falls
// into the same rejection branch as out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod channel;
pub mod crb;
pub mod ellipse;
pub mod harness;
pub mod measure;
pub mod scenario;
pub mod schemes;
pub mod track;

// ── Physical constants ──────────────────────────────────────────────────────

/// Propagation speed used throughout, m/s.
///
/// The conventional radar value 3e8 (not the exact SI 299 792 458) keeps the
/// published system numbers self-consistent: a 400 MHz sweep gives a range
/// resolution of exactly c/(2B) = 0.375 m and a 30 GHz carrier gives a
/// wavelength of exactly 0.01 m.
pub const C_LIGHT: f64 = 3.0e8;

// ── Errors ──────────────────────────────────────────────────────────────────

/// Crate-wide error type.
///
/// Every fallible operation returns one of these variants; messages name the
/// offending quantity so configuration mistakes surface with context.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Geometry degenerated to a point the polar chart cannot represent.
    #[error("target directly beneath array: ground-plane distance is zero")]
    BeneathArray,
    /// An elevation/azimuth combination where a formula loses rank.
    #[error("{context}: singular at theta={theta} rad, phi={phi} rad")]
    SingularAngle {
        /// Which computation became singular.
        context: &'static str,
        /// Elevation at the failure, rad.
        theta: f64,
        /// Azimuth at the failure, rad.
        phi: f64,
    },
    /// A covariance or information matrix that must be positive definite is not.
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    /// A matrix inversion failed.
    #[error("{0} is singular: unidentifiable parameters")]
    SingularMatrix(&'static str),
    /// Input value outside its documented domain.
    #[error("invalid input for {name}: {reason}")]
    InvalidInput {
        /// Parameter name.
        name: &'static str,
        /// Why the value was rejected.
        reason: String,
    },
    /// A point set that cannot support the requested geometric construction.
    #[error("rank-deficient point set: {0}")]
    DegeneratePoints(&'static str),
    /// Peak search found fewer usable peaks than requested.
    #[error("peak search found {found} peaks, requested {requested}")]
    NotEnoughPeaks {
        /// Peaks actually found.
        found: usize,
        /// Peaks requested.
        requested: usize,
    },
    /// An enclosing-ellipse result failed its own post-certificate.
    #[error("enclosing-ellipse solver failure: {0}")]
    SolverFailure(String),
    /// The initial-access search never detected the target.
    #[error("target never detected within {budget} slots")]
    NeverDetected {
        /// Slot budget that was exhausted.
        budget: usize,
    },
    /// Configuration rejected; the message names the key.
    #[error("config error for `{key}`: {reason}")]
    Config {
        /// Offending configuration key.
        key: String,
        /// Constraint that failed.
        reason: String,
    },
    /// Underlying I/O failure (config files, trace output).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed JSON in a configuration file.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
