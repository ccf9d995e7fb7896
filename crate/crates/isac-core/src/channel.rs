//! Link budget: path loss, scatterer reflection, achievable rate, echo SNR.
//!
//! The downlink is line-of-sight mmWave; the communication link sees a
//! one-way amplitude `α = λ/(4π·d^ι)` with path-loss exponent ι slightly
//! below 1 in amplitude terms (≈ 1.9 in power), while the monostatic radar
//! echo sees the two-way reflection amplitude
//! `|β| = λ·√(G_T·G_R·ε) / ((4π)^{3/2}·d²)` with ε the scatterer's radar
//! cross-section.  Element gains default to unity so that aperture gain
//! enters exactly once, through the beamforming inner product |aᴴw|².
//!
//! Everything here is in linear units (watts, ratios); dBm values are
//! converted once at configuration load.

use crate::array::BeamDesign;
use crate::{Error, Result};

// ── Operations ──────────────────────────────────────────────────────────────

/// One-way path-loss amplitude `α = λ / (4π · d^ι)`.
pub fn path_loss(d: f64, lambda: f64, iota: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(Error::InvalidInput {
            name: "d",
            reason: format!("path length must be positive, got {d}"),
        });
    }
    Ok(lambda / (4.0 * std::f64::consts::PI * d.powf(iota)))
}

/// Two-way reflection amplitude of a scatterer at range `d` with radar
/// cross-section `rcs` (m²) and element gains `g_t`, `g_r`:
/// `|β| = λ·√(g_t·g_r·rcs) / ((4π)^{3/2}·d²)`.
pub fn reflection_coeff(d: f64, rcs: f64, g_t: f64, g_r: f64, lambda: f64) -> Result<f64> {
    if d <= 0.0 || rcs <= 0.0 || g_t <= 0.0 || g_r <= 0.0 {
        return Err(Error::InvalidInput {
            name: "reflection",
            reason: format!("all of d={d}, rcs={rcs}, g_t={g_t}, g_r={g_r} must be positive"),
        });
    }
    Ok(lambda * (g_t * g_r * rcs).sqrt() / ((4.0 * std::f64::consts::PI).powf(1.5) * d * d))
}

/// Downlink achievable rate, bits/s/Hz:
/// `R = log₂(1 + α²·|a(θ,φ)ᴴw|²/σ_C²)` at the receiver's true angles.
pub fn achievable_rate(alpha: f64, theta: f64, phi: f64, w: &BeamDesign, sigma_c2: f64) -> Result<f64> {
    if sigma_c2 <= 0.0 {
        return Err(Error::InvalidInput {
            name: "sigma_c2",
            reason: format!("noise power must be positive, got {sigma_c2}"),
        });
    }
    Ok((1.0 + alpha * alpha * w.gain(theta, phi) / sigma_c2).log2())
}

/// Radar echo SNR per receive element and sample:
/// `R_snr = |β|²·|a(θ,φ)ᴴw|²/σ_R²`.  This single ratio scales every
/// estimation bound downstream.
pub fn echo_snr(beta_abs: f64, theta: f64, phi: f64, w: &BeamDesign, sigma_r2: f64) -> Result<f64> {
    if sigma_r2 <= 0.0 {
        return Err(Error::InvalidInput {
            name: "sigma_r2",
            reason: format!("noise power must be positive, got {sigma_r2}"),
        });
    }
    Ok(beta_abs * beta_abs * w.gain(theta, phi) / sigma_r2)
}

/// Converts a dBm power to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// Converts watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

// ── Tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{beam_weights, ArrayConfig};

    const LAMBDA: f64 = 0.01;

    #[test]
    fn path_loss_unit_distance() {
        let a = path_loss(1.0, LAMBDA, 0.95).unwrap();
        assert!((a - LAMBDA / (4.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((a - 7.9577e-4).abs() < 1e-7);
    }

    #[test]
    fn path_loss_forty_meters() {
        // Independent high-precision evaluation: 40^0.95 = 33.262661…,
        // 0.01/(4π·33.262661) = 2.392396e-5.
        let a = path_loss(40.0, LAMBDA, 0.95).unwrap();
        assert!((a - 2.392396e-5).abs() < 1e-10);
    }

    #[test]
    fn path_loss_strictly_decreasing() {
        let mut prev = path_loss(0.5, LAMBDA, 0.95).unwrap();
        for i in 1..200 {
            let a = path_loss(0.5 + i as f64, LAMBDA, 0.95).unwrap();
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn reflection_inverse_square_law() {
        let b1 = reflection_coeff(10.0, 1.0, 1.0, 1.0, LAMBDA).unwrap();
        let b2 = reflection_coeff(20.0, 1.0, 1.0, 1.0, LAMBDA).unwrap();
        assert!((b1 / b2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn reflection_reference_value() {
        let b = reflection_coeff(10.0, 1.0, 1.0, 1.0, LAMBDA).unwrap();
        let expect = 0.01 / ((4.0 * std::f64::consts::PI).powf(1.5) * 100.0);
        assert!((b - expect).abs() < 1e-15);
        assert!((b - 2.244e-6).abs() < 2e-9);
    }

    #[test]
    fn reflection_rcs_square_root() {
        let b1 = reflection_coeff(10.0, 1.0, 1.0, 1.0, LAMBDA).unwrap();
        let b4 = reflection_coeff(10.0, 4.0, 1.0, 1.0, LAMBDA).unwrap();
        assert!((b4 / b1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rate_unit_snr_is_one_bit() {
        let cfg = ArrayConfig { nz_max: 1, ny_max: 1, p_tx: 1.0 };
        let w = beam_weights(0.0, 0.0, 1, 1, &cfg).unwrap();
        // gain = 1 on pointing; pick α² = σ² so SNR = 1
        let r = achievable_rate(1e-3, 0.0, 0.0, &w, 1e-6).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_zero_gain_is_zero() {
        let cfg = ArrayConfig { nz_max: 8, ny_max: 8, p_tx: 1.0 };
        let w = beam_weights(0.0, 0.0, 8, 8, &cfg).unwrap();
        let null = (2.0f64 / 8.0).asin(); // first pattern null
        let r = achievable_rate(1e-3, null, 0.0, &w, 1e-6).unwrap();
        assert!(r < 1e-12);
    }

    #[test]
    fn rate_single_point_budget_check() {
        // Full 8×8 matched beam at d ≈ 40 m, P_T = 1 W, σ² = 1e-11 W:
        // SNR = α²·64/σ² with α = 2.3866e-5 → R ≈ log2(1 + 3.65e3) ≈ 11.8.
        let cfg = ArrayConfig { nz_max: 8, ny_max: 8, p_tx: 1.0 };
        let w = beam_weights(-0.2, 0.1, 8, 8, &cfg).unwrap();
        let alpha = path_loss(40.0, LAMBDA, 0.95).unwrap();
        let r = achievable_rate(alpha, -0.2, 0.1, &w, 1e-11).unwrap();
        assert!((r - 11.8).abs() < 0.1, "rate {r}");
    }

    #[test]
    fn rate_monotone_in_gain_and_power() {
        let alpha = 2e-5;
        for &(nz, ny) in &[(1usize, 1usize), (2, 2), (4, 4), (8, 8)] {
            let cfg = ArrayConfig { nz_max: 8, ny_max: 8, p_tx: 1.0 };
            let cfg2 = ArrayConfig { p_tx: 2.0, ..cfg };
            let w1 = beam_weights(0.0, 0.0, nz, ny, &cfg).unwrap();
            let w2 = beam_weights(0.0, 0.0, nz, ny, &cfg2).unwrap();
            let r1 = achievable_rate(alpha, 0.0, 0.0, &w1, 1e-11).unwrap();
            let r2 = achievable_rate(alpha, 0.0, 0.0, &w2, 1e-11).unwrap();
            assert!(r2 > r1, "doubling power must raise the rate");
        }
    }

    #[test]
    fn echo_snr_zero_gain_and_scaling() {
        let cfg = ArrayConfig { nz_max: 8, ny_max: 8, p_tx: 1.0 };
        let w = beam_weights(0.0, 0.0, 8, 8, &cfg).unwrap();
        let null = (2.0f64 / 8.0).asin();
        assert!(echo_snr(1e-6, null, 0.0, &w, 1e-11).unwrap() < 1e-22);
        let s1 = echo_snr(1e-6, 0.01, 0.02, &w, 1e-11).unwrap();
        let s2 = echo_snr(2e-6, 0.01, 0.02, &w, 1e-11).unwrap();
        assert!((s2 / s1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn dbm_round_trip_and_identities() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(-80.0) - 1e-11).abs() < 1e-23);
        for &dbm in &[-100.0, -3.0, 0.0, 17.5, 30.0] {
            assert!((watts_to_dbm(dbm_to_watts(dbm)) - dbm).abs() < 1e-9);
        }
    }
}
