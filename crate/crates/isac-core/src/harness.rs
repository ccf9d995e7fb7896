//! Experiment harness: JSON configuration, deterministic orchestration of
//! scheme runs, metric aggregation and trace file I/O.
//!
//! The harness owns everything between a configuration file and a finished
//! comparison table:
//!
//! - [`SystemConfig`] mirrors the JSON configuration (one block per concern)
//!   and validates the published numerology invariants at load time: the slot
//!   duration must equal `n_sym` OFDM symbols, the stored range resolution
//!   must equal `c/(2B)`, and the occupied band `n_sub·Δf` must sit within 2%
//!   of the rounded bandwidth row.  Powers enter the file in dBm and are
//!   converted to watts exactly once, when the internal parameter structs are
//!   built.
//! - [`run_single`] executes one `(scheme, seed)` run end to end —
//!   establishment first, then the connected-mode scheme — and returns the
//!   stitched per-slot trace with its [`RunSummary`].
//! - [`run_experiment`] maps a scheme × seed grid to per-run trace/summary
//!   files plus one aggregate summary list.
//!
//! # Determinism
//!
//! Every output is a pure function of the configuration and the root seed.
//! Random draws come from counter-based generators derived from the root
//! seed with one stream per purpose ([`RngPurpose`]), so adding or removing
//! draws of one noise source can never shift the sequence seen by another.
//! Trace CSV bytes are reproducible: rewriting the same `(config, seed)` run
//! yields an identical file, and a golden-file test pins the schema.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::channel::dbm_to_watts;
use crate::crb::SensingDims;
use crate::scenario::WorldState;
use crate::schemes::{
    run_aba, run_baseline, run_ibe, LinkBudget, SchemeKind, SchemeParams, SlotRecord,
};
use crate::{Error, Result, C_LIGHT};

// ── Validation tolerances ────────────────────────────────────────────────────

/// Absolute tolerance on `slot_s − n_sym·t_s`, seconds.  The slot must hold a
/// whole number of OFDM symbols; 1 ns of slack absorbs decimal-literal
/// rounding while rejecting any actually inconsistent symbol count.
const SLOT_MATCH_TOL_S: f64 = 1e-9;

/// Absolute tolerance on `delta_r_m − c/(2B)`, meters.
const DELTA_R_TOL_M: f64 = 1e-6;

/// Relative tolerance between the rounded bandwidth row and the occupied
/// band `n_sub·Δf`.  The published table rounds 396 MHz up to 400 MHz (1%);
/// anything past 2% indicates a genuinely inconsistent configuration.
const BANDWIDTH_REL_TOL: f64 = 0.02;

// ── Configuration blocks ─────────────────────────────────────────────────────

/// OFDM numerology and the quantities derived from it.
///
/// `bandwidth_hz` and `delta_r_m` hold the rounded published values and feed
/// the range-resolution bookkeeping; estimation bounds always use the exact
/// occupied band `n_sub·delta_f_hz`.  Both are stored so the split is
/// explicit rather than hidden in a conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformConfig {
    /// Subcarrier spacing Δf, Hz.
    pub delta_f_hz: f64,
    /// Subcarriers observed per symbol.
    pub n_sub: usize,
    /// OFDM symbols per slot (and per sensing dwell).
    pub n_sym: usize,
    /// Slot duration, s; must equal `n_sym · (1/Δf + cyclic_prefix_s)`.
    pub slot_s: f64,
    /// Nominal sweep bandwidth B, Hz (rounded row; used only for `delta_r_m`).
    pub bandwidth_hz: f64,
    /// Cyclic-prefix duration per symbol, s.
    pub cyclic_prefix_s: f64,
    /// Range resolution c/(2B), m; also the minimum admissible scatterer
    /// spacing when the world is built.
    pub delta_r_m: f64,
    /// Slots per frame; stored for completeness, no computation consumes it.
    pub n_slot_per_frame: usize,
}

/// Transmit/receive panel limits and power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaConfig {
    /// Vertical element limit N_z.
    pub nz_max: usize,
    /// Horizontal element limit N_y.
    pub ny_max: usize,
    /// Total transmit power, dBm (converted to watts once, at build time).
    pub p_tx_dbm: f64,
}

/// Carrier and propagation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Carrier frequency, Hz.
    pub fc_hz: f64,
    /// Communication noise power, dBm.
    pub noise_comm_dbm: f64,
    /// Radar noise power per receive sample, dBm.
    pub noise_radar_dbm: f64,
    /// Radar cross-section per scatterer, m².
    pub rcs_m2: f64,
    /// Path-loss exponent ι of the one-way downlink amplitude.
    pub iota: f64,
}

/// Road geometry and vehicle kinematics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Base-station (array phase center) position, m.
    pub bs_position_m: [f64; 3],
    /// Receiver antenna position at t = 0, m (vehicle body center).
    pub cr_initial_position_m: [f64; 3],
    /// Initial speed along +y, m/s.
    pub v_ini_mps: f64,
    /// Constant acceleration along +y, m/s².
    pub a_acc_mps2: f64,
    /// Vehicle footprint `[width_x, length_y]`, m.
    pub vehicle_dims_m: [f64; 2],
    /// Scatterers per footprint axis `[across_width, along_length]`,
    /// cell-centered on the footprint.
    pub scatterer_grid: [usize; 2],
}

/// Detection and covering-geometry knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingConfig {
    /// Confidence level of every error ellipse (quantile of χ², 2 dof).
    pub confidence: f64,
    /// Boundary points per ellipse when discretizing for the covering solve.
    pub p_num: usize,
    /// Post-integration echo-SNR detection floor, linear ratio.
    pub detection_floor_snr: f64,
}

/// State-evolution noise variances, in the units the published table lists
/// them: degrees² for the two angles, m² for range, (m/s)² for speed.
///
/// The same four values serve as the tracking filter's per-slot process
/// noise (angles converted to rad² internally); the filter's initial
/// covariance is not a knob — it is seeded from the converted measurement
/// variances of the final establishment slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingConfig {
    /// Elevation evolution variance, deg².
    pub var_theta_deg2: f64,
    /// Azimuth evolution variance, deg².
    pub var_phi_deg2: f64,
    /// Range evolution variance, m².
    pub var_d_m2: f64,
    /// Speed evolution variance, (m/s)².
    pub var_v_mps2: f64,
}

/// Scheme-level thresholds and cadences (see [`SchemeParams`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    /// Sensing trigger: pointing error above this leaves prediction mode, rad.
    pub gamma_r1_rad: f64,
    /// Sensing release: pointing error below this ends sensing mode, rad.
    pub gamma_r2_rad: f64,
    /// Slots between receiver pointing-error feedback reports.
    pub feedback_period_slots: usize,
    /// Relative covering-area change below which establishment converges.
    pub ibe_convergence_tol: f64,
    /// Slots between codebook re-sweeps in the sweeping baseline.
    pub sweep_period_slots: usize,
    /// Codebook beams scanned by the initial sweep.
    pub sweep_codebook_size: usize,
    /// Slot budget for establishment before an undetected target errors out.
    pub ibe_slot_budget_slots: usize,
}

/// Run length and root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Total slots per run, establishment included.
    pub n_slots: usize,
    /// Root seed used when the caller does not supply an explicit list.
    pub seed: u64,
}

/// Complete experiment configuration: the JSON file, block for block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// OFDM numerology.
    pub waveform: WaveformConfig,
    /// Panel limits and transmit power.
    pub array: AntennaConfig,
    /// Carrier, noise and reflection constants.
    pub channel: ChannelConfig,
    /// Geometry and kinematics.
    pub scenario: ScenarioConfig,
    /// Detection and covering knobs.
    pub sensing: SensingConfig,
    /// Evolution-noise / process-noise variances.
    pub tracking: TrackingConfig,
    /// Scheme thresholds and cadences.
    pub scheme: SchemeConfig,
    /// Run length and seeding.
    pub run: RunConfig,
}

impl SystemConfig {
    /// The shipped default configuration (mirrored verbatim by
    /// `config/default.json`): 30 GHz carrier, 120 kHz spacing, 3300
    /// subcarriers × 14 symbols per 0.125 ms slot, 8×8 panel at 30 dBm,
    /// −80 dBm noise, a 2 m × 5 m vehicle with 6 scatterers starting at
    /// (10, −38, 1) m under 10 m/s² acceleration, and a 32 000-slot run.
    pub fn default_config() -> Self {
        SystemConfig {
            waveform: WaveformConfig {
                delta_f_hz: 120.0e3,
                n_sub: 3300,
                n_sym: 14,
                slot_s: 0.125e-3,
                bandwidth_hz: 400.0e6,
                // The slot is an exact multiple of the symbol: the prefix is
                // the per-symbol remainder beyond the 1/Δf core.
                cyclic_prefix_s: 0.125e-3 / 14.0 - 1.0 / 120.0e3,
                delta_r_m: 0.375,
                n_slot_per_frame: 80,
            },
            array: AntennaConfig {
                nz_max: 8,
                ny_max: 8,
                p_tx_dbm: 30.0,
            },
            channel: ChannelConfig {
                fc_hz: 30.0e9,
                noise_comm_dbm: -80.0,
                noise_radar_dbm: -80.0,
                rcs_m2: 1.0,
                iota: 0.95,
            },
            scenario: ScenarioConfig {
                bs_position_m: [0.0, 0.0, 8.0],
                cr_initial_position_m: [10.0, -38.0, 1.0],
                v_ini_mps: 0.0,
                a_acc_mps2: 10.0,
                vehicle_dims_m: [2.0, 5.0],
                scatterer_grid: [2, 3],
            },
            sensing: SensingConfig {
                confidence: 0.99,
                p_num: 200,
                detection_floor_snr: 10.0,
            },
            tracking: TrackingConfig {
                var_theta_deg2: 0.02,
                var_phi_deg2: 0.02,
                var_d_m2: 0.2,
                var_v_mps2: 0.25,
            },
            scheme: SchemeConfig {
                gamma_r1_rad: 0.04,
                gamma_r2_rad: 0.01,
                feedback_period_slots: 1,
                ibe_convergence_tol: 0.01,
                sweep_period_slots: 160,
                sweep_codebook_size: 64,
                ibe_slot_budget_slots: 200,
            },
            run: RunConfig {
                n_slots: 32_000,
                seed: 0,
            },
        }
    }

    /// Carrier wavelength λ = c/f_c, m.
    pub fn wavelength_m(&self) -> f64 {
        C_LIGHT / self.channel.fc_hz
    }

    /// Total OFDM symbol duration 1/Δf + cyclic prefix, s.
    pub fn symbol_s(&self) -> f64 {
        1.0 / self.waveform.delta_f_hz + self.waveform.cyclic_prefix_s
    }

    /// Check every cross-field invariant; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let w = &self.waveform;
        ensure(w.delta_f_hz > 0.0, "waveform.delta_f_hz", "must be positive")?;
        ensure(w.n_sub >= 2, "waveform.n_sub", "needs at least 2 subcarriers")?;
        ensure(w.n_sym >= 2, "waveform.n_sym", "needs at least 2 symbols")?;
        ensure(w.slot_s > 0.0, "waveform.slot_s", "must be positive")?;
        ensure(w.bandwidth_hz > 0.0, "waveform.bandwidth_hz", "must be positive")?;
        ensure(
            w.cyclic_prefix_s >= 0.0,
            "waveform.cyclic_prefix_s",
            "must be non-negative",
        )?;

        let occupied = w.n_sub as f64 * w.delta_f_hz;
        if (w.bandwidth_hz - occupied).abs() > BANDWIDTH_REL_TOL * w.bandwidth_hz {
            return Err(Error::Config {
                key: "waveform.bandwidth_hz".into(),
                reason: format!(
                    "{} Hz is more than {:.0}% away from the occupied band \
                     n_sub·delta_f = {} Hz",
                    w.bandwidth_hz,
                    BANDWIDTH_REL_TOL * 100.0,
                    occupied
                ),
            });
        }

        let slot_from_symbols = w.n_sym as f64 * self.symbol_s();
        if (w.slot_s - slot_from_symbols).abs() > SLOT_MATCH_TOL_S {
            return Err(Error::Config {
                key: "waveform.slot_s".into(),
                reason: format!(
                    "{} s does not hold n_sym = {} symbols of {} s each \
                     (expected {} s)",
                    w.slot_s,
                    w.n_sym,
                    self.symbol_s(),
                    slot_from_symbols
                ),
            });
        }

        let delta_r_from_bw = C_LIGHT / (2.0 * w.bandwidth_hz);
        if (w.delta_r_m - delta_r_from_bw).abs() > DELTA_R_TOL_M {
            return Err(Error::Config {
                key: "waveform.delta_r_m".into(),
                reason: format!(
                    "{} m does not equal c/(2·bandwidth) = {} m",
                    w.delta_r_m, delta_r_from_bw
                ),
            });
        }

        ensure(self.array.nz_max >= 1, "array.nz_max", "needs at least one row")?;
        ensure(self.array.ny_max >= 1, "array.ny_max", "needs at least one column")?;
        ensure(
            self.array.p_tx_dbm.is_finite(),
            "array.p_tx_dbm",
            "must be finite",
        )?;

        ensure(self.channel.fc_hz > 0.0, "channel.fc_hz", "must be positive")?;
        ensure(self.channel.rcs_m2 > 0.0, "channel.rcs_m2", "must be positive")?;
        ensure(self.channel.iota > 0.0, "channel.iota", "must be positive")?;
        ensure(
            self.channel.noise_comm_dbm.is_finite() && self.channel.noise_radar_dbm.is_finite(),
            "channel.noise_comm_dbm",
            "noise powers must be finite",
        )?;

        let s = &self.scenario;
        ensure(
            s.vehicle_dims_m[0] > 0.0 && s.vehicle_dims_m[1] > 0.0,
            "scenario.vehicle_dims_m",
            "both footprint extents must be positive",
        )?;
        ensure(
            s.scatterer_grid[0] >= 1 && s.scatterer_grid[1] >= 1,
            "scenario.scatterer_grid",
            "needs at least one scatterer per axis",
        )?;

        ensure(
            self.sensing.confidence > 0.0 && self.sensing.confidence < 1.0,
            "sensing.confidence",
            "must lie strictly inside (0, 1)",
        )?;
        ensure(
            self.sensing.p_num >= 8,
            "sensing.p_num",
            "ellipse discretization needs at least 8 points",
        )?;
        ensure(
            self.sensing.detection_floor_snr > 0.0,
            "sensing.detection_floor_snr",
            "must be positive",
        )?;

        let t = &self.tracking;
        for (key, v) in [
            ("tracking.var_theta_deg2", t.var_theta_deg2),
            ("tracking.var_phi_deg2", t.var_phi_deg2),
            ("tracking.var_d_m2", t.var_d_m2),
            ("tracking.var_v_mps2", t.var_v_mps2),
        ] {
            ensure(v > 0.0 && v.is_finite(), key, "must be positive and finite")?;
        }

        ensure(self.run.n_slots >= 1, "run.n_slots", "needs at least one slot")?;

        // Surface construction-time rejections (scheme thresholds, scatterer
        // spacing against the range resolution, panel consistency) at load
        // time rather than deep inside a run.
        self.scheme_params().validate()?;
        self.initial_world()?;
        self.link_budget()?.validate()?;
        Ok(())
    }

    /// Build the physical-link bundle shared by every scheme.  dBm fields
    /// are converted to watts here — the only place conversions happen.
    pub fn link_budget(&self) -> Result<LinkBudget> {
        let deg2_to_rad2 = (std::f64::consts::PI / 180.0).powi(2);
        Ok(LinkBudget {
            array: ArrayConfig {
                nz_max: self.array.nz_max,
                ny_max: self.array.ny_max,
                p_tx: dbm_to_watts(self.array.p_tx_dbm),
            },
            dims: SensingDims {
                nz: self.array.nz_max,
                ny: self.array.ny_max,
                n_sub: self.waveform.n_sub,
                n_sym: self.waveform.n_sym,
                delta_f_hz: self.waveform.delta_f_hz,
                t_sym_s: self.symbol_s(),
            },
            lambda: self.wavelength_m(),
            sigma_c2: dbm_to_watts(self.channel.noise_comm_dbm),
            sigma_r2: dbm_to_watts(self.channel.noise_radar_dbm),
            rcs: self.channel.rcs_m2,
            path_loss_exponent: self.channel.iota,
            slot_s: self.waveform.slot_s,
            confidence: self.sensing.confidence,
            p_num: self.sensing.p_num,
            detection_floor: self.sensing.detection_floor_snr,
            process_noise: [
                self.tracking.var_theta_deg2 * deg2_to_rad2,
                self.tracking.var_phi_deg2 * deg2_to_rad2,
                self.tracking.var_d_m2,
                self.tracking.var_v_mps2,
            ],
        })
    }

    /// Scheme thresholds and cadences as the schemes module consumes them.
    pub fn scheme_params(&self) -> SchemeParams {
        SchemeParams {
            gamma_r1: self.scheme.gamma_r1_rad,
            gamma_r2: self.scheme.gamma_r2_rad,
            feedback_period: self.scheme.feedback_period_slots,
            ibe_convergence_tol: self.scheme.ibe_convergence_tol,
            sweep_period: self.scheme.sweep_period_slots,
            sweep_codebook_size: self.scheme.sweep_codebook_size,
            ibe_slot_budget: self.scheme.ibe_slot_budget_slots,
        }
    }

    /// World at t = 0, with the scatterer grid checked against the range
    /// resolution (closer scatterers would merge in delay processing).
    pub fn initial_world(&self) -> Result<WorldState> {
        WorldState::new(
            self.scenario.bs_position_m,
            self.scenario.cr_initial_position_m,
            self.scenario.v_ini_mps,
            self.scenario.a_acc_mps2,
            self.scenario.vehicle_dims_m[0],
            self.scenario.vehicle_dims_m[1],
            self.scenario.scatterer_grid[0],
            self.scenario.scatterer_grid[1],
            self.waveform.delta_r_m,
        )
    }
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::default_config()
    }
}

/// Shorthand for a named-key configuration rejection.
fn ensure(cond: bool, key: &str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config {
            key: key.into(),
            reason: reason.into(),
        })
    }
}

/// Read, parse and validate a configuration file.
///
/// An unreadable file names its path; parse failures name the missing or
/// unknown key (via the JSON error); invariant violations name the key
/// through [`Error::Config`].
pub fn load_config<P: AsRef<Path>>(path: P) -> Result<SystemConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        key: path.display().to_string(),
        reason: format!("cannot read configuration file: {e}"),
    })?;
    let cfg: SystemConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

// ── Random streams ───────────────────────────────────────────────────────────

/// Purpose of a child random stream.
///
/// Each purpose owns a fixed stream number of the counter-based generator
/// seeded by the root seed, so draws of one purpose can never perturb
/// another's sequence.  Stream numbers are part of the trace reproducibility
/// contract (golden files depend on them): new purposes may be appended, but
/// existing ones must never be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngPurpose {
    /// Scatterer measurement noise, for establishment and every connected
    /// scheme except the two below.
    MeasurementNoise = 0,
    /// Polar evolution-model noise.  Reserved: trajectories are propagated
    /// by the exact kinematic model, which draws nothing, but the stream
    /// number is pinned for configurations that may add it.
    EvolutionNoise = 1,
    /// Sweeping-baseline randomization.  The codebook scan itself is
    /// deterministic; the dedicated stream keeps sweep runs isolated from
    /// the measurement-noise sequence of the other schemes.
    Sweep = 2,
    /// The point-target baseline's one-time scatterer selection.  The
    /// selection is the first draw on this stream; the same stream then
    /// carries that run's measurement noise, so the selection never depends
    /// on how much noise the run consumes.
    PointSelection = 3,
}

/// Child generator for one purpose under a root seed.
pub fn rng_stream(seed: u64, purpose: RngPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

// ── Summaries ────────────────────────────────────────────────────────────────

/// Aggregate metrics of one `(scheme, seed)` run, computed over the full
/// trace (establishment slots included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Scheme name (lower-case, as in traces and on the command line).
    pub scheme: String,
    /// Vertical panel limit of the run.
    pub nz_max: usize,
    /// Horizontal panel limit of the run.
    pub ny_max: usize,
    /// Root seed of the run.
    pub seed: u64,
    /// Trace length, slots.
    pub n_slots: usize,
    /// Mean downlink spectral efficiency, bit/s/Hz.
    pub avg_rate_bps_hz: f64,
    /// Mean absolute speed-estimate error, m/s.
    pub velocity_mae_mps: f64,
    /// Root-mean-square angular estimate error (Euclidean over θ and φ), rad.
    pub angle_rmse_rad: f64,
    /// Covering-ellipse designs over the run (final cumulative counter).
    pub mee_calls: u64,
    /// Filter measurement updates over the run (final cumulative counter).
    pub ekf_calls: u64,
    /// True if the tracker was flagged divergent at any point.
    pub diverged: bool,
    /// Wall-clock duration of the run, s (excluded from determinism claims).
    pub wall_time_s: f64,
}

/// Reduce a trace to its [`RunSummary`].
///
/// Averages run over every slot; the call counters are the final cumulative
/// values, which equal the sums of per-slot increments by construction.
/// Errors on an empty trace.
pub fn summarize(
    scheme: SchemeKind,
    nz_max: usize,
    ny_max: usize,
    seed: u64,
    trace: &[SlotRecord],
    diverged: bool,
    wall_time_s: f64,
) -> Result<RunSummary> {
    let last = trace.last().ok_or(Error::InvalidInput {
        name: "trace",
        reason: "cannot summarize an empty trace".into(),
    })?;
    let n = trace.len() as f64;
    let mut rate_sum = 0.0;
    let mut abs_v_err_sum = 0.0;
    let mut sq_ang_err_sum = 0.0;
    for r in trace {
        rate_sum += r.rate_bps_hz;
        abs_v_err_sum += (r.estimate.v - r.truth.v).abs();
        sq_ang_err_sum += (r.estimate.theta - r.truth.theta).powi(2)
            + (r.estimate.phi - r.truth.phi).powi(2);
    }
    Ok(RunSummary {
        scheme: scheme.as_str().to_string(),
        nz_max,
        ny_max,
        seed,
        n_slots: trace.len(),
        avg_rate_bps_hz: rate_sum / n,
        velocity_mae_mps: abs_v_err_sum / n,
        angle_rmse_rad: (sq_ang_err_sum / n).sqrt(),
        mee_calls: last.mee_calls,
        ekf_calls: last.ekf_calls,
        diverged,
        wall_time_s,
    })
}

/// Median of a slice (mean of the middle pair for even lengths); `None` for
/// an empty slice.  Used by the comparison-table aggregation.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median input must be ordered"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some(0.5 * (sorted[mid - 1] + sorted[mid]))
    }
}

// ── Single-run orchestration ─────────────────────────────────────────────────

/// Everything one `(scheme, seed)` run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Aggregate metrics.
    pub summary: RunSummary,
    /// Per-slot records, exactly `config.run.n_slots` of them.
    pub trace: Vec<SlotRecord>,
}

/// Execute one scheme for one seed under a validated configuration.
///
/// Every scheme except the sweeping baseline starts with initial beam
/// establishment; the connected-mode scheme then runs for the remaining
/// slots, so the stitched trace always has exactly `cfg.run.n_slots`
/// records.  (If establishment alone reaches the run length — only possible
/// for very short runs — the trace is cut at the run length.)  The sweeping
/// baseline is self-starting and needs no establishment phase.
pub fn run_single(cfg: &SystemConfig, kind: SchemeKind, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let link = cfg.link_budget()?;
    let params = cfg.scheme_params();
    let world0 = cfg.initial_world()?;
    let n_slots = cfg.run.n_slots;

    let started = Instant::now();
    let (trace, diverged) = if kind == SchemeKind::Sweep {
        let mut rng = rng_stream(seed, RngPurpose::Sweep);
        let out = run_baseline(&world0, &link, &params, kind, None, n_slots, 0, &mut rng)?;
        (out.records, out.diverged)
    } else {
        let mut measurement_rng = rng_stream(seed, RngPurpose::MeasurementNoise);
        let ibe = run_ibe(&world0, &link, &params, &mut measurement_rng)?;
        let mut trace = ibe.trace.clone();
        if trace.len() >= n_slots {
            trace.truncate(n_slots);
            (trace, false)
        } else {
            let start_slot = trace.len();
            let remaining = n_slots - start_slot;
            let connected = match kind {
                SchemeKind::Aba => run_aba(
                    &ibe.world_after,
                    &link,
                    &params,
                    &ibe,
                    remaining,
                    start_slot,
                    &mut measurement_rng,
                )?,
                SchemeKind::Point => {
                    let mut point_rng = rng_stream(seed, RngPurpose::PointSelection);
                    run_baseline(
                        &ibe.world_after,
                        &link,
                        &params,
                        kind,
                        Some(&ibe),
                        remaining,
                        start_slot,
                        &mut point_rng,
                    )?
                }
                _ => run_baseline(
                    &ibe.world_after,
                    &link,
                    &params,
                    kind,
                    Some(&ibe),
                    remaining,
                    start_slot,
                    &mut measurement_rng,
                )?,
            };
            trace.extend(connected.records);
            (trace, connected.diverged)
        }
    };
    let wall_time_s = started.elapsed().as_secs_f64();

    let summary = summarize(
        kind,
        cfg.array.nz_max,
        cfg.array.ny_max,
        seed,
        &trace,
        diverged,
        wall_time_s,
    )?;
    Ok(RunOutput { summary, trace })
}

// ── Trace files ──────────────────────────────────────────────────────────────

/// Column set of the per-slot trace CSV.  Versioned by the golden-file test:
/// changing it is a schema change and must update the golden trace.
pub const TRACE_CSV_HEADER: &str = "slot,t,theta_true,phi_true,d_true,v_true,\
theta_est,phi_est,d_est,v_est,nz,ny,rate,event,mee_area,mee_calls_cum,ekf_calls_cum";

/// One CSV row.  Floats print in shortest round-trip form, so the bytes are
/// a pure function of the values; `mee_area` is empty on slots that designed
/// no covering ellipse.
fn csv_row(r: &SlotRecord) -> String {
    let mee_area = r.mee_area.map(|a| a.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.slot,
        r.time_s,
        r.truth.theta,
        r.truth.phi,
        r.truth.d,
        r.truth.v,
        r.estimate.theta,
        r.estimate.phi,
        r.estimate.d,
        r.estimate.v,
        r.nz,
        r.ny,
        r.rate_bps_hz,
        r.event.as_str(),
        mee_area,
        r.mee_calls,
        r.ekf_calls,
    )
}

/// Write a trace as CSV (header + one row per slot, `\n` line endings).
pub fn write_trace_csv<W: Write>(mut out: W, trace: &[SlotRecord]) -> Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in trace {
        writeln!(out, "{}", csv_row(r))?;
    }
    Ok(())
}

/// Render a trace to CSV bytes (convenience for tests and in-memory use).
pub fn trace_csv_bytes(trace: &[SlotRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, trace).expect("writing to a Vec cannot fail");
    buf
}

// ── Validation sweeps ────────────────────────────────────────────────────────

/// Dimensions of the signal-level validation path: small enough for the
/// dense echo cube, large enough that every parameter stays identifiable.
fn oracle_dims() -> SensingDims {
    SensingDims {
        nz: 4,
        ny: 4,
        n_sub: 8,
        n_sym: 4,
        delta_f_hz: 120.0e3,
        t_sym_s: 1.0 / 120.0e3,
    }
}

/// One point of the azimuth estimation-error sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RmseSweepPoint {
    /// Echo SNR of the point, dB (per element and sample).
    pub snr_db: f64,
    /// Empirical azimuth RMSE of the signal-level estimator, rad.
    pub rmse_phi_rad: f64,
    /// Square root of the azimuth bound at this SNR, rad.
    pub sqrt_crb_phi_rad: f64,
}

/// Periodogram grid length of the sweep's angle reader.  Coarse on purpose:
/// with the azimuth direction cosine placed exactly mid-bin (see
/// [`sweep_geometry`]), every grid point is at least half a bin away from the
/// truth, so the azimuth error has a deterministic floor of ≈1.5e-2 rad that
/// sits above √CRB_φ for echo SNRs up to 30 dB.  A finer grid would let bin
/// snapping act as a denoiser and push the empirical RMSE *below* the bound
/// at mid SNR, hiding the estimator's grid-limited nature.
const SWEEP_ANGLE_GRID: usize = 64;

/// Scatterer angles used by both validation sweeps.  Elevation is generic;
/// azimuth is derived so that its direction cosine `u_y = cosθ·sinφ` lands
/// exactly between two points of the [`SWEEP_ANGLE_GRID`]-length angle grid
/// (grid points sit at even multiples of `1/n_fft`), the worst case for a
/// grid-reading estimator.
fn sweep_geometry() -> (f64, f64) {
    let theta: f64 = -0.337;
    let u_y = 13.0 / SWEEP_ANGLE_GRID as f64;
    (theta, (u_y / theta.cos()).asin())
}

/// Empirical azimuth RMSE of the signal-level estimator across an echo-SNR
/// grid, next to the closed-form lower bound.
///
/// Each trial synthesizes a full echo cube at the reduced oracle dimensions
/// for one scatterer at the fixed mid-bin geometry, runs the 2D-FFT /
/// periodogram chain and records the azimuth error.  A trial whose
/// range–Doppler peak falls below the detection floor contributes the
/// no-information broadside estimate (φ̂ = 0) — misses widen the RMSE, they
/// never shrink it.  The estimator reads angles off a finite periodogram
/// grid, so its RMSE flattens at the grid quantization level for high SNR
/// instead of tracking the bound downward; it stays above the bound
/// everywhere.
pub fn azimuth_rmse_sweep(snrs_db: &[f64], trials: usize, seed: u64) -> Result<Vec<RmseSweepPoint>> {
    use crate::array::{beam_weights, ArrayConfig};
    use crate::crb::{crb_closed_form, EchoParams};
    use crate::measure::{angle_from_peak, range_doppler_peaks, range_doppler_transform, synth_echo_grid};
    use num_complex::Complex64;

    if trials == 0 {
        return Err(Error::InvalidInput {
            name: "trials",
            reason: "need at least one trial per SNR point".into(),
        });
    }
    let dims = oracle_dims();
    // Mid-bin angles plus an on-grid delay/Doppler pair, so spectral leakage
    // does not smear the angle snapshot.
    let (theta, phi) = sweep_geometry();
    let tau_s = 2.0 / (dims.n_sub as f64 * dims.delta_f_hz);
    let mu_hz = 1.0 / (dims.n_sym as f64 * dims.t_sym_s);
    let sigma_r2 = 1.0;
    let n_fft = SWEEP_ANGLE_GRID;

    let array = ArrayConfig {
        nz_max: dims.nz,
        ny_max: dims.ny,
        p_tx: 1.0,
    };
    let w = beam_weights(theta, phi, dims.nz, dims.ny, &array)?;
    let gain = w.gain(theta, phi);

    let mut rng = rng_stream(seed, RngPurpose::MeasurementNoise);
    let mut points = Vec::with_capacity(snrs_db.len());
    for &snr_db in snrs_db {
        let r_snr = 10f64.powf(snr_db / 10.0);
        let beta_abs = (r_snr * sigma_r2 / gain).sqrt();
        let scatterer = EchoParams {
            theta,
            phi,
            tau_s,
            mu_hz,
            beta: Complex64::from_polar(beta_abs, 0.3),
        };
        let mut sq_err_sum = 0.0;
        for _ in 0..trials {
            let cube = synth_echo_grid(&[scatterer], &w, &dims, sigma_r2, &mut rng)?;
            let transformed = range_doppler_transform(&cube, &dims)?;
            let phi_hat = match range_doppler_peaks(&transformed, &dims, 1) {
                Ok(peaks) => angle_from_peak(&transformed, &dims, peaks[0], n_fft)?.1,
                Err(Error::NotEnoughPeaks { .. }) => 0.0,
                Err(e) => return Err(e),
            };
            sq_err_sum += (phi_hat - phi).powi(2);
        }
        let crbs = crb_closed_form(r_snr, theta, phi, &dims)?;
        points.push(RmseSweepPoint {
            snr_db,
            rmse_phi_rad: (sq_err_sum / trials as f64).sqrt(),
            sqrt_crb_phi_rad: crbs.crb_phi.sqrt(),
        });
    }
    Ok(points)
}

/// Empirical azimuth RMSE of the bound-calibrated measurement model at one
/// echo SNR: draws from the measurement synthesizer, whose azimuth spread is
/// the bound itself, so the returned RMSE converges to `sqrt_crb_phi_rad` as
/// draws grow.  Returns `(rmse_phi_rad, sqrt_crb_phi_rad)`.
pub fn azimuth_crb_draw_rmse(snr_db: f64, draws: usize, seed: u64) -> Result<(f64, f64)> {
    use crate::crb::crb_closed_form;
    use crate::measure::synth_measurement;
    use crate::scenario::PolarState;

    if draws == 0 {
        return Err(Error::InvalidInput {
            name: "draws",
            reason: "need at least one draw".into(),
        });
    }
    let dims = oracle_dims();
    let (theta, phi) = sweep_geometry();
    let truth = PolarState {
        theta,
        phi,
        d: 40.0,
        v: 10.0,
    };
    let lambda = 0.01;
    let r_snr = 10f64.powf(snr_db / 10.0);
    let crbs = crb_closed_form(r_snr, theta, phi, &dims)?;
    let mut rng = rng_stream(seed, RngPurpose::MeasurementNoise);
    let mut sq_err_sum = 0.0;
    for _ in 0..draws {
        let m = synth_measurement(&truth, &crbs, lambda, &mut rng)?;
        sq_err_sum += (m.phi_hat - phi).powi(2);
    }
    Ok(((sq_err_sum / draws as f64).sqrt(), crbs.crb_phi.sqrt()))
}

// ── Experiment grids ─────────────────────────────────────────────────────────

/// Run every `(scheme, seed)` pair, writing per-run trace CSVs and summary
/// JSONs into `out_dir` plus one aggregate `summaries.json`, and return the
/// summaries in grid order (schemes outer, seeds inner).
///
/// Runs execute sequentially: the full published grid finishes in minutes,
/// and a single writer keeps file output trivially race-free.  Failures are
/// annotated with the `(scheme, seed)` pair that produced them.
pub fn run_experiment(
    cfg: &SystemConfig,
    schemes: &[SchemeKind],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<RunSummary>> {
    if schemes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput {
            name: "experiment",
            reason: "need at least one scheme and one seed".into(),
        });
    }
    fs::create_dir_all(out_dir)?;
    let mut summaries = Vec::with_capacity(schemes.len() * seeds.len());
    for &kind in schemes {
        for &seed in seeds {
            let out = run_single(cfg, kind, seed).map_err(|e| Error::SolverFailure(format!(
                "run {}/seed {seed} failed: {e}",
                kind.as_str()
            )))?;
            let stem = format!("{}_seed{seed}", kind.as_str());
            let mut csv = std::io::BufWriter::new(fs::File::create(
                out_dir.join(format!("{stem}.csv")),
            )?);
            write_trace_csv(&mut csv, &out.trace)?;
            csv.flush()?;
            serde_json::to_writer_pretty(
                fs::File::create(out_dir.join(format!("{stem}.summary.json")))?,
                &out.summary,
            )?;
            summaries.push(out.summary);
        }
    }
    serde_json::to_writer_pretty(
        fs::File::create(out_dir.join("summaries.json"))?,
        &summaries,
    )?;
    Ok(summaries)
}

// ── Tests ────────────────────────────────────────────────────────────────────
