//! Beam-management schemes over the extended-target link.
//!
//! Everything upstream — echo statistics ([`crate::crb`]), measurement
//! synthesis and conversion ([`crate::measure`]), confidence-ellipse geometry
//! ([`crate::ellipse`]), beam synthesis ([`crate::array`]) and the EKF
//! ([`crate::track`]) — comes together here into slot-by-slot beam decisions.
//!
//! Two schemes carry the design:
//!
//! - [`run_ibe`] — **initial beam establishment**: starting from a single
//!   wide (1×1) beam, each slot measures every visible scatterer, wraps the
//!   measurements in confidence ellipses, covers their union with a minimal
//!   axis-aligned ellipse in the beam-width domain and commits the matching
//!   sub-array beam for the next slot.  The loop stops when the covering
//!   area stabilizes (or the antenna counts saturate at the full array).
//!   The final slot carries the receiver's position feedback, which registers
//!   the receiver-to-scatterer offsets used by every tracking scheme after it.
//! - [`run_aba`] — **adaptive beam adjustment**: the connected-mode tracker.
//!   Each slot the EKF prediction steers a full-array beam at the receiver;
//!   when the predicted-versus-reported pointing error exceeds a trigger
//!   threshold the scheme drops into sensing mode, widens the beam just enough
//!   to cover both the receiver's confidence ellipse and the nearest
//!   scatterer's resolution cell, re-measures that scatterer, converts the
//!   echo into a receiver-state measurement and filters it, returning to
//!   prediction mode once the error falls below the release threshold.
//!
//! [`run_baseline`] provides the reference points: continuous per-slot
//! sensing ([`SchemeKind::Rb`]), whole-vehicle covering with no tracker
//! ([`SchemeKind::Db`]), point-target tracking of one scatterer as if it
//! were the receiver ([`SchemeKind::Point`]), a 64-beam codebook sweep
//! ([`SchemeKind::Sweep`]) and an always-wide beam ([`SchemeKind::Omni`]).
//!
//! All runs are pure functions of (initial world, link budget, parameters,
//! RNG); determinism is inherited from the caller's seeded generator.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::Rng;

use crate::array::{antennas_from_bw, beam_weights, hpbw_map, ArrayConfig, BeamDesign};
use crate::channel::{achievable_rate, echo_snr, path_loss, reflection_coeff};
use crate::crb::{crb_closed_form, SensingDims};
use crate::ellipse::{
    axis_aligned_mee_with_tolerance, discretize, error_ellipse, Ellipse, PointSet2D,
};
use crate::measure::{cr_from_scatterer, synth_measurement, ScattererMeasurement};
use crate::scenario::{
    cartesian_to_polar, polar_to_cartesian, propagate_truth, PolarState, WorldState,
};
use crate::track::{ekf_predict, ekf_update, TrackState};
use crate::{Error, Result};

// ── Tunables ─────────────────────────────────────────────────────────────────

/// Convergence tolerance handed to the axis-aligned enclosing-ellipse solver
/// inside scheme loops.  Deliberately loose: the solver's final rescale pins
/// the furthest hull point exactly on the reported ellipse, so containment is
/// exact at any tolerance — the tolerance only bounds how far the area sits
/// from the minimum.  Antenna counts are integer-floored from the resulting
/// widths, so sub-percent width slack is invisible, and the scheme loops call
/// the solver tens of thousands of times per run.
const COVER_MEE_TOL: f64 = 1e-3;

/// Iteration cap for the in-loop enclosing-ellipse solves.
const COVER_MEE_MAX_ITER: usize = 2_000;

/// Beams re-examined around the current best during a periodic re-sweep.
/// The initial sweep scans the whole codebook; later sweeps only this window.
const SWEEP_REFINE_WINDOW: usize = 8;

/// Consecutive sensing slots with pointing error above 10× the trigger
/// threshold before a run is flagged as diverged.
const DIVERGENCE_SLOTS: usize = 100;

/// Pointing-error multiple of the sensing trigger that counts as divergent.
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Transmit/receive element gains used in the echo budget (unit gain: the
/// array factor itself is carried explicitly by the beam design).
const ELEMENT_GAIN: f64 = 1.0;

// ── Parameters ───────────────────────────────────────────────────────────────

/// Physical-link bundle shared by every scheme: array geometry, OFDM
/// numerology, noise powers and the scalar constants of the echo budget.
///
/// The harness builds one of these from its validated system configuration;
/// schemes treat all fields as ready-to-use linear quantities (watts, meters,
/// radians, seconds — never dB).
#[derive(Debug, Clone)]
pub struct LinkBudget {
    /// Transmit array: maximum antenna counts and total transmit power.
    pub array: ArrayConfig,
    /// Receive/sensing dimensions; `nz`/`ny` equal the full array counts.
    pub dims: SensingDims,
    /// Carrier wavelength, m.
    pub lambda: f64,
    /// Communication noise power at the receiver, W.
    pub sigma_c2: f64,
    /// Radar noise power per receive sample, W.
    pub sigma_r2: f64,
    /// Radar cross-section per scatterer, m².
    pub rcs: f64,
    /// Path-loss exponent of the downlink channel.
    pub path_loss_exponent: f64,
    /// Slot duration, s: the interval between consecutive beam decisions.
    pub slot_s: f64,
    /// Confidence level of the covering ellipses (e.g. 0.99).
    pub confidence: f64,
    /// Boundary points used when discretizing each ellipse for covering.
    pub p_num: usize,
    /// Post-integration echo-SNR detection floor, linear.  A scatterer whose
    /// `R_snr · N_ss` falls below this is declared missed for the slot.
    pub detection_floor: f64,
    /// EKF process-noise variances per slot: (θ rad², φ rad², d m², v (m/s)²).
    pub process_noise: [f64; 4],
}

impl LinkBudget {
    /// Check internal consistency; error messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 8] = [
            ("lambda", self.lambda),
            ("sigma_c2", self.sigma_c2),
            ("sigma_r2", self.sigma_r2),
            ("rcs", self.rcs),
            ("path_loss_exponent", self.path_loss_exponent),
            ("slot_s", self.slot_s),
            ("detection_floor", self.detection_floor),
            ("confidence", self.confidence),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput {
                    name: "link budget",
                    reason: format!("{name} must be positive and finite, got {v}"),
                });
            }
        }
        if self.confidence >= 1.0 {
            return Err(Error::InvalidInput {
                name: "link budget",
                reason: format!("confidence must lie in (0, 1), got {}", self.confidence),
            });
        }
        if self.p_num < 4 {
            return Err(Error::InvalidInput {
                name: "link budget",
                reason: format!("p_num must be at least 4, got {}", self.p_num),
            });
        }
        if self.dims.nz != self.array.nz_max || self.dims.ny != self.array.ny_max {
            return Err(Error::InvalidInput {
                name: "link budget",
                reason: format!(
                    "sensing dims ({}, {}) must match the full array ({}, {})",
                    self.dims.nz, self.dims.ny, self.array.nz_max, self.array.ny_max
                ),
            });
        }
        for (i, q) in self.process_noise.iter().enumerate() {
            if !(*q > 0.0) || !q.is_finite() {
                return Err(Error::InvalidInput {
                    name: "link budget",
                    reason: format!("process_noise[{i}] must be positive, got {q}"),
                });
            }
        }
        Ok(())
    }
}

/// Scheme-level control parameters.
#[derive(Debug, Clone)]
pub struct SchemeParams {
    /// Sensing trigger: pointing error (rad, Euclidean in (θ, φ)) above which
    /// the adaptive scheme leaves prediction mode.
    pub gamma_r1: f64,
    /// Sensing release: pointing error below which sensing mode ends.
    /// Must be strictly below `gamma_r1`.
    pub gamma_r2: f64,
    /// Slots between pointing-error feedback reports from the receiver.
    pub feedback_period: usize,
    /// Relative change of the covering-ellipse area below which initial beam
    /// establishment declares convergence.
    pub ibe_convergence_tol: f64,
    /// Slots between codebook re-sweeps in the sweeping baseline.
    pub sweep_period: usize,
    /// Number of codebook beams scanned by the initial sweep.
    pub sweep_codebook_size: usize,
    /// Maximum slots initial beam establishment may spend before giving up
    /// (it errors if nothing was ever detected within this budget).
    pub ibe_slot_budget: usize,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            gamma_r1: 0.04,
            gamma_r2: 0.01,
            feedback_period: 1,
            ibe_convergence_tol: 0.01,
            sweep_period: 160,
            sweep_codebook_size: 64,
            ibe_slot_budget: 200,
        }
    }
}

impl SchemeParams {
    /// Check internal consistency; error messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_r1 > 0.0) || !self.gamma_r1.is_finite() {
            return Err(Error::InvalidInput {
                name: "gamma_r1",
                reason: format!("must be positive, got {}", self.gamma_r1),
            });
        }
        if !(self.gamma_r2 > 0.0) || self.gamma_r2 >= self.gamma_r1 {
            return Err(Error::InvalidInput {
                name: "gamma_r2",
                reason: format!(
                    "must satisfy 0 < gamma_r2 < gamma_r1, got {} vs {}",
                    self.gamma_r2, self.gamma_r1
                ),
            });
        }
        if self.feedback_period == 0 || self.sweep_period == 0 {
            return Err(Error::InvalidInput {
                name: "period",
                reason: "feedback_period and sweep_period must be at least 1".into(),
            });
        }
        if !(self.ibe_convergence_tol > 0.0) || self.ibe_convergence_tol >= 1.0 {
            return Err(Error::InvalidInput {
                name: "ibe_convergence_tol",
                reason: format!("must lie in (0, 1), got {}", self.ibe_convergence_tol),
            });
        }
        if self.sweep_codebook_size < 2 {
            return Err(Error::InvalidInput {
                name: "sweep_codebook_size",
                reason: format!("must be at least 2, got {}", self.sweep_codebook_size),
            });
        }
        if self.ibe_slot_budget == 0 {
            return Err(Error::InvalidInput {
                name: "ibe_slot_budget",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

// ── Scheme identities and per-slot records ───────────────────────────────────

/// Connected-mode scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// Adaptive beam adjustment: predict with the full array, sense on demand.
    Aba,
    /// Continuous sensing: the adaptive machinery forced into sensing mode
    /// every slot.
    Rb,
    /// Whole-vehicle covering: every slot measures all scatterers and covers
    /// their confidence ellipses; no tracker.
    Db,
    /// Point-target tracking: the adaptive machinery aimed at one randomly
    /// chosen scatterer as if it were the receiver.
    Point,
    /// Codebook sweeping: periodic beam re-selection by received power.
    Sweep,
    /// Always-wide beam: per-slot nearest-scatterer conversion, no filtering.
    Omni,
}

impl SchemeKind {
    /// Lower-case scheme name used in traces and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Aba => "aba",
            SchemeKind::Rb => "rb",
            SchemeKind::Db => "db",
            SchemeKind::Point => "point",
            SchemeKind::Sweep => "sweep",
            SchemeKind::Omni => "omni",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aba" => Ok(SchemeKind::Aba),
            "rb" => Ok(SchemeKind::Rb),
            "db" => Ok(SchemeKind::Db),
            "point" => Ok(SchemeKind::Point),
            "sweep" => Ok(SchemeKind::Sweep),
            "omni" => Ok(SchemeKind::Omni),
            other => Err(Error::InvalidInput {
                name: "scheme",
                reason: format!(
                    "unknown scheme `{other}` (expected aba, rb, db, point, sweep or omni)"
                ),
            }),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a slot spent its beam on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotEvent {
    /// Data beam steered from the tracker prediction (or held codebook beam).
    Predict,
    /// Widened beam covering a sensing target; an echo was processed.
    Sense,
    /// Codebook scan slot of the sweeping baseline.
    Sweep,
    /// Receiver position feedback received (closes initial establishment).
    Feedback,
}

impl SlotEvent {
    /// Lower-case event name used in trace files.
    pub fn as_str(self) -> &'static str {
        match self {
            SlotEvent::Predict => "predict",
            SlotEvent::Sense => "sense",
            SlotEvent::Sweep => "sweep",
            SlotEvent::Feedback => "feedback",
        }
    }
}

/// One slot of a scheme run: ground truth, the scheme's belief, the beam it
/// committed and the bookkeeping counters (both counters are cumulative over
/// the whole run including initial beam establishment).
#[derive(Debug, Clone)]
pub struct SlotRecord {
    /// Global slot index within the run (establishment slots included).
    pub slot: usize,
    /// Elapsed time at the start of the slot, s.
    pub time_s: f64,
    /// True receiver state (polar, with the vehicle's ground speed).
    pub truth: PolarState,
    /// The scheme's receiver-state belief for this slot.
    pub estimate: PolarState,
    /// Committed vertical antenna count.
    pub nz: usize,
    /// Committed horizontal antenna count.
    pub ny: usize,
    /// Beam pointing (θ₀, φ₀), rad.
    pub pointing: (f64, f64),
    /// Downlink spectral efficiency at the true receiver position, bit/s/Hz.
    pub rate_bps_hz: f64,
    /// What the slot did.
    pub event: SlotEvent,
    /// Area of the covering ellipse in the beam-width domain, if one was
    /// designed this slot.
    pub mee_area: Option<f64>,
    /// Cumulative covering-ellipse designs so far.
    pub mee_calls: u64,
    /// Cumulative EKF measurement updates so far.
    pub ekf_calls: u64,
}

/// Output of initial beam establishment.
#[derive(Debug, Clone)]
pub struct IbeOutcome {
    /// Per-slot records of the establishment phase.
    pub trace: Vec<SlotRecord>,
    /// Number of slots the phase used (equals `trace.len()`).
    pub convergence_slots: usize,
    /// World state immediately after the last establishment slot.
    pub world_after: WorldState,
    /// Registered receiver-minus-scatterer ground offsets (Δx, Δy), m, one
    /// per scatterer, from the position feedback in the final slot.
    pub offsets: Vec<(f64, f64)>,
    /// The beam committed by the final establishment slot.
    pub final_beam: BeamDesign,
    /// Tracker state handed to connected-mode schemes: the converted
    /// receiver measurement from the final slot with its variances.
    pub track_init: TrackState,
    /// Covering-ellipse designs performed during establishment.
    pub mee_calls: u64,
}

/// A connected-mode trace plus its divergence flag.
#[derive(Debug, Clone)]
pub struct SchemeTrace {
    /// Per-slot records, in slot order.
    pub records: Vec<SlotRecord>,
    /// True if the tracker spent [`DIVERGENCE_SLOTS`] consecutive sensing
    /// slots with pointing error above [`DIVERGENCE_FACTOR`]·γ_r1.  The run
    /// still completes; the flag marks it for analysis.
    pub diverged: bool,
}

/// A designed covering beam together with the covering ellipse that sized it.
#[derive(Debug, Clone)]
pub struct CoverDesign {
    /// The committed beam.
    pub beam: BeamDesign,
    /// Axis-aligned minimal enclosing ellipse in the beam-width domain,
    /// centered relative to the linearization anchor.
    pub mapped_cover: Ellipse,
}

// ── Geometry helpers ─────────────────────────────────────────────────────────

/// Polar state of an arbitrary world point, carrying the vehicle's speed
/// (every point on the rigid body shares it).
fn polar_of(world: &WorldState, point: [f64; 3]) -> Result<PolarState> {
    let mut p = cartesian_to_polar(point, world.bs_position)?;
    p.v = world.cr_velocity;
    Ok(p)
}

/// True receiver polar state.
fn cr_state(world: &WorldState) -> Result<PolarState> {
    polar_of(world, world.cr_position)
}

/// Effective array height over the scatterer plane, m.
fn h_eff(world: &WorldState) -> f64 {
    world.bs_position[2] - world.cr_position[2]
}

/// Euclidean pointing error between two (θ, φ) pairs, rad.
fn pointing_error(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Index of the scatterer whose (θ, φ) lies closest (Euclidean) to the
/// reference direction.  Ties resolve to the lowest index.
pub fn nearest_scatterer(reference: (f64, f64), scatterers: &[(f64, f64)]) -> Result<usize> {
    if scatterers.is_empty() {
        return Err(Error::InvalidInput {
            name: "scatterers",
            reason: "nearest-scatterer selection needs at least one candidate".into(),
        });
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &s) in scatterers.iter().enumerate() {
        let d = pointing_error(reference, s);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Half-resolution-cell ellipse around a predicted scatterer direction.
///
/// The array resolves directions to cells of width 2/N in each direction
/// cosine; the predicted point is inflated by half a cell per axis (semi-axes
/// 1/(2·nz_max) and 1/(2·ny_max) in the beam-width domain) so the covering
/// beam tolerates a prediction that is off by up to the cell quantization
/// without collapsing onto a point.  Expressed here in (θ, φ) via the local
/// scale factors of the direction-cosine chart.
fn resolution_cell(link: &LinkBudget, center: (f64, f64)) -> Result<Ellipse> {
    let (ct, cp) = (center.0.cos(), center.1.cos());
    if ct.abs() < 1e-9 || cp.abs() < 1e-9 {
        return Err(Error::SingularAngle {
            context: "resolution cell",
            theta: center.0,
            phi: center.1,
        });
    }
    let semi_theta = 1.0 / (2.0 * link.array.nz_max as f64 * ct.abs());
    let semi_phi = 1.0 / (2.0 * link.array.ny_max as f64 * (ct * cp).abs());
    Ellipse::from_semi_axes(center, semi_theta, semi_phi, 0.0)
}

/// Downlink spectral efficiency of beam `w` at the true receiver state.
fn cr_rate(link: &LinkBudget, truth: &PolarState, w: &BeamDesign) -> Result<f64> {
    let alpha = path_loss(truth.d, link.lambda, link.path_loss_exponent)?;
    achievable_rate(alpha, truth.theta, truth.phi, w, link.sigma_c2)
}

/// Attempt to measure one scatterer through beam `w`.
///
/// Returns `None` when the echo's post-integration SNR falls below the
/// detection floor (a missed detection), otherwise a measurement drawn at the
/// scatterer's exact error bounds for that beam and geometry.
fn sense_scatterer<R: Rng + ?Sized>(
    link: &LinkBudget,
    truth: &PolarState,
    w: &BeamDesign,
    rng: &mut R,
) -> Result<Option<ScattererMeasurement>> {
    let beta = reflection_coeff(truth.d, link.rcs, ELEMENT_GAIN, ELEMENT_GAIN, link.lambda)?;
    let r_snr = echo_snr(beta, truth.theta, truth.phi, w, link.sigma_r2)?;
    if r_snr * (link.dims.n_ss() as f64) < link.detection_floor {
        return Ok(None);
    }
    let crbs = crb_closed_form(r_snr, truth.theta, truth.phi, &link.dims)?;
    synth_measurement(truth, &crbs, link.lambda, rng).map(Some)
}

// ── Covering-beam design ─────────────────────────────────────────────────────

/// Design the narrowest sub-array beam whose half-power footprint covers a
/// set of angular ellipses.
///
/// Every ellipse is discretized into `p_num` boundary points; the points are
/// mapped into the beam-width domain through the half-power-width linear map
/// evaluated at the coverage centroid (the mean of the ellipse centers); the
/// mapped cloud is covered by a minimal axis-aligned enclosing ellipse; the
/// antenna counts follow from its full widths via the floor rule (realized
/// width ≥ requested width, so unclamped counts always contain the cover);
/// and the beam points at the pre-image of the cover's center.
///
/// `pointing_hint`, when given, replaces the centroid as the linearization
/// anchor — callers that iterate from an existing beam pass their current
/// pointing so consecutive designs share a frame.
pub fn design_beam_covering(
    targets: &[Ellipse],
    pointing_hint: Option<(f64, f64)>,
    link: &LinkBudget,
) -> Result<CoverDesign> {
    if targets.is_empty() {
        return Err(Error::InvalidInput {
            name: "targets",
            reason: "covering-beam design needs at least one ellipse".into(),
        });
    }
    let centroid = targets
        .iter()
        .fold((0.0, 0.0), |acc, e| (acc.0 + e.center.0, acc.1 + e.center.1));
    let n = targets.len() as f64;
    let anchor = pointing_hint.unwrap_or((centroid.0 / n, centroid.1 / n));
    let m = hpbw_map(anchor.0, anchor.1)?;

    let mut mapped = Vec::with_capacity(targets.len() * link.p_num);
    for e in targets {
        let boundary = discretize(e, link.p_num)?;
        for (x, y) in boundary.points {
            let d = Vector2::new(x - anchor.0, y - anchor.1);
            let w = m * d;
            mapped.push((w[0], w[1]));
        }
    }
    let cover = axis_aligned_mee_with_tolerance(
        &PointSet2D::new(mapped),
        COVER_MEE_TOL,
        COVER_MEE_MAX_ITER,
    )?;

    // The solver reports major/minor axes; recover the per-axis semi-widths
    // (orientation is 0 or π/2 for an axis-aligned ellipse).
    let (semi_t, semi_p) = if cover.orientation.abs() < std::f64::consts::FRAC_PI_4 {
        (cover.semi_major, cover.semi_minor)
    } else {
        (cover.semi_minor, cover.semi_major)
    };
    let counts = antennas_from_bw(2.0 * semi_t, 2.0 * semi_p, &link.array)?;

    let inv = m
        .try_inverse()
        .ok_or(Error::SingularMatrix("half-power width map"))?;
    let back = inv * Vector2::new(cover.center.0, cover.center.1);
    let mut beam = beam_weights(
        anchor.0 + back[0],
        anchor.1 + back[1],
        counts.nz,
        counts.ny,
        &link.array,
    )?;
    // Record that the requested widths were narrower than the array allows
    // (the count rule already clipped them before beam synthesis saw them).
    beam.clamped = beam.clamped || counts.clamped;
    Ok(CoverDesign {
        beam,
        mapped_cover: cover,
    })
}

/// Confidence ellipse of one scatterer measurement, centered at its angle
/// estimates.
fn measurement_ellipse(m: &ScattererMeasurement, confidence: f64) -> Result<Ellipse> {
    let e = error_ellipse(&m.sigma_ang, confidence)?;
    Ok(Ellipse {
        center: (m.theta_hat, m.phi_hat),
        ..e
    })
}

// ── Initial beam establishment ───────────────────────────────────────────────

/// Run initial beam establishment from a cold start.
///
/// Slot 1 transmits a single-element (1×1) wide beam; every slot measures all
/// scatterers visible above the detection floor, covers the union of their
/// confidence ellipses with [`design_beam_covering`] and commits the result
/// for the next slot.  The loop stops when the covering area's relative
/// change drops below `params.ibe_convergence_tol`, or when the antenna
/// counts have saturated at the full array for two consecutive designs.  The
/// final slot carries the receiver's position feedback: it registers the
/// receiver-minus-scatterer offsets and seeds the tracker state from the last
/// nearest-scatterer measurement.
///
/// Errors with [`Error::NeverDetected`] if no scatterer was ever detected
/// within `params.ibe_slot_budget` slots.
pub fn run_ibe<R: Rng + ?Sized>(
    world0: &WorldState,
    link: &LinkBudget,
    params: &SchemeParams,
    rng: &mut R,
) -> Result<IbeOutcome> {
    link.validate()?;
    params.validate()?;

    let mut world = world0.clone();
    let mut beam = beam_weights(0.0, 0.0, 1, 1, &link.array)?;
    let full = (link.array.nz_max, link.array.ny_max);
    let mut trace: Vec<SlotRecord> = Vec::new();
    let mut mee_calls = 0u64;
    let mut prev_area: Option<f64> = None;
    let mut prev_counts = (beam.nz, beam.ny);
    let mut ever_detected = false;
    let mut last_detections: Vec<(usize, ScattererMeasurement)> = Vec::new();

    for slot in 0..params.ibe_slot_budget {
        let positions = world.scatterer_positions();
        let truth_cr = cr_state(&world)?;

        let mut detections: Vec<(usize, ScattererMeasurement)> = Vec::new();
        for (i, &p) in positions.iter().enumerate() {
            let truth = polar_of(&world, p)?;
            if let Some(m) = sense_scatterer(link, &truth, &beam, rng)? {
                detections.push((i, m));
            }
        }

        if detections.is_empty() {
            // Nothing seen: hold the beam and spend the slot.
            trace.push(SlotRecord {
                slot,
                time_s: world.time,
                truth: truth_cr,
                estimate: PolarState {
                    theta: beam.theta0,
                    phi: beam.phi0,
                    d: 0.0,
                    v: 0.0,
                },
                nz: beam.nz,
                ny: beam.ny,
                pointing: (beam.theta0, beam.phi0),
                rate_bps_hz: cr_rate(link, &truth_cr, &beam)?,
                event: SlotEvent::Sense,
                mee_area: None,
                mee_calls,
                ekf_calls: 0,
            });
            world = propagate_truth(&world, link.slot_s);
            continue;
        }
        ever_detected = true;

        let ellipses = detections
            .iter()
            .map(|(_, m)| measurement_ellipse(m, link.confidence))
            .collect::<Result<Vec<_>>>()?;
        let design = design_beam_covering(&ellipses, Some((beam.theta0, beam.phi0)), link)?;
        mee_calls += 1;
        let area = design.mapped_cover.area();

        let mean_range = detections
            .iter()
            .map(|(_, m)| crate::C_LIGHT * m.tau_hat / 2.0)
            .sum::<f64>()
            / detections.len() as f64;
        trace.push(SlotRecord {
            slot,
            time_s: world.time,
            truth: truth_cr,
            estimate: PolarState {
                theta: beam.theta0,
                phi: beam.phi0,
                d: mean_range,
                v: 0.0,
            },
            nz: beam.nz,
            ny: beam.ny,
            pointing: (beam.theta0, beam.phi0),
            rate_bps_hz: cr_rate(link, &truth_cr, &beam)?,
            event: SlotEvent::Sense,
            mee_area: Some(area),
            mee_calls,
            ekf_calls: 0,
        });
        last_detections = detections;

        let stop_area = prev_area
            .map(|pa| ((area - pa) / pa).abs() < params.ibe_convergence_tol)
            .unwrap_or(false);
        let next_counts = (design.beam.nz, design.beam.ny);
        let stop_saturated = next_counts == full && prev_counts == full;
        prev_area = Some(area);
        prev_counts = next_counts;
        beam = design.beam;
        world = propagate_truth(&world, link.slot_s);
        if stop_area || stop_saturated {
            break;
        }
    }

    if !ever_detected {
        return Err(Error::NeverDetected {
            budget: params.ibe_slot_budget,
        });
    }

    // Position feedback: the receiver reports its location, which registers
    // the rigid receiver-minus-scatterer offsets and seeds the tracker from
    // the final nearest-scatterer measurement.
    let offsets: Vec<(f64, f64)> = world
        .scatterer_offsets
        .iter()
        .map(|&(dx, dy)| (-dx, -dy))
        .collect();
    let truth_cr = cr_state(&world)?;
    let measured_angles: Vec<(f64, f64)> = last_detections
        .iter()
        .map(|(_, m)| (m.theta_hat, m.phi_hat))
        .collect();
    let pick = nearest_scatterer((truth_cr.theta, truth_cr.phi), &measured_angles)?;
    let (scatterer_idx, m) = &last_detections[pick];
    let z = cr_from_scatterer(
        m,
        offsets[*scatterer_idx].0,
        offsets[*scatterer_idx].1,
        h_eff(&world),
        link.lambda,
    )?;
    let track_init = TrackState::new(
        PolarState {
            theta: z.theta_cr,
            phi: z.phi_cr,
            d: z.d_cr,
            v: z.v_cr,
        },
        Matrix4::from_diagonal(&Vector4::new(z.var_theta, z.var_phi, z.var_d, z.var_v)),
        link.process_noise,
    )?;
    if let Some(last) = trace.last_mut() {
        last.event = SlotEvent::Feedback;
    }

    Ok(IbeOutcome {
        convergence_slots: trace.len(),
        trace,
        world_after: world,
        offsets,
        final_beam: beam,
        track_init,
        mee_calls,
    })
}

// ── Adaptive beam adjustment and its tracked variants ────────────────────────

/// Whose direction the tracker is locked onto.
#[derive(Debug, Clone, Copy)]
enum TrackedTarget {
    /// The communication receiver itself (offsets from position feedback).
    Cr,
    /// One scatterer treated as if it were the receiver (point-target
    /// baseline; conversion offsets are relative to that scatterer).
    Scatterer(usize),
}

/// Shared engine behind the adaptive scheme, the continuous-sensing baseline
/// and the point-target baseline.
///
/// `every_slot` forces sensing mode permanently (continuous sensing).  The
/// `target` selects whose true direction the feedback error is measured
/// against and which rigid offsets convert scatterer echoes into target
/// measurements; the downlink rate is always evaluated at the true receiver.
#[allow(clippy::too_many_arguments)]
fn run_tracked<R: Rng + ?Sized>(
    world0: &WorldState,
    link: &LinkBudget,
    params: &SchemeParams,
    handoff: &IbeOutcome,
    target: TrackedTarget,
    every_slot: bool,
    n_slots: usize,
    start_slot: usize,
    rng: &mut R,
) -> Result<SchemeTrace> {
    link.validate()?;
    params.validate()?;

    let mut world = world0.clone();
    let conv_offsets: Vec<(f64, f64)> = match target {
        TrackedTarget::Cr => handoff.offsets.clone(),
        TrackedTarget::Scatterer(k) => {
            if k >= world.scatterer_offsets.len() {
                return Err(Error::InvalidInput {
                    name: "target scatterer",
                    reason: format!(
                        "index {k} out of range for {} scatterers",
                        world.scatterer_offsets.len()
                    ),
                });
            }
            let anchor = world.scatterer_offsets[k];
            world
                .scatterer_offsets
                .iter()
                .map(|&(dx, dy)| (anchor.0 - dx, anchor.1 - dy))
                .collect()
        }
    };
    let mut track = match target {
        TrackedTarget::Cr => handoff.track_init,
        // The point baseline re-anchors the tracker on its scatterer; the
        // handoff covariance (same echo statistics) carries over.
        TrackedTarget::Scatterer(k) => {
            let positions = world.scatterer_positions();
            TrackState::new(
                polar_of(&world, positions[k])?,
                handoff.track_init.cov,
                link.process_noise,
            )?
        }
    };

    let mut sensing = every_slot;
    let mut mee_calls = handoff.mee_calls;
    let mut ekf_calls = 0u64;
    let mut divergence_streak = 0usize;
    let mut diverged = false;
    let mut records = Vec::with_capacity(n_slots);

    for i in 0..n_slots {
        track = ekf_predict(&track, link.slot_s)?;
        let positions = world.scatterer_positions();
        let truth_cr = cr_state(&world)?;

        if !every_slot && i % params.feedback_period == 0 {
            let fb_truth = match target {
                TrackedTarget::Cr => truth_cr,
                TrackedTarget::Scatterer(k) => polar_of(&world, positions[k])?,
            };
            let err = pointing_error(
                (track.mean.theta, track.mean.phi),
                (fb_truth.theta, fb_truth.phi),
            );
            if !sensing && err > params.gamma_r1 {
                sensing = true;
            } else if sensing && err < params.gamma_r2 {
                sensing = false;
            }
            if sensing && err > DIVERGENCE_FACTOR * params.gamma_r1 {
                divergence_streak += 1;
                if divergence_streak >= DIVERGENCE_SLOTS {
                    diverged = true;
                }
            } else {
                divergence_streak = 0;
            }
        }

        let (beam, area, event) = if sensing {
            // Where the belief puts each scatterer, via the rigid offsets.
            let est_pos = polar_to_cartesian(
                track.mean.theta,
                track.mean.phi,
                track.mean.d,
                world.bs_position,
            );
            let mut predicted_angles = Vec::with_capacity(conv_offsets.len());
            for &(dx, dy) in &conv_offsets {
                let p = [est_pos[0] - dx, est_pos[1] - dy, est_pos[2]];
                let s = polar_of(&world, p)?;
                predicted_angles.push((s.theta, s.phi));
            }
            let k = nearest_scatterer(
                (track.mean.theta, track.mean.phi),
                &predicted_angles,
            )?;

            let cov_ang: Matrix2<f64> = track.cov.fixed_view::<2, 2>(0, 0).into_owned();
            let target_ellipse = Ellipse {
                center: (track.mean.theta, track.mean.phi),
                ..error_ellipse(&cov_ang, link.confidence)?
            };
            let cell = resolution_cell(link, predicted_angles[k])?;
            let design = design_beam_covering(&[target_ellipse, cell], None, link)?;
            mee_calls += 1;

            let scatterer_truth = polar_of(&world, positions[k])?;
            if let Some(m) = sense_scatterer(link, &scatterer_truth, &design.beam, rng)? {
                match cr_from_scatterer(
                    &m,
                    conv_offsets[k].0,
                    conv_offsets[k].1,
                    h_eff(&world),
                    link.lambda,
                ) {
                    Ok(z) => {
                        track = ekf_update(&track, &z)?;
                        ekf_calls += 1;
                    }
                    // A broadside geometry can make the Doppler-to-velocity
                    // conversion singular for one slot; drop the measurement
                    // and keep sensing.
                    Err(Error::SingularAngle { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            (
                design.beam,
                Some(design.mapped_cover.area()),
                SlotEvent::Sense,
            )
        } else {
            let beam = beam_weights(
                track.mean.theta,
                track.mean.phi,
                link.array.nz_max,
                link.array.ny_max,
                &link.array,
            )?;
            (beam, None, SlotEvent::Predict)
        };

        records.push(SlotRecord {
            slot: start_slot + i,
            time_s: world.time,
            truth: truth_cr,
            estimate: track.mean,
            nz: beam.nz,
            ny: beam.ny,
            pointing: (beam.theta0, beam.phi0),
            rate_bps_hz: cr_rate(link, &truth_cr, &beam)?,
            event,
            mee_area: area,
            mee_calls,
            ekf_calls,
        });
        world = propagate_truth(&world, link.slot_s);
    }

    Ok(SchemeTrace { records, diverged })
}

/// Run adaptive beam adjustment after an establishment handoff.
///
/// `n_slots` is the connected-phase length; `start_slot` is the global index
/// of its first slot (establishment slots come before it).  The handoff
/// provides the registered offsets, the tracker seed and the cumulative
/// design counter.
pub fn run_aba<R: Rng + ?Sized>(
    world: &WorldState,
    link: &LinkBudget,
    params: &SchemeParams,
    handoff: &IbeOutcome,
    n_slots: usize,
    start_slot: usize,
    rng: &mut R,
) -> Result<SchemeTrace> {
    run_tracked(
        world,
        link,
        params,
        handoff,
        TrackedTarget::Cr,
        false,
        n_slots,
        start_slot,
        rng,
    )
}

// ── Baselines ────────────────────────────────────────────────────────────────

/// Whole-vehicle covering: every slot measures all scatterers with the
/// current beam and covers their confidence ellipses for the next slot.
fn run_db<R: Rng + ?Sized>(
    world0: &WorldState,
    link: &LinkBudget,
    params: &SchemeParams,
    handoff: &IbeOutcome,
    n_slots: usize,
    start_slot: usize,
    rng: &mut R,
) -> Result<SchemeTrace> {
    link.validate()?;
    params.validate()?;
    let mut world = world0.clone();
    let mut beam = handoff.final_beam.clone();
    let mut mee_calls = handoff.mee_calls;
    let mut records = Vec::with_capacity(n_slots);

    for i in 0..n_slots {
        let positions = world.scatterer_positions();
        let truth_cr = cr_state(&world)?;

        let mut detections: Vec<ScattererMeasurement> = Vec::new();
        for &p in &positions {
            let truth = polar_of(&world, p)?;
            if let Some(m) = sense_scatterer(link, &truth, &beam, rng)? {
                detections.push(m);
            }
        }

        let (next_beam, area, mean_range) = if detections.is_empty() {
            (beam.clone(), None, 0.0)
        } else {
            let ellipses = detections
                .iter()
                .map(|m| measurement_ellipse(m, link.confidence))
                .collect::<Result<Vec<_>>>()?;
            let design = design_beam_covering(&ellipses, None, link)?;
            mee_calls += 1;
            let mean_range = detections
                .iter()
                .map(|m| crate::C_LIGHT * m.tau_hat / 2.0)
                .sum::<f64>()
                / detections.len() as f64;
            (
                design.beam,
                Some(design.mapped_cover.area()),
                mean_range,
            )
        };

        records.push(SlotRecord {
            slot: start_slot + i,
            time_s: world.time,
            truth: truth_cr,
            estimate: PolarState {
                theta: beam.theta0,
                phi: beam.phi0,
                d: mean_range,
                v: 0.0,
            },
            nz: beam.nz,
            ny: beam.ny,
            pointing: (beam.theta0, beam.phi0),
            rate_bps_hz: cr_rate(link, &truth_cr, &beam)?,
            event: SlotEvent::Sense,
            mee_area: area,
            mee_calls,
            ekf_calls: 0,
        });
        beam = next_beam;
        world = propagate_truth(&world, link.slot_s);
    }
    Ok(SchemeTrace {
        records,
        diverged: false,
    })
}

/// Codebook sweeping: a fixed grid of full-array beams spanning the road
/// sector; the serving beam is re-selected by received power — over the whole
/// codebook once at the start, then over a small window around the incumbent
/// every `sweep_period` slots.
fn run_sweep(
    world0: &WorldState,
    link: &LinkBudget,
    params: &SchemeParams,
    n_slots: usize,
    start_slot: usize,
) -> Result<SchemeTrace> {
    link.validate()?;
    params.validate()?;
    let mut world = world0.clone();

    // Codebook from the a-priori road geometry: the azimuths of evenly spaced
    // points along the receiver's ground track, at the elevation of the mean
    // ground range.
    let mut ys = Vec::with_capacity(n_slots.max(1));
    let mut rho_sum = 0.0;
    {
        let mut scratch = world.clone();
        for _ in 0..n_slots.max(1) {
            let x = scratch.cr_position[0] - scratch.bs_position[0];
            let y = scratch.cr_position[1] - scratch.bs_position[1];
            ys.push(y);
            rho_sum += x.hypot(y);
            scratch = propagate_truth(&scratch, link.slot_s);
        }
    }
    let x_rel = world.cr_position[0] - world.bs_position[0];
    let (y_lo, y_hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });
    let rho_mean = rho_sum / ys.len() as f64;
    let theta_fix = -(h_eff(&world) / rho_mean).atan();
    let k = params.sweep_codebook_size;
    let codebook: Vec<f64> = (0..k)
        .map(|i| {
            let y = y_lo + (y_hi - y_lo) * i as f64 / (k - 1) as f64;
            y.atan2(x_rel)
        })
        .collect();

    let mut best = 0usize;
    let mut records = Vec::with_capacity(n_slots);
    for i in 0..n_slots {
        let truth_cr = cr_state(&world)?;
        let event = if i % params.sweep_period == 0 {
            let (lo, hi) = if i == 0 {
                (0, k)
            } else {
                let lo = best.saturating_sub(SWEEP_REFINE_WINDOW / 2 - 1);
                (lo, (lo + SWEEP_REFINE_WINDOW).min(k))
            };
            let mut best_gain = f64::NEG_INFINITY;
            for (j, &phi) in codebook.iter().enumerate().take(hi).skip(lo) {
                let candidate = beam_weights(
                    theta_fix,
                    phi,
                    link.array.nz_max,
                    link.array.ny_max,
                    &link.array,
                )?;
                let g = candidate.gain(truth_cr.theta, truth_cr.phi);
                if g > best_gain {
                    best_gain = g;
                    best = j;
                }
            }
            SlotEvent::Sweep
        } else {
            SlotEvent::Predict
        };

        let beam = beam_weights(
            theta_fix,
            codebook[best],
            link.array.nz_max,
            link.array.ny_max,
            &link.array,
        )?;
        records.push(SlotRecord {
            slot: start_slot + i,
            time_s: world.time,
            truth: truth_cr,
            estimate: PolarState {
                theta: theta_fix,
                phi: codebook[best],
                d: 0.0,
                v: 0.0,
            },
            nz: beam.nz,
            ny: beam.ny,
            pointing: (beam.theta0, beam.phi0),
            rate_bps_hz: cr_rate(link, &truth_cr, &beam)?,
            event,
            mee_area: None,
            mee_calls: 0,
            ekf_calls: 0,
        });
        world = propagate_truth(&world, link.slot_s);
    }
    Ok(SchemeTrace {
        records,
        diverged: false,
    })
}

/// Always-wide beam: a 1×1 beam every slot, direct nearest-scatterer
/// conversion as the estimate, no filtering and no covering designs.
fn run_omni<R: Rng + ?Sized>(
    world0: &WorldState,
    link: &LinkBudget,
    params: &SchemeParams,
    handoff: &IbeOutcome,
    n_slots: usize,
    start_slot: usize,
    rng: &mut R,
) -> Result<SchemeTrace> {
    link.validate()?;
    params.validate()?;
    let mut world = world0.clone();
    let beam = beam_weights(0.0, 0.0, 1, 1, &link.array)?;
    let mut estimate = handoff.track_init.mean.clone();
    let mut records = Vec::with_capacity(n_slots);

    for i in 0..n_slots {
        let positions = world.scatterer_positions();
        let truth_cr = cr_state(&world)?;

        let est_pos =
            polar_to_cartesian(estimate.theta, estimate.phi, estimate.d, world.bs_position);
        let mut predicted_angles = Vec::with_capacity(handoff.offsets.len());
        for &(dx, dy) in &handoff.offsets {
            let p = [est_pos[0] - dx, est_pos[1] - dy, est_pos[2]];
            let s = polar_of(&world, p)?;
            predicted_angles.push((s.theta, s.phi));
        }
        let k = nearest_scatterer((estimate.theta, estimate.phi), &predicted_angles)?;
        let scatterer_truth = polar_of(&world, positions[k])?;
        if let Some(m) = sense_scatterer(link, &scatterer_truth, &beam, rng)? {
            match cr_from_scatterer(
                &m,
                handoff.offsets[k].0,
                handoff.offsets[k].1,
                h_eff(&world),
                link.lambda,
            ) {
                Ok(z) => {
                    estimate = PolarState {
                        theta: z.theta_cr,
                        phi: z.phi_cr,
                        d: z.d_cr,
                        v: z.v_cr,
                    };
                }
                Err(Error::SingularAngle { .. }) => {}
                Err(e) => return Err(e),
            }
        }

        records.push(SlotRecord {
            slot: start_slot + i,
            time_s: world.time,
            truth: truth_cr,
            estimate: estimate.clone(),
            nz: beam.nz,
            ny: beam.ny,
            pointing: (beam.theta0, beam.phi0),
            rate_bps_hz: cr_rate(link, &truth_cr, &beam)?,
            event: SlotEvent::Sense,
            mee_area: None,
            mee_calls: handoff.mee_calls,
            ekf_calls: 0,
        });
        world = propagate_truth(&world, link.slot_s);
    }
    Ok(SchemeTrace {
        records,
        diverged: false,
    })
}

/// Run one of the reference baselines for the connected phase.
///
/// `handoff` must be the establishment outcome for every kind except
/// [`SchemeKind::Sweep`], which is self-starting and ignores it.  The
/// point-target baseline draws its scatterer uniformly from `rng` once per
/// run.  Passing [`SchemeKind::Aba`] is rejected — use [`run_aba`].
#[allow(clippy::too_many_arguments)]
pub fn run_baseline<R: Rng + ?Sized>(
    world: &WorldState,
    link: &LinkBudget,
    params: &SchemeParams,
    kind: SchemeKind,
    handoff: Option<&IbeOutcome>,
    n_slots: usize,
    start_slot: usize,
    rng: &mut R,
) -> Result<SchemeTrace> {
    let need_handoff = || {
        handoff.ok_or(Error::InvalidInput {
            name: "handoff",
            reason: format!(
                "baseline `{}` runs after initial beam establishment",
                kind.as_str()
            ),
        })
    };
    match kind {
        SchemeKind::Aba => Err(Error::InvalidInput {
            name: "kind",
            reason: "adaptive beam adjustment is run_aba, not a baseline".into(),
        }),
        SchemeKind::Rb => run_tracked(
            world,
            link,
            params,
            need_handoff()?,
            TrackedTarget::Cr,
            true,
            n_slots,
            start_slot,
            rng,
        ),
        SchemeKind::Db => run_db(world, link, params, need_handoff()?, n_slots, start_slot, rng),
        SchemeKind::Point => {
            let h = need_handoff()?;
            let k = rng.gen_range(0..world.scatterer_offsets.len());
            run_tracked(
                world,
                link,
                params,
                h,
                TrackedTarget::Scatterer(k),
                false,
                n_slots,
                start_slot,
                rng,
            )
        }
        SchemeKind::Sweep => run_sweep(world, link, params, n_slots, start_slot),
        SchemeKind::Omni => run_omni(
            world,
            link,
            params,
            need_handoff()?,
            n_slots,
            start_slot,
            rng,
        ),
    }
}

// ── Tests ────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Slot duration of the test numerology, s.
    const SLOT_S: f64 = 0.125e-3;

    /// Relative tolerance for containment checks against the realized beam
    /// footprint (covers the covering solver's own certificate slack).
    const CONTAIN_TOL: f64 = 1e-6;

    fn test_link(nz_max: usize, ny_max: usize) -> LinkBudget {
        LinkBudget {
            array: ArrayConfig {
                nz_max,
                ny_max,
                p_tx: 1.0,
            },
            dims: SensingDims {
                nz: nz_max,
                ny: ny_max,
                n_sub: 3300,
                n_sym: 14,
                delta_f_hz: 120e3,
                t_sym_s: SLOT_S / 14.0,
            },
            lambda: 0.01,
            sigma_c2: 1e-11,
            sigma_r2: 1e-11,
            rcs: 1.0,
            path_loss_exponent: 0.95,
            slot_s: SLOT_S,
            confidence: 0.99,
            p_num: 200,
            detection_floor: 10.0,
            process_noise: [6.0923e-6, 6.0923e-6, 0.2, 0.25],
        }
    }

    fn test_world() -> WorldState {
        WorldState::new(
            [0.0, 0.0, 8.0],
            [10.0, -38.0, 1.0],
            0.0,
            10.0,
            2.0,
            5.0,
            2,
            3,
            0.1,
        )
        .expect("world")
    }

    fn establish(link: &LinkBudget, seed: u64) -> IbeOutcome {
        let params = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        run_ibe(&test_world(), link, &params, &mut rng).expect("establishment")
    }

    // ── Nearest-scatterer selection ──────────────────────────────────────

    #[test]
    fn nearest_scatterer_picks_closest_and_breaks_ties_low() {
        let pts = [(0.1, 0.1), (0.0, 0.05), (0.2, -0.1)];
        assert_eq!(nearest_scatterer((0.0, 0.0), &pts).unwrap(), 1);
        // Symmetric tie: the lower index wins.
        let tie = [(0.1, 0.0), (-0.1, 0.0)];
        assert_eq!(nearest_scatterer((0.0, 0.0), &tie).unwrap(), 0);
        assert!(nearest_scatterer((0.0, 0.0), &[]).is_err());
    }

    #[test]
    fn nearest_scatterer_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r = (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let pts: Vec<(f64, f64)> = (0..8)
                .map(|_| (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let got = nearest_scatterer(r, &pts).unwrap();
            let want = pts
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1 .0 - r.0).hypot(a.1 .1 - r.1);
                    let db = (b.1 .0 - r.0).hypot(b.1 .1 - r.1);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .0;
            assert_eq!(got, want);
        }
    }

    // ── Covering-beam design ─────────────────────────────────────────────

    #[test]
    fn covering_tiny_ellipse_clamps_to_full_array() {
        let link = test_link(8, 8);
        let e = Ellipse::from_semi_axes((-0.3, 0.7), 1e-4, 1e-4, 0.0).unwrap();
        let design = design_beam_covering(&[e], None, &link).unwrap();
        assert_eq!((design.beam.nz, design.beam.ny), (8, 8));
        assert!(design.beam.clamped);
        // Pointing lands on the ellipse center.
        assert!((design.beam.theta0 - -0.3).abs() < 1e-3);
        assert!((design.beam.phi0 - 0.7).abs() < 1e-3);
    }

    #[test]
    fn covering_contains_every_mapped_point_when_unclamped() {
        // A large array keeps the count rule unclamped (for these region
        // sizes) so the realized footprint must contain the mapped cloud
        // outright.
        let link_big = test_link(512, 512);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for case in 0..100 {
            let n_ell = 1 + case % 3;
            let mut targets = Vec::new();
            let c0 = (
                -1.0 + 1.4 * rng.gen::<f64>(),
                -1.2 + 2.4 * rng.gen::<f64>(),
            );
            for _ in 0..n_ell {
                let center = (
                    c0.0 + 0.05 * (rng.gen::<f64>() - 0.5),
                    c0.1 + 0.05 * (rng.gen::<f64>() - 0.5),
                );
                let a = 0.02 + 0.03 * rng.gen::<f64>();
                let b = 0.02 + 0.03 * rng.gen::<f64>();
                let or = (rng.gen::<f64>() - 0.5) * std::f64::consts::FRAC_PI_2;
                targets.push(Ellipse::from_semi_axes(center, a, b, or).unwrap());
            }
            let design = design_beam_covering(&targets, None, &link_big).unwrap();
            assert!(!design.beam.clamped, "case {case} unexpectedly clamped");

            // Realized half-power semi-widths at the committed counts.
            let semi_t = 0.89 / design.beam.nz as f64;
            let semi_p = 0.89 / design.beam.ny as f64;
            let footprint = Ellipse::from_semi_axes(
                design.mapped_cover.center,
                semi_t,
                semi_p,
                0.0,
            )
            .unwrap();
            let centroid = targets
                .iter()
                .fold((0.0, 0.0), |acc, e| (acc.0 + e.center.0, acc.1 + e.center.1));
            let n = targets.len() as f64;
            let anchor = (centroid.0 / n, centroid.1 / n);
            let m = hpbw_map(anchor.0, anchor.1).unwrap();
            for e in &targets {
                for (x, y) in discretize(e, link_big.p_num).unwrap().points {
                    let d = Vector2::new(x - anchor.0, y - anchor.1);
                    let w = m * d;
                    assert!(
                        footprint.central_value(w[0], w[1]) <= 1.0 + CONTAIN_TOL,
                        "case {case}: mapped point outside realized footprint"
                    );
                }
            }
        }
    }

    #[test]
    fn covering_counts_shrink_as_regions_grow() {
        let link = test_link(256, 256);
        let mut prev = (usize::MAX, usize::MAX);
        for scale in [0.002, 0.008, 0.03, 0.1] {
            let e = Ellipse::from_semi_axes((-0.3, 0.7), scale, scale, 0.0).unwrap();
            let d = design_beam_covering(&[e], None, &link).unwrap();
            assert!(d.beam.nz <= prev.0 && d.beam.ny <= prev.1);
            prev = (d.beam.nz, d.beam.ny);
        }
        assert!(prev.0 < 256, "largest region should need fewer antennas");
    }

    #[test]
    fn covering_rejects_empty_target_set() {
        let link = test_link(8, 8);
        assert!(design_beam_covering(&[], None, &link).is_err());
    }

    // ── Initial beam establishment ───────────────────────────────────────

    #[test]
    fn establishment_converges_and_registers_offsets() {
        let link = test_link(8, 8);
        let out = establish(&link, 1);
        assert_eq!(out.convergence_slots, out.trace.len());
        assert!(
            out.convergence_slots >= 2 && out.convergence_slots <= 20,
            "unexpected establishment length {}",
            out.convergence_slots
        );
        // Final slot carries the position feedback.
        assert_eq!(out.trace.last().unwrap().event, SlotEvent::Feedback);
        // Registered offsets are receiver-minus-scatterer.
        let world = test_world();
        for (reg, &(dx, dy)) in out.offsets.iter().zip(&world.scatterer_offsets) {
            assert_eq!(*reg, (-dx, -dy));
        }
        // First slot is the wide beam; designs are counted.
        assert_eq!((out.trace[0].nz, out.trace[0].ny), (1, 1));
        assert_eq!(out.mee_calls, out.trace.len() as u64);
        // The tracker seed sits near the truth.
        let truth = cr_state(&out.world_after).unwrap();
        assert!((out.track_init.mean.theta - truth.theta).abs() < 0.05);
        assert!((out.track_init.mean.phi - truth.phi).abs() < 0.05);
        assert!((out.track_init.mean.d - truth.d).abs() < 2.0);
    }

    #[test]
    fn establishment_with_tiny_noise_converges_fast_and_areas_shrink() {
        // Near-noiseless echoes: ellipses collapse, so the covering areas and
        // antenna counts stabilize immediately.
        let mut link = test_link(8, 8);
        link.sigma_r2 = 1e-22;
        let out = establish(&link, 2);
        assert!(
            out.convergence_slots <= 3,
            "near-noiseless establishment took {} slots",
            out.convergence_slots
        );
        let areas: Vec<f64> = out
            .trace
            .iter()
            .filter_map(|r| r.mee_area)
            .collect();
        for w in areas.windows(2) {
            assert!(
                w[1] <= w[0] * 1.01,
                "covering area grew: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn establishment_errors_when_nothing_is_ever_detected() {
        let mut link = test_link(8, 8);
        link.sigma_r2 = 1e6; // echoes fall far below the detection floor
        let params = SchemeParams {
            ibe_slot_budget: 5,
            ..SchemeParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = run_ibe(&test_world(), &link, &params, &mut rng).unwrap_err();
        match err {
            Error::NeverDetected { budget } => assert_eq!(budget, 5),
            other => panic!("expected NeverDetected, got {other:?}"),
        }
    }

    // ── Adaptive beam adjustment ─────────────────────────────────────────

    #[test]
    fn adaptive_run_triggers_sensing_sparsely_and_tracks() {
        let link = test_link(8, 8);
        let out = establish(&link, 4);
        let params = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // The unmodeled acceleration needs ~9000 slots of drift before the
        // first trigger at this geometry; run long enough for a few episodes.
        let n = 14000;
        let trace = run_aba(
            &out.world_after,
            &link,
            &params,
            &out,
            n,
            out.convergence_slots,
            &mut rng,
        )
        .unwrap();
        assert!(!trace.diverged);
        assert_eq!(trace.records.len(), n);

        let sense_slots = trace
            .records
            .iter()
            .filter(|r| r.event == SlotEvent::Sense)
            .count();
        let predict_slots = trace
            .records
            .iter()
            .filter(|r| r.event == SlotEvent::Predict)
            .count();
        assert!(sense_slots > 0, "acceleration must force sensing");
        assert!(
            sense_slots < n / 20,
            "sensing should be sparse, got {sense_slots}/{n}"
        );
        assert_eq!(sense_slots + predict_slots, n);

        // Counters are cumulative and flat outside sensing slots.
        let mut prev = (out.mee_calls, 0u64);
        for r in &trace.records {
            assert!(r.mee_calls >= prev.0 && r.ekf_calls >= prev.1);
            prev = (r.mee_calls, r.ekf_calls);
        }
        let last = trace.records.last().unwrap();
        assert_eq!(last.mee_calls - out.mee_calls, sense_slots as u64);
        assert!(last.ekf_calls <= sense_slots as u64);

        // The belief follows the truth within the trigger threshold scale.
        for r in trace.records.iter().skip(10) {
            let err = pointing_error(
                (r.estimate.theta, r.estimate.phi),
                (r.truth.theta, r.truth.phi),
            );
            assert!(
                err < 2.0 * params.gamma_r1,
                "slot {}: pointing error {err} out of control",
                r.slot
            );
        }
        // Rates stay meaningful (full-array data beams dominate).
        let avg_rate: f64 =
            trace.records.iter().map(|r| r.rate_bps_hz).sum::<f64>() / n as f64;
        assert!(avg_rate > 8.0, "average rate {avg_rate} suspiciously low");
    }

    #[test]
    fn adaptive_without_acceleration_never_senses() {
        let link = test_link(8, 8);
        let mut world = test_world();
        world.cr_acceleration = 0.0;
        let params = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = run_ibe(&world, &link, &params, &mut rng).expect("establishment");
        let trace = run_aba(
            &out.world_after,
            &link,
            &params,
            &out,
            2000,
            out.convergence_slots,
            &mut rng,
        )
        .unwrap();
        assert!(trace
            .records
            .iter()
            .all(|r| r.event == SlotEvent::Predict));
        assert_eq!(trace.records.last().unwrap().ekf_calls, 0);
    }

    #[test]
    fn tighter_trigger_senses_more_often() {
        let link = test_link(8, 8);
        let out = establish(&link, 6);
        let mut counts = Vec::new();
        for gamma in [0.04, 0.02] {
            let params = SchemeParams {
                gamma_r1: gamma,
                ..SchemeParams::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let trace = run_aba(
                &out.world_after,
                &link,
                &params,
                &out,
                20000,
                out.convergence_slots,
                &mut rng,
            )
            .unwrap();
            counts.push(
                trace
                    .records
                    .iter()
                    .filter(|r| r.event == SlotEvent::Sense)
                    .count(),
            );
        }
        assert!(
            counts[1] > counts[0],
            "γ=0.02 sensed {} vs γ=0.04 sensed {}",
            counts[1],
            counts[0]
        );
    }

    #[test]
    fn tracker_stays_statistically_consistent_through_a_run() {
        // The filter's innovation bookkeeping should keep the normalized
        // squared error near its four-degree expectation at sensing updates.
        let link = test_link(8, 8);
        let out = establish(&link, 12);
        let params = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trace = run_tracked(
            &out.world_after,
            &link,
            &params,
            &out,
            TrackedTarget::Cr,
            true, // sense every slot: updates are frequent
            600,
            out.convergence_slots,
            &mut rng,
        )
        .unwrap();
        // With an update every slot the estimate must hug the truth at
        // measurement-noise scale throughout.
        let mut worst = 0.0f64;
        for r in trace.records.iter().skip(5) {
            worst = worst.max(pointing_error(
                (r.estimate.theta, r.estimate.phi),
                (r.truth.theta, r.truth.phi),
            ));
        }
        assert!(
            worst < 0.02,
            "estimate wandered {worst} rad from truth under continuous sensing"
        );
    }

    // ── Baselines ────────────────────────────────────────────────────────

    #[test]
    fn continuous_sensing_senses_every_slot() {
        let link = test_link(8, 8);
        let out = establish(&link, 7);
        let params = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 500;
        let trace = run_baseline(
            &out.world_after,
            &link,
            &params,
            SchemeKind::Rb,
            Some(&out),
            n,
            out.convergence_slots,
            &mut rng,
        )
        .unwrap();
        assert!(trace.records.iter().all(|r| r.event == SlotEvent::Sense));
        let last = trace.records.last().unwrap();
        assert_eq!(last.mee_calls - out.mee_calls, n as u64);
        assert_eq!(last.ekf_calls, n as u64, "every echo should update");
        // Full-array parity: continuous sensing covers a region small enough
        // to clamp to the full array, so its beams match the data beams.
        assert!(trace.records.iter().all(|r| (r.nz, r.ny) == (8, 8)));
    }

    #[test]
    fn whole_vehicle_covering_designs_every_slot_without_tracking() {
        let link = test_link(8, 8);
        let out = establish(&link, 8);
        let params = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 300;
        let trace = run_baseline(
            &out.world_after,
            &link,
            &params,
            SchemeKind::Db,
            Some(&out),
            n,
            out.convergence_slots,
            &mut rng,
        )
        .unwrap();
        let last = trace.records.last().unwrap();
        assert_eq!(last.ekf_calls, 0);
        assert_eq!(last.mee_calls - out.mee_calls, n as u64);
        assert!(trace.records.iter().all(|r| r.mee_area.is_some()));
    }

    #[test]
    fn point_target_baseline_is_deterministic_per_seed_and_runs() {
        let link = test_link(8, 8);
        let out = establish(&link, 9);
        let params = SchemeParams::default();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_baseline(
                &out.world_after,
                &link,
                &params,
                SchemeKind::Point,
                Some(&out),
                800,
                out.convergence_slots,
                &mut rng,
            )
            .unwrap()
        };
        let a = run(40);
        let b = run(40);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.rate_bps_hz.to_bits(), rb.rate_bps_hz.to_bits());
            assert_eq!(ra.estimate.theta.to_bits(), rb.estimate.theta.to_bits());
        }
        // The tracked scatterer is not the receiver, so the pointing keeps a
        // standing offset from the true receiver direction.
        let offsets: Vec<f64> = a
            .records
            .iter()
            .map(|r| pointing_error(r.pointing, (r.truth.theta, r.truth.phi)))
            .collect();
        let mean_offset = offsets.iter().sum::<f64>() / offsets.len() as f64;
        assert!(
            mean_offset > 1e-4,
            "point baseline should mispoint on average, got {mean_offset}"
        );
    }

    #[test]
    fn sweeping_baseline_rescans_on_schedule() {
        let link = test_link(8, 8);
        let params = SchemeParams {
            sweep_period: 50,
            ..SchemeParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 260;
        let trace = run_baseline(
            &test_world(),
            &link,
            &params,
            SchemeKind::Sweep,
            None,
            n,
            0,
            &mut rng,
        )
        .unwrap();
        let sweep_slots: Vec<usize> = trace
            .records
            .iter()
            .filter(|r| r.event == SlotEvent::Sweep)
            .map(|r| r.slot)
            .collect();
        assert_eq!(sweep_slots, vec![0, 50, 100, 150, 200, 250]);
        assert!(trace.records.iter().all(|r| (r.nz, r.ny) == (8, 8)));
        // The selected beam still achieves a sensible rate on average.
        let avg: f64 = trace.records.iter().map(|r| r.rate_bps_hz).sum::<f64>() / n as f64;
        assert!(avg > 5.0, "sweep average rate {avg}");
    }

    #[test]
    fn wide_beam_baseline_estimates_without_any_designs() {
        let link = test_link(8, 8);
        let out = establish(&link, 13);
        let params = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 400;
        let trace = run_baseline(
            &out.world_after,
            &link,
            &params,
            SchemeKind::Omni,
            Some(&out),
            n,
            out.convergence_slots,
            &mut rng,
        )
        .unwrap();
        let last = trace.records.last().unwrap();
        assert_eq!(last.mee_calls, out.mee_calls);
        assert_eq!(last.ekf_calls, 0);
        assert!(trace.records.iter().all(|r| (r.nz, r.ny) == (1, 1)));
        // Raw conversions track the truth loosely.
        let mean_err: f64 = trace
            .records
            .iter()
            .map(|r| {
                pointing_error(
                    (r.estimate.theta, r.estimate.phi),
                    (r.truth.theta, r.truth.phi),
                )
            })
            .sum::<f64>()
            / n as f64;
        assert!(mean_err < 0.05, "wide-beam estimate error {mean_err}");
    }

    #[test]
    fn baseline_dispatch_rejects_bad_combinations() {
        let link = test_link(8, 8);
        let params = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        // The adaptive scheme is not a baseline.
        assert!(run_baseline(
            &test_world(),
            &link,
            &params,
            SchemeKind::Aba,
            None,
            10,
            0,
            &mut rng
        )
        .is_err());
        // Handoff-dependent baselines demand one.
        for kind in [SchemeKind::Rb, SchemeKind::Db, SchemeKind::Point, SchemeKind::Omni] {
            assert!(run_baseline(
                &test_world(),
                &link,
                &params,
                kind,
                None,
                10,
                0,
                &mut rng
            )
            .is_err());
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for kind in [
            SchemeKind::Aba,
            SchemeKind::Rb,
            SchemeKind::Db,
            SchemeKind::Point,
            SchemeKind::Sweep,
            SchemeKind::Omni,
        ] {
            let parsed: SchemeKind = kind.as_str().parse().unwrap();
            assert_eq!(parsed, kind);
        }
        assert!("mystery".parse::<SchemeKind>().is_err());
    }

    #[test]
    fn parameter_validation_names_the_offender() {
        let bad = SchemeParams {
            gamma_r2: 0.05,
            ..SchemeParams::default()
        };
        match bad.validate().unwrap_err() {
            Error::InvalidInput { name, .. } => assert_eq!(name, "gamma_r2"),
            other => panic!("unexpected error {other:?}"),
        }
        let mut link = test_link(8, 8);
        link.p_num = 3;
        assert!(link.validate().is_err());
        link = test_link(8, 8);
        link.dims.nz = 4;
        assert!(link.validate().is_err());
    }
}
