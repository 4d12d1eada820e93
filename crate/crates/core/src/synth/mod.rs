//! Physics-based generator of in-situ XRD charge-discharge datasets.
//!
//! Produces diffraction patterns whose qualitative structure tracks a real
//! NMC/graphite pouch cell: the NMC(003) and C(002) peaks shift with state of
//! charge and differ between charge and discharge branches, the Al(111)
//! current-collector peak never moves, and the graphite peak broadens at the
//! fast charge-discharge rate.

pub mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Charge-discharge rate class. The protocol supports exactly the two rates
/// the dataset labels distinguish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CRate {
    /// 0.2 C (slow)
    C02,
    /// 1.0 C (normal)
    C10,
}

impl CRate {
    pub fn value(self) -> f64 {
        match self {
            CRate::C02 => 0.2,
            CRate::C10 => 1.0,
        }
    }

    /// Class index used in CSV files and one-hot encodings: 0 = 0.2 C, 1 = 1.0 C.
    pub fn class_index(self) -> usize {
        match self {
            CRate::C02 => 0,
            CRate::C10 => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(CRate::C02),
            1 => Ok(CRate::C10),
            _ => Err(Error::Domain(format!("rate class index {i} not in {{0, 1}}"))),
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == 0.2 {
            Ok(CRate::C02)
        } else if v == 1.0 {
            Ok(CRate::C10)
        } else {
            Err(Error::Domain(format!("rate {v} not in {{0.2, 1.0}}")))
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CRate::C02 => "0.2C",
            CRate::C10 => "1.0C",
        }
    }
}

/// Sweep direction of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Charge,
    Discharge,
}

/// Four-way label: charge/discharge crossed with first/second half of the
/// branch. "First half" is by protocol time, so on the discharge branch it is
/// the high state-of-charge half.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ChargeFirstHalf,
    ChargeSecondHalf,
    DischargeFirstHalf,
    DischargeSecondHalf,
}

impl Mode {
    pub fn from_state(soc: f64, branch: Branch) -> Mode {
        match branch {
            Branch::Charge => {
                if soc < 0.5 {
                    Mode::ChargeFirstHalf
                } else {
                    Mode::ChargeSecondHalf
                }
            }
            Branch::Discharge => {
                if soc >= 0.5 {
                    Mode::DischargeFirstHalf
                } else {
                    Mode::DischargeSecondHalf
                }
            }
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            Mode::ChargeFirstHalf => 0,
            Mode::ChargeSecondHalf => 1,
            Mode::DischargeFirstHalf => 2,
            Mode::DischargeSecondHalf => 3,
        }
    }

    pub fn from_class_index(i: usize) -> Result<Mode> {
        match i {
            0 => Ok(Mode::ChargeFirstHalf),
            1 => Ok(Mode::ChargeSecondHalf),
            2 => Ok(Mode::DischargeFirstHalf),
            3 => Ok(Mode::DischargeSecondHalf),
            _ => Err(Error::Domain(format!("mode class index {i} not in 0..=3"))),
        }
    }

    pub const COUNT: usize = 4;
}

/// One diffraction peak and how it responds to the cell state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSpec {
    pub phase_label: String,
    /// Base d-spacing, angstrom.
    pub d0: f64,
    /// Unit-height scale.
    pub amplitude: f64,
    /// Base full width at half maximum, degrees 2-theta.
    pub fwhm0: f64,
    /// Pseudo-Voigt Lorentzian fraction in [0, 1].
    pub eta: f64,
    /// d-spacing change per unit state of charge, angstrom.
    pub soc_shift_coeff: f64,
    /// d-spacing offset added on the discharge branch, angstrom.
    pub hysteresis_offset: f64,
    /// Extra FWHM at the 1.0 C rate, degrees.
    pub rate_broadening_coeff: f64,
}

impl PeakSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d0 <= 0.0 {
            return Err(Error::Domain(format!("{}: d0 must be positive", self.phase_label)));
        }
        if self.fwhm0 <= 0.0 {
            return Err(Error::Domain(format!("{}: fwhm0 must be positive", self.phase_label)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Domain(format!("{}: eta must be in [0, 1]", self.phase_label)));
        }
        if self.amplitude <= 0.0 {
            return Err(Error::Domain(format!("{}: amplitude must be positive", self.phase_label)));
        }
        Ok(())
    }

    /// Effective FWHM at a given rate.
    pub fn fwhm_at(&self, rate: CRate) -> f64 {
        match rate {
            CRate::C10 => self.fwhm0 + self.rate_broadening_coeff,
            CRate::C02 => self.fwhm0,
        }
    }
}

/// Cu K-alpha-1 wavelength, angstrom.
pub const CU_KA1: f64 = 1.5406;

/// Default three-peak set: standard crystallographic d-spacings for the
/// NMC(003), graphite (002), and Al(111) reflections, with response
/// coefficients chosen so charge state, branch, and rate are all resolvable
/// on the rendered grid. Every value is configuration, not measurement.
pub fn default_peaks() -> Vec<PeakSpec> {
    vec![
        PeakSpec {
            phase_label: "NMC(003)".into(),
            d0: 4.73,
            amplitude: 1.0,
            fwhm0: 0.22,
            eta: 0.4,
            soc_shift_coeff: 0.08,
            hysteresis_offset: 0.015,
            rate_broadening_coeff: 0.0,
        },
        PeakSpec {
            phase_label: "C(002)".into(),
            d0: 3.354,
            amplitude: 0.55,
            fwhm0: 0.30,
            eta: 0.5,
            soc_shift_coeff: 0.045,
            hysteresis_offset: 0.012,
            rate_broadening_coeff: 0.30,
        },
        PeakSpec {
            phase_label: "Al(111)".into(),
            d0: 2.338,
            amplitude: 0.85,
            fwhm0: 0.18,
            eta: 0.3,
            soc_shift_coeff: 0.0,
            hysteresis_offset: 0.0,
            rate_broadening_coeff: 0.0,
        },
    ]
}

/// Uniform 2-theta measurement grid, degrees, inclusive of both endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl Default for GridSpec {
    /// [15, 40] degrees x 1400 points. The NMC(003) reflection sits near
    /// 18.7 degrees, so the window opens below 20 degrees to include it.
    fn default() -> Self {
        GridSpec { start: 15.0, stop: 40.0, n: 1400 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.start < self.stop) {
            return Err(Error::Domain(format!(
                "grid start {} must be below stop {}",
                self.start, self.stop
            )));
        }
        if self.n < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 points, got {}", self.n)));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.start + i as f64 * step).collect()
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.n - 1) as f64
    }
}

/// Generator-level configuration shared by all samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub wavelength: f64,
    pub grid: GridSpec,
    /// Quadratic background coefficients over the normalized grid coordinate.
    pub background: [f64; 3],
    /// Peak centers may fall this many degrees outside the grid before the
    /// generator treats the peak set as inconsistent with the grid.
    pub guard_band: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            wavelength: CU_KA1,
            grid: GridSpec::default(),
            background: [0.04, 0.02, -0.015],
            guard_band: 1.0,
        }
    }
}

/// Charge-discharge measurement protocol for one rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProtocol {
    pub v_min: f64,
    pub v_max: f64,
    pub rate: CRate,
    pub n_samples: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl CellProtocol {
    pub fn new(rate: CRate, n_samples: usize, seed: u64) -> Self {
        CellProtocol { v_min: 2.6, v_max: 4.2, rate, n_samples, noise_scale: 0.02, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min < self.v_max) {
            return Err(Error::Domain(format!(
                "v_min {} must be below v_max {}",
                self.v_min, self.v_max
            )));
        }
        if self.n_samples < 4 {
            return Err(Error::Domain(format!(
                "need at least 4 samples (one per mode class), got {}",
                self.n_samples
            )));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Domain(format!("noise_scale {} must be >= 0", self.noise_scale)));
        }
        Ok(())
    }
}

/// One labeled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub intensity: Vec<f64>,
    pub voltage: f64,
    pub mode: Mode,
    pub rate: CRate,
    pub soc: f64,
    /// Protocol time, hours.
    pub t: f64,
}

/// A generated dataset: the shared 2-theta grid plus its records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub two_theta: Vec<f64>,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn mode_counts(&self) -> [usize; Mode::COUNT] {
        let mut counts = [0usize; Mode::COUNT];
        for r in &self.records {
            counts[r.mode.class_index()] += 1;
        }
        counts
    }

    pub fn rates_present(&self) -> [bool; 2] {
        let mut present = [false; 2];
        for r in &self.records {
            present[r.rate.class_index()] = true;
        }
        present
    }

    /// Append another dataset sharing the same grid.
    pub fn merge(&mut self, other: Dataset) -> Result<()> {
        if self.two_theta != other.two_theta {
            return Err(Error::Domain("cannot merge datasets with different grids".into()));
        }
        self.records.extend(other.records);
        Ok(())
    }
}

/// A rendered diffraction pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub two_theta: Vec<f64>,
    pub intensity: Vec<f64>,
}

/// Diffraction angle 2-theta (degrees) for lattice spacing `d` at wavelength
/// `lambda`, both in angstrom: `2 asin(lambda / 2d)`.
pub fn bragg_angle(d: f64, lambda: f64) -> Result<f64> {
    if !(d > lambda / 2.0) {
        return Err(Error::Domain(format!(
            "no diffraction solution: d = {d} must exceed lambda/2 = {}",
            lambda / 2.0
        )));
    }
    Ok(2.0 * (lambda / (2.0 * d)).asin().to_degrees())
}

/// Unit-height pseudo-Voigt profile: `eta * L + (1 - eta) * G`, Lorentzian and
/// Gaussian sharing the same FWHM.
pub fn pseudo_voigt(x: f64, center: f64, fwhm: f64, eta: f64) -> Result<f64> {
    if fwhm <= 0.0 {
        return Err(Error::Domain(format!("fwhm must be positive, got {fwhm}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta must be in [0, 1], got {eta}")));
    }
    Ok(pseudo_voigt_unchecked(x, center, fwhm, eta))
}

const FOUR_LN_2: f64 = 2.772588722239781; // 4 ln 2

fn pseudo_voigt_unchecked(x: f64, center: f64, fwhm: f64, eta: f64) -> f64 {
    let u = (x - center) / fwhm;
    let lorentz = 1.0 / (1.0 + 4.0 * u * u);
    let gauss = (-FOUR_LN_2 * u * u).exp();
    eta * lorentz + (1.0 - eta) * gauss
}

/// d-spacing of a peak at a given cell state: linear shift with state of
/// charge plus the branch hysteresis offset on discharge.
pub fn lattice_trajectory(peak: &PeakSpec, soc: f64, branch: Branch) -> Result<f64> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Domain(format!("soc {soc} outside [0, 1]")));
    }
    let mut d = peak.d0 + peak.soc_shift_coeff * soc;
    if matches!(branch, Branch::Discharge) {
        d += peak.hysteresis_offset;
    }
    Ok(d)
}

// Voltage curve shape constants: a fast exponential rise out of the fully
// discharged state followed by a gentler linear section, plus a
// branch-dependent overpotential proportional to the rate.
const OCV_TAU: f64 = 0.07;
const OCV_LINEAR: f64 = 0.5;
const OVERPOTENTIAL_PER_C: f64 = 0.10;

fn ocv_shape(soc: f64) -> f64 {
    let z = (1.0 - (-1.0 / OCV_TAU).exp()) + OCV_LINEAR;
    ((1.0 - (-soc / OCV_TAU).exp()) + OCV_LINEAR * soc) / z
}

/// Cell voltage at a given state: strictly increasing in state of charge on
/// each branch, charge branch above discharge branch by an overpotential that
/// scales with rate, bounded by `[v_min, v_max]` with exact anchors
/// V_discharge(0) = v_min and V_charge(1) = v_max.
pub fn voltage_curve(soc: f64, branch: Branch, rate: CRate, v_min: f64, v_max: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Domain(format!("soc {soc} outside [0, 1]")));
    }
    let span = v_max - v_min;
    let eta = OVERPOTENTIAL_PER_C * rate.value();
    if span <= eta {
        return Err(Error::Domain(format!(
            "voltage window {span} V too narrow for overpotential {eta} V"
        )));
    }
    let g = ocv_shape(soc);
    let v = match branch {
        Branch::Charge => v_min + (span - eta) * g + eta,
        Branch::Discharge => v_min + (span - eta) * g,
    };
    Ok(v)
}

/// Instantaneous cell state a pattern is rendered at.
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub soc: f64,
    pub branch: Branch,
    pub rate: CRate,
}

/// Render one diffraction pattern: the sum over peaks of amplitude-scaled
/// pseudo-Voigt profiles centered at their Bragg angles, over a smooth
/// quadratic background, with multiplicative Gaussian noise clamped to
/// nonnegative counts. Deterministic for a fixed rng state.
pub fn render_pattern(
    peaks: &[PeakSpec],
    state: CellState,
    cfg: &SynthConfig,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Spectrum> {
    let two_theta = cfg.grid.values();
    let intensity = render_intensities(peaks, state, cfg, &two_theta, noise_scale, rng)?;
    Ok(Spectrum { two_theta, intensity })
}

fn render_intensities(
    peaks: &[PeakSpec],
    state: CellState,
    cfg: &SynthConfig,
    grid: &[f64],
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if peaks.is_empty() {
        return Err(Error::Domain("render_pattern needs at least one peak".into()));
    }
    cfg.grid.validate()?;
    let span = cfg.grid.stop - cfg.grid.start;

    let mut out: Vec<f64> = grid
        .iter()
        .map(|&tt| {
            let u = (tt - cfg.grid.start) / span;
            cfg.background[0] + cfg.background[1] * u + cfg.background[2] * u * u
        })
        .collect();

    for peak in peaks {
        peak.validate()?;
        let d = lattice_trajectory(peak, state.soc, state.branch)?;
        let center = bragg_angle(d, cfg.wavelength)?;
        if center < cfg.grid.start - cfg.guard_band || center > cfg.grid.stop + cfg.guard_band {
            return Err(Error::Domain(format!(
                "peak {} center {center:.3} deg falls outside grid [{}, {}] + guard band {}",
                peak.phase_label, cfg.grid.start, cfg.grid.stop, cfg.guard_band
            )));
        }
        let fwhm = peak.fwhm_at(state.rate);
        for (o, &tt) in out.iter_mut().zip(grid.iter()) {
            *o += peak.amplitude * pseudo_voigt_unchecked(tt, center, fwhm, peak.eta);
        }
    }

    if noise_scale != 0.0 {
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *o = (*o * (1.0 + noise_scale * z)).max(0.0);
        }
    }
    Ok(out)
}

/// Generate a full charge-then-discharge sweep at the protocol rate:
/// state of charge runs 0 -> 1 and back to 0 in uniform steps, half the
/// samples per branch, with voltage, mode, rate, and protocol time labels.
pub fn generate_dataset(
    protocol: &CellProtocol,
    peaks: &[PeakSpec],
    cfg: &SynthConfig,
) -> Result<Dataset> {
    protocol.validate()?;
    let two_theta = cfg.grid.values();
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let n_charge = protocol.n_samples - protocol.n_samples / 2;
    let n_discharge = protocol.n_samples - n_charge;
    let hours_per_branch = 1.0 / protocol.rate.value();

    let mut records = Vec::with_capacity(protocol.n_samples);
    let sweep = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };

    for i in 0..n_charge {
        let soc = sweep(i, n_charge);
        records.push(make_record(
            peaks,
            cfg,
            protocol,
            soc,
            Branch::Charge,
            soc * hours_per_branch,
            &two_theta,
            &mut rng,
        )?);
    }
    for j in 0..n_discharge {
        let soc = 1.0 - sweep(j, n_discharge);
        records.push(make_record(
            peaks,
            cfg,
            protocol,
            soc,
            Branch::Discharge,
            (2.0 - soc) * hours_per_branch,
            &two_theta,
            &mut rng,
        )?);
    }
    Ok(Dataset { two_theta, records })
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    peaks: &[PeakSpec],
    cfg: &SynthConfig,
    protocol: &CellProtocol,
    soc: f64,
    branch: Branch,
    t: f64,
    grid: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<SampleRecord> {
    let state = CellState { soc, branch, rate: protocol.rate };
    let intensity =
        render_intensities(peaks, state, cfg, grid, protocol.noise_scale, rng)?;
    Ok(SampleRecord {
        intensity,
        voltage: voltage_curve(soc, branch, protocol.rate, protocol.v_min, protocol.v_max)?,
        mode: Mode::from_state(soc, branch),
        rate: protocol.rate,
        soc,
        t,
    })
}


#[cfg(test)]
mod tests;
