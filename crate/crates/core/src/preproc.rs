//! Preprocessing: raw spectra and labels into 256-dimensional standardized
//! model inputs and encoded targets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{CRate, Dataset, Mode};

/// Inclusive voltage window for the regression task; records outside it are
/// dropped before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageWindow {
    pub lo: f64,
    pub hi: f64,
}

impl Default for VoltageWindow {
    fn default() -> Self {
        VoltageWindow { lo: 3.6, hi: 4.2 }
    }
}

impl VoltageWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) {
            return Err(Error::Domain(format!(
                "voltage window [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    pub fn denormalize(&self, norm: f64) -> f64 {
        self.lo + norm * (self.hi - self.lo)
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

/// Preprocessing configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocConfig {
    /// Expected raw spectrum length.
    pub src_len: usize,
    /// Model input length after resampling.
    pub dst_len: usize,
    pub v_window: VoltageWindow,
    /// Per-pattern min-max standardization (the default). When false, one
    /// global min/max over the whole dataset is used instead.
    pub per_pattern: bool,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            src_len: 1400,
            dst_len: 256,
            v_window: VoltageWindow::default(),
            per_pattern: true,
        }
    }
}

/// One model-ready sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSample {
    /// Standardized 256-dimensional input in [0, 1].
    pub x: Vec<f64>,
    pub voltage_norm: f64,
    pub voltage_raw: f64,
    pub mode_onehot: [f64; Mode::COUNT],
    pub rate_onehot: [f64; 2],
    pub mode: Mode,
    pub rate: CRate,
}

/// A preprocessed dataset ready for batching.
#[derive(Debug, Clone)]
pub struct ProcessedDataset {
    pub samples: Vec<ProcessedSample>,
    pub two_theta: Vec<f64>,
    pub v_window: VoltageWindow,
}

/// Affine rescale of a vector to [0, 1]: min maps to 0, max to 1.
pub fn minmax_standardize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::DegenerateInput("cannot standardize an empty vector".into()));
    }
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(Error::DegenerateInput(format!(
            "constant spectrum (value {min}) carries no peaks"
        )));
    }
    // Divide rather than multiply by the reciprocal so the max maps to 1.0 exactly.
    let span = max - min;
    Ok(v.iter().map(|&x| (x - min) / span).collect())
}

/// Natural cubic spline through the input knots (uniform abscissae), sampled
/// at `dst_len` uniform points spanning the same interval. Endpoints are
/// reproduced exactly.
pub fn spline_resample(v: &[f64], dst_len: usize) -> Result<Vec<f64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Length { expected: 2, got: n, what: "spline_resample input".into() });
    }
    if dst_len < 2 {
        return Err(Error::Length { expected: 2, got: dst_len, what: "spline_resample output".into() });
    }

    // Second derivatives m[i] from the natural-spline tridiagonal system with
    // unit knot spacing: m[0] = m[n-1] = 0,
    // m[i-1]/6 + 2 m[i]/3 + m[i+1]/6 = v[i+1] - 2 v[i] + v[i-1].
    let mut m = vec![0.0; n];
    if n > 2 {
        let inner = n - 2;
        let mut diag = vec![2.0 / 3.0; inner];
        let mut rhs: Vec<f64> = (1..=inner).map(|i| v[i + 1] - 2.0 * v[i] + v[i - 1]).collect();
        // Thomas algorithm, off-diagonals all 1/6.
        for i in 1..inner {
            let w = (1.0 / 6.0) / diag[i - 1];
            diag[i] -= w * (1.0 / 6.0);
            rhs[i] -= w * rhs[i - 1];
        }
        m[inner] = rhs[inner - 1] / diag[inner - 1];
        for i in (1..inner).rev() {
            m[i] = (rhs[i - 1] - (1.0 / 6.0) * m[i + 1]) / diag[i - 1];
        }
    }

    // Evaluate at dst_len uniform points over [0, n-1] in knot coordinates.
    let scale = (n - 1) as f64 / (dst_len - 1) as f64;
    let out = (0..dst_len)
        .map(|j| {
            let u = j as f64 * scale;
            let i = (u.floor() as usize).min(n - 2);
            let t = u - i as f64;
            let s = 1.0 - t;
            // Unit-spacing cubic segment between knots i and i+1.
            s * v[i] + t * v[i + 1]
                + (s * s * s - s) * m[i] / 6.0
                + (t * t * t - t) * m[i + 1] / 6.0
        })
        .collect();
    Ok(out)
}

/// Encoded targets for one record, or `None` when its voltage falls outside
/// the analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLabels {
    pub voltage_norm: f64,
    pub mode_onehot: [f64; Mode::COUNT],
    pub rate_onehot: [f64; 2],
}

/// Window filter plus affine voltage normalization and one-hot encодings.
pub fn encode_labels(
    voltage: f64,
    mode: Mode,
    rate: CRate,
    window: &VoltageWindow,
) -> Result<Option<EncodedLabels>> {
    window.validate()?;
    if !window.contains(voltage) {
        return Ok(None);
    }
    let mut mode_onehot = [0.0; Mode::COUNT];
    mode_onehot[mode.class_index()] = 1.0;
    let mut rate_onehot = [0.0; 2];
    rate_onehot[rate.class_index()] = 1.0;
    Ok(Some(EncodedLabels { voltage_norm: window.normalize(voltage), mode_onehot, rate_onehot }))
}

/// Seeded uniform shuffle, then first half train (floor), remainder
/// validation. Disjoint and exhaustive by construction.
pub fn split_half<T: Clone>(samples: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if samples.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 samples to split, got {}",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = samples.len() / 2;
    let train = order[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, val))
}

/// Run the full preprocessing pipeline over a loaded dataset: resample each
/// spectrum to `dst_len`, standardize, and encode labels, dropping records
/// outside the voltage window.
pub fn prepare(dataset: &Dataset, cfg: &PreprocConfig) -> Result<ProcessedDataset> {
    cfg.v_window.validate()?;
    let grid_256 = spline_resample(&dataset.two_theta, cfg.dst_len)?;

    // Global min/max over the raw spectra, used only when per_pattern is off.
    let global = if cfg.per_pattern {
        None
    } else {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in &dataset.records {
            for &v in &r.intensity {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if hi == lo {
            return Err(Error::DegenerateInput("constant dataset intensities".into()));
        }
        Some((lo, hi))
    };

    let mut samples = Vec::new();
    for r in &dataset.records {
        if r.intensity.len() != cfg.src_len {
            return Err(Error::Length {
                expected: cfg.src_len,
                got: r.intensity.len(),
                what: "raw spectrum".into(),
            });
        }
        let Some(labels) = encode_labels(r.voltage, r.mode, r.rate, &cfg.v_window)? else {
            continue;
        };
        let resampled = spline_resample(&r.intensity, cfg.dst_len)?;
        let x = match global {
            None => minmax_standardize(&resampled)?,
            Some((lo, hi)) => {
                let inv = 1.0 / (hi - lo);
                resampled.iter().map(|&v| (v - lo) * inv).collect()
            }
        };
        samples.push(ProcessedSample {
            x,
            voltage_norm: labels.voltage_norm,
            voltage_raw: r.voltage,
            mode_onehot: labels.mode_onehot,
            rate_onehot: labels.rate_onehot,
            mode: r.mode,
            rate: r.rate,
        });
    }
    Ok(ProcessedDataset { samples, two_theta: grid_256, v_window: cfg.v_window })
}
