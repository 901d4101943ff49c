//! Short-time spectral analysis: framing, power spectra, mel filterbank,
//! log-mel spectrograms and MFCCs.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dataset::{resample, AudioClip, LabeledCycle};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub window: Window,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            frame_len_ms: 25.0,
            hop_ms: 10.0,
            window: Window::Hann,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.frame_len_ms) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < hop ({} ms) <= frame length ({} ms)",
                self.hop_ms, self.frame_len_ms
            )));
        }
        Ok(())
    }

    /// (frame length, hop) in samples at `sr`.
    pub fn in_samples(&self, sr: u32) -> (usize, usize) {
        let l = (self.frame_len_ms * sr as f64 / 1000.0).round() as usize;
        let h = (self.hop_ms * sr as f64 / 1000.0).round() as usize;
        (l.max(1), h.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_mels: 128,
            n_mfcc: 40,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn fmax_for(&self, sr: u32) -> f64 {
        self.fmax.unwrap_or(sr as f64 / 2.0)
    }

    pub fn validate(&self, sr: u32) -> Result<()> {
        let fmax = self.fmax_for(sr);
        if !(self.fmin >= 0.0 && self.fmin < fmax) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= fmin ({}) < fmax ({fmax})",
                self.fmin
            )));
        }
        if fmax > sr as f64 / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "fmax {fmax} exceeds Nyquist {}",
                sr as f64 / 2.0
            )));
        }
        if self.n_mels == 0 || self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= n_mfcc ({}) <= n_mels ({})",
                self.n_mfcc, self.n_mels
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidArgument("log_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    /// frames × (n_fft/2 + 1)
    pub values: Matrix,
    pub sample_rate: u32,
    pub n_fft: usize,
}

/// frames × mel bands, natural log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Matrix,
}

/// frames × cepstral coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix {
    pub values: Matrix,
}

/// Zero-pads or truncates at the end to exactly `round(target_s * sr)` samples.
pub fn pad_or_truncate(clip: &AudioClip, target_s: f64) -> AudioClip {
    let n = (target_s * clip.sample_rate as f64).round() as usize;
    let mut samples = clip.samples.clone();
    samples.resize(n, 0.0);
    AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    }
}

/// Symmetric Hann window, `w[n] = 0.5 (1 - cos(2πn/(L-1)))`.
pub fn hann_window(length: usize) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::InvalidArgument(format!(
            "Hann window needs length >= 2, got {length}"
        )));
    }
    let denom = (length - 1) as f64;
    Ok((0..length)
        .map(|n| {
            // Evaluate on the mirrored index past the midpoint so w[n] == w[L-1-n] bit-for-bit.
            let m = n.min(length - 1 - n) as f64;
            0.5 * (1.0 - (2.0 * PI * m / denom).cos())
        })
        .collect())
}

pub fn frame_signal(clip: &AudioClip, cfg: &FrameConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let (len, hop) = cfg.in_samples(clip.sample_rate);
    let window = match cfg.window {
        Window::Hann => hann_window(len)?,
    };
    frame_with_window(&clip.samples, &window, hop)
}

fn frame_with_window(samples: &[f64], window: &[f64], hop: usize) -> Result<Vec<Vec<f64>>> {
    let len = window.len();
    if samples.len() < len {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples is shorter than one {len}-sample frame",
            samples.len()
        )));
    }
    let n_frames = 1 + (samples.len() - len) / hop;
    Ok((0..n_frames)
        .map(|f| {
            samples[f * hop..f * hop + len]
                .iter()
                .zip(window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

/// Reusable FFT plan for one transform size.
#[derive(Clone)]
pub struct SpectrumPlan {
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectrumPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumPlan").field("n_fft", &self.n_fft).finish()
    }
}

impl SpectrumPlan {
    pub fn new(n_fft: usize) -> Result<Self> {
        if n_fft == 0 || !n_fft.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "n_fft must be a power of two, got {n_fft}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(SpectrumPlan { n_fft, fft })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Full complex spectrum of `frame` zero-padded to `n_fft`.
    pub fn spectrum(&self, frame: &[f64]) -> Result<Vec<Complex<f64>>> {
        if frame.len() > self.n_fft {
            return Err(Error::InvalidArgument(format!(
                "frame of {} samples exceeds n_fft {}",
                frame.len(),
                self.n_fft
            )));
        }
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(self.n_fft, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        Ok(buf)
    }

    /// `|X_k|²` for k = 0..=n_fft/2.
    pub fn power(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let spec = self.spectrum(frame)?;
        Ok(spec[..self.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect())
    }
}

pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    SpectrumPlan::new(n_fft)?.power(frame)
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters with peaks at mel-equally-spaced centres.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Matrix,
    centers_hz: Vec<f64>,
    /// Per filter, the half-open bin range holding its non-zero weights.
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    /// Filter energies of one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.support
            .iter()
            .enumerate()
            .map(|(m, &(lo, hi))| {
                let row = self.weights.row(m);
                (lo..hi).map(|k| row[k] * power[k]).sum()
            })
            .collect()
    }
}

pub fn mel_filterbank(cfg: &MelConfig, n_fft: usize, sr: u32) -> Result<MelFilterbank> {
    cfg.validate(sr)?;
    let n_bins = n_fft / 2 + 1;
    let fmax = cfg.fmax_for(sr);
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(fmax);
    let step = (mel_hi - mel_lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();
    let bin_hz = sr as f64 / n_fft as f64;

    let mut weights = Matrix::zeros(cfg.n_mels, n_bins);
    let mut support = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut lo = n_bins;
        let mut hi = 0;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if w > 0.0 {
                weights.set(m, k, w);
                lo = lo.min(k);
                hi = k + 1;
            }
        }
        if hi == 0 {
            return Err(Error::InvalidArgument(format!(
                "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; \
                 use fewer mel bands or a larger n_fft"
            )));
        }
        support.push((lo, hi));
    }
    Ok(MelFilterbank {
        weights,
        centers_hz: edges[1..=cfg.n_mels].to_vec(),
        support,
    })
}

pub fn log_mel_spectrogram(
    ps: &PowerSpectrogram,
    fb: &MelFilterbank,
    cfg: &MelConfig,
) -> Result<LogMelSpectrogram> {
    if fb.n_bins() != ps.values.cols() {
        return Err(Error::Shape(format!(
            "filterbank has {} bins, spectrogram {}",
            fb.n_bins(),
            ps.values.cols()
        )));
    }
    let mut values = Matrix::zeros(ps.values.rows(), fb.n_mels());
    for t in 0..ps.values.rows() {
        let energies = fb.apply(ps.values.row(t));
        for (dst, e) in values.row_mut(t).iter_mut().zip(energies) {
            *dst = e.max(cfg.log_floor).ln();
        }
    }
    Ok(LogMelSpectrogram { values })
}

/// Orthonormal DCT-II basis, `n_out × n_in`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Matrix {
    let mut g = Matrix::zeros(n_out, n_in);
    let n = n_in as f64;
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for i in 0..n_in {
            g.set(k, i, scale * (PI / n * (i as f64 + 0.5) * k as f64).cos());
        }
    }
    g
}

fn apply_dct(lm: &Matrix, basis: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(lm.rows(), basis.rows());
    for t in 0..lm.rows() {
        let row = lm.row(t);
        for k in 0..basis.rows() {
            let v = basis.row(k).iter().zip(row).map(|(a, b)| a * b).sum();
            out.set(t, k, v);
        }
    }
    out
}

pub fn mfcc(lm: &LogMelSpectrogram, n_mfcc: usize) -> Result<MfccMatrix> {
    let n_mels = lm.values.cols();
    if n_mfcc > n_mels {
        return Err(Error::InvalidArgument(format!(
            "n_mfcc {n_mfcc} exceeds n_mels {n_mels}"
        )));
    }
    Ok(MfccMatrix {
        values: apply_dct(&lm.values, &dct_matrix(n_mfcc, n_mels)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub frame: FrameConfig,
    pub mel: MelConfig,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: 22050,
            duration_s: 6.0,
            frame: FrameConfig::default(),
            mel: MelConfig::default(),
        }
    }
}

/// Precomputed window, FFT plan, filterbank and DCT basis for one
/// [`DspConfig`]. Shared read-only across workers.
#[derive(Debug, Clone)]
pub struct DspPipeline {
    cfg: DspConfig,
    window: Vec<f64>,
    hop: usize,
    plan: SpectrumPlan,
    filterbank: MelFilterbank,
    dct: Matrix,
}

impl DspPipeline {
    pub fn new(cfg: DspConfig) -> Result<Self> {
        if cfg.sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if !(cfg.duration_s > 0.0) {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        cfg.frame.validate()?;
        let (len, hop) = cfg.frame.in_samples(cfg.sample_rate);
        let window = match cfg.frame.window {
            Window::Hann => hann_window(len)?,
        };
        let n_fft = len.next_power_of_two();
        let plan = SpectrumPlan::new(n_fft)?;
        let filterbank = mel_filterbank(&cfg.mel, n_fft, cfg.sample_rate)?;
        let dct = dct_matrix(cfg.mel.n_mfcc, cfg.mel.n_mels);
        Ok(DspPipeline {
            cfg,
            window,
            hop,
            plan,
            filterbank,
            dct,
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.cfg
    }

    pub fn n_fft(&self) -> usize {
        self.plan.n_fft()
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Resampled, padded / truncated clip.
    pub fn prepare(&self, clip: &AudioClip) -> Result<AudioClip> {
        let clip = resample(clip, self.cfg.sample_rate)?;
        Ok(pad_or_truncate(&clip, self.cfg.duration_s))
    }

    pub fn power_spectrogram(&self, clip: &AudioClip) -> Result<PowerSpectrogram> {
        let frames = frame_with_window(&clip.samples, &self.window, self.hop)?;
        let n_bins = self.n_fft() / 2 + 1;
        let mut values = Matrix::zeros(frames.len(), n_bins);
        for (t, frame) in frames.iter().enumerate() {
            values.row_mut(t).copy_from_slice(&self.plan.power(frame)?);
        }
        Ok(PowerSpectrogram {
            values,
            sample_rate: clip.sample_rate,
            n_fft: self.n_fft(),
        })
    }

    pub fn featurize_clip(&self, clip: &AudioClip) -> Result<(LogMelSpectrogram, MfccMatrix)> {
        let clip = self.prepare(clip)?;
        let ps = self.power_spectrogram(&clip)?;
        let lm = log_mel_spectrogram(&ps, &self.filterbank, &self.cfg.mel)?;
        let mf = MfccMatrix {
            values: apply_dct(&lm.values, &self.dct),
        };
        Ok((lm, mf))
    }

    /// resample → pad/truncate → frame → power spectrum → log-mel → MFCC.
    pub fn featurize_cycle(&self, cycle: &LabeledCycle) -> Result<(LogMelSpectrogram, MfccMatrix)> {
        self.featurize_clip(&cycle.clip)
    }
}

pub fn featurize_cycle(
    cycle: &LabeledCycle,
    cfg: &DspConfig,
) -> Result<(LogMelSpectrogram, MfccMatrix)> {
    DspPipeline::new(*cfg)?.featurize_cycle(cycle)
}
