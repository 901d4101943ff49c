//! Deterministic synthetic breathing cycles for exercising the pipeline
//! without a recorded corpus.
//!
//! The signal models are caricatures: low-level pink noise for the breath
//! itself, a steady tone for a wheeze and exponentially damped clicks at
//! Poisson times for crackles.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::dataset::{
    write_annotation_file, write_wav, AudioClip, ClassLabel, CycleAnnotation, LabeledCycle, RecordingMeta,
};
use crate::error::{Error, Result};

/// Synthetic patients are numbered from here.
pub const FIRST_PATIENT_ID: u32 = 1000;
const NOISE_RMS: f64 = 0.02;
const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub sample_rate: u32,
    pub cycle_s: f64,
    pub per_class: usize,
    pub wheeze_band: (f64, f64),
    /// Mean crackle events per second.
    pub crackle_rate: f64,
    /// Adventitious-component power over breath-noise power, in dB.
    pub snr_db: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            sample_rate: 8000,
            cycle_s: 3.0,
            per_class: 100,
            wheeze_band: (200.0, 800.0),
            crackle_rate: 8.0,
            snr_db: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        let (lo, hi) = self.wheeze_band;
        if self.per_class == 0 {
            return Err(Error::InvalidArgument("per_class must be at least 1".into()));
        }
        if self.sample_rate == 0 || !(self.cycle_s > 0.0) {
            return Err(Error::InvalidArgument("sample rate and cycle length must be positive".into()));
        }
        if !(lo > 0.0 && lo < hi && hi < nyquist) {
            return Err(Error::InvalidArgument(format!(
                "wheeze band {lo}-{hi} Hz must lie inside (0, {nyquist})"
            )));
        }
        if !(self.crackle_rate > 0.0) || !self.snr_db.is_finite() {
            return Err(Error::InvalidArgument("crackle rate must be positive and SNR finite".into()));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.cycle_s * self.sample_rate as f64).round() as usize
    }
}

/// 1/f-shaped noise: white Gaussian noise through Paul Kellet's economy
/// pinking filter, scaled to `rms`.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize, rms: f64) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect();
    scale_to_rms(&mut out, rms);
    out
}

fn rms_of(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn scale_to_rms(x: &mut [f64], rms: f64) {
    let cur = rms_of(x);
    if cur > 0.0 {
        let g = rms / cur;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

fn wheeze(rng: &mut ChaCha8Rng, cfg: &SynthConfig, n: usize) -> Vec<f64> {
    let f = rng.gen_range(cfg.wheeze_band.0..cfg.wheeze_band.1);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let sr = cfg.sample_rate as f64;
    (0..n).map(|i| (2.0 * PI * f * i as f64 / sr + phase).sin()).collect()
}

fn crackles(rng: &mut ChaCha8Rng, cfg: &SynthConfig, n: usize) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let gap = Exp::new(cfg.crackle_rate).expect("positive rate");
    let mut out = vec![0.0; n];
    let mut t = gap.sample(rng);
    let mut events = 0;
    // At least one event so every crackle cycle carries the component.
    while t < cfg.cycle_s || events == 0 {
        let start = ((t % cfg.cycle_s) * sr) as usize;
        let tau = rng.gen_range(0.001..0.003) * sr;
        let f = rng.gen_range(0.15..0.45) * sr / 2.0;
        let amp = if rng.gen::<bool>() { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.0);
        for (j, v) in out.iter_mut().skip(start).take((6.0 * tau) as usize).enumerate() {
            let jf = j as f64;
            *v += amp * (-jf / tau).exp() * (2.0 * PI * f * jf / sr).cos();
        }
        events += 1;
        t += gap.sample(rng);
    }
    out
}

fn synth_cycle(rng: &mut ChaCha8Rng, cfg: &SynthConfig, label: ClassLabel) -> Vec<f64> {
    let n = cfg.n_samples();
    let mut x = pink_noise(rng, n, NOISE_RMS);
    let component_rms = NOISE_RMS * 10f64.powf(cfg.snr_db / 20.0);
    let (has_crackles, has_wheeze) = label.flags();
    if has_wheeze {
        let mut w = wheeze(rng, cfg, n);
        scale_to_rms(&mut w, component_rms);
        x.iter_mut().zip(&w).for_each(|(a, b)| *a += b);
    }
    if has_crackles {
        let mut c = crackles(rng, cfg, n);
        scale_to_rms(&mut c, component_rms);
        x.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// `per_class` cycles of each label. Patient `FIRST_PATIENT_ID + j` owns the
/// j-th cycle of every class, in internal class order.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<LabeledCycle>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(4 * cfg.per_class);
    for j in 0..cfg.per_class {
        for (slot, &label) in ClassLabel::ALL.iter().enumerate() {
            let samples = synth_cycle(&mut rng, cfg, label);
            let (crackles, wheezes) = label.flags();
            out.push(LabeledCycle {
                patient_id: FIRST_PATIENT_ID + j as u32,
                clip: AudioClip {
                    samples,
                    sample_rate: cfg.sample_rate,
                },
                label,
                source_annotation: CycleAnnotation {
                    start_s: slot as f64 * cfg.cycle_s,
                    end_s: (slot + 1) as f64 * cfg.cycle_s,
                    crackles,
                    wheezes,
                },
            });
        }
    }
    Ok(out)
}

pub fn recording_meta(patient_id: u32) -> RecordingMeta {
    RecordingMeta {
        patient_id,
        recording_index: "1s1".into(),
        chest_location: "Tc".into(),
        acquisition_mode: "sc".into(),
        equipment: "Synth".into(),
        native_sample_rate: None,
    }
}

/// Writes one recording per synthetic patient (its four cycles back to back)
/// as `<stem>.wav` + `<stem>.txt`. Returns the WAV paths.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Vec<PathBuf>> {
    let cycles = generate_corpus(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for group in cycles.chunks(ClassLabel::ALL.len()) {
        let meta = recording_meta(group[0].patient_id);
        let samples: Vec<f64> = group.iter().flat_map(|c| c.clip.samples.iter().copied()).collect();
        let anns: Vec<CycleAnnotation> = group.iter().map(|c| c.source_annotation).collect();
        let stem = meta.stem();
        let wav = dir.join(format!("{stem}.wav"));
        write_wav(&wav, &AudioClip { samples, sample_rate: cfg.sample_rate })?;
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, write_annotation_file(&anns)).map_err(|e| Error::io(&txt, e))?;
        written.push(wav);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{dataset_summary, load_recording, scan_directory};
    use crate::dsp::{DspConfig, DspPipeline};

    fn small() -> SynthConfig {
        SynthConfig { per_class: 6, ..SynthConfig::default() }
    }

    #[test]
    fn balanced_and_grouped() {
        let corpus = generate_corpus(&small()).unwrap();
        assert_eq!(corpus.len(), 24);
        let s = dataset_summary(&corpus);
        assert_eq!((s.normal, s.crackles, s.wheezes, s.both), (6, 6, 6, 6));
        for (j, group) in corpus.chunks(4).enumerate() {
            assert!(group.iter().all(|c| c.patient_id == FIRST_PATIENT_ID + j as u32));
            let labels: Vec<_> = group.iter().map(|c| c.label).collect();
            assert_eq!(labels, ClassLabel::ALL.to_vec());
        }
        for c in &corpus {
            assert_eq!(c.clip.len(), 24000);
            assert!(c.clip.samples.iter().all(|v| v.abs() <= 1.0));
            assert_eq!(c.source_annotation.label(), c.label);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_corpus(&small()).unwrap(), generate_corpus(&small()).unwrap());
        let other = SynthConfig { seed: 7, ..small() };
        assert_ne!(generate_corpus(&small()).unwrap(), generate_corpus(&other).unwrap());
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_corpus(&SynthConfig { per_class: 0, ..small() }).is_err());
        assert!(generate_corpus(&SynthConfig { wheeze_band: (200.0, 5000.0), ..small() }).is_err());
    }

    #[test]
    fn wheeze_band_energy_exceeds_normal() {
        let corpus = generate_corpus(&SynthConfig { per_class: 10, ..SynthConfig::default() }).unwrap();
        let pipe = DspPipeline::new(DspConfig { duration_s: 3.0, ..DspConfig::default() }).unwrap();
        let centers = pipe.filterbank().centers_hz().to_vec();
        let band: Vec<usize> = (0..centers.len()).filter(|&m| (200.0..=800.0).contains(&centers[m])).collect();
        assert!(!band.is_empty());
        let mean_band = |label: ClassLabel| {
            let vals: Vec<f64> = corpus
                .iter()
                .filter(|c| c.label == label)
                .map(|c| {
                    let (lm, _) = pipe.featurize_cycle(c).unwrap();
                    let mut s = 0.0;
                    for t in 0..lm.values.rows() {
                        for &m in &band {
                            s += lm.values.get(t, m);
                        }
                    }
                    s / (lm.values.rows() * band.len()) as f64
                })
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(mean_band(ClassLabel::Wheezes) > mean_band(ClassLabel::Normal));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let wavs = write_corpus(dir.path(), &cfg).unwrap();
        assert_eq!(wavs.len(), 6);
        let recs = scan_directory(dir.path()).unwrap();
        let mut all = Vec::new();
        for r in &recs {
            let (meta, cycles) = load_recording(r).unwrap();
            assert_eq!(meta.native_sample_rate, Some(8000));
            assert!(cycles.iter().all(|c| c.clip.len() == 24000));
            all.extend(cycles);
        }
        let s = dataset_summary(&all);
        assert_eq!((s.normal, s.crackles, s.wheezes, s.both), (6, 6, 6, 6));
    }
}
