//! Recording ingestion: WAV decoding, annotation parsing, cycle extraction.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annotations may run this far past the end of the audio; they are clamped.
pub const END_TOLERANCE_S: f64 = 0.050;

/// Four-way cycle label. Discriminants are the internal class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Normal = 0,
    Crackles = 1,
    Wheezes = 2,
    Both = 3,
}

impl ClassLabel {
    /// Internal order.
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Normal,
        ClassLabel::Crackles,
        ClassLabel::Wheezes,
        ClassLabel::Both,
    ];

    /// Row/column order used in confusion matrices and reports.
    pub const REPORT_ORDER: [ClassLabel; 4] = [
        ClassLabel::Normal,
        ClassLabel::Wheezes,
        ClassLabel::Crackles,
        ClassLabel::Both,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn report_index(self) -> usize {
        match self {
            ClassLabel::Normal => 0,
            ClassLabel::Wheezes => 1,
            ClassLabel::Crackles => 2,
            ClassLabel::Both => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Normal => "Normal",
            ClassLabel::Crackles => "Crackles",
            ClassLabel::Wheezes => "Wheezes",
            ClassLabel::Both => "Both",
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            ClassLabel::Normal => (false, false),
            ClassLabel::Crackles => (true, false),
            ClassLabel::Wheezes => (false, true),
            ClassLabel::Both => (true, true),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn label_from_flags(crackles: bool, wheezes: bool) -> ClassLabel {
    match (crackles, wheezes) {
        (false, false) => ClassLabel::Normal,
        (true, false) => ClassLabel::Crackles,
        (false, true) => ClassLabel::Wheezes,
        (true, true) => ClassLabel::Both,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleAnnotation {
    pub start_s: f64,
    pub end_s: f64,
    pub crackles: bool,
    pub wheezes: bool,
}

impl CycleAnnotation {
    pub fn label(&self) -> ClassLabel {
        label_from_flags(self.crackles, self.wheezes)
    }
}

impl fmt::Display for CycleAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.start_s, self.end_s, self.crackles as u8, self.wheezes as u8
        )
    }
}

fn parse_flag(tok: &str, line: usize, what: &str) -> Result<bool> {
    match tok {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Parse {
            line,
            msg: format!("{what} flag must be 0 or 1, got `{tok}`"),
        }),
    }
}

fn parse_time(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} `{tok}` is not a number"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Parse {
            line,
            msg: format!("{what} must be a finite non-negative time, got `{tok}`"),
        });
    }
    Ok(v)
}

/// Parses a cycle annotation listing: one cycle per line, four
/// whitespace-separated fields `start end crackles wheezes`. Blank lines are
/// skipped; line numbers in errors are 1-based.
pub fn parse_annotation_file(text: &str) -> Result<Vec<CycleAnnotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let start_s = parse_time(fields[0], line, "start")?;
        let end_s = parse_time(fields[1], line, "end")?;
        if end_s <= start_s {
            return Err(Error::Parse {
                line,
                msg: format!("end {end_s} is not after start {start_s}"),
            });
        }
        out.push(CycleAnnotation {
            start_s,
            end_s,
            crackles: parse_flag(fields[2], line, "crackles")?,
            wheezes: parse_flag(fields[3], line, "wheezes")?,
        });
    }
    Ok(out)
}

pub fn write_annotation_file(anns: &[CycleAnnotation]) -> String {
    let mut s = String::new();
    for a in anns {
        s.push_str(&a.to_string());
        s.push('\n');
    }
    s
}

/// Identity of one recording, decoded from `<patient>_<index>_<location>_<mode>_<equipment>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingMeta {
    pub patient_id: u32,
    pub recording_index: String,
    pub chest_location: String,
    pub acquisition_mode: String,
    pub equipment: String,
    /// Filled in once the audio has been decoded.
    pub native_sample_rate: Option<u32>,
}

impl RecordingMeta {
    pub fn stem(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}",
            self.patient_id,
            self.recording_index,
            self.chest_location,
            self.acquisition_mode,
            self.equipment
        )
    }
}

impl FromStr for RecordingMeta {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        parse_recording_filename(name)
    }
}

pub fn parse_recording_filename(name: &str) -> Result<RecordingMeta> {
    let err = |msg: String| Error::Filename {
        name: name.to_string(),
        msg,
    };
    let parts: Vec<&str> = name.split('_').collect();
    if parts.len() != 5 {
        return Err(err(format!("expected 5 `_`-separated segments, found {}", parts.len())));
    }
    if let Some(i) = parts.iter().position(|p| p.is_empty()) {
        return Err(err(format!("segment {} is empty", i + 1)));
    }
    let patient_id = parts[0]
        .parse::<u32>()
        .map_err(|_| err(format!("patient id `{}` is not a non-negative integer", parts[0])))?;
    Ok(RecordingMeta {
        patient_id,
        recording_index: parts[1].to_string(),
        chest_location: parts[2].to_string(),
        acquisition_mode: parts[3].to_string(),
        equipment: parts[4].to_string(),
        native_sample_rate: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCycle {
    pub patient_id: u32,
    pub clip: AudioClip,
    pub label: ClassLabel,
    pub source_annotation: CycleAnnotation,
}

/// Linear-interpolation resampler. The input is treated as zero outside its
/// support, so resampling commutes with trailing zero-padding.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if clip.is_empty() {
        return Err(Error::InvalidArgument("cannot resample an empty clip".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = clip.sample_rate as f64;
    let dst = target_rate as f64;
    let n = clip.samples.len();
    let out_len = ((n as f64) * dst / src).round().max(1.0) as usize;
    let at = |i: usize| clip.samples.get(i).copied().unwrap_or(0.0);
    let samples = (0..out_len)
        .map(|i| {
            let t = i as f64 * src / dst;
            let i0 = t.floor() as usize;
            let frac = t - i0 as f64;
            let a = at(i0);
            if frac == 0.0 {
                a
            } else {
                a + (at(i0 + 1) - a) * frac
            }
        })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: target_rate,
    })
}

/// Cuts one labeled cycle per annotation out of a recording.
pub fn extract_cycles(
    clip: &AudioClip,
    meta: &RecordingMeta,
    anns: &[CycleAnnotation],
) -> Result<Vec<LabeledCycle>> {
    let sr = clip.sample_rate as f64;
    let duration = clip.duration_s();
    anns.iter()
        .enumerate()
        .map(|(idx, a)| {
            if a.start_s < 0.0 || a.end_s > duration + END_TOLERANCE_S {
                return Err(Error::Range {
                    cycle: idx,
                    msg: format!(
                        "[{}, {}] s lies outside the {:.3} s recording",
                        a.start_s, a.end_s, duration
                    ),
                });
            }
            let lo = ((a.start_s * sr).round() as usize).min(clip.len());
            let hi = ((a.end_s.min(duration) * sr).round() as usize).min(clip.len());
            if hi <= lo {
                return Err(Error::Range {
                    cycle: idx,
                    msg: "cycle contains no samples".into(),
                });
            }
            Ok(LabeledCycle {
                patient_id: meta.patient_id,
                clip: AudioClip {
                    samples: clip.samples[lo..hi].to_vec(),
                    sample_rate: clip.sample_rate,
                },
                label: a.label(),
                source_annotation: *a,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub crackles: usize,
    pub wheezes: usize,
    pub both: usize,
    pub total: usize,
}

impl ClassCounts {
    pub fn get(&self, label: ClassLabel) -> usize {
        match label {
            ClassLabel::Normal => self.normal,
            ClassLabel::Crackles => self.crackles,
            ClassLabel::Wheezes => self.wheezes,
            ClassLabel::Both => self.both,
        }
    }

    pub fn add(&mut self, label: ClassLabel) {
        match label {
            ClassLabel::Normal => self.normal += 1,
            ClassLabel::Crackles => self.crackles += 1,
            ClassLabel::Wheezes => self.wheezes += 1,
            ClassLabel::Both => self.both += 1,
        }
        self.total += 1;
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>8}", "Class", "Cycles")?;
        for label in [
            ClassLabel::Crackles,
            ClassLabel::Wheezes,
            ClassLabel::Both,
            ClassLabel::Normal,
        ] {
            writeln!(f, "{:<10}{:>8}", label.name(), self.get(label))?;
        }
        write!(f, "{:<10}{:>8}", "Total", self.total)
    }
}

pub fn dataset_summary<'a>(labels: impl IntoIterator<Item = &'a LabeledCycle>) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for c in labels {
        counts.add(c.label);
    }
    counts
}

/// Decodes a mono view of a WAV file. PCM integer and IEEE float formats are
/// accepted; multi-channel files contribute channel 0 only.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let samples: Vec<f64> = interleaved.iter().step_by(channels).copied().collect();
    AudioClip::new(samples, spec.sample_rate).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// A WAV file paired with its annotation listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingFiles {
    pub stem: String,
    pub wav: PathBuf,
    pub annotation: PathBuf,
}

/// Lists `<stem>.wav` / `<stem>.txt` pairs in `dir`, sorted by stem. Every
/// problem (unpaired file, unparsable name) is collected and reported together.
pub fn scan_directory(dir: &Path) -> Result<Vec<RecordingFiles>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut wavs = Vec::new();
    let mut txts = std::collections::BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        match ext.as_deref() {
            Some("wav") => wavs.push((stem, path)),
            Some("txt") => {
                txts.insert(stem);
            }
            _ => {}
        }
    }
    wavs.sort();
    let mut problems = Vec::new();
    let mut out = Vec::new();
    for (stem, wav) in wavs {
        if let Err(e) = parse_recording_filename(&stem) {
            problems.push(e.to_string());
            continue;
        }
        if !txts.remove(&stem) {
            problems.push(format!("{}: no annotation file {stem}.txt", wav.display()));
            continue;
        }
        out.push(RecordingFiles {
            annotation: dir.join(format!("{stem}.txt")),
            stem,
            wav,
        });
    }
    for stem in txts {
        // Annotation files without audio only matter if they look like recordings.
        if parse_recording_filename(&stem).is_ok() {
            problems.push(format!("{}: no audio file {stem}.wav", dir.join(format!("{stem}.txt")).display()));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Data(problems.join("\n")));
    }
    Ok(out)
}

/// Decodes one recording and cuts it into labeled cycles.
pub fn load_recording(files: &RecordingFiles) -> Result<(RecordingMeta, Vec<LabeledCycle>)> {
    let mut meta = parse_recording_filename(&files.stem)?;
    let clip = read_wav(&files.wav)?;
    meta.native_sample_rate = Some(clip.sample_rate);
    let text = fs::read_to_string(&files.annotation).map_err(|e| Error::io(&files.annotation, e))?;
    let anns = parse_annotation_file(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", files.annotation.display())))?;
    let cycles = extract_cycles(&clip, &meta, &anns)
        .map_err(|e| Error::Data(format!("{}: {e}", files.stem)))?;
    Ok((meta, cycles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE_LISTING: &str = "0.804\t3.256\t0\t0
3.256\t5.566\t0\t0
5.566\t7.851\t0\t1
7.851\t10.054\t0\t1
10.054\t12.066\t1\t0
12.066\t14.47\t1\t0
14.47\t16.696\t1\t1
16.696\t18.887\t1\t1
18.887\t19.792\t1\t1
";

    fn meta() -> RecordingMeta {
        parse_recording_filename("101_1b1_Al_sc_Meditron").unwrap()
    }

    #[test]
    fn parses_single_lines() {
        let a = parse_annotation_file("0.804 3.256 0 0").unwrap();
        assert_eq!(
            a,
            vec![CycleAnnotation { start_s: 0.804, end_s: 3.256, crackles: false, wheezes: false }]
        );
        let a = parse_annotation_file("5.566 7.851 0 1").unwrap();
        assert_eq!(
            a,
            vec![CycleAnnotation { start_s: 5.566, end_s: 7.851, crackles: false, wheezes: true }]
        );
        assert!(parse_annotation_file("").unwrap().is_empty());
        assert!(parse_annotation_file("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let cases = [
            ("0.1 0.2 0 0\n0.3 0.4 0\n", 2),
            ("0.1 0.2 0 0\n\n0.3 x 0 0\n", 3),
            ("0.1 0.2 2 0\n", 1),
            ("0.5 0.2 0 0\n", 1),
            ("0.5 0.5 0 1\n", 1),
            ("-1 0.5 0 1\n", 1),
        ];
        for (text, want) in cases {
            match parse_annotation_file(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn flags_to_labels() {
        assert_eq!(label_from_flags(false, false), ClassLabel::Normal);
        assert_eq!(label_from_flags(true, true), ClassLabel::Both);
        assert_eq!(label_from_flags(false, true), ClassLabel::Wheezes);
        assert_eq!(label_from_flags(true, false), ClassLabel::Crackles);
        for l in ClassLabel::ALL {
            let (c, w) = l.flags();
            assert_eq!(label_from_flags(c, w), l);
        }
    }

    #[test]
    fn recording_names() {
        let m = meta();
        assert_eq!(m.patient_id, 101);
        assert_eq!(m.recording_index, "1b1");
        assert_eq!(m.chest_location, "Al");
        assert_eq!(m.acquisition_mode, "sc");
        assert_eq!(m.equipment, "Meditron");
        assert_eq!(m.stem(), "101_1b1_Al_sc_Meditron");
        assert_eq!(parse_recording_filename("226_1b1_Pl_sc_LittC2SE").unwrap().patient_id, 226);
        assert!(parse_recording_filename("abc_x").is_err());
        assert!(parse_recording_filename("abc_1b1_Al_sc_Meditron").is_err());
        assert!(parse_recording_filename("101__Al_sc_Meditron").is_err());
    }

    #[test]
    fn resample_identity_and_constant() {
        let clip = AudioClip::new((0..100).map(|i| (i as f64 * 0.1).sin()).collect(), 22050).unwrap();
        assert_eq!(resample(&clip, 22050).unwrap(), clip);

        let c = AudioClip::new(vec![0.5; 8000], 8000).unwrap();
        let r = resample(&c, 4000).unwrap();
        assert_eq!(r.sample_rate, 4000);
        assert_eq!(r.len(), 4000);
        assert!(r.samples.iter().all(|&v| v == 0.5));

        assert!(resample(&AudioClip { samples: vec![], sample_rate: 8000 }, 4000).is_err());
        assert!(resample(&c, 0).is_err());
    }

    #[test]
    fn resample_sine_matches_analytic() {
        let tone = |sr: u32, n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * 100.0 * i as f64 / sr as f64).sin())
                .collect()
        };
        let clip = AudioClip::new(tone(8000, 8000), 8000).unwrap();
        let up = resample(&clip, 16000).unwrap();
        assert!((up.duration_s() - clip.duration_s()).abs() <= 1.0 / 8000.0);
        let reference = tone(16000, up.len());
        let dot: f64 = up.samples.iter().zip(&reference).map(|(a, b)| a * b).sum();
        let na: f64 = up.samples.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = reference.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 0.999, "corr {}", dot / (na * nb));
    }

    #[test]
    fn sample_listing_cycles() {
        let anns = parse_annotation_file(SAMPLE_LISTING).unwrap();
        let sr = 4000;
        let clip = AudioClip::new(vec![0.1; 20 * sr as usize], sr).unwrap();
        let cycles = extract_cycles(&clip, &meta(), &anns).unwrap();
        use ClassLabel::*;
        let labels: Vec<_> = cycles.iter().map(|c| c.label).collect();
        assert_eq!(labels, vec![Normal, Normal, Wheezes, Wheezes, Crackles, Crackles, Both, Both, Both]);
        assert!(cycles.iter().all(|c| c.patient_id == 101));
        assert_eq!(cycles[0].clip.len(), (3.256f64 * 4000.0).round() as usize - (0.804f64 * 4000.0).round() as usize);
        assert!(extract_cycles(&clip, &meta(), &[]).unwrap().is_empty());
    }

    #[test]
    fn extract_cycles_range_checks() {
        let clip = AudioClip::new(vec![0.0; 5 * 1000], 1000).unwrap();
        let anns = [
            CycleAnnotation { start_s: 0.0, end_s: 1.0, crackles: false, wheezes: false },
            CycleAnnotation { start_s: 6.0, end_s: 7.0, crackles: false, wheezes: false },
        ];
        match extract_cycles(&clip, &meta(), &anns) {
            Err(Error::Range { cycle, .. }) => assert_eq!(cycle, 1),
            other => panic!("{other:?}"),
        }
        // Within tolerance: clamped to the end of the clip.
        let ok = [CycleAnnotation { start_s: 4.0, end_s: 5.04, crackles: true, wheezes: false }];
        let c = extract_cycles(&clip, &meta(), &ok).unwrap();
        assert_eq!(c[0].clip.len(), 1000);
        let bad = [CycleAnnotation { start_s: 4.0, end_s: 5.06, crackles: true, wheezes: false }];
        assert!(extract_cycles(&clip, &meta(), &bad).is_err());
    }

    #[test]
    fn summary_counts() {
        assert_eq!(dataset_summary(&[]), ClassCounts::default());
        let ann = CycleAnnotation { start_s: 0.0, end_s: 1.0, crackles: false, wheezes: false };
        let cyc = LabeledCycle {
            patient_id: 1,
            clip: AudioClip::new(vec![0.0; 10], 10).unwrap(),
            label: ClassLabel::Normal,
            source_annotation: ann,
        };
        let s = dataset_summary(&vec![cyc; 3]);
        assert_eq!(s.normal, 3);
        assert_eq!(s.total, 3);
        assert_eq!(s.crackles + s.wheezes + s.both, 0);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let clip = AudioClip::new((0..800).map(|i| ((i as f64) * 0.05).sin() * 0.5).collect(), 8000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.len(), clip.len());
        for (a, b) in back.samples.iter().zip(&clip.samples) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }

    #[test]
    fn wav_float_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 4000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..10 {
            w.write_sample(i as f32 * 0.1).unwrap();
            w.write_sample(-1.0f32).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.len(), 10);
        assert!((clip.samples[3] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn scan_reports_unpaired() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip::new(vec![0.0; 100], 1000).unwrap();
        write_wav(&dir.path().join("101_1b1_Al_sc_Meditron.wav"), &clip).unwrap();
        let err = scan_directory(dir.path()).unwrap_err();
        assert!(err.to_string().contains("101_1b1_Al_sc_Meditron"), "{err}");
        fs::write(dir.path().join("101_1b1_Al_sc_Meditron.txt"), "0 0.05 0 0\n").unwrap();
        let found = scan_directory(dir.path()).unwrap();
        assert_eq!(found.len(), 1);
        let (m, cycles) = load_recording(&found[0]).unwrap();
        assert_eq!(m.native_sample_rate, Some(1000));
        assert_eq!(cycles.len(), 1);
    }

    fn annotation() -> impl Strategy<Value = CycleAnnotation> {
        (0.0f64..1000.0, 1e-3f64..50.0, any::<bool>(), any::<bool>()).prop_map(|(s, d, c, w)| {
            CycleAnnotation { start_s: s, end_s: s + d, crackles: c, wheezes: w }
        })
    }

    proptest! {
        #[test]
        fn annotation_round_trip(anns in prop::collection::vec(annotation(), 0..20)) {
            let anns: Vec<_> = anns.into_iter().filter(|a| a.end_s > a.start_s).collect();
            let text = write_annotation_file(&anns);
            prop_assert_eq!(parse_annotation_file(&text).unwrap(), anns);
        }

        #[test]
        fn summary_total_matches(labels in prop::collection::vec(0usize..4, 0..50)) {
            let ann = CycleAnnotation { start_s: 0.0, end_s: 1.0, crackles: false, wheezes: false };
            let cycles: Vec<_> = labels.iter().map(|&l| LabeledCycle {
                patient_id: 0,
                clip: AudioClip { samples: vec![0.0], sample_rate: 1 },
                label: ClassLabel::from_index(l).unwrap(),
                source_annotation: ann,
            }).collect();
            let s = dataset_summary(&cycles);
            prop_assert_eq!(s.total, cycles.len());
            prop_assert_eq!(s.normal + s.crackles + s.wheezes + s.both, cycles.len());
        }
    }
}
