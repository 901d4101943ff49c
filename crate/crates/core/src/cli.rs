//! Command implementations behind the `lungsound` binary: configuration,
//! the on-disk feature cache and report emission.
//!
//! Configuration is a flat `key = value` text file; every key can also be
//! given on the command line as `--key value`. Unknown keys are errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{
    dataset_summary, load_recording, parse_annotation_file, parse_recording_filename, read_wav,
    scan_directory, ClassCounts, ClassLabel, RecordingFiles,
};
use crate::dsp::{DspConfig, DspPipeline};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, FeatureRecord, MetricsReport};
use crate::imaging::{to_feature_image, ColormapTable, FeatureImage, FeatureSource, ImageConfig};
use crate::matrix::Tensor3;
use crate::model::{
    build_extractor, extract_features, train_classifier, ByteReader, ChannelPlan, Classifier,
    ExtractorSource, FeatureExtractor, TrainConfig, N_BLOCKS,
};
use crate::synth::{write_corpus, SynthConfig};

pub const MANIFEST: &str = "manifest.txt";
const CACHE_EXT: &str = "lsft";
const CACHE_MAGIC: &[u8; 4] = b"LSFT";
const CACHE_VERSION: u32 = 1;
/// Entries featurized per parallel batch; bounds peak memory.
const FEATURIZE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractorSpec {
    Seeded(u64),
    File(PathBuf),
}

impl fmt::Display for ExtractorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtractorSpec::Seeded(s) => write!(f, "seeded:{s}"),
            ExtractorSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub dsp: DspConfig,
    pub image_size: usize,
    pub feature_source: FeatureSource,
    /// `None` is the grayscale ramp.
    pub colormap: Option<PathBuf>,
    pub extractor: ExtractorSpec,
    pub plan: ChannelPlan,
    pub train: TrainConfig,
    pub k: usize,
    pub seed: u64,
    /// Defaults to `<out_dir>/head.lswt`.
    pub model_path: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: PathBuf::from("data"),
            cache_dir: PathBuf::from("cache"),
            out_dir: PathBuf::from("."),
            dsp: DspConfig::default(),
            image_size: 256,
            feature_source: FeatureSource::default(),
            colormap: None,
            extractor: ExtractorSpec::Seeded(0),
            plan: ChannelPlan::DESK,
            train: TrainConfig::default(),
            k: 5,
            seed: 42,
            model_path: None,
            input: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<[usize; N_BLOCKS]> {
    let v: Vec<usize> = value
        .split(',')
        .map(|s| parse_num(key, s))
        .collect::<Result<_>>()?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N_BLOCKS} comma-separated values")))
}

fn join_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn canonical_key(key: &str) -> String {
    let k = key.trim().trim_start_matches("--").replace('-', "_");
    match k.as_str() {
        "duration" => "duration_s".into(),
        _ => k,
    }
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`", i + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits `--key value` / `--key=value` tokens into pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(tok) = it.next() {
        let Some(body) = tok.strip_prefix("--") else {
            return Err(Error::Config(format!("expected `--key value`, found `{tok}`")));
        };
        if let Some((k, v)) = body.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it
                .next()
                .ok_or_else(|| Error::Config(format!("--{body} needs a value")))?;
            out.push((body.to_string(), v.clone()));
        }
    }
    Ok(out)
}

/// Applies `config = <file>` pairs first, then everything else in order.
fn resolve_pairs<T>(
    pairs: Vec<(String, String)>,
    mut target: T,
    apply: impl Fn(&mut T, &str, &str) -> Result<()>,
) -> Result<T> {
    let (files, rest): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(k, _)| canonical_key(k) == "config");
    for (_, path) in files {
        let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        for (k, v) in parse_pairs(&text)? {
            if canonical_key(&k) == "config" {
                return Err(Error::Config(format!("{path}: nested config files are not supported")));
            }
            apply(&mut target, &canonical_key(&k), &v)?;
        }
    }
    for (k, v) in rest {
        apply(&mut target, &canonical_key(&k), &v)?;
    }
    Ok(target)
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "data_dir", "cache_dir", "out_dir", "duration_s", "sample_rate", "frame_len_ms", "hop_ms",
        "n_mels", "n_mfcc", "fmin", "fmax", "log_floor", "image_size", "feature_source", "colormap",
        "extractor", "channel_plan", "convs_per_block", "learning_rate", "batch_size", "epochs", "l2",
        "k", "seed", "model_path", "input",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key);
        let v = value.trim();
        match key.as_str() {
            "data_dir" => self.data_dir = v.into(),
            "cache_dir" => self.cache_dir = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "duration_s" => self.dsp.duration_s = parse_num(&key, v)?,
            "sample_rate" => self.dsp.sample_rate = parse_num(&key, v)?,
            "frame_len_ms" => self.dsp.frame.frame_len_ms = parse_num(&key, v)?,
            "hop_ms" => self.dsp.frame.hop_ms = parse_num(&key, v)?,
            "n_mels" => self.dsp.mel.n_mels = parse_num(&key, v)?,
            "n_mfcc" => self.dsp.mel.n_mfcc = parse_num(&key, v)?,
            "fmin" => self.dsp.mel.fmin = parse_num(&key, v)?,
            "fmax" => {
                self.dsp.mel.fmax = if v == "nyquist" { None } else { Some(parse_num(&key, v)?) }
            }
            "log_floor" => self.dsp.mel.log_floor = parse_num(&key, v)?,
            "image_size" => self.image_size = parse_num(&key, v)?,
            "feature_source" => self.feature_source = v.parse()?,
            "colormap" => self.colormap = if v == "grayscale" { None } else { Some(v.into()) },
            "extractor" => {
                self.extractor = match v.strip_prefix("seeded:") {
                    Some(s) => ExtractorSpec::Seeded(parse_num(&key, s)?),
                    None => ExtractorSpec::File(v.into()),
                }
            }
            "channel_plan" => self.plan.out_channels = parse_list(&key, v)?,
            "convs_per_block" => self.plan.convs_per_block = parse_list(&key, v)?,
            "learning_rate" => self.train.learning_rate = parse_num(&key, v)?,
            "batch_size" => self.train.batch_size = parse_num(&key, v)?,
            "epochs" => self.train.epochs = parse_num(&key, v)?,
            "l2" => self.train.l2 = parse_num(&key, v)?,
            "k" => self.k = parse_num(&key, v)?,
            "seed" => self.seed = parse_num(&key, v)?,
            "model_path" => self.model_path = Some(v.into()),
            "input" => self.input = Some(v.into()),
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}`; valid keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Defaults, then `config` files, then the remaining pairs.
    pub fn resolve(pairs: Vec<(String, String)>) -> Result<Self> {
        let cfg = resolve_pairs(pairs, PipelineConfig::default(), |c, k, v| c.set(k, v))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        DspPipeline::new(self.dsp).map_err(wrap)?;
        TrainConfig { seed: self.seed, ..self.train }.validate().map_err(wrap)?;
        self.plan.validate().map_err(wrap)?;
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_path.clone().unwrap_or_else(|| self.out_dir.join("head.lswt"))
    }

    /// Every key with its resolved value.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let d = &self.dsp;
        let path = |p: &Path| p.display().to_string();
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("data_dir", path(&self.data_dir));
        put("cache_dir", path(&self.cache_dir));
        put("out_dir", path(&self.out_dir));
        put("duration_s", d.duration_s.to_string());
        put("sample_rate", d.sample_rate.to_string());
        put("frame_len_ms", d.frame.frame_len_ms.to_string());
        put("hop_ms", d.frame.hop_ms.to_string());
        put("n_mels", d.mel.n_mels.to_string());
        put("n_mfcc", d.mel.n_mfcc.to_string());
        put("fmin", d.mel.fmin.to_string());
        put("fmax", d.mel.fmax.map_or("nyquist".into(), |f| f.to_string()));
        put("log_floor", d.mel.log_floor.to_string());
        put("image_size", self.image_size.to_string());
        put("feature_source", self.feature_source.as_str().into());
        put("colormap", self.colormap.as_deref().map_or("grayscale".into(), path));
        put("extractor", self.extractor.to_string());
        put("channel_plan", join_list(&self.plan.out_channels));
        put("convs_per_block", join_list(&self.plan.convs_per_block));
        put("learning_rate", self.train.learning_rate.to_string());
        put("batch_size", self.train.batch_size.to_string());
        put("epochs", self.train.epochs.to_string());
        put("l2", self.train.l2.to_string());
        put("k", self.k.to_string());
        put("seed", self.seed.to_string());
        put("model_path", path(&self.model_path()));
        put("input", self.input.as_deref().map_or(String::new(), path));
        m
    }

    pub fn to_text(&self) -> String {
        self.to_map().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn colormap_table(&self) -> Result<ColormapTable> {
        match &self.colormap {
            None => Ok(ColormapTable::grayscale()),
            Some(p) => ColormapTable::load(p),
        }
    }

    pub fn image_config(&self) -> Result<ImageConfig> {
        Ok(ImageConfig {
            height: self.image_size,
            width: self.image_size,
            source: self.feature_source,
            colormap: self.colormap_table()?,
        })
    }

    pub fn build_extractor(&self) -> Result<FeatureExtractor> {
        match &self.extractor {
            ExtractorSpec::Seeded(s) => build_extractor(ExtractorSource::Seeded(*s), self.plan, 3),
            ExtractorSpec::File(p) => build_extractor(ExtractorSource::WeightFile(p), self.plan, 3),
        }
    }

    /// Keys that change cached images.
    fn featurization_fingerprint(&self) -> Result<String> {
        let m = self.to_map();
        let mut s = String::new();
        for k in [
            "duration_s", "sample_rate", "frame_len_ms", "hop_ms", "n_mels", "n_mfcc", "fmin", "fmax",
            "log_floor", "image_size", "feature_source",
        ] {
            s.push_str(&format!("{k}={}\n", m[k]));
        }
        s.push_str(&format!("colormap={}\n", self.colormap_table()?.to_text()));
        Ok(s)
    }
}

/// One cached feature image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCacheEntry {
    /// `<recording stem>#<cycle index>`
    pub identity: String,
    pub label: ClassLabel,
    pub tensor: Tensor3,
}

impl FeatureCacheEntry {
    pub fn new(stem: &str, cycle: usize, label: ClassLabel, tensor: Tensor3) -> Self {
        FeatureCacheEntry {
            identity: format!("{stem}#{cycle}"),
            label,
            tensor,
        }
    }

    pub fn patient_id(&self) -> Result<u32> {
        let stem = self.identity.split('#').next().unwrap_or("");
        Ok(parse_recording_filename(stem)?.patient_id)
    }

    pub fn file_name(&self) -> String {
        format!("{}.{CACHE_EXT}", self.identity.replace('#', ".c"))
    }

    /// `LSFT` layout: magic, version u32, u16-prefixed UTF-8 identity, label u8,
    /// rank u8, dims u32 each, f32 payload; integers and floats little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let name = self.identity.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Cache(format!("identity too long: {}", self.identity)));
        }
        let t = &self.tensor;
        let mut out = Vec::with_capacity(32 + name.len() + 4 * t.data.len());
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(self.label.index() as u8);
        out.push(3);
        for d in [t.height, t.width, t.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let cache_err = |e: Error| match e {
            Error::WeightLoad(m) => Error::Cache(m),
            other => other,
        };
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4).map_err(cache_err)? != CACHE_MAGIC {
            return Err(Error::Cache("bad magic, expected LSFT".into()));
        }
        let version = r.u32().map_err(cache_err)?;
        if version != CACHE_VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let len = r.u16().map_err(cache_err)? as usize;
        let identity = String::from_utf8(r.take(len).map_err(cache_err)?.to_vec())
            .map_err(|_| Error::Cache("identity is not UTF-8".into()))?;
        let label_idx = r.u8().map_err(cache_err)?;
        let label = ClassLabel::from_index(label_idx as usize)
            .ok_or_else(|| Error::Cache(format!("label {label_idx} out of range")))?;
        let rank = r.u8().map_err(cache_err)?;
        if rank != 3 {
            return Err(Error::Cache(format!("expected a rank-3 payload, found rank {rank}")));
        }
        let dims = (0..3).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>().map_err(cache_err)?;
        let n = dims.iter().product::<usize>();
        let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>().map_err(cache_err)?;
        if r.pos != bytes.len() {
            return Err(Error::Cache(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(FeatureCacheEntry {
            identity,
            label,
            tensor: Tensor3::from_vec(dims[0], dims[1], dims[2], data),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Cache(format!("{}: {e}", path.display())))
    }
}

fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        h.update((c.len() as u64).to_le_bytes());
        h.update(c);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} {} does not exist", path.display())))
    }
}

/// Hash of the featurization settings and every input file.
fn content_hash(cfg: &PipelineConfig, recs: &[RecordingFiles]) -> Result<String> {
    let mut parts: Vec<Vec<u8>> = vec![cfg.featurization_fingerprint()?.into_bytes()];
    for r in recs {
        parts.push(r.stem.clone().into_bytes());
        parts.push(read_bytes(&r.wav)?);
        parts.push(read_bytes(&r.annotation)?);
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    Ok(sha256_hex(&refs))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub hash: String,
    pub entries: Vec<String>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("hash {}\n", self.hash);
        for e in &self.entries {
            s.push_str(e);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Option<Manifest> {
        let mut lines = text.lines();
        let hash = lines.next()?.strip_prefix("hash ")?.to_string();
        Some(Manifest {
            hash,
            entries: lines.filter(|l| !l.is_empty()).map(str::to_string).collect(),
        })
    }

    pub fn read(cache_dir: &Path) -> Option<Manifest> {
        fs::read_to_string(cache_dir.join(MANIFEST)).ok().and_then(|t| Manifest::parse(&t))
    }
}

/// Renders one clip through the DSP chain and imaging.
pub fn clip_to_image(
    clip: &crate::dataset::AudioClip,
    dsp: &DspPipeline,
    img: &ImageConfig,
) -> Result<FeatureImage> {
    let (lm, mf) = dsp.featurize_clip(clip)?;
    to_feature_image(&lm, &mf, img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturizeSummary {
    pub entries: usize,
    pub written: usize,
}

/// Fills `cache_dir` with one `.lsft` file per annotated cycle in `data_dir`.
/// Nothing is rewritten when the manifest hash still matches and every entry exists.
pub fn cmd_featurize(cfg: &PipelineConfig) -> Result<FeaturizeSummary> {
    require_dir(&cfg.data_dir, "data_dir")?;
    let recs = scan_directory(&cfg.data_dir)?;
    let hash = content_hash(cfg, &recs)?;
    if let Some(m) = Manifest::read(&cfg.cache_dir) {
        if m.hash == hash && m.entries.iter().all(|e| cfg.cache_dir.join(e).is_file()) {
            return Ok(FeaturizeSummary { entries: m.entries.len(), written: 0 });
        }
    }
    fs::create_dir_all(&cfg.cache_dir).map_err(|e| Error::io(&cfg.cache_dir, e))?;
    let dsp = DspPipeline::new(cfg.dsp)?;
    let img_cfg = cfg.image_config()?;

    let mut names = Vec::new();
    let mut written = 0;
    for rec in &recs {
        let (_, cycles) = load_recording(rec)?;
        for chunk in cycles.chunks(FEATURIZE_CHUNK).enumerate().collect::<Vec<_>>() {
            let (ci, cycles) = chunk;
            let entries: Vec<FeatureCacheEntry> = cycles
                .par_iter()
                .enumerate()
                .map(|(j, c)| {
                    let idx = ci * FEATURIZE_CHUNK + j;
                    let img = clip_to_image(&c.clip, &dsp, &img_cfg)
                        .map_err(|e| Error::Data(format!("{}#{idx}: {e}", rec.stem)))?;
                    Ok(FeatureCacheEntry::new(&rec.stem, idx, c.label, img.into_tensor()))
                })
                .collect::<Result<_>>()?;
            // Single writer.
            for e in entries {
                let name = e.file_name();
                let path = cfg.cache_dir.join(&name);
                let bytes = e.to_bytes()?;
                if fs::read(&path).ok().as_deref() != Some(bytes.as_slice()) {
                    fs::write(&path, &bytes).map_err(|err| Error::io(&path, err))?;
                    written += 1;
                }
                names.push(name);
            }
        }
    }

    let keep: BTreeSet<&String> = names.iter().collect();
    for entry in fs::read_dir(&cfg.cache_dir).map_err(|e| Error::io(&cfg.cache_dir, e))? {
        let path = entry.map_err(|e| Error::io(&cfg.cache_dir, e))?.path();
        let stale = path.extension().and_then(|e| e.to_str()) == Some(CACHE_EXT)
            && path.file_name().and_then(|n| n.to_str()).is_some_and(|n| !keep.contains(&n.to_string()));
        if stale {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    let manifest = Manifest { hash, entries: names };
    let mpath = cfg.cache_dir.join(MANIFEST);
    fs::write(&mpath, manifest.to_text()).map_err(|e| Error::io(&mpath, e))?;
    Ok(FeaturizeSummary { entries: manifest.entries.len(), written })
}

/// Featurizes (if needed) and runs every cached image through the extractor.
pub fn load_feature_records(cfg: &PipelineConfig, fx: &FeatureExtractor) -> Result<Vec<FeatureRecord>> {
    cmd_featurize(cfg)?;
    let manifest = Manifest::read(&cfg.cache_dir)
        .ok_or_else(|| Error::Cache(format!("{}: missing or unreadable manifest", cfg.cache_dir.display())))?;
    manifest
        .entries
        .par_iter()
        .map(|name| {
            let entry = FeatureCacheEntry::read(&cfg.cache_dir.join(name))?;
            let want = (cfg.image_size, cfg.image_size, 3);
            if entry.tensor.shape() != want {
                return Err(Error::Cache(format!(
                    "{name}: payload {:?} does not match configured {want:?}",
                    entry.tensor.shape()
                )));
            }
            let img = FeatureImage::new(entry.tensor)?;
            Ok(FeatureRecord {
                patient_id: parse_recording_filename(entry.identity.split('#').next().unwrap_or(""))?
                    .patient_id,
                label: entry.label,
                features: extract_features(&img, fx)?,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Patient-disjoint k-fold cross-validation; writes `report.json` and
/// `report.txt` into `out_dir`.
pub fn cmd_cv(cfg: &PipelineConfig) -> Result<MetricsReport> {
    let fx = cfg.build_extractor()?;
    let records = load_feature_records(cfg, &fx)?;
    let mut report = cross_validate(&records, cfg.k, &cfg.train_config(), cfg.seed)?;
    report.config = cfg.to_map();
    write_file(&cfg.out_dir.join("report.json"), &report.to_json())?;
    write_file(&cfg.out_dir.join("report.txt"), &report.to_text())?;
    Ok(report)
}

/// Trains a head on every cached cycle and saves it to the model path.
/// Returns the per-epoch training losses.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let fx = cfg.build_extractor()?;
    let records = load_feature_records(cfg, &fx)?;
    let samples: Vec<(Vec<f32>, ClassLabel)> = records.into_iter().map(|r| (r.features, r.label)).collect();
    let (clf, losses) = train_classifier(&samples, &cfg.train_config())?;
    let path = cfg.model_path();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    clf.save(&path)?;
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub identity: String,
    pub label: ClassLabel,
    pub probabilities: Vec<f64>,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.identity, self.label)?;
        for p in &self.probabilities {
            write!(f, "\t{p:.6}")?;
        }
        Ok(())
    }
}

/// Predicts every cycle of `input` (a WAV file or a directory of them). A
/// WAV with a sibling annotation file is cut into its cycles; otherwise the
/// whole file is one cycle.
pub fn cmd_predict(cfg: &PipelineConfig, input: &Path) -> Result<Vec<Prediction>> {
    let model = cfg.model_path();
    if !model.is_file() {
        return Err(Error::Data(format!("model file {} does not exist", model.display())));
    }
    let clf = Classifier::load(&model)?;
    let fx = cfg.build_extractor()?;
    let dim = fx.feature_dim(cfg.image_size, cfg.image_size);
    if clf.dim() != dim {
        return Err(Error::Shape(format!(
            "model expects {} features, extractor produces {dim}",
            clf.dim()
        )));
    }
    let dsp = DspPipeline::new(cfg.dsp)?;
    let img_cfg = cfg.image_config()?;

    let wavs: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };

    let mut jobs = Vec::new();
    for wav in &wavs {
        let clip = read_wav(wav)?;
        let stem = wav.file_stem().and_then(|s| s.to_str()).unwrap_or("input").to_string();
        let ann = wav.with_extension("txt");
        if ann.is_file() {
            let text = fs::read_to_string(&ann).map_err(|e| Error::io(&ann, e))?;
            let anns = parse_annotation_file(&text).map_err(|e| Error::Data(format!("{}: {e}", ann.display())))?;
            let meta = parse_recording_filename(&stem).unwrap_or_else(|_| crate::synth::recording_meta(0));
            for (i, c) in crate::dataset::extract_cycles(&clip, &meta, &anns)?.into_iter().enumerate() {
                jobs.push((format!("{stem}#{i}"), c.clip));
            }
        } else {
            jobs.push((format!("{stem}#0"), clip));
        }
    }
    jobs.par_iter()
        .map(|(identity, clip)| {
            let img = clip_to_image(clip, &dsp, &img_cfg)?;
            let x = extract_features(&img, &fx)?;
            let (label, probabilities) = clf.predict_features(&x)?;
            Ok(Prediction { identity: identity.clone(), label, probabilities })
        })
        .collect()
}

/// Class counts over every annotated cycle in `data_dir`.
pub fn cmd_summarize(data_dir: &Path) -> Result<ClassCounts> {
    require_dir(data_dir, "data_dir")?;
    let recs = scan_directory(data_dir)?;
    let mut counts = ClassCounts::default();
    let mut problems = Vec::new();
    for r in &recs {
        match load_recording(r) {
            Ok((_, cycles)) => {
                let s = dataset_summary(&cycles);
                for l in ClassLabel::ALL {
                    for _ in 0..s.get(l) {
                        counts.add(l);
                    }
                }
            }
            Err(e) => problems.push(format!("{}: {e}", r.wav.display())),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Data(problems.join("\n")));
    }
    Ok(counts)
}

/// Synthetic-corpus settings plus the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCommand {
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
}

impl Default for SynthCommand {
    fn default() -> Self {
        SynthCommand { out_dir: PathBuf::from("synth"), synth: SynthConfig::default() }
    }
}

impl SynthCommand {
    pub const KEYS: &'static [&'static str] = &[
        "out_dir", "seed", "sample_rate", "cycle_s", "per_class", "wheeze_low", "wheeze_high",
        "crackle_rate", "snr_db",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key);
        let v = value.trim();
        let s = &mut self.synth;
        match key.as_str() {
            "out_dir" => self.out_dir = v.into(),
            "seed" => s.seed = parse_num(&key, v)?,
            "sample_rate" => s.sample_rate = parse_num(&key, v)?,
            "cycle_s" => s.cycle_s = parse_num(&key, v)?,
            "per_class" => s.per_class = parse_num(&key, v)?,
            "wheeze_low" => s.wheeze_band.0 = parse_num(&key, v)?,
            "wheeze_high" => s.wheeze_band.1 = parse_num(&key, v)?,
            "crackle_rate" => s.crackle_rate = parse_num(&key, v)?,
            "snr_db" => s.snr_db = parse_num(&key, v)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}`; valid keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn resolve(pairs: Vec<(String, String)>) -> Result<Self> {
        let cmd = resolve_pairs(pairs, SynthCommand::default(), |c, k, v| c.set(k, v))?;
        cmd.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cmd)
    }
}

pub fn cmd_synth(cmd: &SynthCommand) -> Result<Vec<PathBuf>> {
    write_corpus(&cmd.out_dir, &cmd.synth)
}

/// Re-renders a saved `report.json` as the text table.
pub fn cmd_report(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(MetricsReport::from_json(&text)?.to_text())
}
