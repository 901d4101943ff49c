//! Rendering of spectral matrices as fixed-size multi-channel images.

use std::fs;
use std::path::Path;

use crate::dsp::{LogMelSpectrogram, MfccMatrix};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Tensor3};

pub const COLORMAP_LEN: usize = 256;

/// Classifier input: H × W × C, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    tensor: Tensor3,
}

impl FeatureImage {
    /// Fails if any entry lies outside `[0, 1]`.
    pub fn new(tensor: Tensor3) -> Result<Self> {
        if let Some(i) = tensor.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "image entry {i} = {} outside [0, 1]",
                tensor.data[i]
            )));
        }
        Ok(FeatureImage { tensor })
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.tensor
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.tensor.shape()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColormapTable {
    entries: Vec<[f64; 3]>,
}

impl ColormapTable {
    pub fn new(entries: Vec<[f64; 3]>) -> Result<Self> {
        if entries.len() != COLORMAP_LEN {
            return Err(Error::InvalidArgument(format!(
                "colormap needs {COLORMAP_LEN} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("colormap channel outside [0, 1]".into()));
        }
        Ok(ColormapTable { entries })
    }

    /// Identity ramp on all three channels.
    pub fn grayscale() -> Self {
        ColormapTable {
            entries: (0..COLORMAP_LEN)
                .map(|i| {
                    let v = i as f64 / (COLORMAP_LEN - 1) as f64;
                    [v, v, v]
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[[f64; 3]] {
        &self.entries
    }

    /// 256 lines of `r g b`, each in `[0, 1]`. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::with_capacity(COLORMAP_LEN);
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `r g b`, found {} fields", fields.len()),
                });
            }
            let mut rgb = [0.0; 3];
            for (dst, tok) in rgb.iter_mut().zip(&fields) {
                *dst = tok.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("`{tok}` is not a number"),
                })?;
            }
            entries.push(rgb);
        }
        ColormapTable::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ColormapTable::parse(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|[r, g, b]| format!("{r} {g} {b}\n"))
            .collect()
    }

    /// Linear interpolation into the table; `v` is clamped to `[0, 1]`.
    pub fn lookup(&self, v: f64) -> [f64; 3] {
        let pos = v.clamp(0.0, 1.0) * (COLORMAP_LEN - 1) as f64;
        let i0 = pos.floor() as usize;
        if i0 >= COLORMAP_LEN - 1 {
            return self.entries[COLORMAP_LEN - 1];
        }
        let frac = pos - i0 as f64;
        let (a, b) = (self.entries[i0], self.entries[i0 + 1]);
        if frac == 0.0 {
            return a;
        }
        [
            a[0] + (b[0] - a[0]) * frac,
            a[1] + (b[1] - a[1]) * frac,
            a[2] + (b[2] - a[2]) * frac,
        ]
    }
}

impl Default for ColormapTable {
    fn default() -> Self {
        ColormapTable::grayscale()
    }
}

/// `(x - min) / (max - min)`; a constant matrix maps to zeros.
pub fn normalize_minmax(m: &Matrix) -> Matrix {
    let (lo, hi) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Matrix::zeros(m.rows(), m.cols());
    }
    let range = hi - lo;
    m.map(|v| (v - lo) / range)
}

fn grid(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    if n_out == 1 || n_in == 1 {
        return (0, 0, 0.0);
    }
    let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
    let i0 = (s.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize on a corner-aligned grid: output corners coincide with
/// input corners.
pub fn resize_bilinear(m: &Matrix, out_h: usize, out_w: usize) -> Result<Matrix> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot resize to {out_h}x{out_w}"
        )));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidArgument("cannot resize an empty matrix".into()));
    }
    let cols: Vec<_> = (0..out_w).map(|j| grid(j, m.cols(), out_w)).collect();
    let mut out = Matrix::zeros(out_h, out_w);
    for i in 0..out_h {
        let (y0, y1, fy) = grid(i, m.rows(), out_h);
        for (j, &(x0, x1, fx)) in cols.iter().enumerate() {
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            // Off-diagonal terms are summed first so the result is exactly transpose-symmetric.
            let v = (w00 * m.get(y0, x0) + (w01 * m.get(y0, x1) + w10 * m.get(y1, x0)))
                + w11 * m.get(y1, x1);
            out.set(i, j, v);
        }
    }
    Ok(out)
}

pub fn apply_colormap(m: &Matrix, cmap: &ColormapTable) -> Result<FeatureImage> {
    let mut t = Tensor3::zeros(m.rows(), m.cols(), 3);
    for (dst, &v) in t.data.chunks_exact_mut(3).zip(m.as_slice()) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("colormap input {v} outside [0, 1]")));
        }
        let rgb = cmap.lookup(v);
        for c in 0..3 {
            dst[c] = rgb[c] as f32;
        }
    }
    FeatureImage::new(t)
}

/// Which DSP matrix becomes the classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSource {
    Mfcc,
    LogMel,
    #[default]
    ColormappedLogMel,
}

impl FeatureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Mfcc => "mfcc",
            FeatureSource::LogMel => "logmel",
            FeatureSource::ColormappedLogMel => "colormapped-logmel",
        }
    }
}

impl std::str::FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfcc" => Ok(FeatureSource::Mfcc),
            "logmel" => Ok(FeatureSource::LogMel),
            "colormapped-logmel" => Ok(FeatureSource::ColormappedLogMel),
            _ => Err(Error::Config(format!(
                "feature source must be mfcc, logmel or colormapped-logmel, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageConfig {
    pub height: usize,
    pub width: usize,
    pub source: FeatureSource,
    /// Used for `ColormappedLogMel`; the other sources render in grayscale.
    pub colormap: ColormapTable,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            height: 256,
            width: 256,
            source: FeatureSource::default(),
            colormap: ColormapTable::grayscale(),
        }
    }
}

/// normalize → resize → colormap.
pub fn render(m: &Matrix, cfg: &ImageConfig, cmap: &ColormapTable) -> Result<FeatureImage> {
    if m.is_empty() {
        return Err(Error::InvalidArgument("cannot render an empty matrix".into()));
    }
    // Quantize to f32 before resampling so tiny rounding differences in the
    // normalized values cannot leak into the image.
    let norm = normalize_minmax(m).map(|v| v as f32 as f64);
    let resized = resize_bilinear(&norm, cfg.height, cfg.width)?;
    apply_colormap(&resized.map(|v| v.clamp(0.0, 1.0)), cmap)
}

pub fn to_feature_image(
    lm: &LogMelSpectrogram,
    mf: &MfccMatrix,
    cfg: &ImageConfig,
) -> Result<FeatureImage> {
    match cfg.source {
        FeatureSource::Mfcc => render(&mf.values, cfg, &ColormapTable::grayscale()),
        FeatureSource::LogMel => render(&lm.values, cfg, &ColormapTable::grayscale()),
        FeatureSource::ColormappedLogMel => render(&lm.values, cfg, &cfg.colormap),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn minmax() {
        let n = normalize_minmax(&m(&[&[0.0, 5.0], &[10.0, 5.0]]));
        assert_eq!(n, m(&[&[0.0, 0.5], &[1.0, 0.5]]));
        let c = normalize_minmax(&m(&[&[3.0, 3.0], &[3.0, 3.0]]));
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_hand_example() {
        let r = resize_bilinear(&m(&[&[0.0, 1.0], &[2.0, 3.0]]), 3, 3).unwrap();
        assert_eq!(r, m(&[&[0.0, 0.5, 1.0], &[1.0, 1.5, 2.0], &[2.0, 2.5, 3.0]]));
    }

    #[test]
    fn bilinear_identity_constant_and_errors() {
        let a = m(&[&[1.0, -2.0, 3.5], &[0.25, 9.0, 7.0]]);
        assert_eq!(resize_bilinear(&a, 2, 3).unwrap(), a);
        let c = Matrix::from_vec(5, 7, vec![0.3; 35]);
        let r = resize_bilinear(&c, 11, 4).unwrap();
        assert!(r.as_slice().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(resize_bilinear(&a, 0, 3).is_err());
        assert!(resize_bilinear(&a, 3, 0).is_err());
        let one = Matrix::from_vec(1, 1, vec![2.0]);
        assert!(resize_bilinear(&one, 4, 4).unwrap().as_slice().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn colormap_endpoints_and_gray() {
        let mut entries = vec![[0.0; 3]; 256];
        for (i, e) in entries.iter_mut().enumerate() {
            *e = [i as f64 / 255.0, (i as f64 / 255.0).powi(2), 1.0 - i as f64 / 255.0];
        }
        let cmap = ColormapTable::new(entries.clone()).unwrap();
        assert_eq!(cmap.lookup(0.0), entries[0]);
        assert_eq!(cmap.lookup(1.0), entries[255]);

        let gray = ColormapTable::grayscale();
        let x = m(&[&[0.0, 0.1, 0.5], &[0.77, 0.999, 1.0]]);
        let img = apply_colormap(&x, &gray).unwrap();
        for (i, &v) in x.as_slice().iter().enumerate() {
            let px = &img.tensor().data[i * 3..i * 3 + 3];
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
            assert!((px[0] as f64 - v).abs() < 1e-6);
        }

        // Monotone table: channel 1 increasing, channel 2 decreasing.
        let mut last = cmap.lookup(0.0);
        for k in 1..=1000 {
            let cur = cmap.lookup(k as f64 / 1000.0);
            assert!(cur[1] >= last[1] && cur[2] <= last[2]);
            last = cur;
        }
        assert!(apply_colormap(&m(&[&[1.5]]), &gray).is_err());
    }

    #[test]
    fn colormap_file_round_trip() {
        let gray = ColormapTable::grayscale();
        assert_eq!(ColormapTable::parse(&gray.to_text()).unwrap(), gray);
        assert!(ColormapTable::parse("0 0 0\n").is_err());
        assert!(ColormapTable::parse("0 0\n").is_err());
    }

    #[test]
    fn default_shape_and_determinism() {
        let vals: Vec<f64> = (0..597 * 128).map(|i| ((i * 37) % 101) as f64 - 23.0).collect();
        let lm = LogMelSpectrogram { values: Matrix::from_vec(597, 128, vals) };
        let mf = MfccMatrix { values: Matrix::from_vec(1, 1, vec![0.0]) };
        let cfg = ImageConfig::default();
        let a = to_feature_image(&lm, &mf, &cfg).unwrap();
        assert_eq!(a.shape(), (256, 256, 3));
        assert_eq!(a, to_feature_image(&lm, &mf, &cfg).unwrap());
        assert!(a.tensor().data.iter().all(|v| (0.0..=1.0).contains(v)));
        let empty = MfccMatrix { values: Matrix::zeros(0, 0) };
        let mcfg = ImageConfig { source: FeatureSource::Mfcc, ..cfg };
        assert!(to_feature_image(&lm, &empty, &mcfg).is_err());
    }

    fn small_matrix() -> impl Strategy<Value = Matrix> {
        (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            prop::collection::vec(-30.0f64..10.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v))
        })
    }

    proptest! {
        #[test]
        fn affine_invariance(mat in small_matrix(), a in 0.01f64..100.0, b in -1000.0f64..1000.0) {
            let cfg = ImageConfig { height: 16, width: 20, ..ImageConfig::default() };
            let g = ColormapTable::grayscale();
            let base = render(&mat, &cfg, &g).unwrap();
            let moved = render(&mat.map(|x| a * x + b), &cfg, &g).unwrap();
            prop_assert_eq!(base, moved);
        }

        #[test]
        fn resize_commutes_with_transpose(mat in small_matrix(), n in 1usize..20) {
            let lhs = resize_bilinear(&mat.transpose(), n, n).unwrap();
            let rhs = resize_bilinear(&mat, n, n).unwrap().transpose();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn images_in_unit_range(mat in small_matrix()) {
            let cfg = ImageConfig { height: 9, width: 13, ..ImageConfig::default() };
            let img = render(&mat, &cfg, &cfg.colormap).unwrap();
            prop_assert_eq!(img.shape(), (9, 13, 3));
            prop_assert!(img.tensor().data.iter().all(|v| (0.0..=1.0).contains(v)));
            let n = normalize_minmax(&mat);
            let (lo, hi) = n.as_slice().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            if mat.as_slice().iter().any(|&v| v != mat.as_slice()[0]) {
                prop_assert_eq!((lo, hi), (0.0, 1.0));
            }
        }
    }
}
