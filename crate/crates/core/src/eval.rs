//! Confusion matrices, one-vs-rest rates, patient-disjoint splits and
//! k-fold cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::model::{train_classifier, TrainConfig};

/// Rows are true classes, columns predictions, both in
/// [`ClassLabel::REPORT_ORDER`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn from_report_rows(counts: [[u64; 4]; 4]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn add(&mut self, truth: ClassLabel, pred: ClassLabel) {
        self.counts[truth.report_index()][pred.report_index()] += 1;
    }

    pub fn get(&self, truth: ClassLabel, pred: ClassLabel) -> u64 {
        self.counts[truth.report_index()][pred.report_index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..4).map(|i| self.counts[i][i]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10}", "")?;
        for l in ClassLabel::REPORT_ORDER {
            write!(f, "{:>10}", l.name())?;
        }
        for (i, l) in ClassLabel::REPORT_ORDER.iter().enumerate() {
            write!(f, "\n{:<10}", l.name())?;
            for c in self.counts[i] {
                write!(f, "{c:>10}")?;
            }
        }
        Ok(())
    }
}

pub fn confusion_matrix(pairs: impl IntoIterator<Item = (ClassLabel, ClassLabel)>) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (t, p) in pairs {
        cm.add(t, p);
    }
    cm
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn one_vs_rest(cm: &ConfusionMatrix, c: ClassLabel) -> BinaryCounts {
    let i = c.report_index();
    let tp = cm.counts[i][i];
    let row: u64 = cm.counts[i].iter().sum();
    let col: u64 = cm.counts.iter().map(|r| r[i]).sum();
    let fn_ = row - tp;
    let fp = col - tp;
    BinaryCounts {
        tp,
        fp,
        tn: cm.total() - tp - fn_ - fp,
        fn_,
    }
}

/// A ratio that falls back to 0 when its denominator is 0, remembering that it did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub value: f64,
    pub degenerate: bool,
}

impl Rate {
    fn ratio(num: f64, den: f64) -> Rate {
        if den == 0.0 {
            Rate { value: 0.0, degenerate: true }
        } else {
            Rate { value: num / den, degenerate: false }
        }
    }
}

pub fn sensitivity(b: &BinaryCounts) -> Rate {
    Rate::ratio(b.tp as f64, (b.tp + b.fn_) as f64)
}

pub fn specificity(b: &BinaryCounts) -> Rate {
    Rate::ratio(b.tn as f64, (b.tn + b.fp) as f64)
}

pub fn false_alarm(b: &BinaryCounts) -> Rate {
    let s = specificity(b);
    if s.degenerate {
        s
    } else {
        Rate { value: 1.0 - s.value, degenerate: false }
    }
}

/// TP / (TP + FP).
pub fn precision(b: &BinaryCounts) -> Rate {
    Rate::ratio(b.tp as f64, (b.tp + b.fp) as f64)
}

/// Same quantity as [`sensitivity`].
pub fn recall(b: &BinaryCounts) -> Rate {
    sensitivity(b)
}

pub fn f1(b: &BinaryCounts) -> Rate {
    let p = precision(b).value;
    let s = sensitivity(b).value;
    Rate::ratio(2.0 * p * s, p + s)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Rate {
    Rate::ratio(cm.trace() as f64, cm.total() as f64)
}

/// Mean of sensitivity and specificity.
pub fn icbhi_score(sens: f64, spec: f64) -> f64 {
    (sens + spec) / 2.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub false_alarm_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub icbhi_score: f64,
}

impl ClassMetrics {
    /// One-vs-rest metrics for `c`; degenerate denominators are appended to `warnings`.
    pub fn for_class(cm: &ConfusionMatrix, c: ClassLabel, warnings: &mut Vec<String>) -> Self {
        let b = one_vs_rest(cm, c);
        let mut note = |name: &str, r: Rate| {
            if r.degenerate {
                warnings.push(format!("{}: {name} has a zero denominator, reported as 0", c.name()));
            }
            r.value
        };
        let sens = note("sensitivity", sensitivity(&b));
        let spec = note("specificity", specificity(&b));
        let prec = note("precision", precision(&b));
        let f1v = note("f1", f1(&b));
        let acc = Rate::ratio((b.tp + b.tn) as f64, b.total() as f64).value;
        ClassMetrics {
            accuracy: acc,
            sensitivity: sens,
            specificity: spec,
            false_alarm_rate: false_alarm(&b).value,
            precision: prec,
            recall: sens,
            f1: f1v,
            icbhi_score: icbhi_score(sens, spec),
        }
    }

    fn mean<'a>(items: impl IntoIterator<Item = &'a ClassMetrics>) -> ClassMetrics {
        let mut acc = ClassMetrics::default();
        let mut n = 0.0;
        for m in items {
            acc.accuracy += m.accuracy;
            acc.sensitivity += m.sensitivity;
            acc.specificity += m.specificity;
            acc.false_alarm_rate += m.false_alarm_rate;
            acc.precision += m.precision;
            acc.recall += m.recall;
            acc.f1 += m.f1;
            acc.icbhi_score += m.icbhi_score;
            n += 1.0;
        }
        if n > 0.0 {
            acc.accuracy /= n;
            acc.sensitivity /= n;
            acc.specificity /= n;
            acc.false_alarm_rate /= n;
            acc.precision /= n;
            acc.recall /= n;
            acc.f1 /= n;
            acc.icbhi_score /= n;
        }
        acc
    }
}

/// Per-class metrics keyed by class name, serialized in report order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    #[serde(rename = "Normal")]
    pub normal: ClassMetrics,
    #[serde(rename = "Wheezes")]
    pub wheezes: ClassMetrics,
    #[serde(rename = "Crackles")]
    pub crackles: ClassMetrics,
    #[serde(rename = "Both")]
    pub both: ClassMetrics,
}

impl PerClass {
    pub fn get(&self, c: ClassLabel) -> &ClassMetrics {
        match c {
            ClassLabel::Normal => &self.normal,
            ClassLabel::Wheezes => &self.wheezes,
            ClassLabel::Crackles => &self.crackles,
            ClassLabel::Both => &self.both,
        }
    }

    fn get_mut(&mut self, c: ClassLabel) -> &mut ClassMetrics {
        match c {
            ClassLabel::Normal => &mut self.normal,
            ClassLabel::Wheezes => &mut self.wheezes,
            ClassLabel::Crackles => &mut self.crackles,
            ClassLabel::Both => &mut self.both,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassLabel, &ClassMetrics)> {
        ClassLabel::REPORT_ORDER.into_iter().map(move |c| (c, self.get(c)))
    }
}

/// Metrics of one confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMetrics {
    pub confusion_matrix: ConfusionMatrix,
    pub per_class: PerClass,
    pub overall_accuracy: f64,
    /// Unweighted mean over the four classes.
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
}

impl MatrixMetrics {
    pub fn from_matrix(cm: &ConfusionMatrix, warnings: &mut Vec<String>) -> Self {
        let mut per_class = PerClass::default();
        for c in ClassLabel::REPORT_ORDER {
            *per_class.get_mut(c) = ClassMetrics::for_class(cm, c, warnings);
        }
        let acc = accuracy(cm);
        if acc.degenerate {
            warnings.push("accuracy: empty confusion matrix, reported as 0".into());
        }
        MatrixMetrics {
            confusion_matrix: *cm,
            macro_avg: ClassMetrics::mean(per_class.iter().map(|(_, m)| m)),
            per_class,
            overall_accuracy: acc.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_patients: Vec<u32>,
    #[serde(flatten)]
    pub metrics: MatrixMetrics,
}

/// Fold-averaged headline numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldMean {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub icbhi_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Pooled over all test folds.
    pub confusion_matrix: ConfusionMatrix,
    pub per_class: PerClass,
    pub overall_accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    pub fold_count: usize,
    pub mean_of_folds: FoldMean,
    pub folds: Vec<FoldReport>,
    pub warnings: Vec<String>,
    /// Resolved configuration the report was produced with.
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Report of a single evaluation with no fold structure.
    pub fn from_matrix(cm: &ConfusionMatrix) -> Self {
        let mut warnings = Vec::new();
        let m = MatrixMetrics::from_matrix(cm, &mut warnings);
        MetricsReport {
            confusion_matrix: m.confusion_matrix,
            per_class: m.per_class,
            overall_accuracy: m.overall_accuracy,
            macro_avg: m.macro_avg,
            fold_count: 0,
            mean_of_folds: FoldMean::default(),
            folds: Vec::new(),
            warnings,
            config: BTreeMap::new(),
        }
    }

    pub fn from_folds(folds: Vec<FoldReport>, mut warnings: Vec<String>) -> Self {
        let mut pooled = ConfusionMatrix::default();
        for f in &folds {
            pooled.merge(&f.metrics.confusion_matrix);
        }
        let m = MatrixMetrics::from_matrix(&pooled, &mut warnings);
        let n = folds.len().max(1) as f64;
        let mut mean = FoldMean::default();
        for f in &folds {
            let mm = &f.metrics;
            mean.accuracy += mm.overall_accuracy / n;
            mean.precision += mm.macro_avg.precision / n;
            mean.recall += mm.macro_avg.recall / n;
            mean.f1 += mm.macro_avg.f1 / n;
            mean.sensitivity += mm.macro_avg.sensitivity / n;
            mean.specificity += mm.macro_avg.specificity / n;
            mean.icbhi_score += mm.macro_avg.icbhi_score / n;
        }
        MetricsReport {
            confusion_matrix: m.confusion_matrix,
            per_class: m.per_class,
            overall_accuracy: m.overall_accuracy,
            macro_avg: m.macro_avg,
            fold_count: folds.len(),
            mean_of_folds: mean,
            folds,
            warnings,
            config: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("report JSON: {e}")))
    }

    /// Plain-text rendering: per-class table, aggregates, confusion matrix.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10}{:>10}{:>11}{:>8}{:>10}{:>13}{:>13}{:>8}",
            "Class", "Accuracy", "Precision", "Recall", "F1 Score", "Sensitivity", "Specificity", "ICBHI"
        );
        let row = |s: &mut String, name: &str, m: &ClassMetrics| {
            let _ = writeln!(
                s,
                "{:<10}{:>9.2}%{:>11.2}{:>8.2}{:>10.2}{:>13.2}{:>13.2}{:>8.2}",
                name,
                m.accuracy * 100.0,
                m.precision,
                m.recall,
                m.f1,
                m.sensitivity,
                m.specificity,
                m.icbhi_score
            );
        };
        for (c, m) in self.per_class.iter() {
            row(&mut s, c.name(), m);
        }
        row(&mut s, "Macro", &self.macro_avg);
        let _ = writeln!(s, "\nOverall accuracy (pooled): {:.4}", self.overall_accuracy);
        if self.fold_count > 0 {
            let m = &self.mean_of_folds;
            let _ = writeln!(s, "Mean of {} folds:", self.fold_count);
            let _ = writeln!(
                s,
                "  accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  icbhi {:.4}",
                m.accuracy, m.precision, m.recall, m.f1, m.icbhi_score
            );
            for f in &self.folds {
                let _ = writeln!(
                    s,
                    "  fold {}: n_test {:>5}  accuracy {:.4}",
                    f.fold, f.n_test, f.metrics.overall_accuracy
                );
            }
        }
        let _ = writeln!(s, "\nConfusion matrix (rows = true, columns = predicted):\n{}", self.confusion_matrix);
        if !self.warnings.is_empty() {
            let _ = writeln!(s, "\nWarnings:");
            for w in &self.warnings {
                let _ = writeln!(s, "  {w}");
            }
        }
        s
    }
}

/// Patient → fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub folds: BTreeMap<u32, usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_of(&self, patient: u32) -> Option<usize> {
        self.folds.get(&patient).copied()
    }

    pub fn patients_in(&self, fold: usize) -> Vec<u32> {
        self.folds.iter().filter(|(_, &f)| f == fold).map(|(&p, _)| p).collect()
    }
}

/// Per-patient cycle counts in ascending patient order.
fn patient_counts(patients: &[u32]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for &p in patients {
        *counts.entry(p).or_insert(0) += 1;
    }
    counts
}

fn shuffled_patients(counts: &BTreeMap<u32, usize>, seed: u64) -> Vec<u32> {
    let mut ids: Vec<u32> = counts.keys().copied().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

/// Assigns whole patients to `k` folds. Patients are shuffled by `seed`, then
/// each goes to the fold currently holding the fewest cycles (lowest index on ties).
/// `patients` holds the patient id of every cycle.
pub fn make_patient_folds(patients: &[u32], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let counts = patient_counts(patients);
    if counts.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} patients cannot fill {k} folds",
            counts.len()
        )));
    }
    let mut load = vec![0usize; k];
    let mut folds = BTreeMap::new();
    for p in shuffled_patients(&counts, seed) {
        let target = (0..k).min_by_key(|&f| (load[f], f)).expect("k >= 2");
        load[target] += counts[&p];
        folds.insert(p, target);
    }
    Ok(FoldAssignment { folds, k, seed })
}

/// Patient-level train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: BTreeSet<u32>,
    pub validation: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

impl Split {
    /// Cycle indices of `patients` falling in each partition.
    pub fn cycle_indices(&self, patients: &[u32]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
        for (i, p) in patients.iter().enumerate() {
            if self.test.contains(p) {
                te.push(i);
            } else if self.validation.contains(p) {
                va.push(i);
            } else {
                tr.push(i);
            }
        }
        (tr, va, te)
    }
}

/// Takes patients from the front of `order` until they hold at least a fifth
/// of `total` cycles, always leaving one patient behind.
fn take_fraction(order: &mut Vec<u32>, counts: &BTreeMap<u32, usize>, total: usize) -> BTreeSet<u32> {
    let mut taken = BTreeSet::new();
    let mut cycles = 0usize;
    while cycles * 5 < total && order.len() > 1 {
        let p = order.remove(0);
        cycles += counts[&p];
        taken.insert(p);
    }
    taken
}

/// 20 % of the cycles (by whole patients) to test, then 20 % of the remainder
/// to validation.
pub fn split_80_20(patients: &[u32], seed: u64) -> Result<Split> {
    let counts = patient_counts(patients);
    if counts.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "80/20 split with validation needs at least 5 patients, got {}",
            counts.len()
        )));
    }
    let mut order = shuffled_patients(&counts, seed);
    let test = take_fraction(&mut order, &counts, patients.len());
    let remaining: usize = order.iter().map(|p| counts[p]).sum();
    let validation = take_fraction(&mut order, &counts, remaining);
    Ok(Split {
        train: order.into_iter().collect(),
        validation,
        test,
    })
}

/// One precomputed feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub patient_id: u32,
    pub label: ClassLabel,
    pub features: Vec<f32>,
}

/// Trains on k−1 folds and scores the held-out fold, for every fold. The
/// feature scaler is fitted on the training folds only.
pub fn cross_validate(
    records: &[FeatureRecord],
    k: usize,
    train: &TrainConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let patients: Vec<u32> = records.iter().map(|r| r.patient_id).collect();
    let assignment = make_patient_folds(&patients, k, seed)?;
    let mut warnings = Vec::new();
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (test, rest): (Vec<&FeatureRecord>, Vec<&FeatureRecord>) = records
            .iter()
            .partition(|r| assignment.fold_of(r.patient_id) == Some(fold));
        let train_set: Vec<(Vec<f32>, ClassLabel)> =
            rest.iter().map(|r| (r.features.clone(), r.label)).collect();
        let (clf, _) = train_classifier(&train_set, train)
            .map_err(|e| Error::Data(format!("fold {fold}: {e}")))?;
        let mut cm = ConfusionMatrix::default();
        for r in &test {
            let (pred, _) = clf
                .predict_features(&r.features)
                .map_err(|e| Error::Data(format!("fold {fold}: {e}")))?;
            cm.add(r.label, pred);
        }
        let mut fold_warnings = Vec::new();
        let metrics = MatrixMetrics::from_matrix(&cm, &mut fold_warnings);
        warnings.extend(fold_warnings.into_iter().map(|w| format!("fold {fold}: {w}")));
        folds.push(FoldReport {
            fold,
            n_train: rest.len(),
            n_test: test.len(),
            test_patients: assignment.patients_in(fold),
            metrics,
        });
    }
    let report = MetricsReport::from_folds(folds, warnings);
    if report.confusion_matrix.total() != records.len() as u64 {
        return Err(Error::Invariant(format!(
            "pooled matrix holds {} cycles, dataset has {}",
            report.confusion_matrix.total(),
            records.len()
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassLabel::*;

    /// Confusion matrix as printed: rows Normal, Wheezes, Crackle, Both.
    pub(crate) const REFERENCE_MATRIX: [[u64; 4]; 4] = [
        [706, 5, 5, 4],
        [5, 163, 9, 4],
        [10, 6, 356, 7],
        [6, 3, 5, 86],
    ];

    #[test]
    fn building_matrices() {
        assert_eq!(confusion_matrix([]).total(), 0);
        let cm = confusion_matrix(ClassLabel::ALL.iter().map(|&c| (c, c)));
        assert_eq!(cm.trace(), 4);
        assert_eq!(cm.total(), 4);
        let cm = confusion_matrix([(Wheezes, Crackles)]);
        assert_eq!(cm.counts[1][2], 1);
        let reference = ConfusionMatrix::from_report_rows(REFERENCE_MATRIX);
        assert_eq!(reference.total(), 1380);
        assert_eq!(reference.trace(), 1311);
        assert_eq!(reference.get(Crackles, Normal), 10);
    }

    #[test]
    fn reference_matrix_one_vs_rest() {
        let cm = ConfusionMatrix::from_report_rows(REFERENCE_MATRIX);
        assert_eq!(one_vs_rest(&cm, Normal), BinaryCounts { tp: 706, fn_: 14, fp: 21, tn: 639 });
        assert_eq!(one_vs_rest(&cm, Wheezes), BinaryCounts { tp: 163, fn_: 18, fp: 14, tn: 1185 });
        assert_eq!(one_vs_rest(&ConfusionMatrix::default(), Both), BinaryCounts::default());
    }

    #[test]
    fn reference_matrix_rates() {
        let cm = ConfusionMatrix::from_report_rows(REFERENCE_MATRIX);
        assert!((accuracy(&cm).value - 1311.0 / 1380.0).abs() < 1e-12);
        let b = one_vs_rest(&cm, Normal);
        assert!((sensitivity(&b).value - 0.9806).abs() < 5e-5);
        assert!((specificity(&b).value - 0.9682).abs() < 5e-5);
        assert!((precision(&b).value - 0.9711).abs() < 5e-5);
        let s = icbhi_score(sensitivity(&b).value, specificity(&b).value);
        assert!((s - 0.9744).abs() < 5e-5);
        assert!((false_alarm(&b).value - (1.0 - specificity(&b).value)).abs() < 1e-15);
        assert_eq!(recall(&b), sensitivity(&b));

        // Per-class accuracy column of the per-class results table.
        let mut w = Vec::new();
        for (c, want) in [(Normal, 0.9746), (Wheezes, 0.9768), (Crackles, 0.9696), (Both, 0.9790)] {
            let m = ClassMetrics::for_class(&cm, c, &mut w);
            assert!((m.accuracy - want).abs() < 5e-5, "{c}: {}", m.accuracy);
        }
        assert!(w.is_empty());
    }

    #[test]
    fn icbhi_arithmetic() {
        assert!((icbhi_score(0.8, 0.9) - 0.85).abs() < 1e-15);
    }

    #[test]
    fn degenerate_rates_warn() {
        let cm = confusion_matrix([(Normal, Normal), (Normal, Normal)]);
        let mut w = Vec::new();
        let m = ClassMetrics::for_class(&cm, Both, &mut w);
        assert_eq!(m.sensitivity, 0.0);
        assert_eq!(m.precision, 0.0);
        assert!(w.iter().any(|s| s.contains("Both: sensitivity")));
        let r = MetricsReport::from_matrix(&ConfusionMatrix::default());
        assert_eq!(r.overall_accuracy, 0.0);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn equal_patients_balance() {
        let patients: Vec<u32> = (0..10).flat_map(|p| [p; 3]).collect();
        let a = make_patient_folds(&patients, 5, 1).unwrap();
        for f in 0..5 {
            assert_eq!(a.patients_in(f).len(), 2);
        }
        assert_eq!(a, make_patient_folds(&patients, 5, 1).unwrap());
        assert!(make_patient_folds(&patients, 11, 1).is_err());
        assert!(make_patient_folds(&patients, 1, 1).is_err());
    }

    #[test]
    fn split_arithmetic() {
        let patients: Vec<u32> = (0..100).flat_map(|p| [p; 4]).collect();
        let s = split_80_20(&patients, 3).unwrap();
        assert_eq!((s.test.len(), s.validation.len(), s.train.len()), (20, 16, 64));
        assert!(s.train.is_disjoint(&s.test));
        assert!(s.train.is_disjoint(&s.validation));
        assert!(s.validation.is_disjoint(&s.test));
        assert_eq!(s, split_80_20(&patients, 3).unwrap());
        let (tr, va, te) = s.cycle_indices(&patients);
        assert_eq!((tr.len(), va.len(), te.len()), (256, 64, 80));
        assert!(split_80_20(&[1, 2, 3, 4], 0).is_err());
        let five = split_80_20(&[1, 2, 3, 4, 5], 0).unwrap();
        assert_eq!((five.test.len(), five.validation.len(), five.train.len()), (1, 1, 3));
    }

    fn separable_records(per_patient: usize, patients: u32) -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for p in 0..patients {
            for i in 0..per_patient {
                let label = ClassLabel::ALL[i % 4];
                let mut features = vec![0.0f32; 8];
                features[label.index()] = 1.0;
                features[4 + (p as usize % 4)] = 0.5;
                out.push(FeatureRecord { patient_id: p, label, features });
            }
        }
        out
    }

    #[test]
    fn cross_validation_bookkeeping() {
        let records = separable_records(4, 10);
        let cfg = TrainConfig { learning_rate: 0.5, epochs: 50, batch_size: 4, ..TrainConfig::default() };
        let r = cross_validate(&records, 5, &cfg, 9).unwrap();
        assert_eq!(r.fold_count, 5);
        assert_eq!(r.folds.len(), 5);
        assert_eq!(r.confusion_matrix.total(), 40);
        assert_eq!(r.folds.iter().map(|f| f.n_test).sum::<usize>(), 40);
        assert!(r.folds.iter().all(|f| f.n_train + f.n_test == 40));
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.mean_of_folds.accuracy, 1.0);
        assert_eq!(r, cross_validate(&records, 5, &cfg, 9).unwrap());
        let back = MetricsReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("Normal"));
        assert!(cross_validate(&records, 11, &cfg, 9).is_err());
    }

    #[test]
    fn json_keys() {
        let r = MetricsReport::from_matrix(&ConfusionMatrix::from_report_rows(REFERENCE_MATRIX));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["confusion_matrix", "per_class", "overall_accuracy", "macro", "folds", "warnings"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["confusion_matrix"][0][0], 706);
        assert!(v["per_class"]["Wheezes"]["icbhi_score"].is_f64());
    }

    fn arb_matrix() -> impl Strategy<Value = ConfusionMatrix> {
        prop::array::uniform4(prop::array::uniform4(0u64..500)).prop_map(ConfusionMatrix::from_report_rows)
    }

    proptest! {
        #[test]
        fn one_vs_rest_consistency(cm in arb_matrix()) {
            let tp_sum: u64 = ClassLabel::ALL.iter().map(|&c| one_vs_rest(&cm, c).tp).sum();
            prop_assert_eq!(tp_sum, cm.trace());
            for c in ClassLabel::REPORT_ORDER {
                let b = one_vs_rest(&cm, c);
                prop_assert_eq!(b.tp + b.fn_, cm.counts[c.report_index()].iter().sum::<u64>());
                prop_assert_eq!(b.total(), cm.total());
            }
            let acc = accuracy(&cm).value;
            prop_assert!((0.0..=1.0).contains(&acc));
            let diagonal = (0..4).all(|i| (0..4).all(|j| i == j || cm.counts[i][j] == 0));
            prop_assert_eq!(acc == 1.0, diagonal && cm.trace() > 0);
            let mut w = Vec::new();
            let m = MatrixMetrics::from_matrix(&cm, &mut w);
            for (_, cmx) in m.per_class.iter() {
                for v in [cmx.sensitivity, cmx.specificity, cmx.precision, cmx.f1, cmx.icbhi_score, cmx.false_alarm_rate] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn icbhi_symmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assert_eq!(icbhi_score(a, b), icbhi_score(b, a));
            prop_assert_eq!(icbhi_score(a, a), a);
        }

        #[test]
        fn folds_partition_patients(
            sizes in prop::collection::vec(1usize..6, 5..40),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let patients: Vec<u32> = sizes.iter().enumerate().flat_map(|(p, &n)| vec![p as u32; n]).collect();
            let a = make_patient_folds(&patients, k, seed).unwrap();
            prop_assert_eq!(a.folds.len(), sizes.len());
            for f in 0..k {
                prop_assert!(!a.patients_in(f).is_empty());
            }
        }
    }
}
