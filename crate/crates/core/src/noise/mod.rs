//! Label noise and fitting indicators.
//!
//! Three noise types are supported: uniform flips (Type 1), class-dependent
//! flips through a transition matrix (Type 2), and labels produced by an
//! artificial annotator trained to a target error (Type 3, see
//! [`train_annotator`]). Clean labels are always carried alongside the given
//! labels so fitting can be measured afterwards.

mod annotator;

pub use annotator::{relabel_with_annotator, train_annotator, Annotator, AnnotatorConfig};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-9;

/// Clean and given labels of a set of items, aligned by index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub clean_labels: Vec<usize>,
    pub given_labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledSet {
    /// A noise-free set: given labels equal the clean ones.
    pub fn clean(labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::new(labels.clone(), labels, classes)
    }

    pub fn new(clean_labels: Vec<usize>, given_labels: Vec<usize>, classes: usize) -> Result<Self> {
        if clean_labels.len() != given_labels.len() {
            return Err(Error::shape(
                "labeled set",
                format!("{} clean labels, {} given", clean_labels.len(), given_labels.len()),
            ));
        }
        if let Some(&y) = clean_labels.iter().chain(&given_labels).find(|&&y| y >= classes) {
            return Err(Error::Input(format!("label {y} outside {classes} classes")));
        }
        Ok(Self {
            clean_labels,
            given_labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn mislabeled_count(&self) -> usize {
        self.clean_labels
            .iter()
            .zip(&self.given_labels)
            .filter(|(y, g)| y != g)
            .count()
    }

    pub fn mislabel_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.mislabeled_count() as f64 / self.len() as f64
    }

    /// `(items, flipped)` per clean class.
    pub fn flips_per_class(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(0, 0); self.classes];
        for (&y, &g) in self.clean_labels.iter().zip(&self.given_labels) {
            out[y].0 += 1;
            out[y].1 += usize::from(y != g);
        }
        out
    }

    fn with_given(&self, given_labels: Vec<usize>) -> Self {
        Self {
            clean_labels: self.clean_labels.clone(),
            given_labels,
            classes: self.classes,
        }
    }
}

/// Row-stochastic `K × K` matrix; row `i` is the distribution of the given
/// label for an item whose clean label is `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(t: TransitionMatrix) -> Self {
        t.rows
    }
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::Input("transition matrix is empty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Input(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::Input(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Input(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(classes: usize) -> Self {
        Self {
            rows: (0..classes)
                .map(|i| (0..classes).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// Keeps a label with probability `1 - p`, otherwise moves it to one of
    /// the other classes uniformly; the matrix form of uniform noise.
    pub fn symmetric(classes: usize, p: f64) -> Result<Self> {
        check_rate(p)?;
        if classes < 2 && p > 0.0 {
            return Err(Error::Input("symmetric flipping needs at least two classes".into()));
        }
        let off = if classes > 1 { p / (classes - 1) as f64 } else { 0.0 };
        Self::new(
            (0..classes)
                .map(|i| (0..classes).map(|j| if i == j { 1.0 - p } else { off }).collect())
                .collect(),
        )
    }

    /// Moves class `i` to class `i + 1 (mod K)` with probability `p`.
    pub fn pair_flip(classes: usize, p: f64) -> Result<Self> {
        check_rate(p)?;
        if classes < 2 && p > 0.0 {
            return Err(Error::Input("pair flipping needs at least two classes".into()));
        }
        let mut t = Self::identity(classes);
        for i in 0..classes {
            if classes > 1 {
                t.rows[i][i] = 1.0 - p;
                t.rows[i][(i + 1) % classes] = p;
            }
        }
        Ok(t)
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    fn sample(&self, from: usize, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let row = &self.rows[from];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // Rounding left u beyond the accumulated mass: take the last class
        // with positive probability.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(from)
    }
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Input(format!("noise rate {p} outside [0, 1]")));
    }
    Ok(())
}

/// Type 1: every item is flipped independently with probability `p` to a
/// uniformly chosen other class.
pub fn apply_uniform_noise(set: &LabeledSet, p: f64, seed: u64) -> Result<LabeledSet> {
    check_rate(p)?;
    let k = set.classes;
    if k < 2 && p > 0.0 {
        return Err(Error::Input("uniform noise needs at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let given = set
        .clean_labels
        .iter()
        .map(|&y| {
            if rng.random_bool(p) {
                let o = rng.random_range(0..k - 1);
                if o >= y {
                    o + 1
                } else {
                    o
                }
            } else {
                y
            }
        })
        .collect();
    Ok(set.with_given(given))
}

/// Type 2: each given label is drawn from the transition row of the item's
/// clean label.
pub fn apply_class_noise(set: &LabeledSet, t: &TransitionMatrix, seed: u64) -> Result<LabeledSet> {
    if t.classes() != set.classes {
        return Err(Error::Input(format!(
            "transition matrix is {0}x{0}, set has {1} classes",
            t.classes(),
            set.classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let given = set.clean_labels.iter().map(|&y| t.sample(y, &mut rng)).collect();
    Ok(set.with_given(given))
}

/// Clean fitting `|ŷ = y = ỹ| / |y = ỹ|` and noisy fitting
/// `|ŷ = ỹ ≠ y| / |y ≠ ỹ|`. A fraction whose denominator is empty is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittingReport {
    pub clean_fitting: Option<f64>,
    pub noisy_fitting: Option<f64>,
    pub clean_count: usize,
    pub clean_correct: usize,
    pub noisy_count: usize,
    pub noisy_fitted: usize,
}

pub fn fitting_report(predictions: &[usize], set: &LabeledSet) -> Result<FittingReport> {
    if predictions.len() != set.len() {
        return Err(Error::shape(
            "fitting report",
            format!("{} predictions for {} items", predictions.len(), set.len()),
        ));
    }
    let (mut cc, mut ck, mut nc, mut nf) = (0, 0, 0, 0);
    for ((&p, &y), &g) in predictions.iter().zip(&set.clean_labels).zip(&set.given_labels) {
        if y == g {
            cc += 1;
            ck += usize::from(p == y);
        } else {
            nc += 1;
            nf += usize::from(p == g);
        }
    }
    let frac = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(FittingReport {
        clean_fitting: frac(ck, cc),
        noisy_fitting: frac(nf, nc),
        clean_count: cc,
        clean_correct: ck,
        noisy_count: nc,
        noisy_fitted: nf,
    })
}

/// Plain-text sidecar: a header line, then `index clean given` per item.
pub fn write_noisy_labels(path: &Path, set: &LabeledSet) -> Result<()> {
    let mut s = String::from("# index clean given\n");
    for (i, (y, g)) in set.clean_labels.iter().zip(&set.given_labels).enumerate() {
        writeln!(s, "{i} {y} {g}").expect("writing to a String");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_noisy_labels(path: &Path, classes: usize) -> Result<LabeledSet> {
    let text = fs::read_to_string(path)?;
    let (mut clean, mut given) = (Vec::new(), Vec::new());
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        let err = |detail: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            detail,
        };
        if !t.is_empty() && !t.starts_with('#') {
            let f: Vec<usize> = t
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(format!("expected three integers, got {t:?}")))?;
            if f.len() != 3 {
                return Err(err(format!("expected three fields, got {}", f.len())));
            }
            if f[0] != clean.len() {
                return Err(err(format!("index {} out of order, expected {}", f[0], clean.len())));
            }
            if f[1] >= classes || f[2] >= classes {
                return Err(err(format!("label outside {classes} classes")));
            }
            clean.push(f[1]);
            given.push(f[2]);
        }
        offset += line.len();
    }
    LabeledSet::new(clean, given, classes)
}
