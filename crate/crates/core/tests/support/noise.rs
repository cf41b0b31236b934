//! Flip-rate bounds and hand-computed fitting cases.

use cnf_core::noise::{
    apply_class_noise, apply_uniform_noise, fitting_report, FittingReport, LabeledSet, TransitionMatrix,
};

pub const LABELS: usize = 10_000;
pub const CLASSES: usize = 10;

pub fn balanced_clean() -> LabeledSet {
    LabeledSet::clean((0..LABELS).map(|i| i % CLASSES).collect(), CLASSES).unwrap()
}

#[derive(Debug, Clone)]
pub struct RateCheck {
    pub name: String,
    pub flips: usize,
    pub expected: f64,
    pub sigma: f64,
}

impl RateCheck {
    fn new(name: String, set: &LabeledSet, p: f64) -> Self {
        let n = set.len() as f64;
        Self {
            name,
            flips: set.mislabeled_count(),
            expected: n * p,
            sigma: (n * p * (1.0 - p)).sqrt(),
        }
    }

    pub fn within_3_sigma(&self) -> bool {
        (self.flips as f64 - self.expected).abs() <= 3.0 * self.sigma
    }
}

/// Flip counts of uniform, symmetric-matrix and pair-flip noise on
/// 10,000 balanced labels at several rates and seeds.
pub fn rate_checks() -> Vec<RateCheck> {
    let clean = balanced_clean();
    let mut out = Vec::new();
    for (i, &p) in [0.05, 0.1, 0.2, 0.4].iter().enumerate() {
        for seed in [11u64, 12] {
            let seed = seed + 100 * i as u64;
            let u = apply_uniform_noise(&clean, p, seed).unwrap();
            out.push(RateCheck::new(format!("uniform p={p} seed={seed}"), &u, p));
            let t = TransitionMatrix::symmetric(CLASSES, p).unwrap();
            let s = apply_class_noise(&clean, &t, seed).unwrap();
            out.push(RateCheck::new(format!("symmetric matrix p={p} seed={seed}"), &s, p));
            let t = TransitionMatrix::pair_flip(CLASSES, p).unwrap();
            let f = apply_class_noise(&clean, &t, seed).unwrap();
            out.push(RateCheck::new(format!("pair flip p={p} seed={seed}"), &f, p));
        }
    }
    out
}

pub struct FittingCase {
    pub name: &'static str,
    pub clean: Vec<usize>,
    pub given: Vec<usize>,
    pub predictions: Vec<usize>,
    pub clean_fitting: Option<f64>,
    pub noisy_fitting: Option<f64>,
}

/// Ten-item cases with fractions worked out by hand.
pub fn fitting_cases() -> Vec<FittingCase> {
    vec![
        // Noisy items 2, 5, 7. Clean items fitted: 0, 3, 6, 8, 9 of seven.
        // Noisy items fitted to the given label: 2 and 5; item 7 is
        // predicted as its clean label, which does not count.
        FittingCase {
            name: "mixed",
            clean: vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 0],
            given: vec![0, 0, 1, 1, 1, 2, 2, 0, 2, 0],
            predictions: vec![0, 1, 1, 1, 0, 2, 2, 2, 2, 0],
            clean_fitting: Some(5.0 / 7.0),
            noisy_fitting: Some(2.0 / 3.0),
        },
        // No noise: clean fitting is plain accuracy, noisy fitting undefined.
        FittingCase {
            name: "noise free",
            clean: vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0],
            given: vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0],
            predictions: vec![0, 1, 2, 0, 1, 2, 1, 2, 0, 1],
            clean_fitting: Some(6.0 / 10.0),
            noisy_fitting: None,
        },
        // Every item flipped: clean fitting undefined.
        FittingCase {
            name: "all flipped",
            clean: vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1],
            given: vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
            predictions: vec![1, 1, 0, 0, 0, 0, 0, 1, 1, 1],
            clean_fitting: None,
            noisy_fitting: Some(4.0 / 10.0),
        },
        // A model that memorised every noisy label and nothing else.
        FittingCase {
            name: "memorised noise",
            clean: vec![0, 1, 2, 3, 0, 1, 2, 3, 0, 1],
            given: vec![1, 1, 2, 3, 0, 2, 2, 3, 3, 1],
            predictions: vec![1, 0, 0, 0, 1, 2, 0, 0, 3, 0],
            clean_fitting: Some(0.0),
            noisy_fitting: Some(1.0),
        },
    ]
}

pub fn evaluate_case(case: &FittingCase) -> FittingReport {
    let classes = case.clean.iter().chain(&case.given).max().unwrap() + 1;
    let set = LabeledSet::new(case.clean.clone(), case.given.clone(), classes).unwrap();
    fitting_report(&case.predictions, &set).unwrap()
}

pub fn case_matches(case: &FittingCase) -> bool {
    let r = evaluate_case(case);
    r.clean_fitting == case.clean_fitting && r.noisy_fitting == case.noisy_fitting
}
