use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

const FRACTION_SLACK: f64 = 1e-9;

/// Per-class item counts for each split. Each class is apportioned on its
/// own: every split first gets `floor(f · n)`, then the items still owed
/// (up to `floor(Σf · n)`) go to the splits with the largest fractional
/// remainders, lower split index first on ties.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let total: f64 = fractions.iter().sum();
    let target = ((total * n as f64) * (1.0 + FRACTION_SLACK)).floor().min(n as f64) as usize;
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact
        .iter()
        .map(|x| (x * (1.0 + FRACTION_SLACK)).floor() as usize)
        .collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut owed = target.saturating_sub(counts.iter().sum());
    for &j in order.iter().cycle() {
        if owed == 0 {
            break;
        }
        counts[j] += 1;
        owed -= 1;
    }
    counts
}

/// Class-stratified split of item indices. Each returned list is sorted.
pub fn stratified_split_indices(
    labels: &[usize],
    classes: usize,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::Input(format!("split fractions must be positive: {fractions:?}")));
    }
    if fractions.iter().sum::<f64>() > 1.0 + FRACTION_SLACK {
        return Err(Error::Input(format!("split fractions sum above 1: {fractions:?}")));
    }
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Input(format!("label {y} outside {classes} classes")));
        }
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Vec::new(); fractions.len()];
    for (k, mut items) in by_class.into_iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        if items.len() < fractions.len() {
            return Err(Error::Input(format!(
                "class {k} has {} items, fewer than the {} splits",
                items.len(),
                fractions.len()
            )));
        }
        items.shuffle(&mut rng);
        let mut start = 0;
        for (split, count) in splits.iter_mut().zip(apportion(items.len(), fractions)) {
            split.extend_from_slice(&items[start..start + count]);
            start += count;
        }
    }
    for s in &mut splits {
        s.sort_unstable();
    }
    Ok(splits)
}

pub fn stratified_split<T: Scalar>(
    dataset: &ImageDataset<T>,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<ImageDataset<T>>> {
    stratified_split_indices(&dataset.labels, dataset.classes(), fractions, seed)?
        .iter()
        .enumerate()
        .map(|(j, idx)| {
            if idx.is_empty() {
                return Err(Error::Input(format!("split {j} would be empty")));
            }
            dataset.subset(idx)
        })
        .collect()
}

/// One index per line.
pub fn write_index_list(path: &Path, indices: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(indices.len() * 6);
    for i in indices {
        s.push_str(&i.to_string());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_index_list(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut offset = 0;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                offset: offset as u64,
                detail: format!("not an index: {t:?}"),
            })?);
        }
        offset += line.len();
    }
    Ok(out)
}
