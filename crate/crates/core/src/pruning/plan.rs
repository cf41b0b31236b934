//! Pruning schedules and sparsity accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::{FabricDims, Grid};

/// Epochs (1-based, after that epoch's training) of the iterative schedule.
pub const ITERATIVE_EPOCHS: [usize; 8] = [5, 15, 25, 35, 45, 55, 65, 75];
pub const EARLY_EPOCH: usize = 5;
pub const LATE_EPOCH: usize = 75;

/// Relative slack for products like `0.05 * 5_373_120` that are integers in
/// exact arithmetic but not in binary floating point.
const ROUNDING_SLACK: f64 = 1e-9;

pub fn floor_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    (x + x.abs() * ROUNDING_SLACK).floor() as usize
}

pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    (x - x.abs() * ROUNDING_SLACK).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Early,
    Late,
    Iterative,
}

impl Strategy {
    pub fn epochs(self) -> Vec<usize> {
        match self {
            Strategy::Early => vec![EARLY_EPOCH],
            Strategy::Late => vec![LATE_EPOCH],
            Strategy::Iterative => ITERATIVE_EPOCHS.to_vec(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Early => "early",
            Strategy::Late => "late",
            Strategy::Iterative => "iterative",
        }
    }
}

/// What the weight sparsity is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightBase {
    /// Conv weights of the links that survive link pruning.
    #[default]
    SurvivingLinks,
    /// Conv weights of the full fabric.
    AllLinks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanOptions {
    #[serde(default)]
    pub weight_base: WeightBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    pub links_to_remove: usize,
    pub weights_to_remove: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityBudget {
    pub total_links: usize,
    pub min_links_kept: usize,
    pub links_kept: usize,
    /// Conv weights of the links kept after link pruning.
    pub surviving_conv_weights: usize,
    pub weights_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub strategy: Strategy,
    pub sparsity: f64,
    pub budget: SparsityBudget,
    pub events: Vec<PruneEvent>,
}

impl PrunePlan {
    pub fn total_links_to_remove(&self) -> usize {
        self.events.iter().map(|e| e.links_to_remove).sum()
    }

    pub fn total_weights_to_remove(&self) -> usize {
        self.events.iter().map(|e| e.weights_to_remove).sum()
    }
}

/// `total` split into `parts` integers differing by at most one, larger
/// parts first.
fn split_even(total: usize, parts: usize) -> Vec<usize> {
    let (q, r) = (total / parts, total % parts);
    (0..parts).map(|i| q + usize::from(i < r)).collect()
}

fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(sparsity > 0.0 && sparsity < 1.0) {
        return Err(Error::Input(format!("sparsity must lie in (0, 1), got {sparsity}")));
    }
    Ok(())
}

/// Sparsity `s` keeps `max(ceil(s * links), longest linear path)` links and
/// `ceil(s * W)` conv weights, where `W` follows `opts.weight_base`.
pub fn build_plan(strategy: Strategy, sparsity: f64, dims: &FabricDims, opts: PlanOptions) -> Result<PrunePlan> {
    check_sparsity(sparsity)?;
    dims.validate()?;
    let grid = Grid::new(dims.layers, dims.scales);
    let total_links = grid.edges.len();
    let min_links_kept = grid.longest_linear_path(&vec![true; total_links]);
    let links_kept = ceil_fraction(sparsity, total_links)
        .max(min_links_kept)
        .min(total_links);
    let per_link = dims.conv_weights_per_link();
    let surviving_conv_weights = links_kept * per_link;
    let base = match opts.weight_base {
        WeightBase::SurvivingLinks => surviving_conv_weights,
        WeightBase::AllLinks => total_links * per_link,
    };
    let weights_kept = ceil_fraction(sparsity, base)
        .max(links_kept)
        .min(surviving_conv_weights);
    let links_remove = total_links - links_kept;
    let weights_remove = surviving_conv_weights - weights_kept;

    let epochs = strategy.epochs();
    let lq = split_even(links_remove, epochs.len());
    let wq = split_even(weights_remove, epochs.len());
    let events = epochs
        .into_iter()
        .zip(lq.into_iter().zip(wq))
        .map(|(epoch, (l, w))| PruneEvent {
            epoch,
            links_to_remove: l,
            weights_to_remove: w,
        })
        .collect();
    Ok(PrunePlan {
        strategy,
        sparsity,
        budget: SparsityBudget {
            total_links,
            min_links_kept,
            links_kept,
            surviving_conv_weights,
            weights_kept,
        },
        events,
    })
}

/// Accounting figure for a fabric pruned to sparsity `s`:
/// `floor(s * link parameters) + stem + head`, with link parameters taken
/// over the full fabric (conv, bias and BN).
pub fn reported_param_count(dims: &FabricDims, sparsity: f64) -> Result<usize> {
    check_sparsity(sparsity)?;
    let full = dims.full_breakdown();
    Ok(floor_fraction(sparsity, full.links) + dims.fixed_params())
}
