use serde::{Deserialize, Serialize};

use super::plan::PruneEvent;
use super::select::{link_condition, rank_ascending, select_prunable};
use super::{Criterion, ScoreTable};
use crate::error::{Error, Result};
use crate::fabric::{Fabric, LinkId};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplyOptions {
    /// Links removed by the cascade count toward the event's link quota.
    /// When false, exactly `links_to_remove` links are selected and the
    /// cascade removes extra links on top.
    #[serde(default = "yes")]
    pub cascade_counts_toward_quota: bool,
}

fn yes() -> bool {
    true
}

impl Default for ApplyOptions {
    fn default() -> Self {
        Self {
            cascade_counts_toward_quota: true,
        }
    }
}

/// Conv weight position inside a link's kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRef {
    pub link: LinkId,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub epoch: usize,
    pub criterion: Criterion,
    pub links_quota: usize,
    pub weights_quota: usize,
    /// Links chosen by the ranking, in rank order.
    pub killed_links: Vec<LinkId>,
    /// Links removed because they no longer sat on an input-output path.
    pub cascade_links: Vec<LinkId>,
    /// Lower-ranked links passed over by the connectivity or quota check.
    pub blocked_links: Vec<LinkId>,
    pub masked_weights: usize,
    /// Lower-ranked weights passed over because they were the last live
    /// entry of their kernel.
    pub blocked_weights: Vec<WeightRef>,
    pub links_shortfall: usize,
    pub weights_shortfall: usize,
    pub alive_links: usize,
    pub param_count: usize,
    pub live_params: usize,
    /// Accounting figure at the plan's target sparsity, filled by the caller.
    pub reported_params: Option<usize>,
}

impl PruneReport {
    pub fn links_removed(&self) -> usize {
        self.killed_links.len() + self.cascade_links.len()
    }

    pub fn is_partial(&self) -> bool {
        self.links_shortfall > 0 || self.weights_shortfall > 0
    }
}

/// Applies one pruning event: link stage (rank, connectivity check, kill,
/// cascade), then weight stage (global ranking over surviving links' conv
/// weights, masking that never empties a kernel).
///
/// `scores` must have been computed on the fabric's current alive set.
/// Unreachable quotas are not an error: the report carries the shortfall.
pub fn apply_event<T: Scalar>(
    fabric: &mut Fabric<T>,
    event: &PruneEvent,
    scores: &ScoreTable,
    opts: ApplyOptions,
) -> Result<PruneReport> {
    let grid = fabric.grid().clone();
    let mut alive = fabric.alive_flags();

    // Link stage.
    let mut scored = Vec::new();
    for l in fabric.alive_links() {
        scored.push((l.id, scores.link_score(l.id)?));
    }
    let ranked = rank_ascending(&scored);
    let quota = event.links_to_remove;
    let mut killed = Vec::new();
    let mut cascade = Vec::new();
    let mut blocked = Vec::new();
    if quota > 0 {
        if opts.cascade_counts_toward_quota {
            let mut removed = 0;
            for &e in &ranked {
                if removed >= quota {
                    break;
                }
                if !alive[e.0] {
                    continue;
                }
                let mut trial = alive.clone();
                trial[e.0] = false;
                if !grid.connected(&trial) {
                    blocked.push(e);
                    continue;
                }
                let extra = grid.cascade(&mut trial);
                if removed + 1 + extra.len() > quota {
                    blocked.push(e);
                    continue;
                }
                removed += 1 + extra.len();
                alive = trial;
                killed.push(e);
                cascade.extend(extra);
            }
        } else {
            let sel = select_prunable(&ranked, quota, |p, e| {
                let mut set = p.to_vec();
                set.push(e);
                link_condition(&grid, &alive, &set)
            });
            for &e in &sel.selected {
                alive[e.0] = false;
            }
            cascade = grid.cascade(&mut alive);
            killed = sel.selected;
            blocked = sel.blocked;
        }
    }
    for (link, &a) in fabric.links.iter_mut().zip(&alive) {
        link.alive = a;
    }
    if !fabric.is_connected() {
        return Err(Error::Usage("link stage disconnected the fabric".into()));
    }
    let links_removed = killed.len() + cascade.len();
    let links_shortfall = quota.saturating_sub(links_removed);

    // Weight stage.
    let wquota = event.weights_to_remove;
    let mut masked = 0;
    let mut blocked_weights = Vec::new();
    if wquota > 0 {
        let mut scored = Vec::new();
        let mut live = vec![0usize; fabric.links.len()];
        for l in fabric.alive_links() {
            let p = fabric.params.get(l.block.conv);
            let ws = scores
                .weights(l.id)
                .ok_or_else(|| Error::Usage(format!("link {} was not scored", l.id)))?;
            for (index, &s) in ws.iter().enumerate() {
                if !p.is_masked(index) {
                    scored.push((WeightRef { link: l.id, index }, s));
                    live[l.id.0] += 1;
                }
            }
        }
        let ranked = rank_ascending(&scored);
        let sel = select_prunable(&ranked, wquota, |_, w| {
            if live[w.link.0] >= 2 {
                live[w.link.0] -= 1;
                true
            } else {
                false
            }
        });
        for w in &sel.selected {
            let conv = fabric.links[w.link.0].block.conv;
            fabric.params.get_mut(conv).mask_position(w.index);
        }
        masked = sel.selected.len();
        blocked_weights = sel.blocked;
    }

    Ok(PruneReport {
        epoch: event.epoch,
        criterion: scores.criterion,
        links_quota: quota,
        weights_quota: wquota,
        killed_links: killed,
        cascade_links: cascade,
        blocked_links: blocked,
        masked_weights: masked,
        blocked_weights,
        links_shortfall,
        weights_shortfall: wquota - masked,
        alive_links: fabric.alive_count(),
        param_count: fabric.param_count().total,
        live_params: fabric.live_param_count(),
        reported_params: None,
    })
}
