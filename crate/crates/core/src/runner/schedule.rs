use crate::error::{Error, Result};
use crate::pruning::{PruneEvent, PrunePlan};

/// Reference epoch count the default milestones and prune epochs refer to.
pub const REFERENCE_EPOCHS: usize = 200;
pub const REFERENCE_MILESTONES: [usize; 2] = [80, 120];

/// Learning rate for 1-based `epoch`: `base / 10^k` where `k` counts the
/// milestones already passed (training after epoch 80 uses the first
/// division).
pub fn lr_at(epoch: usize, base_lr: f64, milestones: &[usize]) -> f64 {
    let passed = milestones.iter().filter(|&&m| epoch > m).count();
    base_lr / 10f64.powi(passed as i32)
}

/// `epoch · to / from`, rounded half up.
pub fn scale_epoch(epoch: usize, from: usize, to: usize) -> usize {
    (2 * epoch * to + from) / (2 * from)
}

/// A plan and milestones rescaled to a different epoch budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSchedule {
    pub milestones: Vec<usize>,
    pub plan: Option<PrunePlan>,
    pub warnings: Vec<String>,
}

/// Rescales milestones and prune epochs from `from` to `to` epochs. Prune
/// epochs are clamped to `[1, to]`; events landing on the same epoch are
/// merged by summing their quotas.
pub fn scale_schedule(
    milestones: &[usize],
    plan: Option<&PrunePlan>,
    from: usize,
    to: usize,
) -> Result<ScaledSchedule> {
    if from == 0 || to == 0 {
        return Err(Error::Input(format!("cannot rescale between {from} and {to} epochs")));
    }
    if milestones.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Input(format!("milestones not sorted: {milestones:?}")));
    }
    let mut warnings = Vec::new();
    let milestones: Vec<usize> = milestones.iter().map(|&m| scale_epoch(m, from, to)).collect();
    let plan = plan.map(|p| {
        let mut events: Vec<PruneEvent> = Vec::with_capacity(p.events.len());
        for e in &p.events {
            let epoch = scale_epoch(e.epoch, from, to).clamp(1, to);
            match events.last_mut() {
                Some(last) if last.epoch == epoch => {
                    warnings.push(format!(
                        "prune epochs {} and earlier both map to epoch {epoch}; quotas merged",
                        e.epoch
                    ));
                    last.links_to_remove += e.links_to_remove;
                    last.weights_to_remove += e.weights_to_remove;
                }
                _ => events.push(PruneEvent { epoch, ..*e }),
            }
        }
        PrunePlan { events, ..p.clone() }
    });
    Ok(ScaledSchedule {
        milestones,
        plan,
        warnings,
    })
}
