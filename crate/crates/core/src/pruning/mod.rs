//! Link and weight pruning for fabrics.
//!
//! Pruning runs in two stages per event. Whole links are removed first,
//! ranked by the Euclidean norm of their per-weight criterion values and
//! kept only if the input stays connected to the output; links left without
//! a purpose are then cascaded away. The surviving links' conv weights are
//! then ranked globally and masked, never emptying a kernel entirely. The
//! stem and head are never candidates.

mod apply;
mod plan;
mod select;

pub use apply::{apply_event, ApplyOptions, PruneReport};
pub use plan::{
    build_plan, ceil_fraction, floor_fraction, reported_param_count, PlanOptions, PruneEvent, PrunePlan,
    SparsityBudget, Strategy, WeightBase, ITERATIVE_EPOCHS,
};
pub use select::{link_condition, rank_ascending, select_prunable, weight_condition, Selection};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::{Fabric, LinkId, Mode};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `|w|`; needs no data.
    Magnitude,
    /// `|w · dL/dw|`; needs a gradient source.
    Sensitivity,
}

impl Criterion {
    pub fn needs_data(self) -> bool {
        self == Criterion::Sensitivity
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Magnitude => "magnitude",
            Criterion::Sensitivity => "sensitivity",
        }
    }
}

pub fn score_weight(criterion: Criterion, w: f64, grad: Option<f64>) -> Result<f64> {
    match criterion {
        Criterion::Magnitude => Ok(w.abs()),
        Criterion::Sensitivity => grad
            .map(|g| (w * g).abs())
            .ok_or_else(|| Error::Usage("sensitivity criterion needs a gradient".into())),
    }
}

/// Euclidean norm of a link's per-weight scores.
pub fn link_norm(weight_scores: &[f64]) -> f64 {
    weight_scores.iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// Per-weight criterion values for the conv kernel of every alive link.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub criterion: Criterion,
    per_link: Vec<Option<Vec<f64>>>,
}

impl ScoreTable {
    pub fn magnitude<T: Scalar>(fabric: &Fabric<T>) -> Self {
        let per_link = fabric
            .links
            .iter()
            .map(|l| {
                l.alive.then(|| {
                    fabric
                        .params
                        .get(l.block.conv)
                        .value()
                        .data()
                        .iter()
                        .map(|w| w.to_f64().unwrap_or(0.0).abs())
                        .collect()
                })
            })
            .collect();
        Self {
            criterion: Criterion::Magnitude,
            per_link,
        }
    }

    /// One pass over `batches` in probe mode (batch-statistics BN, running
    /// statistics untouched, no optimizer step). The score of each weight is
    /// the mean over batches of `|w · dL_b/dw|`.
    pub fn sensitivity<T: Scalar>(fabric: &Fabric<T>, batches: &[(Tensor<T>, Vec<usize>)]) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::Usage("sensitivity scoring needs at least one batch".into()));
        }
        let mut acc: Vec<Option<Vec<f64>>> = fabric
            .links
            .iter()
            .map(|l| l.alive.then(|| vec![0.0; fabric.dims.conv_weights_per_link()]))
            .collect();
        for (images, labels) in batches {
            let mut tape = Tape::new();
            let x = tape.input(images.clone());
            let fw = fabric.forward(&mut tape, x, Mode::Probe)?;
            let loss = tape.softmax_cross_entropy(fw.logits, labels)?;
            let grads = tape.backward(loss)?;
            for &(lid, kvar) in &fw.link_kernels {
                let (Some(slot), Some(g)) = (acc[lid.0].as_mut(), grads.get(kvar)) else {
                    continue;
                };
                let w = fabric.params.get(fabric.link(lid).block.conv).value();
                for ((s, wv), gv) in slot.iter_mut().zip(w.data()).zip(g.data()) {
                    *s += score_weight(Criterion::Sensitivity, wv.to_f64().unwrap_or(0.0), gv.to_f64())?;
                }
            }
        }
        let n = batches.len() as f64;
        for s in acc.iter_mut().flatten() {
            s.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Self {
            criterion: Criterion::Sensitivity,
            per_link: acc,
        })
    }

    pub fn build<T: Scalar>(
        fabric: &Fabric<T>,
        criterion: Criterion,
        batches: Option<&[(Tensor<T>, Vec<usize>)]>,
    ) -> Result<Self> {
        match criterion {
            Criterion::Magnitude => Ok(Self::magnitude(fabric)),
            Criterion::Sensitivity => {
                let b = batches.ok_or_else(|| Error::Usage("sensitivity criterion needs a gradient source".into()))?;
                Self::sensitivity(fabric, b)
            }
        }
    }

    pub fn weights(&self, link: LinkId) -> Option<&[f64]> {
        self.per_link.get(link.0).and_then(|s| s.as_deref())
    }

    /// χ(link): norm of the link's per-weight scores (conv weights only).
    pub fn link_score(&self, link: LinkId) -> Result<f64> {
        self.weights(link)
            .map(link_norm)
            .ok_or_else(|| Error::Usage(format!("link {link} is dead or was not scored")))
    }
}

/// Scores a single link directly from the fabric. Sensitivity needs a
/// precomputed table.
pub fn score_link<T: Scalar>(
    criterion: Criterion,
    fabric: &Fabric<T>,
    link: LinkId,
    sensitivity: Option<&ScoreTable>,
) -> Result<f64> {
    let l = fabric.link(link);
    if !l.alive {
        return Err(Error::Usage(format!("link {link} is dead")));
    }
    match criterion {
        Criterion::Magnitude => {
            let w = fabric.params.get(l.block.conv).value();
            let s: Vec<f64> = w.data().iter().map(|v| v.to_f64().unwrap_or(0.0).abs()).collect();
            Ok(link_norm(&s))
        }
        Criterion::Sensitivity => sensitivity
            .filter(|t| t.criterion == Criterion::Sensitivity)
            .ok_or_else(|| Error::Usage("sensitivity criterion needs gradient scores".into()))?
            .link_score(link),
    }
}
