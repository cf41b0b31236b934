//! Randomized pruning sequences checked against independent graph oracles.

use cnf_core::fabric::{Fabric, FabricDims, LinkId};
use cnf_core::pruning::{apply_event, build_plan, ApplyOptions, PlanOptions, ScoreTable, Strategy, WeightBase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy)]
pub struct SequenceSpec {
    pub layers: usize,
    pub scales: usize,
    pub channels: usize,
    pub strategy: Strategy,
    pub sparsity: f64,
    pub cascade_counts: bool,
    pub all_links_base: bool,
    pub seed: u64,
}

pub const STRATEGIES: [Strategy; 3] = [Strategy::Early, Strategy::Iterative, Strategy::Late];

pub fn random_spec(seed: u64) -> SequenceSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SequenceSpec {
        layers: rng.random_range(2..=5),
        scales: rng.random_range(2..=4),
        channels: rng.random_range(1..=2),
        strategy: STRATEGIES[rng.random_range(0..3)],
        sparsity: rng.random_range(0.01..0.95),
        cascade_counts: rng.random_bool(0.7),
        all_links_base: rng.random_bool(0.3),
        seed,
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SequenceStats {
    pub events: usize,
    pub unblocked_link_events: usize,
    pub unblocked_weight_events: usize,
}

/// Alive links lying on some input-to-output path, by depth-first search
/// over the link list (no use of the grid's own reachability).
fn on_some_path(edges: &[(usize, usize)], alive: &[bool], input: usize, output: usize, nodes: usize) -> Vec<bool> {
    let search = |forward: bool| {
        let mut seen = vec![false; nodes];
        let start = if forward { input } else { output };
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for (i, &(a, b)) in edges.iter().enumerate() {
                let (src, dst) = if forward { (a, b) } else { (b, a) };
                if alive[i] && src == u && !seen[dst] {
                    seen[dst] = true;
                    stack.push(dst);
                }
            }
        }
        seen
    };
    let (fwd, bwd) = (search(true), search(false));
    edges
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| alive[i] && fwd[a] && bwd[b])
        .collect()
}

/// Repeatedly removes any alive link whose source has no alive in-link (and
/// is not the input) or whose target has no alive out-link (and is not the
/// output), rescanning the whole list until nothing changes.
pub fn rescan(edges: &[(usize, usize)], alive: &mut [bool], input: usize, output: usize) -> usize {
    let mut removed = 0;
    loop {
        let mut changed = false;
        for i in 0..edges.len() {
            if !alive[i] {
                continue;
            }
            let (a, b) = edges[i];
            let fed = a == input || edges.iter().enumerate().any(|(j, e)| alive[j] && e.1 == a);
            let drained = b == output || edges.iter().enumerate().any(|(j, e)| alive[j] && e.0 == b);
            if !fed || !drained {
                alive[i] = false;
                removed += 1;
                changed = true;
            }
        }
        if !changed {
            return removed;
        }
    }
}

/// Whether a directed path of alive links joins input to output.
pub fn connected(edges: &[(usize, usize)], alive: &[bool], input: usize, output: usize) -> bool {
    let mut seen = vec![input];
    let mut stack = vec![input];
    while let Some(u) = stack.pop() {
        for (i, &(a, b)) in edges.iter().enumerate() {
            if alive[i] && a == u && !seen.contains(&b) {
                seen.push(b);
                stack.push(b);
            }
        }
    }
    seen.contains(&output)
}

/// Simulated training between events: every weight moves a little; masked
/// positions stay at zero.
fn jiggle(fabric: &mut Fabric<f32>, rng: &mut ChaCha8Rng) {
    let convs: Vec<_> = fabric.links.iter().map(|l| l.block.conv).collect();
    for id in convs {
        let p = fabric.params.get_mut(id);
        for v in p.value_mut().data_mut() {
            *v += 0.3 * rng.sample::<f32, _>(StandardNormal);
        }
        p.apply_mask();
    }
}

pub fn run_sequence(spec: &SequenceSpec) -> Result<SequenceStats, String> {
    let dims = FabricDims {
        layers: spec.layers,
        scales: spec.scales,
        channels: spec.channels,
        resolution: 1 << (spec.scales - 1),
        classes: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6A11);
    let mut fabric = Fabric::<f32>::new(dims, &mut rng).map_err(|e| e.to_string())?;
    let opts = PlanOptions {
        weight_base: if spec.all_links_base {
            WeightBase::AllLinks
        } else {
            WeightBase::SurvivingLinks
        },
    };
    let plan = build_plan(spec.strategy, spec.sparsity, &dims, opts).map_err(|e| e.to_string())?;
    let apply = ApplyOptions {
        cascade_counts_toward_quota: spec.cascade_counts,
    };
    let grid = fabric.grid().clone();
    let node = |n| grid.index(n);
    let edges: Vec<(usize, usize)> = grid.edges.iter().map(|e| (node(e.from), node(e.to))).collect();
    let (input, output, nodes) = (node(grid.input()), node(grid.output()), grid.node_count());
    let fixed = fabric.fixed_snapshot();
    let per_link = dims.conv_weights_per_link();

    let mut stats = SequenceStats::default();
    for event in &plan.events {
        jiggle(&mut fabric, &mut rng);
        let before = fabric.alive_count();
        let scores = ScoreTable::magnitude(&fabric);
        let report = apply_event(&mut fabric, event, &scores, apply).map_err(|e| e.to_string())?;
        stats.events += 1;
        let alive = fabric.alive_flags();
        let ctx = format!("{spec:?} event {}", event.epoch);

        let paths = on_some_path(&edges, &alive, input, output, nodes);
        if !paths.iter().any(|&p| p) {
            return Err(format!("{ctx}: input no longer reaches output"));
        }
        if let Some(i) = (0..alive.len()).find(|&i| alive[i] && !paths[i]) {
            return Err(format!("{ctx}: alive link {i} lies on no input-output path"));
        }
        let mut rescanned = alive.clone();
        if rescan(&edges, &mut rescanned, input, output) != 0 {
            return Err(format!("{ctx}: rescanning oracle removes further links"));
        }
        if !grid.dangling(&alive).is_empty() {
            return Err(format!("{ctx}: grid reports dangling links"));
        }
        if before - fabric.alive_count() != report.links_removed() {
            return Err(format!("{ctx}: report disagrees with alive count"));
        }

        for l in fabric.alive_links() {
            let p = fabric.params.get(l.block.conv);
            let live = (0..per_link).filter(|&i| !p.is_masked(i)).count();
            if live == 0 || p.value().data().iter().all(|&w| w == 0.0) {
                return Err(format!("{ctx}: link {} has an all-zero conv matrix", l.id));
            }
        }

        if report.blocked_links.is_empty() && event.links_to_remove > 0 {
            stats.unblocked_link_events += 1;
            let exact = if spec.cascade_counts {
                report.links_removed() == event.links_to_remove
            } else {
                report.killed_links.len() == event.links_to_remove
            };
            if !exact {
                return Err(format!(
                    "{ctx}: unblocked link quota {} but removed {} (+{} cascade)",
                    event.links_to_remove,
                    report.killed_links.len(),
                    report.cascade_links.len()
                ));
            }
        }
        if spec.cascade_counts && report.links_removed() > event.links_to_remove {
            return Err(format!("{ctx}: removed more links than the quota"));
        }
        if report.blocked_weights.is_empty() && event.weights_to_remove > 0 {
            stats.unblocked_weight_events += 1;
            if report.masked_weights != event.weights_to_remove {
                return Err(format!(
                    "{ctx}: unblocked weight quota {} but masked {}",
                    event.weights_to_remove, report.masked_weights
                ));
            }
        }
        if report.masked_weights > event.weights_to_remove {
            return Err(format!("{ctx}: masked more weights than the quota"));
        }
    }
    if fabric.fixed_snapshot() != fixed {
        return Err(format!("{spec:?}: stem or head changed"));
    }
    let dead: Vec<LinkId> = fabric.links.iter().filter(|l| !l.alive).map(|l| l.id).collect();
    if spec.cascade_counts && dead.len() > plan.total_links_to_remove() {
        return Err(format!("{spec:?}: more links dead than planned"));
    }
    Ok(stats)
}
