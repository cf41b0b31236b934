//! Exhaustive oracles for link and weight selection on the smallest fabric
//! (2 layers, 2 scales, 1 channel: six links of nine weights).

use cnf_core::fabric::{Fabric, FabricDims, LinkId, Mode};
use cnf_core::pruning::{apply_event, ApplyOptions, Criterion, PruneEvent, ScoreTable};
use cnf_core::tape::Tape;
use cnf_core::Tensor;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::graph::{connected, rescan};

pub fn dims() -> FabricDims {
    FabricDims::for_resolution(2, 1, 2, 2).unwrap()
}

/// Lexicographically greatest membership vector (in rank order) among all
/// subsets accepted by `feasible`. Greedy selection over a downward-closed
/// family must produce exactly this set.
fn lex_max(ranked_len: usize, feasible: impl Fn(&[bool]) -> bool) -> Vec<bool> {
    let mut best: Option<Vec<bool>> = None;
    for bits in 0u64..(1 << ranked_len) {
        let member: Vec<bool> = (0..ranked_len).map(|i| bits >> i & 1 == 1).collect();
        if !feasible(&member) {
            continue;
        }
        // Element 0 is the lowest score, so it is the most significant.
        let better = match &best {
            None => true,
            Some(b) => (0..ranked_len).find(|&i| member[i] != b[i]).is_some_and(|i| member[i]),
        };
        if better {
            best = Some(member);
        }
    }
    best.expect("the empty set is always feasible")
}

/// `order` sorted by ascending score, ties kept in input order.
fn ranked<E: Copy>(scored: &[(E, f64)]) -> Vec<E> {
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| scored[a].1.partial_cmp(&scored[b].1).unwrap().then(a.cmp(&b)));
    idx.into_iter().map(|i| scored[i].0).collect()
}

pub fn probe_batches(rng: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, Vec<usize>)> {
    (0..2)
        .map(|_| {
            let x = Tensor::from_fn(&[3, 3, 2, 2], |_| rng.sample::<f64, _>(StandardNormal));
            let y = (0..3).map(|_| rng.random_range(0..2)).collect();
            (x, y)
        })
        .collect()
}

fn probe_loss(fabric: &Fabric<f64>, batch: &(Tensor<f64>, Vec<usize>)) -> f64 {
    let mut tape = Tape::new();
    let x = tape.input(batch.0.clone());
    let fw = fabric.forward(&mut tape, x, Mode::Probe).unwrap();
    let l = tape.softmax_cross_entropy(fw.logits, &batch.1).unwrap();
    tape.value(l).data()[0]
}

/// Per-weight scores of every alive link, with sensitivity gradients taken
/// by central differences.
pub fn oracle_scores(
    fabric: &Fabric<f64>,
    criterion: Criterion,
    batches: &[(Tensor<f64>, Vec<usize>)],
) -> Vec<Option<Vec<f64>>> {
    let mut f = fabric.clone();
    let h = 1e-6;
    fabric
        .links
        .iter()
        .map(|l| {
            if !l.alive {
                return None;
            }
            let w = fabric.params.get(l.block.conv).value().data().to_vec();
            Some(
                (0..w.len())
                    .map(|i| match criterion {
                        Criterion::Magnitude => w[i].abs(),
                        Criterion::Sensitivity => {
                            let mut total = 0.0;
                            for b in batches {
                                let conv = l.block.conv;
                                f.params.get_mut(conv).value_mut().data_mut()[i] = w[i] + h;
                                let up = probe_loss(&f, b);
                                f.params.get_mut(conv).value_mut().data_mut()[i] = w[i] - h;
                                let down = probe_loss(&f, b);
                                f.params.get_mut(conv).value_mut().data_mut()[i] = w[i];
                                total += (w[i] * (up - down) / (2.0 * h)).abs();
                            }
                            total / batches.len() as f64
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct OracleStats {
    pub instances: usize,
    pub links_checked: usize,
    pub weights_checked: usize,
}

/// One random instance. Returns a description of the first disagreement.
pub fn check_instance(seed: u64, criterion: Criterion, cascade_counts: bool) -> Result<OracleStats, String> {
    let ctx = format!("seed {seed} {criterion:?} cascade_counts={cascade_counts}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fabric = Fabric::<f64>::new(dims(), &mut rng).unwrap();
    // Leave one to three live entries per kernel so weight subsets stay
    // enumerable.
    for l in 0..fabric.links.len() {
        let conv = fabric.links[l].block.conv;
        let keep = rng.random_range(1..=3);
        let kill = sample(&mut rng, 9, 9 - keep);
        for i in kill {
            fabric.params.get_mut(conv).mask_position(i);
        }
    }
    let batches = probe_batches(&mut rng);
    let table = ScoreTable::build(&fabric, criterion, Some(&batches)).map_err(|e| e.to_string())?;
    let oracle = oracle_scores(&fabric, criterion, &batches);

    for (l, o) in oracle.iter().enumerate() {
        let t = table.weights(LinkId(l)).ok_or(format!("{ctx}: link {l} unscored"))?;
        for (a, b) in t.iter().zip(o.as_ref().unwrap()) {
            if (a - b).abs() > 1e-6 * a.abs().max(b.abs()).max(1e-3) {
                return Err(format!("{ctx}: link {l} weight score {a} vs oracle {b}"));
            }
        }
        let chi = o.as_ref().unwrap().iter().map(|s| s * s).sum::<f64>().sqrt();
        let got = table.link_score(LinkId(l)).unwrap();
        if (got - chi).abs() > 1e-6 * chi.max(1e-3) {
            return Err(format!("{ctx}: link {l} norm {got} vs oracle {chi}"));
        }
    }

    let grid = fabric.grid().clone();
    let edges: Vec<(usize, usize)> = grid
        .edges
        .iter()
        .map(|e| (grid.index(e.from), grid.index(e.to)))
        .collect();
    let (input, output) = (grid.index(grid.input()), grid.index(grid.output()));
    let n_links = edges.len();
    let event = PruneEvent {
        epoch: 1,
        links_to_remove: rng.random_range(0..=4),
        weights_to_remove: rng.random_range(0..=12),
    };
    let masks_before: Vec<Vec<bool>> = fabric
        .links
        .iter()
        .map(|l| (0..9).map(|i| fabric.params.get(l.block.conv).is_masked(i)).collect())
        .collect();

    let mut after = fabric.clone();
    let report = apply_event(
        &mut after,
        &event,
        &table,
        ApplyOptions {
            cascade_counts_toward_quota: cascade_counts,
        },
    )
    .map_err(|e| format!("{ctx}: {e}"))?;

    // Link stage.
    let link_rank = ranked(
        &(0..n_links)
            .map(|l| (l, table.link_score(LinkId(l)).unwrap()))
            .collect::<Vec<_>>(),
    );
    let removal = |member: &[bool]| {
        let mut alive = vec![true; n_links];
        for (r, &m) in member.iter().enumerate() {
            if m {
                alive[link_rank[r]] = false;
            }
        }
        alive
    };
    let quota = event.links_to_remove;
    let chosen = lex_max(n_links, |member| {
        let mut alive = removal(member);
        if !connected(&edges, &alive, input, output) {
            return false;
        }
        let picked = member.iter().filter(|&&m| m).count();
        if cascade_counts {
            picked + rescan(&edges, &mut alive, input, output) <= quota
        } else {
            picked <= quota
        }
    });
    let mut expected_alive = removal(&chosen);
    rescan(&edges, &mut expected_alive, input, output);
    if after.alive_flags() != expected_alive {
        return Err(format!(
            "{ctx}: quota {quota}, alive {:?} but oracle {:?}",
            after.alive_flags(),
            expected_alive
        ));
    }
    if !cascade_counts {
        let mut oracle_kills: Vec<usize> = (0..n_links).filter(|&r| chosen[r]).map(|r| link_rank[r]).collect();
        let mut kills: Vec<usize> = report.killed_links.iter().map(|l| l.0).collect();
        oracle_kills.sort_unstable();
        kills.sort_unstable();
        if kills != oracle_kills {
            return Err(format!("{ctx}: killed {kills:?} but oracle {oracle_kills:?}"));
        }
    }

    // Weight stage over the surviving links.
    let mut cands = Vec::new();
    for (l, alive) in expected_alive.iter().enumerate() {
        if !alive {
            continue;
        }
        let w = table.weights(LinkId(l)).unwrap();
        for i in 0..9 {
            if !masks_before[l][i] {
                cands.push(((l, i), w[i]));
            }
        }
    }
    let weight_rank = ranked(&cands);
    let live: Vec<usize> = (0..n_links)
        .map(|l| masks_before[l].iter().filter(|&&m| !m).count())
        .collect();
    let wq = event.weights_to_remove;
    let chosen = lex_max(weight_rank.len(), |member| {
        if member.iter().filter(|&&m| m).count() > wq {
            return false;
        }
        let mut taken = vec![0usize; n_links];
        for (r, &m) in member.iter().enumerate() {
            if m {
                taken[weight_rank[r].0] += 1;
            }
        }
        (0..n_links).all(|l| taken[l] < live[l] || taken[l] == 0)
    });
    let mut expected: Vec<(usize, usize)> = (0..weight_rank.len())
        .filter(|&r| chosen[r])
        .map(|r| weight_rank[r])
        .collect();
    let mut masked: Vec<(usize, usize)> = Vec::new();
    for l in 0..n_links {
        let p = after.params.get(after.links[l].block.conv);
        for i in 0..9 {
            if p.is_masked(i) && !masks_before[l][i] {
                masked.push((l, i));
            }
        }
    }
    expected.sort_unstable();
    masked.sort_unstable();
    if masked != expected {
        return Err(format!(
            "{ctx}: weight quota {wq}, masked {masked:?} but oracle {expected:?}"
        ));
    }
    Ok(OracleStats {
        instances: 1,
        links_checked: n_links,
        weights_checked: weight_rank.len(),
    })
}

pub fn run_suite(instances: u64) -> Result<OracleStats, String> {
    let mut total = OracleStats::default();
    for seed in 0..instances {
        for criterion in [Criterion::Magnitude, Criterion::Sensitivity] {
            for cascade_counts in [true, false] {
                let s = check_instance(seed, criterion, cascade_counts)?;
                total.instances += s.instances;
                total.links_checked += s.links_checked;
                total.weights_checked += s.weights_checked;
            }
        }
    }
    Ok(total)
}
