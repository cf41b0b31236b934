use crate::fabric::{Grid, LinkId};

/// Elements ordered by ascending score. The sort is stable, so equal scores
/// keep their input order.
pub fn rank_ascending<E: Copy>(scored: &[(E, f64)]) -> Vec<E> {
    let mut v: Vec<_> = scored.to_vec();
    v.sort_by(|a, b| a.1.total_cmp(&b.1));
    v.into_iter().map(|(e, _)| e).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection<E> {
    /// Chosen elements, in rank order.
    pub selected: Vec<E>,
    /// Elements passed over because the condition refused them.
    pub blocked: Vec<E>,
}

/// Greedy selection: walk `ranked` from the lowest score up, adding each
/// element for which `condition(selected_so_far, element)` holds, until
/// `n` elements are chosen or the ranking is exhausted.
pub fn select_prunable<E: Copy>(ranked: &[E], n: usize, mut condition: impl FnMut(&[E], E) -> bool) -> Selection<E> {
    let mut selected = Vec::with_capacity(n.min(ranked.len()));
    let mut blocked = Vec::new();
    for &e in ranked {
        if selected.len() == n {
            break;
        }
        if condition(&selected, e) {
            selected.push(e);
        } else {
            blocked.push(e);
        }
    }
    Selection { selected, blocked }
}

/// True iff removing every link of `proposed` from the `alive` set still
/// leaves a path from input to output.
pub fn link_condition(grid: &Grid, alive: &[bool], proposed: &[LinkId]) -> bool {
    let mut a = alive.to_vec();
    for l in proposed {
        a[l.0] = false;
    }
    grid.connected(&a)
}

/// True iff masking `position` of a kernel whose live entries are `live`
/// leaves at least one live entry.
pub fn weight_condition(live: &[bool], position: usize) -> bool {
    live[position] && live.iter().enumerate().any(|(i, &v)| v && i != position)
}
