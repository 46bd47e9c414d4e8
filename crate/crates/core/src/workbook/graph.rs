//! Static dependency graph between formula cells and the cells they read.

use std::collections::{HashMap, HashSet, VecDeque};

use super::Pos;

#[derive(Debug, Clone, Default)]
pub struct DependencyGraph {
    /// formula cell -> cells it reads (deduplicated, sorted)
    precedents: HashMap<Pos, Vec<Pos>>,
    /// cell -> formula cells reading it; exact inverse of `precedents`
    dependents: HashMap<Pos, Vec<Pos>>,
    order: Vec<Pos>,
    rank: HashMap<Pos, u32>,
    cyclic: HashSet<Pos>,
    stale: bool,
}

impl DependencyGraph {
    pub fn set_precedents(&mut self, cell: Pos, mut reads: Vec<Pos>) {
        self.remove(cell);
        reads.sort_unstable();
        reads.dedup();
        for &p in &reads {
            self.dependents.entry(p).or_default().push(cell);
        }
        self.precedents.insert(cell, reads);
        self.stale = true;
    }

    /// Drops `cell` as a formula cell. Edges into it from other formulas stay.
    pub fn remove(&mut self, cell: Pos) {
        let Some(old) = self.precedents.remove(&cell) else {
            return;
        };
        for p in old {
            if let Some(deps) = self.dependents.get_mut(&p) {
                deps.retain(|d| *d != cell);
                if deps.is_empty() {
                    self.dependents.remove(&p);
                }
            }
        }
        self.stale = true;
    }

    pub fn precedents_of(&self, cell: Pos) -> &[Pos] {
        self.precedents.get(&cell).map_or(&[], Vec::as_slice)
    }

    pub fn dependents_of(&self, cell: Pos) -> &[Pos] {
        self.dependents.get(&cell).map_or(&[], Vec::as_slice)
    }

    pub fn is_formula(&self, cell: Pos) -> bool {
        self.precedents.contains_key(&cell)
    }

    pub fn is_cyclic(&self, cell: Pos) -> bool {
        self.cyclic.contains(&cell)
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    /// Formula cells in evaluation order. Call [`Self::rebuild_order`] first if stale.
    pub fn order(&self) -> &[Pos] {
        &self.order
    }

    pub fn rank(&self, cell: Pos) -> u32 {
        self.rank.get(&cell).copied().unwrap_or(u32::MAX)
    }

    /// `seeds` plus every cell that transitively reads one of them.
    pub fn transitive_dependents(&self, seeds: impl IntoIterator<Item = Pos>) -> HashSet<Pos> {
        let mut seen: HashSet<Pos> = HashSet::new();
        let mut queue: VecDeque<Pos> = VecDeque::new();
        for s in seeds {
            if seen.insert(s) {
                queue.push_back(s);
            }
        }
        while let Some(p) = queue.pop_front() {
            for &d in self.dependents_of(p) {
                if seen.insert(d) {
                    queue.push_back(d);
                }
            }
        }
        seen
    }

    /// Recomputes the evaluation order and the set of cells on cycles
    /// (strongly connected components with more than one member, or a
    /// self-reference), using an iterative Tarjan walk.
    pub fn rebuild_order(&mut self) {
        let mut nodes: Vec<Pos> = self.precedents.keys().copied().collect();
        nodes.sort_unstable();
        let index_of: HashMap<Pos, u32> = nodes.iter().enumerate().map(|(i, p)| (*p, i as u32)).collect();
        let adjacency: Vec<Vec<u32>> = nodes
            .iter()
            .map(|p| {
                self.precedents[p]
                    .iter()
                    .filter_map(|q| index_of.get(q).copied())
                    .collect()
            })
            .collect();

        let components = tarjan(&adjacency);
        self.order.clear();
        self.rank.clear();
        self.cyclic.clear();
        for comp in components {
            let on_cycle = comp.len() > 1 || adjacency[comp[0] as usize].contains(&comp[0]);
            let mut members: Vec<Pos> = comp.iter().map(|&i| nodes[i as usize]).collect();
            members.sort_unstable();
            for p in members {
                if on_cycle {
                    self.cyclic.insert(p);
                }
                self.rank.insert(p, self.order.len() as u32);
                self.order.push(p);
            }
        }
        self.stale = false;
    }

    #[cfg(test)]
    pub fn check_inverse(&self) -> bool {
        let mut forward: HashSet<(Pos, Pos)> = HashSet::new();
        for (cell, reads) in &self.precedents {
            for r in reads {
                forward.insert((*cell, *r));
            }
        }
        let mut backward: HashSet<(Pos, Pos)> = HashSet::new();
        for (read, cells) in &self.dependents {
            for c in cells {
                if !backward.insert((*c, *read)) {
                    return false;
                }
            }
        }
        forward == backward
    }
}

/// Strongly connected components, each emitted only after every component it
/// has edges into. Edges point from a cell to what it reads, so the output is
/// a valid evaluation order.
fn tarjan(adjacency: &[Vec<u32>]) -> Vec<Vec<u32>> {
    const UNVISITED: u32 = u32::MAX;
    let n = adjacency.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut next_index = 0u32;
    let mut out = Vec::new();
    // (node, next edge to explore)
    let mut call: Vec<(u32, usize)> = Vec::new();

    for root in 0..n as u32 {
        if index[root as usize] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        while let Some(&mut (v, ref mut edge)) = call.last_mut() {
            let vi = v as usize;
            if *edge == 0 && index[vi] == UNVISITED {
                index[vi] = next_index;
                low[vi] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[vi] = true;
            }
            if let Some(&w) = adjacency[vi].get(*edge) {
                *edge += 1;
                let wi = w as usize;
                if index[wi] == UNVISITED {
                    call.push((w, 0));
                } else if on_stack[wi] {
                    low[vi] = low[vi].min(index[wi]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                let pi = parent as usize;
                low[pi] = low[pi].min(low[vi]);
            }
            if low[vi] == index[vi] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w as usize] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                out.push(comp);
            }
        }
    }
    out
}
