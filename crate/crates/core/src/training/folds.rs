//! Folds stratified jointly by label and site.
//!
//! Fold `f` takes, from what is still unassigned, a controlled rounding of
//! `remaining / (k - f)`: every (label, site) cell, every label total, every
//! site total and the fold size are each rounded to an adjacent integer. The
//! rounding is found as an integral feasible circulation. Because each fold
//! takes the floor or ceiling of an even share of what remains, every count
//! across all folds stays within `{floor(n / k), ceil(n / k)}`.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::SliceRandom;

use crate::dataset::Manifest;
use crate::error::{LuminaError, Result};
use crate::rng::rng_for;

/// Fold index per manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// `(subject_id, fold)` in manifest order.
    pub assignments: Vec<(String, usize)>,
}

impl FoldPlan {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(id, _)| id == subject_id)
            .map(|&(_, f)| f)
    }

    /// Manifest row indices held out in fold `f`.
    pub fn test_indices(&self, f: usize) -> Vec<usize> {
        self.indices_where(|g| g == f)
    }

    /// Manifest row indices used for training when fold `f` is held out.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        self.indices_where(|g| g != f)
    }

    fn indices_where(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, (_, g))| keep(*g))
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-fold subject count.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &(_, f) in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn make_folds(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(LuminaError::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    for label in [0u8, 1] {
        let count = manifest.rows.iter().filter(|r| r.label == label).count();
        if count < k {
            return Err(LuminaError::InsufficientClassSize { label, count, k });
        }
    }

    let sites: Vec<&str> = {
        let mut s: Vec<&str> = manifest.rows.iter().map(|r| r.site.as_str()).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let site_index: HashMap<&str, usize> = sites.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    let mut rng = rng_for(seed, "folds");
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, row) in manifest.rows.iter().enumerate() {
        cells
            .entry((row.label as usize, site_index[row.site.as_str()]))
            .or_default()
            .push(i);
    }
    for members in cells.values_mut() {
        members.shuffle(&mut rng);
    }

    let mut remaining = vec![vec![0usize; sites.len()]; 2];
    for (&(l, s), members) in &cells {
        remaining[l][s] = members.len();
    }

    let mut fold_of = vec![usize::MAX; manifest.len()];
    for f in 0..k {
        let take = controlled_rounding(&remaining, k - f);
        for (l, row) in take.iter().enumerate() {
            for (s, &n) in row.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let members = cells.get_mut(&(l, s)).expect("cell has members");
                for _ in 0..n {
                    fold_of[members.pop().expect("rounding within cell")] = f;
                }
                remaining[l][s] -= n;
            }
        }
    }
    debug_assert!(fold_of.iter().all(|&f| f < k));
    Ok(FoldPlan {
        k,
        assignments: manifest
            .rows
            .iter()
            .zip(fold_of)
            .map(|(r, f)| (r.subject_id.clone(), f))
            .collect(),
    })
}

fn floor_ceil(n: usize, r: usize) -> (usize, usize) {
    (n / r, n.div_ceil(r))
}

/// Round `counts / r` so cells, rows, columns and total each land on an
/// adjacent integer.
fn controlled_rounding(counts: &[Vec<usize>], r: usize) -> Vec<Vec<usize>> {
    let n_rows = counts.len();
    let n_cols = counts.first().map_or(0, Vec::len);
    // nodes: 0 source, 1 sink, rows, cols, then super source/sink
    let row_node = |l: usize| 2 + l;
    let col_node = |s: usize| 2 + n_rows + s;
    let n_nodes = 2 + n_rows + n_cols + 2;
    let (ss, tt) = (n_nodes - 2, n_nodes - 1);
    let mut g = FlowGraph::new(n_nodes);
    let mut excess = vec![0i64; n_nodes];
    let mut bounded = |g: &mut FlowGraph, u: usize, v: usize, (lo, hi): (usize, usize)| {
        excess[v] += lo as i64;
        excess[u] -= lo as i64;
        (g.add_edge(u, v, (hi - lo) as i64), lo)
    };

    let total: usize = counts.iter().flatten().sum();
    bounded(&mut g, 1, 0, floor_ceil(total, r));
    for (l, row) in counts.iter().enumerate() {
        bounded(&mut g, 0, row_node(l), floor_ceil(row.iter().sum(), r));
    }
    for s in 0..n_cols {
        let col: usize = counts.iter().map(|row| row[s]).sum();
        bounded(&mut g, col_node(s), 1, floor_ceil(col, r));
    }
    let mut cell_edges = vec![vec![(0usize, 0usize); n_cols]; n_rows];
    for (l, row) in counts.iter().enumerate() {
        for (s, &n) in row.iter().enumerate() {
            cell_edges[l][s] = bounded(&mut g, row_node(l), col_node(s), floor_ceil(n, r));
        }
    }

    let mut demand = 0;
    for (v, &e) in excess.iter().enumerate() {
        if e > 0 {
            g.add_edge(ss, v, e);
            demand += e;
        } else if e < 0 {
            g.add_edge(v, tt, -e);
        }
    }
    let flow = g.max_flow(ss, tt);
    assert_eq!(flow, demand, "controlled rounding is always feasible");

    cell_edges
        .iter()
        .map(|row| row.iter().map(|&(e, lo)| lo + g.flow_on(e) as usize).collect())
        .collect()
}

/// Edmonds-Karp on a small residual graph.
struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i64>,
    original: Vec<i64>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            original: Vec::new(),
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, cap: i64) -> usize {
        let id = self.to.len();
        self.to.extend([v, u]);
        self.cap.extend([cap, 0]);
        self.original.extend([cap, 0]);
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
        id
    }

    fn flow_on(&self, e: usize) -> i64 {
        self.original[e] - self.cap[e]
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let mut total = 0;
        loop {
            let mut parent_edge = vec![usize::MAX; self.adj.len()];
            let mut queue = VecDeque::from([s]);
            let mut seen = vec![false; self.adj.len()];
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if !seen[v] && self.cap[e] > 0 {
                        seen[v] = true;
                        parent_edge[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut push = i64::MAX;
            let mut v = t;
            while v != s {
                let e = parent_edge[v];
                push = push.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = parent_edge[v];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                v = self.to[e ^ 1];
            }
            total += push;
        }
    }
}
