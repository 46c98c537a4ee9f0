//! Tree-structured VQ: the codebook grows by successive binary splits, each
//! refined by a two-codepoint Lloyd run confined to the parent's training cell.

use crate::error::{Error, Result};
use crate::scenario::{centroid, Point2};
use crate::vq::{count_distinct, lloyd_from, nearest_neighbor_partition, Placement};

/// Split perturbation as a fraction of the cell's per-coordinate sample std.
pub const PERTURBATION_FACTOR: f64 = 0.01;
const SUB_LLOYD_MAX_ITERS: usize = 50;
const SUB_LLOYD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TsvqNode {
    pub codepoint: Point2,
    /// Training-user indices assigned to this node.
    pub users: Vec<usize>,
    pub children: Option<[usize; 2]>,
    pub stage: usize,
    /// Sum of squared distances from the node's users to its codepoint.
    pub distortion: f64,
    /// Set on a node that could not be split into two distinct codepoints.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsvqTree {
    pub nodes: Vec<TsvqNode>,
    /// Leaf node ids in codebook order.
    pub leaves: Vec<usize>,
    /// Mean squared error of the leaf partition after each stage (stage 0 = root).
    pub stage_mse: Vec<f64>,
}

/// Result of encoding one point by greedy descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoded {
    /// Position of the reached leaf in [`TsvqTree::leaves`].
    pub leaf: usize,
    pub distance_evals: usize,
}

/// The two perturbed children of a codepoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub children: [Point2; 2],
    pub degenerate: bool,
}

/// Per-coordinate sample standard deviation (n − 1 denominator).
pub fn sample_std(points: &[Point2]) -> Point2 {
    if points.len() < 2 {
        return Point2::ORIGIN;
    }
    let mean = centroid(points).expect("nonempty");
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| {
        let d = *p - mean;
        (sx + d.x * d.x, sy + d.y * d.y)
    });
    let n1 = (points.len() - 1) as f64;
    Point2::new((sx / n1).sqrt(), (sy / n1).sqrt())
}

/// Splits `codepoint` into `codepoint ± 0.01·std(cell)`. A cell with fewer than two
/// distinct users yields both children on the codepoint, flagged degenerate.
pub fn split_codepoint(codepoint: Point2, cell: &[Point2]) -> Split {
    if count_distinct(cell) < 2 {
        return Split {
            children: [codepoint, codepoint],
            degenerate: true,
        };
    }
    let delta = sample_std(cell) * PERTURBATION_FACTOR;
    Split {
        children: [codepoint + delta, codepoint - delta],
        degenerate: false,
    }
}

fn sse(users: &[Point2], idx: &[usize], q: Point2) -> f64 {
    idx.iter().map(|&k| users[k].dist_sq(q)).sum()
}

/// Grows a tree with `m` leaves from `users`.
///
/// Every stage splits all current leaves while the budget allows a full stage;
/// otherwise the leaves with the largest within-cell distortion are split until
/// exactly `m` leaves exist.
pub fn tsvq_build(users: &[Point2], m: usize) -> Result<TsvqTree> {
    if m == 0 {
        return Err(Error::config("num_aps", "must be at least 1"));
    }
    let available = count_distinct(users);
    if m > available {
        return Err(Error::TooFewDistinctPoints { requested: m, available });
    }
    let all: Vec<usize> = (0..users.len()).collect();
    let root_point = centroid(users).expect("nonempty training set");
    let total = users.len() as f64;
    let mut nodes = vec![TsvqNode {
        codepoint: root_point,
        distortion: sse(users, &all, root_point),
        users: all,
        children: None,
        stage: 0,
        degenerate: false,
    }];
    let mut leaves = vec![0usize];
    let mut stage_mse = vec![nodes[0].distortion / total];
    let mut stage = 0;

    while leaves.len() < m {
        stage += 1;
        let n_split = (m - leaves.len()).min(leaves.len());
        let mut chosen: Vec<usize> = (0..leaves.len()).collect();
        if n_split < leaves.len() {
            chosen.sort_by(|&a, &b| {
                nodes[leaves[b]]
                    .distortion
                    .total_cmp(&nodes[leaves[a]].distortion)
                    .then(a.cmp(&b))
            });
            chosen.truncate(n_split);
            chosen.sort_unstable();
        }

        let mut next_leaves = Vec::with_capacity(leaves.len() + n_split);
        let mut chosen_iter = chosen.iter().peekable();
        for (pos, &id) in leaves.iter().enumerate() {
            if chosen_iter.peek() != Some(&&pos) {
                next_leaves.push(id);
                continue;
            }
            chosen_iter.next();
            let cell_idx = nodes[id].users.clone();
            let cell: Vec<Point2> = cell_idx.iter().map(|&k| users[k]).collect();
            let split = split_codepoint(nodes[id].codepoint, &cell);
            let (codepoints, sets) = if split.degenerate {
                (split.children, [cell_idx.clone(), Vec::new()])
            } else {
                let refined = lloyd_from(
                    &cell,
                    Placement::new(split.children.to_vec()),
                    SUB_LLOYD_MAX_ITERS,
                    SUB_LLOYD_TOL,
                );
                let part = nearest_neighbor_partition(&cell, &refined.placement);
                let sets = [
                    part.cells[0].iter().map(|&j| cell_idx[j]).collect(),
                    part.cells[1].iter().map(|&j| cell_idx[j]).collect(),
                ];
                let q = refined.placement.aps();
                ([q[0], q[1]], sets)
            };
            let mut child_ids = [0usize; 2];
            for (c, (q, set)) in codepoints.into_iter().zip(sets).enumerate() {
                child_ids[c] = nodes.len();
                nodes.push(TsvqNode {
                    codepoint: q,
                    distortion: sse(users, &set, q),
                    users: set,
                    children: None,
                    stage,
                    degenerate: false,
                });
            }
            nodes[id].children = Some(child_ids);
            nodes[id].degenerate = split.degenerate;
            next_leaves.extend(child_ids);
        }
        leaves = next_leaves;
        stage_mse.push(leaves.iter().map(|&id| nodes[id].distortion).sum::<f64>() / total);
    }

    Ok(TsvqTree {
        nodes,
        leaves,
        stage_mse,
    })
}

/// Leaf codepoints of a freshly grown `m`-leaf tree.
pub fn tsvq_run(users: &[Point2], m: usize) -> Result<Placement> {
    Ok(tsvq_build(users, m)?.placement())
}

impl TsvqTree {
    pub fn placement(&self) -> Placement {
        Placement::new(self.leaves.iter().map(|&id| self.nodes[id].codepoint).collect())
    }

    /// Leaf user sets in codebook order.
    pub fn leaf_cells(&self) -> Vec<&[usize]> {
        self.leaves.iter().map(|&id| self.nodes[id].users.as_slice()).collect()
    }

    /// Pairs of sibling leaves, as positions in the codebook.
    pub fn sibling_pairs(&self) -> Vec<(usize, usize)> {
        let pos = |id: usize| self.leaves.iter().position(|&l| l == id);
        self.nodes
            .iter()
            .filter_map(|n| n.children)
            .filter_map(|[a, b]| Some((pos(a)?, pos(b)?)))
            .collect()
    }

    /// Greedy root-to-leaf descent, taking the nearer child at each level
    /// (ties to the first child).
    pub fn encode(&self, p: Point2) -> Encoded {
        let mut id = 0;
        let mut evals = 0;
        while let Some([a, b]) = self.nodes[id].children {
            let da = p.dist_sq(self.nodes[a].codepoint);
            let db = p.dist_sq(self.nodes[b].codepoint);
            evals += 2;
            id = if db < da { b } else { a };
        }
        let leaf = self
            .leaves
            .iter()
            .position(|&l| l == id)
            .expect("descent ends on a leaf");
        Encoded {
            leaf,
            distance_evals: evals,
        }
    }
}

pub fn tsvq_encode(tree: &TsvqTree, p: Point2) -> Encoded {
    tree.encode(p)
}
