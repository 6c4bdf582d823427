//! Index construction: breadth-first growth of the codebook tree.

use rayon::prelude::*;

use super::distance::{distance_sq_unchecked, NormMode, OpCount};
use super::kmeans::{blocks, kmeans2, nearest, seed_node, KmeansParams};
use super::tree::{stop_check, Assignment, LeafReason, TsvqNode, TsvqParams, TsvqTree, FORMAT_VERSION};
use super::TsvqError;
use crate::store::DescriptorStore;
use crate::vector::{Centroid, SparseVector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    /// Lloyd iterations summed over all splits.
    pub kmeans_iterations: u64,
    pub assign_ops: OpCount,
}

struct Work {
    node: u64,
    depth: usize,
    members: Vec<u32>,
}

struct Split {
    centroids: [Centroid; 2],
    members: [Vec<u32>; 2],
    wcss: [f64; 2],
    iterations: usize,
    ops: OpCount,
}

enum Step {
    Leaf(LeafReason),
    Split(Split),
}

fn mean_of(points: &[SparseVector], members: &[u32], dim: usize) -> Vec<f64> {
    let partial: Vec<Vec<f64>> = blocks(members)
        .map(|b| {
            let mut acc = vec![0.0; dim];
            for &i in b {
                points[i as usize].add_into(&mut acc);
            }
            acc
        })
        .collect();
    let mut sum = vec![0.0; dim];
    for p in partial {
        for (a, v) in sum.iter_mut().zip(p) {
            *a += v;
        }
    }
    let n = members.len() as f64;
    sum.iter_mut().for_each(|v| *v /= n);
    sum
}

fn wcss_of(points: &[SparseVector], members: &[u32], c: &Centroid) -> f64 {
    let partial: Vec<f64> = blocks(members)
        .map(|b| {
            let mut ops = OpCount::default();
            b.iter().map(|&i| distance_sq_unchecked(&points[i as usize], c, NormMode::Cached, &mut ops)).sum()
        })
        .collect();
    partial.into_iter().sum()
}

fn split(points: &[SparseVector], work: &Work, node: &TsvqNode, params: &TsvqParams, mode: NormMode) -> Result<Step, TsvqError> {
    if let Some(reason) = stop_check(work.members.len(), node.wcss, work.depth, params) {
        return Ok(Step::Leaf(reason));
    }
    let seeds = match seed_node(points, &work.members, &node.centroid) {
        Ok(s) => s,
        Err(TsvqError::Degenerate) => return Ok(Step::Leaf(LeafReason::Degenerate)),
        Err(e) => return Err(e),
    };
    let kp = KmeansParams { tol: params.kmeans_tol, max_iter: params.kmeans_max_iter, mode };
    let km = match kmeans2(points, &work.members, seeds, &kp) {
        Ok(k) => k,
        Err(TsvqError::Degenerate) => return Ok(Step::Leaf(LeafReason::Degenerate)),
        Err(e) => return Err(e),
    };
    // Relabel with the stored (f32) centroids, exactly as encode will.
    let centroids = [Centroid::quantized(&km.centroids[0]), Centroid::quantized(&km.centroids[1])];
    let labelled: Vec<(Vec<u32>, Vec<u32>, [f64; 2])> = blocks(&work.members)
        .map(|b| {
            let mut ops = OpCount::default();
            let (mut m0, mut m1, mut w) = (Vec::new(), Vec::new(), [0.0; 2]);
            for &i in b {
                let (k, d) = nearest(&points[i as usize], &centroids, NormMode::Cached, &mut ops);
                w[k] += d;
                if k == 0 { m0.push(i) } else { m1.push(i) }
            }
            (m0, m1, w)
        })
        .collect();
    let mut members = [Vec::new(), Vec::new()];
    let mut wcss = [0.0; 2];
    for (m0, m1, w) in labelled {
        members[0].extend(m0);
        members[1].extend(m1);
        wcss[0] += w[0];
        wcss[1] += w[1];
    }
    if members[0].is_empty() || members[1].is_empty() {
        return Ok(Step::Leaf(LeafReason::Degenerate));
    }
    Ok(Step::Split(Split { centroids, members, wcss, iterations: km.iterations, ops: km.ops }))
}

/// Grows the tree over `points`. Returns the tree, the leaf of every point
/// (by position) and work counters.
pub fn build_tree(
    points: &[SparseVector],
    params: &TsvqParams,
    mode: NormMode,
) -> Result<(TsvqTree, Vec<u64>, BuildStats), TsvqError> {
    params.validate()?;
    let first = points.first().ok_or(TsvqError::EmptyArchive)?;
    let dim = first.dim();
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(TsvqError::InvalidInput(format!("mixed dimensions {dim} and {}", p.dim())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.num_partitions.max(1))
        .build()
        .map_err(|e| TsvqError::InvalidParams(e.to_string()))?;

    pool.install(|| {
        let all: Vec<u32> = (0..points.len() as u32).collect();
        let root_centroid = Centroid::quantized(&mean_of(points, &all, dim));
        let root = TsvqNode {
            node_id: 0,
            parent: None,
            codeword: String::new(),
            member_count: all.len() as u64,
            wcss: wcss_of(points, &all, &root_centroid),
            centroid: root_centroid,
            children: None,
            leaf_reason: None,
        };
        let mut nodes = vec![root];
        let mut stats = BuildStats::default();
        let mut leaf_of = vec![0u64; points.len()];
        let mut frontier = vec![Work { node: 0, depth: 0, members: all }];

        while !frontier.is_empty() {
            let steps: Vec<Result<Step, TsvqError>> = frontier
                .par_iter()
                .map(|w| split(points, w, &nodes[w.node as usize], params, mode))
                .collect();
            let mut next = Vec::new();
            for (w, step) in frontier.into_iter().zip(steps) {
                match step? {
                    Step::Leaf(reason) => {
                        nodes[w.node as usize].leaf_reason = Some(reason);
                        for &i in &w.members {
                            leaf_of[i as usize] = w.node;
                        }
                    }
                    Step::Split(s) => {
                        stats.kmeans_iterations += s.iterations as u64;
                        stats.assign_ops += s.ops;
                        let base = nodes.len() as u64;
                        let parent_code = nodes[w.node as usize].codeword.clone();
                        nodes[w.node as usize].children = Some([base, base + 1]);
                        let Split { centroids, members, wcss, .. } = s;
                        for (bit, ((centroid, members), wcss)) in
                            centroids.into_iter().zip(members).zip(wcss).enumerate()
                        {
                            let id = base + bit as u64;
                            nodes.push(TsvqNode {
                                node_id: id,
                                parent: Some(w.node),
                                codeword: format!("{parent_code}{bit}"),
                                centroid,
                                member_count: members.len() as u64,
                                wcss,
                                children: None,
                                leaf_reason: None,
                            });
                            next.push(Work { node: id, depth: w.depth + 1, members });
                        }
                    }
                }
            }
            frontier = next;
        }
        let tree = TsvqTree { params: *params, dim, nodes, total_points: points.len() as u64, version: FORMAT_VERSION };
        Ok((tree, leaf_of, stats))
    })
}

/// Builds the index over every descriptor in the store, read as
/// `num_partitions` partitions.
pub fn build_index(store: &DescriptorStore, params: &TsvqParams) -> Result<(TsvqTree, Assignment), TsvqError> {
    let (tree, assignment, _) = build_index_with(store, params, NormMode::Cached)?;
    Ok((tree, assignment))
}

pub fn build_index_with(
    store: &DescriptorStore,
    params: &TsvqParams,
    mode: NormMode,
) -> Result<(TsvqTree, Assignment, BuildStats), TsvqError> {
    let mut ids = Vec::new();
    let mut points = Vec::new();
    for part in store.scan_partitions(params.num_partitions.max(1))? {
        for d in part {
            ids.push(d.tile_id);
            points.push(d.vector);
        }
    }
    if points.is_empty() {
        return Err(TsvqError::EmptyArchive);
    }
    let (tree, leaf_of, stats) = build_tree(&points, params, mode)?;
    let assignment = Assignment { leaves: ids.into_iter().zip(leaf_of).collect() };
    Ok((tree, assignment, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn clusters_1d(per: usize, centers: &[f64], seed: u64) -> (Vec<SparseVector>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (k, &c) in centers.iter().enumerate() {
            for _ in 0..per {
                let x = (c + noise.sample(&mut rng)) as f32;
                pts.push(SparseVector::from_dense(&[x]).unwrap());
                labels.push(k);
            }
        }
        (pts, labels)
    }

    #[test]
    fn four_clusters_give_four_pure_leaves() {
        let (pts, labels) = clusters_1d(50, &[0.0, 20.0, 40.0, 60.0], 1);
        let params = TsvqParams { n_min: 10, h_max: 4, wcss_min: 50.0 * 4.0, ..Default::default() };
        let (tree, leaf_of, _) = build_tree(&pts, &params, NormMode::Cached).unwrap();
        tree.validate().unwrap();
        assert_eq!(tree.leaf_count(), 4);
        for leaf in tree.leaves() {
            let classes: std::collections::HashSet<_> =
                (0..pts.len()).filter(|&i| leaf_of[i] == leaf.node_id).map(|i| labels[i]).collect();
            assert_eq!(classes.len(), 1);
            assert_eq!(leaf.member_count, 50);
        }
    }

    #[test]
    fn n_min_at_least_total_keeps_root_only() {
        let (pts, _) = clusters_1d(10, &[0.0, 5.0], 2);
        let params = TsvqParams { n_min: 20, ..Default::default() };
        let (tree, _, _) = build_tree(&pts, &params, NormMode::Cached).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.root().leaf_reason, Some(LeafReason::NMin));
        assert_eq!(tree.encode(&pts[0]).unwrap().codeword, "");
    }

    #[test]
    fn height_cap_of_one() {
        let (pts, _) = clusters_1d(30, &[0.0, 5.0, 10.0], 3);
        let params = TsvqParams { n_min: 2, h_max: 1, ..Default::default() };
        let (tree, _, _) = build_tree(&pts, &params, NormMode::Cached).unwrap();
        assert_eq!(tree.nodes.len(), 3);
        assert!(tree.leaves().all(|l| l.leaf_reason == Some(LeafReason::HMax)));
    }

    #[test]
    fn identical_points_are_a_wcss_leaf() {
        let pts = vec![SparseVector::from_dense(&[1.0, 2.0]).unwrap(); 40];
        let (tree, _, _) = build_tree(&pts, &TsvqParams { n_min: 4, ..Default::default() }, NormMode::Cached).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.root().leaf_reason, Some(LeafReason::WcssMin));
    }

    #[test]
    fn members_encode_to_their_leaf() {
        let (pts, _) = clusters_1d(40, &[0.0, 3.0, 7.0, 30.0], 4);
        let params = TsvqParams { n_min: 4, h_max: 6, ..Default::default() };
        let (tree, leaf_of, _) = build_tree(&pts, &params, NormMode::Cached).unwrap();
        for (p, &leaf) in pts.iter().zip(&leaf_of) {
            let e = tree.encode(p).unwrap();
            assert_eq!(e.leaf, leaf);
            assert_eq!(e.ops.distance_evals as usize, 2 * e.codeword.len());
        }
        for n in &tree.nodes {
            if let Some([a, b]) = n.children {
                let sum = tree.nodes[a as usize].wcss + tree.nodes[b as usize].wcss;
                assert!(sum <= n.wcss * (1.0 + 1e-6), "split of {} grew wcss", n.node_id);
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_the_tree() {
        let (pts, _) = clusters_1d(300, &[0.0, 3.0, 7.0, 30.0], 5);
        let base = TsvqParams { n_min: 4, h_max: 8, ..Default::default() };
        let (t1, l1, _) = build_tree(&pts, &base, NormMode::Cached).unwrap();
        for parts in [2, 8] {
            let (t, l, _) = build_tree(&pts, &TsvqParams { num_partitions: parts, ..base }, NormMode::Cached).unwrap();
            assert_eq!(t.nodes, t1.nodes);
            assert_eq!(l, l1);
        }
    }

    #[test]
    fn empty_and_mixed_input() {
        assert!(matches!(build_tree(&[], &TsvqParams::default(), NormMode::Cached), Err(TsvqError::EmptyArchive)));
        let mixed = vec![SparseVector::from_dense(&[1.0]).unwrap(), SparseVector::from_dense(&[1.0, 0.0]).unwrap()];
        assert!(matches!(
            build_tree(&mixed, &TsvqParams::default(), NormMode::Cached),
            Err(TsvqError::InvalidInput(_))
        ));
    }
}
