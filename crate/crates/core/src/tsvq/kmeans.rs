//! Two-means as map/combine/reduce over fixed-size blocks of a node's members.
//!
//! Block partials are always reduced in block order, so results do not
//! depend on how many threads ran the map phase.

use rayon::prelude::*;

use super::distance::{distance_sq_unchecked, NormMode, OpCount};
use super::TsvqError;
use crate::vector::{Centroid, SparseVector};

/// Members per map task.
pub const BLOCK: usize = 256;

/// Combiner output for one block: per-centroid vector sums, counts and WCSS.
#[derive(Debug, Clone, PartialEq)]
pub struct Partial {
    pub sums: [Vec<f64>; 2],
    pub counts: [u64; 2],
    pub wcss: [f64; 2],
    pub ops: OpCount,
}

impl Partial {
    fn empty(dim: usize) -> Self {
        Self { sums: [vec![0.0; dim], vec![0.0; dim]], counts: [0; 2], wcss: [0.0; 2], ops: OpCount::default() }
    }
}

/// Index of the nearer centroid (ties go to 0) and its distance.
#[inline]
pub(crate) fn nearest(x: &SparseVector, c: &[Centroid; 2], mode: NormMode, ops: &mut OpCount) -> (usize, f64) {
    let d0 = distance_sq_unchecked(x, &c[0], mode, ops);
    let d1 = distance_sq_unchecked(x, &c[1], mode, ops);
    if d0 <= d1 {
        (0, d0)
    } else {
        (1, d1)
    }
}

fn check_dim(x: &SparseVector, dim: usize) -> Result<(), TsvqError> {
    if x.dim() != dim {
        return Err(TsvqError::InvalidInput(format!("point has dimension {}, centroids {dim}", x.dim())));
    }
    Ok(())
}

/// Map and combine for one partition: assigns every point to its nearest
/// centroid and accumulates sums, counts and partial WCSS.
pub fn assign_map<'a>(
    points: impl IntoIterator<Item = &'a SparseVector>,
    centroids: &[Centroid; 2],
    mode: NormMode,
) -> Result<Partial, TsvqError> {
    let dim = centroids[0].dim();
    if centroids[1].dim() != dim {
        return Err(TsvqError::InvalidInput("centroid dimensions differ".into()));
    }
    let mut p = Partial::empty(dim);
    for x in points {
        check_dim(x, dim)?;
        let (k, d) = nearest(x, centroids, mode, &mut p.ops);
        x.add_into(&mut p.sums[k]);
        p.counts[k] += 1;
        p.wcss[k] += d;
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub centroids: [Vec<f64>; 2],
    pub counts: [u64; 2],
    /// WCSS of the assignment that produced these centroids.
    pub wcss: f64,
    /// Centroid that received no points and was re-seeded.
    pub reseeded: Option<usize>,
    pub ops: OpCount,
}

/// Reduce: new centroid = Σ sums / Σ counts. An empty centroid is re-seeded
/// with `farthest_from(surviving centroid)`.
pub fn reduce_update(
    partials: &[Partial],
    farthest_from: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<Update, TsvqError> {
    let first = partials.first().ok_or(TsvqError::EmptyNode)?;
    let dim = first.sums[0].len();
    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0u64; 2];
    let mut wcss = 0.0;
    let mut ops = OpCount::default();
    for p in partials {
        for k in 0..2 {
            for (acc, v) in sums[k].iter_mut().zip(&p.sums[k]) {
                *acc += v;
            }
            counts[k] += p.counts[k];
            wcss += p.wcss[k];
        }
        ops += p.ops;
    }
    if counts[0] + counts[1] == 0 {
        return Err(TsvqError::EmptyNode);
    }
    let mut reseeded = None;
    for k in 0..2 {
        if counts[k] > 0 {
            let n = counts[k] as f64;
            sums[k].iter_mut().for_each(|v| *v /= n);
        }
    }
    for k in 0..2 {
        if counts[k] == 0 {
            sums[k] = farthest_from(&sums[1 - k]);
            reseeded = Some(k);
        }
    }
    Ok(Update { centroids: sums, counts, wcss, reseeded, ops })
}

pub(crate) fn blocks(members: &[u32]) -> impl IndexedParallelIterator<Item = &[u32]> {
    members.par_chunks(BLOCK)
}

/// Member position with the smallest (`max == false`) or largest distance
/// to `c`; ties resolve to the lowest position.
pub(crate) fn extreme(points: &[SparseVector], members: &[u32], c: &Centroid, max: bool) -> (usize, f64) {
    let per_block: Vec<(usize, f64)> = blocks(members)
        .enumerate()
        .map(|(b, block)| {
            let mut ops = OpCount::default();
            let mut best = (b * BLOCK, distance_sq_unchecked(&points[block[0] as usize], c, NormMode::Cached, &mut ops));
            for (j, &i) in block.iter().enumerate().skip(1) {
                let d = distance_sq_unchecked(&points[i as usize], c, NormMode::Cached, &mut ops);
                if (max && d > best.1) || (!max && d < best.1) {
                    best = (b * BLOCK + j, d);
                }
            }
            best
        })
        .collect();
    let mut best = per_block[0];
    for &cand in &per_block[1..] {
        if (max && cand.1 > best.1) || (!max && cand.1 < best.1) {
            best = cand;
        }
    }
    best
}

/// Deterministic farthest-point seeding: the member nearest to the node
/// centroid, then the member farthest from it.
pub fn seed_node(points: &[SparseVector], members: &[u32], node_centroid: &Centroid) -> Result<[Vec<f64>; 2], TsvqError> {
    if members.len() < 2 {
        return Err(TsvqError::Degenerate);
    }
    let (first, _) = extreme(points, members, node_centroid, false);
    let first = points[members[first] as usize].to_dense();
    let (second, d) = extreme(points, members, &Centroid::from_f64(first.clone()), true);
    if d <= 0.0 {
        return Err(TsvqError::Degenerate);
    }
    Ok([first, points[members[second] as usize].to_dense()])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansParams {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: NormMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub centroids: [Vec<f64>; 2],
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after each iteration.
    pub history: Vec<f64>,
    /// Assignment-step work summed over iterations.
    pub ops: OpCount,
}

fn movement(old: &[f64], new: &[f64]) -> f64 {
    let d: f64 = old.iter().zip(new).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let n: f64 = new.iter().map(|v| v * v).sum::<f64>().sqrt();
    d / n.max(1.0)
}

/// Lloyd iterations from `init` until the largest relative centroid
/// movement drops below `tol` or `max_iter` is reached.
pub fn kmeans2(
    points: &[SparseVector],
    members: &[u32],
    init: [Vec<f64>; 2],
    params: &KmeansParams,
) -> Result<KmeansResult, TsvqError> {
    let Some(&m0) = members.first() else {
        return Err(TsvqError::EmptyNode);
    };
    let dim = init[0].len();
    if init[1].len() != dim {
        return Err(TsvqError::InvalidInput("seed dimensions differ".into()));
    }
    let p0 = &points[m0 as usize];
    check_dim(p0, dim)?;
    if members.iter().all(|&i| {
        let p = &points[i as usize];
        p.indices() == p0.indices() && p.values() == p0.values()
    }) {
        return Err(TsvqError::Degenerate);
    }

    let farthest = |c: &[f64]| {
        let (pos, _) = extreme(points, members, &Centroid::from_f64(c.to_vec()), true);
        points[members[pos] as usize].to_dense()
    };
    let mut cents = init;
    let mut history = Vec::new();
    let mut ops = OpCount::default();
    let mut iterations = 0;
    while iterations < params.max_iter.max(1) {
        iterations += 1;
        let c = [Centroid::from_f64(cents[0].clone()), Centroid::from_f64(cents[1].clone())];
        let partials = blocks(members)
            .map(|b| assign_map(b.iter().map(|&i| &points[i as usize]), &c, params.mode))
            .collect::<Result<Vec<_>, _>>()?;
        let upd = reduce_update(&partials, &farthest)?;
        ops += upd.ops;
        history.push(upd.wcss);
        let moved = movement(&cents[0], &upd.centroids[0]).max(movement(&cents[1], &upd.centroids[1]));
        cents = upd.centroids;
        if upd.reseeded.is_none() && moved < params.tol {
            break;
        }
    }
    let wcss = *history.last().unwrap();
    Ok(KmeansResult { centroids: cents, wcss, iterations, history, ops })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f32]) -> Vec<SparseVector> {
        xs.iter().map(|&x| SparseVector::from_dense(&[x]).unwrap()).collect()
    }

    fn all(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    fn c1(x: f64) -> Centroid {
        Centroid::from_f64(vec![x])
    }

    const P: KmeansParams = KmeansParams { tol: 1e-4, max_iter: 50, mode: NormMode::Cached };

    #[test]
    fn assign_two_points() {
        let p = pts(&[0.0, 1.0]);
        let out = assign_map(&p, &[c1(0.0), c1(1.0)], NormMode::Cached).unwrap();
        assert_eq!(out.sums, [vec![0.0], vec![1.0]]);
        assert_eq!(out.counts, [1, 1]);
        assert_eq!(out.wcss, [0.0, 0.0]);
    }

    #[test]
    fn ties_go_to_centroid_zero() {
        let p = pts(&[0.5]);
        let out = assign_map(&p, &[c1(0.0), c1(1.0)], NormMode::Cached).unwrap();
        assert_eq!(out.counts, [1, 0]);
    }

    #[test]
    fn six_vectors_match_reference() {
        let p: Vec<SparseVector> = [[0.1, 0.9], [0.8, 0.2], [0.5, 0.5], [0.0, 1.0], [1.0, 0.0], [0.45, 0.55]]
            .iter()
            .map(|v| SparseVector::from_dense(v).unwrap())
            .collect();
        let c = [Centroid::from_f64(vec![0.2, 0.8]), Centroid::from_f64(vec![0.9, 0.1])];
        let out = assign_map(&p, &c, NormMode::Cached).unwrap();
        let mut counts = [0u64; 2];
        for x in &p {
            let d = x.to_dense();
            let dist = |y: &[f64]| d.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            counts[usize::from(dist(c[1].values()) < dist(c[0].values()))] += 1;
        }
        assert_eq!(out.counts, counts);
        assert_eq!(out.counts, [4, 2]);
    }

    #[test]
    fn reduce_from_four_points() {
        let p = pts(&[0.0, 1.0, 9.0, 10.0]);
        let c = [c1(0.0), c1(9.0)];
        let partials = vec![
            assign_map(&p[..2], &c, NormMode::Cached).unwrap(),
            assign_map(&p[2..], &c, NormMode::Cached).unwrap(),
        ];
        let none = |_: &[f64]| unreachable!();
        let upd = reduce_update(&partials, &none).unwrap();
        assert_eq!(upd.centroids, [vec![0.5], vec![9.5]]);
        let single = reduce_update(&[assign_map(&p, &c, NormMode::Cached).unwrap()], &none).unwrap();
        assert_eq!(single.centroids, upd.centroids);
        let mut rev = partials.clone();
        rev.reverse();
        assert_eq!(reduce_update(&rev, &none).unwrap().centroids, upd.centroids);
        assert!(matches!(reduce_update(&[], &none), Err(TsvqError::EmptyNode)));
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        let p = pts(&[0.0, 1.0, 2.0]);
        let part = assign_map(&p, &[c1(1.0), c1(100.0)], NormMode::Cached).unwrap();
        let upd = reduce_update(&[part], &|c: &[f64]| {
            let (pos, _) = extreme(&p, &all(3), &Centroid::from_f64(c.to_vec()), true);
            p[pos].to_dense()
        })
        .unwrap();
        assert_eq!(upd.reseeded, Some(1));
        assert_eq!(upd.centroids, [vec![1.0], vec![0.0]]);
    }

    #[test]
    fn kmeans_on_four_points() {
        let p = pts(&[0.0, 1.0, 9.0, 10.0]);
        let r = kmeans2(&p, &all(4), [vec![0.0], vec![10.0]], &P).unwrap();
        assert_eq!(r.centroids, [vec![0.5], vec![9.5]]);
        assert!((r.wcss - 1.0).abs() < 1e-12);

        let r = kmeans2(&p, &all(4), [vec![0.5], vec![9.5]], &P).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.centroids, [vec![0.5], vec![9.5]]);
    }

    #[test]
    fn kmeans_identical_pairs_and_degenerate() {
        let p = pts(&[2.0, 2.0, 7.0, 7.0]);
        let r = kmeans2(&p, &all(4), [vec![2.0], vec![7.0]], &P).unwrap();
        assert_eq!(r.wcss, 0.0);
        let same = pts(&[3.0, 3.0, 3.0]);
        assert!(matches!(kmeans2(&same, &all(3), [vec![3.0], vec![3.0]], &P), Err(TsvqError::Degenerate)));
    }

    #[test]
    fn seeding_rules() {
        let p = pts(&[0.0, 10.0]);
        assert_eq!(seed_node(&p, &all(2), &c1(5.0)).unwrap(), [vec![0.0], vec![10.0]]);
        let p = pts(&[0.0, 1.0, 2.0]);
        assert_eq!(seed_node(&p, &all(3), &c1(1.0)).unwrap(), [vec![1.0], vec![0.0]]);
        assert_eq!(seed_node(&p, &all(3), &c1(1.0)).unwrap(), seed_node(&p, &all(3), &c1(1.0)).unwrap());
        assert!(matches!(seed_node(&pts(&[4.0, 4.0]), &all(2), &c1(4.0)), Err(TsvqError::Degenerate)));
    }

    #[test]
    fn wcss_never_increases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p: Vec<SparseVector> = (0..300)
                .map(|_| SparseVector::from_dense(&[rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).unwrap())
                .collect();
            let r = kmeans2(&p, &all(300), [p[0].to_dense(), p[1].to_dense()], &P).unwrap();
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", r.history);
            }
        }
    }
}
