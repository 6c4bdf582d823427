//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! to stderr (uncaptured) before asserting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use polsar_cbir::bench::{bench_build, measure_recall, median};
use polsar_cbir::descriptor::{DescriptorMeta, GeoBounds, TileDescriptor};
use polsar_cbir::ingest::worker::EventKind;
use polsar_cbir::ingest::{ingest_all, IngestConfig, KillSwitch, PoolOptions, TaskQueue};
use polsar_cbir::polsar::{
    coherency, decompose, eigendecompose, h_alpha_a, pauli_vector, CoherencyMatrix, ScattererClass, ScatteringPixel,
};
use polsar_cbir::query::{brute_force, query, LoadedIndex, QueryFilters, QueryRequest};
use polsar_cbir::store::{DescriptorStore, StoreConfig, StoreError};
use polsar_cbir::synth::{sparse_histograms, synthetic_descriptors, ArchiveSpec, SynthSource};
use polsar_cbir::tsvq::{
    assign_map, build_index, build_tree, kmeans2, seed_node, KmeansParams, NormMode, TsvqParams, TsvqTree,
};
use polsar_cbir::vector::{Centroid, SparseVector};

/// Timing-sensitive criteria must not overlap.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: &str, ok: bool, detail: String) {
    let line = format!("{} {criterion}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(ok, "{criterion} failed: {detail}");
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Sum of `rank` outer products of Gaussian complex vectors, scaled.
fn random_psd(rng: &mut ChaCha8Rng) -> CoherencyMatrix {
    let rank = rng.gen_range(1..=3);
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    let mut t = CoherencyMatrix::zero();
    for _ in 0..rank {
        let k: [Complex64; 3] =
            std::array::from_fn(|_| c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)));
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] += k[i] * k[j].conj() * scale;
            }
        }
    }
    t
}

#[test]
fn decomposition_invariants() {
    let _g = serial();
    const MATRICES: usize = 10_000;
    const ROLLS: usize = 32;
    const SUM_TOL: f64 = 1e-12;
    const RECON_TOL: f64 = 1e-8;
    const ROLL_TOL: f64 = 1e-9;
    const BUDGET: Duration = Duration::from_secs(30);

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = [0.0f64; 3];
    let mut range_violations = 0;
    for _ in 0..MATRICES {
        let t = random_psd(&mut rng);
        let eig = eigendecompose(&t).unwrap();
        let d = h_alpha_a(&eig).unwrap();
        if !((0.0..=1.0).contains(&d.h) && (0.0..=FRAC_PI_2).contains(&d.alpha_bar) && (0.0..=1.0).contains(&d.a)) {
            range_violations += 1;
        }
        worst[0] = worst[0].max((d.p.iter().sum::<f64>() - 1.0).abs());

        let mut recon = CoherencyMatrix::zero();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    recon.0[i][j] += eig.u[k][i] * eig.u[k][j].conj() * eig.lambda[k];
                }
            }
        }
        let mut diff = t;
        for i in 0..3 {
            for j in 0..3 {
                diff.0[i][j] -= recon.0[i][j];
            }
        }
        worst[1] = worst[1].max(diff.frobenius_norm() / t.frobenius_norm());

        for _ in 0..ROLLS {
            let r = decompose(&t.roll_rotated(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))).unwrap();
            let dev = (r.h - d.h).abs().max((r.alpha_bar - d.alpha_bar).abs()).max((r.a - d.a).abs());
            worst[2] = worst[2].max(dev);
        }
    }
    let elapsed = start.elapsed();
    let ok = range_violations == 0
        && worst[0] <= SUM_TOL
        && worst[1] <= RECON_TOL
        && worst[2] <= ROLL_TOL
        && elapsed < BUDGET;
    verdict(
        "decomposition-invariants",
        ok,
        format!(
            "{MATRICES} matrices, range violations {range_violations}, max |sum P - 1| {:.2e}, \
             max reconstruction {:.2e}, max roll deviation {:.2e}, {:.2}s",
            worst[0],
            worst[1],
            worst[2],
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn closed_form_values() {
    let _g = serial();
    // -(0.5 ln 0.5 + 0.3 ln 0.3 + 0.2 ln 0.2) / ln 3, evaluated at 50 digits.
    const ENTROPY_532: f64 = 0.937_230_563_216_129_5;
    const EXACT_TOL: f64 = 1e-12;
    // 0.3 - 0.2 is not exact in binary; allow a few ulp.
    const ULP_TOL: f64 = 4.0 * f64::EPSILON;

    let z = c(0.0, 0.0);
    let pixel = |hh: f64, vv: f64| {
        let k = pauli_vector(&ScatteringPixel::new(c(hh, 0.0), z, z, c(vv, 0.0))).unwrap();
        decompose(&coherency(&k).unwrap()).unwrap()
    };
    let tri = pixel(1.0, 1.0);
    let di = pixel(1.0, -1.0);
    let flat = decompose(&CoherencyMatrix::diagonal([1.0, 1.0, 1.0])).unwrap();
    let graded = decompose(&CoherencyMatrix::diagonal([0.5, 0.3, 0.2])).unwrap();

    let checks = [
        ("trihedral alpha", tri.alpha_bar, 0.0, EXACT_TOL),
        ("trihedral H", tri.h, 0.0, EXACT_TOL),
        ("dihedral alpha", di.alpha_bar, FRAC_PI_2, EXACT_TOL),
        ("uniform H", flat.h, 1.0, EXACT_TOL),
        ("graded A", graded.a, 0.2, ULP_TOL),
        ("graded H", graded.h, ENTROPY_532, EXACT_TOL),
    ];
    let failed: Vec<String> = checks
        .iter()
        .filter(|(_, got, want, tol)| (got - want).abs() > *tol)
        .map(|(name, got, want, _)| format!("{name} = {got:e}, want {want:e}"))
        .collect();
    let detail = checks.iter().map(|(n, g, _, _)| format!("{n}={g:.15}")).collect::<Vec<_>>().join(", ");
    verdict("closed-form", failed.is_empty(), if failed.is_empty() { detail } else { failed.join("; ") });
}

struct Archive {
    _dir: tempfile::TempDir,
    store: DescriptorStore,
    index: LoadedIndex,
    labels: BTreeMap<String, ScattererClass>,
    all: Vec<TileDescriptor>,
    params: TsvqParams,
}

/// The 64-product labelled archive, ingested and indexed once.
fn archive() -> &'static Archive {
    static ARCHIVE: OnceLock<Archive> = OnceLock::new();
    ARCHIVE.get_or_init(|| {
        let spec = ArchiveSpec::default();
        let dir = tempfile::tempdir().unwrap();
        let store = DescriptorStore::open(dir.path(), StoreConfig::default()).unwrap();
        let cfg = IngestConfig { tile_size: spec.tile_size, ..Default::default() };
        let summary = ingest_all(&SynthSource { spec }, &TaskQueue::in_memory(3), &store, &cfg, &PoolOptions::default())
            .unwrap();
        assert_eq!(summary.failed, 0);
        let params = TsvqParams { n_min: 16, h_max: 12, ..Default::default() };
        let (tree, assignment) = build_index(&store, &params).unwrap();
        let all = store.scan().unwrap();
        Archive { _dir: dir, store, index: LoadedIndex::new(tree, assignment), labels: spec.labels(), all, params }
    })
}

fn sample_ids(all: &[TileDescriptor], n: usize, seed: u64) -> Vec<&TileDescriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, all.len(), n).into_iter().map(|i| &all[i]).collect()
}

#[test]
fn synthetic_archive_retrieval() {
    let _g = serial();
    const SELF_QUERIES: usize = 200;
    const SELF_DIST: f64 = 1e-9;
    const PURITY_QUERIES: usize = 100;
    const MIN_PURITY: f64 = 0.90;
    const TOP_K: usize = 10;

    let a = archive();
    let mut self_hits = 0;
    for d in sample_ids(&a.all, SELF_QUERIES, 1) {
        let r = query(&QueryRequest { vector: d.vector.clone(), top_k: TOP_K, filters: QueryFilters::default() }, &a.index, &a.store)
            .unwrap();
        if r.hits.first().is_some_and(|h| h.tile_id == d.tile_id && h.distance_sq < SELF_DIST) {
            self_hits += 1;
        }
    }

    let purity = |hits: &[polsar_cbir::query::Hit], class: ScattererClass| {
        hits.iter().filter(|h| a.labels[&h.tile_id] == class).count() as f64 / hits.len() as f64
    };
    let (mut tree_purity, mut exact_purity) = (0.0, 0.0);
    for d in sample_ids(&a.all, PURITY_QUERIES, 2) {
        let class = a.labels[&d.tile_id];
        let req = QueryRequest { vector: d.vector.clone(), top_k: TOP_K, filters: QueryFilters::default() };
        tree_purity += purity(&query(&req, &a.index, &a.store).unwrap().hits, class);
        exact_purity += purity(&brute_force(&d.vector, &a.all, TOP_K, &QueryFilters::default()).unwrap().hits, class);
    }
    tree_purity /= PURITY_QUERIES as f64;
    exact_purity /= PURITY_QUERIES as f64;
    let recall = measure_recall(&a.index, &a.store, &a.all, PURITY_QUERIES, TOP_K).unwrap();

    let ok = a.all.len() == a.labels.len() && self_hits == SELF_QUERIES && tree_purity >= MIN_PURITY;
    verdict(
        "synthetic-archive-retrieval",
        ok,
        format!(
            "{} tiles, {} leaves, self-retrieval {self_hits}/{SELF_QUERIES}, top-{TOP_K} purity {:.3} \
             (exhaustive {:.3}), recall@{TOP_K} {:.3}",
            a.all.len(),
            a.index.tree.leaf_count(),
            tree_purity,
            exact_purity,
            recall
        ),
    );
}

fn wcss_of(points: &[Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let d = points[0].len();
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / points.len() as f64).collect();
    points.iter().map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum()
}

/// WCSS of the side selected by `mask`, plus the rest, via running sums.
fn split_cost(points: &[Vec<f64>], side: &[bool]) -> f64 {
    let d = points[0].len();
    let mut n = [0.0f64; 2];
    let mut s = [vec![0.0; d], vec![0.0; d]];
    let mut sq = [0.0f64; 2];
    for (p, &b) in points.iter().zip(side) {
        let k = b as usize;
        n[k] += 1.0;
        for j in 0..d {
            s[k][j] += p[j];
            sq[k] += p[j] * p[j];
        }
    }
    if n[0] == 0.0 || n[1] == 0.0 {
        return f64::INFINITY;
    }
    (0..2).map(|k| sq[k] - s[k].iter().map(|v| v * v).sum::<f64>() / n[k]).sum()
}

/// Exact minimum WCSS over all 2-partitions. Small sets are enumerated
/// outright; larger ones through every hyperplane spanned by `d` points
/// (optimal 2-means cells are linearly separable), trying each side for
/// the points on the plane.
fn optimal_two_partition(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    if n <= 14 {
        return (1..(1u32 << n) - 1)
            .map(|m| split_cost(points, &(0..n).map(|i| m >> i & 1 == 1).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
    }
    let mut best = f64::INFINITY;
    let mut side = vec![false; n];
    let mut try_plane = |on: &[usize], normal: &[f64], offset: f64| {
        for (i, p) in points.iter().enumerate() {
            side[i] = p.iter().zip(normal).map(|(a, b)| a * b).sum::<f64>() > offset;
        }
        for m in 0..(1u32 << on.len()) {
            for (bit, &i) in on.iter().enumerate() {
                side[i] = m >> bit & 1 == 1;
            }
            best = best.min(split_cost(points, &side));
        }
    };
    match d {
        1 => {
            for i in 0..n {
                try_plane(&[i], &[1.0], points[i][0]);
            }
        }
        2 => {
            for i in 0..n {
                for j in i + 1..n {
                    let (a, b) = (&points[i], &points[j]);
                    let normal = [b[1] - a[1], a[0] - b[0]];
                    try_plane(&[i, j], &normal, normal[0] * a[0] + normal[1] * a[1]);
                }
            }
        }
        3 => {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        let (a, b, c) = (&points[i], &points[j], &points[k]);
                        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                        let normal = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                        let offset = normal.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
                        try_plane(&[i, j, k], &normal, offset);
                    }
                }
            }
        }
        _ => unreachable!("fixtures have at most 3 dimensions"),
    }
    best
}

/// Small clustered fixtures. Point counts per dimension keep the exact
/// oracle affordable.
fn small_fixture(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = rng.gen_range(1..=3);
    let max_n = [200, 120, 48][d - 1];
    let n = rng.gen_range(2..=max_n);
    let blobs: Vec<Vec<f64>> = (0..rng.gen_range(1..=4)).map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let spread = rng.gen_range(0.02..0.3);
    (0..n)
        .map(|_| {
            let b = &blobs[rng.gen_range(0..blobs.len())];
            b.iter().map(|&m| (m + spread * rng.sample::<f64, _>(StandardNormal)) as f32 as f64).collect()
        })
        .collect()
}

fn depth_of(tree: &TsvqTree, mut id: u64) -> usize {
    let mut depth = 0;
    while let Some(p) = tree.node(id).unwrap().parent {
        depth += 1;
        id = p;
    }
    depth
}

#[test]
fn tsvq_correctness() {
    let _g = serial();
    const FIXTURES: usize = 500;
    const WCSS_SLACK: f64 = 0.05;
    const MIN_SHARE: f64 = 0.95;
    // Children hold f32-rounded centroids; allow round-off against the parent.
    const SPLIT_TOL: f64 = 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (mut within, mut compared) = (0, 0);
    let mut by_dim = [(0, 0); 3];
    let mut split_violations = 0;
    let mut code_violations = 0;
    let mut count_violations = 0;
    let mut splits = 0;
    for f in 0..FIXTURES {
        let dense = small_fixture(&mut rng);
        let points: Vec<SparseVector> =
            dense.iter().map(|p| SparseVector::from_dense(&p.iter().map(|&v| v as f32).collect::<Vec<_>>()).unwrap()).collect();
        let members: Vec<u32> = (0..points.len() as u32).collect();
        let optimum = optimal_two_partition(&dense);
        let mean = Centroid::from_f64(
            (0..dense[0].len()).map(|j| dense.iter().map(|p| p[j]).sum::<f64>() / dense.len() as f64).collect(),
        );
        if let Ok(init) = seed_node(&points, &members, &mean) {
            let params = KmeansParams { tol: 1e-4, max_iter: 50, mode: NormMode::Cached };
            let km = kmeans2(&points, &members, init, &params).unwrap();
            compared += 1;
            by_dim[dense[0].len() - 1].1 += 1;
            if km.wcss <= optimum * (1.0 + WCSS_SLACK) + 1e-12 {
                within += 1;
                by_dim[dense[0].len() - 1].0 += 1;
            }
        }

        let params = TsvqParams { n_min: 2, h_max: rng.gen_range(1..=12), wcss_min: 0.0, seed: f as u64, ..Default::default() };
        let (tree, leaf_of, _) = build_tree(&points, &params, NormMode::Cached).unwrap();
        for node in &tree.nodes {
            let depth = depth_of(&tree, node.node_id);
            if node.codeword.len() != depth || depth > params.h_max {
                code_violations += 1;
            }
            if let Some([a, b]) = node.children {
                splits += 1;
                let children = tree.node(a).unwrap().wcss + tree.node(b).unwrap().wcss;
                if children > node.wcss + SPLIT_TOL * node.wcss.max(1.0) {
                    split_violations += 1;
                }
            }
        }
        let leaf_total: u64 = tree.leaves().map(|l| l.member_count).sum();
        let mut counted: HashMap<u64, u64> = HashMap::new();
        for &l in &leaf_of {
            *counted.entry(l).or_default() += 1;
        }
        let consistent = tree.leaves().all(|l| counted.get(&l.node_id).copied().unwrap_or(0) == l.member_count);
        if leaf_total != points.len() as u64 || !consistent {
            count_violations += 1;
        }
        assert!((wcss_of(&dense) - tree.root().wcss).abs() <= 1e-6 * wcss_of(&dense).max(1.0));
    }
    let share = within as f64 / compared as f64;
    let ok = share >= MIN_SHARE && split_violations == 0 && code_violations == 0 && count_violations == 0;
    verdict(
        "tsvq-correctness",
        ok,
        format!(
            "kmeans2 within 5% of optimum on {within}/{compared} fixtures ({:.1}%; by dimension {:?}), {splits} splits with \
             {split_violations} WCSS increases, {code_violations} codeword/depth violations, \
             {count_violations} leaf-count mismatches",
            share * 100.0,
            by_dim
        ),
    );
}

#[test]
fn parallel_scaling() {
    let _g = serial();
    const POINTS: usize = 100_000;
    const DIM: usize = 512;
    const RUNS: usize = 5;
    const MIN_SPEEDUP: f64 = 1.8;
    const BUDGET: Duration = Duration::from_secs(300);

    let start = Instant::now();
    let descriptors = synthetic_descriptors(POINTS, DIM, 1);
    let params = TsvqParams::default();
    let (rows, _) = bench_build(&descriptors, &params, &[1, 4], RUNS).unwrap();
    let elapsed = start.elapsed();
    let speedup = rows[1].speedup;
    let same = rows[0].checksum == rows[1].checksum;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    verdict(
        "parallel-scaling",
        speedup >= MIN_SPEEDUP && same && elapsed < BUDGET,
        format!(
            "1 worker {:.3}s, 4 workers {:.3}s (median of {RUNS}), speedup {speedup:.2}x, checksums {} \
             ({:08x}), total {:.1}s, {cores} core(s) available",
            rows[0].median_s,
            rows[1].median_s,
            if same { "identical" } else { "differ" },
            rows[0].checksum,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn cached_norm_flag() {
    let _g = serial();
    const POINTS: usize = 20_000;
    const DIM: usize = 512;
    const REPEATS: usize = 7;
    const MIN_FACTOR: f64 = 1.3;

    let points = sparse_histograms(POINTS, DIM, 32, 100, 9);
    let params = TsvqParams { n_min: 16, h_max: 8, ..Default::default() };
    let (tree_c, leaf_c, _) = build_tree(&points, &params, NormMode::Cached).unwrap();
    let (tree_r, leaf_r, _) = build_tree(&points, &params, NormMode::Recompute).unwrap();
    let identical = leaf_c == leaf_r
        && tree_c.nodes.iter().zip(&tree_r.nodes).all(|(a, b)| {
            a.centroid.values().iter().zip(b.centroid.values()).all(|(x, y)| x.to_bits() == y.to_bits())
                && a.wcss.to_bits() == b.wcss.to_bits()
        })
        && tree_c.nodes.len() == tree_r.nodes.len();

    // Dense centroids: means of two halves of the data.
    let mean_of = |slice: &[SparseVector]| {
        let mut acc = vec![0.0; DIM];
        for p in slice {
            p.add_into(&mut acc);
        }
        acc.iter_mut().for_each(|v| *v /= slice.len() as f64);
        Centroid::from_f64(acc)
    };
    let cents = [mean_of(&points[..POINTS / 2]), mean_of(&points[POINTS / 2..])];
    let time = |mode| {
        let mut t: Vec<f64> = (0..REPEATS)
            .map(|_| {
                let s = Instant::now();
                let p = assign_map(&points, &cents, mode).unwrap();
                std::hint::black_box(p);
                s.elapsed().as_secs_f64()
            })
            .collect();
        median(&mut t)
    };
    let cached = time(NormMode::Cached);
    let recompute = time(NormMode::Recompute);
    let same_partial = assign_map(&points, &cents, NormMode::Cached).unwrap().counts
        == assign_map(&points, &cents, NormMode::Recompute).unwrap().counts;
    let factor = recompute / cached;
    verdict(
        "cached-norm",
        identical && same_partial && factor >= MIN_FACTOR,
        format!(
            "assignments {}, assignment step {:.2} ms cached vs {:.2} ms recomputed, factor {factor:.2}x",
            if identical && same_partial { "bitwise identical" } else { "DIFFER" },
            cached * 1e3,
            recompute * 1e3
        ),
    );
}

#[test]
fn queue_fault_injection() {
    let _g = serial();
    const WORKERS: usize = 4;
    const PRODUCTS: usize = 20;
    const VISIBILITY_S: f64 = 1.0;

    let spec = ArchiveSpec { products: PRODUCTS, rows: 96, cols: 96, tile_size: 32, seed: 77 };
    let dir = tempfile::tempdir().unwrap();
    let store = DescriptorStore::open(dir.path(), StoreConfig::default()).unwrap();
    let cfg = IngestConfig { tile_size: 32, visibility_timeout_s: VISIBILITY_S, ..Default::default() };
    let opts = PoolOptions {
        workers: Some(WORKERS),
        kill: Some(KillSwitch { worker: 1, after_tiles: 3 }),
        poll_interval: Some(Duration::from_millis(20)),
        ..Default::default()
    };
    let summary = ingest_all(&SynthSource { spec }, &TaskQueue::in_memory(3), &store, &cfg, &opts).unwrap();

    let stored = store.scan().unwrap();
    let ids: Vec<&str> = stored.iter().map(|d| d.tile_id.as_str()).collect();
    let unique: BTreeSet<&str> = ids.iter().copied().collect();
    let expected: BTreeSet<String> = spec.labels().into_keys().collect();
    let exactly_once = ids.len() == unique.len() && unique.iter().copied().eq(expected.iter().map(String::as_str));

    let events = opts.events.events();
    let killed = events.iter().find(|e| e.kind == EventKind::Killed);
    let redelivery = killed.and_then(|k| {
        events
            .iter()
            .filter(|e| e.task_id == k.task_id && e.kind == EventKind::Leased && e.at > k.at)
            .map(|e| e.at - k.at)
            .min()
    });
    let limit = Duration::from_secs_f64(2.0 * VISIBILITY_S);
    let ok = summary.failed == 0 && exactly_once && redelivery.is_some_and(|d| d <= limit);
    verdict(
        "queue-fault-injection",
        ok,
        format!(
            "{} tiles stored ({} expected, {} distinct), killed task {:?} redelivered after {:?} (limit {:?})",
            ids.len(),
            expected.len(),
            unique.len(),
            killed.map(|k| k.task_id.clone()),
            redelivery,
            limit
        ),
    );
}

#[test]
fn store_durability() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = StoreConfig { nodes: 5, replication: 3, chunk_size: 16 << 10 };
    let store = DescriptorStore::open(dir.path(), cfg).unwrap();
    let points = sparse_histograms(2000, 512, 16, 100, 4);
    for (i, v) in points.into_iter().enumerate() {
        let meta = DescriptorMeta {
            product_id: format!("p{}", i / 100),
            acquisition_time: "2015-06-01T00:00:00Z".parse().unwrap(),
            sensor_params: Default::default(),
        };
        let d = TileDescriptor::new(format!("p{}/{}/0", i / 100, i % 100), GeoBounds::default(), v, meta).unwrap();
        store.put(&d).unwrap();
    }
    store.flush().unwrap();
    let all: Vec<String> = store.scan().unwrap().into_iter().map(|d| d.tile_id).collect();
    let nodes: Vec<String> = store.nodes().into_iter().map(|n| n.node_id).collect();
    let placement = store.placement();
    let by_chunk = store.tiles_by_chunk();

    let readable = |store: &DescriptorStore| {
        store.clear_cache();
        all.iter().filter(|t| store.get(t).is_ok()).count()
    };
    let mut pair_failures = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            store.fail_node(&nodes[i]).unwrap();
            store.fail_node(&nodes[j]).unwrap();
            let n = readable(&store);
            if n != all.len() {
                pair_failures.push(format!("{}+{}: {n}", nodes[i], nodes[j]));
            }
            store.revive_node(&nodes[i]).unwrap();
            store.revive_node(&nodes[j]).unwrap();
        }
    }

    // Lose every replica of one chunk at a time by moving its files aside.
    let mut chunk_failures = Vec::new();
    for (chunk, replicas) in &placement {
        let moved: Vec<(std::path::PathBuf, std::path::PathBuf)> = replicas
            .iter()
            .map(|n| {
                let path = store.chunk_path(chunk, n);
                let aside = path.with_extension("lost");
                std::fs::rename(&path, &aside).unwrap();
                (path, aside)
            })
            .collect();
        store.clear_cache();
        let mut unavailable = BTreeSet::new();
        for t in &all {
            match store.get(t) {
                Ok(_) => {}
                Err(StoreError::Unavailable { chunk_id }) if &chunk_id == chunk => {
                    unavailable.insert(t.clone());
                }
                Err(e) => chunk_failures.push(format!("{t}: {e}")),
            }
        }
        let want: BTreeSet<String> = by_chunk[chunk].iter().cloned().collect();
        if unavailable != want {
            chunk_failures.push(format!("{chunk}: {} unavailable, {} in chunk", unavailable.len(), want.len()));
        }
        for (path, aside) in moved {
            std::fs::rename(aside, path).unwrap();
        }
    }

    // Losing the three nodes of a replica set takes down exactly the chunks placed on that set.
    let mut node_set_failures = Vec::new();
    for replicas in placement.values().collect::<BTreeSet<_>>() {
        for n in replicas {
            store.fail_node(n).unwrap();
        }
        store.clear_cache();
        let want: BTreeSet<&String> =
            placement.iter().filter(|(_, r)| r.iter().all(|n| replicas.contains(n))).flat_map(|(c, _)| &by_chunk[c]).collect();
        let down: BTreeSet<&String> = all.iter().filter(|t| store.get(t).is_err()).collect();
        if down != want {
            node_set_failures.push(format!("{replicas:?}: {} down, {} expected", down.len(), want.len()));
        }
        for n in replicas {
            store.revive_node(n).unwrap();
        }
    }

    let ok = placement.len() > 1
        && placement.values().all(|r| r.len() == 3)
        && pair_failures.is_empty()
        && chunk_failures.is_empty()
        && node_set_failures.is_empty();
    verdict(
        "store-durability",
        ok,
        format!(
            "{} tiles in {} chunks over {} nodes; all 10 node pairs failed: {}; all-replica loss per chunk: {}; \
             replica-set node loss: {}",
            all.len(),
            placement.len(),
            nodes.len(),
            if pair_failures.is_empty() { "all readable".to_string() } else { pair_failures.join(", ") },
            if chunk_failures.is_empty() { "exactly that chunk unavailable".to_string() } else { chunk_failures.join(", ") },
            if node_set_failures.is_empty() { "exactly the chunks on that set".to_string() } else { node_set_failures.join(", ") }
        ),
    );
}

#[test]
fn query_latency() {
    let _g = serial();
    const MAX_P99: Duration = Duration::from_millis(100);

    let a = archive();
    let h_max = a.params.h_max as u64;
    let mut latencies = Vec::with_capacity(a.all.len());
    let mut bound_violations = 0;
    for d in &a.all {
        let start = Instant::now();
        let req = QueryRequest { vector: d.vector.clone(), top_k: 10, filters: QueryFilters::default() };
        let r = query(&req, &a.index, &a.store).unwrap();
        latencies.push(start.elapsed());
        let leaf = a.index.tree.encode(&d.vector).unwrap().leaf;
        let leaf_size = a.index.leaf_members(leaf).len() as u64;
        if r.stats.distance_evals > 2 * h_max + leaf_size {
            bound_violations += 1;
        }
    }
    latencies.sort();
    let p99 = latencies[(latencies.len() * 99).div_ceil(100) - 1];
    let p50 = latencies[latencies.len() / 2];
    verdict(
        "query-latency",
        p99 < MAX_P99 && bound_violations == 0,
        format!(
            "{} queries, p50 {:.3} ms, p99 {:.3} ms, {bound_violations} distance-eval bound violations",
            latencies.len(),
            p50.as_secs_f64() * 1e3,
            p99.as_secs_f64() * 1e3
        ),
    );
}

#[test]
fn recall_is_reported_by_bench_output() {
    let _g = serial();
    let a = archive();
    let report = polsar_cbir::bench::run_bench(&a.store, &a.params, &[1], 1, 50).unwrap();
    let recall = report.recall_at_10.unwrap();
    verdict(
        "bench-recall-report",
        (0.0..=1.0).contains(&recall) && report.to_csv().starts_with("workers,median_s,speedup\n"),
        format!("recall@10 {recall:.3} over {} queries", report.recall_queries),
    );
}
