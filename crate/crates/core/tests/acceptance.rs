//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any fails.
//!
//! Run all of them with `cargo test --test acceptance`, or pick
//! some by number: `cargo test --test acceptance -- 1 3 5`.

use std::alloc::{GlobalAlloc, Layout, System};
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use corradaptor::data_eval::{
    split_seed, synth_scene, write_pairs, MetricsReport, ScenePair, SceneParams,
};
use corradaptor::geometry::{
    compose_essential, decompose_essential, full_size_verification, pose_error,
    virtual_correspondences, weighted_eight_point, Correspondence, EssentialMatrix, RansacConfig,
    RelativePose, EPIPOLAR_EPS, INLIER_THRESHOLD,
};
use corradaptor::graph_blocks::{
    AnnularAggregate, ChannelAttention, ExplicitBranch, ImplicitBranch, NeighborhoodAttention,
    OaFilter, SpatialAttention,
};
use corradaptor::model::{
    evaluate_model, evaluate_ransac, hybrid_loss, inlier_labels, regression_loss, train, Branches,
    CorrAdaptor, CorrAdaptorConfig, PosePath, PreparedPair, TrainConfig, VirtualRows,
    VIRTUAL_COUNT,
};
use corradaptor::motion_attention::{
    bench_attention, dense_attention, flow_attention, AttentionKind, MotionInjection, FLOW_EPS,
};
use corradaptor::numerics::{
    grad_check, grad_check_input, grad_check_params, NumericsError, ParamStore, PointCn, Tape,
    Tensor, Var, NORM_EPS,
};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

/// Records the largest single allocation made while armed.
struct PeakAlloc;

static ARMED: AtomicBool = AtomicBool::new(false);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for PeakAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if ARMED.load(Ordering::Relaxed) {
            PEAK.fetch_max(layout.size(), Ordering::Relaxed);
        }
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        if ARMED.load(Ordering::Relaxed) {
            PEAK.fetch_max(new_size, Ordering::Relaxed);
        }
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

fn peak_allocation<T>(f: impl FnOnce() -> T) -> (T, usize) {
    PEAK.store(0, Ordering::Relaxed);
    ARMED.store(true, Ordering::Relaxed);
    let out = f();
    ARMED.store(false, Ordering::Relaxed);
    (out, PEAK.load(Ordering::Relaxed))
}

/// Outcome of one criterion: a list of named checks with a detail string.
#[derive(Default)]
struct Checks(Vec<(String, bool, String)>);

impl Checks {
    fn check(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.0.push((name.to_string(), ok, detail.into()));
    }

    fn passed(&self) -> bool {
        self.0.iter().all(|c| c.1)
    }

    fn summary(&self) -> String {
        self.0
            .iter()
            .map(|(n, ok, d)| format!("{}{n} ({d})", if *ok { "" } else { "!! " }))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(
        &[r, c],
        (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> RelativePose {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.gen_range(1f64.to_radians()..30f64.to_radians());
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
    let t: [f64; 3] = UnitSphere.sample(rng);
    RelativePose::new(*r.matrix(), Vector3::from(t)).unwrap()
}

fn project(pose: &RelativePose, n: usize, rng: &mut ChaCha8Rng) -> Vec<Correspondence> {
    (0..n)
        .map(|_| {
            let z = rng.gen_range(4.0..8.0);
            let x = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 1.0) * z;
            let xb = pose.transform(&x);
            Correspondence::new(x.x / x.z, x.y / x.z, xb.x / xb.z, xb.y / xb.z)
        })
        .collect()
}

fn scene(n: usize, outlier_ratio: f64, noise_sigma: f64, seed: u64) -> ScenePair {
    synth_scene(SceneParams {
        n,
        outlier_ratio,
        noise_sigma,
        seed,
    })
    .unwrap()
}

fn geometry_oracles() -> Checks {
    let mut c = Checks::default();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_e, mut worst_pose) = (0.0f64, 0.0f64);
    for trial in 0..50 {
        let pose = random_pose(&mut rng);
        let gt = compose_essential(&pose);
        let cs = project(&pose, 16 + trial, &mut rng);
        let est = weighted_eight_point(&cs, &vec![1.0; cs.len()]).unwrap();
        worst_e = worst_e.max(est.frobenius_distance(&gt));
        let back = decompose_essential(&gt, &cs).unwrap();
        let (r, t) = pose_error(&back, &pose);
        worst_pose = worst_pose.max(r).max(t);
    }
    let elapsed = start.elapsed();
    c.check(
        "eight-point vs E_gt",
        worst_e < 1e-6,
        format!("max Frobenius {worst_e:.1e}"),
    );
    c.check(
        "decompose round trip",
        worst_pose < 1e-6,
        format!("max {worst_pose:.1e} deg"),
    );
    c.check(
        "runtime",
        elapsed < Duration::from_secs(1),
        format!("{:.3} s", elapsed.as_secs_f64()),
    );
    c
}

/// `a·b` with an error-free product transform and compensated summation.
fn dot_compensated(a: &[f64], b: &[f64]) -> f64 {
    let (mut s, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let p = x * y;
        let perr = x.mul_add(*y, -p);
        let t = s + p;
        comp += if s.abs() >= p.abs() {
            (s - t) + p
        } else {
            (p - t) + s
        };
        comp += perr;
        s = t;
    }
    s + comp
}

/// The regression loss written out from its definition with compensated
/// arithmetic throughout.
fn regression_oracle(e_hat: &[f64], e_gt: &EssentialMatrix) -> f64 {
    let v = virtual_correspondences(e_gt, VIRTUAL_COUNT);
    let g = e_gt.matrix();
    let terms: Vec<f64> =
        v.p.iter()
            .zip(&v.q)
            .map(|(p, q)| {
                let outer: Vec<f64> = (0..3)
                    .flat_map(|i| (0..3).map(move |j| q[i] * p[j]))
                    .collect();
                let r = dot_compensated(&outer, e_hat);
                let gp = g * p;
                let gtq = g.transpose() * q;
                let den = dot_compensated(
                    &[gp.x, gp.y, gtq.x, gtq.y, 1.0],
                    &[gp.x, gp.y, gtq.x, gtq.y, EPIPOLAR_EPS],
                );
                r * r / den
            })
            .collect();
    dot_compensated(&terms, &vec![1.0; terms.len()]) / terms.len() as f64
}

fn regression_loss_checks() -> Checks {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_exact = 0.0f64;
    let mut worst_rel = 0.0f64;
    for _ in 0..20 {
        let gt = compose_essential(&random_pose(&mut rng));
        let rows = VirtualRows::new(&gt);
        let pos = gt.to_row_vec();
        let neg: Vec<f64> = pos.iter().map(|v| -v).collect();
        worst_exact = worst_exact
            .max(regression_loss(&gt, &gt))
            .max(rows.loss(&pos))
            .max(rows.loss(&neg));

        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let e_hat = EssentialMatrix::from_matrix(m).unwrap();
        let ours = regression_loss(&e_hat, &gt);
        let oracle = regression_oracle(&e_hat.to_row_vec(), &gt);
        worst_rel = worst_rel.max((ours - oracle).abs() / oracle.abs());

        let mut t = Tape::detached();
        let ev = t
            .constant(Tensor::new(&[1, 9], e_hat.to_row_vec()).unwrap())
            .unwrap();
        let l = rows.loss_tape(&mut t, ev).unwrap();
        worst_rel = worst_rel.max((t.value(l).item() - oracle).abs() / oracle.abs());
    }
    c.check(
        "±E_gt",
        worst_exact < 1e-12,
        format!("max loss {worst_exact:.1e}"),
    );
    c.check(
        "random E vs oracle",
        worst_rel < 1e-10,
        format!("max rel {worst_rel:.1e}"),
    );
    c
}

fn phi(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// The conserved-flow attention evaluated through the full `N × M` score
/// matrix `S_ij = φ(q_i)·φ(k_j)`.
fn flow_quadratic(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let (n, m, d, dv) = (q.rows(), k.rows(), q.cols(), v.cols());
    let s: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..d).map(|c| phi(q.get(i, c)) * phi(k.get(j, c))).sum())
                .collect()
        })
        .collect();
    let incoming: Vec<f64> = s.iter().map(|r| r.iter().sum::<f64>() + FLOW_EPS).collect();
    let outgoing: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| s[i][j] / incoming[i]).sum::<f64>() + FLOW_EPS)
        .collect();
    let conserved: Vec<f64> = (0..n)
        .map(|i| (0..m).map(|j| s[i][j] / outgoing[j]).sum())
        .collect();
    let mx = outgoing.iter().copied().fold(f64::MIN, f64::max);
    let z: f64 = outgoing.iter().map(|o| (o - mx).exp()).sum();
    let comp: Vec<f64> = outgoing
        .iter()
        .map(|o| m as f64 * (o - mx).exp() / z)
        .collect();
    let mut out = vec![0.0; n * dv];
    for i in 0..n {
        let gate = 1.0 / (1.0 + (-conserved[i]).exp());
        for c in 0..dv {
            let a: f64 = (0..m)
                .map(|j| s[i][j] / incoming[i] * comp[j] * v.get(j, c))
                .sum();
            out[i * dv + c] = gate * a;
        }
    }
    Tensor::new(&[n, dv], out).unwrap()
}

fn run_flow(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let mut t = Tape::detached();
    let (qv, kv, vv) = (
        t.constant(q.clone()).unwrap(),
        t.constant(k.clone()).unwrap(),
        t.constant(v.clone()).unwrap(),
    );
    let y = flow_attention(&mut t, qv, kv, vv).unwrap();
    t.value(y).clone()
}

fn flow_attention_checks() -> Checks {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (q, k, v) = (
        random(&mut rng, 64, 32),
        random(&mut rng, 64, 32),
        random(&mut rng, 64, 32),
    );
    let reference = flow_quadratic(&q, &k, &v);
    let scale = reference.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let rel = run_flow(&q, &k, &v).max_abs_diff(&reference) / scale;
    c.check("N=64 parity", rel < 1e-5, format!("rel {rel:.1e}"));

    let d = 64;
    let time = |kind, n| bench_attention(kind, n, d, 1, 5, 0).unwrap().median_ms;
    let flow = time(AttentionKind::Flow, 4096) / time(AttentionKind::Flow, 1024);
    let dense = time(AttentionKind::Dense, 4096) / time(AttentionKind::Dense, 1024);
    c.check("flow 4096/1024", flow <= 6.0, format!("{flow:.2}x"));
    c.check("dense 4096/1024", dense >= 8.0, format!("{dense:.2}x"));

    let peak_at = |n: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let (q, k, v) = (
            random(&mut rng, n, 16),
            random(&mut rng, n, 16),
            random(&mut rng, n, 16),
        );
        peak_allocation(|| run_flow(&q, &k, &v)).1
    };
    let (small, large) = (peak_at(4096), peak_at(16384));
    let square = 16384usize * 16384 * std::mem::size_of::<f64>();
    c.check(
        "no N×N buffer at N=16384",
        large < square / 64 && large <= 5 * small,
        format!("largest allocation {large} B, {small} B at N=4096"),
    );
    c
}

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

fn to_numerics<E: std::fmt::Display>(e: E) -> NumericsError {
    NumericsError::Invalid(e.to_string())
}

/// Worst of the parameter and input gradient checks of a single-input block.
fn block_grad<F>(store: &ParamStore, x: &Tensor, f: F) -> f64
where
    F: Fn(&mut Tape, Var) -> Result<Var, NumericsError>,
{
    let loss = |t: &mut Tape, v: Var| {
        let y = f(t, v)?;
        t.tanh(y)
    };
    let p = if store.is_empty() {
        0.0
    } else {
        grad_check_params(
            store,
            |t| {
                let v = t.constant(x.clone())?;
                loss(t, v)
            },
            H,
        )
        .unwrap()
    };
    p.max(grad_check_input(store, loss, x, H).unwrap())
}

fn gradient_suite() -> Checks {
    let mut c = Checks::default();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut errors: Vec<(&str, f64)> = Vec::new();

    let x = random(&mut rng, 12, 5);
    errors.push((
        "context_norm",
        grad_check(|t, v| t.context_norm(v, NORM_EPS), &x, H).unwrap(),
    ));

    let mut s = ParamStore::new();
    let pcn = PointCn::new(&mut s, &mut rng, "pcn", 5, 6).unwrap();
    errors.push(("pointcn", block_grad(&s, &x, |t, v| pcn.forward(t, v))));

    let (k, ch) = (3, 4);
    let g = random(&mut rng, 5 * k, ch);
    let mut s = ParamStore::new();
    let sa = SpatialAttention::new(&mut s, &mut rng, "sa", k, ch).unwrap();
    errors.push((
        "spatial attention",
        block_grad(&s, &g, |t, v| sa.forward(t, v)),
    ));
    let mut s = ParamStore::new();
    let na = NeighborhoodAttention::new(&mut s, &mut rng, "na", k, ch).unwrap();
    errors.push((
        "neighborhood attention",
        block_grad(&s, &g, |t, v| na.forward(t, v)),
    ));
    let mut s = ParamStore::new();
    let ca = ChannelAttention::new(&mut s, &mut rng, "ca", ch).unwrap();
    errors.push((
        "channel attention",
        block_grad(&s, &g, |t, v| ca.forward(t, v)),
    ));
    let mut s = ParamStore::new();
    let ann = AnnularAggregate::new(&mut s, &mut rng, "ann", k, ch, ch).unwrap();
    errors.push((
        "annular aggregate",
        block_grad(&s, &g, |t, v| ann.forward(t, v)),
    ));

    let f = random(&mut rng, 9, 4);
    let mut s = ParamStore::new();
    let exp = ExplicitBranch::new(&mut s, &mut rng, "exp", 4, 3).unwrap();
    errors.push((
        "explicit branch",
        block_grad(&s, &f, |t, v| exp.forward(t, v)),
    ));
    let mut s = ParamStore::new();
    let imp = ImplicitBranch::new(&mut s, &mut rng, "imp", 4, 3).unwrap();
    errors.push((
        "pool/filter/unpool",
        block_grad(&s, &f, |t, v| imp.forward(t, v)),
    ));
    let mut s = ParamStore::new();
    let oa = OaFilter::new(&mut s, &mut rng, "oa", 6, 4).unwrap();
    let clusters = random(&mut rng, 6, 4);
    errors.push((
        "cluster filter",
        block_grad(&s, &clusters, |t, v| oa.forward(t, v)),
    ));

    let (q, kk, vv) = (
        random(&mut rng, 6, 4),
        random(&mut rng, 7, 4),
        random(&mut rng, 7, 3),
    );
    for (name, kind) in [
        ("flow attention", AttentionKind::Flow),
        ("dense attention", AttentionKind::Dense),
    ] {
        let e = [0, 1, 2]
            .iter()
            .map(|&which| {
                let base = [&q, &kk, &vv];
                grad_check(
                    |t, x| {
                        let mut args = [x, x, x];
                        for (i, b) in base.iter().enumerate() {
                            if i != which {
                                args[i] = t.constant((*b).clone())?;
                            }
                        }
                        let y = match kind {
                            AttentionKind::Flow => flow_attention(t, args[0], args[1], args[2])?,
                            _ => dense_attention(t, args[0], args[1], args[2])?,
                        };
                        t.square(y)
                    },
                    base[which],
                    H,
                )
                .unwrap()
            })
            .fold(0.0f64, f64::max);
        errors.push((name, e));
    }

    let mut s = ParamStore::new();
    let inj =
        MotionInjection::new(&mut s, &mut rng, "mi", 16, 4, 1, AttentionKind::Flow, true).unwrap();
    let feats = random(&mut rng, 16, 16);
    let motion = random(&mut rng, 16, 16);
    let e = block_grad(&s, &feats, |t, v| {
        let m = t.constant(motion.clone())?;
        inj.forward(t, v, m)
    })
    .max(block_grad(&s, &motion, |t, m| {
        let v = t.constant(feats.clone())?;
        inj.forward(t, v, m)
    }));
    errors.push(("motion injection N=16 d=16", e));

    let gt = compose_essential(&random_pose(&mut rng));
    let rows = VirtualRows::new(&gt);
    let e_hat = Tensor::new(&[1, 9], (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    errors.push((
        "regression loss",
        grad_check(|t, v| rows.loss_tape(t, v).map_err(to_numerics), &e_hat, H).unwrap(),
    ));

    let cfg = CorrAdaptorConfig {
        k_per_block: vec![3, 3],
        d: 4,
        clusters: 3,
        heads: 2,
        motion_iterations: 1,
        ..CorrAdaptorConfig::default()
    };
    let pair = PreparedPair::new(&scene(32, 0.5, 1e-3, 15)).unwrap();
    let mut model = CorrAdaptor::new(cfg, 5).unwrap();
    // A positive final bias keeps every candidate weighted, so the
    // eight-point step and the regression term are part of the graph.
    let bias = model.params.id("block1.head.bias").unwrap();
    model.params.set(bias, &[2.0]).unwrap();
    let e = grad_check_params(
        &model.params,
        |t| {
            let fw = model
                .forward_tape(t, &pair.correspondences)
                .map_err(to_numerics)?;
            if fw.e_hat.is_none() {
                return Err(NumericsError::Invalid("no essential matrix".into()));
            }
            let l = hybrid_loss(t, &fw, &pair.labels, &pair.rows, 0.5, 1.0).map_err(to_numerics)?;
            Ok(l.total)
        },
        H,
    )
    .unwrap();
    errors.push(("full network + hybrid loss", e));

    let elapsed = start.elapsed();
    for (name, e) in errors {
        c.check(name, e < GRAD_TOL, format!("{e:.1e}"));
    }
    c.check(
        "runtime",
        elapsed < Duration::from_secs(120),
        format!("{:.1} s", elapsed.as_secs_f64()),
    );
    c
}

fn pipeline_invariants() -> Checks {
    let mut c = Checks::default();
    let defaults = CorrAdaptorConfig::default();
    let sizes = defaults.stage_sizes(2000);
    c.check(
        "default stage sizes",
        sizes == [2000, 1000, 500],
        format!("{sizes:?}"),
    );
    let odd = defaults.stage_sizes(777);
    c.check("ceil rounding", odd == [777, 389, 195], format!("{odd:?}"));

    let cfg = CorrAdaptorConfig {
        d: 8,
        heads: 2,
        clusters: 8,
        motion_iterations: 1,
        ..CorrAdaptorConfig::default()
    };
    let mut model = CorrAdaptor::new(cfg, 1).unwrap();
    let bias = model.params.id("block1.head.bias").unwrap();
    model.params.set(bias, &[3.0]).unwrap();
    let pair = scene(2000, 0.5, 1e-3, 4);
    let cs = &pair.correspondences;
    let a = model.forward(cs).unwrap();
    let kept: Vec<usize> = a.states.iter().map(|s| s.kept.len()).collect();
    c.check(
        "forward stage sizes",
        kept == [1000, 500],
        format!("{kept:?}"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut perm: Vec<usize> = (0..cs.len()).collect();
    perm.shuffle(&mut rng);
    let permuted: Vec<Correspondence> = perm.iter().map(|&i| cs[i]).collect();
    let b = model.forward(&permuted).unwrap();
    let same = a.states.iter().zip(&b.states).all(|(sa, sb)| {
        let mut mapped: Vec<usize> = sb.kept.iter().map(|&i| perm[i]).collect();
        mapped.sort_unstable();
        mapped == sa.kept
    });
    c.check("kept sets under permutation", same, "N=2000, both blocks");

    let mut mismatches = 0;
    for seed in 0..10 {
        let p = scene(500, 0.5, 1e-3, 100 + seed);
        let e = p.ground_truth.unwrap().essential;
        let labels = inlier_labels(&p.correspondences, &e);
        let verified = full_size_verification(&e, &p.correspondences, INLIER_THRESHOLD);
        mismatches += labels.iter().zip(&verified).filter(|(a, b)| a != b).count();
    }
    c.check(
        "verification reproduces labels",
        mismatches == 0,
        format!("{mismatches} mismatches"),
    );
    c
}

const LEARN_PAIRS: u64 = 200;
const HELD_OUT: u64 = 50;
const DATA_SEED: u64 = 7;
const MODEL_SEEDS: [u64; 3] = [0, 1, 2];

fn desk_split() -> (Vec<PreparedPair>, Vec<ScenePair>) {
    let pair = |i: u64| scene(500, 0.5, 1e-3, split_seed(DATA_SEED, i));
    let train: Vec<PreparedPair> = (0..LEARN_PAIRS)
        .map(|i| PreparedPair::new(&pair(i)).unwrap())
        .collect();
    let test = (LEARN_PAIRS..LEARN_PAIRS + HELD_OUT).map(pair).collect();
    (train, test)
}

fn train_and_score(
    cfg: CorrAdaptorConfig,
    seed: u64,
    train_pairs: &[PreparedPair],
    test: &[ScenePair],
) -> MetricsReport {
    let mut model = CorrAdaptor::new(cfg, seed).unwrap();
    let tc = TrainConfig {
        steps: 2000,
        batch: 1,
        seed,
        val_every_epochs: 0,
        ..TrainConfig::default()
    };
    train(&mut model, train_pairs, &[], &tc, |_| Ok(())).unwrap();
    evaluate_model(&model, test, PosePath::default()).unwrap()
}

fn desk_learning() -> Checks {
    let mut c = Checks::default();
    let start = Instant::now();
    let (train_pairs, test) = desk_split();
    let variants = [
        ("full", CorrAdaptorConfig::desk()),
        (
            "motion-off",
            CorrAdaptorConfig {
                motion: false,
                ..CorrAdaptorConfig::desk()
            },
        ),
        (
            "implicit-only",
            CorrAdaptorConfig {
                branches: Branches::ImplicitOnly,
                ..CorrAdaptorConfig::desk()
            },
        ),
    ];
    let mut auc = [0.0f64; 3];
    let (mut precision, mut recall) = (f64::INFINITY, f64::INFINITY);
    for (v, (name, cfg)) in variants.iter().enumerate() {
        for &seed in &MODEL_SEEDS {
            let s = train_and_score(cfg.clone(), seed, &train_pairs, &test).summary();
            let a5 = s.auc5.unwrap_or(0.0);
            eprintln!(
                "  {name} seed {seed}: precision {:.3} recall {:.3} AUC@5 {a5:.3}",
                s.precision.unwrap_or(0.0),
                s.recall.unwrap_or(0.0)
            );
            auc[v] += a5 / MODEL_SEEDS.len() as f64;
            if v == 0 {
                precision = precision.min(s.precision.unwrap_or(0.0));
                recall = recall.min(s.recall.unwrap_or(0.0));
            }
        }
    }
    let elapsed = start.elapsed();
    c.check(
        "full precision and recall > 0.80",
        precision > 0.8 && recall > 0.8,
        format!("worst seed P {precision:.3} R {recall:.3}"),
    );
    c.check(
        "AUC@5 full > motion-off",
        auc[0] > auc[1],
        format!("{:.3} vs {:.3}", auc[0], auc[1]),
    );
    c.check(
        "AUC@5 full > implicit-only",
        auc[0] > auc[2],
        format!("{:.3} vs {:.3}", auc[0], auc[2]),
    );
    c.check(
        "runtime",
        elapsed < Duration::from_secs(30 * 60),
        format!("{:.1} min", elapsed.as_secs_f64() / 60.0),
    );
    c
}

fn ransac_baseline() -> Checks {
    let mut c = Checks::default();
    let pairs: Vec<ScenePair> = (0..HELD_OUT)
        .map(|i| scene(500, 0.5, 0.0, split_seed(DATA_SEED + 1, i)))
        .collect();
    let cfg = RansacConfig {
        iterations: 1000,
        ..RansacConfig::default()
    };
    let report = evaluate_ransac(&pairs, &cfg).unwrap();
    let worst = report
        .rows
        .iter()
        .filter_map(|r| r.prf.map(|p| p.recall))
        .fold(1.0f64, f64::min);
    let recall = report.summary().recall.unwrap_or(0.0);
    c.check(
        "mean inlier recall ≥ 0.99",
        recall >= 0.99,
        format!("{recall:.4}, worst pair {worst:.3}"),
    );
    c
}

fn determinism() -> Checks {
    let mut c = Checks::default();
    let dataset = || {
        let pairs: Vec<ScenePair> = (0..8)
            .map(|i| scene(200, 0.5, 1e-3, split_seed(11, i)))
            .collect();
        let mut bytes = Vec::new();
        write_pairs(&mut bytes, &pairs).unwrap();
        (pairs, bytes)
    };
    let (pairs, data_a) = dataset();
    let (_, data_b) = dataset();
    c.check(
        "dataset bytes",
        data_a == data_b,
        format!("{} B", data_a.len()),
    );

    let cfg = CorrAdaptorConfig {
        k_per_block: vec![4, 3],
        d: 8,
        heads: 2,
        clusters: 4,
        motion_iterations: 1,
        ..CorrAdaptorConfig::default()
    };
    let prepared: Vec<PreparedPair> = pairs[..6]
        .iter()
        .map(|p| PreparedPair::new(p).unwrap())
        .collect();
    let run = || {
        let mut model = CorrAdaptor::new(cfg.clone(), 3).unwrap();
        let tc = TrainConfig {
            steps: 12,
            batch: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut log = Vec::new();
        train(&mut model, &prepared, &pairs[6..], &tc, |r| {
            log.push(serde_json::to_string(r).unwrap());
            Ok(())
        })
        .unwrap();
        let report = evaluate_model(&model, &pairs[6..], PosePath::default()).unwrap();
        let report = serde_json::to_string(&report.summary()).unwrap();
        (model.checkpoint_bytes(), log, report)
    };
    let (ckpt_a, log_a, report_a) = run();
    let (ckpt_b, log_b, report_b) = run();
    c.check(
        "checkpoint bytes",
        ckpt_a == ckpt_b,
        format!("{} B", ckpt_a.len()),
    );
    c.check(
        "training log",
        log_a == log_b,
        format!("{} records", log_a.len()),
    );
    c.check("metric report", report_a == report_b, report_a);
    c
}

type Criterion = (usize, &'static str, fn() -> Checks);

const CRITERIA: [Criterion; 8] = [
    (1, "geometry oracles", geometry_oracles),
    (2, "regression loss", regression_loss_checks),
    (3, "flow attention", flow_attention_checks),
    (4, "gradient suite", gradient_suite),
    (5, "pipeline invariants", pipeline_invariants),
    (6, "desk-scale learning", desk_learning),
    (7, "RANSAC baseline", ransac_baseline),
    (8, "determinism", determinism),
];

fn main() {
    corradaptor::numerics::retain_freed_memory();
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run));
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(checks) => (checks.passed(), checks.summary()),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {n} {name} [{secs:.1}s]: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
