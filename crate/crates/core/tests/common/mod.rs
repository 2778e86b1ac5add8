//! Brute-force oracles and random instance generators shared by the
//! integration tests.
#![allow(dead_code)]

use mtt_core::metrics::GospaParams;
use mtt_core::models::{kalman_update, predict, MeasurementModel, MotionModel};
use mtt_core::tracker::KnownBirth;
use mtt_core::{AssociationProblem, GaussianBelief, MeasurementFrame, ScenarioId, TrackerKind, ValidatedConfig};
use nalgebra::{DMatrix, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Every tuple in `{0..=m}^l` that uses no measurement twice, with its
/// weight `prod beta[j, a_j] * prod_{unused} xi0[m]`, including zero-weight
/// tuples.
pub fn brute_events(problem: &AssociationProblem) -> Vec<(Vec<usize>, f64)> {
    let (l, m) = (problem.targets(), problem.measurements());
    let mut out = Vec::new();
    let mut tuple = vec![0usize; l];
    loop {
        let mut used = vec![false; m + 1];
        let mut ok = true;
        for &c in &tuple {
            if c > 0 {
                if used[c] {
                    ok = false;
                    break;
                }
                used[c] = true;
            }
        }
        if ok {
            let mut w = 1.0;
            for (j, &c) in tuple.iter().enumerate() {
                w *= problem.weight(j, c);
            }
            for k in 0..m {
                if !used[k + 1] {
                    w *= problem.xi0()[k];
                }
            }
            out.push((tuple.clone(), w));
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == l {
                return out;
            }
            tuple[pos] += 1;
            if tuple[pos] <= m {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
    }
}

/// Exact marginals by summing over [`brute_events`].
pub fn brute_marginals(problem: &AssociationProblem) -> DMatrix<f64> {
    let (l, m) = (problem.targets(), problem.measurements());
    let mut acc = DMatrix::zeros(l, m + 1);
    let mut total = 0.0;
    for (tuple, w) in brute_events(problem) {
        total += w;
        for (j, &c) in tuple.iter().enumerate() {
            acc[(j, c)] += w;
        }
    }
    acc / total
}

/// Random problem with a positive miss column and each target/measurement
/// entry nonzero with probability `density`.
pub fn random_problem<R: Rng>(rng: &mut R, l: usize, m: usize, density: f64) -> AssociationProblem {
    let mut beta = DMatrix::zeros(l, m + 1);
    for j in 0..l {
        beta[(j, 0)] = rng.random_range(0.05..2.0);
        for k in 0..m {
            if rng.random_bool(density) {
                beta[(j, k + 1)] = rng.random_range(0.01..20.0);
            }
        }
    }
    let xi0 = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
    AssociationProblem::new(beta, xi0).unwrap()
}

/// Random problem whose target/measurement graph is a forest.
pub fn forest_problem<R: Rng>(rng: &mut R, l: usize, m: usize) -> AssociationProblem {
    let mut parent: Vec<usize> = (0..l + m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    let mut beta = DMatrix::zeros(l, m + 1);
    for j in 0..l {
        beta[(j, 0)] = rng.random_range(0.05..2.0);
    }
    let mut pairs: Vec<(usize, usize)> = (0..l).flat_map(|j| (0..m).map(move |k| (j, k))).collect();
    // Shuffle, then keep every pair that does not close a cycle.
    for i in (1..pairs.len()).rev() {
        pairs.swap(i, rng.random_range(0..=i));
    }
    for (j, k) in pairs {
        if !rng.random_bool(0.6) {
            continue;
        }
        let (a, b) = (find(&mut parent, j), find(&mut parent, l + k));
        if a != b {
            parent[a] = b;
            beta[(j, k + 1)] = rng.random_range(0.01..20.0);
        }
    }
    let xi0 = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
    AssociationProblem::new(beta, xi0).unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn random_set<R: Rng>(rng: &mut R, max: usize) -> Vec<Vector2<f64>> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| Vector2::new(rng.random_range(0.0..120.0), rng.random_range(0.0..120.0))).collect()
}

/// `min over partial assignments` of the GOSPA sum, by recursion over the
/// truth points.
pub fn brute_gospa_sum(truth: &[Vector2<f64>], est: &[Vector2<f64>], params: GospaParams) -> f64 {
    fn go(i: usize, truth: &[Vector2<f64>], est: &[Vector2<f64>], used: &mut Vec<bool>, params: GospaParams) -> f64 {
        let unassigned = params.c.powf(params.p) / params.beta;
        if i == truth.len() {
            return used.iter().filter(|u| !**u).count() as f64 * unassigned;
        }
        let mut best = unassigned + go(i + 1, truth, est, used, params);
        for j in 0..est.len() {
            if !used[j] {
                used[j] = true;
                let d = (truth[i] - est[j]).norm().min(params.c).powf(params.p);
                best = best.min(d + go(i + 1, truth, est, used, params));
                used[j] = false;
            }
        }
        best
    }
    go(0, truth, est, &mut vec![false; est.len()], params)
}

pub fn clutter_free_config() -> ValidatedConfig {
    let mut cfg = ValidatedConfig::for_scenario(ScenarioId::S1);
    cfg.p_d = 1.0;
    cfg.mu_c = 0.0;
    cfg
}

/// One target, detected at every scan, no clutter.
pub fn single_target_frames(rng: &mut impl Rng, steps: usize) -> (Vec<MeasurementFrame>, Vector2<f64>) {
    let noise = Normal::new(0.0, 10.0).unwrap();
    let start = Vector2::new(-200.0, 50.0);
    let velocity = Vector2::new(3.0, -1.0);
    let frames = (1..=steps)
        .map(|k| {
            let pos = start + velocity * (k - 1) as f64;
            let z = pos + Vector2::new(noise.sample(rng), noise.sample(rng));
            MeasurementFrame::new(k, vec![z])
        })
        .collect();
    (frames, start)
}

pub fn kalman_track(cfg: &ValidatedConfig, frames: &[MeasurementFrame], start: Vector2<f64>) -> Vec<Vector4<f64>> {
    let motion = MotionModel::from_config(cfg);
    let model = MeasurementModel::from_config(cfg);
    let pv = cfg.sigma_v * cfg.sigma_v;
    let vv = cfg.tracker.new_velocity_std.powi(2);
    let mut belief = GaussianBelief::new(
        Vector4::new(start[0], start[1], 0.0, 0.0),
        Matrix4::from_diagonal(&Vector4::new(pv, pv, vv, vv)),
    )
    .unwrap();
    let mut out = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        if k > 0 {
            belief = predict(&belief, &motion);
        }
        belief = kalman_update(&belief, &frame.measurements[0], &model).unwrap().0;
        out.push(*belief.mean());
    }
    out
}

/// Per-scan estimate of a tracker handed the single target's birth.
pub fn tracker_means(
    kind: TrackerKind,
    cfg: &ValidatedConfig,
    frames: &[MeasurementFrame],
    start: Vector2<f64>,
) -> Vec<Vector4<f64>> {
    let known = vec![KnownBirth { time: 1, position: start }];
    let mut tracker = kind.build(cfg, 0, Some(known));
    frames
        .iter()
        .map(|f| {
            tracker.step(f).unwrap();
            let est = tracker.estimates();
            assert_eq!(est.len(), 1, "{kind} at scan {}", f.time);
            est[0].state.to_vector()
        })
        .collect()
}
