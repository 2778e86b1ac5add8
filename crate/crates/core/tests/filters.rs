//! Kalman filter, smoother and JPDA mixture checks against independent
//! dense-arithmetic oracles, plus the tracker equivalence suite.

mod common;

use common::{clutter_free_config, kalman_track, single_target_frames, tracker_means};
use mtt_core::bp::{bp_step, BpModels, BpState, BpVariant};
use mtt_core::config::Roi;
use mtt_core::jpda::{jpda_step, JpdaMode, JpdaModels, JpdaState};
use mtt_core::models::{kalman_update, predict, rts_smooth, MeasurementModel, MotionModel};
use mtt_core::simgen::{build_scenario, simulate_run};
use mtt_core::tracker::{KnownBirth, TrackerDiagnostics};
use mtt_core::{Belief, GaussianBelief, MeasurementFrame, ScenarioId, TrackStatus, TrackerKind, ValidatedConfig};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cov(rng: &mut impl Rng, scale: f64) -> Matrix4<f64> {
    let root = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0) * scale);
    root * root.transpose() + Matrix4::identity() * 0.1 * scale * scale
}

fn random_belief(rng: &mut impl Rng) -> GaussianBelief {
    let mean = Vector4::from_fn(|i, _| rng.random_range(-100.0..100.0) / if i < 2 { 1.0 } else { 20.0 });
    let scale = rng.random_range(1.0..15.0);
    GaussianBelief::new(mean, random_cov(rng, scale)).unwrap()
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(1e-300)
}

fn dense4(m: &Matrix4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 4, m.as_slice())
}

fn dense_vec(v: &Vector4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 1, v.as_slice())
}

/// Process noise by integrating `e^{F t} G G^T e^{F^T t}` over one period
/// with Simpson's rule, exact for the cubic integrand.
fn integrated_process_noise(period: f64, intensity: f64) -> Matrix4<f64> {
    let term = |t: f64| {
        let drift = Matrix4::new(
            1.0, 0.0, t, 0.0, //
            0.0, 1.0, 0.0, t, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let input = nalgebra::Matrix4x2::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0);
        let g = drift * input;
        g * g.transpose()
    };
    let h = period / 2.0;
    (term(0.0) + term(h) * 4.0 + term(period)) * (period / 6.0) * intensity
}

fn observation() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

fn clutter_model(noise_std: f64) -> MeasurementModel {
    MeasurementModel::new(noise_std, 0.7, 10.0, Roi::square(750.0))
}

#[test]
fn process_noise_matches_integrated_white_acceleration() {
    for (period, intensity) in [(1.0, 0.1), (1.0, 1e-4), (0.5, 2.0), (2.5, 0.3)] {
        let model = MotionModel::new(period, intensity, 0.99);
        let expected = integrated_process_noise(period, intensity);
        assert!((model.process_noise() - expected).abs().max() <= 1e-14 * expected.abs().max());
    }
}

#[test]
fn predict_matches_dense_triple_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = MotionModel::new(1.0, 0.1, 0.995);
    let transition = DMatrix::from_row_slice(
        4,
        4,
        &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    );
    let noise = dense4(&integrated_process_noise(1.0, 0.1));
    for _ in 0..500 {
        let belief = random_belief(&mut rng);
        let out = predict(&belief, &model);
        let mean = &transition * dense_vec(belief.mean());
        let cov = &transition * dense4(belief.cov()) * transition.transpose() + &noise;
        assert!(rel_err(&dense_vec(out.mean()), &mean) < 1e-12);
        assert!(rel_err(&dense4(out.cov()), &cov) < 1e-12);
    }
}

#[test]
fn update_matches_information_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let noise_std = rng.random_range(1.0..20.0);
        let model = clutter_model(noise_std);
        let belief = random_belief(&mut rng);
        let z =
            observation() * belief.mean() + Vector2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let (post, likelihood) = kalman_update(&belief, &z, &model).unwrap();

        let prior_info = belief.cov().try_inverse().unwrap();
        let r_inv = Matrix2::identity() / (noise_std * noise_std);
        let info = prior_info + observation().transpose() * r_inv * observation();
        let cov = info.try_inverse().unwrap();
        let mean = cov * (prior_info * belief.mean() + observation().transpose() * r_inv * z);
        assert!(rel_err(&dense4(post.cov()), &dense4(&cov)) < 1e-10);
        assert!((post.mean() - mean).abs().max() <= 1e-10 * mean.abs().max().max(1.0));

        let s = observation() * belief.cov() * observation().transpose() + Matrix2::identity() * noise_std * noise_std;
        let d = z - observation() * belief.mean();
        let density = (-0.5 * (d.transpose() * s.try_inverse().unwrap() * d)[0]).exp()
            / (2.0 * std::f64::consts::PI * s.determinant().sqrt());
        assert!((likelihood - density).abs() <= 1e-10 * density);
    }
}

#[test]
fn huge_measurement_noise_leaves_prior_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = clutter_model(1e6);
    for _ in 0..50 {
        let prior = random_belief(&mut rng);
        let z = observation() * prior.mean() + Vector2::new(5.0, -5.0);
        let (post, _) = kalman_update(&prior, &z, &model).unwrap();
        // Gaussian KL divergence of the posterior from the prior.
        let p_inv = prior.cov().try_inverse().unwrap();
        let d = post.mean() - prior.mean();
        let kl = 0.5
            * ((p_inv * post.cov()).trace() - 4.0
                + (d.transpose() * p_inv * d)[0]
                + (prior.cov().determinant() / post.cov().determinant()).ln());
        assert!(kl < 1e-6, "kl {kl}");
    }
}

/// Filtered and one-step predicted beliefs of a measurement sequence.
fn filter_sequence(
    first: &GaussianBelief,
    zs: &[Vector2<f64>],
    motion: &MotionModel,
    model: &MeasurementModel,
) -> (Vec<GaussianBelief>, Vec<GaussianBelief>) {
    let mut filtered = Vec::new();
    let mut predicted = vec![first.clone()];
    let (mut current, _) = kalman_update(first, &zs[0], model).unwrap();
    filtered.push(current.clone());
    for z in &zs[1..] {
        let pred = predict(&current, motion);
        current = kalman_update(&pred, z, model).unwrap().0;
        predicted.push(pred);
        filtered.push(current.clone());
    }
    (filtered, predicted)
}

#[test]
fn smoother_matches_batch_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let steps = 5;
    for _ in 0..100 {
        let intensity = rng.random_range(0.01..2.0);
        let motion = MotionModel::new(1.0, intensity, 1.0);
        let noise_std = rng.random_range(1.0..15.0);
        let model = clutter_model(noise_std);
        let prior = random_belief(&mut rng);
        let zs: Vec<Vector2<f64>> = (0..steps)
            .map(|k| Vector2::new(rng.random_range(-50.0..50.0) + k as f64, rng.random_range(-50.0..50.0)))
            .collect();
        let (filtered, predicted) = filter_sequence(&prior, &zs, &motion, &model);
        let smoothed = rts_smooth(&filtered, &predicted, &motion).unwrap();

        // Joint prior of the stacked states, then one dense conditioning.
        let n = 4 * steps;
        let transition = dense4(motion.transition());
        let noise = dense4(motion.process_noise());
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        mean.rows_mut(0, 4).copy_from(&DVector::from_column_slice(prior.mean().as_slice()));
        cov.view_mut((0, 0), (4, 4)).copy_from(&dense4(prior.cov()));
        for k in 1..steps {
            let prev_mean = mean.rows(4 * (k - 1), 4).into_owned();
            mean.rows_mut(4 * k, 4).copy_from(&(&transition * prev_mean));
            for i in 0..k {
                let block = &transition * cov.view((4 * (k - 1), 4 * i), (4, 4)).into_owned();
                cov.view_mut((4 * k, 4 * i), (4, 4)).copy_from(&block);
                cov.view_mut((4 * i, 4 * k), (4, 4)).copy_from(&block.transpose());
            }
            let diag = &transition * cov.view((4 * (k - 1), 4 * (k - 1)), (4, 4)).into_owned() * transition.transpose()
                + &noise;
            cov.view_mut((4 * k, 4 * k), (4, 4)).copy_from(&diag);
        }
        let mut obs = DMatrix::zeros(2 * steps, n);
        for k in 0..steps {
            obs[(2 * k, 4 * k)] = 1.0;
            obs[(2 * k + 1, 4 * k + 1)] = 1.0;
        }
        let zvec = DVector::from_iterator(2 * steps, zs.iter().flat_map(|z| [z[0], z[1]]));
        let innov_cov = &obs * &cov * obs.transpose() + DMatrix::identity(2 * steps, 2 * steps) * noise_std * noise_std;
        let gain = &cov * obs.transpose() * innov_cov.try_inverse().unwrap();
        let post_mean = &mean + &gain * (zvec - &obs * &mean);
        let post_cov = &cov - &gain * &obs * &cov;

        for (k, s) in smoothed.iter().enumerate() {
            let m = DMatrix::from_column_slice(4, 1, post_mean.rows(4 * k, 4).as_slice());
            let c = post_cov.view((4 * k, 4 * k), (4, 4)).into_owned();
            assert!(rel_err(&dense_vec(s.mean()), &m) < 1e-8, "mean at {k}");
            assert!(rel_err(&dense4(s.cov()), &c) < 1e-8, "cov at {k}");
            assert!(s.cov().trace() <= filtered[k].cov().trace() + 1e-9);
            assert!(s.cov().symmetric_eigenvalues().min() >= -1e-9 * s.cov().trace());
        }
        assert_eq!(smoothed.last(), filtered.last());
    }
}

#[test]
fn smoother_keeps_noiseless_line() {
    let motion = MotionModel::new(1.0, 0.0, 1.0);
    let model = clutter_model(10.0);
    let zs: Vec<Vector2<f64>> = (0..20).map(|k| Vector2::new(-40.0 + 3.0 * k as f64, 12.0 - 1.5 * k as f64)).collect();
    let prior = GaussianBelief::new(Vector4::new(-40.0, 12.0, 3.0, -1.5), Matrix4::identity() * 50.0).unwrap();
    let (filtered, predicted) = filter_sequence(&prior, &zs, &motion, &model);
    let smoothed = rts_smooth(&filtered, &predicted, &motion).unwrap();
    for (s, z) in smoothed.iter().zip(&zs) {
        assert!((s.mean().xy() - z).norm() < 1e-9);
    }
}

/// Moment-matched mixture posterior of every track, by direct enumeration of
/// the joint association events.
fn mixture_oracle(
    predicted: &[GaussianBelief],
    zs: &[Vector2<f64>],
    model: &MeasurementModel,
    gate: f64,
) -> Vec<(Vector4<f64>, Matrix4<f64>)> {
    let noise = Matrix2::identity() * model.noise_std().powi(2);
    let density = model.clutter_rate() / model.roi().area();
    // Conditional posteriors and weights per (track, column).
    let mut comps: Vec<Vec<(f64, Vector4<f64>, Matrix4<f64>)>> = Vec::new();
    for belief in predicted {
        let p = belief.cov();
        let s = observation() * p * observation().transpose() + noise;
        let s_inv = s.try_inverse().unwrap();
        let gain = p * observation().transpose() * s_inv;
        let mut row = vec![(1.0 - model.detection(), *belief.mean(), *p)];
        for z in zs {
            let d = z - observation() * belief.mean();
            let d2 = (d.transpose() * s_inv * d)[0];
            let w = if d2 <= gate {
                model.detection() * (-0.5 * d2).exp() / (2.0 * std::f64::consts::PI * s.determinant().sqrt()) / density
            } else {
                0.0
            };
            let mean = belief.mean() + gain * d;
            let cov = (Matrix4::identity() - gain * observation()) * p;
            row.push((w, mean, cov));
        }
        comps.push(row);
    }
    let targets = predicted.len();
    let mut weights = vec![vec![0.0; zs.len() + 1]; targets];
    let mut total = 0.0;
    let mut tuple = vec![0usize; targets];
    loop {
        let mut seen = vec![false; zs.len() + 1];
        let valid = tuple.iter().all(|&c| c == 0 || !std::mem::replace(&mut seen[c], true));
        if valid {
            let w: f64 = tuple.iter().enumerate().map(|(j, &c)| comps[j][c].0).product();
            total += w;
            for (j, &c) in tuple.iter().enumerate() {
                weights[j][c] += w;
            }
        }
        let mut pos = 0;
        while pos < targets {
            tuple[pos] += 1;
            if tuple[pos] <= zs.len() {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
        if pos == targets {
            break;
        }
    }
    (0..targets)
        .map(|j| {
            let mean: Vector4<f64> = (0..=zs.len()).map(|c| comps[j][c].1 * (weights[j][c] / total)).sum();
            let cov: Matrix4<f64> = (0..=zs.len())
                .map(|c| {
                    let d = comps[j][c].1 - mean;
                    (comps[j][c].2 + d * d.transpose()) * (weights[j][c] / total)
                })
                .sum();
            (mean, cov)
        })
        .collect()
}

fn jpda_once(
    mode: JpdaMode,
    priors: &[GaussianBelief],
    frame: &MeasurementFrame,
    motion: &MotionModel,
    model: &MeasurementModel,
) -> Vec<GaussianBelief> {
    let cfg = ValidatedConfig::for_scenario(ScenarioId::S1);
    let mut state = JpdaState::new(mode);
    for p in priors {
        state.add_track(p.clone(), 24, TrackStatus::Confirmed);
    }
    let models = JpdaModels { motion, measurement: model, params: &cfg.tracker, managed: false };
    jpda_step(&mut state, frame, &models, &mut TrackerDiagnostics::default()).unwrap();
    state.tracks.iter().map(|t| t.belief.as_gaussian().unwrap().clone()).collect()
}

#[test]
fn jpda_step_matches_event_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let motion = MotionModel::new(1.0, 0.1, 0.995);
    let model = clutter_model(10.0);
    let gate = ValidatedConfig::for_scenario(ScenarioId::S1).tracker.gate_threshold;
    for _ in 0..200 {
        let priors: Vec<GaussianBelief> = (0..2)
            .map(|_| {
                let mean = Vector4::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 1.0, -1.0);
                GaussianBelief::new(mean, random_cov(&mut rng, 4.0)).unwrap()
            })
            .collect();
        let zs: Vec<Vector2<f64>> =
            (0..3).map(|_| Vector2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0))).collect();
        let frame = MeasurementFrame::new(2, zs.clone());
        let posts = jpda_once(JpdaMode::Jpda, &priors, &frame, &motion, &model);
        let predicted: Vec<GaussianBelief> = priors.iter().map(|p| predict(p, &motion)).collect();
        for (post, (mean, cov)) in posts.iter().zip(mixture_oracle(&predicted, &zs, &model, gate)) {
            assert!((post.mean() - mean).abs().max() < 1e-9 * mean.abs().max().max(1.0));
            assert!((post.cov() - cov).abs().max() < 1e-9 * cov.abs().max());
        }
    }
}

#[test]
fn identical_predictions_coalesce_under_jpda_only() {
    let motion = MotionModel::new(1.0, 0.1, 1.0);
    let model = clutter_model(10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut asymmetric = 0;
    for _ in 0..50 {
        let prior = GaussianBelief::new(
            Vector4::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.5, 0.0),
            random_cov(&mut rng, 3.0),
        )
        .unwrap();
        let zs: Vec<Vector2<f64>> =
            (0..2).map(|_| Vector2::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0))).collect();
        let frame = MeasurementFrame::new(2, zs);
        let priors = vec![prior.clone(), prior.clone(), prior];
        let posts = jpda_once(JpdaMode::Jpda, &priors, &frame, &motion, &model);
        for p in &posts[1..] {
            assert!((p.mean() - posts[0].mean()).abs().max() < 1e-9);
        }
        let star = jpda_once(JpdaMode::JpdaStar, &priors, &frame, &motion, &model);
        if (star[0].mean() - star[1].mean()).abs().max() > 1e-6 {
            asymmetric += 1;
        }
    }
    assert_eq!(asymmetric, 50);
}

#[test]
fn deterministic_trackers_collapse_to_kalman_filter() {
    let cfg = clutter_free_config();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (frames, start) = single_target_frames(&mut rng, 60);
    let oracle = kalman_track(&cfg, &frames, start);
    for kind in [TrackerKind::Jpda, TrackerKind::JpdaStar, TrackerKind::Mht, TrackerKind::BpGauss, TrackerKind::ExGauss]
    {
        let means = tracker_means(kind, &cfg, &frames, start);
        for (k, (got, want)) in means.iter().zip(&oracle).enumerate() {
            assert!(
                (got - want).abs().max() <= 1e-12 * want.abs().max().max(1.0),
                "{kind} scan {}: {got} vs {want}",
                k + 1
            );
        }
    }
}

#[test]
fn particle_trackers_follow_kalman_filter() {
    let mut cfg = clutter_free_config();
    // With p_d = 1 and no clutter an ungated measurement would end the
    // track; the Kalman oracle has no gate either.
    cfg.tracker.gate_threshold = f64::INFINITY;
    let runs = 30;
    for kind in [TrackerKind::BpPart, TrackerKind::ExPart] {
        let mut signed = Vector2::zeros();
        let mut absolute = 0.0;
        let mut count = 0.0;
        for run in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + run);
            let (frames, start) = single_target_frames(&mut rng, 30);
            let oracle = kalman_track(&cfg, &frames, start);
            let known = vec![KnownBirth { time: 1, position: start }];
            let mut tracker = kind.build(&cfg, run, Some(known));
            for (frame, want) in frames.iter().zip(&oracle) {
                tracker.step(frame).unwrap();
                let est = tracker.estimates();
                assert_eq!(est.len(), 1, "{kind} run {run} scan {}", frame.time);
                let diff = est[0].state.position() - want.xy();
                signed += diff;
                absolute += diff.norm();
                count += 1.0;
            }
        }
        let (bias, spread) = ((signed / count).norm(), absolute / count);
        eprintln!("{kind}: bias {bias}, mean distance {spread}");
        assert!(bias < 0.5, "{kind}: mean position difference {bias} m");
        assert!(spread < 3.0, "{kind}: mean distance to the Kalman estimate {spread} m");
    }
}

#[test]
fn gauss_ex_reproduces_jpda_with_known_targets() {
    let mut cfg = ValidatedConfig::for_scenario(ScenarioId::S1);
    cfg.known_births = true;
    let truth = build_scenario(&cfg).unwrap();
    let model = MeasurementModel::from_config(&cfg);
    for run in 0..3 {
        let frames = simulate_run(&truth, &model, cfg.seed, run);
        let mut jpda = TrackerKind::Jpda.build(&cfg, run, Some(truth.known_births()));
        let mut ex = TrackerKind::ExGauss.build(&cfg, run, Some(truth.known_births()));
        let mut worst: f64 = 0.0;
        for frame in &frames {
            jpda.step(frame).unwrap();
            ex.step(frame).unwrap();
            let (a, b) = (jpda.estimates(), ex.estimates());
            assert_eq!(a.len(), b.len(), "scan {}", frame.time);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.label, y.label);
                worst = worst.max((x.state.to_vector() - y.state.to_vector()).abs().max());
            }
        }
        assert!(worst < 1e-9, "run {run}: largest difference {worst}");
    }
}

#[test]
fn gauss_ex_step_equals_jpda_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = ValidatedConfig::for_scenario(ScenarioId::S1);
    let motion = MotionModel::new(1.0, 0.1, 1.0);
    let model = clutter_model(10.0);
    for _ in 0..100 {
        let priors: Vec<GaussianBelief> = (0..3)
            .map(|_| {
                let mean = Vector4::new(rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0), 0.0, 0.0);
                GaussianBelief::new(mean, random_cov(&mut rng, 5.0)).unwrap()
            })
            .collect();
        let zs: Vec<Vector2<f64>> =
            (0..4).map(|_| Vector2::new(rng.random_range(-35.0..35.0), rng.random_range(-35.0..35.0))).collect();
        let frame = MeasurementFrame::new(2, zs);
        let jpda = jpda_once(JpdaMode::Jpda, &priors, &frame, &motion, &model);

        let mut state = BpState::new(BpVariant::GaussEx, 10);
        state.time = 1;
        for p in &priors {
            state.add_track(1.0, Belief::Gaussian(p.clone()));
        }
        let models = BpModels { motion: &motion, measurement: &model, params: &cfg.tracker, managed: false };
        let mut sub = ChaCha8Rng::seed_from_u64(0);
        bp_step(&mut state, &frame, &models, &mut sub, &mut TrackerDiagnostics::default()).unwrap();
        for (t, j) in state.tracks.iter().zip(&jpda) {
            let g = t.belief.as_gaussian().unwrap();
            assert!((g.mean() - j.mean()).abs().max() < 1e-9);
            assert!((g.cov() - j.cov()).abs().max() < 1e-9 * j.cov().abs().max());
            assert_eq!(t.existence, 1.0);
        }
    }
}
