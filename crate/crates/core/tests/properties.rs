//! Property suites for the simulator, the baseline calibrator, the dataset
//! pipeline, the metrics, and the run configuration.

use gyrocal::calibration::{
    baseline_ae_curve, calibrate_scenario, calibrate_single_axis, calibrate_six_position, mean_window,
    SixPositionInput,
};
use gyrocal::config::RunConfig;
use gyrocal::eval::{absolute_error, improvement_pct, t_conv, ConvTime};
use gyrocal::nn::Example;
use gyrocal::pipeline::{
    build_datapoints, generate_corpus, label_scenario, scenario_datapoints, segment_scenario, CorpusParams,
    PipelineConfig,
};
use gyrocal::sensor_model::{
    apply_error_model, generate_scenario, sample_error_terms, GyroErrorTerms, Interval, Orientation, Recording,
};
use nalgebra::{Matrix3, Matrix3x6, Vector3};
use proptest::prelude::*;

fn noiseless(scale: f64, bias: f64) -> GyroErrorTerms {
    GyroErrorTerms::new(scale, bias, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn error_model_is_linear_without_noise(
        scale in -0.05f64..0.05,
        bias in -2.0f64..2.0,
        a in -5.0f64..5.0,
        x in prop::collection::vec(-200.0f64..200.0, 1..50),
    ) {
        let t = noiseless(scale, bias);
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let out = apply_error_model(&ax, &t, 1).unwrap();
        let zero = apply_error_model(&vec![0.0; x.len()], &t, 1).unwrap();
        for i in 0..x.len() {
            let expected = (1.0 + scale) * a * x[i];
            prop_assert!((out[i] - zero[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn up_down_sum_is_twice_the_bias(scale in -0.05f64..0.05, bias in -2.0f64..2.0, rate in 1.0f64..500.0) {
        let s = generate_scenario("p", rate, 0.5, 145.0, &noiseless(scale, bias), 0).unwrap();
        for (u, d) in s.up.samples().iter().zip(s.down.samples()) {
            prop_assert!((u + d - 2.0 * bias).abs() <= 1e-12 * rate);
        }
    }

    #[test]
    fn noiseless_single_axis_recovery(scale in -0.05f64..0.05, bias in -2.0f64..2.0, window in 0.5f64..10.0) {
        let s = generate_scenario("p", 78.0, 10.0, 145.0, &noiseless(scale, bias), 0).unwrap();
        let c = calibrate_scenario(&s, window).unwrap();
        prop_assert!((c.scale - scale).abs() <= 1e-12);
        prop_assert!((c.bias - bias).abs() <= 1e-12);
    }

    #[test]
    fn mean_window_ignores_sample_order(
        values in prop::collection::vec(-100.0f64..100.0, 2..200),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = values.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let n = values.len() as f64;
        let a = Recording::new(values, 1.0, Orientation::Up, 78.0).unwrap();
        let b = Recording::new(shuffled, 1.0, Orientation::Up, 78.0).unwrap();
        let (ma, mb) = (mean_window(&a, 0.0, n).unwrap(), mean_window(&b, 0.0, n).unwrap());
        prop_assert!((ma - mb).abs() <= 1e-12);
    }

    #[test]
    fn six_position_recovers_all_unknowns(
        s in prop::array::uniform3(-0.05f64..0.05),
        b in prop::array::uniform3(-2.0f64..2.0),
        rate in 10.0f64..500.0,
    ) {
        let gt = SixPositionInput::turntable_gt(rate);
        let gain = Matrix3::from_diagonal(&Vector3::new(1.0 + s[0], 1.0 + s[1], 1.0 + s[2]));
        let mut measured: Matrix3x6<f64> = gain * gt.fixed_rows::<3>(0);
        for axis in 0..3 {
            measured.row_mut(axis).add_scalar_mut(b[axis]);
        }
        let sol = calibrate_six_position(&SixPositionInput::new(measured, gt).unwrap()).unwrap();
        for axis in 0..3 {
            prop_assert!((sol.scale(axis) - s[axis]).abs() <= 1e-10);
            prop_assert!((sol.bias(axis) - b[axis]).abs() <= 1e-10);
        }
        // Normal-equation form of the same estimate.
        let g = gt;
        let normal = measured * g.transpose() * (g * g.transpose()).try_inverse().unwrap();
        prop_assert!((normal - sol.z).abs().max() <= 1e-10);
    }

    #[test]
    fn six_position_z_row_matches_single_axis(
        up in -100.0f64..100.0,
        down in -100.0f64..100.0,
        cross in prop::array::uniform2(-1.0f64..1.0),
        rate in 10.0f64..500.0,
    ) {
        // z readings at the x and y positions share the z bias, with arbitrary cross-axis gain
        let gt = SixPositionInput::turntable_gt(rate);
        let b = (up + down) / 2.0;
        let z_row = [b + cross[0] * rate, b - cross[0] * rate, b + cross[1] * rate, b - cross[1] * rate, up, down];
        let measured = Matrix3x6::from_fn(|r, c| if r == 2 { z_row[c] } else { gt[(r, c)] });
        let sol = calibrate_six_position(&SixPositionInput::new(measured, gt).unwrap()).unwrap();
        let single = calibrate_single_axis(up, down, rate, 1.0).unwrap();
        prop_assert!((sol.scale(2) - single.scale).abs() <= 1e-10);
        prop_assert!((sol.bias(2) - single.bias).abs() <= 1e-10);
    }

    #[test]
    fn t_conv_never_increases_with_ours(
        curve in prop::collection::vec(0.0f64..1.0, 1..70),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let curve: Vec<(f64, f64)> = curve.into_iter().enumerate().map(|(i, ae)| ((i + 1) as f64, ae)).collect();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t = |x| match t_conv(&curve, x).unwrap() {
            ConvTime::Reached(t) => t,
            ConvTime::NotReached => f64::INFINITY,
        };
        prop_assert!(t(hi) <= t(lo));
    }

    #[test]
    fn metric_identities(x in -10.0f64..10.0, y in -10.0f64..10.0, ae in 1e-9f64..1.0) {
        prop_assert_eq!(absolute_error(x, y), absolute_error(y, x));
        prop_assert_eq!(absolute_error(x, x), 0.0);
        prop_assert_eq!(improvement_pct(ae, ae).unwrap(), 0.0);
        prop_assert!((improvement_pct(ae, 0.0).unwrap() - 100.0).abs() <= 1e-12);
    }

    #[test]
    fn sampled_terms_stay_in_range(seed in any::<u64>()) {
        let sr = Interval::new(0.003, 0.005).unwrap();
        let br = Interval::new(-0.1, 0.0).unwrap();
        let t = sample_error_terms(seed, sr, br, 0.03).unwrap();
        prop_assert!(sr.contains(t.scale) && br.contains(t.bias));
        prop_assert_eq!(t, sample_error_terms(seed, sr, br, 0.03).unwrap());
    }

    #[test]
    fn config_roundtrips_through_toml(
        n in 1usize..100,
        lr in 1e-6f64..1.0,
        lo in -1.0f64..0.0,
        seeds in prop::array::uniform4(any::<u64>()),
        windows in prop::collection::vec(0.5f64..20.0, 1..5),
    ) {
        let mut c = RunConfig::default();
        c.corpus.n_scenarios = n + 1;
        c.corpus.bias_range.lo = lo;
        c.train.lr = lr;
        c.seeds.corpus = seeds[0];
        c.seeds.split = seeds[1];
        c.seeds.init = seeds[2];
        c.seeds.train = seeds[3];
        c.eval.windows_s = windows;
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }
}

#[test]
fn degenerate_ranges_give_exact_terms() {
    let t = sample_error_terms(
        3,
        Interval::new(0.004, 0.004).unwrap(),
        Interval::new(-0.05, -0.05).unwrap(),
        0.0,
    )
    .unwrap();
    assert_eq!((t.scale, t.bias), (0.004, -0.05));
    assert!(Interval::new(1.0, 0.0).is_err());
}

#[test]
fn identical_seeds_give_identical_recordings() {
    let t = GyroErrorTerms::new(0.004, -0.05, 0.03).unwrap();
    let a = generate_scenario("a", 78.0, 5.0, 145.0, &t, 42).unwrap();
    let b = generate_scenario("a", 78.0, 5.0, 145.0, &t, 42).unwrap();
    let c = generate_scenario("a", 78.0, 5.0, 145.0, &t, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.up.samples(), c.up.samples());
}

#[test]
fn noise_standard_deviation_matches_sigma() {
    for sigma in [0.0323, 0.5, 3.0] {
        let t = GyroErrorTerms::new(0.004, -0.05, sigma).unwrap();
        let x = vec![78.0; 200_000];
        let out = apply_error_model(&x, &t, 7).unwrap();
        let clean = 1.004 * 78.0 - 0.05;
        let dev: Vec<f64> = out.iter().map(|v| v - clean).collect();
        let m = dev.iter().sum::<f64>() / dev.len() as f64;
        let sd = (dev.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (dev.len() - 1) as f64).sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.02, "sigma {sigma}: sample sd {sd}");
    }
}

#[test]
fn bias_error_shrinks_as_inverse_root_time() {
    let t = GyroErrorTerms::new(0.004, -0.05, 0.0323).unwrap();
    let (mut ae4, mut ae16) = (0.0, 0.0);
    let seeds = 200;
    for seed in 0..seeds {
        let s = generate_scenario("n", 78.0, 16.0, 145.0, &t, seed).unwrap();
        ae4 += (calibrate_scenario(&s, 4.0).unwrap().bias - t.bias).abs();
        ae16 += (calibrate_scenario(&s, 16.0).unwrap().bias - t.bias).abs();
    }
    let ratio = ae4 / ae16;
    assert!((1.6..=2.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn longer_windows_reduce_baseline_error_on_average() {
    let t = GyroErrorTerms::new(0.004, -0.05, 0.0323).unwrap();
    let (mut early, mut late) = ([0.0; 2], [0.0; 2]);
    for seed in 0..50 {
        let s = generate_scenario("n", 78.0, 70.0, 145.0, &t, seed).unwrap();
        let curve = baseline_ae_curve(&s, t.scale_bias(), &[2.0, 70.0]).unwrap();
        early[0] += curve[0].ae_scale;
        early[1] += curve[0].ae_bias;
        late[0] += curve[1].ae_scale;
        late[1] += curve[1].ae_bias;
    }
    assert!(late[0] <= early[0] && late[1] <= early[1]);
}

#[test]
fn noisy_label_is_within_three_standard_errors() {
    let sigma = 0.0323;
    for seed in 0..20 {
        let t = GyroErrorTerms::new(0.004, -0.05, sigma).unwrap();
        let s = generate_scenario("n", 78.0, 70.0, 145.0, &t, seed).unwrap();
        let l = label_scenario(&s).unwrap();
        let n = s.up.len() as f64;
        // bias averages 2N samples; scale divides a difference of means by 2 * rate
        assert!((l.bias - t.bias).abs() <= 3.0 * sigma / (2.0 * n).sqrt());
        assert!((l.scale - t.scale).abs() <= 3.0 * sigma / (2.0 * n).sqrt() / 78.0);
        assert_eq!(label_scenario(&s).unwrap(), l);
    }
}

#[test]
fn windows_are_content_preserving_slices() {
    let t = GyroErrorTerms::new(0.004, -0.05, 0.0323).unwrap();
    let mut s = generate_scenario("w", 78.0, 70.0, 145.0, &t, 5).unwrap();
    s.labels = Some(label_scenario(&s).unwrap());
    let points = scenario_datapoints(&s, &PipelineConfig::default()).unwrap();
    assert_eq!(points.len(), 32);
    let segs = segment_scenario(&s, 6.0, 48.0).unwrap();
    let covered: usize = segs.iter().map(|g| g.up.len()).sum();
    assert_eq!(covered, 48 * 145);
    for p in &points {
        let start = p.provenance.segment * 870 + p.provenance.window * 174;
        assert_eq!(p.row(0), &s.up.samples()[start..start + 290]);
        assert_eq!(p.row(1), &s.down.samples()[start..start + 290]);
        assert!(p.row(2).iter().all(|&v| v == 78.0));
        assert_eq!(p.target(), [s.labels.unwrap().scale, s.labels.unwrap().bias]);
    }
    // last window ends at sample 812 of its segment
    let last = points.iter().filter(|p| p.provenance.segment == 0).map(|p| p.provenance.window * 174 + 290).max();
    assert_eq!(last, Some(812));
}

#[test]
fn no_test_scenario_reaches_the_dataset() {
    let params = CorpusParams {
        n_scenarios: 5,
        n_test: 2,
        duration_s: 48.0,
        ..CorpusParams::default()
    };
    let corpus = generate_corpus(&params, 11).unwrap();
    let train: Vec<_> = corpus.train_scenarios().into_iter().cloned().collect();
    let points = build_datapoints(&train, &PipelineConfig::default()).unwrap();
    assert_eq!(points.len(), 3 * 32);
    assert!(points.iter().all(|p| !corpus.is_test(&p.provenance.scenario_id)));
    // and no test sample value appears as a training window start
    for test in corpus.test_scenarios() {
        let first = test.up.samples()[0];
        assert!(points.iter().all(|p| p.row(0)[0] != first));
    }
}
