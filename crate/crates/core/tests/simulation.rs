use eiv_core::normal::two_sided_quantile;
use eiv_core::simstudy::{generate, run_study, Method, NoiseMode, SimConfig};

#[test]
fn design_covariance_matches_toeplitz() {
    let cfg = SimConfig::single_target(200_000, 3, 0.0, 1.0, Method::Eiv, 1);
    let (_, truth) = generate(&cfg, 0).unwrap();
    let n = truth.x.nrows() as f64;
    let cov = truth.x.tr_mul(&truth.x) / n;
    for i in 0..3 {
        for j in 0..3 {
            let omega = 0.5f64.powi((i as i32 - j as i32).abs());
            assert!(
                (cov[(i, j)] - omega).abs() <= 0.01,
                "({i},{j}): {}",
                cov[(i, j)]
            );
        }
    }
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let mut cfg = SimConfig::multi_target(60, 25, 0.5, Method::Eiv, 6);
    cfg.boot = 200;
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let three = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let a = one.install(|| run_study(&cfg).unwrap());
    let b = three.install(|| run_study(&cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn zero_target_without_measurement_error_gives_identical_pipelines() {
    let eiv = SimConfig::single_target(60, 20, 0.0, 0.0, Method::Eiv, 5);
    let naive = SimConfig {
        method: Method::Naive,
        ..eiv.clone()
    };
    let a = run_study(&eiv).unwrap();
    let b = run_study(&naive).unwrap();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.t_stats, rb.t_stats);
    }
}

#[test]
fn pointwise_rejection_is_non_coverage() {
    let cfg = SimConfig::single_target(80, 30, 0.5, 1.0, Method::Naive, 20);
    let report = run_study(&cfg).unwrap();
    let q = two_sided_quantile(cfg.alpha);
    for r in &report.records {
        let t = r.t_stats[0].abs();
        if (t - q).abs() > 1e-9 {
            assert_eq!(r.reject, t > q);
        }
    }
    let rejected = report.records.iter().filter(|r| r.reject).count() as f64;
    assert_eq!(
        report.size_or_fwer,
        rejected / report.replications_completed as f64
    );
}

#[test]
fn estimated_noise_level_stays_in_envelope() {
    let mut cfg = SimConfig::desk_single(1.0, Method::Eiv);
    cfg.noise_mode = NoiseMode::Mar { pi: 0.2 };
    cfg.replications = 8;
    let report = run_study(&cfg).unwrap();
    let envelope = 3.0 * (((cfg.n * cfg.p) as f64).ln() / cfg.n as f64).sqrt();
    for r in &report.records {
        let err = r.gamma_error.unwrap();
        assert!(err <= envelope, "rep {}: {err} > {envelope}", r.rep);
    }
}
