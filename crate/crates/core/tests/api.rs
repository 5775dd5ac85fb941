use smoothgrad::special::normal_pdf;
use smoothgrad::testbed::TestFunction;
use smoothgrad::{
    estimate, from_fn, Config, Config32, Covariate, Distribution, LowerTriangular, ReportOptions, Scale, Strategy, StrategyKind,
};

#[test]
fn single_precision_matches_double() {
    let f = TestFunction::Heaviside(1);
    let c64 = Config::new(Distribution::Logistic, Scale::scalar(1.0).unwrap(), 4096)
        .with_strategy(Strategy::new(StrategyKind::RqmcLatin, false))
        .with_covariate(Covariate::Loo);
    let c32 = Config32::new(Distribution::Logistic, Scale::scalar(1.0f32).unwrap(), 4096)
        .with_strategy(Strategy::new(StrategyKind::RqmcLatin, false))
        .with_covariate(Covariate::Loo);
    let g64 = smoothgrad::jacobian(&f, &c64, &c64.plan(1, 3).unwrap(), &[0.5]).unwrap()[[0, 0]];
    let g32 = smoothgrad::jacobian(&f, &c32, &c32.plan(1, 3).unwrap(), &[0.5f32]).unwrap()[[0, 0]];
    // Logistic density at 0.5.
    let e = (-0.5f64).exp();
    let want = e / (1.0 + e).powi(2);
    assert!((g64 - want).abs() < 0.01 * want, "{g64} vs {want}");
    assert!((g32 as f64 - g64).abs() < 1e-3, "{g32} vs {g64}");
}

#[test]
fn report_carries_requested_blocks() {
    let f = from_fn(1, 1, |x: &[f64], y: &mut [f64]| y[0] = if x[0] > 1.0 { 1.0 } else { 0.0 });
    let cfg = Config::new(Distribution::Gaussian, Scale::scalar(1.0).unwrap(), 1 << 14)
        .with_strategy(Strategy::new(StrategyKind::RqmcCartesian, false))
        .with_covariate(Covariate::Loo);
    let plan = cfg.plan(1, 5).unwrap();
    let report = estimate(&f, &cfg, &plan, &[0.0], ReportOptions { with_cov: true, median_k: Some(3) }).unwrap();
    assert!((report.jacobian[[0, 0]] - normal_pdf(1.0)).abs() < 0.01);
    assert!(report.dgamma.is_some() && report.dl.is_none());
    assert!(report.out_cov.is_some());
    assert_eq!(report.median.as_ref().unwrap().k, 3);
    assert_eq!(report.samples_used, 1 << 14);
}

#[test]
fn matrix_scale_reports_dl_not_dgamma() {
    let f = TestFunction::Linear(2);
    let l = LowerTriangular::diagonal(&[1.0, 0.5]).unwrap();
    let cfg = Config::new(Distribution::Gaussian, Scale::Matrix(l), 512).with_covariate(Covariate::FAtX);
    let plan = cfg.plan(2, 1).unwrap();
    let report = estimate(&f, &cfg, &plan, &[0.0, 0.0], ReportOptions::default()).unwrap();
    assert!(report.dgamma.is_none());
    assert_eq!(report.dl.unwrap().dim(), (1, 2, 2));
    // Gradient of a linear function is exact in expectation; check it is close.
    for g in report.jacobian.iter() {
        assert!((g - 1.0).abs() < 0.25, "{g}");
    }
}
