//! Cross-checks against independent reference implementations.

mod common;

use ccrmst::ccsample::{default_alphas, draw_case_cohort};
use ccrmst::estimator::{estimate_att, hazard_control, hazard_treated, weighted_nelson_aalen};
use ccrmst::fixture;
use ccrmst::matching::{self, mahalanobis, select_template, solve, weighted_covariance, CostMatrix, DistanceSpec};
use ccrmst::propensity::{fit_weighted_logistic, Design};
use ccrmst::rng;
use ccrmst::simgen::{self, ExposureRatio, SimScenario, N_COVARIATES, N_STRATA};
use ccrmst::stats::{self, ks_one_sample};
use ccrmst::survival::{EventDefinition, StudyConfig};
use common::*;
use rand::Rng;

fn random_cost_matrix<R: Rng>(rng: &mut R, dyadic: bool) -> CostMatrix {
    let rows = rng.random_range(1..=5);
    let cols = rng.random_range(rows..=8);
    let data = (0..rows * cols)
        .map(|_| if dyadic { rng.random_range(0..640) as f64 / 64.0 } else { rng.random::<f64>() * 10.0 })
        .collect();
    CostMatrix::new(rows, cols, data).unwrap()
}

#[test]
fn assignment_matches_enumeration_on_dyadic_costs() {
    let mut rng = rng::stream(11, 0);
    for _ in 0..150 {
        let costs = random_cost_matrix(&mut rng, true);
        let best = brute_force_totals(&costs).into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(solve(&costs).unwrap().total, best);
    }
}

#[test]
fn assignment_matches_enumeration_on_continuous_costs() {
    let mut rng = rng::stream(12, 0);
    for _ in 0..150 {
        let costs = random_cost_matrix(&mut rng, false);
        let got = solve(&costs).unwrap();
        let mut cols = got.row_to_col.clone();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(cols.len(), costs.rows());
        assert!((got.total - brute_force_min(&costs)).abs() <= 1e-12 * got.total.max(1.0));
    }
}

#[test]
fn weighted_logistic_matches_newton_oracle() {
    let mut rng = rng::stream(13, 0);
    for _ in 0..60 {
        let n = rng.random_range(60..=200);
        let p = rng.random_range(1..=4);
        let truth: Vec<f64> = (0..=p).map(|_| rng.random_range(-0.8..0.8)).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<bool> = x
            .iter()
            .map(|row| {
                let eta = truth[0] + row.iter().zip(&truth[1..]).map(|(a, b)| a * b).sum::<f64>();
                rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { rng.random_range(1.0..8.0) }).collect();
        let fit = fit_weighted_logistic(&y, &Design::unnamed(x.clone()).unwrap(), &w).unwrap();
        assert!(!fit.separated);
        let oracle = newton_logistic(&y, &x, &w);
        let err = fit.coefficients.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max coefficient error {err}");
    }
}

#[test]
fn unit_weight_hazards_equal_reference_nelson_aalen() {
    let mut rng = rng::stream(14, 0);
    for _ in 0..80 {
        let n = rng.random_range(2..=30);
        let pairs = unit_weight_pairs(&mut rng, n);
        let tau = rng.random_range(2..=12) as f64 * 0.5;
        let phi = vec![1.0; n];

        let t1: Vec<f64> = pairs.iter().map(|p| p.treated.time).collect();
        let e1: Vec<bool> = pairs.iter().map(|p| p.treated.event).collect();
        let (rt, rv) = reference_nelson_aalen(&t1, &e1, tau);
        let h1 = hazard_treated(&pairs, tau).unwrap();
        assert_eq!(h1.times(), rt.as_slice());
        assert_eq!(h1.values(), rv.as_slice());

        let t0: Vec<f64> = pairs.iter().map(|p| p.control.time).collect();
        let e0: Vec<bool> = pairs.iter().map(|p| p.control.event).collect();
        let (rt, rv) = reference_nelson_aalen(&t0, &e0, tau);
        let h0 = hazard_control(&pairs, &phi, tau).unwrap();
        assert_eq!(h0.times(), rt.as_slice());
        assert_eq!(h0.values(), rv.as_slice());
    }
}

#[test]
fn weighted_hazard_with_integer_weights_equals_replicated_data() {
    // weight k is the same as k copies of the subject
    let mut rng = rng::stream(15, 0);
    for _ in 0..30 {
        let n = rng.random_range(2..=15);
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..=8) as f64).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let k: Vec<f64> = (0..n).map(|_| rng.random_range(1..=4) as f64).collect();
        let got = weighted_nelson_aalen(&times, &events, &k, &k, 8.0).unwrap();
        let mut rt = Vec::new();
        let mut re = Vec::new();
        for i in 0..n {
            for _ in 0..k[i] as usize {
                rt.push(times[i]);
                re.push(events[i]);
            }
        }
        let (want_t, want_v) = reference_nelson_aalen(&rt, &re, 8.0);
        assert_eq!(got.times(), want_t.as_slice());
        for (a, b) in got.values().iter().zip(&want_v) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn horvitz_thompson_means_match_full_cohort() {
    let scenario = SimScenario::preset(ExposureRatio::OneToTwo, 3000);
    let cohort = simgen::generate_cohort(&scenario, &mut rng::stream(16, rng::purpose::COHORT)).unwrap();
    let def = EventDefinition::Conventional;
    let alpha = default_alphas(&cohort.subjects, N_STRATA, def).unwrap();
    let study = StudyConfig { tau: cohort.tau, p: N_COVARIATES, k: 3, alpha, event_definition: def };

    let mut frng = rng::stream(17, 0);
    let coefs: Vec<Vec<f64>> = (0..10).map(|_| (0..N_COVARIATES + 2).map(|_| frng.random_range(-1.5..1.5)).collect()).collect();
    let f = |c: &[f64], s: &ccrmst::survival::Subject| {
        let lin: f64 = s.covariates.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
            + c[N_COVARIATES] * s.obs_time / cohort.tau
            + c[N_COVARIATES + 1] * f64::from(s.exposed as u8);
        stats::expit(lin)
    };
    let n = cohort.subjects.len() as f64;
    let truth: Vec<f64> = coefs.iter().map(|c| cohort.subjects.iter().map(|s| f(c, s)).sum::<f64>() / n).collect();

    let draws = 200;
    let mut estimates = vec![Vec::with_capacity(draws); coefs.len()];
    for d in 0..draws {
        let sample = draw_case_cohort(&cohort.subjects, &study, &mut rng::stream(18, d as u64)).unwrap();
        for (k, c) in coefs.iter().enumerate() {
            estimates[k].push(sample.subjects.iter().map(|s| s.weight() * f(c, s)).sum::<f64>() / n);
        }
    }
    for (k, est) in estimates.iter().enumerate() {
        let se = stats::sample_sd(est).unwrap() / (draws as f64).sqrt();
        let diff = stats::mean(est) - truth[k];
        assert!(diff.abs() <= 3.0 * se, "functional {k}: diff {diff}, se {se}");
    }
}

#[test]
fn template_selection_matches_double_loop() {
    let mut rng = rng::stream(19, 0);
    for _ in 0..20 {
        let n = rng.random_range(6..=25);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let m = rng.random_range(1..n);
        let candidates = matching::draw_templates(n, m, 10, &mut rng).unwrap();
        let dist = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut best = (0, f64::INFINITY);
        for (c, cand) in candidates.iter().enumerate() {
            let mut total = 0.0;
            for &i in cand {
                for j in 0..n {
                    total += dist(&pts[i], &pts[j]);
                }
            }
            if total < best.1 - 1e-9 {
                best = (c, total);
            }
        }
        let (idx, total) = select_template(&candidates, &pts).unwrap();
        assert_eq!(idx, best.0);
        assert!((total - best.1).abs() < 1e-9);
    }
}

#[test]
fn weighted_covariance_scales_with_data_and_ignores_weight_scale() {
    let mut rng = rng::stream(20, 0);
    let x: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random::<f64>(), rng.random::<f64>() * 3.0]).collect();
    let rho: Vec<f64> = (0..50).map(|_| rng.random_range(1.0..5.0)).collect();
    let base = weighted_covariance(&x, &rho).unwrap();
    let scaled_x: Vec<Vec<f64>> = x.iter().map(|r| vec![2.0 * r[0], 2.0 * r[1]]).collect();
    let scaled = weighted_covariance(&scaled_x, &rho).unwrap();
    assert!((scaled - base.clone() * 4.0).abs().max() < 1e-12);

    // Mahalanobis distance is unchanged when data and covariance scale together.
    let d1 = mahalanobis(&x[0], &x[1], &base).unwrap();
    let d2 = mahalanobis(&scaled_x[0], &scaled_x[1], &weighted_covariance(&scaled_x, &rho).unwrap()).unwrap();
    assert!((d1 - d2).abs() < 1e-10);
    let spec = DistanceSpec::mahalanobis(&base, vec![0, 1]).unwrap();
    let e = matching::distance::embedded_distance(&spec.embed(&x[0], 0.0), &spec.embed(&x[1], 0.0));
    assert!((e - d1).abs() < 1e-10);
}

#[test]
fn exposure_model_is_recovered_at_large_n() {
    let n = 1_000_000;
    let gamma0 = -0.7;
    let mut rng = rng::stream(21, rng::purpose::COHORT);
    let x = simgen::generate_covariates(n, 0.2, &mut rng).unwrap();
    let a = simgen::generate_exposure(&x, gamma0, &mut rng);
    let rows: Vec<Vec<f64>> = x.iter().map(|r| r.to_vec()).collect();
    let fit = fit_weighted_logistic(&a, &Design::unnamed(rows).unwrap(), &vec![1.0; n]).unwrap();
    let truth = [gamma0, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5];
    for (b, t) in fit.coefficients.iter().zip(truth) {
        assert!((b - t).abs() < 0.02, "coefficient {b} vs {t}");
    }
}

#[test]
fn weighted_propensity_agrees_with_full_cohort_fit() {
    let fit_of = |subjects: &[ccrmst::survival::Subject], weighted: bool| {
        let rows: Vec<Vec<f64>> = subjects.iter().map(|s| s.covariates.clone()).collect();
        let y: Vec<bool> = subjects.iter().map(|s| s.exposed).collect();
        let w: Vec<f64> = subjects.iter().map(|s| if weighted { s.weight() } else { 1.0 }).collect();
        fit_weighted_logistic(&y, &Design::unnamed(rows).unwrap(), &w).unwrap().coefficients
    };
    let reps = 50;
    let mut mean_abs_diff = vec![0.0; N_COVARIATES + 1];
    for r in 0..reps {
        let scenario = SimScenario::preset(ExposureRatio::OneToTwo, 100_000);
        let cohort = simgen::generate_cohort(&scenario, &mut rng::stream(22, r)).unwrap();
        let def = EventDefinition::Conventional;
        let alpha = default_alphas(&cohort.subjects, N_STRATA, def).unwrap();
        let study = StudyConfig { tau: cohort.tau, p: N_COVARIATES, k: 3, alpha, event_definition: def };
        let sample = draw_case_cohort(&cohort.subjects, &study, &mut rng::stream(23, r)).unwrap();
        let full = fit_of(&cohort.subjects, false);
        let weighted = fit_of(&sample.subjects, true);
        for (k, (a, b)) in full.iter().zip(&weighted).enumerate() {
            mean_abs_diff[k] += (a - b).abs() / reps as f64;
        }
    }
    for (k, d) in mean_abs_diff.iter().enumerate() {
        assert!(*d < 0.05, "coefficient {k}: mean |full - weighted| = {d}");
    }
}

#[test]
fn event_times_are_exponential() {
    let x = vec![[0.3, -1.0, 2.0, 1.0, 0.0, 1.0]; 20_000];
    let exposed = vec![true; x.len()];
    let h0 = 0.05;
    let out = simgen::generate_survival(&x, &exposed, h0, 1e-12, &mut rng::stream(23, 0)).unwrap();
    let rate = simgen::event_hazard(&x[0], true, h0);
    let tau = out.tau;
    let observed: Vec<f64> = out.obs_time.iter().zip(&out.delta).filter(|(_, d)| **d).map(|(t, _)| *t).collect();
    let truncated_cdf = |t: f64| (1.0 - (-rate * t).exp()) / (1.0 - (-rate * tau).exp());
    let (_, p) = ks_one_sample(&observed, truncated_cdf);
    assert!(p > 0.01, "KS p-value {p}");
}

fn fixture_sample() -> ccrmst::analysis::IngestedSample {
    let rows = fixture::generate(12_000, 1987);
    let mut buf = Vec::new();
    fixture::write_csv(&rows, &mut buf).unwrap();
    let config = fixture_config();
    let records = ccrmst::analysis::read_records(buf.as_slice(), &config).unwrap();
    ccrmst::analysis::build_sample(&records, &config).unwrap()
}

fn fixture_config() -> ccrmst::analysis::AnalysisConfig {
    let mut config = ccrmst::analysis::AnalysisConfig {
        covariates: fixture::COVARIATES.iter().map(|s| s.to_string()).collect(),
        exposure_threshold: Some(fixture::CRP_THRESHOLD),
        tau: Some(8030.0),
        ..Default::default()
    };
    config.columns.exposure = "crp".into();
    config.bootstrap = 50;
    config
}

#[test]
fn fixture_matching_improves_balance() {
    use ccrmst::matching::balance::mean_abs_imbalance;
    use ccrmst::matching::BalanceStage;
    let ingested = fixture_sample();
    let config = fixture_config();
    let report = ccrmst::analysis::analyze(&ingested, &config).unwrap();
    let stage_mean = |method: ccrmst::estimator::Method, stage: BalanceStage| {
        let rows: Vec<_> = report
            .balance
            .iter()
            .filter(|b| b.row.stage == stage && (stage == BalanceStage::PreMatch || b.method == Some(method)))
            .filter(|b| b.template_ratio.is_none_or(|r| r == 5.0))
            .map(|b| b.row.clone())
            .collect();
        mean_abs_imbalance(&rows)
    };
    for method in [ccrmst::estimator::Method::PsTemplate, ccrmst::estimator::Method::CovarTemplate] {
        let pre = stage_mean(method, BalanceStage::PreMatch);
        let post = stage_mean(method, BalanceStage::TemplateMatch);
        assert!(post < pre, "{method}: {post} not below {pre}");
    }
    for run in &report.runs {
        assert!(run.result.estimate.att.is_finite());
        assert!(run.result.estimate.se >= 0.0);
    }
}

#[test]
fn fixture_template_size_follows_ratio() {
    let ingested = fixture_sample();
    let mut config = fixture_config();
    config.methods = vec![ccrmst::estimator::Method::PsTemplate];
    config.template_ratios = vec![5.0, 4.0, 3.0];
    config.bootstrap = 20;
    let report = ccrmst::analysis::analyze(&ingested, &config).unwrap();
    let n0 = report.n_unexposed;
    let mut sizes = Vec::new();
    for run in &report.runs {
        let ratio = run.template_ratio.unwrap();
        assert_eq!(run.template_size, Some(matching::template_size(n0, ratio)));
        assert_eq!(run.result.estimate.n_pairs, matching::template_size(n0, ratio));
        sizes.push(run.template_size.unwrap());
    }
    assert!(sizes.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn att_of_identical_arms_is_zero() {
    let mut rng = rng::stream(24, 0);
    let mut pairs = unit_weight_pairs(&mut rng, 20);
    for p in &mut pairs {
        p.control = p.treated;
    }
    let tau = pairs.iter().map(|p| p.treated.time).fold(0.0, f64::max);
    let est = estimate_att(&pairs, &[1.0; 20], tau).unwrap();
    assert_eq!(est.att, 0.0);
}
