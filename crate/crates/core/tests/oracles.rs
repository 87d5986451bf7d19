//! Monte Carlo checks against independently derived values.

use nestocc::brw::{count_brw, sample_prw, DEFAULT_BUDGET};
use nestocc::cltlab::{run_theorem32, run_vanishing_terms, ExperimentPlan, JRule, PlanLaw, Term, Thresholds, Y2Method};
use nestocc::laws::{compute_moments, sample_step, sample_weight, StepLaw, WeightLaw};
use nestocc::occupancy::{count_rho, decompose_y, simulate_occupancy, Height, SchemeConfig};
use nestocc::renewal::{centering, Ladder};
use nestocc::rng::{derive, par_replicates, replicate_stream, stream_from_key};
use nestocc::stats::{correlation, ks_test, mean, variance};
use proptest::prelude::*;

fn gem1() -> StepLaw {
    StepLaw::derived(WeightLaw::gem(1.0))
}

fn within(xs: &[f64], target: f64, k: f64) -> bool {
    let se = (variance(xs) / xs.len() as f64).sqrt();
    (mean(xs) - target).abs() <= k * se
}

#[test]
fn uniform_stick_is_uniform() {
    let mut rng = replicate_stream(100, 0);
    let w: Vec<f64> = (0..20_000)
        .map(|_| sample_weight(&WeightLaw::gem(1.0), &mut rng))
        .collect();
    assert!(ks_test(&w, |x| x.clamp(0.0, 1.0)).p_value > 0.01);
}

#[test]
fn gem2_mean() {
    // E W = int_0^1 x * 2x dx = 2/3
    let w = par_replicates(101, 1_000_000, |_, k| {
        Ok(sample_weight(&WeightLaw::gem(2.0), &mut stream_from_key(k)))
    })
    .unwrap();
    assert!(within(&w, 2.0 / 3.0, 3.0), "{}", mean(&w));
}

#[test]
fn uniform_stick_moments() {
    let mut rng = replicate_stream(102, 0);
    let n = 1_000_000;
    let (mut xi, mut eta) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (a, b) = sample_step(&gem1(), &mut rng);
        xi.push(a);
        eta.push(b);
    }
    let m = compute_moments(&gem1()).unwrap();
    assert!(within(&xi, m.mu, 4.0));
    assert!(within(&eta, m.e_eta, 4.0));
    let sq: Vec<f64> = xi.iter().map(|x| x * x).collect();
    assert!(within(&sq, m.e_xi2, 4.0));
    assert!((m.mu - 1.0).abs() < 1e-9 && (m.sigma2 - 1.0).abs() < 1e-9 && m.gamma.abs() < 1e-9);
    assert!(correlation(&xi, &eta) < 0.0);
}

#[test]
fn two_ball_height() {
    // two balls share a child with probability E(1-W)^2 / (1 - E W^2) = (1/3)/(2/3),
    // independently at every level, so the height is geometric with mean 2
    let tau = par_replicates(103, 100_000, |_, k| {
        let cfg = SchemeConfig {
            n: 2,
            j_max: 64,
            law: WeightLaw::gem(1.0),
            seed: k,
        };
        match simulate_occupancy(&cfg)?.height {
            Height::Reached(t) => Ok(t as f64),
            Height::ExceedsJmax => Ok(65.0),
        }
    })
    .unwrap();
    assert!((mean(&tau) - 2.0).abs() < 0.04, "{}", mean(&tau));
}

#[test]
fn first_level_rho_mean() {
    // E rho_1(e^2) = V(2) = 2
    let r = par_replicates(104, 100_000, |_, k| {
        let cfg = SchemeConfig {
            n: 1,
            j_max: 1,
            law: WeightLaw::gem(1.0),
            seed: k,
        };
        Ok(count_rho(&cfg, 2f64.exp())?.counts[0] as f64)
    })
    .unwrap();
    assert!(within(&r, 2.0, 3.0), "{}", mean(&r));
}

#[test]
fn second_level_rho_matches_centering() {
    let ladder = Ladder::build(&gem1(), 1e-3, 12.0, 2).unwrap();
    let c = centering(10f64.exp(), 2, &ladder).unwrap();
    let r = par_replicates(105, 100_000, |_, k| {
        let cfg = SchemeConfig {
            n: 1,
            j_max: 2,
            law: WeightLaw::gem(1.0),
            seed: k,
        };
        Ok(count_rho(&cfg, 10f64.exp())?.counts[1] as f64)
    })
    .unwrap();
    assert!(within(&r, c.value, 3.0), "{} vs {}", mean(&r), c.value);
}

#[test]
fn walk_count_mean() {
    let n = par_replicates(106, 100_000, |_, k| {
        Ok(sample_prw(&gem1(), 20.0, &mut stream_from_key(k))?.count() as f64)
    })
    .unwrap();
    assert!(within(&n, 20.0, 3.0), "{}", mean(&n));
}

#[test]
fn second_generation_mean() {
    let ladder = Ladder::build(&gem1(), 1e-3, 10.0, 2).unwrap();
    let v2 = ladder.eval(2, 10.0).unwrap();
    let sampler = gem1().sampler();
    let n = par_replicates(107, 10_000, |_, k| {
        Ok(count_brw(&sampler, 2, 10.0, &mut stream_from_key(k), DEFAULT_BUDGET)?.counts[1] as f64)
    })
    .unwrap();
    assert!(within(&n, v2, 3.0), "{} vs {v2}", mean(&n));
}

#[test]
fn first_generation_is_the_walk() {
    for i in 0..50 {
        let a = sample_prw(&gem1(), 15.0, &mut replicate_stream(108, i)).unwrap();
        let b = count_brw(
            &gem1().sampler(),
            1,
            15.0,
            &mut replicate_stream(108, i),
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert_eq!(a.count() as u64, b.counts[0]);
        let ts: Vec<f64> = a.points.iter().map(|p| p.1).collect();
        assert_eq!(ts, b.first);
    }
}

#[test]
fn weak_law_scale() {
    // K_n(3) 3! / (ln n)^3 near 1 for n = 10^6
    let t = 1e6f64.ln();
    let r = par_replicates(109, 200, |_, k| {
        let cfg = SchemeConfig {
            n: 1_000_000,
            j_max: 3,
            law: WeightLaw::gem(1.0),
            seed: k,
        };
        Ok(simulate_occupancy(&cfg)?.counts[2] as f64 * 6.0 / t.powi(3))
    })
    .unwrap();
    let m = mean(&r);
    assert!((0.6..=1.4).contains(&m), "{m}");
}

#[test]
fn shot_noise_term_dominates_decomposition() {
    let ladder = Ladder::build(&gem1(), 1e-3, 14.0, 2).unwrap();
    let ys = par_replicates(110, 10_000, |_, k| {
        let cfg = SchemeConfig {
            n: 1_000_000,
            j_max: 2,
            law: WeightLaw::gem(1.0),
            seed: k,
        };
        decompose_y(&cfg, 2, &ladder)
    })
    .unwrap();
    let v = |f: &dyn Fn(&nestocc::occupancy::YDecomp) -> f64| variance(&ys.iter().map(f).collect::<Vec<_>>());
    let (v1, v2, v3) = (v(&|y| y.y1), v(&|y| y.y2), v(&|y| y.y3));
    assert!(v3 > 5.0 * v1 && v3 > 5.0 * v2, "{v1} {v2} {v3}");
}

#[test]
fn y3_variance_dominates_y2() {
    let plan = ExperimentPlan {
        law: PlanLaw::Weight(WeightLaw::gem(1.0)),
        n_list: vec![],
        t_list: vec![30.0],
        j_rule: JRule::Fixed { j: 2.0 },
        u_list: vec![1.0],
        replicates: 2000,
        seed: 111,
        h: 0.01,
        t_max: 30.0,
        thresholds: Thresholds::default(),
        mu: None,
        budget: None,
        total_budget: None,
        y2_method: Y2Method::Direct,
        coarse_step: None,
    };
    let y3 = run_theorem32(&plan).unwrap();
    let y2 = run_vanishing_terms(&plan, Term::Y2).unwrap();
    let (a, b) = (y3.points[0].variance[0], y2.rows[0].second_moment[0]);
    assert!(a >= 5.0 * b, "{a} {b}");
}

fn small_law() -> impl Strategy<Value = WeightLaw> {
    prop_oneof![
        (0.3f64..3.0).prop_map(WeightLaw::gem),
        ((0.5f64..3.0), (0.5f64..3.0)).prop_map(|(a, b)| WeightLaw::beta(a, b)),
        (0.1f64..0.9).prop_map(|p| WeightLaw::atoms(vec![(p, 1.0)])),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancy_profile_invariants(law in small_law(), n in 1u64..5000, seed in any::<u64>()) {
        let cfg = SchemeConfig { n, j_max: 6, law, seed };
        let p = simulate_occupancy(&cfg).unwrap();
        prop_assert!(p.counts.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(p.counts.iter().all(|&k| k >= 1 && k <= n));
        if let Height::Reached(tau) = p.height {
            prop_assert!(p.counts[tau - 1..].iter().all(|&k| k == n));
            prop_assert!(p.counts[..tau - 1].iter().all(|&k| k < n));
        }
        prop_assert_eq!(simulate_occupancy(&cfg).unwrap(), p);
    }

    #[test]
    fn coupled_counts_agree_with_plain_run(n in 1u64..2000, seed in any::<u64>(), x in 1.0f64..1e4) {
        let cfg = SchemeConfig { n, j_max: 4, law: WeightLaw::gem(1.0), seed };
        let a = simulate_occupancy(&cfg).unwrap();
        let b = count_rho(&cfg, x).unwrap();
        let c = nestocc::occupancy::simulate_coupled(&cfg, x).unwrap();
        prop_assert_eq!(a.counts, c.counts);
        prop_assert_eq!(b.counts.clone(), c.rho);
        prop_assert!(b.counts.iter().all(|&r| (r as f64) <= x));
    }

    #[test]
    fn replicate_keys_are_schedule_free(master in any::<u64>(), i in 0u64..1000) {
        let keys = par_replicates(master, 1000, |_, k| Ok(k)).unwrap();
        prop_assert_eq!(keys[i as usize], derive(master, i));
    }
}
