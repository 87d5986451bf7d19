//! The acceptance suite: eleven checks at fixed parameters and seeds, shared
//! by the test target and the command-line driver.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::brw::{realize_brw, variance_recursion_check, DEFAULT_BUDGET};
use crate::cltlab::{
    gap_bound_eval, limit_covariance, run_theorem21, run_theorem32, run_vanishing_terms, run_wlln, ExperimentPlan,
    JRule, LimitSampler, PlanLaw, Term, Thresholds, Y2Method,
};
use crate::error::Result;
use crate::laws::{compute_moments, Marginal, StepLaw, WeightLaw};
use crate::occupancy::{simulate_occupancy, SchemeConfig};
use crate::renewal::checks::{band_constant, check_prop41, check_subadditivity, expansion_fit, prop71_ratio};
use crate::renewal::Ladder;
use crate::rng::{par_replicates, stream_from_key};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<16} {}  ({:.1}s of {:.0}s)  {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

pub const IDS: [u32; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

struct Outcome {
    passed: bool,
    detail: String,
    metrics: BTreeMap<String, f64>,
}

impl Outcome {
    fn new() -> Outcome {
        Outcome {
            passed: true,
            detail: String::new(),
            metrics: BTreeMap::new(),
        }
    }

    fn metric(&mut self, k: &str, v: f64) {
        self.metrics.insert(k.to_string(), v);
    }

    fn require(&mut self, ok: bool, what: String) {
        self.passed &= ok;
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail
            .push_str(&format!("{}{}", if ok { "" } else { "FAILED " }, what));
    }
}

fn gem1() -> StepLaw {
    StepLaw::derived(WeightLaw::gem(1.0))
}

fn unit_atoms() -> StepLaw {
    StepLaw::independent(
        Marginal::Atoms {
            atoms: vec![(1.0, 1.0)],
        },
        Marginal::Atoms {
            atoms: vec![(1.0, 1.0)],
        },
    )
}

fn exp_pair() -> StepLaw {
    StepLaw::independent(Marginal::Exponential { rate: 1.0 }, Marginal::Exponential { rate: 4.0 })
}

pub fn name_of(id: u32) -> &'static str {
    match id {
        1 => "renewal_oracle",
        2 => "power_band",
        3 => "expansion",
        4 => "shot_noise_clt",
        5 => "y2_vanishing",
        6 => "wlln",
        7 => "occupancy_clt",
        8 => "variance_recursion",
        9 => "gap_bounds",
        10 => "small_oracles",
        11 => "limit_law",
        _ => "unknown",
    }
}

fn budget_of(id: u32) -> f64 {
    match id {
        1 => 10.0,
        2 | 3 => 30.0,
        4 | 5 | 8 => 300.0,
        6 => 600.0,
        7 => 900.0,
        9 | 11 => 60.0,
        10 => 120.0,
        _ => 0.0,
    }
}

/// Runs criterion `id`. Errors inside a criterion count as failure.
pub fn run(id: u32) -> CriterionResult {
    let start = Instant::now();
    let res = match id {
        1 => renewal_oracle(),
        2 => power_band(),
        3 => expansion(),
        4 => shot_noise_clt(),
        5 => y2_vanishing(),
        6 => wlln(None),
        7 => occupancy_clt(),
        8 => variance_recursion(),
        9 => gap_bounds(),
        10 => small_oracles(),
        11 => limit_law(),
        _ => Ok(Outcome {
            passed: false,
            detail: format!("no criterion {id}"),
            metrics: BTreeMap::new(),
        }),
    };
    let seconds = start.elapsed().as_secs_f64();
    let budget = budget_of(id);
    let mut out = res.unwrap_or_else(|e| Outcome {
        passed: false,
        detail: format!("error: {e}"),
        metrics: BTreeMap::new(),
    });
    out.require(seconds <= budget, format!("runtime {seconds:.1}s <= {budget:.0}s"));
    CriterionResult {
        id,
        name: name_of(id).into(),
        passed: out.passed,
        detail: out.detail,
        metrics: out.metrics,
        seconds,
        budget_seconds: budget,
    }
}

pub fn run_all() -> Vec<CriterionResult> {
    IDS.iter().map(|&id| run(id)).collect()
}

fn max_abs_error<F: Fn(f64) -> f64>(g: &crate::renewal::GridFunction, f: F) -> (f64, f64) {
    let mut worst = (0.0, 0.0);
    for i in 0..g.len() {
        let e = (g.values()[i] - f(g.node(i))).abs();
        if e > worst.0 {
            worst = (e, g.node(i));
        }
    }
    worst
}

/// Grid `U` and `V` for the uniform stick factor against `1 + t` and `t + e^{-t}`.
fn renewal_oracle() -> Result<Outcome> {
    let ladder = Ladder::build(&gem1(), 1e-3, 50.0, 1)?;
    let mut o = Outcome::new();
    let (eu, _) = max_abs_error(&ladder.u, |t| 1.0 + t);
    let (ev, at) = max_abs_error(ladder.v(), |t| t + (-t).exp());
    let (ev_mean, _) = max_abs_error(ladder.v(), |t| t);
    o.metric("u_error", eu);
    o.metric("v_error", ev);
    o.metric("v_error_at", at);
    o.metric("v_error_vs_t", ev_mean);
    o.require(eu <= 1e-4, format!("U vs 1+t err {eu:.2e}"));
    o.require(ev <= 1e-4, format!("V vs t+e^-t err {ev:.2e} at t={at}"));
    o.detail.push_str(&format!(" (V vs t err {ev_mean:.2e})"));
    Ok(o)
}

fn power_band() -> Result<Outcome> {
    let mut o = Outcome::new();
    let js: Vec<usize> = (1..=8).collect();
    for (label, law, h) in [("gem1", gem1(), 1e-3), ("lattice", unit_atoms(), 1e-3)] {
        let ladder = Ladder::build(&law, h, 50.0, 8)?;
        let m = compute_moments(&law)?;
        let c = band_constant(&ladder.u, &m);
        o.metric(&format!("{label}_c"), c);
        let reports = check_prop41(&ladder, &js, &m, c)?;
        let bad: Vec<String> = reports.iter().filter(|r| !r.holds).map(|r| r.name.clone()).collect();
        let worst = reports.iter().map(|r| r.max_slack).fold(f64::INFINITY, f64::min);
        o.metric(&format!("{label}_min_slack"), worst);
        o.require(bad.is_empty(), format!("{label}: c={c:.4}, j=1..8 violations {bad:?}"));
    }
    Ok(o)
}

fn expansion() -> Result<Outcome> {
    let mut o = Outcome::new();
    let law = exp_pair();
    let m = compute_moments(&law)?;
    let ladder = Ladder::build(&law, 1e-3, 50.0, 2)?;
    let fit = expansion_fit(&law, ladder.v(), &m)?;
    o.metric("gamma_hat", fit.gamma_hat);
    o.require(
        (fit.gamma_hat - 0.75).abs() <= 0.01,
        format!("gamma_hat {:.5}", fit.gamma_hat),
    );
    let rows = prop71_ratio(&ladder, &m, |_| 2, &[50.0])?;
    o.metric("ratio_j2_t50", rows[0].ratio);
    o.require(
        (rows[0].ratio - 1.0).abs() <= 0.15,
        format!("ratio j=2 t=50 {:.4}", rows[0].ratio),
    );
    let g = gem1();
    let gm = compute_moments(&g)?;
    let gl = Ladder::build(&g, 1e-3, 50.0, 1)?;
    let gf = expansion_fit(&g, gl.v(), &gm)?;
    o.metric("gem1_noise_floor", gf.noise_floor);
    match gf.decay_rate() {
        Ok(r) => {
            o.metric("gem1_decay_rate", r);
            o.require((r + 1.0).abs() <= 0.05, format!("uniform-stick decay rate {r:.4}"));
        }
        Err(e) => o.require(
            false,
            format!("uniform-stick decay rate: {e} (floor {:.1e})", gf.noise_floor),
        ),
    }
    Ok(o)
}

fn base_plan(law: StepLaw, replicates: usize, seed: u64, h: f64, t_max: f64) -> ExperimentPlan {
    ExperimentPlan {
        law: PlanLaw::Step(law),
        n_list: vec![],
        t_list: vec![],
        j_rule: JRule::Fixed { j: 1.0 },
        u_list: vec![1.0],
        replicates,
        seed,
        h,
        t_max,
        thresholds: Thresholds::default(),
        mu: None,
        budget: None,
        total_budget: None,
        y2_method: Y2Method::Direct,
        coarse_step: None,
    }
}

pub fn shot_noise_plan() -> ExperimentPlan {
    let mut p = base_plan(gem1(), 10_000, 0x5eed_0004, 0.01, 200.0);
    p.t_list = vec![200.0];
    p.j_rule = JRule::Power { alpha: 0.4 };
    p.u_list = vec![0.5, 1.0];
    p.thresholds = Thresholds {
        ks_p: Some(0.01),
        mean_z: None,
        variance_ratio: Some([0.75, 1.25]),
        correlation_tol: Some(0.03),
        focus_u: Some(vec![1.0]),
        final_deviation: None,
    };
    p
}

fn report_checks(o: &mut Outcome, checks: &[crate::cltlab::Check]) {
    for c in checks {
        o.metric(&c.name, c.value);
        o.require(c.passed, format!("{} = {:.4} ({})", c.name, c.value, c.threshold));
    }
}

fn shot_noise_clt() -> Result<Outcome> {
    let r = run_theorem32(&shot_noise_plan())?;
    let mut o = Outcome::new();
    let pt = &r.points[0];
    o.metric("j", pt.j);
    let relevant: Vec<_> = r
        .checks
        .iter()
        .filter(|c| !c.name.starts_with("covariance sanity"))
        .cloned()
        .collect();
    report_checks(&mut o, &relevant);
    o.metric("variance_u0.5", pt.variance[0]);
    Ok(o)
}

pub fn y2_plan() -> ExperimentPlan {
    let mut p = base_plan(gem1(), 1000, 0x5eed_0005, 0.02, 400.0);
    p.t_list = vec![100.0, 200.0, 400.0];
    p.j_rule = JRule::Power { alpha: 0.3 };
    p.y2_method = Y2Method::ShotNoise;
    p
}

fn y2_vanishing() -> Result<Outcome> {
    let r = run_vanishing_terms(&y2_plan(), Term::Y2)?;
    let mut o = Outcome::new();
    for row in &r.rows {
        o.metric(&format!("second_moment_t{}", row.t), row.second_moment[0]);
        o.metric(&format!("stderr_t{}", row.t), row.stderr[0]);
        o.metric(&format!("j_t{}", row.t), row.j);
    }
    let ms: Vec<String> = r.rows.iter().map(|x| format!("{:.4e}", x.second_moment[0])).collect();
    o.require(r.passed, format!("E stat^2 over t=100,200,400: {}", ms.join(", ")));
    Ok(o)
}

pub fn wlln_plan(mu: Option<f64>) -> ExperimentPlan {
    let mut p = base_plan(gem1(), 200, 0x5eed_0006, 0.01, 21.0);
    p.law = PlanLaw::Weight(WeightLaw::gem(1.0));
    p.n_list = vec![8f64.exp(), 14f64.exp(), 20f64.exp()];
    p.j_rule = JRule::Power { alpha: 0.4 };
    p.thresholds.final_deviation = Some(0.4);
    p.mu = mu;
    p
}

fn wlln(mu: Option<f64>) -> Result<Outcome> {
    let r = run_wlln(&wlln_plan(mu))?;
    let mut o = Outcome::new();
    for row in &r.rows {
        o.metric(&format!("median_deviation_n{}", row.n), row.median_deviation);
    }
    let ds: Vec<String> = r
        .rows
        .iter()
        .map(|x| format!("{:.4}(j={})", x.median_deviation, x.j))
        .collect();
    o.detail = format!("median |ratio-1|: {}", ds.join(", "));
    for c in &r.checks {
        o.require(c.passed, format!("{} {:.4} ({})", c.name, c.value, c.threshold));
    }
    Ok(o)
}

pub fn occupancy_clt_plan() -> ExperimentPlan {
    let mut p = base_plan(gem1(), 2000, 0x5eed_0007, 0.005, 21.0);
    p.law = PlanLaw::Weight(WeightLaw::gem(1.0));
    p.n_list = vec![20f64.exp()];
    p.j_rule = JRule::Fixed { j: 3.0 };
    p.thresholds = Thresholds {
        ks_p: None,
        mean_z: Some(4.0),
        variance_ratio: Some([0.6, 1.6]),
        correlation_tol: None,
        focus_u: None,
        final_deviation: None,
    };
    p
}

fn occupancy_clt() -> Result<Outcome> {
    let r = run_theorem21(&occupancy_clt_plan())?;
    let mut o = Outcome::new();
    let pt = &r.points[0];
    o.metric("mean", pt.mean[0]);
    o.metric("stderr", pt.stderr[0]);
    o.metric("variance", pt.variance[0]);
    let relevant: Vec<_> = r
        .checks
        .iter()
        .filter(|c| !c.name.starts_with("covariance sanity"))
        .cloned()
        .collect();
    report_checks(&mut o, &relevant);
    Ok(o)
}

fn variance_recursion() -> Result<Outcome> {
    let law = gem1();
    let ladder = Ladder::build(&law, 0.005, 8.0, 3)?;
    let mut o = Outcome::new();
    for j in [2usize, 3] {
        let c = variance_recursion_check(&law, j, 8.0, &ladder, 100_000, 0x5eed_0008 + j as u64, DEFAULT_BUDGET)?;
        o.metric(&format!("z_j{j}"), c.z);
        o.metric(&format!("lhs_j{j}"), c.lhs);
        o.metric(&format!("rhs_j{j}"), c.rhs);
        o.require(
            c.z.abs() < 4.0,
            format!("j={j}: z={:.3} (lhs {:.3}, rhs {:.3})", c.z, c.lhs, c.rhs),
        );
    }
    Ok(o)
}

fn gap_bounds() -> Result<Outcome> {
    let ladder = Ladder::build(&gem1(), 1e-3, 60.0, 3)?;
    let mut o = Outcome::new();
    for t in [10.0f64, 20.0, 30.0] {
        let g = gap_bound_eval(t.exp(), 3, &ladder)?;
        o.metric(&format!("tail_ratio_t{t}"), g.tail_ratio);
        o.metric(&format!("sieve_ratio_t{t}"), g.sieve_ratio);
        let ok = g.tail_ratio <= 5.0 && g.sieve_ratio <= 5.0;
        o.require(
            ok,
            format!("ln n={t}: ratios {:.4}, {:.4}", g.tail_ratio, g.sieve_ratio),
        );
    }
    let s = check_subadditivity(&ladder);
    o.metric("subadditivity_slack", s.max_slack);
    o.require(
        s.holds,
        format!("subadditivity min slack {:.2e} (tol {:.1e})", s.max_slack, s.tolerance),
    );
    Ok(o)
}

/// Exact law of `K_n(1)` and `K_n(2)` for deterministic sticks `P_r = p^{r-1}(1-p)`.
///
/// Level one enumerates set partitions of the balls and sums over distinct box
/// labels among the first `boxes`; level two convolves the level-one laws of
/// the block sizes, each block being an independent copy of the scheme.
pub fn deterministic_occupancy_law(n: usize, p: f64, boxes: usize) -> (Vec<f64>, Vec<f64>) {
    let probs: Vec<f64> = (0..boxes).map(|r| p.powi(r as i32) * (1.0 - p)).collect();
    let mut level1 = vec![vec![0.0; n + 1]; n + 1];
    let mut block_laws: Vec<Vec<(Vec<usize>, f64)>> = vec![Vec::new(); n + 1];
    for m in 1..=n {
        for blocks in set_partitions(m) {
            let mut sizes: Vec<usize> = blocks.iter().map(|b| b.len()).collect();
            sizes.sort_unstable();
            let w = distinct_label_sum(&sizes, &probs);
            level1[m][sizes.len()] += w;
            block_laws[m].push((sizes, w));
        }
    }
    let mut level2 = vec![0.0; n + 1];
    for (sizes, w) in &block_laws[n] {
        let mut dist = vec![1.0];
        for &s in sizes {
            let mut next = vec![0.0; dist.len() + level1[s].len()];
            for (a, &pa) in dist.iter().enumerate() {
                for (b, &pb) in level1[s].iter().enumerate() {
                    next[a + b] += pa * pb;
                }
            }
            dist = next;
        }
        for (k, &pk) in dist.iter().enumerate() {
            if k <= n {
                level2[k] += w * pk;
            }
        }
    }
    (level1[n].clone(), level2)
}

fn set_partitions(m: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![vec![]];
    for ball in 0..m {
        let mut next = Vec::new();
        for part in &out {
            for i in 0..part.len() {
                let mut q: Vec<Vec<usize>> = part.clone();
                q[i].push(ball);
                next.push(q);
            }
            let mut q = part.clone();
            q.push(vec![ball]);
            next.push(q);
        }
        out = next;
    }
    out
}

fn distinct_label_sum(sizes: &[usize], probs: &[f64]) -> f64 {
    fn rec(sizes: &[usize], probs: &[f64], used: &mut Vec<usize>) -> f64 {
        match sizes.split_first() {
            None => 1.0,
            Some((&s, rest)) => {
                let mut acc = 0.0;
                for r in 0..probs.len() {
                    if used.contains(&r) {
                        continue;
                    }
                    used.push(r);
                    acc += probs[r].powi(s as i32) * rec(rest, probs, used);
                    used.pop();
                }
                acc
            }
        }
    }
    rec(sizes, probs, &mut Vec::new())
}

/// Generation-`j` positions `<= t` of the tree with `xi = 1`, `eta = e`:
/// counts `(a_1, ..., a_j)`, `a_l >= 0`, with `sum a_l + j e <= t`.
pub fn lattice_tree_count(j: usize, t: f64, e: f64) -> u64 {
    fn rec(j: usize, budget: f64, e: f64) -> u64 {
        if j == 0 {
            return 1;
        }
        let mut acc = 0;
        let mut a = 0.0;
        while a + e <= budget + 1e-12 {
            acc += rec(j - 1, budget - a - e, e);
            a += 1.0;
        }
        acc
    }
    rec(j, t, e)
}

fn small_oracles() -> Result<Outcome> {
    let mut o = Outcome::new();
    let runs = 1_000_000usize;
    let mut worst_z = 0.0f64;
    let mut mismatches = Vec::new();
    for n in 1..=4usize {
        let (l1, l2) = deterministic_occupancy_law(n, 0.5, 60);
        let law = WeightLaw::atoms(vec![(0.5, 1.0)]);
        let samples = par_replicates(0x5eed_0010 + n as u64, runs, |_, key| {
            let cfg = SchemeConfig {
                n: n as u64,
                j_max: 2,
                law: law.clone(),
                seed: key,
            };
            let c = simulate_occupancy(&cfg)?.counts;
            Ok((c[0] as usize, c[1] as usize))
        })?;
        for (level, exact) in [(1usize, &l1), (2, &l2)] {
            let mut freq = vec![0usize; n + 1];
            for s in &samples {
                freq[if level == 1 { s.0 } else { s.1 }] += 1;
            }
            for k in 0..=n {
                let p = exact[k];
                let f = freq[k] as f64 / runs as f64;
                let se = (p * (1.0 - p) / runs as f64).sqrt();
                let ok = if se < 1e-12 {
                    (f - p).abs() < 1e-9
                } else {
                    (f - p).abs() <= 3.0 * se
                };
                if se >= 1e-12 {
                    worst_z = worst_z.max((f - p).abs() / se);
                }
                if !ok {
                    mismatches.push(format!("n={n} j={level} k={k}: {f:.5} vs {p:.5}"));
                }
            }
        }
    }
    o.metric("max_cell_z", worst_z);
    o.require(
        mismatches.is_empty(),
        format!("occupancy cells, max |z| {worst_z:.2} {mismatches:?}"),
    );
    let mut brw_bad = Vec::new();
    for (e, law) in [
        (1.0, unit_atoms()),
        (
            0.5,
            StepLaw::independent(
                Marginal::Atoms {
                    atoms: vec![(1.0, 1.0)],
                },
                Marginal::Atoms {
                    atoms: vec![(0.5, 1.0)],
                },
            ),
        ),
    ] {
        let mut rng = stream_from_key(0x5eed_0011);
        let real = realize_brw(&law, 4, 8.0, &mut rng, DEFAULT_BUDGET)?;
        for j in 1..=4 {
            for q in 0..=32 {
                let t = q as f64 * 0.25;
                let (got, want) = (real.count(j, t) as u64, lattice_tree_count(j, t, e));
                if got != want {
                    brw_bad.push(format!("eta={e} j={j} t={t}: {got} vs {want}"));
                }
            }
        }
    }
    o.require(brw_bad.is_empty(), format!("deterministic tree counts {brw_bad:?}"));
    Ok(o)
}

fn limit_law() -> Result<Outcome> {
    let us = [0.5, 1.0, 2.0];
    let sampler = LimitSampler::new(&us, 1e-2, 40.0)?;
    let rows = par_replicates(0x5eed_0012, 100_000, |_, key| {
        Ok(sampler.sample(&mut stream_from_key(key)))
    })?;
    let cols: Vec<Vec<f64>> = (0..3).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
    let cov = stats::covariance_matrix(&cols);
    let mut worst = 0.0f64;
    for a in 0..3 {
        for b in 0..3 {
            worst = worst.max((cov[a][b] - limit_covariance(us[a], us[b])?).abs());
        }
    }
    let mut o = Outcome::new();
    o.metric("max_deviation", worst);
    o.require(worst < 0.01, format!("max |cov - 1/(u+v)| {worst:.4}"));
    Ok(o)
}

/// Weak-law criterion with `mu` replaced, for sensitivity checks.
pub fn wlln_with_mu(mu: f64) -> CriterionResult {
    let start = Instant::now();
    let out = wlln(Some(mu)).unwrap_or_else(|e| Outcome {
        passed: false,
        detail: format!("error: {e}"),
        metrics: BTreeMap::new(),
    });
    CriterionResult {
        id: 6,
        name: name_of(6).into(),
        passed: out.passed,
        detail: out.detail,
        metrics: out.metrics,
        seconds: start.elapsed().as_secs_f64(),
        budget_seconds: budget_of(6),
    }
}
