//! Monte Carlo harness for the occupancy and shot-noise central limit
//! theorems, the weak law, the vanishing remainder terms and the gap bounds.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::brw::{conditional_sum, count_brw, level_of, sample_prw, theorem31_from_counts, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::laws::{compute_moments, StepLaw, WeightLaw};
use crate::occupancy::{simulate_coupled, simulate_occupancy, SchemeConfig, YDecomp};
use crate::renewal::checks::exp_tail;
use crate::renewal::Ladder;
use crate::rng::{derive, par_replicates, stream_from_key};
use crate::stats::{self, KsResult, Spread};

/// A law given either through its stick factor or directly as a step pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanLaw {
    Weight(WeightLaw),
    Step(StepLaw),
}

impl PlanLaw {
    pub fn step_law(&self) -> StepLaw {
        match self {
            PlanLaw::Weight(w) => StepLaw::derived(w.clone()),
            PlanLaw::Step(s) => s.clone(),
        }
    }

    /// The stick law, needed by anything that runs the occupancy cascade.
    pub fn weight_law(&self) -> Result<WeightLaw> {
        match self {
            PlanLaw::Weight(w) | PlanLaw::Step(StepLaw::Derived { weight: w }) => Ok(w.clone()),
            PlanLaw::Step(_) => Err(Error::InvalidPlan("occupancy needs a stick-factor law".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum JRule {
    Fixed {
        j: f64,
    },
    /// `j = floor(x^alpha)` with `x = ln n` or `x = t`.
    Power {
        alpha: f64,
    },
}

impl JRule {
    pub fn at(&self, x: f64) -> f64 {
        match *self {
            JRule::Fixed { j } => j,
            JRule::Power { alpha } => x.powf(alpha).floor(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Y2Method {
    /// Grow the tree to level `k` and count.
    #[default]
    Direct,
    /// Average `sum_m int (C_m - V_m)^2(t - y) dV_{k-m}(y)` over level-one walks,
    /// where `C_m(s) = sum_r V_{m-1}(s - T_r)`.
    ShotNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Y1,
    Y2,
}

/// Pass/fail thresholds; absent entries are not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_ks_p")]
    pub ks_p: Option<f64>,
    #[serde(default = "default_mean_z")]
    pub mean_z: Option<f64>,
    /// Band for the empirical variance divided by `1/(2u)`.
    #[serde(default)]
    pub variance_ratio: Option<[f64; 2]>,
    /// Largest allowed gap between empirical and limit correlations.
    #[serde(default)]
    pub correlation_tol: Option<f64>,
    /// Restricts the KS and variance checks to these `u`.
    #[serde(default)]
    pub focus_u: Option<Vec<f64>>,
    /// Largest allowed final median `|ratio - 1|` in the weak-law table.
    #[serde(default)]
    pub final_deviation: Option<f64>,
}

fn default_ks_p() -> Option<f64> {
    Some(0.01)
}

fn default_mean_z() -> Option<f64> {
    Some(4.0)
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ks_p: default_ks_p(),
            mean_z: default_mean_z(),
            variance_ratio: None,
            correlation_tol: None,
            focus_u: None,
            final_deviation: None,
        }
    }
}

impl Thresholds {
    fn focused(&self, u: f64) -> bool {
        self.focus_u
            .as_ref()
            .is_none_or(|f| f.iter().any(|&x| (x - u).abs() < 1e-12))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub law: PlanLaw,
    #[serde(default)]
    pub n_list: Vec<f64>,
    #[serde(default)]
    pub t_list: Vec<f64>,
    pub j_rule: JRule,
    pub u_list: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub h: f64,
    pub t_max: f64,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Replaces the computed `mu` in every normalization.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Cap on the individuals grown per replicate.
    #[serde(default)]
    pub budget: Option<u64>,
    /// Cap on the expected individuals grown over the whole run.
    #[serde(default)]
    pub total_budget: Option<u64>,
    #[serde(default)]
    pub y2_method: Y2Method,
    /// Grid step for shot-noise paths; defaults to `t / 2000`.
    #[serde(default)]
    pub coarse_step: Option<f64>,
}

pub const DEFAULT_TOTAL_BUDGET: u64 = 10_000_000_000;

/// One evaluation point: ball count (when occupancy is involved) and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub n: Option<u64>,
    pub t: f64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        self.law.step_law().validate()?;
        if self.n_list.is_empty() == self.t_list.is_empty() {
            return bad("exactly one of n_list and t_list must be given".into());
        }
        if self.n_list.iter().any(|&n| !(n >= 1.0) || n > u64::MAX as f64) {
            return bad("ball counts must lie in [1, 2^64)".into());
        }
        if self.t_list.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return bad("horizons must be finite and nonnegative".into());
        }
        if let JRule::Power { alpha } = self.j_rule {
            if !(alpha > 0.0 && alpha < 0.5) {
                return bad(format!("power rule needs 0 < alpha < 0.5, got {alpha}"));
            }
        }
        if let JRule::Fixed { j } = self.j_rule {
            if !(j >= 1.0) {
                return bad(format!("fixed level {j} is below 1"));
            }
        }
        if self.u_list.is_empty() {
            return bad("u_list is empty".into());
        }
        if self.u_list.iter().any(|&u| !(u > 0.0) || !u.is_finite()) {
            return bad("u_list entries must be positive".into());
        }
        if self.u_list.windows(2).any(|w| w[0] >= w[1]) {
            return bad("u_list must be sorted and distinct".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.h > 0.0) || !(self.t_max > 0.0) {
            return bad("grid step and t_max must be positive".into());
        }
        if self.mu.is_some_and(|m| !(m > 0.0)) {
            return bad("mu override must be positive".into());
        }
        for p in self.horizons()? {
            let j = self.j_rule.at(p.t);
            for &u in &self.u_list {
                if (j * u).floor() < 1.0 {
                    return bad(format!("level floor({j} * {u}) at t = {} is below 1", p.t));
                }
            }
            if p.t > self.t_max {
                return Err(Error::GridTooShort {
                    t: p.t,
                    t_max: self.t_max,
                });
            }
        }
        Ok(())
    }

    /// Points as given, with `t = ln n` or `n = round(e^t)` filled in.
    pub fn horizons(&self) -> Result<Vec<Horizon>> {
        if !self.n_list.is_empty() {
            Ok(self
                .n_list
                .iter()
                .map(|&n| {
                    let n = n.round() as u64;
                    Horizon {
                        n: Some(n),
                        t: (n as f64).ln(),
                    }
                })
                .collect())
        } else {
            Ok(self
                .t_list
                .iter()
                .map(|&t| {
                    let e = t.exp();
                    let n = if e < u64::MAX as f64 {
                        Some(e.round().max(1.0) as u64)
                    } else {
                        None
                    };
                    Horizon { n, t }
                })
                .collect())
        }
    }

    fn levels(&self, j: f64) -> Result<Vec<usize>> {
        self.u_list.iter().map(|&u| level_of(j, u)).collect()
    }

    fn max_level(&self) -> Result<usize> {
        let mut k = 1;
        for p in self.horizons()? {
            k = k.max(*self.levels(self.j_rule.at(p.t))?.iter().max().unwrap());
        }
        Ok(k)
    }
}

/// `Cov(int e^{-uy} dB(y), int e^{-vy} dB(y)) = 1/(u+v)`.
pub fn limit_covariance(u: f64, v: f64) -> Result<f64> {
    if !(u > 0.0) || !(v > 0.0) {
        return Err(Error::DomainError(format!(
            "limit covariance needs u, v > 0, got ({u}, {v})"
        )));
    }
    Ok(1.0 / (u + v))
}

/// Sampler of `(int_0^H e^{-u y} dB(y))_u` from one Brownian path on a grid of
/// `step`, with the integrand taken at cell midpoints.
#[derive(Debug, Clone)]
pub struct LimitSampler {
    cells: usize,
    sqrt_step: f64,
    start: Vec<f64>,
    decay: Vec<f64>,
}

impl LimitSampler {
    pub fn new(u_list: &[f64], step: f64, horizon: f64) -> Result<LimitSampler> {
        if !(step > 0.0) || !(horizon > 0.0) {
            return Err(Error::DomainError(format!(
                "step {step} and horizon {horizon} must be positive"
            )));
        }
        if u_list.iter().any(|&u| !(u > 0.0)) {
            return Err(Error::DomainError("u entries must be positive".into()));
        }
        if let Some(min) = u_list.iter().copied().reduce(f64::min) {
            if horizon * min < 20.0 {
                return Err(Error::HorizonTooShort(horizon * min));
            }
        }
        Ok(LimitSampler {
            cells: (horizon / step).ceil() as usize,
            sqrt_step: step.sqrt(),
            start: u_list.iter().map(|&u| (-0.5 * u * step).exp()).collect(),
            decay: u_list.iter().map(|&u| (-u * step).exp()).collect(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.start.len();
        if k == 0 {
            return Vec::new();
        }
        let mut w = self.start.clone();
        let mut acc = vec![0.0; k];
        for _ in 0..self.cells {
            let db = self.sqrt_step * rng.sample::<f64, _>(StandardNormal);
            for i in 0..k {
                acc[i] += w[i] * db;
                w[i] *= self.decay[i];
            }
        }
        acc
    }
}

pub fn sample_limit_vector<R: Rng + ?Sized>(u_list: &[f64], rng: &mut R, step: f64, horizon: f64) -> Result<Vec<f64>> {
    Ok(LimitSampler::new(u_list, step, horizon)?.sample(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: String,
}

impl Check {
    fn new(name: String, passed: bool, value: f64, threshold: String) -> Check {
        Check {
            name,
            passed,
            value,
            threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub n: Option<u64>,
    pub t: f64,
    pub j: f64,
    pub levels: Vec<usize>,
    /// Subtracted mean per `u`.
    pub centers: Vec<f64>,
    /// Multiplier per `u`.
    pub scales: Vec<f64>,
    /// Unnormalized quantity per replicate and `u`.
    pub raw: Vec<Vec<f64>>,
    /// `(raw - center) * scale` per replicate and `u`.
    pub stats: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub stderr: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub limit: Vec<Vec<f64>>,
    pub ks: Vec<Option<KsResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub kind: String,
    pub u_list: Vec<f64>,
    pub points: Vec<PointReport>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl CltReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// `(raw - center) * scale`, shared by the runners and their consumers.
pub fn normalize(raw: f64, center: f64, scale: f64) -> f64 {
    (raw - center) * scale
}

/// `floor(j)^{1/2} (k-1)! / (s2 m^{-2k-1} x^{2k-1})^{1/2}`.
pub fn clt_scale(j: f64, k: usize, x: f64, sigma2: f64, mu: f64) -> f64 {
    let kf = k as f64;
    (0.5 * j.floor().ln() + ln_factorial(k as u64 - 1)
        - 0.5 * (sigma2.ln() - (2.0 * kf + 1.0) * mu.ln() + (2.0 * kf - 1.0) * x.ln()))
    .exp()
}

/// `floor(j)^{1/2} (k-1)! m^k / x^{k-1/2}`.
pub fn remainder_scale(j: f64, k: usize, x: f64, mu: f64) -> f64 {
    let kf = k as f64;
    (0.5 * j.floor().ln() + ln_factorial(k as u64 - 1) + kf * mu.ln() - (kf - 0.5) * x.ln()).exp()
}

fn summarize_point(
    plan: &ExperimentPlan,
    h: Horizon,
    j: f64,
    levels: Vec<usize>,
    centers: Vec<f64>,
    scales: Vec<f64>,
    raw: Vec<Vec<f64>>,
) -> Result<PointReport> {
    let k = plan.u_list.len();
    let stats: Vec<Vec<f64>> = raw
        .iter()
        .map(|row| (0..k).map(|i| normalize(row[i], centers[i], scales[i])).collect())
        .collect();
    let columns: Vec<Vec<f64>> = (0..k).map(|i| stats.iter().map(|r| r[i]).collect()).collect();
    let nrep = stats.len() as f64;
    let mean: Vec<f64> = columns.iter().map(|c| stats::mean(c)).collect();
    let variance: Vec<f64> = columns.iter().map(|c| stats::variance(c)).collect();
    let stderr: Vec<f64> = variance.iter().map(|v| (v / nrep).sqrt()).collect();
    let covariance = stats::covariance_matrix(&columns);
    let limit = plan
        .u_list
        .iter()
        .map(|&a| {
            plan.u_list
                .iter()
                .map(|&b| limit_covariance(a, b))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let ks = columns
        .iter()
        .zip(&plan.u_list)
        .map(|(c, &u)| (c.len() > 1).then(|| stats::ks_test(c, |x| stats::normal_cdf(x, 0.5 / u))))
        .collect();
    Ok(PointReport {
        n: h.n,
        t: h.t,
        j,
        levels,
        centers,
        scales,
        raw,
        stats,
        mean,
        variance,
        stderr,
        covariance,
        limit,
        ks,
    })
}

fn point_checks(plan: &ExperimentPlan, p: &PointReport, out: &mut Vec<Check>) {
    let th = &plan.thresholds;
    let tag = match p.n {
        Some(n) if !plan.n_list.is_empty() => format!("n={n}"),
        _ => format!("t={}", p.t),
    };
    for (i, &u) in plan.u_list.iter().enumerate() {
        if let Some(z) = th.mean_z {
            let dev = if p.stderr[i] > 0.0 {
                p.mean[i].abs() / p.stderr[i]
            } else {
                0.0
            };
            out.push(Check::new(
                format!("mean {tag} u={u}"),
                dev <= z,
                dev,
                format!("|mean|/stderr <= {z}"),
            ));
        }
        if !th.focused(u) {
            continue;
        }
        if let (Some(thr), Some(ks)) = (th.ks_p, p.ks[i]) {
            out.push(Check::new(
                format!("ks {tag} u={u}"),
                ks.p_value > thr,
                ks.p_value,
                format!("p > {thr}"),
            ));
        }
        if let Some([lo, hi]) = th.variance_ratio {
            let r = p.variance[i] / (0.5 / u);
            out.push(Check::new(
                format!("variance {tag} u={u}"),
                r >= lo && r <= hi,
                p.variance[i],
                format!("var*2u in [{lo}, {hi}]"),
            ));
        }
    }
    if let Some(tol) = th.correlation_tol {
        let k = plan.u_list.len();
        for a in 0..k {
            for b in a + 1..k {
                let emp = p.covariance[a][b] / (p.covariance[a][a] * p.covariance[b][b]).sqrt();
                let lim = p.limit[a][b] / (p.limit[a][a] * p.limit[b][b]).sqrt();
                let (ua, ub) = (plan.u_list[a], plan.u_list[b]);
                out.push(Check::new(
                    format!("correlation {tag} u={ua},{ub}"),
                    (emp - lim).abs() <= tol,
                    emp,
                    format!("{lim:.4} +- {tol}"),
                ));
            }
        }
    }
    for i in 0..plan.u_list.len() {
        out.push(Check::new(
            format!("covariance sanity {tag} u={}", plan.u_list[i]),
            p.covariance[i][i] > 0.0 && (0..plan.u_list.len()).all(|b| p.covariance[i][b] == p.covariance[b][i]),
            p.covariance[i][i],
            "symmetric, positive diagonal".into(),
        ));
    }
}

fn seal(kind: &str, plan: &ExperimentPlan, points: Vec<PointReport>) -> CltReport {
    let mut checks = Vec::new();
    for p in &points {
        point_checks(plan, p, &mut checks);
    }
    let passed = checks.iter().all(|c| c.passed);
    CltReport {
        kind: kind.into(),
        u_list: plan.u_list.clone(),
        points,
        checks,
        passed,
    }
}

struct Prepared {
    step: StepLaw,
    mu: f64,
    sigma2: f64,
    ladder: Ladder,
}

fn prepare(plan: &ExperimentPlan) -> Result<Prepared> {
    plan.validate()?;
    let step = plan.law.step_law();
    let m = compute_moments(&step)?;
    let ladder = Ladder::build(&step, plan.h, plan.t_max, plan.max_level()?)?;
    Ok(Prepared {
        step,
        mu: plan.mu.unwrap_or(m.mu),
        sigma2: m.sigma2,
        ladder,
    })
}

fn need_variance(sigma2: f64) -> Result<()> {
    if !(sigma2 > 1e-12) {
        return Err(Error::HypothesisUnmet(format!(
            "step variance {sigma2} must be positive"
        )));
    }
    Ok(())
}

fn ball_count(h: &Horizon) -> Result<u64> {
    h.n.ok_or_else(|| Error::InvalidPlan(format!("horizon {} has no ball count", h.t)))
}

/// Occupancy statistic `K_n(k) - V_k(ln n)` normalized at each `u`, one cascade per replicate.
pub fn run_theorem21(plan: &ExperimentPlan) -> Result<CltReport> {
    let pre = prepare(plan)?;
    need_variance(pre.sigma2)?;
    let weight = plan.law.weight_law()?;
    let mut points = Vec::new();
    for (pi, h) in plan.horizons()?.into_iter().enumerate() {
        let n = ball_count(&h)?;
        let j = plan.j_rule.at(h.t);
        let levels = plan.levels(j)?;
        let depth = *levels.iter().max().unwrap();
        let centers = levels
            .iter()
            .map(|&k| pre.ladder.eval(k, h.t))
            .collect::<Result<Vec<_>>>()?;
        let scales = levels
            .iter()
            .map(|&k| clt_scale(j, k, h.t, pre.sigma2, pre.mu))
            .collect();
        let raw = par_replicates(derive(plan.seed, pi as u64), plan.replicates, |_, key| {
            let cfg = SchemeConfig {
                n,
                j_max: depth,
                law: weight.clone(),
                seed: key,
            };
            let prof = simulate_occupancy(&cfg)?;
            Ok(levels.iter().map(|&k| prof.counts[k - 1] as f64).collect())
        })?;
        points.push(summarize_point(plan, h, j, levels, centers, scales, raw)?);
    }
    Ok(seal("occupancy_clt", plan, points))
}

/// Shot-noise statistic `sum_r V_{k-1}(t - T_r) - V_k(t)` normalized at each `u`,
/// one level-one walk per replicate.
pub fn run_theorem32(plan: &ExperimentPlan) -> Result<CltReport> {
    let pre = prepare(plan)?;
    need_variance(pre.sigma2)?;
    let mut points = Vec::new();
    for (pi, h) in plan.horizons()?.into_iter().enumerate() {
        let j = plan.j_rule.at(h.t);
        let levels = plan.levels(j)?;
        let centers = levels
            .iter()
            .map(|&k| pre.ladder.eval(k, h.t))
            .collect::<Result<Vec<_>>>()?;
        let scales = levels
            .iter()
            .map(|&k| clt_scale(j, k, h.t, pre.sigma2, pre.mu))
            .collect();
        let raw = par_replicates(derive(plan.seed, pi as u64), plan.replicates, |_, key| {
            let mut rng = stream_from_key(key);
            let walk = sample_prw(&pre.step, h.t, &mut rng)?;
            let first: Vec<f64> = walk.points.iter().map(|p| p.1).collect();
            levels
                .iter()
                .map(|&k| conditional_sum(&first, k, h.t, &pre.ladder))
                .collect()
        })?;
        points.push(summarize_point(plan, h, j, levels, centers, scales, raw)?);
    }
    Ok(seal("shot_noise_clt", plan, points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WllnRow {
    pub n: u64,
    pub j: usize,
    pub ratios: Vec<f64>,
    pub median_ratio: f64,
    pub median_deviation: f64,
    pub iqr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WllnReport {
    pub mu: f64,
    pub rows: Vec<WllnRow>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// `j! m^j K_n(j) / (ln n)^j` per replicate, `j = floor(j_n)`.
pub fn run_wlln(plan: &ExperimentPlan) -> Result<WllnReport> {
    plan.validate()?;
    let weight = plan.law.weight_law()?;
    let mu = match plan.mu {
        Some(m) => m,
        None => compute_moments(&plan.law.step_law())?.mu,
    };
    let horizons = plan.horizons()?;
    if horizons.windows(2).any(|w| w[0].t >= w[1].t) {
        return Err(Error::InvalidPlan("ball counts must increase".into()));
    }
    let mut rows = Vec::new();
    for (pi, h) in horizons.into_iter().enumerate() {
        let n = ball_count(&h)?;
        let j = plan.j_rule.at(h.t).floor() as usize;
        let jf = j as f64;
        let ln_scale = ln_factorial(j as u64) + jf * mu.ln() - jf * h.t.ln();
        let ratios = par_replicates(derive(plan.seed, pi as u64), plan.replicates, |_, key| {
            let cfg = SchemeConfig {
                n,
                j_max: j,
                law: weight.clone(),
                seed: key,
            };
            let k = simulate_occupancy(&cfg)?.counts[j - 1] as f64;
            Ok(k * ln_scale.exp())
        })?;
        let devs: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
        let sp = stats::median_iqr(&ratios);
        rows.push(WllnRow {
            n,
            j,
            median_ratio: sp.median,
            median_deviation: stats::median_iqr(&devs).median,
            iqr: sp.iqr,
            ratios,
        });
    }
    let mut checks = Vec::new();
    let devs: Vec<f64> = rows.iter().map(|r| r.median_deviation).collect();
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    checks.push(Check::new(
        "median deviation decreasing".into(),
        decreasing,
        *devs.last().unwrap(),
        "strict decrease".into(),
    ));
    if let Some(thr) = plan.thresholds.final_deviation {
        let last = *devs.last().unwrap();
        checks.push(Check::new(
            "final median deviation".into(),
            last < thr,
            last,
            format!("< {thr}"),
        ));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(WllnReport {
        mu,
        rows,
        checks,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishRow {
    pub n: Option<u64>,
    pub t: f64,
    pub j: f64,
    pub levels: Vec<usize>,
    /// Per replicate and `u`: the squared normalized statistic, or its
    /// conditional expectation under the shot-noise method.
    pub squares: Vec<Vec<f64>>,
    pub second_moment: Vec<f64>,
    pub stderr: Vec<f64>,
    pub spread: Vec<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishReport {
    pub term: Term,
    pub method: Y2Method,
    pub u_list: Vec<f64>,
    pub rows: Vec<VanishRow>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Expected number of individuals on levels `1..=k` below `t`.
fn expected_population(ladder: &Ladder, k: usize, t: f64) -> Result<f64> {
    let mut s = 0.0;
    for i in 1..=k {
        s += ladder.eval(i, t)?;
    }
    Ok(s)
}

/// `sum_{m<k} int (C_m - V_m)^2(t - y) dV_{k-m}(y)` for one level-one walk,
/// on the grid `y_i = i H`, `H = coarse`, with the trapezoid rule in `y`.
pub fn shot_noise_square(first: &[f64], k: usize, t: f64, ladder: &Ladder, coarse: f64) -> Result<f64> {
    if k < 2 {
        return Ok(0.0);
    }
    let cells = (t / coarse).floor() as usize;
    let s_at = |i: usize| t - i as f64 * coarse;
    let mut total = 0.0;
    for m in 1..k {
        // squared centered shot noise at s = t - y_i
        let mut f = vec![0.0; cells + 1];
        for (i, slot) in f.iter_mut().enumerate() {
            let s = s_at(i);
            let mut c = 0.0;
            for &tr in first {
                if tr <= s {
                    c += ladder.eval(m - 1, s - tr)?;
                }
            }
            let d = c - ladder.eval(m, s)?;
            *slot = d * d;
        }
        let vk = ladder.vj(k - m).unwrap();
        let mut prev = vk.eval(0.0)?;
        let mut acc = prev * f[0];
        for i in 1..=cells {
            let cur = vk.eval(i as f64 * coarse)?;
            acc += (cur - prev) * 0.5 * (f[i - 1] + f[i]);
            prev = cur;
        }
        total += acc;
    }
    Ok(total)
}

/// Normalized second moments of `Y1 = K - rho` or `Y2 = rho - sum_r V_{k-1}(t - T_r)`.
pub fn run_vanishing_terms(plan: &ExperimentPlan, term: Term) -> Result<VanishReport> {
    let pre = prepare(plan)?;
    let weight = match term {
        Term::Y1 => Some(plan.law.weight_law()?),
        Term::Y2 => None,
    };
    let budget = plan.budget.unwrap_or(DEFAULT_BUDGET);
    let total_cap = plan.total_budget.unwrap_or(DEFAULT_TOTAL_BUDGET);
    let mut rows = Vec::new();
    for (pi, h) in plan.horizons()?.into_iter().enumerate() {
        let j = plan.j_rule.at(h.t);
        let levels = plan.levels(j)?;
        let depth = *levels.iter().max().unwrap();
        let scales: Vec<f64> = levels.iter().map(|&k| remainder_scale(j, k, h.t, pre.mu)).collect();
        let key = derive(plan.seed, pi as u64);
        let squares: Vec<Vec<f64>> = match (term, plan.y2_method) {
            (Term::Y1, _) => {
                let n = ball_count(&h)?;
                let weight = weight.clone().unwrap();
                par_replicates(key, plan.replicates, |_, k| {
                    let cfg = SchemeConfig {
                        n,
                        j_max: depth,
                        law: weight.clone(),
                        seed: k,
                    };
                    let p = simulate_coupled(&cfg, n as f64)?;
                    levels
                        .iter()
                        .zip(&scales)
                        .map(|(&lv, &s)| Ok((YDecomp::from_coupled(&p, lv, &pre.ladder)?.y1 * s).powi(2)))
                        .collect()
                })?
            }
            (Term::Y2, Y2Method::Direct) => {
                let expected = expected_population(&pre.ladder, depth, h.t)? * plan.replicates as f64;
                if expected > total_cap as f64 {
                    return Err(Error::BudgetExceeded {
                        count: expected.min(u64::MAX as f64) as u64,
                        cap: total_cap,
                    });
                }
                let sampler = pre.step.sampler();
                par_replicates(key, plan.replicates, |_, k| {
                    let mut rng = stream_from_key(k);
                    let c = count_brw(&sampler, depth, h.t, &mut rng, budget)?;
                    plan.u_list
                        .iter()
                        .zip(&levels)
                        .map(|(&u, &lv)| {
                            Ok(
                                theorem31_from_counts(j, u, h.t, c.counts[lv - 1], &c.first, &pre.ladder, pre.mu)?
                                    .powi(2),
                            )
                        })
                        .collect()
                })?
            }
            (Term::Y2, Y2Method::ShotNoise) => {
                let coarse = plan.coarse_step.unwrap_or(h.t / 2000.0).max(1e-9);
                par_replicates(key, plan.replicates, |_, k| {
                    let mut rng = stream_from_key(k);
                    let walk = sample_prw(&pre.step, h.t, &mut rng)?;
                    let first: Vec<f64> = walk.points.iter().map(|p| p.1).collect();
                    levels
                        .iter()
                        .zip(&scales)
                        .map(|(&lv, &s)| Ok(shot_noise_square(&first, lv, h.t, &pre.ladder, coarse)? * s * s))
                        .collect()
                })?
            }
        };
        let nu = plan.u_list.len();
        let columns: Vec<Vec<f64>> = (0..nu).map(|i| squares.iter().map(|r| r[i]).collect()).collect();
        let second_moment = columns.iter().map(|c| stats::mean(c)).collect();
        let stderr = columns
            .iter()
            .map(|c| (stats::variance(c) / c.len() as f64).sqrt())
            .collect();
        let spread = columns.iter().map(|c| stats::median_iqr(c)).collect();
        rows.push(VanishRow {
            n: h.n,
            t: h.t,
            j,
            levels,
            squares,
            second_moment,
            stderr,
            spread,
        });
    }
    let mut checks = Vec::new();
    for (i, &u) in plan.u_list.iter().enumerate() {
        let m: Vec<f64> = rows.iter().map(|r| r.second_moment[i]).collect();
        let dec = m.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::new(
            format!("second moment decreasing u={u}"),
            dec,
            *m.last().unwrap(),
            "strict decrease".into(),
        ));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VanishReport {
        term,
        method: plan.y2_method,
        u_list: plan.u_list.clone(),
        rows,
        checks,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapTerms {
    /// `n int_(n, inf) x^{-1} dV_j(ln x)`.
    pub tail_term: f64,
    /// `int_[1, n] e^{-n/x} dV_j(ln x)`.
    pub sieve_term: f64,
    pub tail_ratio: f64,
    pub sieve_ratio: f64,
}

/// Both gap integrals after the substitution `x = e^y`, with ratios to `V_{j-1}(ln n)`.
pub fn gap_bound_eval(n: f64, j: usize, ladder: &Ladder) -> Result<GapTerms> {
    if !(n >= 1.0) {
        return Err(Error::DomainError(format!("ball count {n} below 1")));
    }
    let t = n.ln();
    let (tail_term, _) = exp_tail(ladder, j, t)?;
    let vj = ladder.vj(j).unwrap();
    let kernel = |s: f64| (-s.exp()).exp();
    let hs = vj.step();
    let vals = vj.values();
    let mut sieve_term = vals[0] * kernel(t);
    let last = (t / hs).floor() as usize;
    for m in 1..=last.min(vals.len() - 1) {
        let y = if vj.is_lattice() {
            vj.node(m)
        } else {
            (m as f64 - 0.5) * hs
        };
        sieve_term += (vals[m] - vals[m - 1]) * kernel(t - y);
    }
    // the partial cell up to t
    if !vj.is_lattice() && last + 1 < vals.len() && vj.node(last) < t {
        let y = 0.5 * (vj.node(last) + t);
        sieve_term += (vj.eval(t)? - vals[last]) * kernel(t - y);
    }
    let denom = ladder.eval(j - 1, t)?;
    let ratio = |x: f64| if denom > 0.0 { x / denom } else { 0.0 };
    Ok(GapTerms {
        tail_term,
        sieve_term,
        tail_ratio: ratio(tail_term),
        sieve_ratio: ratio(sieve_term),
    })
}
