//! Perturbed random walk `T_i = S_{i-1} + eta_i` and the branching random
//! walk in which every individual at position `p` has children at `p + T_i`
//! for an independent copy of the walk.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{StepLaw, StepSampler};
use crate::renewal::grid::stieltjes_at;
use crate::renewal::Ladder;
use crate::rng::{derive, par_replicates, stream_from_key};

pub const PATH_CAP: u64 = 100_000_000;
pub const DEFAULT_BUDGET: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrwRealization {
    pub horizon: f64,
    /// `(S_{i-1}, T_i)` for every `T_i <= horizon`.
    pub points: Vec<(f64, f64)>,
    /// First `S_i` beyond the horizon.
    pub walk_exit: f64,
}

impl PrwRealization {
    /// `N(t)`.
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Walks from `start` while `S_{i-1} <= t`, calling `emit` on every point `<= t`.
#[inline]
fn walk<R: Rng + ?Sized, E: FnMut(f64, f64)>(
    sampler: &StepSampler,
    start: f64,
    t: f64,
    rng: &mut R,
    mut emit: E,
) -> Result<f64> {
    let mut s = start;
    let mut draws = 0u64;
    while s <= t {
        draws += 1;
        if draws > PATH_CAP {
            return Err(Error::PathExplosion { cap: PATH_CAP });
        }
        let (xi, eta) = sampler.sample(rng);
        let p = s + eta;
        if p <= t {
            emit(s, p);
        }
        s += xi;
    }
    Ok(s)
}

pub fn sample_prw<R: Rng + ?Sized>(law: &StepLaw, t: f64, rng: &mut R) -> Result<PrwRealization> {
    if !(t >= 0.0) {
        return Err(Error::DomainError(format!("horizon {t} is negative")));
    }
    let sampler = law.sampler();
    let mut points = Vec::new();
    let walk_exit = walk(&sampler, 0.0, t, rng, |s, p| points.push((s, p)))?;
    Ok(PrwRealization {
        horizon: t,
        points,
        walk_exit,
    })
}

/// Individuals of generations `1..=depth` with positions `<= horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrwRealization {
    pub horizon: f64,
    /// Per generation, `(position, index of the first-generation ancestor)` sorted by position.
    pub generations: Vec<Vec<(f64, u32)>>,
    /// First-generation positions `T_r` in walk order.
    pub first: Vec<f64>,
}

impl BrwRealization {
    /// `N_j(t)` for `t <= horizon`.
    pub fn count(&self, j: usize, t: f64) -> usize {
        let g = &self.generations[j - 1];
        g.partition_point(|&(p, _)| p <= t)
    }

    /// Generation-`j` descendants `<= t` of each first-generation individual.
    pub fn breakdown(&self, j: usize, t: f64) -> Vec<u64> {
        let mut out = vec![0u64; self.first.len()];
        for &(p, r) in &self.generations[j - 1] {
            if p <= t {
                out[r as usize] += 1;
            }
        }
        out
    }
}

/// Generation counts `N_1(t), ..., N_depth(t)` and the first generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrwCounts {
    pub horizon: f64,
    pub counts: Vec<u64>,
    pub first: Vec<f64>,
}

fn grow<R: Rng + ?Sized>(
    sampler: &StepSampler,
    depth: usize,
    t: f64,
    rng: &mut R,
    budget: u64,
    mut visit: impl FnMut(usize, f64, u32),
) -> Result<Vec<f64>> {
    if depth == 0 {
        return Err(Error::DomainError("level must be at least 1".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::DomainError(format!("horizon {t} is negative")));
    }
    let mut first = Vec::new();
    walk(sampler, 0.0, t, rng, |_, p| first.push(p))?;
    let mut total = first.len() as u64;
    let mut stack: Vec<(usize, f64, u32)> = Vec::new();
    for (r, &p) in first.iter().enumerate().rev() {
        stack.push((1, p, r as u32));
    }
    while let Some((gen, pos, root)) = stack.pop() {
        visit(gen, pos, root);
        if gen < depth {
            let before = stack.len();
            walk(sampler, pos, t, rng, |_, p| stack.push((gen + 1, p, root)))?;
            total += (stack.len() - before) as u64;
            if total > budget {
                return Err(Error::BudgetExceeded {
                    count: total,
                    cap: budget,
                });
            }
        }
    }
    Ok(first)
}

/// Branching random walk up to generation `depth`, stored for evaluation at
/// any horizon up to `t`.
pub fn realize_brw<R: Rng + ?Sized>(
    law: &StepLaw,
    depth: usize,
    t: f64,
    rng: &mut R,
    budget: u64,
) -> Result<BrwRealization> {
    let sampler = law.sampler();
    let mut generations: Vec<Vec<(f64, u32)>> = vec![Vec::new(); depth.max(1)];
    let first = grow(&sampler, depth, t, rng, budget, |g, p, r| {
        generations[g - 1].push((p, r))
    })?;
    for g in &mut generations {
        g.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(BrwRealization {
        horizon: t,
        generations,
        first,
    })
}

/// Counts only; memory stays proportional to the DFS stack.
pub fn count_brw<R: Rng + ?Sized>(
    sampler: &StepSampler,
    depth: usize,
    t: f64,
    rng: &mut R,
    budget: u64,
) -> Result<BrwCounts> {
    let mut counts = vec![0u64; depth.max(1)];
    let first = grow(sampler, depth, t, rng, budget, |g, _, _| counts[g - 1] += 1)?;
    Ok(BrwCounts {
        horizon: t,
        counts,
        first,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrwSample {
    pub level: usize,
    pub horizon: f64,
    pub value: u64,
    /// Level-`j` descendants of each first-generation individual.
    pub breakdown: Vec<u64>,
}

pub fn simulate_brw<R: Rng + ?Sized>(law: &StepLaw, j: usize, t: f64, rng: &mut R) -> Result<BrwSample> {
    let real = realize_brw(law, j, t, rng, DEFAULT_BUDGET)?;
    Ok(BrwSample {
        level: j,
        horizon: t,
        value: real.count(j, t) as u64,
        breakdown: real.breakdown(j, t),
    })
}

/// `sum_r V_{k-1}(t - T_r) 1{T_r <= t}`.
pub fn conditional_sum(first: &[f64], k: usize, t: f64, ladder: &Ladder) -> Result<f64> {
    let mut acc = 0.0;
    for &tr in first {
        if tr <= t {
            acc += ladder.eval(k - 1, t - tr)?;
        }
    }
    Ok(acc)
}

/// Level `floor(j u)`, refused when below 1.
pub fn level_of(j: f64, u: f64) -> Result<usize> {
    let k = (j * u).floor();
    if k < 1.0 {
        return Err(Error::DomainError(format!("level floor({j} * {u}) is below 1")));
    }
    Ok(k as usize)
}

/// `floor(j)^{1/2} (k-1)! (N_k(t) - sum_r V_{k-1}(t - T_r)) / (m^{-k} t^{k-1/2})`, `k = floor(j u)`.
pub fn theorem31_from_counts(j: f64, u: f64, t: f64, n_k: u64, first: &[f64], ladder: &Ladder, mu: f64) -> Result<f64> {
    let k = level_of(j, u)?;
    if t > ladder.t_max() * (1.0 + 1e-12) {
        return Err(Error::GridTooShort {
            t,
            t_max: ladder.t_max(),
        });
    }
    let cond = conditional_sum(first, k, t, ladder)?;
    let kf = k as f64;
    let ln_scale = 0.5 * j.floor().ln() + statrs::function::factorial::ln_factorial(k as u64 - 1) + kf * mu.ln()
        - (kf - 0.5) * t.ln();
    Ok((n_k as f64 - cond) * ln_scale.exp())
}

#[allow(clippy::too_many_arguments)]
pub fn theorem31_statistic<R: Rng + ?Sized>(
    law: &StepLaw,
    j: f64,
    t: f64,
    u: f64,
    rng: &mut R,
    ladder: &Ladder,
    mu: f64,
    budget: u64,
) -> Result<f64> {
    let k = level_of(j, u)?;
    if t > ladder.t_max() * (1.0 + 1e-12) {
        return Err(Error::GridTooShort {
            t,
            t_max: ladder.t_max(),
        });
    }
    let c = count_brw(&law.sampler(), k, t, rng, budget)?;
    theorem31_from_counts(j, u, t, c.counts[k - 1], &c.first, ladder, mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    /// Estimate of `Var N_j(t)`.
    pub lhs: f64,
    /// Estimate of `int D_{j-1}(t - y) dV(y) + I_j(t)`.
    pub rhs: f64,
    pub convolution_term: f64,
    pub i_term: f64,
    pub z: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Monte Carlo check of `D_j = int D_{j-1}(t-y) dV(y) + I_j` with
/// `D_j = Var N_j(t)` and `I_j = E(sum_r V_{j-1}(t - T_r) - V_j(t))^2`.
///
/// Two independent samples of size `replicates` are drawn. The first gives
/// `(N_j - V_j)^2 - (C - V_j)^2` per replicate, whose mean estimates the
/// convolution term; the second gives, per replicate, the Stieltjes sum of
/// `(N_{j-1}(s) - V_{j-1}(s))^2` against `dV` evaluated on a single stored
/// realization, whose mean estimates the same term directly.
pub fn variance_recursion_check(
    law: &StepLaw,
    j: usize,
    t: f64,
    ladder: &Ladder,
    replicates: usize,
    seed: u64,
    budget: u64,
) -> Result<VarianceCheck> {
    if j < 2 {
        return Err(Error::DomainError("recursion needs j >= 2".into()));
    }
    if replicates < 2 {
        return Err(Error::DomainError("need at least two replicates".into()));
    }
    let v = ladder.v();
    let i_t = v
        .index_of(t)
        .ok_or_else(|| Error::DomainError(format!("horizon {t} is not a grid node")))?;
    let vj = ladder.eval(j, t)?;
    let sampler = law.sampler();
    let pass_a: Vec<(f64, f64)> = par_replicates(derive(seed, 0), replicates, |_, key| {
        let mut rng = stream_from_key(key);
        let c = count_brw(&sampler, j, t, &mut rng, budget)?;
        let cond = conditional_sum(&c.first, j, t, ladder)?;
        Ok(((c.counts[j - 1] as f64 - vj).powi(2), (cond - vj).powi(2)))
    })?;
    let pass_b: Vec<f64> = par_replicates(derive(seed, 1), replicates, |_, key| {
        let mut rng = stream_from_key(key);
        let real = realize_brw(law, j - 1, t, &mut rng, budget)?;
        Ok(stieltjes_at(v, i_t, |s| {
            let x = real.count(j - 1, s) as f64;
            (x - ladder.eval(j - 1, s).unwrap_or(f64::NAN)).powi(2)
        }))
    })?;
    let d: Vec<f64> = pass_a.iter().map(|(a, b)| a - b).collect();
    let (d_mean, d_var) = mean_var(&d);
    let (z_mean, z_var) = mean_var(&pass_b);
    let lhs = pass_a.iter().map(|p| p.0).sum::<f64>() / replicates as f64;
    let i_term = pass_a.iter().map(|p| p.1).sum::<f64>() / replicates as f64;
    let diff = d_mean - z_mean;
    let se = (d_var / replicates as f64 + z_var / replicates as f64).sqrt();
    let z = if diff == 0.0 { 0.0 } else { diff / se };
    Ok(VarianceCheck {
        lhs,
        rhs: z_mean + i_term,
        convolution_term: z_mean,
        i_term,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{Marginal, WeightLaw};
    use crate::rng::replicate_stream;

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

    fn binom(n: u64, k: u64) -> u64 {
        if k > n {
            return 0;
        }
        (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn deterministic_walk() {
        let mut rng = replicate_stream(0, 0);
        let p = sample_prw(&unit_atoms(), 3.5, &mut rng).unwrap();
        let ts: Vec<f64> = p.points.iter().map(|x| x.1).collect();
        assert_eq!(ts, vec![1.0, 2.0, 3.0]);
        assert_eq!(p.walk_exit, 4.0);
        let z = sample_prw(&StepLaw::derived(WeightLaw::gem(1.0)), 0.0, &mut rng).unwrap();
        assert_eq!(z.count(), 0);
    }

    #[test]
    fn deterministic_tree() {
        let mut rng = replicate_stream(0, 0);
        let s = simulate_brw(&unit_atoms(), 2, 2.5, &mut rng).unwrap();
        assert_eq!(s.value, 1);
        let real = realize_brw(&unit_atoms(), 3, 6.0, &mut rng, DEFAULT_BUDGET).unwrap();
        for j in 1..=3usize {
            for k in 0..=24 {
                let t = k as f64 * 0.25;
                assert_eq!(
                    real.count(j, t) as u64,
                    binom(t.floor() as u64, j as u64),
                    "j={j} t={t}"
                );
            }
        }
    }

    #[test]
    fn first_generation_breakdown() {
        let law = StepLaw::derived(WeightLaw::gem(1.0));
        let mut rng = replicate_stream(4, 2);
        let real = realize_brw(&law, 2, 12.0, &mut rng, DEFAULT_BUDGET).unwrap();
        for t in [3.0, 7.5, 12.0] {
            let b = real.breakdown(2, t);
            assert_eq!(b.iter().sum::<u64>(), real.count(2, t) as u64);
            assert!(real.count(2, t) <= real.count(2, 12.0));
        }
        assert_eq!(real.count(1, 12.0), real.first.len());
    }

    #[test]
    fn budget_and_guards() {
        let law = StepLaw::derived(WeightLaw::gem(1.0));
        let mut rng = replicate_stream(4, 3);
        assert!(matches!(
            count_brw(&law.sampler(), 4, 30.0, &mut rng, 1000),
            Err(Error::BudgetExceeded { .. })
        ));
        assert!(level_of(3.0, 0.2).is_err());
        assert_eq!(level_of(3.0, 0.5).unwrap(), 1);
    }

    #[test]
    fn statistic_is_finite_on_lattice() {
        let law = unit_atoms();
        let ladder = Ladder::build(&law, 0.25, 10.0, 3).unwrap();
        let mut rng = replicate_stream(1, 1);
        let s = theorem31_statistic(&law, 3.0, 9.5, 1.0, &mut rng, &ladder, 1.0, DEFAULT_BUDGET).unwrap();
        assert!(s.is_finite());
        assert!(theorem31_statistic(&law, 3.0, 9.5, 0.1, &mut rng, &ladder, 1.0, DEFAULT_BUDGET).is_err());
    }

    #[test]
    fn degenerate_recursion() {
        let law = unit_atoms();
        let ladder = Ladder::build(&law, 0.005, 3.0, 2).unwrap();
        let r = variance_recursion_check(&law, 2, 2.5, &ladder, 10, 1, DEFAULT_BUDGET).unwrap();
        assert_eq!((r.lhs, r.rhs, r.z), (0.0, 0.0, 0.0));
    }
}
