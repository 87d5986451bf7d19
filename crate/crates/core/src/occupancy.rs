//! Nested balls-in-boxes cascade driven by stick-breaking weights.
//!
//! Each box splits into children with weights `W_1...W_{r-1}(1 - W_r)` of its
//! own weight. Balls are allocated by the sequential rule: with `remaining`
//! balls left after children `1..r-1`, child `r` receives
//! `Binomial(remaining, 1 - W_r)` of them.
//!
//! Every node owns a key derived from its parent's key and its child index;
//! sticks and ball splits come from two separate streams of that key. The
//! realized weights are therefore the same whether a cascade is run for
//! occupancy only, for threshold counts, or for both.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::WeightLaw;
use crate::renewal::Ladder;
use crate::rng::{derive, stream_from_key, Stream};

const MAX_ROUNDS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub n: u64,
    pub j_max: usize,
    pub law: WeightLaw,
    pub seed: u64,
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::DomainError("ball count must be at least 1".into()));
        }
        if self.j_max == 0 {
            return Err(Error::DomainError("j_max must be at least 1".into()));
        }
        self.law.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Height {
    Reached(usize),
    ExceedsJmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyProfile {
    pub n: u64,
    /// `K_n(j)` for `j = 1..=j_max`.
    pub counts: Vec<u64>,
    pub height: Height,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoProfile {
    /// `ln x` for the threshold `1/x`.
    pub log_threshold: f64,
    /// `rho_j(x)` for `j = 1..=j_max`.
    pub counts: Vec<u64>,
}

/// Occupancy and threshold counts from one cascade, plus the first-level
/// positions `T_r = -ln P(r)` of boxes with `P(r) >= 1/x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledProfile {
    pub n: u64,
    pub log_threshold: f64,
    pub counts: Vec<u64>,
    pub rho: Vec<u64>,
    pub first_level: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Child {
    pub index: u64,
    pub balls: u64,
    pub stick: f64,
}

/// Number of `m` balls that land in a child hit with probability `q = 1 - w`.
fn split<R: Rng + ?Sized>(m: u64, w: f64, q: f64, rng: &mut R) -> u64 {
    if q <= w {
        Binomial::new(m, q).expect("probability in [0, 1]").sample(rng)
    } else {
        m - Binomial::new(m, w).expect("probability in [0, 1]").sample(rng)
    }
}

/// Children of a box holding `m` balls, in stick order, omitting empty ones.
pub fn allocate_box<R: Rng + ?Sized>(m: u64, law: &WeightLaw, rng: &mut R) -> Result<Vec<Child>> {
    if m == 0 {
        return Err(Error::DomainError("box must hold at least one ball".into()));
    }
    let mut out = Vec::new();
    let mut remaining = m;
    let mut r = 0u64;
    while remaining > 0 {
        r += 1;
        if r > MAX_ROUNDS {
            return Err(Error::CascadeStall { rounds: MAX_ROUNDS });
        }
        let (w, q) = law.sample_split(rng);
        let k = split(remaining, w, q, rng);
        if k > 0 {
            out.push(Child {
                index: r,
                balls: k,
                stick: w,
            });
            remaining -= k;
        }
    }
    Ok(out)
}

struct Node {
    key: u64,
    depth: usize,
    balls: u64,
    weight: f64,
}

#[derive(Default)]
struct Tally {
    counts: Vec<u64>,
    rho: Vec<u64>,
    first_level: Vec<f64>,
    trace: Option<Vec<f64>>,
}

/// Depth-first cascade to depth `j_max`. With `threshold = Some(1/x)` the
/// nodes of weight at least `1/x` are expanded and counted too; since weights
/// only shrink along a path, no lighter node can have a qualifying descendant.
fn cascade(cfg: &SchemeConfig, threshold: Option<f64>, tally: &mut Tally) -> Result<()> {
    cfg.validate()?;
    let j_max = cfg.j_max;
    tally.counts = vec![0; j_max];
    tally.rho = vec![0; j_max];
    let mut stack = vec![Node {
        key: cfg.seed,
        depth: 0,
        balls: cfg.n,
        weight: 1.0,
    }];
    while let Some(node) = stack.pop() {
        let wants_rho = threshold.is_some_and(|thr| node.weight >= thr);
        if node.balls == 1 && !wants_rho {
            // a lone ball occupies exactly one box on every deeper level
            for c in &mut tally.counts[node.depth..] {
                *c += 1;
            }
            continue;
        }
        let mut sticks = stream_from_key(derive(node.key, 0));
        let mut balls: Stream = stream_from_key(derive(node.key, 1));
        let mut remaining = node.balls;
        let mut resid = node.weight;
        let mut r = 0u64;
        let level = node.depth + 1;
        loop {
            let more_rho = threshold.is_some_and(|thr| resid >= thr);
            if remaining == 0 && !more_rho {
                break;
            }
            r += 1;
            if r > MAX_ROUNDS {
                return Err(Error::CascadeStall { rounds: MAX_ROUNDS });
            }
            let (w, q) = cfg.law.sample_split(&mut sticks);
            let weight = resid * q;
            resid *= w;
            if node.depth == 0 {
                if let Some(t) = tally.trace.as_mut() {
                    t.push(weight);
                }
            }
            let k = if remaining > 0 {
                split(remaining, w, q, &mut balls)
            } else {
                0
            };
            remaining -= k;
            let passes = threshold.is_some_and(|thr| weight >= thr);
            if k > 0 {
                tally.counts[level - 1] += 1;
            }
            if passes {
                tally.rho[level - 1] += 1;
                if level == 1 {
                    tally.first_level.push(-weight.ln());
                }
            }
            if level < j_max && (k > 0 || passes) {
                stack.push(Node {
                    key: derive(node.key, r + 1),
                    depth: level,
                    balls: k,
                    weight,
                });
            }
        }
    }
    Ok(())
}

fn height_of(n: u64, counts: &[u64]) -> Height {
    counts
        .iter()
        .position(|&k| k == n)
        .map_or(Height::ExceedsJmax, |i| Height::Reached(i + 1))
}

pub fn simulate_occupancy(cfg: &SchemeConfig) -> Result<OccupancyProfile> {
    let mut tally = Tally::default();
    cascade(cfg, None, &mut tally)?;
    let height = height_of(cfg.n, &tally.counts);
    Ok(OccupancyProfile {
        n: cfg.n,
        counts: tally.counts,
        height,
    })
}

/// `rho_j(x) = #{|u| = j : P(u) >= 1/x}` on the cascade of `cfg`.
pub fn count_rho(cfg: &SchemeConfig, x: f64) -> Result<RhoProfile> {
    if !(x >= 1.0) || !x.is_finite() {
        return Err(Error::DomainError(format!("threshold {x} below 1")));
    }
    let c = simulate_coupled(cfg, x)?;
    Ok(RhoProfile {
        log_threshold: c.log_threshold,
        counts: c.rho,
    })
}

/// Occupancy counts and `rho_j(x)` on the same realized weights.
pub fn simulate_coupled(cfg: &SchemeConfig, x: f64) -> Result<CoupledProfile> {
    if !(x >= 1.0) || !x.is_finite() {
        return Err(Error::DomainError(format!("threshold {x} below 1")));
    }
    let mut tally = Tally::default();
    cascade(cfg, Some(1.0 / x), &mut tally)?;
    Ok(CoupledProfile {
        n: cfg.n,
        log_threshold: x.ln(),
        counts: tally.counts,
        rho: tally.rho,
        first_level: tally.first_level,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YDecomp {
    pub j: usize,
    pub k: u64,
    pub rho: u64,
    /// `sum_r V_{j-1}(ln n - T_r) 1{T_r <= ln n}`.
    pub conditional: f64,
    /// `V_j(ln n)`.
    pub center: f64,
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
}

impl YDecomp {
    /// Split of `K_n(j) - V_j(ln n)` on a coupled profile with threshold `1/n`.
    pub fn from_coupled(p: &CoupledProfile, j: usize, ladder: &Ladder) -> Result<YDecomp> {
        if j == 0 || j > p.counts.len() {
            return Err(Error::DomainError(format!("level {j} outside 1..={}", p.counts.len())));
        }
        let t = p.log_threshold;
        if t > ladder.t_max() * (1.0 + 1e-12) {
            return Err(Error::GridTooShort {
                t,
                t_max: ladder.t_max(),
            });
        }
        let mut conditional = 0.0;
        for &tr in &p.first_level {
            conditional += ladder.eval(j - 1, (t - tr).max(0.0))?;
        }
        let center = ladder.eval(j, t)?;
        let k = p.counts[j - 1];
        let rho = p.rho[j - 1];
        Ok(YDecomp {
            j,
            k,
            rho,
            conditional,
            center,
            y1: k as f64 - rho as f64,
            y2: rho as f64 - conditional,
            y3: conditional - center,
        })
    }
}

pub fn decompose_y(cfg: &SchemeConfig, j: usize, ladder: &Ladder) -> Result<YDecomp> {
    let t = (cfg.n as f64).ln();
    if t > ladder.t_max() * (1.0 + 1e-12) {
        return Err(Error::GridTooShort {
            t,
            t_max: ladder.t_max(),
        });
    }
    let p = simulate_coupled(cfg, cfg.n as f64)?;
    YDecomp::from_coupled(&p, j, ladder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::StepLaw;
    use crate::rng::{derive, replicate_stream};

    fn cfg(n: u64, j_max: usize, law: WeightLaw, seed: u64) -> SchemeConfig {
        SchemeConfig { n, j_max, law, seed }
    }

    #[test]
    fn single_ball() {
        let mut rng = replicate_stream(1, 1);
        let c = allocate_box(1, &WeightLaw::gem(1.0), &mut rng).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].balls, 1);
        let p = simulate_occupancy(&cfg(1, 6, WeightLaw::gem(1.0), 9)).unwrap();
        assert_eq!(p.counts, vec![1; 6]);
        assert_eq!(p.height, Height::Reached(1));
        assert!(allocate_box(0, &WeightLaw::gem(1.0), &mut rng).is_err());
    }

    #[test]
    fn both_balls_in_first_child() {
        let law = WeightLaw::atoms(vec![(0.5, 1.0)]);
        let mut rng = replicate_stream(5, 0);
        let runs = 200_000;
        let hits = (0..runs)
            .filter(|_| {
                let c = allocate_box(2, &law, &mut rng).unwrap();
                c.len() == 1 && c[0].index == 1
            })
            .count();
        let p = hits as f64 / runs as f64;
        let se = (0.25f64 * 0.75 / runs as f64).sqrt();
        assert!((p - 0.25).abs() < 4.0 * se, "{p}");
    }

    #[test]
    fn conservation_and_monotonicity() {
        let law = WeightLaw::gem(1.0);
        for s in 0..50 {
            let p = simulate_occupancy(&cfg(1000, 8, law.clone(), derive(3, s))).unwrap();
            assert!(p.counts.windows(2).all(|w| w[0] <= w[1]));
            assert!(p.counts.iter().all(|&k| (1..=1000).contains(&k)));
            if let Height::Reached(tau) = p.height {
                assert!(p.counts[tau - 1..].iter().all(|&k| k == 1000));
            }
        }
    }

    #[test]
    fn deterministic_sticks_threshold_count() {
        let law = WeightLaw::atoms(vec![(0.5, 1.0)]);
        let r = count_rho(&cfg(1, 3, law, 0), 8.0).unwrap();
        assert_eq!(r.counts[0], 3);
        // level 2: weights 2^{-a-b} >= 1/8 with a, b >= 1, i.e. a + b <= 3
        assert_eq!(r.counts[1], 3);
        assert_eq!(r.counts[2], 1);
    }

    #[test]
    fn threshold_one_is_empty() {
        let r = count_rho(&cfg(10, 3, WeightLaw::gem(1.0), 4), 1.0).unwrap();
        assert_eq!(r.counts, vec![0, 0, 0]);
        assert!(count_rho(&cfg(10, 3, WeightLaw::gem(1.0), 4), 0.5).is_err());
    }

    #[test]
    fn weights_agree_across_modes() {
        let c = cfg(5000, 4, WeightLaw::gem(1.0), 77);
        let mut a = Tally {
            trace: Some(Vec::new()),
            ..Tally::default()
        };
        cascade(&c, None, &mut a).unwrap();
        let mut b = Tally {
            trace: Some(Vec::new()),
            ..Tally::default()
        };
        cascade(&c, Some(1.0 / 5000.0), &mut b).unwrap();
        let ta = a.trace.unwrap();
        let tb = b.trace.unwrap();
        let common = ta.len().min(tb.len());
        assert!(common > 3);
        assert_eq!(ta[..common], tb[..common]);
        assert_eq!(a.counts, b.counts);
        let occ = simulate_occupancy(&c).unwrap();
        let cp = simulate_coupled(&c, 5000.0).unwrap();
        assert_eq!(occ.counts, cp.counts);
    }

    #[test]
    fn decomposition_telescopes() {
        let law = WeightLaw::gem(1.0);
        let ladder = Ladder::build(&StepLaw::derived(law.clone()), 1e-2, 12.0, 3).unwrap();
        for s in 0..20 {
            let c = cfg(50_000, 3, law.clone(), derive(11, s));
            for j in 1..=3 {
                let y = decompose_y(&c, j, &ladder).unwrap();
                let total = y.k as f64 - y.center;
                assert!((y.y1 + y.y2 + y.y3 - total).abs() < 1e-9 * (1.0 + total.abs()));
            }
        }
        let one = decompose_y(&cfg(1, 1, law.clone(), 1), 1, &ladder).unwrap();
        assert_eq!((one.y1, one.y2, one.y3), (1.0, 0.0, 0.0));
        let short = Ladder::build(&StepLaw::derived(law.clone()), 1e-2, 5.0, 1).unwrap();
        assert!(matches!(
            decompose_y(&cfg(1000, 1, law, 1), 1, &short),
            Err(Error::GridTooShort { .. })
        ));
    }

    #[test]
    fn reproducible() {
        let c = cfg(123_456, 5, WeightLaw::beta(2.0, 1.5), 2024);
        assert_eq!(simulate_occupancy(&c).unwrap(), simulate_occupancy(&c).unwrap());
        assert_eq!(simulate_coupled(&c, 1e4).unwrap(), simulate_coupled(&c, 1e4).unwrap());
    }
}
