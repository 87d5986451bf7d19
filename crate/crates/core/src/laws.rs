//! Stick-factor laws `W`, the induced step pair `(xi, eta) = (-ln W, -ln(1-W))`,
//! and the moment constants used by every normalization.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::quad;

/// Law of the stick factor `W` on `(0, 1)`.
type Density<'a> = Box<dyn Fn(f64) -> f64 + 'a>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightLaw {
    Gem {
        theta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Beta {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Atoms {
        atoms: Vec<(f64, f64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

/// Law of a single positive increment, used when `xi` and `eta` are given separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Marginal {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Atoms { atoms: Vec<(f64, f64)> },
}

/// Law of the pair `(xi, eta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StepLaw {
    /// `xi = -ln W`, `eta = -ln(1-W)` from one draw of `W`.
    Derived { weight: WeightLaw },
    /// Independent marginals.
    Independent { xi: Marginal, eta: Marginal },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub mu: f64,
    pub sigma2: f64,
    pub e_eta: f64,
    pub e_xi2: f64,
    pub gamma: f64,
}

impl MomentSet {
    pub fn new(mu: f64, e_xi2: f64, e_eta: f64) -> Self {
        MomentSet {
            mu,
            sigma2: (e_xi2 - mu * mu).max(0.0),
            e_eta,
            e_xi2,
            gamma: e_xi2 / (2.0 * mu * mu) - e_eta / mu,
        }
    }
}

/// Laplace transforms at 1: `(E e^{-xi}, E e^{-eta})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Laplace {
    pub xi: f64,
    pub eta: f64,
}

fn check_atoms(atoms: &[(f64, f64)], open_unit: bool) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::InvalidLaw("empty atom list".into()));
    }
    let mut total = 0.0;
    for &(v, p) in atoms {
        let ok_v = if open_unit {
            v > 0.0 && v < 1.0
        } else {
            v > 0.0 && v.is_finite()
        };
        if !ok_v {
            return Err(Error::InvalidLaw(format!("atom value {v} out of support")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidLaw(format!("atom probability {p} out of (0, 1]")));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidLaw(format!("atom probabilities sum to {total}")));
    }
    Ok(())
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLaw(format!("{name} = {x} must be positive")))
    }
}

fn pick_atom<R: Rng + ?Sized>(atoms: &[(f64, f64)], rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(v, p) in atoms {
        acc += p;
        if u < acc {
            return v;
        }
    }
    atoms[atoms.len() - 1].0
}

impl WeightLaw {
    pub fn gem(theta: f64) -> Self {
        WeightLaw::Gem { theta, label: None }
    }

    pub fn beta(a: f64, b: f64) -> Self {
        WeightLaw::Beta { a, b, label: None }
    }

    pub fn atoms(atoms: Vec<(f64, f64)>) -> Self {
        WeightLaw::Atoms { atoms, label: None }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightLaw::Gem { theta, .. } => positive("theta", *theta),
            WeightLaw::Beta { a, b, .. } => {
                positive("a", *a)?;
                positive("b", *b)
            }
            WeightLaw::Atoms { atoms, .. } => check_atoms(atoms, true),
        }
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self, WeightLaw::Atoms { .. })
    }

    /// Draws `(w, 1 - w)` with both components computed to full relative precision.
    pub fn sample_split<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            WeightLaw::Gem { theta, .. } => loop {
                let e: f64 = Exp1.sample(rng);
                let xi = e / theta;
                let w = (-xi).exp();
                let q = -(-xi).exp_m1();
                if w > 0.0 && q > 0.0 {
                    return (w, q);
                }
            },
            WeightLaw::Beta { a, b, .. } => {
                let ga = Gamma::new(*a, 1.0).expect("validated shape");
                let gb = Gamma::new(*b, 1.0).expect("validated shape");
                loop {
                    let x: f64 = ga.sample(rng);
                    let y: f64 = gb.sample(rng);
                    let s = x + y;
                    if x > 0.0 && y > 0.0 && s.is_finite() {
                        return (x / s, y / s);
                    }
                }
            }
            WeightLaw::Atoms { atoms, .. } => {
                let w = pick_atom(atoms, rng);
                (w, 1.0 - w)
            }
        }
    }

    /// Distribution function of `eta = -ln(1 - W)`.
    pub fn eta_cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let u = -(-y).exp_m1();
        match self {
            WeightLaw::Gem { theta, .. } => u.powf(*theta),
            WeightLaw::Beta { a, b, .. } => beta_reg(*a, *b, u.min(1.0)),
            WeightLaw::Atoms { atoms, .. } => atoms
                .iter()
                .filter(|&&(w, _)| -(-w).ln_1p() <= y)
                .map(|&(_, p)| p)
                .sum(),
        }
    }

    /// Distribution function of `xi = -ln W`.
    pub fn xi_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            WeightLaw::Gem { theta, .. } => -(-theta * x).exp_m1(),
            WeightLaw::Beta { a, b, .. } => beta_reg(*b, *a, (-(-x).exp_m1()).min(1.0)),
            WeightLaw::Atoms { atoms, .. } => atoms.iter().filter(|&&(w, _)| -w.ln() <= x).map(|&(_, p)| p).sum(),
        }
    }

    /// Density of `(xi, eta)` split at `w = 1/2`: on the branch `w <= 1/2` it
    /// is written in `x = xi`, on the branch `w >= 1/2` in `y = eta`.
    fn branch_densities(&self) -> (Density<'_>, Density<'_>) {
        match self {
            WeightLaw::Gem { theta, .. } => {
                let t = *theta;
                (
                    Box::new(move |x: f64| t * (-t * x).exp()),
                    Box::new(move |y: f64| t * (-(-y).exp_m1()).powf(t - 1.0) * (-y).exp()),
                )
            }
            WeightLaw::Beta { a, b, .. } => {
                let (a, b) = (*a, *b);
                let lb = ln_beta(a, b);
                (
                    Box::new(move |x: f64| ((b - 1.0) * (-(-x).exp()).ln_1p() - a * x - lb).exp()),
                    Box::new(move |y: f64| ((a - 1.0) * (-(-y).exp()).ln_1p() - b * y - lb).exp()),
                )
            }
            WeightLaw::Atoms { .. } => unreachable!("atoms have no density"),
        }
    }

    /// `E g(xi, eta)` for the derived pair.
    pub fn expect<G: Fn(f64, f64) -> f64>(&self, g: G) -> f64 {
        match self {
            WeightLaw::Atoms { atoms, .. } => atoms.iter().map(|&(w, p)| p * g(-w.ln(), -(-w).ln_1p())).sum(),
            _ => {
                let (da, db) = self.branch_densities();
                let ln2 = std::f64::consts::LN_2;
                let a = quad::integrate_to_inf(
                    |x| {
                        let eta = -(-(-x).exp()).ln_1p();
                        g(x, eta) * da(x)
                    },
                    ln2,
                    1e-15,
                    1e-13,
                );
                let b = quad::integrate_to_inf(
                    |y| {
                        let xi = -(-(-y).exp()).ln_1p();
                        g(xi, y) * db(y)
                    },
                    ln2,
                    1e-15,
                    1e-13,
                );
                a + b
            }
        }
    }
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal::Exponential { rate } => positive("rate", *rate),
            Marginal::Gamma { shape, rate } => {
                positive("shape", *shape)?;
                positive("rate", *rate)
            }
            Marginal::Atoms { atoms } => check_atoms(atoms, false),
        }
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self, Marginal::Atoms { .. })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            Marginal::Exponential { rate } => -(-rate * x).exp_m1(),
            Marginal::Gamma { shape, rate } => {
                if x == 0.0 {
                    0.0
                } else {
                    gamma_lr(*shape, rate * x)
                }
            }
            Marginal::Atoms { atoms } => atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Exponential { rate } => 1.0 / rate,
            Marginal::Gamma { shape, rate } => shape / rate,
            Marginal::Atoms { atoms } => atoms.iter().map(|&(v, p)| v * p).sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Marginal::Exponential { rate } => 2.0 / (rate * rate),
            Marginal::Gamma { shape, rate } => shape * (shape + 1.0) / (rate * rate),
            Marginal::Atoms { atoms } => atoms.iter().map(|&(v, p)| v * v * p).sum(),
        }
    }

    /// `E e^{-X}`.
    pub fn laplace(&self) -> f64 {
        match self {
            Marginal::Exponential { rate } => rate / (rate + 1.0),
            Marginal::Gamma { shape, rate } => (rate / (rate + 1.0)).powf(*shape),
            Marginal::Atoms { atoms } => atoms.iter().map(|&(v, p)| p * (-v).exp()).sum(),
        }
    }

    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match self {
            Marginal::Atoms { atoms } => Some(atoms),
            _ => None,
        }
    }
}

/// Prepared sampler for a [`Marginal`].
#[derive(Debug, Clone)]
enum MarginalSampler {
    Exponential(f64),
    Gamma(Gamma<f64>),
    Atoms(Vec<(f64, f64)>),
}

impl MarginalSampler {
    fn new(m: &Marginal) -> Self {
        match m {
            Marginal::Exponential { rate } => MarginalSampler::Exponential(*rate),
            Marginal::Gamma { shape, rate } => {
                MarginalSampler::Gamma(Gamma::new(*shape, 1.0 / rate).expect("validated"))
            }
            Marginal::Atoms { atoms } => MarginalSampler::Atoms(atoms.clone()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = match self {
                MarginalSampler::Exponential(rate) => {
                    let e: f64 = Exp1.sample(rng);
                    e / rate
                }
                MarginalSampler::Gamma(g) => g.sample(rng),
                MarginalSampler::Atoms(atoms) => pick_atom(atoms, rng),
            };
            if x > 0.0 {
                return x;
            }
        }
    }
}

/// Prepared sampler for a [`StepLaw`].
#[derive(Debug, Clone)]
pub struct StepSampler {
    inner: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Gem(f64),
    Weight(WeightLaw),
    Pair(MarginalSampler, MarginalSampler),
}

impl StepSampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match &self.inner {
            SamplerKind::Gem(theta) => loop {
                let e: f64 = Exp1.sample(rng);
                let xi = e / theta;
                let q = -(-xi).exp_m1();
                if xi > 0.0 && q > 0.0 {
                    return (xi, -q.ln());
                }
            },
            SamplerKind::Weight(law) => {
                let (w, q) = law.sample_split(rng);
                (-w.ln(), -q.ln())
            }
            SamplerKind::Pair(x, y) => {
                let xi = x.sample(rng);
                let eta = y.sample(rng);
                (xi, eta)
            }
        }
    }
}

impl StepLaw {
    pub fn derived(weight: WeightLaw) -> Self {
        StepLaw::Derived { weight }
    }

    pub fn independent(xi: Marginal, eta: Marginal) -> Self {
        StepLaw::Independent { xi, eta }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StepLaw::Derived { weight } => weight.validate(),
            StepLaw::Independent { xi, eta } => {
                xi.validate()?;
                eta.validate()
            }
        }
    }

    pub fn sampler(&self) -> StepSampler {
        let inner = match self {
            StepLaw::Derived {
                weight: WeightLaw::Gem { theta, .. },
            } => SamplerKind::Gem(*theta),
            StepLaw::Derived { weight } => SamplerKind::Weight(weight.clone()),
            StepLaw::Independent { xi, eta } => SamplerKind::Pair(MarginalSampler::new(xi), MarginalSampler::new(eta)),
        };
        StepSampler { inner }
    }

    pub fn xi_is_lattice(&self) -> bool {
        match self {
            StepLaw::Derived { weight } => weight.is_lattice(),
            StepLaw::Independent { xi, .. } => xi.is_lattice(),
        }
    }

    pub fn eta_is_lattice(&self) -> bool {
        match self {
            StepLaw::Derived { weight } => weight.is_lattice(),
            StepLaw::Independent { eta, .. } => eta.is_lattice(),
        }
    }

    /// Rate of `xi` when it is exponential, which gives `U(t) = 1 + rate * t`.
    pub fn xi_exponential_rate(&self) -> Option<f64> {
        match self {
            StepLaw::Derived {
                weight: WeightLaw::Gem { theta, .. },
            } => Some(*theta),
            StepLaw::Independent {
                xi: Marginal::Exponential { rate },
                ..
            } => Some(*rate),
            _ => None,
        }
    }

    pub fn xi_cdf(&self, x: f64) -> f64 {
        match self {
            StepLaw::Derived { weight } => weight.xi_cdf(x),
            StepLaw::Independent { xi, .. } => xi.cdf(x),
        }
    }

    pub fn eta_cdf(&self, y: f64) -> f64 {
        match self {
            StepLaw::Derived { weight } => weight.eta_cdf(y),
            StepLaw::Independent { eta, .. } => eta.cdf(y),
        }
    }

    /// Atoms of `xi`, as values, when `xi` is discrete.
    pub fn xi_atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            StepLaw::Derived {
                weight: WeightLaw::Atoms { atoms, .. },
            } => Some(atoms.iter().map(|&(w, p)| (-w.ln(), p)).collect()),
            StepLaw::Independent {
                xi: Marginal::Atoms { atoms },
                ..
            } => Some(atoms.clone()),
            _ => None,
        }
    }

    /// Atoms of `eta` when `eta` is discrete.
    pub fn eta_atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            StepLaw::Derived {
                weight: WeightLaw::Atoms { atoms, .. },
            } => Some(atoms.iter().map(|&(w, p)| (-(-w).ln_1p(), p)).collect()),
            StepLaw::Independent {
                eta: Marginal::Atoms { atoms },
                ..
            } => Some(atoms.clone()),
            _ => None,
        }
    }

    pub fn laplace(&self) -> Laplace {
        match self {
            StepLaw::Derived { weight } => Laplace {
                xi: weight.expect(|x, _| (-x).exp()),
                eta: weight.expect(|_, y| (-y).exp()),
            },
            StepLaw::Independent { xi, eta } => Laplace {
                xi: xi.laplace(),
                eta: eta.laplace(),
            },
        }
    }

    /// True when both increments have finite exponential moments of some order.
    pub fn has_exponential_moments(&self) -> bool {
        true
    }
}

pub fn sample_weight<R: Rng + ?Sized>(law: &WeightLaw, rng: &mut R) -> f64 {
    law.sample_split(rng).0
}

pub fn sample_step<R: Rng + ?Sized>(law: &StepLaw, rng: &mut R) -> (f64, f64) {
    law.sampler().sample(rng)
}

/// The step pair generated by a realized stick factor `w`.
pub fn step_from_weight(w: f64) -> (f64, f64) {
    (-w.ln(), -(-w).ln_1p())
}

pub fn compute_moments(law: &StepLaw) -> Result<MomentSet> {
    law.validate()?;
    let (mu, e_xi2, e_eta) = match law {
        StepLaw::Derived { weight } => (
            weight.expect(|x, _| x),
            weight.expect(|x, _| x * x),
            weight.expect(|_, y| y),
        ),
        StepLaw::Independent { xi, eta } => (xi.mean(), xi.second_moment(), eta.mean()),
    };
    for (name, v) in [("E xi", mu), ("E xi^2", e_xi2), ("E eta", e_eta)] {
        if !v.is_finite() {
            return Err(Error::NonIntegrable(name.into()));
        }
    }
    Ok(MomentSet::new(mu, e_xi2, e_eta))
}
