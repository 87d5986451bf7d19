use serde::Serialize;
use statrs::function::factorial::ln_factorial;

use super::grid::{convolve_stieltjes, node_count, GridFunction};
use crate::error::{Error, Result};
use crate::laws::StepLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UMethod {
    /// `U(t) = 1 + rate * t` for exponential `xi`.
    ClosedForm,
    /// Discretized renewal equation `U = 1 + F * U`.
    RenewalEquation,
    /// Exact recursion over lattice atoms.
    Lattice,
}

fn lattice_offsets(atoms: &[(f64, f64)], h: f64) -> Result<Vec<(usize, f64)>> {
    atoms
        .iter()
        .map(|&(a, p)| {
            let r = a / h;
            let k = r.round();
            if k < 1.0 || (r - k).abs() > 1e-9 * r.max(1.0) {
                Err(Error::NonCommensurableGrid { span: a, step: h })
            } else {
                Ok((k as usize, p))
            }
        })
        .collect()
}

fn lattice_cdf(offsets: &[(usize, f64)], h: f64, t_max: f64) -> GridFunction {
    let n = node_count(h, t_max);
    let mut mass = vec![0.0; n];
    for &(k, p) in offsets {
        if k < n {
            mass[k] += p;
        }
    }
    let mut acc = 0.0;
    let values = mass
        .into_iter()
        .map(|m| {
            acc += m;
            acc
        })
        .collect();
    GridFunction::new(h, values, true)
}

fn check_step(h: f64, t_max: f64) -> Result<()> {
    if h > 0.0 && t_max > 0.0 && h.is_finite() && t_max.is_finite() && h <= t_max {
        Ok(())
    } else {
        Err(Error::DomainError(format!("grid step {h} and end {t_max}")))
    }
}

/// Renewal function `U(t) = sum_{i >= 0} P{S_i <= t}` of the `xi`-walk.
pub fn build_u(law: &StepLaw, h: f64, t_max: f64) -> Result<(GridFunction, UMethod)> {
    check_step(h, t_max)?;
    if let Some(rate) = law.xi_exponential_rate() {
        let u = GridFunction::from_fn(h, t_max, false, |t| 1.0 + rate * t);
        return Ok((u, UMethod::ClosedForm));
    }
    let n = node_count(h, t_max);
    if let Some(atoms) = law.xi_atoms() {
        let offsets = lattice_offsets(&atoms, h)?;
        let mut u = vec![0.0; n];
        for i in 0..n {
            let mut v = 1.0;
            for &(k, p) in &offsets {
                if k <= i {
                    v += p * u[i - k];
                }
            }
            u[i] = v;
        }
        return Ok((GridFunction::new(h, u, true), UMethod::Lattice));
    }
    // U = 1 + int U(t - y) dF(y) with the midpoint rule; U[i] appears on both
    // sides through the first cell and is solved for explicitly.
    let f: Vec<f64> = (0..n).map(|i| law.xi_cdf(i as f64 * h)).collect();
    let df: Vec<f64> = (0..n).map(|i| if i == 0 { f[0] } else { f[i] - f[i - 1] }).collect();
    let mut w = vec![0.0; n];
    w[0] = if n > 1 { 0.5 * df[1] } else { 0.0 };
    for d in 1..n {
        let next = if d + 1 < n { df[d + 1] } else { 0.0 };
        w[d] = 0.5 * (df[d] + next);
    }
    let denom = 1.0 - w[0] - f[0];
    let mut acc = vec![0.0; n];
    let mut u = vec![0.0; n];
    for i in 0..n {
        u[i] = (1.0 + acc[i]) / if i == 0 { 1.0 - f[0] } else { denom };
        let ui = u[i];
        if i == 0 {
            // the node at 0 is only reached through the last cell
            for (a, d) in acc[1..].iter_mut().zip(&df[1..]) {
                *a += 0.5 * d * ui;
            }
        } else {
            for (a, wd) in acc[i + 1..].iter_mut().zip(&w[1..n - i]) {
                *a += wd * ui;
            }
        }
    }
    Ok((GridFunction::new(h, u, false), UMethod::RenewalEquation))
}

/// Distribution function `G` of `eta`.
pub fn build_g(law: &StepLaw, h: f64, t_max: f64) -> Result<GridFunction> {
    check_step(h, t_max)?;
    if let Some(atoms) = law.eta_atoms() {
        let offsets = lattice_offsets(&atoms, h)?;
        return Ok(lattice_cdf(&offsets, h, t_max));
    }
    Ok(GridFunction::from_fn(h, t_max, false, |t| law.eta_cdf(t)))
}

/// `V = U * G`.
pub fn build_v(u: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    convolve_stieltjes(u, g)
}

/// Refuses `(j, t_max)` with `t_max^j / j! > 1e300`.
pub fn overflow_guard(j: usize, t_max: f64) -> Result<()> {
    if j as f64 * t_max.ln() - ln_factorial(j as u64) > 300.0 * std::f64::consts::LN_10 {
        Err(Error::OverflowRisk { j, t_max })
    } else {
        Ok(())
    }
}

/// `j`-fold convolution power of `V`.
pub fn build_vj(v: &GridFunction, j: usize) -> Result<GridFunction> {
    if j == 0 {
        return Err(Error::DomainError("power must be at least 1".into()));
    }
    overflow_guard(j, v.t_max())?;
    let mut acc = v.clone();
    for _ in 1..j {
        acc = convolve_stieltjes(&acc, v)?;
    }
    Ok(acc)
}

/// `U`, `G`, `V` and the powers `V_1, ..., V_{j_max}` on one grid.
#[derive(Debug, Clone, Serialize)]
pub struct Ladder {
    pub u: GridFunction,
    pub g: GridFunction,
    pub u_method: UMethod,
    powers: Vec<GridFunction>,
}

impl Ladder {
    pub fn build(law: &StepLaw, h: f64, t_max: f64, j_max: usize) -> Result<Ladder> {
        law.validate()?;
        if j_max == 0 {
            return Err(Error::DomainError("j_max must be at least 1".into()));
        }
        let (u, u_method) = build_u(law, h, t_max)?;
        overflow_guard(j_max, u.t_max())?;
        let g = build_g(law, h, t_max)?;
        let v = build_v(&u, &g)?;
        let mut powers = vec![v];
        for _ in 1..j_max {
            let next = convolve_stieltjes(powers.last().unwrap(), &powers[0])?;
            powers.push(next);
        }
        Ok(Ladder { u, g, u_method, powers })
    }

    pub fn v(&self) -> &GridFunction {
        &self.powers[0]
    }

    /// `V_k` for `1 <= k <= j_max`.
    pub fn vj(&self, k: usize) -> Option<&GridFunction> {
        if k == 0 {
            None
        } else {
            self.powers.get(k - 1)
        }
    }

    pub fn j_max(&self) -> usize {
        self.powers.len()
    }

    pub fn step(&self) -> f64 {
        self.u.step()
    }

    pub fn t_max(&self) -> f64 {
        self.u.t_max()
    }

    /// `V_k(s)` with `V_0 = 1` on `[0, inf)` and every `V_k` zero on `(-inf, 0)`.
    pub fn eval(&self, k: usize, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Ok(0.0);
        }
        if k == 0 {
            return Ok(1.0);
        }
        match self.vj(k) {
            Some(f) => f.eval(s),
            None => Err(Error::DomainError(format!("level {k} beyond j_max {}", self.j_max()))),
        }
    }
}

/// `E rho_j(n) = V_j(ln n)` together with an interpolation error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Centering {
    pub value: f64,
    pub interp_error: f64,
}

pub fn centering(n: f64, j: usize, ladder: &Ladder) -> Result<Centering> {
    if !(n >= 1.0) {
        return Err(Error::DomainError(format!("ball count {n} below 1")));
    }
    let t = n.ln();
    let value = ladder.eval(j, t)?;
    let f = ladder.vj(j).unwrap();
    let i = ((t / f.step()).floor() as usize).min(f.len() - 1);
    let interp_error = if f.is_lattice() {
        0.0
    } else {
        f.step() * f.local_slope(i)
    };
    Ok(Centering { value, interp_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{Marginal, WeightLaw};

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

    #[test]
    fn exponential_u_is_closed_form() {
        let (u, m) = build_u(&gem1(), 1e-3, 50.0).unwrap();
        assert_eq!(m, UMethod::ClosedForm);
        assert_eq!(u.jump_at_zero(), 1.0);
        assert!((u.eval(50.0).unwrap() - 51.0).abs() < 1e-12);
    }

    #[test]
    fn renewal_equation_reproduces_poisson() {
        // gamma(1, 1) is exponential but takes the generic path
        let law = StepLaw::independent(
            Marginal::Gamma { shape: 1.0, rate: 1.0 },
            Marginal::Exponential { rate: 1.0 },
        );
        let (u, m) = build_u(&law, 1e-3, 20.0).unwrap();
        assert_eq!(m, UMethod::RenewalEquation);
        for i in (0..u.len()).step_by(97) {
            let t = u.node(i);
            assert!(
                (u.values()[i] - 1.0 - t).abs() < 1e-7 * (1.0 + t),
                "t={t} {}",
                u.values()[i]
            );
        }
    }

    #[test]
    fn renewal_equation_gamma2() {
        // U(t) = 3/4 + t/2 + e^{-2t}/4 for Gamma(2, 1) increments
        let law = StepLaw::independent(
            Marginal::Gamma { shape: 2.0, rate: 1.0 },
            Marginal::Exponential { rate: 1.0 },
        );
        let (u, _) = build_u(&law, 1e-3, 20.0).unwrap();
        for i in (0..u.len()).step_by(101) {
            let t = u.node(i);
            let exact = 0.75 + 0.5 * t + 0.25 * (-2.0 * t).exp();
            assert!((u.values()[i] - exact).abs() < 1e-7 * (1.0 + t), "t={t}");
        }
    }

    #[test]
    fn lattice_u() {
        let (u, m) = build_u(&unit_atoms(), 0.25, 10.0).unwrap();
        assert_eq!(m, UMethod::Lattice);
        for i in 0..u.len() {
            let t = u.node(i);
            assert_eq!(u.values()[i], t.floor() + 1.0);
        }
        assert_eq!(u.eval(2.9).unwrap(), 3.0);
    }

    #[test]
    fn non_commensurable() {
        let law = StepLaw::derived(WeightLaw::atoms(vec![(0.5, 1.0)]));
        assert!(matches!(
            build_u(&law, 1e-3, 5.0),
            Err(Error::NonCommensurableGrid { .. })
        ));
    }

    #[test]
    fn gem1_v_is_identity_map() {
        let l = Ladder::build(&gem1(), 1e-3, 20.0, 2).unwrap();
        assert_eq!(l.v().jump_at_zero(), 0.0);
        for i in (0..l.v().len()).step_by(37) {
            let t = l.v().node(i);
            assert!((l.v().values()[i] - t).abs() < 1e-6);
            // V_2(t) = t^2/2 when V(t) = t
            let v2 = l.vj(2).unwrap().values()[i];
            assert!((v2 - 0.5 * t * t).abs() < 1e-4, "t={t} {v2}");
        }
    }

    #[test]
    fn lattice_powers_are_binomials() {
        let l = Ladder::build(&unit_atoms(), 0.5, 8.0, 3).unwrap();
        for j in 1..=3usize {
            for i in 0..l.v().len() {
                let n = l.v().node(i).floor() as u64;
                let mut c = 1.0;
                for r in 0..j as u64 {
                    c *= n.saturating_sub(r) as f64 / (r + 1) as f64;
                }
                assert_eq!(l.vj(j).unwrap().values()[i], c.round(), "j={j} i={i}");
            }
        }
    }

    #[test]
    fn ladder_eval_conventions() {
        let l = Ladder::build(&gem1(), 1e-2, 5.0, 2).unwrap();
        assert_eq!(l.eval(0, 0.0).unwrap(), 1.0);
        assert_eq!(l.eval(0, -0.1).unwrap(), 0.0);
        assert_eq!(l.eval(2, -0.1).unwrap(), 0.0);
        assert!(l.eval(1, 6.0).is_err());
        assert!(l.eval(3, 1.0).is_err());
    }

    #[test]
    fn overflow() {
        assert!(overflow_guard(8, 50.0).is_ok());
        assert!(matches!(overflow_guard(400, 1000.0), Err(Error::OverflowRisk { .. })));
    }

    #[test]
    fn centering_values() {
        let l = Ladder::build(&gem1(), 1e-3, 5.0, 1).unwrap();
        let c = centering(2f64.exp(), 1, &l).unwrap();
        assert!((c.value - 2.0).abs() < 1e-6);
        assert!(c.interp_error <= 2e-3);
        assert_eq!(centering(1.0, 1, &l).unwrap().value, 0.0);
        assert!(matches!(centering(1e3, 1, &l), Err(Error::GridTooShort { .. })));
    }
}
