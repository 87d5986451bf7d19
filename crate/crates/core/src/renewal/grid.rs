use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nondecreasing function sampled on `0, h, 2h, ..., t_max`.
///
/// Lattice functions are right-continuous steps with all jumps on nodes and
/// are evaluated as such between nodes; the others interpolate linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    step: f64,
    values: Vec<f64>,
    lattice: bool,
}

/// Number of nodes needed to cover `[0, t_max]` with step `h`.
pub fn node_count(h: f64, t_max: f64) -> usize {
    (t_max / h - 1e-9).ceil() as usize + 1
}

impl GridFunction {
    pub fn new(step: f64, values: Vec<f64>, lattice: bool) -> Self {
        assert!(step > 0.0 && !values.is_empty());
        GridFunction { step, values, lattice }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(step: f64, t_max: f64, lattice: bool, f: F) -> Self {
        let n = node_count(step, t_max);
        let values = (0..n).map(|i| f(i as f64 * step)).collect();
        GridFunction::new(step, values, lattice)
    }

    /// Unit mass at 0.
    pub fn unit_jump(step: f64, t_max: f64) -> Self {
        GridFunction::new(step, vec![1.0; node_count(step, t_max)], true)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t_max(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jump_at_zero(&self) -> f64 {
        self.values[0]
    }

    pub fn is_lattice(&self) -> bool {
        self.lattice
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    /// Mass of `((i-1)h, ih]`, with the mass at 0 for `i = 0`.
    pub fn increment(&self, i: usize) -> f64 {
        if i == 0 {
            self.values[0]
        } else {
            self.values[i] - self.values[i - 1]
        }
    }

    /// Node index of `t` when `t` sits on a node.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let r = t / self.step;
        let k = r.round();
        if k >= 0.0 && (r - k).abs() < 1e-9 * r.max(1.0) && (k as usize) < self.values.len() {
            Some(k as usize)
        } else {
            None
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Ok(0.0);
        }
        let t_max = self.t_max();
        if t > t_max * (1.0 + 1e-12) {
            return Err(Error::GridTooShort { t, t_max });
        }
        let r = t / self.step;
        let k = r.round();
        if (r - k).abs() < 1e-9 * r.max(1.0) {
            return Ok(self.values[(k as usize).min(self.values.len() - 1)]);
        }
        let i = (r.floor() as usize).min(self.values.len() - 1);
        if self.lattice || i + 1 >= self.values.len() {
            return Ok(self.values[i]);
        }
        let frac = r - i as f64;
        Ok(self.values[i] + frac * (self.values[i + 1] - self.values[i]))
    }

    /// Largest one-sided difference quotient around node `i`.
    pub fn local_slope(&self, i: usize) -> f64 {
        let n = self.values.len();
        let left = if i > 0 {
            self.values[i] - self.values[i - 1]
        } else {
            0.0
        };
        let right = if i + 1 < n {
            self.values[i + 1] - self.values[i]
        } else {
            0.0
        };
        left.abs().max(right.abs()) / self.step
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }

    /// Restriction to `[0, t_max]`.
    pub fn truncate(&self, t_max: f64) -> GridFunction {
        let n = node_count(self.step, t_max).min(self.values.len());
        GridFunction::new(self.step, self.values[..n].to_vec(), self.lattice)
    }
}

fn same_grid(a: &GridFunction, b: &GridFunction) -> bool {
    a.values.len() == b.values.len() && (a.step - b.step).abs() <= 1e-12 * a.step
}

/// `(f * k)(t) = int_[0,t] f(t - y) dk(y)` on the common grid.
///
/// The increment of `k` over `((m-1)h, mh]` is paired with `f` at the cell
/// midpoint, i.e. the mean of two adjacent nodes. If either factor is a
/// lattice the node value is used instead, which is exact for steps with
/// jumps on nodes. Both rules are symmetric in `f` and `k`.
pub fn convolve_stieltjes(f: &GridFunction, k: &GridFunction) -> Result<GridFunction> {
    if !same_grid(f, k) {
        return Err(Error::GridMismatch);
    }
    let n = f.len();
    let node_rule = f.lattice || k.lattice;
    let g: Vec<f64> = if node_rule {
        f.values.clone()
    } else {
        (0..n)
            .map(|m| {
                if m + 1 < n {
                    0.5 * (f.values[m] + f.values[m + 1])
                } else {
                    f.values[m]
                }
            })
            .collect()
    };
    let k0 = k.values[0];
    let mut out: Vec<f64> = f.values.iter().map(|v| v * k0).collect();
    for m in 1..n {
        let d = k.values[m] - k.values[m - 1];
        if d == 0.0 {
            continue;
        }
        for (o, s) in out[m..].iter_mut().zip(&g[..n - m]) {
            *o += d * s;
        }
    }
    Ok(GridFunction::new(f.step, out, f.lattice && k.lattice))
}

/// `int_[0, t_i] phi(t_i - y) dk(y)` at node `i`, with `phi` evaluated at
/// cell midpoints for continuous `k` and at nodes for lattice `k`.
pub fn stieltjes_at<P: Fn(f64) -> f64>(k: &GridFunction, i: usize, phi: P) -> f64 {
    let h = k.step;
    let t = i as f64 * h;
    let mut acc = k.values[0] * phi(t);
    for m in 1..=i {
        let d = k.values[m] - k.values[m - 1];
        if d == 0.0 {
            continue;
        }
        let y = if k.lattice { m as f64 * h } else { (m as f64 - 0.5) * h };
        acc += d * phi(t - y);
    }
    acc
}
