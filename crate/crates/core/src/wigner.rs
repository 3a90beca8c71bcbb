//! Wigner functions and homodyne quadrature densities, with
//! `x = (a + a†)/√2` so the vacuum has variance 1/2 and `W(0,0) = 1/π`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::DensityOperator;
use crate::gaussian::ln_factorial;

/// Probability mass allowed outside a Wigner grid.
pub const COVERAGE_BOUND: f64 = 1e-4;

/// 8-point Gauss-Legendre nodes and weights on [−1, 1].
pub(crate) const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Number-basis wavefunctions `ψ_0(x) … ψ_{dim−1}(x)` by upward recurrence.
/// The Gaussian factor is applied last, with a running rescale so large
/// orders do not overflow before it.
pub fn hermite_functions(x: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if dim == 0 {
        return out;
    }
    let mut ln_scale = -0.5 * x * x;
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut raw = Vec::with_capacity(dim);
    let mut scales = Vec::with_capacity(dim);
    raw.push(cur);
    scales.push(ln_scale);
    for n in 0..dim - 1 {
        let next = (2.0 / (n + 1) as f64).sqrt() * x * cur - (n as f64 / (n + 1) as f64).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            prev /= 1e150;
            cur /= 1e150;
            ln_scale += 150.0 * 10f64.ln();
        }
        raw.push(cur);
        scales.push(ln_scale);
    }
    for n in 0..dim {
        out[n] = raw[n] * scales[n].exp();
    }
    out
}

/// Homodyne density `p(x|φ) = Σ ρ_mn ψ_m ψ_n e^{i(n−m)φ}` at each `x`.
pub fn quadrature_pdf(rho: &DensityOperator, phase: f64, xs: &[f64]) -> Result<Vec<f64>> {
    if rho.modes() != 1 {
        return Err(Error::ModeMismatch { expected: 1, found: rho.modes() });
    }
    let d = rho.dim();
    let m = rho.matrix();
    let rot: Vec<Complex64> = (0..d).map(|n| Complex64::from_polar(1.0, n as f64 * phase)).collect();
    Ok(xs
        .par_iter()
        .map(|&x| {
            let psi = hermite_functions(x, d);
            // Σ_mn ρ_mn (ψ_m e^{−imφ}) (ψ_n e^{inφ})
            let u: Vec<Complex64> = (0..d).map(|n| rot[n] * psi[n]).collect();
            let mut acc = 0.0;
            for a in 0..d {
                let mut row = Complex64::new(0.0, 0.0);
                for b in 0..d {
                    row += m[(a, b)] * u[b];
                }
                acc += (u[a].conj() * row).re;
            }
            acc
        })
        .collect())
}

/// Probability that `x_φ` falls inside `[lo, hi]`.
pub fn quadrature_mass(rho: &DensityOperator, phase: f64, lo: f64, hi: f64) -> Result<f64> {
    let panels = (((hi - lo) / 0.05).ceil() as usize).max(1);
    let h = (hi - lo) / panels as f64;
    let mut xs = Vec::with_capacity(panels * 8);
    let mut ws = Vec::with_capacity(panels * 8);
    for k in 0..panels {
        let c = lo + (k as f64 + 0.5) * h;
        for (t, w) in GL8 {
            xs.push(c + 0.5 * h * t);
            ws.push(0.5 * h * w);
        }
    }
    let p = quadrature_pdf(rho, phase, &xs)?;
    Ok(p.iter().zip(&ws).map(|(p, w)| p * w).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    /// Row-major: one row per x value.
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerMin {
    pub value: f64,
    pub x: f64,
    pub p: f64,
}

impl WignerGrid {
    pub fn at(&self, ix: usize, ip: usize) -> f64 {
        self.values[ix * self.p_axis.len() + ip]
    }

    pub fn dx(&self) -> f64 {
        step(&self.x_axis)
    }

    pub fn dp(&self) -> f64 {
        step(&self.p_axis)
    }

    /// Riemann sum `Σ W Δx Δp`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx() * self.dp()
    }

    /// Smallest value; the first one in row-major order wins ties.
    pub fn min(&self) -> WignerMin {
        let mut k = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[k] {
                k = i;
            }
        }
        let np = self.p_axis.len();
        WignerMin {
            value: self.values[k],
            x: self.x_axis[k / np],
            p: self.p_axis[k % np],
        }
    }

    /// `∫ W dp` at each x.
    pub fn x_marginal(&self) -> Vec<f64> {
        let np = self.p_axis.len();
        let dp = self.dp();
        (0..self.x_axis.len())
            .map(|i| self.values[i * np..(i + 1) * np].iter().sum::<f64>() * dp)
            .collect()
    }

    /// `∫ W dx` at each p.
    pub fn p_marginal(&self) -> Vec<f64> {
        let np = self.p_axis.len();
        let dx = self.dx();
        (0..np)
            .map(|j| (0..self.x_axis.len()).map(|i| self.values[i * np + j]).sum::<f64>() * dx)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,p,w\n");
        for (i, x) in self.x_axis.iter().enumerate() {
            for (j, p) in self.p_axis.iter().enumerate() {
                let _ = writeln!(out, "{x},{p},{}", self.at(i, j));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("x,p,w") {
            return Err(Error::Parse("missing wigner header".into()));
        }
        let mut xs: Vec<f64> = Vec::new();
        let mut ps: Vec<f64> = Vec::new();
        let mut values = Vec::new();
        for l in lines {
            let f: Vec<f64> = l
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{l}: {e}"))))
                .collect::<Result<_>>()?;
            let [x, p, w] = f[..] else {
                return Err(Error::Parse(format!("expected 3 fields: {l}")));
            };
            if xs.last() != Some(&x) {
                xs.push(x);
            }
            if xs.len() == 1 {
                ps.push(p);
            }
            values.push(w);
        }
        if xs.len() * ps.len() != values.len() {
            return Err(Error::Parse("wigner CSV is not a full grid".into()));
        }
        Ok(WignerGrid {
            x_axis: xs,
            p_axis: ps,
            values,
        })
    }

    pub fn sidecar_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Axis {
            min: f64,
            max: f64,
            count: usize,
        }
        #[derive(Serialize)]
        struct Sidecar {
            x: Axis,
            p: Axis,
            min: WignerMin,
            integral: f64,
        }
        let axis = |v: &[f64]| Axis {
            min: v[0],
            max: v[v.len() - 1],
            count: v.len(),
        };
        Ok(serde_json::to_string_pretty(&Sidecar {
            x: axis(&self.x_axis),
            p: axis(&self.p_axis),
            min: self.min(),
            integral: self.integral(),
        })?)
    }
}

fn step(axis: &[f64]) -> f64 {
    if axis.len() < 2 {
        1.0
    } else {
        (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
    }
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::param(format!("{name} axis needs at least two points")));
    }
    let h = step(axis);
    if !(h > 0.0) || axis.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::param(format!("{name} axis must be uniform and increasing")));
    }
    Ok(())
}

/// `W` at one phase-space point from the Fock-basis kernel
/// `W_{|m⟩⟨n|} = ((−1)ⁿ/π) √(n!/m!) (√2 (x − ip))^{m−n} e^{−s} L_n^{(m−n)}(2s)` for `m ≥ n`,
/// `s = x² + p²`.
fn wigner_point(rho: &DensityOperator, x: f64, p: f64, ln_fact: &[f64]) -> f64 {
    let d = rho.dim();
    let m = rho.matrix();
    let s = x * x + p * p;
    let t = 2.0 * s;
    let z = Complex64::new(x, -p) * 2f64.sqrt();
    let mut acc = 0.0;
    let mut zk = Complex64::new(1.0, 0.0);
    for k in 0..d {
        // L_n^{(k)}(t) for n = 0 .. d−1−k
        let mut l_prev = 1.0;
        let mut l_cur = 1.0 + k as f64 - t;
        for n in 0..d - k {
            let l = match n {
                0 => 1.0,
                1 => l_cur,
                _ => {
                    let j = (n - 1) as f64;
                    let next = ((2.0 * j + 1.0 + k as f64 - t) * l_cur - (j + k as f64) * l_prev) / (j + 1.0);
                    l_prev = l_cur;
                    l_cur = next;
                    next
                }
            };
            let mm = n + k;
            let mag = (0.5 * (ln_fact[n] - ln_fact[mm]) - s).exp();
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let kernel = zk * (sign * mag * l / PI);
            if k == 0 {
                acc += m[(mm, n)].re * kernel.re;
            } else {
                acc += 2.0 * (m[(mm, n)] * kernel).re;
            }
        }
        zk *= z;
    }
    acc
}

/// Wigner function of a single-mode state on the given axes. Fails if
/// either quadrature marginal puts more than [`COVERAGE_BOUND`] outside.
pub fn wigner(rho: &DensityOperator, x_axis: &[f64], p_axis: &[f64]) -> Result<WignerGrid> {
    if rho.modes() != 1 {
        return Err(Error::ModeMismatch { expected: 1, found: rho.modes() });
    }
    check_axis("x", x_axis)?;
    check_axis("p", p_axis)?;
    let outside_x = 1.0 - quadrature_mass(rho, 0.0, x_axis[0], x_axis[x_axis.len() - 1])?;
    let outside_p = 1.0 - quadrature_mass(rho, PI / 2.0, p_axis[0], p_axis[p_axis.len() - 1])?;
    let outside = outside_x.max(outside_p);
    if outside > COVERAGE_BOUND {
        return Err(Error::InsufficientCoverage(outside));
    }
    let ln_fact: Vec<f64> = (0..rho.dim()).map(ln_factorial).collect();
    let values: Vec<f64> = x_axis
        .par_iter()
        .flat_map_iter(|&x| p_axis.iter().map(move |&p| (x, p)).collect::<Vec<_>>())
        .map(|(x, p)| wigner_point(rho, x, p, &ln_fact))
        .collect();
    Ok(WignerGrid {
        x_axis: x_axis.to_vec(),
        p_axis: p_axis.to_vec(),
        values,
    })
}

/// Wigner function at a single point, without a coverage check.
pub fn wigner_at(rho: &DensityOperator, x: f64, p: f64) -> Result<f64> {
    if rho.modes() != 1 {
        return Err(Error::ModeMismatch { expected: 1, found: rho.modes() });
    }
    let ln_fact: Vec<f64> = (0..rho.dim()).map(ln_factorial).collect();
    Ok(wigner_point(rho, x, p, &ln_fact))
}
