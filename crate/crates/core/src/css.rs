//! Squeezed coherent-state superposition targets and fidelity landscapes.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{CMatrix, CVector, Cutoff, DensityOperator, FockVector, DEFAULT_LEAKAGE};
use crate::gaussian::{dephase_channel, ln_factorial, squeeze_apply, squeeze_matrix, SqueezeParam, DEFAULT_PAD};
use crate::herald::{core_state, herald_pnr, HeraldScenario};

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    /// Parity matching an `n`-photon core state.
    pub fn of(n: usize) -> Self {
        if n % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Quadrature, relative to the direction of α, whose variance is reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SqueezeAxis {
    #[default]
    X,
    P,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CssTarget {
    pub alpha: Complex64,
    pub squeeze_db: f64,
    pub parity: Parity,
    #[serde(default)]
    pub axis: SqueezeAxis,
}

impl CssTarget {
    /// Target with real, non-negative α of the given size `|α|²`.
    pub fn new(alpha_sq: f64, squeeze_db: f64, parity: Parity) -> Result<Self> {
        if !(alpha_sq >= 0.0 && alpha_sq.is_finite()) {
            return Err(Error::param(format!("|alpha|^2 must be finite and >= 0, got {alpha_sq}")));
        }
        let t = CssTarget {
            alpha: Complex64::new(alpha_sq.sqrt(), 0.0),
            squeeze_db,
            parity,
            axis: SqueezeAxis::X,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_axis(mut self, axis: SqueezeAxis) -> Self {
        self.axis = axis;
        self
    }

    pub fn alpha_sq(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.squeeze_db >= 0.0 && self.squeeze_db.is_finite()) {
            return Err(Error::param(format!("squeeze_db must be finite and >= 0, got {}", self.squeeze_db)));
        }
        if !(self.alpha.re.is_finite() && self.alpha.im.is_finite()) {
            return Err(Error::param("alpha must be finite"));
        }
        Ok(())
    }

    fn squeeze_phase(&self) -> f64 {
        let base = 2.0 * self.alpha.arg();
        match self.axis {
            SqueezeAxis::X => base,
            SqueezeAxis::P => base + std::f64::consts::PI,
        }
    }
}

/// Normalized `(|α⟩ ± |−α⟩)` on `dim` basis states, without squeezing.
fn cat_amplitudes(alpha: Complex64, parity: Parity, dim: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    let a2 = alpha.norm_sqr();
    if a2 == 0.0 {
        v[match parity {
            Parity::Even => 0,
            Parity::Odd => 1.min(dim - 1),
        }] = Complex64::new(1.0, 0.0);
        return v;
    }
    // 2(1 ± e^{−2|α|²}), written to stay accurate for small α in the odd case.
    let norm_sq = match parity {
        Parity::Even => 2.0 * (1.0 + (-2.0 * a2).exp()),
        Parity::Odd => -2.0 * (-2.0 * a2).exp_m1(),
    };
    let ln_norm = 0.5 * norm_sq.ln();
    let ln_r = a2.sqrt().ln();
    let theta = alpha.arg();
    let start = match parity {
        Parity::Even => 0,
        Parity::Odd => 1,
    };
    for k in (start..dim).step_by(2) {
        let ln_mag = -a2 / 2.0 + k as f64 * ln_r - 0.5 * ln_factorial(k) + 2f64.ln() - ln_norm;
        v[k] = Complex64::from_polar(ln_mag.exp(), k as f64 * theta);
    }
    v
}

/// Tail mass a vector carries beyond index `n_max`, counting norm that the
/// working space already lost.
fn tail_beyond(v: &CVector, n_max: usize) -> f64 {
    let kept: f64 = v.iter().take(n_max + 1).map(|c| c.norm_sqr()).sum();
    (1.0 - kept).max(0.0)
}

fn squeezed_css_vector(target: &CssTarget, cutoff: Cutoff, squeeze: Option<&CMatrix>) -> Result<CVector> {
    target.validate()?;
    let work = cutoff.dim() + 2 * DEFAULT_PAD;
    let cat = cat_amplitudes(target.alpha, target.parity, work);
    let cat_tail = tail_beyond(&cat, work - 1 - DEFAULT_PAD / 2);
    let xi = SqueezeParam::from_db(target.squeeze_db)?.xi();
    let v = match squeeze {
        Some(s) => s * &cat,
        None if xi == 0.0 => cat,
        None => squeeze_apply(xi, target.squeeze_phase(), &cat),
    };
    let tail = tail_beyond(&v, cutoff.n_max()).max(cat_tail);
    if tail > DEFAULT_LEAKAGE {
        let suggested = (cutoff.n_max()..work)
            .find(|&n| tail_beyond(&v, n) <= DEFAULT_LEAKAGE)
            .unwrap_or(2 * cutoff.n_max() + 1);
        return Err(Error::CutoffTooSmall {
            n_max: cutoff.n_max(),
            population: tail,
            bound: DEFAULT_LEAKAGE,
            suggested: suggested.max(cutoff.n_max() + 1),
        });
    }
    let cropped = v.rows(0, cutoff.dim()).into_owned();
    let norm = cropped.norm();
    Ok(cropped / Complex64::new(norm, 0.0))
}

/// `Ŝ(ξ′)(|α⟩ ± |−α⟩)`, normalized, with the squeeze axis tied to arg α.
pub fn squeezed_css(target: &CssTarget, cutoff: Cutoff) -> Result<FockVector> {
    let v = squeezed_css_vector(target, cutoff, None)?;
    FockVector::from_amplitudes(cutoff, 1, v.iter().copied().collect())
}

fn axis_values(min: f64, max: f64, step: f64) -> Vec<f64> {
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| min + i as f64 * step).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub alpha_sq_min: f64,
    pub alpha_sq_max: f64,
    pub alpha_sq_step: f64,
    pub db_min: f64,
    pub db_max: f64,
    pub db_step: f64,
    #[serde(default)]
    pub axis: SqueezeAxis,
    /// Cutoff at which targets are built before projection onto the state.
    #[serde(default = "default_target_cutoff")]
    pub target_cutoff: usize,
    #[serde(default = "default_true")]
    pub refine: bool,
}

fn default_target_cutoff() -> usize {
    70
}

fn default_true() -> bool {
    true
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            alpha_sq_min: 0.2,
            alpha_sq_max: 6.0,
            alpha_sq_step: 0.05,
            db_min: 0.0,
            db_max: 8.0,
            db_step: 0.1,
            axis: SqueezeAxis::X,
            target_cutoff: default_target_cutoff(),
            refine: true,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.alpha_sq_min,
            self.alpha_sq_max,
            self.alpha_sq_step,
            self.db_min,
            self.db_max,
            self.db_step,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("grid bounds must be finite"));
        }
        if self.alpha_sq_min < 0.0 || self.db_min < 0.0 {
            return Err(Error::param("grid minima must be >= 0"));
        }
        if self.alpha_sq_max < self.alpha_sq_min || self.db_max < self.db_min {
            return Err(Error::param("grid is empty"));
        }
        if self.alpha_sq_step <= 0.0 || self.db_step <= 0.0 {
            return Err(Error::param("grid steps must be positive"));
        }
        if self.target_cutoff < 2 {
            return Err(Error::param("target_cutoff must be at least 2"));
        }
        Ok(())
    }

    pub fn alpha_sq_values(&self) -> Vec<f64> {
        axis_values(self.alpha_sq_min, self.alpha_sq_max, self.alpha_sq_step)
    }

    pub fn db_values(&self) -> Vec<f64> {
        axis_values(self.db_min, self.db_max, self.db_step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub alpha_sq: f64,
    pub db: f64,
    pub fidelity: f64,
}

/// Targets for every grid cell, built once and reused across states.
pub struct TargetBank {
    grid: GridSpec,
    parity: Parity,
    cutoff: Cutoff,
    alpha_sq: Vec<f64>,
    db: Vec<f64>,
    targets: Vec<CVector>,
}

impl TargetBank {
    pub fn new(grid: &GridSpec, parity: Parity) -> Result<Self> {
        grid.validate()?;
        let cutoff = Cutoff::new(grid.target_cutoff)?;
        let alpha_sq = grid.alpha_sq_values();
        let db = grid.db_values();
        let work = cutoff.dim() + 2 * DEFAULT_PAD;
        let squeezers: Vec<CMatrix> = db
            .par_iter()
            .map(|&d| {
                let xi = SqueezeParam::from_db(d)?.xi();
                let phase = match grid.axis {
                    SqueezeAxis::X => 0.0,
                    SqueezeAxis::P => std::f64::consts::PI,
                };
                Ok(squeeze_matrix(xi, phase, work, 0))
            })
            .collect::<Result<_>>()?;
        let targets: Vec<CVector> = alpha_sq
            .par_iter()
            .flat_map_iter(|&a| {
                db.iter().zip(&squeezers).map(move |(&d, s)| {
                    let t = CssTarget::new(a, d, parity)?.with_axis(grid.axis);
                    squeezed_css_vector(&t, cutoff, Some(s))
                })
            })
            .collect::<Result<_>>()?;
        Ok(TargetBank {
            grid: grid.clone(),
            parity,
            cutoff,
            alpha_sq,
            db,
            targets,
        })
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn target_at(&self, alpha_sq: f64, db: f64) -> Result<CVector> {
        let t = CssTarget::new(alpha_sq, db, self.parity)?.with_axis(self.grid.axis);
        squeezed_css_vector(&t, self.cutoff, None)
    }

    /// Fidelity landscape of `rho` over the bank's grid.
    pub fn landscape(&self, rho: &DensityOperator) -> Result<FidelityLandscape> {
        if rho.modes() != 1 {
            return Err(Error::ModeMismatch { expected: 1, found: rho.modes() });
        }
        if rho.dim() > self.cutoff.dim() {
            return Err(Error::CutoffMismatch {
                left: rho.cutoff().n_max(),
                right: self.cutoff.n_max(),
            });
        }
        let values: Vec<f64> = self
            .targets
            .par_iter()
            .map(|t| rho.expectation_in(t.as_slice()).clamp(0.0, 1.0))
            .collect();
        let nd = self.db.len();
        let mut best = 0;
        for (k, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = k;
            }
        }
        let grid_best = Optimum {
            alpha_sq: self.alpha_sq[best / nd],
            db: self.db[best % nd],
            fidelity: values[best],
        };
        let argmax = if self.grid.refine {
            self.refine(rho, grid_best)?
        } else {
            grid_best
        };
        Ok(FidelityLandscape {
            alpha_sq_grid: self.alpha_sq.clone(),
            db_grid: self.db.clone(),
            values,
            parity: self.parity,
            axis: self.grid.axis,
            grid_argmax: grid_best,
            argmax,
        })
    }

    fn refine(&self, rho: &DensityOperator, start: Optimum) -> Result<Optimum> {
        let g = &self.grid;
        let a_lo = (start.alpha_sq - g.alpha_sq_step).max(g.alpha_sq_min);
        let a_hi = (start.alpha_sq + g.alpha_sq_step).min(g.alpha_sq_max);
        let d_lo = (start.db - g.db_step).max(g.db_min);
        let d_hi = (start.db + g.db_step).min(g.db_max);
        let eval = |a: f64, d: f64| -> Result<f64> { Ok(rho.expectation_in(self.target_at(a, d)?.as_slice()).clamp(0.0, 1.0)) };
        let mut best = start;
        for _ in 0..6 {
            let before = best.fidelity;
            let (a, f) = golden_max(|a| eval(a, best.db), a_lo, a_hi, 1e-5 * g.alpha_sq_step.max(1e-3))?;
            if f > best.fidelity {
                best = Optimum { alpha_sq: a, db: best.db, fidelity: f };
            }
            let (d, f) = golden_max(|d| eval(best.alpha_sq, d), d_lo, d_hi, 1e-5 * g.db_step.max(1e-3))?;
            if f > best.fidelity {
                best = Optimum { alpha_sq: best.alpha_sq, db: d, fidelity: f };
            }
            if best.fidelity - before < 1e-9 {
                break;
            }
        }
        Ok(best)
    }
}

/// Golden-section search for a maximum of `f` on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    if hi - lo <= tol {
        let m = 0.5 * (lo + hi);
        return Ok((m, f(m)?));
    }
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityLandscape {
    pub alpha_sq_grid: Vec<f64>,
    pub db_grid: Vec<f64>,
    /// Row-major: one row per |α|² value, one column per dB value.
    pub values: Vec<f64>,
    pub parity: Parity,
    pub axis: SqueezeAxis,
    pub grid_argmax: Optimum,
    pub argmax: Optimum,
}

#[derive(Serialize)]
struct LandscapeSidecar<'a> {
    parity: Parity,
    axis: SqueezeAxis,
    alpha_sq: AxisJson,
    db: AxisJson,
    grid_argmax: &'a Optimum,
    argmax: &'a Optimum,
}

#[derive(Serialize)]
struct AxisJson {
    min: f64,
    max: f64,
    count: usize,
}

impl AxisJson {
    fn of(v: &[f64]) -> Self {
        AxisJson {
            min: v[0],
            max: v[v.len() - 1],
            count: v.len(),
        }
    }
}

impl FidelityLandscape {
    pub fn value(&self, i_alpha: usize, j_db: usize) -> f64 {
        self.values[i_alpha * self.db_grid.len() + j_db]
    }

    pub fn max_value(&self) -> f64 {
        self.grid_argmax.fidelity
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha_sq,db,fidelity\n");
        for (i, a) in self.alpha_sq_grid.iter().enumerate() {
            for (j, d) in self.db_grid.iter().enumerate() {
                let _ = writeln!(out, "{a},{d},{}", self.value(i, j));
            }
        }
        out
    }

    /// Parses a landscape CSV back into `(alpha_sq, db, fidelity)` rows.
    pub fn parse_csv(text: &str) -> Result<Vec<(f64, f64, f64)>> {
        let mut lines = text.lines();
        if lines.next() != Some("alpha_sq,db,fidelity") {
            return Err(Error::Parse("missing landscape header".into()));
        }
        lines
            .map(|l| {
                let f: Vec<f64> = l
                    .split(',')
                    .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{l}: {e}"))))
                    .collect::<Result<_>>()?;
                match f[..] {
                    [a, d, v] => Ok((a, d, v)),
                    _ => Err(Error::Parse(format!("expected 3 fields: {l}"))),
                }
            })
            .collect()
    }

    pub fn sidecar_json(&self) -> Result<String> {
        let s = LandscapeSidecar {
            parity: self.parity,
            axis: self.axis,
            alpha_sq: AxisJson::of(&self.alpha_sq_grid),
            db: AxisJson::of(&self.db_grid),
            grid_argmax: &self.grid_argmax,
            argmax: &self.argmax,
        };
        Ok(serde_json::to_string_pretty(&s)?)
    }
}

/// Fidelity of `state` with squeezed cats over `grid`, maximized.
pub fn best_fit_css(state: &DensityOperator, parity: Parity, grid: &GridSpec) -> Result<FidelityLandscape> {
    TargetBank::new(grid, parity)?.landscape(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ratio: f64,
    pub fidelity_star: f64,
    pub alpha_sq_star: f64,
    pub db_star: f64,
    /// Weight of `|n−2⟩` in the core state (the vacuum for n = 2).
    pub w_vacuum: f64,
    pub w_nphoton: f64,
}

/// Best-fit fidelity of `core_state(n, ratio·λ, λ)` for each ratio ε/λ.
pub fn protocol_fidelity_curve(n: usize, ratio_grid: &[f64], lambda: f64, grid: &GridSpec) -> Result<Vec<CurvePoint>> {
    let bank = TargetBank::new(grid, Parity::of(n))?;
    protocol_curve_with_bank(n, ratio_grid, lambda, &bank)
}

pub fn protocol_curve_with_bank(n: usize, ratio_grid: &[f64], lambda: f64, bank: &TargetBank) -> Result<Vec<CurvePoint>> {
    if n < 2 {
        return Err(Error::param("core states need n >= 2"));
    }
    if !(lambda > 0.0) {
        return Err(Error::param("lambda must be positive"));
    }
    let cutoff = Cutoff::new(n + 1)?;
    ratio_grid
        .iter()
        .map(|&ratio| {
            if !(ratio >= 0.0 && ratio.is_finite()) {
                return Err(Error::param(format!("ratio must be finite and >= 0, got {ratio}")));
            }
            let core = core_state(n, ratio * lambda, lambda, cutoff)?;
            let land = bank.landscape(&core.vector.to_density())?;
            Ok(CurvePoint {
                ratio,
                fidelity_star: land.argmax.fidelity,
                alpha_sq_star: land.argmax.alpha_sq,
                db_star: land.argmax.db,
                w_vacuum: core.vector.amplitude(n - 2).norm_sqr(),
                w_nphoton: core.vector.amplitude(n).norm_sqr(),
            })
        })
        .collect()
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("ratio,fidelity_star,alpha_sq_star,db_star,w_vacuum,w_nphoton\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.ratio, p.fidelity_star, p.alpha_sq_star, p.db_star, p.w_vacuum, p.w_nphoton
        );
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    if lines.next() != Some("ratio,fidelity_star,alpha_sq_star,db_star,w_vacuum,w_nphoton") {
        return Err(Error::Parse("missing curve header".into()));
    }
    lines
        .map(|l| {
            let f: Vec<f64> = l
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{l}: {e}"))))
                .collect::<Result<_>>()?;
            match f[..] {
                [ratio, fidelity_star, alpha_sq_star, db_star, w_vacuum, w_nphoton] => Ok(CurvePoint {
                    ratio,
                    fidelity_star,
                    alpha_sq_star,
                    db_star,
                    w_vacuum,
                    w_nphoton,
                }),
                _ => Err(Error::Parse(format!("expected 6 fields: {l}"))),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub alpha_sq: f64,
    pub db: f64,
    pub fidelity: f64,
}

/// Pump parameter λ for which the lossless PNR-heralded state from `base`
/// best-fits a cat of size `alpha_sq`. Searches λ in `[lo, hi]` by bisection.
pub fn infer_lambda(base: &HeraldScenario, alpha_sq: f64, bank: &TargetBank, lo: f64, hi: f64) -> Result<LambdaFit> {
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::param("lambda bracket must satisfy 0 < lo < hi < 1"));
    }
    let fit = |lam: f64| -> Result<LambdaFit> {
        let mut s = HeraldScenario::new(lam, base.mixing, base.n_herald, base.cutoff)?;
        s.bs_phase = base.bs_phase;
        let out = herald_pnr(&s)?;
        let o = bank.landscape(&out.state)?.argmax;
        Ok(LambdaFit {
            lambda: lam,
            alpha_sq: o.alpha_sq,
            db: o.db,
            fidelity: o.fidelity,
        })
    };
    let (mut a, mut b) = (fit(lo)?, fit(hi)?);
    if (a.alpha_sq - alpha_sq) * (b.alpha_sq - alpha_sq) > 0.0 {
        return Err(Error::param(format!(
            "best-fit size {alpha_sq} not bracketed: {:.3} at lambda {lo}, {:.3} at lambda {hi}",
            a.alpha_sq, b.alpha_sq
        )));
    }
    for _ in 0..60 {
        if b.lambda - a.lambda < 1e-6 {
            break;
        }
        let m = fit(0.5 * (a.lambda + b.lambda))?;
        if (m.alpha_sq - alpha_sq) * (a.alpha_sq - alpha_sq) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(if (a.alpha_sq - alpha_sq).abs() <= (b.alpha_sq - alpha_sq).abs() { a } else { b })
}

/// Gaussian phase-noise width σ_φ that brings the best-fit fidelity of
/// `state` down to `target_fidelity`. Bisection on `[0, max_sigma]`.
pub fn fit_dephasing(state: &DensityOperator, bank: &TargetBank, target_fidelity: f64, max_sigma: f64) -> Result<(f64, Optimum)> {
    let f = |sigma: f64| -> Result<Optimum> { Ok(bank.landscape(&dephase_channel(state, sigma)?)?.argmax) };
    let f0 = f(0.0)?;
    if f0.fidelity <= target_fidelity {
        return Ok((0.0, f0));
    }
    let fmax = f(max_sigma)?;
    if fmax.fidelity > target_fidelity {
        return Err(Error::param(format!(
            "fidelity {:.4} at sigma {max_sigma} still above {target_fidelity}",
            fmax.fidelity
        )));
    }
    let (mut lo, mut hi) = (0.0, max_sigma);
    let mut best = fmax;
    while hi - lo > 1e-4 {
        let m = 0.5 * (lo + hi);
        let o = f(m)?;
        if o.fidelity > target_fidelity {
            lo = m;
        } else {
            hi = m;
            best = o;
        }
    }
    Ok((hi, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_grid() -> GridSpec {
        GridSpec {
            alpha_sq_min: 2.0,
            alpha_sq_max: 4.0,
            alpha_sq_step: 0.1,
            db_min: 2.0,
            db_max: 6.0,
            db_step: 0.2,
            target_cutoff: 45,
            ..GridSpec::default()
        }
    }

    #[test]
    fn zero_alpha_limits() {
        let c = Cutoff::new(20).unwrap();
        let even = squeezed_css(&CssTarget::new(0.0, 0.0, Parity::Even).unwrap(), c).unwrap();
        assert_relative_eq!(even.amplitude(0).re, 1.0, epsilon = 1e-14);
        let odd = squeezed_css(&CssTarget::new(0.0, 0.0, Parity::Odd).unwrap(), c).unwrap();
        assert_relative_eq!(odd.amplitude(1).re, 1.0, epsilon = 1e-14);
        let tiny = squeezed_css(&CssTarget::new(1e-12, 0.0, Parity::Odd).unwrap(), c).unwrap();
        assert_relative_eq!(tiny.amplitude(1).norm_sqr(), 1.0, epsilon = 1e-10);
        let sq = squeezed_css(&CssTarget::new(0.0, 3.0, Parity::Even).unwrap(), c).unwrap();
        let xi = SqueezeParam::from_db(3.0).unwrap().xi();
        assert_relative_eq!(sq.amplitude(0).norm_sqr(), 1.0 / xi.cosh(), epsilon = 1e-9);
    }

    #[test]
    fn even_cat_populations_match_closed_form() {
        let a2: f64 = 3.0;
        let v = squeezed_css(&CssTarget::new(a2, 0.0, Parity::Even).unwrap(), Cutoff::new(30).unwrap()).unwrap();
        let p = v.populations();
        for (k, pk) in p.iter().enumerate() {
            if k % 2 == 1 {
                assert!(*pk < 1e-12);
            }
        }
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        for k in [0usize, 2, 4] {
            let expected = (-a2).exp() * a2.powi(k as i32) * 4.0 / (fact[k] * 2.0 * (1.0 + (-2.0 * a2).exp()));
            assert_relative_eq!(p[k], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn odd_support_only_odd() {
        let v = squeezed_css(&CssTarget::new(2.0, 3.0, Parity::Odd).unwrap(), Cutoff::new(30).unwrap()).unwrap();
        for (k, p) in v.populations().iter().enumerate() {
            if k % 2 == 0 {
                assert!(*p < 1e-20);
            }
        }
        assert_relative_eq!(v.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn complex_alpha_is_a_rotation() {
        let c = Cutoff::new(30).unwrap();
        let real = squeezed_css(&CssTarget::new(2.0, 3.0, Parity::Even).unwrap(), c).unwrap();
        let mut t = CssTarget::new(2.0, 3.0, Parity::Even).unwrap();
        let phi = 0.7;
        t.alpha *= Complex64::from_polar(1.0, phi);
        let rot = squeezed_css(&t, c).unwrap();
        for n in 0..=30 {
            let expected = real.amplitude(n) * Complex64::from_polar(1.0, n as f64 * phi);
            assert!((rot.amplitude(n) - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn cutoff_too_small_is_reported() {
        let err = squeezed_css(&CssTarget::new(5.0, 0.0, Parity::Even).unwrap(), Cutoff::new(8).unwrap()).unwrap_err();
        match err {
            Error::CutoffTooSmall { suggested, .. } => assert!(suggested > 8),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn self_fidelity_is_one() {
        let t = CssTarget::new(3.0, 4.0, Parity::Even).unwrap();
        let v = squeezed_css(&t, Cutoff::new(30).unwrap()).unwrap();
        let land = best_fit_css(&v.to_density(), Parity::Even, &small_grid()).unwrap();
        assert!(land.argmax.fidelity > 1.0 - 1e-4);
        assert_relative_eq!(land.argmax.alpha_sq, 3.0, epsilon = 0.1);
        assert_relative_eq!(land.argmax.db, 4.0, epsilon = 0.2);
        assert!(land.argmax.fidelity >= land.grid_argmax.fidelity);
    }

    #[test]
    fn parity_selection_rule() {
        let core = core_state(2, 0.02, 0.05, Cutoff::new(3).unwrap()).unwrap();
        let land = best_fit_css(&core.vector.to_density(), Parity::Odd, &small_grid()).unwrap();
        assert!(land.values.iter().all(|&v| v <= 1e-10));
    }

    #[test]
    fn tie_break_prefers_smallest_size_then_squeezing() {
        let grid = GridSpec {
            alpha_sq_min: 1.0,
            alpha_sq_max: 2.0,
            alpha_sq_step: 0.5,
            db_min: 0.0,
            db_max: 1.0,
            db_step: 0.5,
            target_cutoff: 20,
            refine: false,
            ..GridSpec::default()
        };
        // Odd targets have no overlap with the vacuum, so every cell ties at 0.
        let vac = FockVector::fock(0, Cutoff::new(5).unwrap()).unwrap().to_density();
        let land = best_fit_css(&vac, Parity::Odd, &grid).unwrap();
        assert_eq!((land.grid_argmax.alpha_sq, land.grid_argmax.db), (1.0, 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let grid = GridSpec {
            alpha_sq_max: 1.0,
            db_max: 1.0,
            ..GridSpec::default()
        };
        let vac = FockVector::fock(0, Cutoff::new(5).unwrap()).unwrap().to_density();
        let land = best_fit_css(&vac, Parity::Even, &grid).unwrap();
        let rows = FidelityLandscape::parse_csv(&land.to_csv()).unwrap();
        assert_eq!(rows.len(), land.values.len());
        for ((a, d, v), k) in rows.iter().zip(0..) {
            assert_eq!(*a, land.alpha_sq_grid[k / land.db_grid.len()]);
            assert_eq!(*d, land.db_grid[k % land.db_grid.len()]);
            assert_eq!(*v, land.values[k]);
        }
        let json: serde_json::Value = serde_json::from_str(&land.sidecar_json().unwrap()).unwrap();
        assert_eq!(json["alpha_sq"]["count"], 17);
    }

    #[test]
    fn ratio_zero_reduces_to_fock_fit() {
        let grid = small_grid();
        let curve = protocol_fidelity_curve(2, &[0.0], 0.1, &grid).unwrap();
        let fock = best_fit_css(&FockVector::fock(2, Cutoff::new(3).unwrap()).unwrap().to_density(), Parity::Even, &grid).unwrap();
        assert_eq!(curve[0].fidelity_star, fock.argmax.fidelity);
        assert_eq!(curve[0].w_vacuum, 0.0);
        assert_eq!(curve[0].w_nphoton, 1.0);
    }

    #[test]
    fn curve_weights_match_core_state() {
        let curve = protocol_fidelity_curve(2, &[0.5], 0.1, &small_grid()).unwrap();
        // ε√2 : λ with ε = 0.05, λ = 0.1
        let a = 0.05 * 2f64.sqrt();
        let b = 0.1;
        assert_relative_eq!(curve[0].w_vacuum, a * a / (a * a + b * b), epsilon = 1e-12);
        assert_relative_eq!(curve[0].w_vacuum + curve[0].w_nphoton, 1.0, epsilon = 1e-12);
        let back = curve_from_csv(&curve_to_csv(&curve)).unwrap();
        assert_eq!(back, curve);
    }

    #[test]
    fn dephasing_lowers_fidelity() {
        let t = CssTarget::new(3.0, 4.0, Parity::Even).unwrap();
        let v = squeezed_css(&t, Cutoff::new(25).unwrap()).unwrap().to_density();
        let bank = TargetBank::new(&small_grid(), Parity::Even).unwrap();
        let (sigma, o) = fit_dephasing(&v, &bank, 0.8, 2.0).unwrap();
        assert!(sigma > 0.0);
        assert!(o.fidelity <= 0.8 && o.fidelity > 0.79);
    }

    #[test]
    fn grid_validation() {
        let bad = GridSpec {
            alpha_sq_step: 0.0,
            ..GridSpec::default()
        };
        assert!(best_fit_css(&FockVector::fock(0, Cutoff::new(2).unwrap()).unwrap().to_density(), Parity::Even, &bad).is_err());
        assert_eq!(GridSpec::default().alpha_sq_values().len(), 117);
        assert_eq!(GridSpec::default().db_values().len(), 81);
    }
}
