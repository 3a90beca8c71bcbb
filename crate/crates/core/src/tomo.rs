//! Homodyne sampling and binned maximum-likelihood reconstruction.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{CMatrix, Cutoff, DensityOperator, C0};
use crate::gaussian::adjoint_loss;
use crate::wigner::{hermite_functions, quadrature_pdf, GL8};

/// Spacing of the inverse-CDF grid used for sampling.
pub const SAMPLING_STEP: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSample {
    pub phase: f64,
    pub value: f64,
}

/// `n` phases evenly spaced in `[0, π)`.
pub fn uniform_phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * PI / n as f64).collect()
}

struct Sampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl Sampler {
    fn new(rho: &DensityOperator, phase: f64) -> Result<Self> {
        let half = (2.0 * rho.cutoff().n_max() as f64 + 1.0).sqrt() + 6.0;
        let n = (2.0 * half / SAMPLING_STEP).ceil() as usize + 1;
        let xs: Vec<f64> = (0..n).map(|i| -half + i as f64 * SAMPLING_STEP).collect();
        let pdf = quadrature_pdf(rho, phase, &xs)?;
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in pdf.windows(2) {
            acc += 0.5 * (w[0].max(0.0) + w[1].max(0.0)) * SAMPLING_STEP;
            cdf.push(acc);
        }
        Ok(Sampler { xs, cdf })
    }

    fn draw(&self, u: f64) -> f64 {
        let target = u * self.cdf[self.cdf.len() - 1];
        let k = self.cdf.partition_point(|&c| c < target).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.xs[k - 1] + t * SAMPLING_STEP
    }
}

/// Draws `n_samples` quadrature values, assigning phases round-robin.
/// Each phase has its own ChaCha stream, so output depends only on `seed`.
pub fn sample_homodyne(rho: &DensityOperator, phases: &[f64], n_samples: usize, seed: u64) -> Result<Vec<QuadratureSample>> {
    if rho.modes() != 1 {
        return Err(Error::ModeMismatch { expected: 1, found: rho.modes() });
    }
    if phases.is_empty() {
        return Err(Error::param("phase set is empty"));
    }
    if n_samples == 0 {
        return Err(Error::param("n_samples must be at least 1"));
    }
    if phases.iter().any(|p| !p.is_finite()) {
        return Err(Error::param("phases must be finite"));
    }
    let np = phases.len();
    let per_phase: Vec<Vec<f64>> = phases
        .par_iter()
        .enumerate()
        .map(|(j, &phase)| {
            let count = n_samples / np + usize::from(j < n_samples % np);
            let sampler = Sampler::new(rho, phase)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            Ok((0..count).map(|_| sampler.draw(rng.random::<f64>())).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..n_samples)
        .map(|i| QuadratureSample {
            phase: phases[i % np],
            value: per_phase[i % np][i / np],
        })
        .collect())
}

pub fn samples_to_csv(samples: &[QuadratureSample]) -> String {
    let mut out = String::from("phase_rad,quadrature\n");
    for s in samples {
        let _ = writeln!(out, "{},{}", s.phase, s.value);
    }
    out
}

pub fn samples_from_csv(text: &str) -> Result<Vec<QuadratureSample>> {
    let mut lines = text.lines();
    if lines.next() != Some("phase_rad,quadrature") {
        return Err(Error::Parse("missing sample header".into()));
    }
    lines
        .map(|l| {
            let (a, b) = l.split_once(',').ok_or_else(|| Error::Parse(format!("expected 2 fields: {l}")))?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{l}: {e}")));
            let (phase, value) = (parse(a)?, parse(b)?);
            if !(phase.is_finite() && value.is_finite()) {
                return Err(Error::Parse(format!("non-finite sample: {l}")));
            }
            Ok(QuadratureSample { phase, value })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleConfig {
    pub cutoff: Cutoff,
    /// Detection efficiency folded into the POVM; below one the estimate
    /// refers to the state before detection loss.
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default = "default_phase_bins")]
    pub phase_bins: usize,
    #[serde(default = "default_bin_width")]
    pub quad_bin_width: f64,
    /// Bins cover `[−quad_range, quad_range]`.
    #[serde(default = "default_range")]
    pub quad_range: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn one() -> f64 {
    1.0
}
fn default_phase_bins() -> usize {
    12
}
fn default_bin_width() -> f64 {
    0.1
}
fn default_range() -> f64 {
    6.0
}
fn default_max_iters() -> usize {
    2000
}
fn default_tol() -> f64 {
    1e-6
}

impl MleConfig {
    pub fn new(cutoff: Cutoff) -> Self {
        MleConfig {
            cutoff,
            eta: 1.0,
            phase_bins: default_phase_bins(),
            quad_bin_width: default_bin_width(),
            quad_range: default_range(),
            max_iters: default_max_iters(),
            tol: default_tol(),
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn quad_bins(&self) -> usize {
        (2.0 * self.quad_range / self.quad_bin_width).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::param(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if self.phase_bins == 0 {
            return Err(Error::param("phase_bins must be at least 1"));
        }
        if !(self.quad_bin_width > 0.0 && self.quad_range > 0.0) {
            return Err(Error::param("quadrature bins need positive width and range"));
        }
        let bins = 2.0 * self.quad_range / self.quad_bin_width;
        if (bins - bins.round()).abs() > 1e-9 * bins.max(1.0) {
            return Err(Error::param("quad_bin_width must divide 2*quad_range"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MleResult {
    pub state: DensityOperator,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before the first step and after every step.
    pub log_likelihood: Vec<f64>,
    /// Samples outside the quadrature range.
    pub dropped_samples: usize,
}

/// Maps a sample onto a phase bin, using `x_{φ+π} = −x_φ` to fold `[0, 2π)` onto `[0, π)`.
fn bin_sample(s: &QuadratureSample, cfg: &MleConfig) -> Option<(usize, usize)> {
    let mut phase = s.phase.rem_euclid(2.0 * PI);
    let mut x = s.value;
    if phase >= PI {
        phase -= PI;
        x = -x;
    }
    let width = PI / cfg.phase_bins as f64;
    let mut b = (phase / width).round() as usize;
    if b == cfg.phase_bins {
        b = 0;
        x = -x;
    }
    let j = ((x + cfg.quad_range) / cfg.quad_bin_width).floor();
    if j < 0.0 || j >= cfg.quad_bins() as f64 {
        return None;
    }
    Some((b, j as usize))
}

/// `∫ ψ_m ψ_n dx` over one quadrature bin.
fn bin_overlap(lo: f64, width: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    let panels = 2;
    let h = width / panels as f64;
    for k in 0..panels {
        let c = lo + (k as f64 + 0.5) * h;
        for (t, w) in GL8 {
            let psi = hermite_functions(c + 0.5 * h * t, dim);
            let w = 0.5 * h * w;
            for m in 0..dim {
                for n in 0..dim {
                    out[m * dim + n] += w * psi[m] * psi[n];
                }
            }
        }
    }
    out
}

/// Reconstructs a density operator from homodyne samples by iterating
/// `ρ → RρR / Tr`. A step that would lower the likelihood is replaced by
/// the diluted update `(I + μR)ρ(I + μR)` with shrinking μ.
pub fn mle_reconstruct(samples: &[QuadratureSample], cfg: &MleConfig) -> Result<MleResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::param("no samples"));
    }
    let dim = cfg.cutoff.dim();
    let nq = cfg.quad_bins();
    let mut counts = vec![0u64; cfg.phase_bins * nq];
    let mut dropped = 0;
    for s in samples {
        if !(s.phase.is_finite() && s.value.is_finite()) {
            return Err(Error::param("samples must be finite"));
        }
        match bin_sample(s, cfg) {
            Some((b, j)) => counts[b * nq + j] += 1,
            None => dropped += 1,
        }
    }
    let used: u64 = counts.iter().sum();
    if used == 0 {
        return Err(Error::param("every sample fell outside the quadrature range"));
    }
    let overlaps: Vec<Option<Vec<f64>>> = (0..nq)
        .into_par_iter()
        .map(|j| {
            let occupied = (0..cfg.phase_bins).any(|b| counts[b * nq + j] > 0);
            occupied.then(|| bin_overlap(-cfg.quad_range + j as f64 * cfg.quad_bin_width, cfg.quad_bin_width, dim))
        })
        .collect();
    let keys: Vec<(usize, usize)> = (0..cfg.phase_bins)
        .flat_map(|b| (0..nq).map(move |j| (b, j)))
        .filter(|&(b, j)| counts[b * nq + j] > 0)
        .collect();
    let freqs: Vec<f64> = keys.iter().map(|&(b, j)| counts[b * nq + j] as f64 / used as f64).collect();
    let povms: Vec<CMatrix> = keys
        .par_iter()
        .map(|&(b, j)| {
            let phase = b as f64 * PI / cfg.phase_bins as f64;
            let ov = overlaps[j].as_ref().expect("occupied bin");
            let m = CMatrix::from_fn(dim, dim, |m, n| Complex64::from_polar(ov[m * dim + n], (m as f64 - n as f64) * phase));
            adjoint_loss(&m, cfg.eta)
        })
        .collect();

    let probs = |rho: &CMatrix| -> Vec<f64> {
        povms
            .iter()
            .map(|pi| {
                let mut acc = 0.0;
                for m in 0..dim {
                    for n in 0..dim {
                        acc += (rho[(n, m)] * pi[(m, n)]).re;
                    }
                }
                acc.max(1e-300)
            })
            .collect()
    };
    let loglik = |p: &[f64]| -> f64 { freqs.iter().zip(p).map(|(f, p)| f * p.ln()).sum() };

    let mut rho = CMatrix::identity(dim, dim) / Complex64::new(dim as f64, 0.0);
    let mut p = probs(&rho);
    let mut ll = loglik(&p);
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let id = CMatrix::identity(dim, dim);
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut r = CMatrix::from_element(dim, dim, C0);
        for ((pi, f), pk) in povms.iter().zip(&freqs).zip(&p) {
            r += pi * Complex64::new(f / pk, 0.0);
        }
        let mut accepted = None;
        let mut mu = f64::INFINITY;
        for _ in 0..40 {
            let step = if mu.is_infinite() { r.clone() } else { &id + &r * Complex64::new(mu, 0.0) };
            let mut next = &step * &rho * &step;
            let tr = next.trace().re;
            next /= Complex64::new(tr, 0.0);
            crate::fock::hermitize(&mut next);
            let np = probs(&next);
            let nll = loglik(&np);
            if nll >= ll {
                accepted = Some((next, np, nll));
                break;
            }
            mu = if mu.is_infinite() { 4.0 } else { mu / 4.0 };
        }
        let Some((next, np, nll)) = accepted else {
            // No ascent direction left at working precision.
            history.push(ll);
            converged = true;
            break;
        };
        let change = (0..dim).map(|k| (next[(k, k)].re - rho[(k, k)].re).abs()).fold(0.0, f64::max);
        rho = next;
        p = np;
        ll = nll;
        history.push(ll);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let (state, _) = DensityOperator::from_positive(rho, cfg.cutoff, 1)?;
    Ok(MleResult {
        state,
        iterations,
        converged,
        log_likelihood: history,
        dropped_samples: dropped,
    })
}
