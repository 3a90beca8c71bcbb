//! Gaussian resources and channels: coherent states, squeezers, two-mode
//! squeezed vacuum, beamsplitters, pure loss and phase dither.
//!
//! Quadratures follow `x = (a + a†)/√2`, `p = (a − a†)/(i√2)`, so the vacuum
//! variance is 1/2 and a squeezing of `d` dB scales the squeezed variance by
//! `s = 10^(−d/10) = e^(−2ξ)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    joint_index, ladder_matrices, partial_trace, suggest_cutoff, CMatrix, CVector, Cutoff,
    DensityOperator, FockVector, Mode, C0, DEFAULT_LEAKAGE,
};

/// Extra basis states used when exponentiating single-mode generators.
pub const DEFAULT_PAD: usize = 10;

/// Squeezing strength, stored as ξ and convertible to λ = tanh ξ, s = e^(−2ξ) and dB.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqueezeParam {
    xi: f64,
    lambda: f64,
}

impl SqueezeParam {
    pub fn from_xi(xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(Error::param(format!("squeezing parameter must be >= 0, got {xi}")));
        }
        Ok(SqueezeParam { xi, lambda: xi.tanh() })
    }

    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::param(format!("lambda must lie in [0, 1), got {lambda}")));
        }
        Ok(SqueezeParam {
            xi: lambda.atanh(),
            lambda,
        })
    }

    pub fn from_s(s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::param(format!("squeezing factor s must lie in (0, 1], got {s}")));
        }
        Self::from_xi(-s.ln() / 2.0)
    }

    pub fn from_db(db: f64) -> Result<Self> {
        if !(db.is_finite() && db >= 0.0) {
            return Err(Error::param(format!("squeezing in dB must be >= 0, got {db}")));
        }
        Self::from_xi(db * std::f64::consts::LN_10 / 20.0)
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn s(&self) -> f64 {
        (-2.0 * self.xi).exp()
    }

    pub fn db(&self) -> f64 {
        -10.0 * self.s().log10()
    }
}

/// Efficiencies along the optical chain, each in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBudget {
    pub eta_opo: f64,
    pub eta_det: f64,
    pub eta_herald: f64,
}

impl Default for LossBudget {
    fn default() -> Self {
        Self::lossless()
    }
}

impl LossBudget {
    pub fn new(eta_opo: f64, eta_det: f64, eta_herald: f64) -> Result<Self> {
        let b = LossBudget {
            eta_opo,
            eta_det,
            eta_herald,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn lossless() -> Self {
        LossBudget {
            eta_opo: 1.0,
            eta_det: 1.0,
            eta_herald: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_opo", self.eta_opo),
            ("eta_det", self.eta_det),
            ("eta_herald", self.eta_herald),
        ] {
            check_efficiency(name, v)?;
        }
        Ok(())
    }
}

fn check_efficiency(name: &str, eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::param(format!("{name} must lie in [0, 1], got {eta}")));
    }
    Ok(())
}

fn coherent_amplitudes(alpha: Complex64, dim: usize) -> Vec<Complex64> {
    let mut amps = Vec::with_capacity(dim);
    let mut c = Complex64::from((-alpha.norm_sqr() / 2.0).exp());
    for n in 0..dim {
        if n > 0 {
            c = c * alpha / (n as f64).sqrt();
        }
        amps.push(c);
    }
    amps
}

fn poisson_pmf(mean: f64, n: usize) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let ln = n as f64 * mean.ln() - mean - ln_factorial(n);
    ln.exp()
}

pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Coherent state `|α⟩`, renormalized after truncation.
pub fn coherent(alpha: Complex64, cutoff: Cutoff) -> Result<FockVector> {
    let mean = alpha.norm_sqr();
    let top = poisson_pmf(mean, cutoff.n_max());
    if top >= DEFAULT_LEAKAGE {
        return Err(Error::CutoffTooSmall {
            n_max: cutoff.n_max(),
            population: top,
            bound: DEFAULT_LEAKAGE,
            suggested: suggest_cutoff(cutoff.n_max() + 1, DEFAULT_LEAKAGE, |n| poisson_pmf(mean, n)),
        });
    }
    FockVector::from_amplitudes(cutoff, 1, coherent_amplitudes(alpha, cutoff.dim()))?.normalize()
}

/// Generator `(ξ/2)(e^{−iφ} a² − e^{iφ} a†²)` on `dim` basis states.
fn squeeze_generator(xi: f64, phase: f64, dim: usize) -> CMatrix {
    let l = ladder_matrices(Cutoff::new(dim.max(2) - 1).expect("dim >= 2"));
    let a2 = &l.lowering * &l.lowering;
    let ad2 = &l.raising * &l.raising;
    let e = Complex64::from_polar(1.0, phase);
    (a2 * (e.conj() * (xi / 2.0)) - ad2 * (e * (xi / 2.0))).view((0, 0), (dim, dim)).into_owned()
}

/// Squeeze operator exponentiated on `dim + pad` states, returned on the
/// leading `dim` block.
pub(crate) fn squeeze_matrix(xi: f64, phase: f64, dim: usize, pad: usize) -> CMatrix {
    if xi == 0.0 {
        return CMatrix::identity(dim, dim);
    }
    let full = squeeze_generator(xi, phase, dim + pad).exp();
    full.view((0, 0), (dim, dim)).into_owned()
}

/// `exp(G) v` for the squeeze generator on `v.len()` basis states, by a
/// scaled Taylor series on the sparse generator. Matches `squeeze_matrix`
/// with zero padding.
pub(crate) fn squeeze_apply(xi: f64, phase: f64, v: &CVector) -> CVector {
    let dim = v.len();
    if xi == 0.0 || dim < 3 {
        return if xi == 0.0 { v.clone() } else { squeeze_matrix(xi, phase, dim, 0) * v };
    }
    let e = Complex64::from_polar(xi / 2.0, phase);
    let up: Vec<f64> = (0..dim).map(|n| ((n + 1) as f64 * (n + 2) as f64).sqrt()).collect();
    let apply = |w: &CVector| -> CVector {
        CVector::from_fn(dim, |n, _| {
            let mut acc = C0;
            if n + 2 < dim {
                acc += e.conj() * up[n] * w[n + 2];
            }
            if n >= 2 {
                acc -= e * up[n - 2] * w[n - 2];
            }
            acc
        })
    };
    let norm = xi * up[dim - 3];
    let steps = norm.ceil().max(1.0) as usize;
    let h = 1.0 / steps as f64;
    let mut out = v.clone();
    for _ in 0..steps {
        let mut term = out.clone();
        let mut acc = out.clone();
        for k in 1..60 {
            term = apply(&term) * Complex64::new(h / k as f64, 0.0);
            acc += &term;
            if term.norm() < 1e-17 * acc.norm() {
                break;
            }
        }
        out = acc;
    }
    out
}

fn squeezed_vacuum_population(xi: f64, n: usize) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    let m = n / 2;
    let t = xi.tanh();
    let ln = (2 * m) as f64 * t.abs().ln() + ln_factorial(2 * m)
        - 2.0 * (m as f64 * 2f64.ln() + ln_factorial(m))
        - xi.cosh().ln();
    if t == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    ln.exp()
}

/// Single-mode squeeze unitary at the given cutoff.
pub fn squeeze_unitary(param: SqueezeParam, phase: f64, cutoff: Cutoff) -> Result<CMatrix> {
    squeeze_unitary_padded(param, phase, cutoff, DEFAULT_PAD)
}

pub fn squeeze_unitary_padded(
    param: SqueezeParam,
    phase: f64,
    cutoff: Cutoff,
    pad: usize,
) -> Result<CMatrix> {
    let xi = param.xi();
    let top = |n: usize| squeezed_vacuum_population(xi, n).max(squeezed_vacuum_population(xi, n.saturating_sub(1)));
    let pop = top(cutoff.n_max());
    if pop >= DEFAULT_LEAKAGE {
        return Err(Error::CutoffTooSmall {
            n_max: cutoff.n_max(),
            population: pop,
            bound: DEFAULT_LEAKAGE,
            suggested: suggest_cutoff(cutoff.n_max() + 1, DEFAULT_LEAKAGE, top),
        });
    }
    Ok(squeeze_matrix(xi, phase, cutoff.dim(), pad))
}

/// `√(1−λ²) Σ λⁿ |n, n⟩`, renormalized after truncation.
pub fn two_mode_squeezed_vacuum(lambda: f64, cutoff: Cutoff) -> Result<FockVector> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    let pop = |n: usize| (1.0 - lambda * lambda) * lambda.powi(2 * n as i32);
    let top = pop(cutoff.n_max());
    if top >= DEFAULT_LEAKAGE {
        return Err(Error::CutoffTooSmall {
            n_max: cutoff.n_max(),
            population: top,
            bound: DEFAULT_LEAKAGE,
            suggested: suggest_cutoff(cutoff.n_max() + 1, DEFAULT_LEAKAGE, pop),
        });
    }
    let dim = cutoff.dim();
    let mut amps = CVector::zeros(dim * dim);
    let norm = (1.0 - lambda * lambda).sqrt();
    for n in 0..dim {
        amps[joint_index(dim, n, n)] = Complex64::from(norm * lambda.powi(n as i32));
    }
    FockVector::from_cvector(cutoff, 2, amps).normalize()
}

/// Exact exponential of `θ (e^{iφ} a_s† a_i − e^{−iφ} a_s a_i†)` restricted
/// to the photon-number sector with `total` photons. Basis index = signal count.
fn beamsplitter_sector(theta: f64, phase: f64, total: usize) -> CMatrix {
    let d = total + 1;
    let e = Complex64::from_polar(theta, phase);
    let mut g = CMatrix::zeros(d, d);
    for k in 0..total {
        let c = (((k + 1) * (total - k)) as f64).sqrt();
        g[(k + 1, k)] = e * c;
        g[(k, k + 1)] = -e.conj() * c;
    }
    g.exp()
}

/// Two-mode mixing unitary `exp[θ(e^{iφ} a_s† a_i − e^{−iφ} a_s a_i†)]` with
/// transmittance amplitude `t = cos θ`.
///
/// Each total-photon-number sector is exponentiated exactly and then cropped
/// to the per-mode cutoff, so no truncation error enters the kept block.
pub fn beamsplitter_unitary(transmittance: f64, phase: f64, cutoff: Cutoff) -> Result<CMatrix> {
    if !(0.0..=1.0).contains(&transmittance) {
        return Err(Error::param(format!(
            "transmittance amplitude must lie in [0, 1], got {transmittance}"
        )));
    }
    Ok(beamsplitter_from_angle(transmittance.acos(), phase, cutoff))
}

pub(crate) fn beamsplitter_from_angle(theta: f64, phase: f64, cutoff: Cutoff) -> CMatrix {
    let dim = cutoff.dim();
    let n_max = cutoff.n_max();
    let mut u = CMatrix::zeros(dim * dim, dim * dim);
    for total in 0..=2 * n_max {
        let block = beamsplitter_sector(theta, phase, total);
        let lo = total.saturating_sub(n_max);
        let hi = total.min(n_max);
        for k_out in lo..=hi {
            for k_in in lo..=hi {
                u[(joint_index(dim, k_out, total - k_out), joint_index(dim, k_in, total - k_in))] =
                    block[(k_out, k_in)];
            }
        }
    }
    u
}

pub(crate) fn binomial_amplitude(n: usize, k: usize, eta: f64) -> f64 {
    // √(C(n,k) η^{n−k} (1−η)^k)
    if k > n {
        return 0.0;
    }
    let mut ln = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
    let lost = 1.0 - eta;
    if n - k > 0 {
        if eta == 0.0 {
            return 0.0;
        }
        ln += (n - k) as f64 * eta.ln();
    }
    if k > 0 {
        if lost == 0.0 {
            return 0.0;
        }
        ln += k as f64 * lost.ln();
    }
    (0.5 * ln).exp()
}

/// Heisenberg-picture loss `Σ_k A_k† M A_k` on a single-mode operator.
pub(crate) fn adjoint_loss(matrix: &CMatrix, eta: f64) -> CMatrix {
    if eta == 1.0 {
        return matrix.clone();
    }
    let dim = matrix.nrows();
    let amp: Vec<Vec<f64>> = (0..dim)
        .map(|n| (0..dim).map(|k| binomial_amplitude(n, k, eta)).collect())
        .collect();
    CMatrix::from_fn(dim, dim, |m, n| {
        let mut acc = C0;
        for k in 0..=m.min(n) {
            acc += matrix[(m - k, n - k)] * (amp[m][k] * amp[n][k]);
        }
        acc
    })
}

/// Applies pure loss to one mode of a (one- or two-mode) matrix via the
/// Kraus decomposition `A_k = Σ_n √(C(n,k) η^{n−k}(1−η)^k) |n−k⟩⟨n|`.
pub(crate) fn apply_loss(matrix: &CMatrix, cutoff: Cutoff, modes: usize, which: Mode, eta: f64) -> CMatrix {
    if eta == 1.0 {
        return matrix.clone();
    }
    let dim = cutoff.dim();
    let amp: Vec<Vec<f64>> = (0..dim)
        .map(|n| (0..dim).map(|k| binomial_amplitude(n, k, eta)).collect())
        .collect();
    match modes {
        1 => CMatrix::from_fn(dim, dim, |m, n| {
            let mut acc = C0;
            for k in 0..(dim - m.max(n)) {
                acc += matrix[(m + k, n + k)] * (amp[m + k][k] * amp[n + k][k]);
            }
            acc
        }),
        _ => {
            let d2 = dim * dim;
            let split = |idx: usize| (idx / dim, idx % dim);
            CMatrix::from_fn(d2, d2, |row, col| {
                let (s, i) = split(row);
                let (s2, i2) = split(col);
                let mut acc = C0;
                match which {
                    Mode::Signal => {
                        for k in 0..(dim - s.max(s2)) {
                            acc += matrix[(joint_index(dim, s + k, i), joint_index(dim, s2 + k, i2))]
                                * (amp[s + k][k] * amp[s2 + k][k]);
                        }
                    }
                    Mode::Idler => {
                        for k in 0..(dim - i.max(i2)) {
                            acc += matrix[(joint_index(dim, s, i + k), joint_index(dim, s2, i2 + k))]
                                * (amp[i + k][k] * amp[i2 + k][k]);
                        }
                    }
                }
                acc
            })
        }
    }
}

/// Pure-loss channel with survival probability `eta` per photon.
pub fn loss_channel(rho: &DensityOperator, eta: f64) -> Result<DensityOperator> {
    check_efficiency("eta", eta)?;
    if rho.modes() != 1 {
        return Err(Error::ModeMismatch {
            expected: 1,
            found: rho.modes(),
        });
    }
    let m = apply_loss(rho.matrix(), rho.cutoff(), 1, Mode::Signal, eta);
    Ok(DensityOperator::assume_valid(m, rho.cutoff(), 1))
}

/// Loss on one mode of a two-mode operator.
pub fn loss_on_mode(rho: &DensityOperator, mode: Mode, eta: f64) -> Result<DensityOperator> {
    check_efficiency("eta", eta)?;
    if rho.modes() != 2 {
        return Err(Error::ModeMismatch {
            expected: 2,
            found: rho.modes(),
        });
    }
    let m = apply_loss(rho.matrix(), rho.cutoff(), 2, mode, eta);
    Ok(DensityOperator::assume_valid(m, rho.cutoff(), 2))
}

/// The same pure-loss channel realized by mixing with a vacuum ancilla on a
/// beamsplitter of transmittance `√η` and tracing the ancilla out.
pub fn loss_channel_ancilla(rho: &DensityOperator, eta: f64) -> Result<DensityOperator> {
    check_efficiency("eta", eta)?;
    let cutoff = rho.cutoff();
    let vacuum = FockVector::fock(0, cutoff)?.to_density();
    let joint = rho.tensor(&vacuum)?;
    let u = beamsplitter_unitary(eta.sqrt(), 0.0, cutoff)?;
    let mixed = &u * joint.matrix() * u.adjoint();
    partial_trace(&DensityOperator::assume_valid(mixed, cutoff, 2), Mode::Signal)
}

/// Gaussian phase dither: `ρ_mn → ρ_mn e^{−σ²(m−n)²/2}`.
pub fn dephase_channel(rho: &DensityOperator, sigma_phi: f64) -> Result<DensityOperator> {
    if !(sigma_phi.is_finite() && sigma_phi >= 0.0) {
        return Err(Error::param(format!("phase noise must be >= 0, got {sigma_phi}")));
    }
    if rho.modes() != 1 {
        return Err(Error::ModeMismatch {
            expected: 1,
            found: rho.modes(),
        });
    }
    let var = sigma_phi * sigma_phi;
    let m = CMatrix::from_fn(rho.dim(), rho.dim(), |i, j| {
        let d = i as f64 - j as f64;
        rho.matrix()[(i, j)] * (-var * d * d / 2.0).exp()
    });
    Ok(DensityOperator::assume_valid(m, rho.cutoff(), 1))
}

/// Applies a unitary to a pure vector.
pub fn apply_unitary(u: &CMatrix, v: &FockVector) -> FockVector {
    FockVector::from_cvector(v.cutoff(), v.modes(), u * v.as_cvector())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{fidelity, Fidelity};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn cut(n: usize) -> Cutoff {
        Cutoff::new(n).unwrap()
    }

    fn quadrature_x(cutoff: Cutoff) -> CMatrix {
        let l = ladder_matrices(cutoff);
        (&l.lowering + &l.raising) * Complex64::from(FRAC_1_SQRT_2)
    }

    fn expect(m: &CMatrix, v: &FockVector) -> f64 {
        v.as_cvector().dotc(&(m * v.as_cvector())).re
    }

    #[test]
    fn squeeze_param_conversions() {
        let p = SqueezeParam::from_db(4.0).unwrap();
        assert_relative_eq!(p.s(), 10f64.powf(-0.4), epsilon = 1e-12);
        assert_relative_eq!(p.s(), 0.398107, epsilon = 1e-6);
        assert_relative_eq!(p.xi(), 0.460517, epsilon = 1e-6);
        assert_relative_eq!(p.db(), 4.0, epsilon = 1e-9);
        let q = SqueezeParam::from_lambda(0.3).unwrap();
        assert_relative_eq!(q.lambda(), 0.3, epsilon = 1e-12);
        assert_relative_eq!(q.s(), (-2.0 * q.xi()).exp(), epsilon = 1e-12);
        let r = SqueezeParam::from_s(q.s()).unwrap();
        assert_relative_eq!(r.xi(), q.xi(), epsilon = 1e-12);
        assert!(SqueezeParam::from_lambda(1.0).is_err());
        assert!(SqueezeParam::from_db(-1.0).is_err());
    }

    #[test]
    fn loss_budget_rejects_out_of_range() {
        assert!(LossBudget::new(1.1, 0.5, 0.5).is_err());
        assert!(LossBudget::new(0.9, 0.85, 0.85).is_ok());
    }

    #[test]
    fn coherent_vacuum_and_mean() {
        let c = cut(25);
        assert_eq!(coherent(C0, c).unwrap(), FockVector::fock(0, c).unwrap());
        let v = coherent(Complex64::from(3f64.sqrt()), c).unwrap();
        let n = ladder_matrices(c).number;
        assert!((expect(&n, &v) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn coherent_overlap_of_opposite_amplitudes() {
        let c = cut(30);
        let a = 2f64.sqrt();
        let plus = coherent(Complex64::from(a), c).unwrap();
        let minus = coherent(Complex64::from(-a), c).unwrap();
        let ov = plus.inner(&minus).unwrap();
        assert_relative_eq!(ov.re, (-4f64).exp(), epsilon = 1e-10);
        assert_relative_eq!(ov.re, 0.018316, epsilon = 1e-6);
        let f = fidelity(&plus, &minus).unwrap();
        assert_relative_eq!(f, (-8f64).exp(), epsilon = 1e-10);
        assert_relative_eq!(f, 3.3546e-4, epsilon = 1e-8);
    }

    #[test]
    fn coherent_cutoff_too_small() {
        match coherent(Complex64::from(3.0), cut(10)) {
            Err(Error::CutoffTooSmall { suggested, .. }) => {
                assert!(suggested > 10);
                assert!(coherent(Complex64::from(3.0), cut(suggested)).is_ok());
            }
            other => panic!("expected cutoff error, got {other:?}"),
        }
    }

    #[test]
    fn squeeze_identity_at_zero() {
        let u = squeeze_unitary(SqueezeParam::from_xi(0.0).unwrap(), 0.0, cut(6)).unwrap();
        assert_eq!(u, CMatrix::identity(7, 7));
    }

    #[test]
    fn squeezed_vacuum_variance_and_parity() {
        let c = cut(30);
        let p = SqueezeParam::from_db(4.0).unwrap();
        let u = squeeze_unitary(p, 0.0, c).unwrap();
        let v = apply_unitary(&u, &FockVector::fock(0, c).unwrap());
        let x = quadrature_x(c);
        let x2 = &x * &x;
        assert_relative_eq!(expect(&x2, &v), 0.5 * 10f64.powf(-0.4), epsilon = 1e-9);
        assert_relative_eq!(expect(&x2, &v), 0.19905, epsilon = 1e-5);
        for n in (1..c.dim()).step_by(2) {
            assert_eq!(v.amplitude(n).norm(), 0.0);
        }
    }

    #[test]
    fn squeeze_unitary_on_low_block() {
        let c = cut(24);
        let p = SqueezeParam::from_db(3.0).unwrap();
        let u = squeeze_unitary(p, 0.7, c).unwrap();
        let reference = squeeze_unitary_padded(p, 0.7, c, 60).unwrap();
        let low = c.n_max() / 2;
        for i in 0..=low {
            for j in 0..=low {
                assert!((u[(i, j)] - reference[(i, j)]).norm() < 1e-8, "({i},{j})");
            }
        }
        // low-photon inputs whose squeezed image fits in the basis
        let wide = squeeze_unitary(p, 0.7, cut(40)).unwrap();
        let g = wide.adjoint() * &wide;
        for i in 0..=6 {
            for j in 0..=6 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - Complex64::from(target)).norm() < 1e-8, "({i},{j})");
            }
        }
    }

    #[test]
    fn squeeze_cutoff_guard() {
        assert!(matches!(
            squeeze_unitary(SqueezeParam::from_db(10.0).unwrap(), 0.0, cut(6)),
            Err(Error::CutoffTooSmall { .. })
        ));
    }

    #[test]
    fn tmsv_amplitudes() {
        let c = cut(10);
        assert_eq!(two_mode_squeezed_vacuum(0.0, c).unwrap(), FockVector::fock2(0, 0, c).unwrap());
        let v = two_mode_squeezed_vacuum(0.2, c).unwrap();
        assert_relative_eq!(v.amplitude2(2, 2).re, (0.96f64).sqrt() * 0.04, epsilon = 1e-9);
        assert_relative_eq!(v.amplitude2(2, 2).re, 0.039192, epsilon = 1e-6);
        assert_eq!(v.amplitude2(1, 2), C0);
        assert!(matches!(two_mode_squeezed_vacuum(0.5, cut(5)), Err(Error::CutoffTooSmall { .. })));
    }

    #[test]
    fn tmsv_marginal_is_thermal() {
        let c = cut(24);
        let lam: f64 = 0.3;
        let rho = two_mode_squeezed_vacuum(lam, c).unwrap().to_density();
        for keep in [Mode::Signal, Mode::Idler] {
            let m = partial_trace(&rho, keep).unwrap();
            let pops = m.populations();
            for n in 0..c.dim() {
                assert_relative_eq!(pops[n], (1.0 - lam * lam) * lam.powi(2 * n as i32), epsilon = 1e-12);
                for k in 0..c.dim() {
                    if k != n {
                        assert_eq!(m.matrix()[(n, k)], C0);
                    }
                }
            }
            let mean: f64 = pops.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
            assert!((mean - lam * lam / (1.0 - lam * lam)).abs() < 1e-6);
        }
    }

    #[test]
    fn squeezed_pair_on_balanced_splitter_is_tmsv() {
        let c = cut(20);
        let lam = 0.3;
        let p = SqueezeParam::from_lambda(lam).unwrap();
        // π/2 optical phase between the inputs = squeezing phase π
        let s_sig = squeeze_unitary(p, 0.0, c).unwrap();
        let s_idl = squeeze_unitary(p, PI, c).unwrap();
        let vac = FockVector::fock(0, c).unwrap();
        let a = apply_unitary(&s_sig, &vac);
        let b = apply_unitary(&s_idl, &vac);
        let input = a.tensor(&b).unwrap();
        let bs = beamsplitter_unitary(FRAC_1_SQRT_2, 0.0, c).unwrap();
        let out = apply_unitary(&bs, &input).normalize().unwrap();
        let tmsv = two_mode_squeezed_vacuum(lam, c).unwrap();
        let f = fidelity(&out, &tmsv).unwrap();
        assert!(f >= 1.0 - 1e-8, "fidelity {f}");
        // positive real λ, not just up to phase
        let ratio = out.amplitude2(1, 1) / out.amplitude2(0, 0);
        assert!((ratio - Complex64::from(lam)).norm() < 1e-6, "ratio {ratio}");
    }

    #[test]
    fn beamsplitter_identity_and_hong_ou_mandel() {
        let c = cut(4);
        let u = beamsplitter_unitary(1.0, 0.3, c).unwrap();
        assert!((u.clone() - CMatrix::identity(25, 25)).norm() < 1e-14);
        let bal = beamsplitter_unitary(FRAC_1_SQRT_2, 0.0, c).unwrap();
        let out = apply_unitary(&bal, &FockVector::fock2(1, 1, c).unwrap());
        assert!(out.amplitude2(1, 1).norm() < 1e-14);
        assert_relative_eq!(out.amplitude2(2, 0).norm(), FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(out.amplitude2(0, 2).norm(), FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn beamsplitter_sector_unitarity_and_number_conservation() {
        let c = cut(12);
        let dim = c.dim();
        let u = beamsplitter_unitary(0.6, 1.1, c).unwrap();
        for total in 0..=c.n_max() {
            let idx: Vec<usize> = (0..=total).map(|k| joint_index(dim, k, total - k)).collect();
            let block = CMatrix::from_fn(idx.len(), idx.len(), |a, b| u[(idx[a], idx[b])]);
            let dev = (block.adjoint() * &block - CMatrix::identity(idx.len(), idx.len())).norm();
            assert!(dev < 1e-10, "sector {total}: {dev}");
        }
        for row in 0..dim * dim {
            for col in 0..dim * dim {
                let n_row = row / dim + row % dim;
                let n_col = col / dim + col % dim;
                if n_row != n_col {
                    assert_eq!(u[(row, col)], C0);
                }
            }
        }
    }

    #[test]
    fn loss_identity_and_binomial() {
        let c = cut(4);
        let two = FockVector::fock(2, c).unwrap().to_density();
        assert_eq!(loss_channel(&two, 1.0).unwrap(), two);
        let eta: f64 = 0.765;
        let out = loss_channel(&two, eta).unwrap();
        let p = out.populations();
        assert_relative_eq!(p[0], (1.0 - eta).powi(2), epsilon = 1e-12);
        assert_relative_eq!(p[1], 2.0 * eta * (1.0 - eta), epsilon = 1e-12);
        assert_relative_eq!(p[2], eta * eta, epsilon = 1e-12);
        assert_relative_eq!(p[0], 0.0552, epsilon = 1e-4);
        assert_relative_eq!(p[1], 0.3596, epsilon = 1e-4);
        assert_relative_eq!(p[2], 0.5852, epsilon = 1e-4);
        assert_eq!(p[3], 0.0);
        out.validate().unwrap();
        assert_relative_eq!(loss_channel(&two, 0.81).unwrap().populations()[2], 0.6561, epsilon = 1e-12);
    }

    #[test]
    fn loss_kraus_matches_ancilla() {
        let c = cut(8);
        let v = coherent(Complex64::new(0.5, 0.2), c).unwrap();
        let cat = FockVector::from_amplitudes(
            c,
            1,
            v.amplitudes().iter().enumerate().map(|(n, a)| if n % 3 == 0 { a * 2.0 } else { *a }).collect(),
        )
        .unwrap()
        .normalize()
        .unwrap()
        .to_density();
        for eta in [0.0, 0.3, 0.765, 1.0] {
            let k = loss_channel(&cat, eta).unwrap();
            let a = loss_channel_ancilla(&cat, eta).unwrap();
            assert!((k.matrix() - a.matrix()).norm() < 1e-10, "eta {eta}");
        }
    }

    #[test]
    fn dephase_fixed_points_and_factor() {
        let c = cut(3);
        let two = FockVector::fock(2, c).unwrap().to_density();
        assert_eq!(dephase_channel(&two, 0.5).unwrap(), two);
        let sup = FockVector::from_amplitudes(c, 1, vec![Complex64::from(1.0), C0, Complex64::from(1.0), C0])
            .unwrap()
            .normalize()
            .unwrap()
            .to_density();
        assert_eq!(dephase_channel(&sup, 0.0).unwrap(), sup);
        let out = dephase_channel(&sup, 0.2).unwrap();
        assert_relative_eq!(out.matrix()[(0, 2)].re / sup.matrix()[(0, 2)].re, (-0.08f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(out.matrix()[(0, 2)].re / sup.matrix()[(0, 2)].re, 0.92312, epsilon = 1e-5);
        assert_eq!(out.matrix()[(1, 1)], sup.matrix()[(1, 1)]);
    }

    #[test]
    fn two_mode_loss_acts_on_one_mode_only() {
        let c = cut(3);
        let joint = FockVector::fock2(2, 1, c).unwrap().to_density();
        let out = loss_on_mode(&joint, Mode::Signal, 0.5).unwrap();
        let idler = partial_trace(&out, Mode::Idler).unwrap();
        assert_relative_eq!(idler.populations()[1], 1.0, epsilon = 1e-14);
        let sig = partial_trace(&out, Mode::Signal).unwrap();
        assert_relative_eq!(sig.populations()[2], 0.25, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn loss_composes_multiplicatively(e1 in 0.0f64..1.0, e2 in 0.0f64..1.0, re in -0.8f64..0.8, im in -0.8f64..0.8) {
            let c = cut(12);
            let rho = coherent(Complex64::new(re, im), c).unwrap().to_density();
            let two_step = loss_channel(&loss_channel(&rho, e1).unwrap(), e2).unwrap();
            let one_step = loss_channel(&rho, e1 * e2).unwrap();
            prop_assert!((two_step.matrix() - one_step.matrix()).norm() < 1e-10);
        }

        #[test]
        fn channel_outputs_are_valid(eta in 0.0f64..1.0, sigma in 0.0f64..2.0) {
            let c = cut(10);
            let rho = coherent(Complex64::new(0.7, -0.3), c).unwrap().to_density();
            let out = dephase_channel(&loss_channel(&rho, eta).unwrap(), sigma).unwrap();
            prop_assert!(out.validate().is_ok());
            prop_assert!((out.fidelity(&FockVector::fock(0, c).unwrap()).unwrap()) <= 1.0);
        }

        #[test]
        fn loss_never_raises_support(eta in 0.0f64..1.0, top in 0usize..6) {
            let c = cut(8);
            let rho = FockVector::fock(top, c).unwrap().to_density();
            let out = loss_channel(&rho, eta).unwrap();
            for (n, p) in out.populations().into_iter().enumerate() {
                if n > top {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn sparse_squeeze_matches_dense() {
        let dim = 40;
        let v = coherent(Complex64::new(1.5, 0.3), Cutoff::new(dim - 1).unwrap()).unwrap();
        for (xi, phase) in [(0.3, 0.0), (0.9, 1.1), (0.05, PI)] {
            let dense = squeeze_matrix(xi, phase, dim, 0) * v.as_cvector();
            let sparse = squeeze_apply(xi, phase, v.as_cvector());
            assert!((dense - sparse).norm() < 1e-12);
        }
    }


    #[test]
    fn adjoint_loss_is_dual() {
        let c = Cutoff::new(8).unwrap();
        let rho = coherent(Complex64::new(0.7, 0.4), Cutoff::new(20).unwrap())
            .unwrap()
            .to_density()
            .truncate(c)
            .unwrap();
        let eta = 0.6;
        let obs = CMatrix::from_fn(9, 9, |m, n| Complex64::new((m + n) as f64, m as f64 - n as f64));
        let lhs = (&obs * loss_channel(&rho, eta).unwrap().matrix()).trace();
        let rhs = (adjoint_loss(&obs, eta) * rho.matrix()).trace();
        assert!((lhs - rhs).norm() < 1e-12);
        let id = adjoint_loss(&CMatrix::identity(9, 9), eta);
        assert!((id - CMatrix::identity(9, 9)).norm() < 1e-12);
    }

}
