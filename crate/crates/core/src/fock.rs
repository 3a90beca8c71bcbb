//! Truncated number-basis states and operators.
//!
//! Every object carries a [`Cutoff`]: the highest retained photon number per
//! mode. Two-mode objects are flattened signal-major, i.e. the joint index of
//! `|s, i⟩` is `s * dim + i` where `dim = n_max + 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Default bound on the population of the highest retained Fock index.
pub const DEFAULT_LEAKAGE: f64 = 1e-8;

const NORM_TOL: f64 = 1e-10;
const INPUT_NORM_TOL: f64 = 1e-8;
const HERMITIAN_TOL: f64 = 1e-10;
const EIGEN_FLOOR: f64 = -1e-9;

pub(crate) const C0: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const C1: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cutoff(usize);

impl Cutoff {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::param("cutoff must be at least 1"));
        }
        Ok(Cutoff(n_max))
    }

    pub fn n_max(self) -> usize {
        self.0
    }

    /// Single-mode basis dimension.
    pub fn dim(self) -> usize {
        self.0 + 1
    }

    pub(crate) fn ensure_same(self, other: Cutoff) -> Result<()> {
        if self != other {
            return Err(Error::CutoffMismatch {
                left: self.0,
                right: other.0,
            });
        }
        Ok(())
    }
}

impl Serialize for Cutoff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.0 as u64)
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = usize::deserialize(d)?;
        Cutoff::new(n).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Signal,
    Idler,
}

/// Smallest `n` for which `population(n)` drops below `bound`, scanning from `start`.
pub(crate) fn suggest_cutoff(start: usize, bound: f64, population: impl Fn(usize) -> f64) -> usize {
    let mut n = start.max(1);
    while n < 100_000 && population(n) >= bound {
        n += 1;
    }
    n
}

/// Pure state over one or two truncated modes.
#[derive(Clone, Debug, PartialEq)]
pub struct FockVector {
    modes: usize,
    amplitudes: CVector,
    cutoff: Cutoff,
}

impl FockVector {
    pub fn from_amplitudes(cutoff: Cutoff, modes: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if modes != 1 && modes != 2 {
            return Err(Error::param(format!("modes must be 1 or 2, got {modes}")));
        }
        let expected = cutoff.dim().pow(modes as u32);
        if amplitudes.len() != expected {
            return Err(Error::param(format!(
                "expected {expected} amplitudes, got {}",
                amplitudes.len()
            )));
        }
        Ok(FockVector {
            modes,
            amplitudes: CVector::from_vec(amplitudes),
            cutoff,
        })
    }

    pub(crate) fn from_cvector(cutoff: Cutoff, modes: usize, amplitudes: CVector) -> Self {
        debug_assert_eq!(amplitudes.len(), cutoff.dim().pow(modes as u32));
        FockVector {
            modes,
            amplitudes,
            cutoff,
        }
    }

    /// Number state `|n⟩`.
    pub fn fock(n: usize, cutoff: Cutoff) -> Result<Self> {
        if n > cutoff.n_max() {
            return Err(Error::param(format!("Fock index {n} beyond cutoff {}", cutoff.n_max())));
        }
        let mut amps = CVector::zeros(cutoff.dim());
        amps[n] = C1;
        Ok(Self::from_cvector(cutoff, 1, amps))
    }

    /// Two-mode number state `|s, i⟩`.
    pub fn fock2(signal: usize, idler: usize, cutoff: Cutoff) -> Result<Self> {
        if signal > cutoff.n_max() || idler > cutoff.n_max() {
            return Err(Error::param("Fock index beyond cutoff"));
        }
        let dim = cutoff.dim();
        let mut amps = CVector::zeros(dim * dim);
        amps[joint_index(dim, signal, idler)] = C1;
        Ok(Self::from_cvector(cutoff, 2, amps))
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.amplitudes.as_slice()
    }

    pub(crate) fn as_cvector(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitude(&self, n: usize) -> Complex64 {
        self.amplitudes[n]
    }

    pub fn amplitude2(&self, signal: usize, idler: usize) -> Complex64 {
        self.amplitudes[joint_index(self.cutoff.dim(), signal, idler)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn normalize(mut self) -> Result<Self> {
        let n = self.norm_sqr();
        if n < 1e-300 {
            return Err(Error::param("cannot normalize a zero vector"));
        }
        let scale = 1.0 / n.sqrt();
        self.amplitudes.iter_mut().for_each(|c| *c *= scale);
        Ok(self)
    }

    /// Fock populations. For two-mode vectors this is the joint distribution, flattened.
    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Population resting on the highest retained index of any mode.
    pub fn top_population(&self) -> f64 {
        let dim = self.cutoff.dim();
        let top = self.cutoff.n_max();
        match self.modes {
            1 => self.amplitudes[top].norm_sqr(),
            _ => (0..dim)
                .flat_map(|s| (0..dim).map(move |i| (s, i)))
                .filter(|&(s, i)| s == top || i == top)
                .map(|(s, i)| self.amplitudes[joint_index(dim, s, i)].norm_sqr())
                .sum(),
        }
    }

    pub fn check_leakage(&self, bound: f64) -> Result<()> {
        let population = self.top_population() / self.norm_sqr().max(1e-300);
        if population >= bound {
            return Err(Error::CutoffTooSmall {
                n_max: self.cutoff.n_max(),
                population,
                bound,
                suggested: self.cutoff.n_max() + 1,
            });
        }
        Ok(())
    }

    pub fn inner(&self, other: &FockVector) -> Result<Complex64> {
        self.cutoff.ensure_same(other.cutoff)?;
        ensure_modes(other.modes, self.modes)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn to_density(&self) -> DensityOperator {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityOperator::assume_valid(m, self.cutoff, self.modes)
    }

    pub fn tensor(&self, other: &FockVector) -> Result<FockVector> {
        self.cutoff.ensure_same(other.cutoff)?;
        ensure_modes(1, self.modes)?;
        ensure_modes(1, other.modes)?;
        let amps = self.amplitudes.kronecker(&other.amplitudes);
        Ok(Self::from_cvector(self.cutoff, 2, amps))
    }

    pub(crate) fn ensure_normalized(&self) -> Result<()> {
        let dev = (self.norm_sqr() - 1.0).abs();
        if dev > INPUT_NORM_TOL {
            return Err(Error::NotNormalized(dev));
        }
        Ok(())
    }
}

pub(crate) fn joint_index(dim: usize, signal: usize, idler: usize) -> usize {
    signal * dim + idler
}

fn ensure_modes(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::ModeMismatch { expected, found });
    }
    Ok(())
}

/// Hermitian, unit-trace, positive semidefinite operator over a truncated basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
    cutoff: Cutoff,
    modes: usize,
}

impl DensityOperator {
    /// Validating constructor: Hermitian to 1e-10, unit trace to 1e-10,
    /// eigenvalues above -1e-9.
    pub fn new(matrix: CMatrix, cutoff: Cutoff, modes: usize) -> Result<Self> {
        let rho = Self::from_unchecked(matrix, cutoff, modes)?;
        rho.validate()?;
        Ok(rho)
    }

    fn from_unchecked(matrix: CMatrix, cutoff: Cutoff, modes: usize) -> Result<Self> {
        if modes != 1 && modes != 2 {
            return Err(Error::param(format!("modes must be 1 or 2, got {modes}")));
        }
        let dim = cutoff.dim().pow(modes as u32);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::InvalidDensity(format!(
                "expected {dim}x{dim} matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(DensityOperator {
            matrix,
            cutoff,
            modes,
        })
    }

    /// Used by channels and pipelines whose output is valid by construction.
    pub(crate) fn assume_valid(matrix: CMatrix, cutoff: Cutoff, modes: usize) -> Self {
        debug_assert_eq!(matrix.nrows(), cutoff.dim().pow(modes as u32));
        DensityOperator {
            matrix,
            cutoff,
            modes,
        }
    }

    /// Builds from an unnormalized positive operator, dividing by its trace.
    pub(crate) fn from_positive(matrix: CMatrix, cutoff: Cutoff, modes: usize) -> Result<(Self, f64)> {
        let tr = matrix.trace().re;
        if tr < 1e-300 {
            return Err(Error::ImpossibleOutcome(tr));
        }
        let mut m = matrix / Complex64::from(tr);
        hermitize(&mut m);
        Ok((Self::assume_valid(m, cutoff, modes), tr))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.matrix.nrows();
        let mut herm = 0.0f64;
        for i in 0..n {
            for j in i..n {
                herm = herm.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian (deviation {herm:.3e})")));
        }
        let tr = self.matrix.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} differs from 1")));
        }
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < EIGEN_FLOOR {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect()
    }

    /// Diagonal of the matrix (photon-number distribution for a single mode).
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `⟨v|ρ|v⟩` where `v` may be longer than the basis; entries beyond the
    /// basis are ignored, which is exact because `ρ` has no support there.
    pub fn expectation_in(&self, v: &[Complex64]) -> f64 {
        let d = self.dim().min(v.len());
        let mut acc = 0.0;
        for m in 0..d {
            let mut row = C0;
            for n in 0..d {
                row += self.matrix[(m, n)] * v[n];
            }
            acc += (v[m].conj() * row).re;
        }
        acc
    }

    pub fn tensor(&self, other: &DensityOperator) -> Result<DensityOperator> {
        self.cutoff.ensure_same(other.cutoff)?;
        ensure_modes(1, self.modes)?;
        ensure_modes(1, other.modes)?;
        Ok(Self::assume_valid(
            self.matrix.kronecker(&other.matrix),
            self.cutoff,
            2,
        ))
    }

    pub fn mix(&self, other: &DensityOperator, weight: f64) -> Result<DensityOperator> {
        self.cutoff.ensure_same(other.cutoff)?;
        ensure_modes(self.modes, other.modes)?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::param("mixture weight must lie in [0, 1]"));
        }
        let m = self.matrix.map(|c| c * weight) + other.matrix.map(|c| c * (1.0 - weight));
        Ok(Self::assume_valid(m, self.cutoff, self.modes))
    }

    /// Restricts to a smaller cutoff and renormalizes.
    pub fn truncate(&self, cutoff: Cutoff) -> Result<DensityOperator> {
        ensure_modes(1, self.modes)?;
        if cutoff > self.cutoff {
            return self.embed(cutoff);
        }
        let d = cutoff.dim();
        let m = self.matrix.view((0, 0), (d, d)).into_owned();
        Ok(Self::from_positive(m, cutoff, 1)?.0)
    }

    /// Zero-pads into a larger cutoff.
    pub fn embed(&self, cutoff: Cutoff) -> Result<DensityOperator> {
        ensure_modes(1, self.modes)?;
        if cutoff < self.cutoff {
            return self.truncate(cutoff);
        }
        let d = self.dim();
        let mut m = CMatrix::zeros(cutoff.dim(), cutoff.dim());
        m.view_mut((0, 0), (d, d)).copy_from(&self.matrix);
        Ok(Self::assume_valid(m, cutoff, 1))
    }
}

pub(crate) fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Lowering, raising and number operators on one truncated mode.
#[derive(Clone, Debug)]
pub struct Ladder {
    pub lowering: CMatrix,
    pub raising: CMatrix,
    pub number: CMatrix,
}

pub fn ladder_matrices(cutoff: Cutoff) -> Ladder {
    let d = cutoff.dim();
    let mut lowering = CMatrix::zeros(d, d);
    for m in 1..d {
        lowering[(m - 1, m)] = Complex64::from((m as f64).sqrt());
    }
    let raising = lowering.adjoint();
    let number = CMatrix::from_diagonal(&CVector::from_iterator(
        d,
        (0..d).map(|n| Complex64::from(n as f64)),
    ));
    Ladder {
        lowering,
        raising,
        number,
    }
}

/// Projects the chosen mode of a two-mode pure state onto `|n⟩`.
///
/// Returns the normalized remaining single-mode state and the outcome probability.
pub fn condition_on_fock(joint: &FockVector, mode: Mode, n: usize) -> Result<(FockVector, f64)> {
    ensure_modes(2, joint.modes)?;
    joint.ensure_normalized()?;
    let cutoff = joint.cutoff;
    if n > cutoff.n_max() {
        return Err(Error::param(format!("outcome {n} beyond cutoff {}", cutoff.n_max())));
    }
    let dim = cutoff.dim();
    let amps = CVector::from_iterator(
        dim,
        (0..dim).map(|k| match mode {
            Mode::Idler => joint.amplitudes[joint_index(dim, k, n)],
            Mode::Signal => joint.amplitudes[joint_index(dim, n, k)],
        }),
    );
    let probability: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
    if probability < 1e-300 {
        return Err(Error::ImpossibleOutcome(probability));
    }
    let heralded = FockVector::from_cvector(cutoff, 1, amps).normalize()?;
    Ok((heralded, probability.min(1.0)))
}

/// States that can be scored against a pure target.
pub trait Fidelity {
    fn fidelity(&self, target: &FockVector) -> Result<f64>;
}

impl Fidelity for FockVector {
    fn fidelity(&self, target: &FockVector) -> Result<f64> {
        self.ensure_normalized()?;
        target.ensure_normalized()?;
        let overlap = self.inner(target)?;
        Ok(overlap.norm_sqr().clamp(0.0, 1.0))
    }
}

impl Fidelity for DensityOperator {
    fn fidelity(&self, target: &FockVector) -> Result<f64> {
        self.cutoff.ensure_same(target.cutoff)?;
        ensure_modes(self.modes, target.modes)?;
        let dev = (self.trace() - 1.0).abs();
        if dev > INPUT_NORM_TOL {
            return Err(Error::NotNormalized(dev));
        }
        target.ensure_normalized()?;
        Ok(self.expectation_in(target.amplitudes()).clamp(0.0, 1.0))
    }
}

pub fn fidelity<S: Fidelity + ?Sized>(state: &S, target: &FockVector) -> Result<f64> {
    state.fidelity(target)
}

/// Uhlmann fidelity `(tr √(√ρ σ √ρ))²` between two mixed states.
pub fn uhlmann_fidelity(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    rho.cutoff.ensure_same(sigma.cutoff)?;
    ensure_modes(rho.modes, sigma.modes)?;
    let sqrt_rho = psd_sqrt(&rho.matrix);
    let inner = &sqrt_rho * &sigma.matrix * &sqrt_rho;
    let eig = SymmetricEigen::new(inner).eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let root_sum: f64 = eig.iter().map(|&l| clipped_root(l, max)).sum();
    Ok((root_sum * root_sum).clamp(0.0, 1.0))
}

/// Eigenvalues below this fraction of the largest are rounding noise; their
/// square roots would otherwise bias fidelities of near-pure states.
const SPECTRAL_FLOOR: f64 = 1e-13;

fn clipped_root(l: f64, max: f64) -> f64 {
    if l <= SPECTRAL_FLOOR * max {
        0.0
    } else {
        l.sqrt()
    }
}

fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let roots = CVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| Complex64::from(clipped_root(l, max))),
    );
    &eig.eigenvectors * CMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint()
}

/// Traces out one mode of a two-mode operator, keeping `keep`.
pub fn partial_trace(joint: &DensityOperator, keep: Mode) -> Result<DensityOperator> {
    ensure_modes(2, joint.modes)?;
    let dim = joint.cutoff.dim();
    let mut out = CMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            let mut acc = C0;
            for k in 0..dim {
                acc += match keep {
                    Mode::Signal => joint.matrix[(joint_index(dim, a, k), joint_index(dim, b, k))],
                    Mode::Idler => joint.matrix[(joint_index(dim, k, a), joint_index(dim, k, b))],
                };
            }
            out[(a, b)] = acc;
        }
    }
    let tr = out.trace().re;
    if tr > 0.0 && (tr - 1.0).abs() > 1e-14 {
        out /= Complex64::from(tr);
    }
    Ok(DensityOperator::assume_valid(out, joint.cutoff, 1))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityJson {
    cutoff: usize,
    matrix: Vec<Vec<[f64; 2]>>,
}

impl Serialize for DensityOperator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| [self.matrix[(i, j)].re, self.matrix[(i, j)].im]).collect())
            .collect();
        DensityJson {
            cutoff: self.cutoff.n_max(),
            matrix,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityOperator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = DensityJson::deserialize(d)?;
        let cutoff = Cutoff::new(raw.cutoff).map_err(D::Error::custom)?;
        let n = raw.matrix.len();
        if raw.matrix.iter().any(|row| row.len() != n) {
            return Err(D::Error::custom("density matrix must be square"));
        }
        let modes = if n == cutoff.dim() {
            1
        } else if n == cutoff.dim() * cutoff.dim() {
            2
        } else {
            return Err(D::Error::custom(format!(
                "matrix dimension {n} does not match cutoff {}",
                raw.cutoff
            )));
        };
        let m = CMatrix::from_fn(n, n, |i, j| Complex64::new(raw.matrix[i][j][0], raw.matrix[i][j][1]));
        DensityOperator::new(m, cutoff, modes).map_err(D::Error::custom)
    }
}

impl DensityOperator {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
