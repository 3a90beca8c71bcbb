//! The heralding protocol: mix the two modes of a two-mode squeezed vacuum,
//! detect photons on the idler output and keep the signal.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{joint_index, CMatrix, Cutoff, DensityOperator, FockVector, Mode, C0};
use crate::gaussian::{
    apply_loss, beamsplitter_from_angle, beamsplitter_unitary, loss_channel, two_mode_squeezed_vacuum,
    LossBudget, SqueezeParam,
};

/// Herald probabilities below this are treated as unphysical scenarios.
pub const MIN_HERALD_PROBABILITY: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MixingOrigin {
    Theta,
    Epsilon,
}

/// Mixing between signal and idler set by the half-wave-plate angle θ,
/// with ε = sin 2θ and beamsplitter asymmetry r = √((1+ε)/2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingParam {
    theta_deg: f64,
    epsilon: f64,
    origin: MixingOrigin,
}

impl MixingParam {
    pub fn from_theta_deg(theta_deg: f64) -> Result<Self> {
        if !(0.0..=45.0).contains(&theta_deg) {
            return Err(Error::param(format!("theta must lie in [0, 45] degrees, got {theta_deg}")));
        }
        Ok(MixingParam {
            theta_deg,
            epsilon: (2.0 * theta_deg.to_radians()).sin(),
            origin: MixingOrigin::Theta,
        })
    }

    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::param(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(MixingParam {
            theta_deg: (epsilon.asin() / 2.0).to_degrees(),
            epsilon,
            origin: MixingOrigin::Epsilon,
        })
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn theta_rad(&self) -> f64 {
        self.theta_deg.to_radians()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Reflection amplitude of the equivalent asymmetric splitter acting on
    /// two single-mode squeezed vacua.
    pub fn r(&self) -> f64 {
        ((1.0 + self.epsilon) / 2.0).sqrt()
    }

    /// Rotation angle of the signal/idler mixing unitary applied to the
    /// two-mode squeezed vacuum. It is chosen so that the mixing generator
    /// carries `ε b_i†²` relative to `b_s† b_i†`, which makes the heralded
    /// state reduce to `ε√(n(n−1))|n−2⟩ + λ|n⟩` as λ → 0.
    pub fn rotation_angle(&self) -> f64 {
        (2.0 * self.epsilon).atan() / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    /// Photon-number-resolving projector `|n⟩⟨n|`.
    Pnr,
    /// Two on-off detectors behind a balanced splitter, both clicking.
    CoincidenceOnoff,
}

/// Full parameterization of one heralding run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioJson", into = "ScenarioJson")]
pub struct HeraldScenario {
    pub squeeze: SqueezeParam,
    pub mixing: MixingParam,
    pub n_herald: usize,
    pub detector: Detector,
    pub losses: LossBudget,
    pub cutoff: Cutoff,
    /// Phase of the mixing unitary; π flips the sign between the |n−2⟩ and |n⟩ terms.
    pub bs_phase: f64,
    /// Per-arm dark-click probability for the coincidence detector.
    pub dark_click_prob: f64,
}

impl HeraldScenario {
    pub fn new(lambda: f64, mixing: MixingParam, n_herald: usize, cutoff: Cutoff) -> Result<Self> {
        let s = HeraldScenario {
            squeeze: SqueezeParam::from_lambda(lambda)?,
            mixing,
            n_herald,
            detector: Detector::Pnr,
            losses: LossBudget::lossless(),
            cutoff,
            bs_phase: 0.0,
            dark_click_prob: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_detector(mut self, detector: Detector) -> Result<Self> {
        self.detector = detector;
        self.validate()?;
        Ok(self)
    }

    pub fn with_losses(mut self, losses: LossBudget) -> Result<Self> {
        self.losses = losses;
        self.validate()?;
        Ok(self)
    }

    pub fn lambda(&self) -> f64 {
        self.squeeze.lambda()
    }

    pub fn validate(&self) -> Result<()> {
        self.losses.validate()?;
        if self.n_herald < 1 {
            return Err(Error::param("n_herald must be at least 1"));
        }
        if self.n_herald > self.cutoff.n_max() {
            return Err(Error::param(format!(
                "n_herald {} exceeds cutoff {}",
                self.n_herald,
                self.cutoff.n_max()
            )));
        }
        if self.detector == Detector::CoincidenceOnoff && self.n_herald != 2 {
            return Err(Error::param("coincidence detection heralds exactly two photons"));
        }
        if !(0.0..1.0).contains(&self.dark_click_prob) {
            return Err(Error::param("dark_click_prob must lie in [0, 1)"));
        }
        if !self.bs_phase.is_finite() {
            return Err(Error::param("bs_phase must be finite"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioJson {
    lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    n_herald: usize,
    #[serde(default = "default_detector")]
    detector: Detector,
    #[serde(default = "one")]
    eta_opo: f64,
    #[serde(default = "one")]
    eta_det: f64,
    #[serde(default = "one")]
    eta_herald: f64,
    cutoff: usize,
    #[serde(default)]
    bs_phase: f64,
    #[serde(default)]
    dark_click_prob: f64,
}

fn one() -> f64 {
    1.0
}

fn default_detector() -> Detector {
    Detector::Pnr
}

impl TryFrom<ScenarioJson> for HeraldScenario {
    type Error = Error;

    fn try_from(j: ScenarioJson) -> Result<Self> {
        let mixing = match (j.theta_deg, j.epsilon) {
            (Some(t), None) => MixingParam::from_theta_deg(t)?,
            (None, Some(e)) => MixingParam::from_epsilon(e)?,
            _ => return Err(Error::param("give exactly one of theta_deg or epsilon")),
        };
        let s = HeraldScenario {
            squeeze: SqueezeParam::from_lambda(j.lambda)?,
            mixing,
            n_herald: j.n_herald,
            detector: j.detector,
            losses: LossBudget::new(j.eta_opo, j.eta_det, j.eta_herald)?,
            cutoff: Cutoff::new(j.cutoff)?,
            bs_phase: j.bs_phase,
            dark_click_prob: j.dark_click_prob,
        };
        s.validate()?;
        Ok(s)
    }
}

impl From<HeraldScenario> for ScenarioJson {
    fn from(s: HeraldScenario) -> Self {
        let (theta_deg, epsilon) = match s.mixing.origin {
            MixingOrigin::Theta => (Some(s.mixing.theta_deg), None),
            MixingOrigin::Epsilon => (None, Some(s.mixing.epsilon)),
        };
        ScenarioJson {
            lambda: s.squeeze.lambda(),
            theta_deg,
            epsilon,
            n_herald: s.n_herald,
            detector: s.detector,
            eta_opo: s.losses.eta_opo,
            eta_det: s.losses.eta_det,
            eta_herald: s.losses.eta_herald,
            cutoff: s.cutoff.n_max(),
            bs_phase: s.bs_phase,
            dark_click_prob: s.dark_click_prob,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeraldOutcome {
    pub state: DensityOperator,
    pub herald_probability: f64,
}

/// Closed-form heralded state, flagged when the `|n−2⟩` term cannot appear.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreState {
    pub vector: FockVector,
    pub degenerate: bool,
}

/// `(ε√(n(n−1))|n−2⟩ + λ|n⟩)/√(n(n−1)ε² + λ²)`.
pub fn core_state(n: usize, epsilon: f64, lambda: f64, cutoff: Cutoff) -> Result<CoreState> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::param(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    if n >= cutoff.n_max() {
        return Err(Error::CutoffTooSmall {
            n_max: cutoff.n_max(),
            population: if n == cutoff.n_max() { 1.0 } else { f64::NAN },
            bound: crate::fock::DEFAULT_LEAKAGE,
            suggested: n + 1,
        });
    }
    let pairs = (n * n.saturating_sub(1)) as f64;
    let norm_sq = pairs * epsilon * epsilon + lambda * lambda;
    if norm_sq == 0.0 {
        return Err(Error::param("core state undefined: both terms vanish"));
    }
    let norm = norm_sq.sqrt();
    let mut amps = vec![C0; cutoff.dim()];
    amps[n] = Complex64::from(lambda / norm);
    let degenerate = n < 2;
    if !degenerate {
        amps[n - 2] = Complex64::from(epsilon * pairs.sqrt() / norm);
    }
    Ok(CoreState {
        vector: FockVector::from_amplitudes(cutoff, 1, amps)?,
        degenerate,
    })
}

fn mixing_unitary(s: &HeraldScenario) -> CMatrix {
    // phase offset π fixes the |n−2⟩ and |n⟩ terms to the same sign at bs_phase = 0
    beamsplitter_from_angle(s.mixing.rotation_angle(), s.bs_phase + PI, s.cutoff)
}

/// Signal operator `Σ_k w_k ⟨k|_idler ρ |k⟩_idler` for a diagonal idler POVM.
fn reduce_with_povm(joint: &CMatrix, dim: usize, weights: &[f64]) -> CMatrix {
    CMatrix::from_fn(dim, dim, |a, b| {
        let mut acc = C0;
        for (k, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                acc += joint[(joint_index(dim, a, k), joint_index(dim, b, k))] * w;
            }
        }
        acc
    })
}

fn is_lossless(s: &HeraldScenario) -> bool {
    s.losses.eta_opo == 1.0 && s.losses.eta_herald == 1.0
}

/// Two-mode state just before the idler detector.
fn pre_detection_state(s: &HeraldScenario) -> Result<CMatrix> {
    let tmsv = two_mode_squeezed_vacuum(s.lambda(), s.cutoff)?;
    let u = mixing_unitary(s);
    if is_lossless(s) {
        let v = &u * tmsv.as_cvector();
        return Ok(&v * v.adjoint());
    }
    let mut rho = tmsv.to_density().into_matrix();
    rho = apply_loss(&rho, s.cutoff, 2, Mode::Signal, s.losses.eta_opo);
    rho = apply_loss(&rho, s.cutoff, 2, Mode::Idler, s.losses.eta_opo);
    rho = &u * rho * u.adjoint();
    rho = apply_loss(&rho, s.cutoff, 2, Mode::Idler, s.losses.eta_herald);
    Ok(rho)
}

fn herald_with_povm(s: &HeraldScenario, weights: &[f64]) -> Result<HeraldOutcome> {
    s.validate()?;
    let joint = pre_detection_state(s)?;
    let sigma = reduce_with_povm(&joint, s.cutoff.dim(), weights);
    let p = sigma.trace().re;
    if !(p >= MIN_HERALD_PROBABILITY) {
        return Err(Error::NegligibleProbability(p));
    }
    let (state, p) = DensityOperator::from_positive(sigma, s.cutoff, 1)?;
    Ok(HeraldOutcome {
        state,
        herald_probability: p.min(1.0),
    })
}

/// Ideal photon-number-resolving herald on the idler.
pub fn herald_pnr(s: &HeraldScenario) -> Result<HeraldOutcome> {
    if s.detector != Detector::Pnr {
        return Err(Error::param("herald_pnr requires the pnr detector"));
    }
    let mut w = vec![0.0; s.cutoff.dim()];
    w[s.n_herald] = 1.0;
    herald_with_povm(s, &w)
}

/// Probability of each idler photon number, for outcomes `0..=n_max`.
pub fn herald_distribution(s: &HeraldScenario) -> Result<Vec<f64>> {
    s.validate()?;
    let joint = pre_detection_state(s)?;
    let dim = s.cutoff.dim();
    Ok((0..dim)
        .map(|k| (0..dim).map(|a| joint[(joint_index(dim, a, k), joint_index(dim, a, k))].re).sum())
        .collect())
}

/// Click probability of both on-off detectors behind a balanced splitter,
/// given k photons entering it. Entry k of the returned vector is computed by
/// propagating `|k, 0⟩` through the splitter and summing over arm outcomes.
pub fn coincidence_povm(cutoff: Cutoff, dark_click_prob: f64) -> Result<Vec<f64>> {
    let dim = cutoff.dim();
    let u = beamsplitter_unitary(FRAC_1_SQRT_2, 0.0, cutoff)?;
    let click = |m: usize| if m == 0 { dark_click_prob } else { 1.0 };
    Ok((0..dim)
        .map(|k| {
            let col = joint_index(dim, k, 0);
            (0..=k)
                .map(|j| u[(joint_index(dim, j, k - j), col)].norm_sqr() * click(j) * click(k - j))
                .sum()
        })
        .collect())
}

/// Two-detector coincidence herald, valid as a two-photon detection at low λ.
pub fn herald_coincidence(s: &HeraldScenario) -> Result<HeraldOutcome> {
    if s.detector != Detector::CoincidenceOnoff {
        return Err(Error::param("herald_coincidence requires the coincidence_onoff detector"));
    }
    let w = coincidence_povm(s.cutoff, s.dark_click_prob)?;
    herald_with_povm(s, &w)
}

/// Dispatches on the detector model.
pub fn herald(s: &HeraldScenario) -> Result<HeraldOutcome> {
    match s.detector {
        Detector::Pnr => herald_pnr(s),
        Detector::CoincidenceOnoff => herald_coincidence(s),
    }
}

/// Applies homodyne detection loss when `include_detection` is set (the
/// uncorrected view); otherwise returns the state as seen by a perfect detector.
pub fn output_loss(outcome: &HeraldOutcome, losses: &LossBudget, include_detection: bool) -> Result<DensityOperator> {
    losses.validate()?;
    if include_detection {
        loss_channel(&outcome.state, losses.eta_det)
    } else {
        Ok(outcome.state.clone())
    }
}
