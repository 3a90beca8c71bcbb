//! Config-driven runs that write plot-ready artifacts and a checksummed
//! manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::css::{curve_to_csv, infer_lambda, protocol_curve_with_bank, GridSpec, Optimum, Parity, TargetBank};
use crate::error::{Error, Result};
use crate::fock::{uhlmann_fidelity, DensityOperator};
use crate::gaussian::{dephase_channel, loss_channel};
use crate::herald::{herald, output_loss, Detector, HeraldScenario};
use crate::tomo::{mle_reconstruct, sample_homodyne, samples_to_csv, uniform_phases, MleConfig};
use crate::wigner::{linspace, wigner, WignerMin};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferLambda {
    pub theta_deg: f64,
    pub alpha_sq: f64,
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
}

fn default_lambda_min() -> f64 {
    0.03
}
fn default_lambda_max() -> f64 {
    0.3
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeBlock {
    #[serde(default)]
    pub grid: GridSpec,
    /// Defaults to the parity of the herald photon number.
    #[serde(default)]
    pub parity: Option<Parity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WignerBlock {
    #[serde(default = "default_wigner_range")]
    pub range: f64,
    #[serde(default = "default_wigner_points")]
    pub points: usize,
}

fn default_wigner_range() -> f64 {
    6.0
}
fn default_wigner_points() -> usize {
    121
}

impl Default for WignerBlock {
    fn default() -> Self {
        WignerBlock {
            range: default_wigner_range(),
            points: default_wigner_points(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyBlock {
    #[serde(default = "default_phases")]
    pub phases: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    pub mle: MleConfig,
}

fn default_phases() -> usize {
    12
}
fn default_samples() -> usize {
    50_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitFlags {
    #[serde(default = "yes")]
    pub density: bool,
    #[serde(default = "yes")]
    pub landscape: bool,
    #[serde(default = "yes")]
    pub wigner: bool,
    #[serde(default = "yes")]
    pub samples: bool,
    #[serde(default = "yes")]
    pub reconstruction: bool,
}

fn yes() -> bool {
    true
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags {
            density: true,
            landscape: true,
            wigner: true,
            samples: true,
            reconstruction: true,
        }
    }
}

/// One run: a heralding scenario plus optional analysis stages.
///
/// `scenario` uses the [`HeraldScenario`] JSON form; `lambda` may be left
/// out when `infer_lambda` is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scenario: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infer_lambda: Option<InferLambda>,
    /// Apply homodyne detection loss to the analyzed state.
    #[serde(default)]
    pub include_detection_loss: bool,
    #[serde(default)]
    pub dephase_sigma_rad: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wigner: Option<WignerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomography: Option<TomographyBlock>,
    #[serde(default)]
    pub emit: EmitFlags,
    /// Angles for `sweep-theta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas_deg: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn set_cutoff(&mut self, n_max: usize) {
        self.scenario.insert("cutoff".into(), Value::from(n_max));
    }

    pub fn set_seed(&mut self, seed: u64) {
        if let Some(t) = self.tomography.as_mut() {
            t.seed = seed;
        }
    }

    pub fn set_theta(&mut self, theta_deg: f64) {
        self.scenario.remove("epsilon");
        self.scenario.insert("theta_deg".into(), Value::from(theta_deg));
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.scenario.insert("lambda".into(), Value::from(lambda));
        self.infer_lambda = None;
    }

    /// Parses the scenario, with a placeholder λ when it is still to be inferred.
    fn scenario_with(&self, lambda: Option<f64>) -> Result<HeraldScenario> {
        let mut map = self.scenario.clone();
        if let Some(l) = lambda {
            map.insert("lambda".into(), Value::from(l));
        }
        Ok(serde_json::from_value(Value::Object(map))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::param(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let has_lambda = self.scenario.contains_key("lambda");
        match (&self.infer_lambda, has_lambda) {
            (Some(_), true) => return Err(Error::param("give scenario.lambda or infer_lambda, not both")),
            (None, false) => return Err(Error::param("scenario.lambda is required without infer_lambda")),
            _ => {}
        }
        let base = self.scenario_with((!has_lambda).then_some(0.1))?;
        if let Some(inf) = &self.infer_lambda {
            if !(0.0..=45.0).contains(&inf.theta_deg) || !(inf.alpha_sq > 0.0) {
                return Err(Error::param("infer_lambda needs theta_deg in [0, 45] and alpha_sq > 0"));
            }
            if !(0.0 < inf.lambda_min && inf.lambda_min < inf.lambda_max && inf.lambda_max < 1.0) {
                return Err(Error::param("infer_lambda bracket must satisfy 0 < lambda_min < lambda_max < 1"));
            }
            if base.n_herald < 2 {
                return Err(Error::param("infer_lambda needs n_herald >= 2"));
            }
        }
        if !(self.dephase_sigma_rad >= 0.0 && self.dephase_sigma_rad.is_finite()) {
            return Err(Error::param("dephase_sigma_rad must be finite and >= 0"));
        }
        if let Some(l) = &self.landscape {
            l.grid.validate()?;
        }
        if let Some(w) = &self.wigner {
            if !(w.range > 0.0 && w.range.is_finite()) || w.points < 2 {
                return Err(Error::param("wigner needs range > 0 and at least 2 points"));
            }
        }
        if let Some(t) = &self.tomography {
            t.mle.validate()?;
            if t.phases == 0 || t.n_samples == 0 {
                return Err(Error::param("tomography needs at least one phase and one sample"));
            }
        }
        if let Some(th) = &self.thetas_deg {
            if th.is_empty() || th.iter().any(|t| !(0.0..=45.0).contains(t)) {
                return Err(Error::param("thetas_deg must be a non-empty list within [0, 45]"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(hex::encode(Sha256::digest(serde_json::to_string(&v)?.as_bytes())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub label: String,
    pub stage: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub schema_version: u32,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub stages: Vec<StageTime>,
    pub files: Vec<FileEntry>,
    pub failures: Vec<Failure>,
}

impl RunManifest {
    fn new(command: &str, config_sha256: String) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            schema_version: SCHEMA_VERSION,
            config_sha256,
            seeds: Vec::new(),
            stages: Vec::new(),
            files: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A failed stage; `config` failures map to exit status 2, the rest to 3.
#[derive(Debug)]
pub struct RunError {
    pub stage: String,
    pub error: Error,
}

impl RunError {
    pub fn is_config(&self) -> bool {
        self.stage == "config"
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_config() {
            2
        } else {
            3
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.error)
    }
}

impl std::error::Error for RunError {}

trait StageExt<T> {
    fn stage(self, name: &str) -> std::result::Result<T, RunError>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> std::result::Result<T, RunError> {
        self.map_err(|e| RunError {
            stage: name.into(),
            error: e.into(),
        })
    }
}

/// Writes files atomically into one directory and remembers them so a
/// failed run can be rolled back.
struct Writer {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Writer {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.files.push(FileEntry {
            path: rel.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn rollback(&self) {
        for f in &self.files {
            let _ = fs::remove_file(self.root.join(&f.path));
        }
        let mut dirs: Vec<PathBuf> = self
            .files
            .iter()
            .filter_map(|f| Path::new(&f.path).parent().map(|p| self.root.join(p)))
            .collect();
        dirs.sort();
        dirs.dedup();
        for d in dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }

    fn finish(&self, manifest: &mut RunManifest) -> Result<()> {
        manifest.files = self.files.clone();
        let json = serde_json::to_string_pretty(manifest)? + "\n";
        write_atomic(&self.root.join(MANIFEST_NAME), json.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Clock {
    stages: Vec<StageTime>,
}

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> std::result::Result<T, RunError>) -> std::result::Result<T, RunError> {
        let t = Instant::now();
        let out = f()?;
        self.stages.push(StageTime {
            stage: stage.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographySummary {
    pub seed: u64,
    pub n_samples: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
    pub dropped_samples: usize,
    /// Against the detected state, or the pre-detection state when the
    /// reconstruction corrects for η.
    pub fidelity_to_reference: f64,
    pub populations: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub lambda: f64,
    pub lambda_inferred: bool,
    pub theta_deg: f64,
    pub epsilon: f64,
    pub n_herald: usize,
    pub detector: Detector,
    pub herald_probability: f64,
    pub populations: Vec<f64>,
    pub best_fit: Option<Optimum>,
    pub grid_best: Option<Optimum>,
    pub wigner_min: Option<WignerMin>,
    pub tomography: Option<TomographySummary>,
}

fn parity_for(cfg: &ScenarioConfig, n: usize) -> Parity {
    cfg.landscape.as_ref().and_then(|l| l.parity).unwrap_or(Parity::of(n))
}

fn grid_for(cfg: &ScenarioConfig) -> GridSpec {
    cfg.landscape.as_ref().map(|l| l.grid.clone()).unwrap_or_default()
}

/// Resolves λ, inferring it when the config asks for that.
fn resolve_lambda(cfg: &ScenarioConfig, clock: &mut Clock) -> std::result::Result<(HeraldScenario, bool), RunError> {
    match &cfg.infer_lambda {
        None => Ok((cfg.scenario_with(None).stage("config")?, false)),
        Some(inf) => {
            let mut base = cfg.scenario_with(Some(0.1)).stage("config")?;
            let lam = clock.time("infer_lambda", || {
                let mut probe = base.clone();
                probe.mixing = crate::herald::MixingParam::from_theta_deg(inf.theta_deg).stage("infer_lambda")?;
                let bank = TargetBank::new(&grid_for(cfg), parity_for(cfg, base.n_herald)).stage("infer_lambda")?;
                let fit = infer_lambda(&probe, inf.alpha_sq, &bank, inf.lambda_min, inf.lambda_max).stage("infer_lambda")?;
                Ok(fit.lambda)
            })?;
            base = HeraldScenario {
                squeeze: crate::gaussian::SqueezeParam::from_lambda(lam).stage("infer_lambda")?,
                ..base
            };
            Ok((base, true))
        }
    }
}

fn run_stages(
    cfg: &ScenarioConfig,
    scenario: &HeraldScenario,
    lambda_inferred: bool,
    w: &mut Writer,
    prefix: &str,
    clock: &mut Clock,
) -> std::result::Result<RunSummary, RunError> {
    let path = |name: &str| format!("{prefix}{name}");
    let outcome = clock.time("herald", || herald(scenario).stage("herald"))?;
    let analyzed = clock.time("output", || {
        let mut rho = output_loss(&outcome, &scenario.losses, cfg.include_detection_loss).stage("output")?;
        if cfg.dephase_sigma_rad > 0.0 {
            rho = dephase_channel(&rho, cfg.dephase_sigma_rad).stage("output")?;
        }
        Ok(rho)
    })?;
    if cfg.emit.density {
        w.write(&path("density.json"), (analyzed.to_json().stage("write")? + "\n").as_bytes())
            .stage("write")?;
    }
    let mut summary = RunSummary {
        lambda: scenario.lambda(),
        lambda_inferred,
        theta_deg: scenario.mixing.theta_deg(),
        epsilon: scenario.mixing.epsilon(),
        n_herald: scenario.n_herald,
        detector: scenario.detector,
        herald_probability: outcome.herald_probability,
        populations: analyzed.populations(),
        best_fit: None,
        grid_best: None,
        wigner_min: None,
        tomography: None,
    };
    if let Some(block) = &cfg.landscape {
        let land = clock.time("landscape", || {
            let parity = block.parity.unwrap_or(Parity::of(scenario.n_herald));
            TargetBank::new(&block.grid, parity)
                .and_then(|b| b.landscape(&analyzed))
                .stage("landscape")
        })?;
        summary.best_fit = Some(land.argmax);
        summary.grid_best = Some(land.grid_argmax);
        if cfg.emit.landscape {
            w.write(&path("landscape.csv"), land.to_csv().as_bytes()).stage("write")?;
            w.write(&path("landscape.json"), (land.sidecar_json().stage("write")? + "\n").as_bytes())
                .stage("write")?;
        }
    }
    if let Some(block) = &cfg.wigner {
        let grid = clock.time("wigner", || {
            let axis = linspace(-block.range, block.range, block.points);
            wigner(&analyzed, &axis, &axis).stage("wigner")
        })?;
        summary.wigner_min = Some(grid.min());
        if cfg.emit.wigner {
            w.write(&path("wigner.csv"), grid.to_csv().as_bytes()).stage("write")?;
            w.write(&path("wigner.json"), (grid.sidecar_json().stage("write")? + "\n").as_bytes())
                .stage("write")?;
        }
    }
    if let Some(t) = &cfg.tomography {
        let (samples, result, detected) = clock.time("tomography", || {
            // Homodyne always sees the detection loss; a config η below one undoes it.
            let mut detected = loss_channel(&outcome.state, scenario.losses.eta_det).stage("tomography")?;
            if cfg.dephase_sigma_rad > 0.0 {
                detected = dephase_channel(&detected, cfg.dephase_sigma_rad).stage("tomography")?;
            }
            let samples = sample_homodyne(&detected, &uniform_phases(t.phases), t.n_samples, t.seed).stage("tomography")?;
            let result = mle_reconstruct(&samples, &t.mle).stage("tomography")?;
            Ok((samples, result, detected))
        })?;
        let reference = if t.mle.eta < 1.0 {
            let mut r = outcome.state.clone();
            let residual = scenario.losses.eta_det / t.mle.eta;
            if residual < 1.0 {
                r = loss_channel(&r, residual).stage("tomography")?;
            }
            if cfg.dephase_sigma_rad > 0.0 {
                r = dephase_channel(&r, cfg.dephase_sigma_rad).stage("tomography")?;
            }
            r
        } else {
            detected
        };
        let reference = fit_cutoff(&reference, &result.state).stage("tomography")?;
        let fidelity = uhlmann_fidelity(&result.state, &reference).stage("tomography")?;
        let ts = TomographySummary {
            seed: t.seed,
            n_samples: t.n_samples,
            iterations: result.iterations,
            converged: result.converged,
            final_log_likelihood: *result.log_likelihood.last().unwrap_or(&f64::NAN),
            dropped_samples: result.dropped_samples,
            fidelity_to_reference: fidelity,
            populations: result.state.populations(),
        };
        if cfg.emit.samples {
            w.write(&path("samples.csv"), samples_to_csv(&samples).as_bytes()).stage("write")?;
        }
        if cfg.emit.reconstruction {
            #[derive(Serialize)]
            struct Recon<'a> {
                density: &'a DensityOperator,
                summary: &'a TomographySummary,
                log_likelihood: &'a [f64],
            }
            let json = serde_json::to_string(&Recon {
                density: &result.state,
                summary: &ts,
                log_likelihood: &result.log_likelihood,
            })
            .stage("write")?;
            w.write(&path("reconstruction.json"), (json + "\n").as_bytes()).stage("write")?;
        }
        summary.tomography = Some(ts);
    }
    let json = serde_json::to_string_pretty(&summary).stage("write")? + "\n";
    w.write(&path("summary.json"), json.as_bytes()).stage("write")?;
    Ok(summary)
}

/// Brings `reference` to the cutoff of `target`, truncating or padding.
fn fit_cutoff(reference: &DensityOperator, target: &DensityOperator) -> Result<DensityOperator> {
    use std::cmp::Ordering::*;
    match reference.cutoff().n_max().cmp(&target.cutoff().n_max()) {
        Equal => Ok(reference.clone()),
        Greater => reference.truncate(target.cutoff()),
        Less => reference.embed(target.cutoff()),
    }
}

fn seeds_of(cfg: &ScenarioConfig) -> Vec<u64> {
    cfg.tomography.iter().map(|t| t.seed).collect()
}

/// Runs one scenario into `out`, writing the manifest last. On failure the
/// files written so far are removed.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> std::result::Result<(RunManifest, RunSummary), RunError> {
    cfg.validate().stage("config")?;
    let mut manifest = RunManifest::new("run", cfg.hash().stage("config")?);
    manifest.seeds = seeds_of(cfg);
    let mut w = Writer::new(out).stage("write")?;
    let mut clock = Clock { stages: Vec::new() };
    let result = resolve_lambda(cfg, &mut clock)
        .and_then(|(scenario, inferred)| run_stages(cfg, &scenario, inferred, &mut w, "", &mut clock));
    match result {
        Ok(summary) => {
            manifest.stages = clock.stages;
            w.finish(&mut manifest).stage("write")?;
            Ok((manifest, summary))
        }
        Err(e) => {
            w.rollback();
            Err(e)
        }
    }
}

fn theta_label(theta: f64) -> String {
    format!("theta_{theta}")
}

/// One run per θ with a shared λ; each run lands in `theta_<θ>/`. A failed
/// θ is recorded in the manifest and the sweep moves on.
pub fn sweep_theta(cfg: &ScenarioConfig, thetas: &[f64], out: &Path) -> std::result::Result<(RunManifest, Vec<RunSummary>), RunError> {
    cfg.validate().stage("config")?;
    if thetas.is_empty() {
        return Err(RunError {
            stage: "config".into(),
            error: Error::param("no thetas to sweep"),
        });
    }
    let mut manifest = RunManifest::new("sweep-theta", cfg.hash().stage("config")?);
    manifest.seeds = seeds_of(cfg);
    let mut w = Writer::new(out).stage("write")?;
    let mut clock = Clock { stages: Vec::new() };
    let base = match resolve_lambda(cfg, &mut clock) {
        Ok((s, inferred)) => (s.lambda(), inferred),
        Err(e) => {
            w.rollback();
            return Err(e);
        }
    };
    let mut summaries = Vec::new();
    let mut csv = String::from("theta_deg,epsilon,fidelity_star,alpha_sq_star,db_star,wigner_min\n");
    for &theta in thetas {
        let mut run_cfg = cfg.clone();
        run_cfg.set_theta(theta);
        run_cfg.set_lambda(base.0);
        let label = theta_label(theta);
        let done = run_cfg
            .scenario_with(None)
            .stage("config")
            .and_then(|s| run_stages(&run_cfg, &s, base.1, &mut w, &format!("{label}/"), &mut clock));
        match done {
            Ok(s) => {
                let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    theta,
                    s.epsilon,
                    opt(s.best_fit.map(|o| o.fidelity)),
                    opt(s.best_fit.map(|o| o.alpha_sq)),
                    opt(s.best_fit.map(|o| o.db)),
                    opt(s.wigner_min.map(|m| m.value))
                );
                summaries.push(s);
            }
            Err(e) => manifest.failures.push(Failure {
                label,
                stage: e.stage,
                error: e.error.to_string(),
            }),
        }
    }
    let res = w.write("sweep.csv", csv.as_bytes()).stage("write");
    if let Err(e) = res {
        w.rollback();
        return Err(e);
    }
    manifest.stages = clock.stages;
    w.finish(&mut manifest).stage("write")?;
    Ok((manifest, summaries))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<[Option<f64>; 6]>> {
    let mut lines = text.lines();
    if lines.next() != Some("theta_deg,epsilon,fidelity_star,alpha_sq_star,db_star,wigner_min") {
        return Err(Error::Parse("missing sweep header".into()));
    }
    lines
        .map(|l| {
            let f: Vec<Option<f64>> = l
                .split(',')
                .map(|s| {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<f64>().map(Some).map_err(|e| Error::Parse(format!("{l}: {e}")))
                    }
                })
                .collect::<Result<_>>()?;
            f.try_into().map_err(|_| Error::Parse(format!("expected 6 fields: {l}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig1Config {
    pub schema_version: u32,
    pub n: usize,
    pub lambda: f64,
    pub ratios: Vec<f64>,
    #[serde(default)]
    pub grid: GridSpec,
}

impl Fig1Config {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::param(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.n < 2 || !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::param("fig1 needs n >= 2 and lambda in (0, 1)"));
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::param("ratios must be a non-empty list of finite values >= 0"));
        }
        self.grid.validate()
    }

    pub fn hash(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(hex::encode(Sha256::digest(serde_json::to_string(&v)?.as_bytes())))
    }
}

/// Best-fit fidelity curve against the ratio ε/λ, written to `fig1_n<n>.csv`.
pub fn fig1_curves(cfg: &Fig1Config, out: &Path) -> std::result::Result<RunManifest, RunError> {
    cfg.validate().stage("config")?;
    let mut manifest = RunManifest::new("fig1", cfg.hash().stage("config")?);
    let mut w = Writer::new(out).stage("write")?;
    let mut clock = Clock { stages: Vec::new() };
    let res = clock
        .time("curve", || {
            let bank = TargetBank::new(&cfg.grid, Parity::of(cfg.n)).stage("curve")?;
            protocol_curve_with_bank(cfg.n, &cfg.ratios, cfg.lambda, &bank).stage("curve")
        })
        .and_then(|curve| w.write(&format!("fig1_n{}.csv", cfg.n), curve_to_csv(&curve).as_bytes()).stage("write"));
    if let Err(e) = res {
        w.rollback();
        return Err(e);
    }
    manifest.stages = clock.stages;
    w.finish(&mut manifest).stage("write")?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomoConfig {
    pub schema_version: u32,
    pub mle: MleConfig,
}

/// Reconstructs a state from a sample CSV into `reconstruction.json`.
pub fn tomo_from_samples(samples_csv: &str, cfg: &TomoConfig, out: &Path) -> std::result::Result<RunManifest, RunError> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(RunError {
            stage: "config".into(),
            error: Error::param("unsupported schema_version"),
        });
    }
    cfg.mle.validate().stage("config")?;
    let samples = crate::tomo::samples_from_csv(samples_csv).stage("config")?;
    let hash = {
        let v = serde_json::to_value(cfg).stage("config")?;
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&v).stage("config")?.as_bytes());
        h.update(samples_csv.as_bytes());
        hex::encode(h.finalize())
    };
    let mut manifest = RunManifest::new("tomo", hash);
    let mut w = Writer::new(out).stage("write")?;
    let mut clock = Clock { stages: Vec::new() };
    let res = clock.time("tomography", || mle_reconstruct(&samples, &cfg.mle).stage("tomography")).and_then(|r| {
        #[derive(Serialize)]
        struct Recon<'a> {
            density: &'a DensityOperator,
            iterations: usize,
            converged: bool,
            dropped_samples: usize,
            log_likelihood: &'a [f64],
        }
        let json = serde_json::to_string(&Recon {
            density: &r.state,
            iterations: r.iterations,
            converged: r.converged,
            dropped_samples: r.dropped_samples,
            log_likelihood: &r.log_likelihood,
        })
        .stage("write")?;
        w.write("reconstruction.json", (json + "\n").as_bytes()).stage("write")
    });
    if let Err(e) = res {
        w.rollback();
        return Err(e);
    }
    manifest.stages = clock.stages;
    w.finish(&mut manifest).stage("write")?;
    Ok(manifest)
}

/// Wigner function of a stored density operator into `wigner.csv`/`wigner.json`.
pub fn wigner_from_density(density_json: &str, block: &WignerBlock, out: &Path) -> std::result::Result<RunManifest, RunError> {
    let rho = DensityOperator::from_json(density_json).stage("config")?;
    if !(block.range > 0.0) || block.points < 2 {
        return Err(RunError {
            stage: "config".into(),
            error: Error::param("wigner needs range > 0 and at least 2 points"),
        });
    }
    let hash = {
        let mut h = Sha256::new();
        h.update(density_json.as_bytes());
        h.update(serde_json::to_string(block).stage("config")?.as_bytes());
        hex::encode(h.finalize())
    };
    let mut manifest = RunManifest::new("wigner", hash);
    let mut w = Writer::new(out).stage("write")?;
    let mut clock = Clock { stages: Vec::new() };
    let res = clock
        .time("wigner", || {
            let axis = linspace(-block.range, block.range, block.points);
            wigner(&rho, &axis, &axis).stage("wigner")
        })
        .and_then(|g| {
            w.write("wigner.csv", g.to_csv().as_bytes()).stage("write")?;
            w.write("wigner.json", (g.sidecar_json().stage("write")? + "\n").as_bytes()).stage("write")
        });
    if let Err(e) = res {
        w.rollback();
        return Err(e);
    }
    manifest.stages = clock.stages;
    w.finish(&mut manifest).stage("write")?;
    Ok(manifest)
}
