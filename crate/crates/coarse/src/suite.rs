//! Scenario emission and suite execution: a manifest declares which checks
//! to run against the emitted files; the runner aggregates pass/fail with
//! deterministic rendering.

use crate::covering::BranchedCovering;
use crate::dimension::{dimension_at_scale, SearchStrategy};
use crate::io::{self, IoError, MaskFile};
use crate::multiscale::{rips_lift_check, DEFAULT_SIMPLEX_CAP};
use crate::operators::ControlledOperator;
use crate::scenario::{self, ScenarioError};
use crate::space::{Entourage, PointId};
use crate::transfer::{
    ghost_quotient_bound, norm_bound_check, roundtrip_check, verify_trace_square, TransferError,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Multiscale(#[from] crate::multiscale::MultiscaleError),
    #[error(transparent)]
    Dimension(#[from] crate::dimension::DimensionError),
    #[error(transparent)]
    Covering(#[from] crate::covering::CoveringError),
    #[error("manifest references unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("unknown scale {0:?}")]
    UnknownScale(String),
    #[error("manifest requires a mask file")]
    MissingMask,
    #[error("no certificate with multiplicity <= {0} found for {1}")]
    NoCertificate(usize, String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
pub enum CheckSpec {
    VerifyCovering,
    VerifyGcovering,
    VerifyCoveringMasked,
    TraceSquare { operator: String, scale: String },
    Roundtrip { operator: String, scale: String },
    NormBound { operator: String, scale: String },
    Ghost { operator: String, window: String, truncation: String, transfer_scale: Option<String> },
    RipsLift { scale: String, max_dim: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub covering: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default)]
    pub operators: BTreeMap<String, String>,
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub details: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub scenario: String,
    pub outcomes: Vec<CheckOutcome>,
    pub pass: bool,
}

/// Fixed 12-significant-digit rendering for report lines.
pub fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

impl SuiteReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let tag = if o.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("[{tag}] {}", o.name));
            if !o.details.is_empty() {
                out.push_str(&format!(" — {}", o.details));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "suite {}: {}\n",
            self.scenario,
            if self.pass { "all checks passed" } else { "violations found" }
        ));
        out
    }
}

fn resolve_target_scale(cov: &BranchedCovering, name: &str) -> Result<Entourage, SuiteError> {
    match name {
        "diag" => Ok(cov.target().diagonal()),
        "full" => Ok(Entourage::full_on(&cov.target().point_set())),
        _ => cov
            .target()
            .entourage(name)
            .cloned()
            .map_err(|_| SuiteError::UnknownScale(name.to_string())),
    }
}

fn resolve_source_scale(cov: &BranchedCovering, name: &str) -> Result<Entourage, SuiteError> {
    match name {
        "diag" => Ok(cov.source().diagonal()),
        "full" => Ok(Entourage::full_on(&cov.source().point_set())),
        _ => cov
            .source()
            .entourage(name)
            .cloned()
            .map_err(|_| SuiteError::UnknownScale(name.to_string())),
    }
}

fn check_name(spec: &CheckSpec) -> String {
    match spec {
        CheckSpec::VerifyCovering => "verify-covering".into(),
        CheckSpec::VerifyGcovering => "verify-gcovering".into(),
        CheckSpec::VerifyCoveringMasked => "verify-covering-masked".into(),
        CheckSpec::TraceSquare { operator, scale } => {
            format!("trace-square operator={operator} scale={scale}")
        }
        CheckSpec::Roundtrip { operator, scale } => {
            format!("roundtrip operator={operator} scale={scale}")
        }
        CheckSpec::NormBound { operator, scale } => {
            format!("norm-bound operator={operator} scale={scale}")
        }
        CheckSpec::Ghost { operator, window, truncation, .. } => {
            format!("ghost operator={operator} window={window} truncation={truncation}")
        }
        CheckSpec::RipsLift { scale, max_dim } => {
            format!("rips-lift scale={scale} max-dim={max_dim}")
        }
    }
}

/// Certificate for the transfer norm lemma: a greedy cover at the squared
/// scale, with the stated multiplicity cap.
fn cert_at_squared_scale(
    space: &crate::space::FiniteCoarseSpace,
    scale: &Entourage,
    max_mult: usize,
    depth: usize,
    what: &str,
) -> Result<crate::dimension::DimensionCertificate, SuiteError> {
    dimension_at_scale(space, &scale.compose(scale), max_mult, SearchStrategy::Greedy, depth)?
        .ok_or_else(|| SuiteError::NoCertificate(max_mult, what.to_string()))
}

struct Loaded {
    covering: BranchedCovering,
    mask: Option<BTreeSet<PointId>>,
    operators: BTreeMap<String, ControlledOperator>,
}

fn load(dir: &Path, manifest: &Manifest) -> Result<Loaded, SuiteError> {
    let covering = io::load_covering(&dir.join(&manifest.covering))?;
    let mask = match &manifest.mask {
        Some(m) => {
            let file: MaskFile = io::load_json(&dir.join(m))?;
            Some(file.points.into_iter().collect())
        }
        None => None,
    };
    let mut operators = BTreeMap::new();
    for (name, path) in &manifest.operators {
        operators.insert(name.clone(), io::load_operator(&dir.join(path))?);
    }
    Ok(Loaded { covering, mask, operators })
}

fn run_check(
    spec: &CheckSpec,
    loaded: &Loaded,
    depth: usize,
    tolerance: f64,
) -> Result<CheckOutcome, SuiteError> {
    let cov = &loaded.covering;
    let name = check_name(spec);
    let outcome = |pass: bool, details: String| CheckOutcome { name: name.clone(), pass, details };
    let get_op = |op: &String| {
        loaded.operators.get(op).ok_or_else(|| SuiteError::UnknownOperator(op.clone()))
    };

    Ok(match spec {
        CheckSpec::VerifyCovering => {
            let report = cov.verify(depth);
            let details = if report.all_pass() {
                format!("minimal index {:?}", report.overall_minimal_index())
            } else {
                format!("{:?}", report.failures())
            };
            outcome(report.all_pass(), details)
        }
        CheckSpec::VerifyGcovering => {
            let report = cov.verify_deck(depth)?;
            let details = if report.all_pass() {
                String::new()
            } else {
                format!("{:?}", report.failures())
            };
            outcome(report.all_pass(), details)
        }
        CheckSpec::VerifyCoveringMasked => {
            let mask = loaded.mask.as_ref().ok_or(SuiteError::MissingMask)?;
            let report = cov.verify_masked(mask, depth);
            let details = if report.all_pass() {
                format!("on {} interior points", mask.len())
            } else {
                format!("{:?}", report.failures())
            };
            outcome(report.all_pass(), details)
        }
        CheckSpec::TraceSquare { operator, scale } => {
            let a = get_op(operator)?;
            let v = resolve_target_scale(cov, scale)?;
            let report = verify_trace_square(cov, a, &v, tolerance)?;
            let details = report
                .pairs
                .iter()
                .map(|p| {
                    format!(
                        "component {}: plain {} equivariant {}",
                        p.target_component,
                        sig12(p.plain.0),
                        sig12(p.equivariant.0)
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            outcome(report.pass, details)
        }
        CheckSpec::Roundtrip { operator, scale } => {
            let a = get_op(operator)?;
            let v = resolve_target_scale(cov, scale)?;
            let report = roundtrip_check(cov, a, &v, tolerance)?;
            outcome(
                report.pass,
                format!(
                    "alpha deviation {}, beta deviation {}",
                    sig12(report.alpha_deviation),
                    sig12(report.beta_deviation)
                ),
            )
        }
        CheckSpec::NormBound { operator, scale } => {
            let a = get_op(operator)?;
            let v = resolve_target_scale(cov, scale)?;
            let (_, source_cert) = crate::transfer::find_source_certificate(cov, &v, 2, depth)?;
            let target_cert = cert_at_squared_scale(cov.target(), &v, 2, depth, "target")?;
            let report = norm_bound_check(cov, a, &v, &source_cert, Some(&target_cert), 1e-8)?;
            let pass = report.forward_ok && report.reverse_ok.unwrap_or(true);
            outcome(
                pass,
                format!(
                    "‖A‖ = {}, ‖B‖ = {}, ratio {} (reported)",
                    sig12(report.norm_a),
                    sig12(report.norm_transfer),
                    sig12(report.ratio)
                ),
            )
        }
        CheckSpec::Ghost { operator, window, truncation, transfer_scale } => {
            let a = get_op(operator)?;
            let u = resolve_target_scale(cov, window)?;
            let trunc = resolve_target_scale(cov, truncation)?;
            let cert = cert_at_squared_scale(cov.target(), &trunc, 3, depth, "ghost")?;
            let along = match transfer_scale {
                Some(s) => Some(resolve_target_scale(cov, s)?),
                None => None,
            };
            let report = ghost_quotient_bound(
                a,
                &u,
                cov.big_family(),
                &trunc,
                &cert,
                along.as_ref().map(|v| (cov, v)),
                1e-8,
            )?;
            let details = format!(
                "epsilon {}, entries {}, non-ghost flagged: {}",
                sig12(report.epsilon),
                report.entries.len(),
                report.flagged_non_ghost
            );
            outcome(report.pass, details)
        }
        CheckSpec::RipsLift { scale, max_dim } => {
            let u = resolve_source_scale(cov, scale)?;
            let report = rips_lift_check(cov, &u, *max_dim, DEFAULT_SIMPLEX_CAP)?;
            let details = if report.all_pass() {
                format!("minimal index {:?}", report.overall_minimal_index())
            } else {
                format!("{:?}", report.failures())
            };
            outcome(report.all_pass(), details)
        }
    })
}

/// Execute every check declared by the manifest at `dir/manifest.json`.
pub fn run_suite(dir: &Path, depth: usize, tolerance: f64) -> Result<SuiteReport, SuiteError> {
    let manifest: Manifest = io::load_json(&dir.join("manifest.json"))?;
    let loaded = load(dir, &manifest)?;
    let mut outcomes = Vec::new();
    for spec in &manifest.checks {
        outcomes.push(run_check(spec, &loaded, depth, tolerance)?);
    }
    let pass = outcomes.iter().all(|o| o.pass);
    Ok(SuiteReport { scenario: manifest.scenario, outcomes, pass })
}

/// Parameters accepted by [`emit_scenario`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ScenarioParams {
    Tower { m: u32, sizes: Vec<u32> },
    Annulus { window: u32, circumference: u32, mask_radius: u32 },
    ConeTower { m: u32, n: u32, levels: u32 },
}

/// Generate a scenario into a directory: space, covering and operator files
/// plus the manifest. The covering is verified before anything is written.
pub fn emit_scenario(params: &ScenarioParams, dir: &Path) -> Result<Manifest, SuiteError> {
    std::fs::create_dir_all(dir).map_err(IoError::from)?;
    let manifest = match params {
        ScenarioParams::Tower { m, sizes } => {
            let t = scenario::tower(*m, sizes)?;
            io::save_space(&dir.join("target.json"), t.covering.target())?;
            io::save_space(&dir.join("source.json"), t.covering.source())?;
            io::save_covering(&dir.join("covering.json"), &t.covering)?;
            io::save_operator(&dir.join("op_shift.json"), &scenario::shift_operator(&t))?;
            io::save_operator(
                &dir.join("op_averaging.json"),
                &scenario::averaging_projection(&t),
            )?;
            Manifest {
                scenario: "tower".into(),
                covering: "covering.json".into(),
                mask: None,
                operators: [
                    ("shift".to_string(), "op_shift.json".to_string()),
                    ("averaging".to_string(), "op_averaging.json".to_string()),
                ]
                .into_iter()
                .collect(),
                checks: vec![
                    CheckSpec::VerifyCovering,
                    CheckSpec::VerifyGcovering,
                    CheckSpec::Roundtrip { operator: "shift".into(), scale: "V1".into() },
                    CheckSpec::NormBound { operator: "shift".into(), scale: "V1".into() },
                    CheckSpec::TraceSquare { operator: "averaging".into(), scale: "Vfull".into() },
                    CheckSpec::Ghost {
                        operator: "averaging".into(),
                        window: "diag".into(),
                        truncation: "V1".into(),
                        transfer_scale: Some("Vfull".into()),
                    },
                    CheckSpec::RipsLift { scale: "U1".into(), max_dim: 2 },
                ],
            }
        }
        ScenarioParams::Annulus { window, circumference, mask_radius } => {
            let a = scenario::annulus(*window, *circumference, *mask_radius)?;
            io::save_space(&dir.join("target.json"), a.covering.target())?;
            io::save_space(&dir.join("source.json"), a.covering.source())?;
            io::save_covering(&dir.join("covering.json"), &a.covering)?;
            io::save_json(
                &dir.join("mask.json"),
                &MaskFile { points: a.mask.iter().cloned().collect() },
            )?;
            Manifest {
                scenario: "annulus".into(),
                covering: "covering.json".into(),
                mask: Some("mask.json".into()),
                operators: BTreeMap::new(),
                checks: vec![CheckSpec::VerifyCoveringMasked],
            }
        }
        ScenarioParams::ConeTower { m, n, levels } => {
            let cone = scenario::cone_tower(*m, *n, *levels)?;
            io::save_space(&dir.join("target.json"), cone.covering.target())?;
            io::save_space(&dir.join("source.json"), cone.covering.source())?;
            io::save_covering(&dir.join("covering.json"), &cone.covering)?;
            Manifest {
                scenario: "cone-tower".into(),
                covering: "covering.json".into(),
                mask: None,
                operators: BTreeMap::new(),
                checks: vec![CheckSpec::VerifyCovering],
            }
        }
    };
    io::save_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
