//! `coarse`: desk-scale coarse geometry from the command line.
//!
//! Exit codes: 0 when every requested check passes, 1 when a verification
//! reports a violation (or a search comes back empty), 2 on input or schema
//! errors.

use clap::{Args, Parser, Subcommand};
use coarse::dimension::{dimension_at_scale, lift_cover, SearchStrategy};
use coarse::io;
use coarse::multiscale::{cone_model, rips_complex, squeeze_model, MultiscaleSpace, Schedule, DEFAULT_SIMPLEX_CAP};
use coarse::operators::ghost_measure;
use coarse::space::{BigFamily, Entourage, FiniteCoarseSpace};
use coarse::suite::{emit_scenario, run_suite, sig12, ScenarioParams};
use coarse::transfer::{
    ghost_quotient_bound, inverse_transfer, transfer_operator, verify_trace_square,
};
use serde_json::json;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "coarse", version, about = "finite models of coarse geometry: coverings, transfers, traces")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Seed for randomized checks (reserved for suite extensions)
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Numerical tolerance for trace and roundtrip comparisons
    #[arg(long, global = true, default_value_t = 1e-9)]
    tolerance: f64,
    /// Composition depth for generated-structure membership
    #[arg(long, global = true, default_value_t = 3)]
    depth: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the branched coarse covering axioms at every scale
    VerifyCovering {
        covering: PathBuf,
        /// Restrict the quantified source points to this mask file
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Verify the deck action: homomorphism, invariance, free transitivity
    VerifyGcovering { covering: PathBuf },
    /// Transfer an operator on the target along the covering
    Transfer {
        covering: PathBuf,
        operator: PathBuf,
        #[arg(long)]
        scale: String,
        /// Write the transferred operator here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Push an equivariant operator on the source down to the target
    InverseTransfer {
        covering: PathBuf,
        operator: PathBuf,
        #[arg(long)]
        scale: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Component-wise traces of an endomorphism
    Trace {
        operator: PathBuf,
        /// Covering supplying the deck action for equivariant traces
        #[arg(long)]
        equivariant: Option<PathBuf>,
    },
    /// The trace/transfer identity per matched component
    L2check {
        covering: PathBuf,
        operator: PathBuf,
        #[arg(long)]
        scale: String,
    },
    /// Search for a dimension certificate at a scale
    Asdim {
        space: PathBuf,
        #[arg(long)]
        scale: String,
        #[arg(long, default_value_t = 2)]
        max_mult: usize,
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lift a cover of the target along the covering
    LiftCover {
        covering: PathBuf,
        cover: PathBuf,
        #[arg(long)]
        scale: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the Rips complex of a space at a scale
    Rips {
        space: PathBuf,
        #[arg(long)]
        scale: String,
        #[arg(long, default_value_t = 3)]
        max_dim: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the discretized cone over a space
    Cone {
        space: PathBuf,
        /// Comma-separated entourage names, one per level, non-increasing
        #[arg(long)]
        schedule: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the height big family here
        #[arg(long)]
        family_out: Option<PathBuf>,
    },
    /// Emit the discretized squeezing space over a space
    Squeeze {
        space: PathBuf,
        #[arg(long)]
        copies: u32,
        #[arg(long)]
        schedule: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        family_out: Option<PathBuf>,
    },
    /// Ghost measure and the quotient-norm chain for an operator
    Ghost {
        operator: PathBuf,
        /// Window scale (an entourage name of the operator's space, or "diag")
        #[arg(long)]
        scale: String,
        /// Big family file: [{"index": k, "subset": [...]}, ...]
        #[arg(long)]
        bigfamily: PathBuf,
        /// Truncation scale for the quotient-norm chain
        #[arg(long)]
        truncation: Option<String>,
    },
    /// Generate a scenario directory with covering, operators and manifest
    Scenario {
        #[command(subcommand)]
        which: ScenarioCommand,
    },
    /// Run every check declared in a scenario directory's manifest
    Suite { dir: PathBuf },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Tower of cycle coverings with a cyclic deck group
    Tower {
        #[arg(long, default_value_t = 3)]
        m: u32,
        /// Comma-separated odd, strictly increasing cycle sizes
        #[arg(long, default_value = "5,7,9,11")]
        sizes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Windowed universal covering of a circle with an interior mask
    Annulus {
        #[arg(long, default_value_t = 40)]
        window: u32,
        #[arg(long, default_value_t = 9)]
        circumference: u32,
        #[arg(long, default_value_t = 3)]
        mask_radius: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cone over a tower sheet with a shrinking schedule
    ConeTower {
        #[arg(long, default_value_t = 3)]
        m: u32,
        #[arg(long, default_value_t = 5)]
        n: u32,
        #[arg(long, default_value_t = 5)]
        levels: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Violation(String),
}

type CliResult = Result<(), CliError>;

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn resolve_scale(space: &FiniteCoarseSpace, name: &str) -> Result<Entourage, CliError> {
    match name {
        "diag" => Ok(space.diagonal()),
        "full" => Ok(Entourage::full_on(&space.point_set())),
        _ => space.entourage(name).cloned().map_err(input),
    }
}

fn parse_schedule(space: &FiniteCoarseSpace, names: &str) -> Result<Schedule, CliError> {
    let levels = names
        .split(',')
        .map(|n| resolve_scale(space, n.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    Schedule::new(levels).map_err(input)
}

fn print_report(report: &coarse::covering::VerificationReport) -> bool {
    for c in &report.checks {
        let scale = c.scale.as_deref().unwrap_or("-");
        let idx = c.z_index.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
        let tag = if c.pass { "PASS" } else { "FAIL" };
        let mut line = format!("[{tag}] {} scale={scale} index={idx}", c.condition);
        if !c.pass {
            line.push_str(&format!(
                " witness_pairs={:?} witness_points={:?} {}",
                c.witness_pairs, c.witness_points, c.note
            ));
        }
        println!("{line}");
    }
    report.all_pass()
}

fn save_family(path: &Path, family: &BigFamily) -> Result<(), CliError> {
    let members: Vec<serde_json::Value> = family
        .members()
        .iter()
        .map(|(k, z)| json!({"index": k, "subset": z.iter().collect::<Vec<_>>()}))
        .collect();
    let text = serde_json::to_string_pretty(&members).map_err(input)?;
    std::fs::write(path, text + "\n").map_err(input)
}

fn run(cli: Cli) -> CliResult {
    let GlobalOpts { seed: _seed, tolerance, depth } = cli.global;
    match cli.command {
        Command::VerifyCovering { covering, mask } => {
            let cov = io::load_covering(&covering).map_err(input)?;
            let report = match mask {
                Some(path) => {
                    let file: io::MaskFile = io::load_json(&path).map_err(input)?;
                    cov.verify_masked(&file.points.into_iter().collect(), depth)
                }
                None => cov.verify(depth),
            };
            if print_report(&report) {
                Ok(())
            } else {
                Err(CliError::Violation("covering axioms violated".into()))
            }
        }
        Command::VerifyGcovering { covering } => {
            let cov = io::load_covering(&covering).map_err(input)?;
            let report = cov.verify_deck(depth).map_err(input)?;
            if print_report(&report) {
                Ok(())
            } else {
                Err(CliError::Violation("deck covering axioms violated".into()))
            }
        }
        Command::Transfer { covering, operator, scale, out } => {
            let cov = io::load_covering(&covering).map_err(input)?;
            let a = io::load_operator(&operator).map_err(input)?;
            let v = resolve_scale(cov.target(), &scale)?;
            let result = transfer_operator(&cov, &a, &v).map_err(input)?;
            println!(
                "{}",
                json!({
                    "z_index": result.z_index,
                    "scale": scale,
                    "blocks": result.operator.blocks().len(),
                    "propagation_pairs": result.operator.propagation().len(),
                })
            );
            if let Some(path) = out {
                io::save_operator(&path, &result.operator).map_err(input)?;
            }
            Ok(())
        }
        Command::InverseTransfer { covering, operator, scale, out } => {
            let cov = io::load_covering(&covering).map_err(input)?;
            let b = io::load_operator(&operator).map_err(input)?;
            let b = coarse::scenario::equip_with_deck(&b, &cov).map_err(input)?;
            let v = resolve_scale(cov.target(), &scale)?;
            let result = inverse_transfer(&cov, &b, &v).map_err(input)?;
            println!(
                "{}",
                json!({
                    "z_index": result.z_index,
                    "scale": scale,
                    "blocks": result.operator.blocks().len(),
                })
            );
            if let Some(path) = out {
                io::save_operator(&path, &result.operator).map_err(input)?;
            }
            Ok(())
        }
        Command::Trace { operator, equivariant } => {
            let a = io::load_operator(&operator).map_err(input)?;
            match equivariant {
                None => {
                    let comps = a.domain.space.coarse_components();
                    let mut rows = Vec::new();
                    for comp in comps {
                        let t = coarse::transfer::trace_plain(&a, &comp).map_err(input)?;
                        rows.push(json!({
                            "component": comp.iter().next(),
                            "trace": [t.re, t.im],
                        }));
                    }
                    println!("{}", json!({"kind": "matrix-trace", "components": rows}));
                }
                Some(cov_path) => {
                    let cov = io::load_covering(&cov_path).map_err(input)?;
                    let a = coarse::scenario::equip_with_deck(&a, &cov).map_err(input)?;
                    let deck = cov.deck().ok_or_else(|| input("covering has no deck"))?;
                    let comps = a.domain.space.coarse_components();
                    // group components into deck orbits
                    let mut seen: BTreeSet<u32> = BTreeSet::new();
                    let mut rows = Vec::new();
                    for comp in &comps {
                        let rep = *comp.iter().next().unwrap();
                        if seen.contains(&rep) {
                            continue;
                        }
                        let mut region = comp.clone();
                        for &x in comp {
                            region.extend(deck.orbit(x));
                        }
                        seen.extend(region.iter().cloned());
                        let f_dom =
                            coarse::transfer::lowest_id_fundamental_domain(deck, &region);
                        let t = coarse::transfer::trace_equivariant(&a, &region, &f_dom)
                            .map_err(input)?;
                        rows.push(json!({
                            "orbit": region.iter().next(),
                            "fundamental_domain_size": f_dom.len(),
                            "trace": [t.re, t.im],
                        }));
                    }
                    println!("{}", json!({"kind": "matrix-trace", "equivariant": true, "orbits": rows}));
                }
            }
            Ok(())
        }
        Command::L2check { covering, operator, scale } => {
            let cov = io::load_covering(&covering).map_err(input)?;
            let a = io::load_operator(&operator).map_err(input)?;
            let v = resolve_scale(cov.target(), &scale)?;
            let report = verify_trace_square(&cov, &a, &v, tolerance).map_err(input)?;
            for p in &report.pairs {
                let tag = if p.ok { "PASS" } else { "FAIL" };
                println!(
                    "[{tag}] component {} over orbit {}: plain {} + {}i, equivariant {} + {}i",
                    p.target_component,
                    p.source_orbit,
                    sig12(p.plain.0),
                    sig12(p.plain.1),
                    sig12(p.equivariant.0),
                    sig12(p.equivariant.1),
                );
            }
            if report.pass {
                Ok(())
            } else {
                Err(CliError::Violation("trace identity violated".into()))
            }
        }
        Command::Asdim { space, scale, max_mult, exact, out } => {
            let sp = io::load_space(&space).map_err(input)?;
            let u = resolve_scale(&sp, &scale)?;
            let strategy = if exact { SearchStrategy::Exact } else { SearchStrategy::Greedy };
            match dimension_at_scale(&sp, &u, max_mult, strategy, depth).map_err(input)? {
                Some(cert) => {
                    println!(
                        "{}",
                        json!({
                            "found": true,
                            "multiplicity": cert.multiplicity(),
                            "dimension": cert.dimension,
                            "parts": cert.cover.parts().len(),
                        })
                    );
                    if let Some(path) = out {
                        io::save_json(&path, &io::CertificateFile::from_certificate(&cert))
                            .map_err(input)?;
                    }
                    Ok(())
                }
                None => {
                    println!("{}", json!({"found": false}));
                    Err(CliError::Violation(format!(
                        "no certificate with multiplicity <= {max_mult}"
                    )))
                }
            }
        }
        Command::LiftCover { covering, cover, scale, out } => {
            let cov = io::load_covering(&covering).map_err(input)?;
            let file: io::CoverFile = io::load_json(&cover).map_err(input)?;
            let w = file.into_cover();
            let v = resolve_scale(cov.target(), &scale)?;
            let lifted = lift_cover(&cov, &w, &v).map_err(input)?;
            println!(
                "{}",
                json!({
                    "z_index": lifted.z_index,
                    "parts": lifted.cover.parts().len(),
                    "multiplicity": lifted.cover.multiplicity(),
                    "verified": lifted.report.all_pass(),
                })
            );
            if let Some(path) = out {
                io::save_json(&path, &io::CoverFile::from_cover(&lifted.cover)).map_err(input)?;
            }
            if lifted.report.all_pass() {
                Ok(())
            } else {
                Err(CliError::Violation("lifted cover failed verification".into()))
            }
        }
        Command::Rips { space, scale, max_dim, out } => {
            let sp = io::load_space(&space).map_err(input)?;
            let u = resolve_scale(&sp, &scale)?;
            let complex = rips_complex(&sp, &u, max_dim, DEFAULT_SIMPLEX_CAP).map_err(input)?;
            println!(
                "{}",
                json!({
                    "vertices": complex.vertices.len(),
                    "simplices": complex.simplices.len(),
                    "by_dimension": (0..=max_dim).map(|d| complex.dim_count(d)).collect::<Vec<_>>(),
                })
            );
            if let Some(path) = out {
                io::save_json(&path, &complex).map_err(input)?;
            }
            Ok(())
        }
        Command::Cone { space, schedule, out, family_out } => {
            let sp = io::load_space(&space).map_err(input)?;
            let sched = parse_schedule(&sp, &schedule)?;
            let model = cone_model(&MultiscaleSpace { base: sp, schedule: sched }).map_err(input)?;
            println!(
                "{}",
                json!({"points": model.space.points().len(), "levels": model.levels})
            );
            if let Some(path) = out {
                io::save_space(&path, &model.space).map_err(input)?;
            }
            if let Some(path) = family_out {
                save_family(&path, &model.big_family)?;
            }
            Ok(())
        }
        Command::Squeeze { space, copies, schedule, out, family_out } => {
            let sp = io::load_space(&space).map_err(input)?;
            let sched = parse_schedule(&sp, &schedule)?;
            let model = squeeze_model(&MultiscaleSpace { base: sp, schedule: sched }, copies)
                .map_err(input)?;
            println!(
                "{}",
                json!({"points": model.space.points().len(), "copies": model.levels})
            );
            if let Some(path) = out {
                io::save_space(&path, &model.space).map_err(input)?;
            }
            if let Some(path) = family_out {
                save_family(&path, &model.big_family)?;
            }
            Ok(())
        }
        Command::Ghost { operator, scale, bigfamily, truncation } => {
            let a = io::load_operator(&operator).map_err(input)?;
            let u = resolve_scale(&a.domain.space, &scale)?;
            let members: Vec<io::BigFamilyMemberFile> =
                io::load_json(&bigfamily).map_err(input)?;
            let family = BigFamily::new(
                members
                    .into_iter()
                    .map(|m| (m.index, m.subset.into_iter().collect()))
                    .collect(),
            )
            .map_err(input)?;
            match truncation {
                None => {
                    for (k, value) in ghost_measure(&a, &u, &family) {
                        println!("index {k}: {}", sig12(value));
                    }
                    Ok(())
                }
                Some(name) => {
                    let trunc = resolve_scale(&a.domain.space, &name)?;
                    let cert = dimension_at_scale(
                        &a.domain.space,
                        &trunc.compose(&trunc),
                        3,
                        SearchStrategy::Greedy,
                        depth,
                    )
                    .map_err(input)?
                    .ok_or_else(|| input("no certificate at the truncation scale"))?;
                    let report =
                        ghost_quotient_bound(&a, &u, &family, &trunc, &cert, None, 1e-8)
                            .map_err(input)?;
                    for e in &report.entries {
                        let tag = if e.ok { "PASS" } else { "FAIL" };
                        println!(
                            "[{tag}] index {}: restricted {} <= {} (ghost measure {})",
                            e.z_index,
                            sig12(e.restricted_norm),
                            sig12(e.bound),
                            sig12(e.ghost_measure),
                        );
                    }
                    println!(
                        "epsilon {}, non-ghost flagged: {}",
                        sig12(report.epsilon),
                        report.flagged_non_ghost
                    );
                    if report.pass {
                        Ok(())
                    } else {
                        Err(CliError::Violation("quotient-norm chain violated".into()))
                    }
                }
            }
        }
        Command::Scenario { which } => {
            let (params, out) = match which {
                ScenarioCommand::Tower { m, sizes, out } => {
                    let sizes: Vec<u32> = sizes
                        .split(',')
                        .map(|s| s.trim().parse().map_err(input))
                        .collect::<Result<_, _>>()?;
                    (ScenarioParams::Tower { m, sizes }, out)
                }
                ScenarioCommand::Annulus { window, circumference, mask_radius, out } => {
                    (ScenarioParams::Annulus { window, circumference, mask_radius }, out)
                }
                ScenarioCommand::ConeTower { m, n, levels, out } => {
                    (ScenarioParams::ConeTower { m, n, levels }, out)
                }
            };
            let manifest = emit_scenario(&params, &out).map_err(input)?;
            println!(
                "{}",
                json!({
                    "scenario": manifest.scenario,
                    "dir": out,
                    "checks": manifest.checks.len(),
                })
            );
            Ok(())
        }
        Command::Suite { dir } => {
            let report = run_suite(&dir, depth, tolerance).map_err(input)?;
            print!("{}", report.render());
            if report.pass {
                Ok(())
            } else {
                Err(CliError::Violation("suite reported violations".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Violation(msg)) => {
            eprintln!("violation: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
