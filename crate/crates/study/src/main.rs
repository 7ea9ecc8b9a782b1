use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hdivproj::best_approx::error_report;
use hdivproj::local_solve::Variant;
use hdivproj::model_problems::{apriori_entry, solve_mixed, PoissonProblem};
use hdivproj::projector::{project_hdiv, projector_report};
use hdivproj::space::RtnSpace;
use hdivproj_study::config::{load_mesh, StudyConfig};
use hdivproj_study::study::{csv_string, render_assertions, resolve_field, run_study, write_outputs};
use hdivproj_study::verify::{verify, VerifyOptions};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hdivproj", version, about = "Commuting H(div) projector toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite; exit code 0 iff every gating check passes.
    Verify(VerifyArgs),
    /// Convergence study over a mesh hierarchy; writes study.csv and summary.json.
    Study(Common),
    /// Project a field and report the projector's measured properties.
    Project(Common),
    /// Local and global best-approximation errors of a field.
    BestApprox(Common),
    /// Mixed finite element solution of a manufactured Poisson problem.
    SolveMixed(ProblemArgs),
    /// Least-squares mixed solution of a manufactured Poisson problem.
    SolveLs(ProblemArgs),
    /// Generate, refine or inspect meshes.
    #[command(subcommand)]
    Mesh(MeshCommand),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `structured:n`, `lshape:n` or a mesh file.
    #[arg(long)]
    mesh: Option<String>,
    /// `all-dirichlet`, `all-neumann`, `neumann:left,top` or a labels file.
    #[arg(long)]
    labels: Option<String>,
    /// Polynomial degree or comma-separated list.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<usize>>,
    /// Lagrange degree for least-squares runs.
    #[arg(long)]
    q: Option<usize>,
    /// `sine_divfree`, `cubic`, `exp`, `lshape_singular[:alpha]`, `random_rtn:p[:seed]`.
    #[arg(long)]
    field: Option<String>,
    /// Number of mesh levels including the coarsest.
    #[arg(long)]
    refinements: Option<usize>,
    /// `def31` (θ in RTN_p) or `def52` (θ in RTN_{p-1}).
    #[arg(long)]
    variant: Option<Variant>,
    /// Fixed quadrature degree instead of the per-degree default.
    #[arg(long)]
    quad_degree: Option<usize>,
    /// Allowed deviation of fitted rates from the expected ones.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed for random discrete fields.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<StudyConfig> {
        let mut cfg = match &self.config {
            Some(path) => StudyConfig::from_json_file(path)?,
            None => StudyConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        take!(field, mesh, p, refinements, variant, seed);
        if self.labels.is_some() {
            cfg.labels = self.labels.clone();
        }
        if self.q.is_some() {
            cfg.q = self.q;
        }
        if self.quad_degree.is_some() {
            cfg.quad_degree = self.quad_degree;
        }
        if self.tol.is_some() {
            cfg.tol = self.tol;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Structured mesh sizes.
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    p: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for verify.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ProblemArgs {
    /// `sine` or `polynomial`.
    #[arg(long, default_value = "sine")]
    problem: String,
    #[arg(long, default_value = "structured:4")]
    mesh: String,
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Lagrange degree (default `p + 1`).
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    quad_degree: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Write a generated mesh to a file.
    Gen {
        #[arg(long, default_value = "structured:2")]
        mesh: String,
        #[arg(long)]
        labels: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine a mesh uniformly `refinements` times.
    Refine {
        #[arg(long)]
        mesh: String,
        #[arg(long)]
        labels: Option<String>,
        #[arg(long, default_value_t = 1)]
        refinements: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print counts, mesh size and shape regularity.
    Inspect {
        #[arg(long)]
        mesh: String,
        #[arg(long)]
        labels: Option<String>,
    },
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn single_degree(cfg: &StudyConfig) -> Result<usize> {
    match cfg.p.as_slice() {
        [p] => Ok(*p),
        _ => bail!("this command takes a single degree, got {:?}", cfg.p),
    }
}

fn problem(name: &str, mesh: Arc<hdivproj::mesh::Mesh>) -> Result<PoissonProblem> {
    Ok(match name {
        "sine" => PoissonProblem::sine(mesh)?,
        "polynomial" => PoissonProblem::polynomial(mesh)?,
        other => bail!("unknown problem `{other}` (sine|polynomial)"),
    })
}

/// Returns whether every assertion passed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify(args) => {
            set_threads(args.threads)?;
            let opts = VerifyOptions {
                sizes: args.sizes,
                degrees: args.p,
                seed: args.seed,
                ..Default::default()
            };
            let report = verify(&opts);
            print!("{}", report.render());
            if let Some(dir) = args.out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            }
            Ok(report.passed)
        }
        Command::Study(common) => {
            let cfg = common.config()?;
            set_threads(cfg.threads)?;
            let out = run_study(&cfg)?;
            print!("{}", render_assertions(&out.summary));
            match &cfg.out {
                Some(dir) => write_outputs(&out, dir)?,
                None => print!("{}", csv_string(&out.rows)?),
            }
            Ok(out.summary.passed)
        }
        Command::Project(common) => {
            let cfg = common.config()?;
            set_threads(cfg.threads)?;
            let p = single_degree(&cfg)?;
            let mesh = Arc::new(load_mesh(&cfg.mesh, cfg.labels.as_deref())?);
            let space = RtnSpace::new(mesh, p)?;
            let field = resolve_field(&cfg.field_spec()?, &space)?;
            let policy = cfg.policy();
            let proj = project_hdiv(&*field, &space, cfg.variant, &policy)?;
            let rep = projector_report(&*field, &proj, &policy)?;
            let summary = json!({
                "field": cfg.field,
                "p": p,
                "variant": cfg.variant,
                "ndofs": space.ndofs(),
                "commute_abs": proj.commute_abs,
                "commute_rel": proj.commute_rel,
                "proj_err": rep.proj_err,
                "max_approx_const": rep.max_approx_const,
                "max_stab_const": rep.max_stab_const,
                "max_hdiv_const": rep.max_hdiv_const,
                "global_stab_const": rep.global_stab_const,
                "max_patch_stability": proj.max_patch_stability(),
                "max_compat_residual": proj.max_compat_residual(),
                "warnings": proj.warnings.len() + rep.warnings.len(),
            });
            print_json(&summary)?;
            if let Some(dir) = &cfg.out {
                std::fs::create_dir_all(dir)?;
                let full = json!({ "summary": summary, "coeffs": proj.sigma.coeffs(), "records": rep.records });
                std::fs::write(dir.join("projection.json"), serde_json::to_string_pretty(&full)? + "\n")?;
            }
            Ok(proj.commute_rel <= 1e-10)
        }
        Command::BestApprox(common) => {
            let cfg = common.config()?;
            set_threads(cfg.threads)?;
            let p = single_degree(&cfg)?;
            let mesh = Arc::new(load_mesh(&cfg.mesh, cfg.labels.as_deref())?);
            let space = RtnSpace::new(mesh, p)?;
            let field = resolve_field(&cfg.field_spec()?, &space)?;
            let report = error_report(&*field, &space, &cfg.policy(), p >= 1)?;
            let mut value = serde_json::to_value(&report)?;
            if let Some(dir) = &cfg.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("best_approx.json"), serde_json::to_string_pretty(&value)? + "\n")?;
            }
            if let Some(obj) = value.as_object_mut() {
                obj.remove("elements");
            }
            print_json(&value)?;
            Ok(report.ratio_glob_over_loc.is_none_or(|r| r >= 1.0 - 1e-9))
        }
        Command::SolveMixed(args) => {
            set_threads(args.threads)?;
            let mesh = Arc::new(load_mesh(&args.mesh, None)?);
            let prob = problem(&args.problem, mesh)?;
            let policy = hdivproj::fields::QuadPolicy::with_override(args.quad_degree);
            let sol = solve_mixed(&prob, args.p, &policy)?;
            let entry = apriori_entry(&prob, args.p, args.q.unwrap_or(args.p + 1), &policy)?;
            print_json(&json!({
                "problem": prob.name,
                "p": args.p,
                "ndofs": sol.sigma.coeffs().len(),
                "residual": sol.residual,
                "div_error": sol.div_error,
                "flux_error": entry.mixed_err,
                "flux_best": entry.flux_best,
                "mixed_vs_best": entry.mixed_vs_best,
            }))?;
            Ok(entry.mixed_vs_best <= 1e-8)
        }
        Command::SolveLs(args) => {
            set_threads(args.threads)?;
            let mesh = Arc::new(load_mesh(&args.mesh, None)?);
            let prob = problem(&args.problem, mesh)?;
            let policy = hdivproj::fields::QuadPolicy::with_override(args.quad_degree);
            let entry = apriori_entry(&prob, args.p, args.q.unwrap_or(args.p + 1), &policy)?;
            print_json(&serde_json::to_value(&entry)?)?;
            Ok(entry.ls_ratio <= hdivproj::model_problems::LS_APRIORI_CONSTANT && entry.div_bound_slack >= -1e-9)
        }
        Command::Mesh(cmd) => {
            match cmd {
                MeshCommand::Gen { mesh, labels, out } => {
                    load_mesh(&mesh, labels.as_deref())?.save(&out)?;
                }
                MeshCommand::Refine { mesh, labels, refinements, out } => {
                    let mut m = load_mesh(&mesh, labels.as_deref())?;
                    for _ in 0..refinements {
                        m = m.refine_uniform();
                    }
                    m.save(&out)?;
                }
                MeshCommand::Inspect { mesh, labels } => {
                    let m = load_mesh(&mesh, labels.as_deref())?;
                    print_json(&serde_json::to_value(m.summary())?)?;
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
