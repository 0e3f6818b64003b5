//! Command-line driver for batch verification runs.
//!
//! Exit codes: 0 all checks passed, 1 a verification failed, 2 usage error.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dupin::catalog::{classify_two_curvature, standard_entries, CatalogEntry, Registry};
use dupin::conformal::{conformal_tensors, lift_signature};
use dupin::error::Error;
use dupin::hypersurface::{dupin_check, moebius_curvature};
use dupin::jet::StencilSpec;
use dupin::linalg::random_pseudo_orthogonal;
use dupin::moebius::{transform_immersion, verify_moebius_invariance};
use dupin::report::{render_report, run_verify, ReportFormat, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "dupin",
    about = "Conformal invariants of spacelike hypersurfaces",
    version
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalArgs {
    /// Tolerance for expected-value checks.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Base seed for random conformal transformations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sample points per chart dimension.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Output format: json or text.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Optional key=value config file supplying defaults for the above.
    #[arg(long, global = true)]
    config: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Catalog inspection.
    Catalog {
        #[command(subcommand)]
        what: CatalogCommand,
    },
    /// Print the invariants of a surface at a chart point.
    Invariants {
        #[arg(long)]
        surface: String,
        /// Comma-separated chart coordinates; defaults to the chart center.
        #[arg(long)]
        point: Option<String>,
    },
    /// Run the full structure-identity suite over a sample grid.
    Verify {
        #[arg(long)]
        surface: String,
        /// Optional single check to run: moebius-invariance.
        #[arg(long)]
        check: Option<String>,
        /// Number of seeded transformations for the invariance check.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Skip the finite-difference curvature checks (Gauss, trace r3/r4).
        #[arg(long, default_value_t = false)]
        fast: bool,
    },
    /// Check the Dupin property over a sample grid.
    Dupin {
        #[arg(long)]
        surface: String,
    },
    /// Apply a seeded conformal transformation and report coverage and
    /// invariance deviation.
    Transform {
        #[arg(long)]
        surface: String,
        /// Target space-form curvature: -1, 0, or 1 (defaults to the source).
        #[arg(long, allow_hyphen_values = true)]
        target_c: Option<i32>,
    },
    /// Two-curvature classification of Lemma-type hypersurfaces.
    Classify2 {
        #[arg(long)]
        surface: String,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// List registered families and standard entry ids.
    List,
}

struct Settings {
    tol: f64,
    seed: u64,
    grid: usize,
    format: ReportFormat,
}

fn load_config(path: &str) -> Result<BTreeMap<String, String>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parameter(format!("cannot read config {path}: {e}")))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Parameter(format!("{path}:{}: expected key=value", lineno + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn resolve_settings(g: &GlobalArgs) -> Result<Settings, Error> {
    let config = match &g.config {
        Some(path) => load_config(path)?,
        None => BTreeMap::new(),
    };
    let from_cfg = |key: &str| config.get(key).cloned();
    let parse_err = |key: &str, v: &str| Error::Parameter(format!("bad config value {key}={v}"));

    let tol = match (g.tol, from_cfg("tol")) {
        (Some(v), _) => v,
        (None, Some(s)) => s.parse().map_err(|_| parse_err("tol", &s))?,
        (None, None) => 1e-6,
    };
    let seed = match (g.seed, from_cfg("seed")) {
        (Some(v), _) => v,
        (None, Some(s)) => s.parse().map_err(|_| parse_err("seed", &s))?,
        (None, None) => 1,
    };
    let grid = match (g.grid, from_cfg("grid")) {
        (Some(v), _) => v,
        (None, Some(s)) => s.parse().map_err(|_| parse_err("grid", &s))?,
        (None, None) => 3,
    };
    let format = match (&g.format, from_cfg("format")) {
        (Some(v), _) => v.parse()?,
        (None, Some(s)) => s.parse()?,
        (None, None) => ReportFormat::Text,
    };
    Ok(Settings {
        tol,
        seed,
        grid,
        format,
    })
}

fn build(registry: &Registry, id: &str) -> Result<CatalogEntry, Error> {
    registry.build(id)
}

fn parse_point(spec: &str) -> Result<Vec<f64>, Error> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parameter(format!("bad coordinate `{s}`")))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(pass) => {
            if pass {
                ExitCode::from(0)
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                // Bad invocation: unknown surfaces, malformed parameters.
                Error::UnknownSurface(_) | Error::Parameter(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let settings = resolve_settings(&cli.global)?;
    let registry = Registry::standard();
    let stencil = StencilSpec::default();
    let mut out = std::io::stdout().lock();

    match cli.command {
        Command::Catalog { what } => match what {
            CatalogCommand::List => {
                writeln!(&mut out, "families:").ok();
                for (name, desc) in registry.list() {
                    writeln!(&mut out, "  {name:<9} {desc}").ok();
                }
                writeln!(&mut out, "\nstandard entries:").ok();
                for id in standard_entries() {
                    writeln!(&mut out, "  {id}").ok();
                }
                Ok(true)
            }
        },
        Command::Invariants { surface, point } => {
            let entry = build(&registry, &surface)?;
            let imm = &entry.immersion;
            let p = match point {
                Some(s) => parse_point(&s)?,
                None => imm.base_point(),
            };
            let ct = conformal_tensors(imm, &p, settings.tol.min(1e-6), stencil)?;
            writeln!(&mut out, "surface: {}", entry.id).ok();
            writeln!(&mut out, "point:   {p:?}").ok();
            let lam: Vec<String> = ct
                .curvature
                .clusters
                .iter()
                .map(|c| format!("{:.10} (x{})", c.value, c.multiplicity))
                .collect();
            writeln!(&mut out, "lambda:  {}", lam.join(", ")).ok();
            writeln!(&mut out, "H:       {:.12}", ct.h).ok();
            writeln!(&mut out, "e^2tau:  {:.12}", ct.e2tau).ok();
            let bs: Vec<String> = ct
                .b_clusters
                .iter()
                .map(|c| format!("{:.10} (x{})", c.value, c.multiplicity))
                .collect();
            writeln!(&mut out, "b:       {}", bs.join(", ")).ok();
            writeln!(&mut out, "A frame: {:.8}", ct.a_frame).ok();
            writeln!(&mut out, "B frame: {:.8}", ct.b_frame).ok();
            writeln!(&mut out, "C frame: {:.3e}", ct.c_frame).ok();
            let vals: Vec<f64> = ct.curvature.clusters.iter().map(|c| c.value).collect();
            for i in 0..vals.len() {
                for j in (i + 1)..vals.len() {
                    for k in (j + 1)..vals.len() {
                        if let Ok(m) = moebius_curvature(&vals, i, j, k) {
                            writeln!(&mut out, "M_{}{}{}:   {m:.12}", i + 1, j + 1, k + 1).ok();
                        }
                    }
                }
            }
            for note in &entry.expected.notes {
                writeln!(&mut out, "note: {note}").ok();
            }
            Ok(true)
        }
        Command::Verify {
            surface,
            check,
            seeds,
            fast,
        } => {
            let entry = build(&registry, &surface)?;
            let moebius_seeds = match check.as_deref() {
                Some("moebius-invariance") => seeds.max(1),
                Some(other) => return Err(Error::Parameter(format!("unknown check `{other}`"))),
                None => seeds,
            };
            let opts = VerifyOptions {
                grid: settings.grid,
                expected_tol: settings.tol,
                cluster_tol: settings.tol.min(1e-6),
                stencil,
                moebius_seeds,
                seed: settings.seed,
                skip_curvature: fast || check.as_deref() == Some("moebius-invariance"),
            };
            let report = run_verify(&entry, &opts)?;
            let bytes = render_report(&report, settings.format)?;
            out.write_all(&bytes).ok();
            Ok(report.pass)
        }
        Command::Dupin { surface } => {
            let entry = build(&registry, &surface)?;
            let imm = &entry.immersion;
            let samples = imm.sample_grid(settings.grid, 2.0 * stencil.reach());
            let report = dupin_check(imm, &samples, settings.tol.min(1e-6), settings.tol, stencil)?;
            writeln!(&mut out, "surface:  {}", entry.id).ok();
            writeln!(&mut out, "pattern:  {:?}", report.pattern).ok();
            writeln!(&mut out, "proper:   {}", report.proper).ok();
            writeln!(
                &mut out,
                "max scaled derivative: {:.3e}",
                report.max_scaled_derivative
            )
            .ok();
            writeln!(
                &mut out,
                "dupin:    {}",
                if report.pass { "pass" } else { "FAIL" }
            )
            .ok();
            Ok(report.pass)
        }
        Command::Transform { surface, target_c } => {
            let entry = build(&registry, &surface)?;
            let imm = &entry.immersion;
            let target = target_c.unwrap_or(imm.space_form.c);
            let t = random_pseudo_orthogonal(lift_signature(imm.n), settings.seed);
            let (timm, coverage) = transform_immersion(imm, &t, target)?;
            writeln!(&mut out, "surface:   {}", entry.id).ok();
            writeln!(&mut out, "target c:  {target}").ok();
            writeln!(&mut out, "coverage:  {coverage:.3}").ok();
            let probe = timm
                .sample_grid(settings.grid, 0.0)
                .into_iter()
                .next()
                .ok_or(Error::ChartEscape)?;
            let x = timm.position(&probe)?;
            writeln!(
                &mut out,
                "quadric residual: {:.3e}",
                timm.space_form.quadric_residual(timm.n, &x)
            )
            .ok();
            if target == imm.space_form.c {
                let samples = imm.sample_grid(settings.grid, 2.0 * stencil.reach());
                let dev = verify_moebius_invariance(imm, &t, &samples, settings.tol.min(1e-6))?;
                writeln!(&mut out, "invariance deviation: {dev:.3e}").ok();
                return Ok(dev < settings.tol.max(1e-6));
            }
            Ok(true)
        }
        Command::Classify2 { surface } => {
            let entry = build(&registry, &surface)?;
            let imm = &entry.immersion;
            let samples = imm.sample_grid(settings.grid.min(3), 2.0 * stencil.reach());
            let result = classify_two_curvature(imm, &samples, settings.tol.min(1e-6), stencil)?;
            writeln!(&mut out, "surface:       {}", entry.id).ok();
            writeln!(&mut out, "mu:            {:.12}", result.mu).ok();
            writeln!(&mut out, "lambda_hat:    {:.12}", result.lambda_hat).ok();
            writeln!(&mut out, "mu^2-2lambda:  {:.12}", result.e_norm).ok();
            writeln!(&mut out, "case:          {}", result.case.label()).ok();
            writeln!(&mut out, "fit residual:  {:.3e}", result.fit_residual).ok();
            writeln!(
                &mut out,
                "b closed-form deviation: {:.3e}",
                result.b_closed_form_dev
            )
            .ok();
            Ok(result.fit_residual < settings.tol.max(1e-6))
        }
    }
}
