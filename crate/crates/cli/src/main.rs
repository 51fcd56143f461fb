use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use dgsmm::driver::OuterConfig;
use dgsmm::harness::{
    csv_string, diffusion_limit_methods, observed_orders, run_crooked_pipe, run_diffusion_limit, run_mms,
    standard_methods, write_csv, CrookedPipeCase, MmsCase,
};
use dgsmm::linalg::PreconditionerKind;
use dgsmm::lo_diffusion::{BoundaryMode, IpMode, LoConfig, LoMethod, Variant};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Case {
    Mms,
    DiffusionLimit,
    CrookedPipe,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    P1,
    Ldg,
    Ip,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Consistent,
    Independent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BcArg {
    Half,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IpModeArg {
    Mip,
    Plain,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecondArg {
    None,
    Jacobi,
    Sgs,
    Ic0,
}

/// DG S_N transport with SMM acceleration: benchmark runner.
///
/// Without --lo every case runs its standard method list. Tables are written
/// as CSV to stdout, or to files in --out-dir.
#[derive(Debug, Parser)]
#[command(name = "solver", version)]
struct Cli {
    case: Case,
    /// Low-order method; omit to run the whole method list.
    #[arg(long)]
    lo: Option<Method>,
    #[arg(long, value_enum, default_value = "consistent")]
    variant: VariantArg,
    /// Boundary treatment; defaults to half for consistent, full for independent.
    #[arg(long)]
    bc: Option<BcArg>,
    /// Angular order (level symmetric).
    #[arg(long)]
    sn: Option<usize>,
    /// mms: meshes 8, 16, ..., 8·2^L. diffusion-limit: 8·2^L. crooked-pipe:
    /// base mesh scaled by 2^L (negative coarsens).
    #[arg(long, allow_hyphen_values = true)]
    refine: Option<i32>,
    /// Anderson depth (0 = plain fixed point).
    #[arg(long, default_value_t = 0)]
    anderson: usize,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long)]
    inner_tol: Option<f64>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Crooked pipe TOML file (the shipped default is used otherwise).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Interior penalty constant C.
    #[arg(long)]
    ip_c: Option<f64>,
    #[arg(long, value_enum)]
    ip_mode: Option<IpModeArg>,
    /// LDG switch vector, e.g. "1,1".
    #[arg(long, value_parser = parse_pair)]
    ldg_w: Option<[f64; 2]>,
    #[arg(long, value_enum)]
    preconditioner: Option<PrecondArg>,
    /// Diffusion-limit ε values, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-1, 1e-2, 1e-3, 1e-4])]
    epsilon: Vec<f64>,
    /// Directory for CSV outputs (tables, lineouts, per-iteration records).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(format!("expected two comma-separated numbers, got '{s}'")),
    }
}

impl Cli {
    fn methods(&self, default: Vec<LoConfig>) -> Result<Vec<LoConfig>> {
        let mut list = match self.lo {
            None => default,
            Some(m) => {
                let method = match m {
                    Method::P1 => LoMethod::P1,
                    Method::Ldg => LoMethod::Ldg,
                    Method::Ip => LoMethod::Ip,
                };
                let variant = match self.variant {
                    VariantArg::Consistent => Variant::Consistent,
                    VariantArg::Independent => Variant::Independent,
                };
                let bc = match (self.bc, variant) {
                    (Some(BcArg::Half), _) => BoundaryMode::Half,
                    (Some(BcArg::Full), _) => BoundaryMode::Full,
                    (None, Variant::Independent) => BoundaryMode::Full,
                    (None, Variant::Consistent) => BoundaryMode::Half,
                };
                vec![LoConfig::new(method, variant, bc)]
            }
        };
        for cfg in &mut list {
            if let Some(v) = self.inner_tol {
                cfg.inner_tol = v;
            }
            if let Some(v) = self.max_inner {
                cfg.max_inner = v;
            }
            if let Some(v) = self.ip_c {
                cfg.ip_c = v;
            }
            if let Some(m) = self.ip_mode {
                cfg.ip_mode = match m {
                    IpModeArg::Mip => IpMode::Mip,
                    IpModeArg::Plain => IpMode::Plain,
                };
            }
            if let Some(w) = self.ldg_w {
                cfg.ldg_w = w;
            }
            if let Some(p) = self.preconditioner {
                cfg.preconditioner = match p {
                    PrecondArg::None => PreconditionerKind::None,
                    PrecondArg::Jacobi => PreconditionerKind::Jacobi,
                    PrecondArg::Sgs => PreconditionerKind::Sgs,
                    PrecondArg::Ic0 => PreconditionerKind::Ic0,
                };
            }
            cfg.validate().with_context(|| format!("method {}", cfg.label()))?;
        }
        Ok(list)
    }
}

fn emit<T: serde::Serialize>(out_dir: Option<&Path>, name: &str, rows: &[T]) -> Result<()> {
    match out_dir {
        Some(dir) => {
            let path = dir.join(name);
            write_csv(&path, rows).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            println!("# {name}");
            print!("{}", csv_string(rows)?);
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(d) = &cli.out_dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let out = cli.out_dir.as_deref();
    match cli.case {
        Case::Mms => {
            let case = MmsCase { sn: cli.sn.unwrap_or(4), tol: cli.outer_tol.unwrap_or(1e-10), ..MmsCase::default() };
            let level = cli.refine.unwrap_or(3);
            if level < 0 {
                bail!("--refine must be non-negative for mms");
            }
            let sizes: Vec<usize> = (0..=level).map(|l| 8usize << l).collect();
            let mut methods = cli.methods(standard_methods())?;
            if cli.inner_tol.is_none() {
                methods.iter_mut().for_each(|m| m.inner_tol = 1e-12);
            }
            let outer = OuterConfig {
                tol: case.tol,
                max_iters: cli.max_outer.unwrap_or(1000),
                anderson_depth: cli.anderson,
                history_csv: None,
            };
            let rows = run_mms(&case, &sizes, &methods, &outer);
            emit(out, "mms_errors.csv", &rows)?;
            emit(out, "mms_orders.csv", &observed_orders(&rows))?;
            Ok(rows.iter().all(|r| r.ok()))
        }
        Case::DiffusionLimit => {
            let methods = cli.methods(diffusion_limit_methods())?;
            let n = 8usize << cli.refine.unwrap_or(0).max(0);
            let (rows, lines) = run_diffusion_limit(&cli.epsilon, &methods, n, cli.max_outer.unwrap_or(1000));
            emit(out, "diffusion_limit_iterations.csv", &rows)?;
            emit(out, "diffusion_limit_lineout.csv", &lines)?;
            // Non-convergence is a recorded result here, not a failure.
            Ok(rows.iter().all(|r| r.status == "ok" || r.status.starts_with("not converged")))
        }
        Case::CrookedPipe => {
            let mut case = match &cli.config {
                Some(p) => CrookedPipeCase::from_path(p).with_context(|| format!("reading {}", p.display()))?,
                None => CrookedPipeCase::default_case(),
            };
            case = case.with_refinement(cli.refine.unwrap_or(0))?;
            if let Some(sn) = cli.sn {
                case.sn = sn;
            }
            if let Some(t) = cli.outer_tol {
                case.tolerances.outer = t;
            }
            if let Some(t) = cli.inner_tol {
                case.tolerances.inner = t;
            }
            if let Some(m) = cli.max_outer {
                case.tolerances.max_outer = m;
            }
            let methods = cli.methods(case.method_list()?)?;
            let (rows, lines) = run_crooked_pipe(&case, &methods, cli.anderson, out)?;
            emit(out, "crooked_pipe.csv", &rows)?;
            emit(out, "crooked_pipe_lineout.csv", &lines)?;
            Ok(rows.iter().all(|r| r.status == "ok"))
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => {}
        Ok(false) => {
            eprintln!("one or more rows failed");
            std::process::exit(1);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
