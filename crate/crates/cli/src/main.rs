mod config;
mod output;

use std::f64::consts::FRAC_PI_2;
use std::process::ExitCode;

use alterstrip::blayer::BoundaryLayerField;
use alterstrip::corrector::{truncated_expansion_with, ExpansionOptions, ExpansionState};
use alterstrip::fiber::{converged_bottom, eigs, remainder_bound, MeshLevel};
use alterstrip::homogenized::{
    cell_gap_bound, cell_resolvent_gap, fit_rate, strip_gap_bound, strip_resolvent_gap, tau_grid, ModeCutoff, PowerOptions,
};
use alterstrip::validate::{validate, Suite};
use alterstrip::{band_table, build_mesh_with, make_cell, FiberCell};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::{Common, ConfigError, Format, RunConfig};
use output::{csv, emit, num};

#[derive(Parser)]
#[command(name = "alterstrip", version, about = "Spectral experiments for a strip with alternating boundary conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the boundary layer X and its gradient on the half-strip
    Blayer(Common),
    /// Expansion coefficients mu_1..mu_M
    Mu(Common),
    /// Band functions on a quasimomentum grid with remainder bounds
    Bands(Common),
    /// Bottom of the spectrum against the truncated expansion
    Bottom(Common),
    /// Fiber resolvent gap per quasimomentum
    Resolvent(Common),
    /// Strip resolvent gap at eta = eps^(1/2) and a fitted rate
    Sweep(Common),
    /// Run check suites; exit 2 on any violated bound
    Validate {
        #[arg(long, default_value = "all")]
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, thiserror::Error)]
enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] alterstrip::Error),
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! core_err {
    ($($t:ty),*) => {$(
        impl From<$t> for RunError {
            fn from(e: $t) -> Self {
                RunError::Core(e.into())
            }
        }
    )*};
}
core_err!(
    alterstrip::geometry::GeometryError,
    alterstrip::blayer::BoundaryLayerError,
    alterstrip::corrector::CorrectorError,
    alterstrip::fiber::FiberError,
    alterstrip::homogenized::HomogenizedError
);

struct Outcome {
    body: String,
    summary: String,
    violated: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("STRIP_HOMOG_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli.command) {
        Ok(violated) => ExitCode::from(if violated { 2 } else { 0 }),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<bool, RunError> {
    let (cfg, outcome) = match command {
        Command::Blayer(c) => {
            let cfg = c.resolve()?;
            let o = blayer(&cfg)?;
            (cfg, o)
        }
        Command::Mu(c) => {
            let cfg = c.resolve()?;
            let o = mu(&cfg)?;
            (cfg, o)
        }
        Command::Bands(c) => {
            let cfg = c.resolve()?;
            let o = bands(&cfg)?;
            (cfg, o)
        }
        Command::Bottom(c) => {
            let cfg = c.resolve()?;
            let o = bottom(&cfg)?;
            (cfg, o)
        }
        Command::Resolvent(c) => {
            let cfg = c.resolve()?;
            let o = resolvent(&cfg)?;
            (cfg, o)
        }
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let o = sweep(&cfg)?;
            (cfg, o)
        }
        Command::Validate { suite, common } => {
            let cfg = common.resolve()?;
            let suite: Suite = suite.parse().map_err(|_| ConfigError::Invalid(format!("unknown suite '{suite}'")))?;
            let o = validate_cmd(&cfg, suite)?;
            (cfg, o)
        }
    };
    emit(cfg.out.as_deref(), &outcome.body)?;
    eprintln!("{}", outcome.summary);
    Ok(outcome.violated)
}

fn json_only(cfg: &RunConfig, what: &str) -> Result<(), ConfigError> {
    if cfg.format == Some(Format::Csv) {
        return Err(ConfigError::Invalid(format!("{what} only writes json")));
    }
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn table(cfg: &RunConfig, header: &[&str], rows: Vec<Vec<String>>, json_rows: serde_json::Value) -> String {
    match cfg.format {
        Some(Format::Json) => pretty(&json_rows),
        _ => csv(header, &rows),
    }
}

fn blayer(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let field = BoundaryLayerField::new(cfg.eta)?;
    let (n1, n2) = (41, 40);
    let mut rows = Vec::with_capacity(n1 * n2);
    let mut recs = Vec::with_capacity(n1 * n2);
    let mut worst = 0.0f64;
    for j in 1..=n2 {
        let y = cfg.height * j as f64 / n2 as f64;
        for i in 0..n1 {
            let x = -FRAC_PI_2 + std::f64::consts::PI * (i as f64 + 0.5) / n1 as f64;
            let v = field.value(x, y)?;
            let (gx, gy) = field.gradient(x, y)?;
            worst = worst.max(v.abs());
            rows.push(vec![num(x), num(y), num(v), num(gx), num(gy)]);
            recs.push(json!({"xi1": x, "xi2": y, "X": v, "dX1": gx, "dX2": gy}));
        }
    }
    let bound = alterstrip::blayer::sharp_bound(cfg.eta);
    Ok(Outcome {
        body: table(cfg, &["xi1", "xi2", "X", "dX1", "dX2"], rows, json!(recs)),
        summary: format!("blayer: {} samples, max|X| = {worst:.6e}, bound {bound:.6e}, margin {:.6e}", n1 * n2, bound - worst),
        violated: false,
    })
}

fn expansion_options(cfg: &RunConfig) -> ExpansionOptions {
    ExpansionOptions::default().with_height(cfg.height)
}

fn mu(cfg: &RunConfig) -> Result<Outcome, RunError> {
    json_only(cfg, "mu")?;
    let mut st = ExpansionState::new(cfg.eta, expansion_options(cfg))?;
    st.advance_to(cfg.order)?;
    let lam = st.lambda(cfg.eps);
    let body = pretty(&json!({
        "eta": cfg.eta,
        "M": cfg.order,
        "mu": st.mu,
        "tails": st.tails,
        "lambda_M_at": {"eps": cfg.eps, "value": lam},
    }));
    let summary = format!("mu: eta = {}, M = {}, Lambda_M({}) = {lam:.10}", cfg.eta, cfg.order, cfg.eps);
    Ok(Outcome { body, summary, violated: false })
}

fn cell(cfg: &RunConfig) -> Result<FiberCell, RunError> {
    let spec = make_cell(cfg.eps, cfg.eta)?;
    Ok(FiberCell::new(spec, build_mesh_with(&spec, &cfg.mesh)?)?)
}

fn bands(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let c = cell(cfg)?;
    let grid = tau_grid(cfg.tau_points);
    let t = band_table(&c, &grid, cfg.n_bands)?;
    let (mut rows, mut recs) = (Vec::new(), Vec::new());
    let mut margin = f64::INFINITY;
    for (k, tau) in t.tau_grid.iter().enumerate() {
        for n in 1..=cfg.n_bands {
            let (lam, r) = (t.lambdas[k][n - 1], t.remainders[k][n - 1]);
            let b = remainder_bound(n, cfg.eps, cfg.eta, cfg.delta);
            let inside = tau.abs() <= 1.0 - cfg.delta;
            let within = inside.then(|| r.abs() <= b);
            if inside {
                margin = margin.min(b - r.abs());
            }
            let w = within.map_or("na".to_owned(), |w| w.to_string());
            rows.push(vec![num(*tau), n.to_string(), num(lam), num(r), num(b), w]);
            recs.push(json!({"tau": tau, "n": n, "lambda": lam, "remainder": r, "bound_rhs": b, "within_bound": within}));
        }
    }
    let violated = margin < 0.0;
    Ok(Outcome {
        body: table(cfg, &["tau", "n", "lambda", "remainder", "bound_rhs", "within_bound"], rows, json!(recs)),
        summary: format!(
            "bands: {} rows, worst remainder margin for |tau| <= {} is {margin:.6e}",
            grid.len() * cfg.n_bands,
            1.0 - cfg.delta
        ),
        violated,
    })
}

fn bottom(cfg: &RunConfig) -> Result<Outcome, RunError> {
    json_only(cfg, "bottom")?;
    let spec = make_cell(cfg.eps, cfg.eta)?;
    let (lambda1, levels, uncertainty) = if cfg.levels == 1 {
        let c = FiberCell::new(spec, build_mesh_with(&spec, &cfg.mesh)?)?;
        let l = eigs(&c.assemble(0.0)?, 1)?.values[0];
        let lv = MeshLevel { h: cfg.mesh.h, transverse_h: cfg.mesh.transverse_h, unknowns: c.dim(), lambda1: l };
        (l, vec![lv], None)
    } else {
        let r = converged_bottom(&spec, &cfg.mesh, cfg.levels, std::f64::consts::FRAC_1_SQRT_2)?;
        (r.extrapolated, r.levels, Some(r.uncertainty))
    };
    let lm = truncated_expansion_with(cfg.eps, cfg.eta, cfg.order, expansion_options(cfg))?.value;
    let diff = lambda1 - lm;
    let l = cfg.eta.sin().ln().abs();
    let tol = 5.0 * cfg.eps.powi(3) * (l.powi(3) + 1.0);
    let body = pretty(&json!({
        "eps": cfg.eps, "eta": cfg.eta, "lambda1": lambda1, "lambda_M": lm, "M": cfg.order, "diff": diff,
        "uncertainty": uncertainty, "mesh_levels": levels,
    }));
    let summary = if cfg.order == 2 {
        format!(
            "bottom: lambda1 = {lambda1:.10}, Lambda_2 = {lm:.10}, |diff| = {:.3e}, bound {tol:.3e}, margin {:.3e}",
            diff.abs(),
            tol - diff.abs()
        )
    } else {
        format!("bottom: lambda1 = {lambda1:.10}, Lambda_{} = {lm:.10}, diff = {diff:.3e}", cfg.order)
    };
    Ok(Outcome { body, summary, violated: false })
}

fn resolvent(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let c = cell(cfg)?;
    let opts = PowerOptions { seed: cfg.seed, ..Default::default() };
    let grid: Vec<f64> = tau_grid(cfg.tau_points).into_iter().filter(|t| t.abs() <= 1.0 - cfg.delta).collect();
    let (mut rows, mut recs) = (Vec::new(), Vec::new());
    let mut margin = f64::INFINITY;
    for tau in grid {
        let g = cell_resolvent_gap(&c, tau, cfg.delta, &opts)?;
        margin = margin.min(g.bound - g.norm_estimate);
        rows.push(vec![num(cfg.eps), num(cfg.eta), num(tau), num(g.norm_estimate), num(g.bound), g.holds.to_string()]);
        recs.push(json!({"eps": cfg.eps, "eta": cfg.eta, "tau": tau, "gap_norm": g.norm_estimate, "bound": g.bound, "holds": g.holds}));
    }
    let bound = cell_gap_bound(cfg.eps, cfg.eta, cfg.delta);
    Ok(Outcome {
        body: table(cfg, &["eps", "eta", "tau", "gap_norm", "bound", "holds"], rows, json!(recs)),
        summary: format!("resolvent: {} tau values, bound {bound:.6e}, worst margin {margin:.6e}", recs.len()),
        violated: false,
    })
}

fn sweep(cfg: &RunConfig) -> Result<Outcome, RunError> {
    json_only(cfg, "sweep")?;
    let opts = PowerOptions { seed: cfg.seed, ..Default::default() };
    let probes = ModeCutoff { m_max: 2, n_max: 6 };
    let grid = tau_grid(cfg.tau_points);
    let mut points = Vec::new();
    let mut pairs = Vec::new();
    for eps in [0.2, 0.1, 0.05] {
        let eta = f64::sqrt(eps);
        let spec = make_cell(eps, eta)?;
        let c = FiberCell::new(spec, build_mesh_with(&spec, &cfg.mesh)?)?;
        let r = strip_resolvent_gap(&c, &grid, probes, &opts)?;
        pairs.push((eps, r.sup_norm_estimate));
        points.push(json!({"eps": eps, "eta": eta, "gap": r.sup_norm_estimate, "bound": r.bound, "holds": r.holds}));
    }
    let fit = fit_rate(&pairs);
    let body = pretty(&json!({
        "points": points,
        "fitted_exponent": fit.fitted_exponent,
        "fitted_prefactor": fit.fitted_prefactor,
    }));
    let b = strip_gap_bound(0.05, 0.05f64.sqrt());
    let summary = format!("sweep: gap ~ {:.3} eps^{:.3}, bound at eps = 0.05 is {b:.4}", fit.fitted_prefactor, fit.fitted_exponent);
    Ok(Outcome { body, summary, violated: false })
}

fn validate_cmd(cfg: &RunConfig, suite: Suite) -> Result<Outcome, RunError> {
    json_only(cfg, "validate")?;
    let rep = validate(suite, &cfg.check_params())?;
    for c in &rep.checks {
        eprintln!(
            "{} {:<40} {:>14.6e} <= {:<14.6e} margin {:.6e}",
            if c.holds { "PASS" } else { "FAIL" },
            c.check_id,
            c.lhs,
            c.rhs,
            c.margin
        );
    }
    let failed = rep.checks.iter().filter(|c| !c.holds).count();
    let body = pretty(&json!({
        "suite": rep.suite, "eps": rep.eps, "eta": rep.eta, "delta": rep.delta, "seed": rep.seed,
        "all_hold": rep.all_hold(), "checks": rep.checks,
    }));
    Ok(Outcome { body, summary: format!("validate {suite}: {} checks, {failed} failed", rep.checks.len()), violated: failed > 0 })
}
