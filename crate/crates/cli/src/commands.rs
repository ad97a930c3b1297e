//! Subcommand implementations. Each writes its files under the configured
//! output directory and returns a short human-readable summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use collab_core::curve::CurveSpecData;
use collab_core::evaluate::{fixed_point_value, FixedPointResult};
use collab_core::iterate::run;
use collab_core::simulate::estimate;
use collab_core::univariate::{merger_value, standalone_pair};
use collab_core::verify::{
    check_dominates, check_envelope_tol, check_supersolution, check_symmetry, compare_triple, residual_tol,
    CheckOutcome, ResidualReport,
};
use collab_core::{
    BoundaryPayoffs, CurveSpec, GridFunction, IterationRun, RegionLabel, StrategyPolicy, UnivariateValue,
};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{num, read_grid, write_grid, write_json, CsvSink, JsonLines, Provenance};

/// Sweeps discarded before contraction ratios are judged.
pub const BURN_IN: usize = 10;

pub struct Session {
    pub cfg: RunConfig,
    pub prov: Provenance,
    pub out: PathBuf,
}

impl Session {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let prov = Provenance { config_sha256: cfg.digest(), seed: cfg.seed };
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { cfg, prov, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn payoffs(&self) -> Result<BoundaryPayoffs> {
        Ok(BoundaryPayoffs::standalone(&self.cfg.model)?)
    }
}

/// The iteration run, its final curve spec and that spec's fixed-point value.
pub struct Converged {
    pub run: IterationRun,
    pub spec: CurveSpec,
    pub fixed: FixedPointResult,
}

pub fn converge(cfg: &RunConfig) -> Result<Converged> {
    let payoffs = BoundaryPayoffs::standalone(&cfg.model)?;
    let t = Instant::now();
    let run = run(&cfg.model, &payoffs, &cfg.iterate_options()?)?;
    info!("{} iterations in {:.2?}", run.states.len(), t.elapsed());
    let spec = run.final_spec().context("no iterations ran")?.clone();
    let t = Instant::now();
    let fixed = fixed_point_value(&spec, &cfg.model, &payoffs, cfg.grid()?, &cfg.fixed_point)?;
    info!("fixed point in {} sweeps, {:.2?}", fixed.sweeps, t.elapsed());
    Ok(Converged { run, spec, fixed })
}

fn write_profile(path: &Path, prov: &Provenance, v: &UnivariateValue, extent: f64, step: f64, col: &str) -> Result<()> {
    let mut sink = CsvSink::create(path, prov, &[col, "value"])?;
    let n = (extent / step).round() as usize;
    for k in 0..=n {
        let x = k as f64 * step;
        sink.row([num(x), num(v.value(x))])?;
    }
    sink.finish()?;
    Ok(())
}

pub fn solve_univariate(ctx: &Session, company: u8) -> Result<String> {
    let (v1, v2) = standalone_pair(&ctx.cfg.model)?;
    let v = match company {
        1 => v1,
        2 => v2,
        c => bail!("company must be 1 or 2, got {c}"),
    };
    let path = ctx.path(&format!("univariate_{company}.csv"));
    write_profile(&path, &ctx.prov, &v, ctx.cfg.profile_extent(), ctx.cfg.grid.step, "x")?;
    Ok(format!("company {company}: barrier {:.6} ({})\nwrote {}", v.barrier, v.optimality(), path.display()))
}

pub fn solve_merger(ctx: &Session) -> Result<String> {
    let t = Instant::now();
    let v = merger_value(&ctx.cfg.model)?;
    let elapsed = t.elapsed();
    let path = ctx.path("merger.csv");
    write_profile(&path, &ctx.prov, &v, ctx.cfg.profile_extent(), ctx.cfg.grid.step, "s")?;
    Ok(format!("merger: barrier {:.6} ({}) in {elapsed:.2?}\nwrote {}", v.barrier, v.optimality(), path.display()))
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogRecord<'a> {
    Start {
        v0_convention: String,
        v0_origin_payoff: f64,
        v0_origin_paper: f64,
    },
    Iteration {
        n: usize,
        vertex: [f64; 2],
        m1: f64,
        m2: f64,
        sup_delta: f64,
        min_delta: f64,
        curve_distance: Option<f64>,
        vertex_refined: bool,
        fallback: bool,
        envelope_pass: bool,
        residual_max_l: f64,
        residual_tol: f64,
        residual_pass: bool,
        diagnostics: &'a [String],
    },
    FixedPoint {
        sweeps: usize,
        last_sup_diff: f64,
        max_ratio_after_burn_in: Option<f64>,
        ratio_bound: f64,
    },
}

/// Largest contraction ratio after [`BURN_IN`] sweeps, ignoring differences
/// at rounding level.
pub fn max_ratio_after_burn_in(fixed: &FixedPointResult) -> Option<f64> {
    let scale = 1.0 + fixed.value.sup_abs();
    fixed.ratios(1e-10 * scale).into_iter().skip(BURN_IN).reduce(f64::max)
}

fn write_curves(path: &Path, prov: &Provenance, spec: &CurveSpec) -> Result<()> {
    let mut sink = CsvSink::create(path, prov, &["curve", "coordinate", "z", "x", "y"])?;
    for (u, z) in spec.xi1.abscissae().iter().zip(spec.xi1.values()) {
        let (x, y) = spec.a1_point(*u);
        sink.row(["xi1".to_string(), num(*u), num(*z), num(x), num(y)])?;
    }
    for (v, z) in spec.xi2.abscissae().iter().zip(spec.xi2.values()) {
        let (x, y) = spec.a2_point(*v);
        sink.row(["xi2".to_string(), num(*v), num(*z), num(x), num(y)])?;
    }
    sink.finish()?;
    Ok(())
}

fn write_fixed_point(path: &Path, prov: &Provenance, fixed: &FixedPointResult) -> Result<()> {
    let mut sink = CsvSink::create(path, prov, &["sweep", "sup_diff", "ratio"])?;
    for (k, d) in fixed.sup_diffs.iter().enumerate() {
        let ratio = if k == 0 { String::new() } else { num(d / fixed.sup_diffs[k - 1]) };
        sink.row([(k + 1).to_string(), num(*d), ratio])?;
    }
    sink.finish()?;
    Ok(())
}

pub fn iterate(ctx: &Session) -> Result<(String, Converged)> {
    let conv = converge(&ctx.cfg)?;
    let params = &ctx.cfg.model;
    let mut log = JsonLines::create(&ctx.path("iterations.jsonl"), &ctx.prov)?;
    log.record(&LogRecord::Start {
        v0_convention: ctx.cfg.v0_convention.to_string(),
        v0_origin_payoff: conv.run.v0_at_origin.0,
        v0_origin_paper: conv.run.v0_at_origin.1,
    })?;
    for s in &conv.run.states {
        let env = check_envelope_tol(&s.value, params, ctx.cfg.verify.envelope_tol * (1.0 + s.value.sup_abs()));
        log.record(&LogRecord::Iteration {
            n: s.n,
            vertex: [s.spec.vertex.0, s.spec.vertex.1],
            m1: s.spec.xi1.end(),
            m2: s.spec.xi2.end(),
            sup_delta: s.sup_delta,
            min_delta: s.min_delta,
            curve_distance: s.curve_distance,
            vertex_refined: s.vertex_refined,
            fallback: s.fallback,
            envelope_pass: env.pass,
            residual_max_l: s.residual_report.max_l_residual,
            residual_tol: s.residual_report.tol,
            residual_pass: s.residual_report.pass,
            diagnostics: &s.diagnostics,
        })?;
    }
    let max_ratio = max_ratio_after_burn_in(&conv.fixed);
    log.record(&LogRecord::FixedPoint {
        sweeps: conv.fixed.sweeps,
        last_sup_diff: conv.fixed.sup_diffs.last().copied().unwrap_or(0.0),
        max_ratio_after_burn_in: max_ratio,
        ratio_bound: conv.fixed.ratio_bound,
    })?;
    log.finish()?;
    write_grid(&ctx.path("iterate_value.csv"), &ctx.prov, conv.run.final_value())?;
    write_grid(&ctx.path("value.csv"), &ctx.prov, &conv.fixed.value)?;
    write_curves(&ctx.path("curve.csv"), &ctx.prov, &conv.spec)?;
    write_fixed_point(&ctx.path("fixed_point.csv"), &ctx.prov, &conv.fixed)?;
    write_json(&ctx.path("spec.json"), &ctx.prov, &conv.spec.to_data())?;
    let s = &conv.spec;
    let summary = format!(
        "{} iterations, vertex ({:.6}, {:.6}), M1 {:.6}, M2 {:.6}\nfixed point: {} sweeps, max ratio {} (bound {:.4})\nwrote {}",
        conv.run.states.len(),
        s.vertex.0,
        s.vertex.1,
        s.xi1.end(),
        s.xi2.end(),
        conv.fixed.sweeps,
        max_ratio.map_or("n/a".to_string(), |r| format!("{r:.4}")),
        conv.fixed.ratio_bound,
        ctx.out.display()
    );
    Ok((summary, conv))
}

pub fn read_spec(path: &Path, ctx: &Session) -> Result<CurveSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let data: CurveSpecData = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let spec = CurveSpec::from_data(data, &ctx.cfg.model)?;
    let ext = ctx.cfg.grid.extent;
    let reach = [spec.vertex.0, spec.vertex.1, spec.a1_point(spec.xi1.end()).0, spec.a2_point(spec.xi2.end()).1];
    if reach.iter().any(|&r| r > ext + 1e-12) {
        bail!(
            "curve spec reaches ({:.4}, {:.4}) beyond the grid extent {ext}",
            reach[2].max(reach[0]),
            reach[3].max(reach[1])
        );
    }
    Ok(spec.with_tolerance(0.5 * ctx.cfg.grid.step))
}

/// Vertex plus one state in each of `ℬ₀`, `ℬ₁`, `𝒞`, `ℬ₂`, clamped to the grid.
pub fn probe_states(spec: &CurveSpec, extent: f64) -> Vec<(f64, f64)> {
    let (xb, yb) = spec.vertex;
    let clamp = |v: f64| v.clamp(0.0, extent);
    let b0 = (clamp(xb + 1.0), clamp(yb + 1.0));
    let y1 = 0.5 * yb;
    let b1 = (clamp(spec.a1_abscissa(y1) + 1.0), y1);
    let x2 = 0.5 * xb;
    let b2 = (x2, clamp(spec.a2_ordinate(x2) + 1.0));
    let c = [(0.5 * xb, 0.5 * yb), (0.25 * xb, 0.25 * yb), (0.0, 0.0)]
        .into_iter()
        .find(|&(x, y)| spec.classify(x, y) == RegionLabel::C)
        .unwrap_or((0.0, 0.0));
    vec![(xb, yb), b0, b1, c, b2]
}

fn mc_states(ctx: &Session, spec: &CurveSpec, extra: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut states: Vec<(f64, f64)> = if ctx.cfg.simulate.states.is_empty() {
        probe_states(spec, ctx.cfg.grid.extent)
    } else {
        ctx.cfg.simulate.states.iter().map(|s| (s[0], s[1])).collect()
    };
    states.extend_from_slice(extra);
    states
}

#[derive(Debug, Clone, Serialize)]
pub struct McCheckRow {
    pub x: f64,
    pub y: f64,
    pub region: RegionLabel,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_std_error: f64,
    pub z_score: f64,
}

pub fn mc_check(ctx: &Session, spec: &CurveSpec, value: &GridFunction, states: &[(f64, f64)]) -> Result<Vec<McCheckRow>> {
    let payoffs = ctx.payoffs()?;
    let policy = StrategyPolicy::Curve(spec.clone());
    let mut rows = Vec::new();
    for &(x, y) in states {
        let e = estimate(&ctx.cfg.model, &payoffs, &policy, x, y, ctx.cfg.simulate.paths, ctx.cfg.seed);
        if e.capped > 0 {
            log::warn!("{} paths from ({x}, {y}) hit the event cap", e.capped);
        }
        let analytic = value.value(x, y);
        rows.push(McCheckRow {
            x,
            y,
            region: spec.classify(x, y),
            analytic,
            mc_mean: e.mean,
            mc_std_error: e.std_error,
            z_score: e.z_score(analytic),
        });
    }
    Ok(rows)
}

fn write_mc_rows(path: &Path, prov: &Provenance, rows: &[McCheckRow]) -> Result<()> {
    let mut sink = CsvSink::create(path, prov, &["x", "y", "region", "analytic", "mc_mean", "mc_std_error", "z_score"])?;
    for r in rows {
        sink.row([
            num(r.x),
            num(r.y),
            r.region.as_str().to_string(),
            num(r.analytic),
            num(r.mc_mean),
            num(r.mc_std_error),
            num(r.z_score),
        ])?;
    }
    sink.finish()?;
    Ok(())
}

pub fn evaluate_curve(ctx: &Session, spec_path: &Path, states: &[(f64, f64)]) -> Result<String> {
    let spec = read_spec(spec_path, ctx)?;
    let payoffs = ctx.payoffs()?;
    let fixed = fixed_point_value(&spec, &ctx.cfg.model, &payoffs, ctx.cfg.grid()?, &ctx.cfg.fixed_point)?;
    write_grid(&ctx.path("curve_value.csv"), &ctx.prov, &fixed.value)?;
    let states = mc_states(ctx, &spec, states);
    let rows = mc_check(ctx, &spec, &fixed.value, &states)?;
    write_mc_rows(&ctx.path("mc_check.csv"), &ctx.prov, &rows)?;
    let worst = rows.iter().map(|r| r.z_score).fold(0.0, f64::max);
    Ok(format!(
        "fixed point in {} sweeps; {} MC states, worst |z| {worst:.3}\nwrote {}",
        fixed.sweeps,
        rows.len(),
        ctx.out.display()
    ))
}

/// Policies selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PolicyKind {
    Curve,
    Barrier,
    MergerBarrier,
    PayNothing,
    TakeAndRun,
}

pub struct PolicyRequest<'a> {
    pub kind: PolicyKind,
    pub curve: Option<&'a Path>,
    pub level: Option<f64>,
    pub company: u8,
}

pub fn build_policy(ctx: &Session, req: &PolicyRequest<'_>) -> Result<StrategyPolicy> {
    let params = &ctx.cfg.model;
    Ok(match req.kind {
        PolicyKind::Curve => {
            let path = req.curve.context("--policy curve needs --curve FILE")?;
            StrategyPolicy::Curve(read_spec(path, ctx)?)
        }
        PolicyKind::Barrier => {
            if !(req.company == 1 || req.company == 2) {
                bail!("--company must be 1 or 2");
            }
            let level = match req.level {
                Some(l) => l,
                None => {
                    let (v1, v2) = standalone_pair(params)?;
                    if req.company == 1 {
                        v1.barrier
                    } else {
                        v2.barrier
                    }
                }
            };
            StrategyPolicy::Barrier { level, company: req.company }
        }
        PolicyKind::MergerBarrier => {
            let level = match req.level {
                Some(l) => l,
                None => merger_value(params)?.barrier,
            };
            StrategyPolicy::MergerBarrier { level }
        }
        PolicyKind::PayNothing => StrategyPolicy::PayNothing,
        PolicyKind::TakeAndRun => StrategyPolicy::TakeMoneyAndRun,
    })
}

pub fn simulate(ctx: &Session, req: &PolicyRequest<'_>, states: &[(f64, f64)]) -> Result<String> {
    let policy = build_policy(ctx, req)?;
    let mut list: Vec<(f64, f64)> = ctx.cfg.simulate.states.iter().map(|s| (s[0], s[1])).collect();
    list.extend_from_slice(states);
    if list.is_empty() {
        if let StrategyPolicy::Curve(spec) = &policy {
            list = probe_states(spec, ctx.cfg.grid.extent);
        } else {
            bail!("no states given: use --state X,Y or simulate.states in the config");
        }
    }
    if list.iter().any(|&(x, y)| x < 0.0 || y < 0.0) {
        bail!("states must be non-negative");
    }
    let payoffs = ctx.payoffs()?;
    let path = ctx.path("simulate.csv");
    let mut sink = CsvSink::create(&path, &ctx.prov, &["x", "y", "mean", "std_error", "paths", "capped"])?;
    let mut lines = Vec::new();
    for (x, y) in list {
        let e = estimate(&ctx.cfg.model, &payoffs, &policy, x, y, ctx.cfg.simulate.paths, ctx.cfg.seed);
        sink.row([num(x), num(y), num(e.mean), num(e.std_error), e.paths.to_string(), e.capped.to_string()])?;
        lines.push(format!("({x}, {y}): {:.6} ± {:.6}", e.mean, e.std_error));
    }
    sink.finish()?;
    lines.push(format!("wrote {}", path.display()));
    Ok(lines.join("\n"))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckSummary {
    fn from_outcome(c: &CheckOutcome) -> Self {
        Self { name: c.name.to_string(), pass: c.pass, detail: c.to_string() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub subject: String,
    pub supersolution_pass: bool,
    pub max_l_residual: f64,
    pub max_dx_residual: f64,
    pub max_dy_residual: f64,
    pub residual_tol: f64,
    pub checks: Vec<CheckSummary>,
    /// Bit `k` set when check `k` failed, in the order of `checks`.
    pub exit_code: i32,
}

/// Supersolution, envelope, Lipschitz, monotonicity and, for symmetric
/// models, symmetry of `value`.
pub fn verify_value(ctx: &Session, value: &GridFunction, spec: Option<&CurveSpec>, subject: &str) -> Result<(ResidualReport, VerifySummary)> {
    let params = &ctx.cfg.model;
    let payoffs = ctx.payoffs()?;
    let tol = residual_tol(value, params, ctx.cfg.verify.residual_factor);
    let report = check_supersolution(value, params, &payoffs, tol, spec).with_shape_checks(value, params);
    let scale = 1.0 + value.sup_abs();
    let mut checks = vec![CheckSummary {
        name: "supersolution".into(),
        pass: report.pass,
        detail: format!("max residual {:.4e}, tol {:.4e}", report.max_residual(), report.tol),
    }];
    checks.push(CheckSummary::from_outcome(&check_envelope_tol(value, params, ctx.cfg.verify.envelope_tol * scale)));
    checks.extend(report.lipschitz.iter().map(CheckSummary::from_outcome));
    checks.extend(report.monotone.iter().map(CheckSummary::from_outcome));
    if params.is_symmetric() {
        checks.push(CheckSummary::from_outcome(&check_symmetry(value, ctx.cfg.verify.symmetry_tol)));
    }
    let exit_code = checks.iter().enumerate().filter(|(_, c)| !c.pass).fold(0, |m, (k, _)| m | (1 << k));
    let summary = VerifySummary {
        subject: subject.to_string(),
        supersolution_pass: report.pass,
        max_l_residual: report.max_l_residual,
        max_dx_residual: report.max_dx_residual,
        max_dy_residual: report.max_dy_residual,
        residual_tol: report.tol,
        checks,
        exit_code,
    };
    Ok((report, summary))
}

pub struct VerifyRequest<'a> {
    pub value: Option<&'a Path>,
    pub curve: Option<&'a Path>,
    /// Check the take-the-money-and-run value instead.
    pub negative_control: bool,
}

pub fn verify(ctx: &Session, req: &VerifyRequest<'_>) -> Result<(String, i32)> {
    let grid = ctx.cfg.grid()?;
    let spec = req.curve.map(|p| read_spec(p, ctx)).transpose()?;
    let (value, spec, subject) = if req.negative_control {
        let payoffs = ctx.payoffs()?;
        let v0 = collab_core::iterate::take_run_value(&ctx.cfg.model, &payoffs, grid, ctx.cfg.v0_convention);
        (v0, None, "take-and-run".to_string())
    } else if let Some(p) = req.value {
        (read_grid(p, grid)?, spec, p.display().to_string())
    } else {
        let conv = converge(&ctx.cfg)?;
        (conv.fixed.value, Some(conv.spec), "converged".to_string())
    };
    let (report, summary) = verify_value(ctx, &value, spec.as_ref(), &subject)?;
    write_json(&ctx.path("verify.json"), &ctx.prov, &summary)?;
    let mut text = format!("{subject}\n{report}");
    if ctx.cfg.model.is_symmetric() {
        if let Some(c) = summary.checks.iter().find(|c| c.name == "symmetry") {
            text.push_str(&format!("  {}\n", c.detail));
        }
    }
    text.push_str(&format!("exit code {}", summary.exit_code));
    Ok((text, summary.exit_code))
}

pub fn compare(ctx: &Session, value: Option<&Path>) -> Result<String> {
    let grid = ctx.cfg.grid()?;
    let v = match value {
        Some(p) => read_grid(p, grid)?,
        None => converge(&ctx.cfg)?.fixed.value,
    };
    let payoffs = ctx.payoffs()?;
    let merger = merger_value(&ctx.cfg.model)?;
    let cmp = compare_triple(&v, &ctx.cfg.model, &payoffs, &merger)?;
    let path = ctx.path("compare.csv");
    let mut sink = CsvSink::create(&path, &ctx.prov, &["x", "y", "collaboration", "standalone", "merger_half"])?;
    for r in &cmp.rows {
        sink.row([num(r.x), num(r.y), num(r.collaboration), num(r.standalone), num(r.merger_half)])?;
    }
    sink.finish()?;
    Ok(format!(
        "min V - V_M/2: {:.6e} at {:?}\nmin V - V_S: {:.6e} at {:?}\nwrote {}",
        cmp.min_margin_merger,
        cmp.worst_merger_node,
        cmp.min_margin_standalone,
        cmp.worst_standalone_node,
        path.display()
    ))
}

/// Decreases of the iterates beyond `tol`, as one outcome per step.
pub fn monotone_iterates(run: &IterationRun, tol: f64) -> Vec<CheckOutcome> {
    let mut prev = &run.v0;
    run.states
        .iter()
        .map(|s| {
            let c = check_dominates(&s.value, prev, tol);
            prev = &s.value;
            c
        })
        .collect()
}
