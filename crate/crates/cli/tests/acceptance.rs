//! Acceptance gate on the shipped symmetric configuration. Prints one line per
//! criterion and exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use collab_cli::commands::{converge, max_ratio_after_burn_in, mc_check, monotone_iterates, probe_states, Converged};
use collab_cli::{RunConfig, Session};
use collab_core::iterate::take_run_value;
use collab_core::univariate::merger_value;
use collab_core::verify::{check_envelope_tol, check_supersolution, compare_triple, default_residual_tol};
use collab_core::{BoundaryPayoffs, RegionLabel};

struct Gate {
    lines: Vec<(bool, String)>,
}

impl Gate {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        let line = format!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config_path() -> PathBuf {
    workspace().join("configs/symmetric-example.toml")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_collab"))
}

fn run_bin(args: &[&str], out: &Path) -> (String, Duration) {
    let t = Instant::now();
    let o = bin()
        .arg("--config")
        .arg(config_path())
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    let elapsed = t.elapsed();
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    (String::from_utf8(o.stdout).unwrap(), elapsed)
}

fn merger_criterion(gate: &mut Gate, scratch: &Path) {
    let (stdout, elapsed) = run_bin(&["solve-merger"], &scratch.join("merger"));
    let b: f64 = stdout
        .split_whitespace()
        .skip_while(|w| *w != "barrier")
        .nth(1)
        .and_then(|w| w.parse().ok())
        .expect("barrier in output");
    let pass = (b - 2.77).abs() <= 0.02 && elapsed < Duration::from_secs(10);
    gate.record(1, "merger barrier", pass, format!("b* = {b:.5} (target 2.77 ± 0.02), {elapsed:.2?}"));
}

fn comparison_criteria(gate: &mut Gate, cfg: &RunConfig, payoffs: &BoundaryPayoffs, conv: &Converged) {
    let merger = merger_value(&cfg.model).unwrap();
    let cmp = compare_triple(&conv.fixed.value, &cfg.model, payoffs, &merger).unwrap();
    gate.record(
        2,
        "merger dominance",
        cmp.min_margin_merger > 0.0,
        format!("min V - V_M/2 = {:.4e} at {:?}", cmp.min_margin_merger, cmp.worst_merger_node),
    );
    gate.record(
        3,
        "stand-alone comparison",
        cmp.standalone_dominated(),
        format!("min V - V_S = {:.4e} at {:?}", cmp.min_margin_standalone, cmp.worst_standalone_node),
    );
}

fn iterate_criteria(gate: &mut Gate, cfg: &RunConfig, conv: &Converged) {
    let p = &cfg.model;
    let iterates: Vec<_> = std::iter::once(&conv.run.v0).chain(conv.run.states.iter().map(|s| &s.value)).collect();
    let failing: Vec<usize> = iterates
        .iter()
        .enumerate()
        .filter(|(_, v)| !check_envelope_tol(v, p, cfg.verify.envelope_tol * (1.0 + v.sup_abs())).pass)
        .map(|(n, _)| n)
        .collect();
    gate.record(
        4,
        "envelope",
        failing.is_empty(),
        format!(
            "{} iterates, bounds {:.5} and {:.1} above a1 x + a2 y, failing {:?}",
            iterates.len(),
            p.premium() / p.decay(),
            p.premium() / p.delta,
            failing
        ),
    );
    let mono = monotone_iterates(&conv.run, cfg.verify.monotone_tol);
    let worst = conv.run.states.iter().map(|s| s.min_delta).fold(f64::INFINITY, f64::min);
    gate.record(
        5,
        "monotone scheme",
        mono.iter().all(|c| c.pass),
        format!("min over n of min(V^n - V^(n-1)) = {worst:.4e}, tol {:.0e}", cfg.verify.monotone_tol),
    );
    let gap = iterates.iter().map(|v| v.symmetry_gap()).fold(conv.fixed.value.symmetry_gap(), f64::max);
    let mirror = conv.spec.mirror_gap();
    let half = 0.5 * cfg.grid.step;
    gate.record(
        6,
        "symmetry",
        gap <= cfg.verify.symmetry_tol && mirror <= half,
        format!("max |V(x,y) - V(y,x)| = {gap:.3e}, curve mirror gap {mirror:.3e} (tol {half})"),
    );
}

fn oracle_criterion(gate: &mut Gate, session: &Session, conv: &Converged) {
    let spec = conv.spec.clone().with_tolerance(0.5 * session.cfg.grid.step);
    let states = probe_states(&spec, session.cfg.grid.extent);
    let t = Instant::now();
    let rows = mc_check(session, &spec, &conv.fixed.value, &states).unwrap();
    let elapsed = t.elapsed();
    let regions: Vec<RegionLabel> = rows.iter().map(|r| r.region).collect();
    let covered = [RegionLabel::A0, RegionLabel::B0, RegionLabel::B1, RegionLabel::C].iter().all(|l| regions.contains(l));
    let worst = rows.iter().map(|r| r.z_score).fold(0.0, f64::max);
    for r in &rows {
        println!(
            "       {:>2} ({:.4}, {:.4}): analytic {:.6}, MC {:.6} ± {:.6}, |z| {:.2}",
            r.region.as_str(),
            r.x,
            r.y,
            r.analytic,
            r.mc_mean,
            r.mc_std_error,
            r.z_score
        );
    }
    gate.record(
        7,
        "oracle agreement",
        covered && worst <= 3.0 && rows.len() >= 5 && elapsed < Duration::from_secs(300),
        format!("{} states {:?}, {} paths, worst |z| {worst:.3}, {elapsed:.2?}", rows.len(), regions, session.cfg.simulate.paths),
    );
}

fn contraction_criterion(gate: &mut Gate, conv: &Converged) {
    let max = max_ratio_after_burn_in(&conv.fixed);
    let bound = conv.fixed.ratio_bound + 0.02;
    gate.record(
        8,
        "contraction",
        max.is_some_and(|m| m <= bound),
        format!(
            "{} sweeps, max ratio after burn-in {}, bound {bound:.4}",
            conv.fixed.sweeps,
            max.map_or("n/a".into(), |m| format!("{m:.4}"))
        ),
    );
}

fn residual_criterion(gate: &mut Gate, cfg: &RunConfig, payoffs: &BoundaryPayoffs, conv: &Converged) {
    let p = &cfg.model;
    let v = &conv.fixed.value;
    let report = check_supersolution(v, p, payoffs, default_residual_tol(v, p), Some(&conv.spec));
    let v0 = take_run_value(p, payoffs, v.grid, cfg.v0_convention);
    let control = check_supersolution(&v0, p, payoffs, default_residual_tol(&v0, p), None);
    gate.record(
        9,
        "supersolution residual",
        report.pass && !control.pass,
        format!(
            "converged max {:.4e} (tol {:.4e}); V0 control max {:.4e} (tol {:.4e}) {}",
            report.max_residual(),
            report.tol,
            control.max_residual(),
            control.tol,
            if control.pass { "passes" } else { "fails" }
        ),
    );
}

fn determinism_criterion(gate: &mut Gate, scratch: &Path) {
    let commands: [&[&str]; 4] = [
        &["iterate"],
        &["solve-merger"],
        &["compare"],
        &["simulate", "--policy", "merger-barrier", "--state", "1,1", "--state", "0.3,2"],
    ];
    let mut compared = 0;
    let mut diffs = Vec::new();
    for (k, args) in commands.iter().enumerate() {
        let a = scratch.join(format!("det-a-{k}"));
        let b = scratch.join(format!("det-b-{k}"));
        run_bin(args, &a);
        let mut with_threads = vec!["--threads", "2"];
        with_threads.extend_from_slice(args);
        run_bin(&with_threads, &b);
        for entry in std::fs::read_dir(&a).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_owned();
            compared += 1;
            if std::fs::read(&path).ok() != std::fs::read(b.join(&name)).ok() {
                diffs.push(name.to_string_lossy().into_owned());
            }
        }
    }
    gate.record(
        10,
        "determinism",
        diffs.is_empty() && compared > 0,
        format!("{compared} output files compared across reruns, differing {diffs:?}"),
    );
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&config_path()).expect("shipped config loads");
    cfg.output_dir = scratch.path().join("session");
    let session = Session::new(cfg.clone()).unwrap();
    let payoffs = BoundaryPayoffs::standalone(&cfg.model).unwrap();
    let mut gate = Gate { lines: Vec::new() };

    merger_criterion(&mut gate, scratch.path());
    let t = Instant::now();
    let conv = converge(&cfg).expect("pipeline runs");
    println!(
        "       pipeline: {} iterations + {} fixed-point sweeps in {:.2?}",
        conv.run.states.len(),
        conv.fixed.sweeps,
        t.elapsed()
    );
    comparison_criteria(&mut gate, &cfg, &payoffs, &conv);
    iterate_criteria(&mut gate, &cfg, &conv);
    oracle_criterion(&mut gate, &session, &conv);
    contraction_criterion(&mut gate, &conv);
    residual_criterion(&mut gate, &cfg, &payoffs, &conv);
    determinism_criterion(&mut gate, scratch.path());

    let failed = gate.lines.iter().filter(|l| !l.0).count();
    println!("acceptance: {} of {} criteria pass", gate.lines.len() - failed, gate.lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
