use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use simcert::bounds::{bound_rows, first_below, BOUND_TABLE_HEADER};
use simcert::csvio::{fmt17, Table};
use simcert::estimate::{
    fit_exponential_params, monte_carlo_envelope, simulate_ensemble, FitOptions, FittedParams,
};
use simcert::integrate::{chatter_band, propagate};
use simcert::sample::{delta_grid_with, GridOptions};
use simcert::verify::{self, check_invariance, Verdict, VerifyError};
use simcert::{StabilityParams, SystemModel, VerificationConfig};

use crate::config::{data, fill, required, usage, CliError, ConfigFile, List};
use crate::repro;
use crate::{
    BoundsArgs, Command, GridArgs, MontecarloArgs, ReproArgs, SimulateArgs, SweepArgs, VerifyArgs,
};

pub fn dispatch(command: Command, file: &mut ConfigFile) -> Result<u8, CliError> {
    match command {
        Command::Bounds(a) => bounds(a, file),
        Command::Montecarlo(a) => montecarlo(a, file),
        Command::Verify(a) => verify(a, file),
        Command::Sweep(a) => sweep(a, file),
        Command::Repro(a) => repro(a, file),
        Command::Simulate(a) => simulate(a, file),
        Command::Grid(a) => grid(a, file),
    }
}

/// Human-readable lines go to stdout when the CSV goes to a file and to
/// stderr when the CSV itself is on stdout.
struct Notes {
    to_stdout: bool,
}

impl Notes {
    fn for_output(out: &Option<PathBuf>) -> Self {
        Self {
            to_stdout: out.is_some(),
        }
    }

    fn line(&self, msg: impl AsRef<str>) {
        if self.to_stdout {
            println!("{}", msg.as_ref());
        } else {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn emit(mut table: Table, out: Option<&Path>, seed: u64) -> Result<(), CliError> {
    table.comments.insert(0, format!("seed={seed}"));
    match out {
        Some(path) => {
            let f = File::create(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            table
                .write(BufWriter::new(f))
                .map_err(|e| data(format!("{}: {e}", path.display())))
        }
        None => table.write(io::stdout().lock()).map_err(data),
    }
}

fn model_comments(t: &mut Table, model: &SystemModel) {
    t.comments.push(format!("model={}", model.name()));
    t.comments.push(format!("L={}", fmt17(model.lipschitz())));
    t.comments.push(format!("M={}", fmt17(model.jump())));
    t.comments
        .push(format!("r={}", fmt17(model.domain_radius())));
}

fn stability_comments(t: &mut Table, p: &StabilityParams) {
    t.comments.push(format!("k={}", fmt17(p.k)));
    t.comments.push(format!("lambda={}", fmt17(p.lambda)));
    t.comments.push(format!("r0={}", fmt17(p.r0)));
}

fn positive(v: f64, flag: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!(
            "--{flag} must be positive and finite, got {v}"
        )))
    }
}

fn bounds(mut a: BoundsArgs, file: &mut ConfigFile) -> Result<u8, CliError> {
    a.model.merge(file)?;
    a.time.merge(file)?;
    a.stability.merge(file)?;
    a.output.merge(file)?;
    fill(&mut a.stride, file, "stride")?;
    fill(&mut a.threshold, file, "threshold")?;
    let model = a.model.build()?;
    let p = a.stability.build(&model)?;
    let dt = a.time.dt()?;
    let max_steps = a.time.steps(1000)?;
    let stride = a.stride.unwrap_or(10);
    if stride == 0 || max_steps < stride {
        return Err(usage("--stride must be between 1 and --steps"));
    }
    let threshold = positive(a.threshold.unwrap_or(1e-3), "threshold")?;
    let kind = a.time.kind();
    let rows = bound_rows(
        model.lipschitz(),
        model.jump(),
        dt,
        kind,
        &p,
        (stride..=max_steps).step_by(stride),
    );
    let mut t = Table::new(BOUND_TABLE_HEADER.iter().map(|s| s.to_string()).collect());
    model_comments(&mut t, &model);
    stability_comments(&mut t, &p);
    t.comments.push(format!("dt={}", fmt17(dt)));
    t.comments.push(format!("integrator={kind}"));
    t.rows = rows.iter().map(|r| r.to_vec()).collect();

    let notes = Notes::for_output(&a.output.out);
    match first_below(&rows, threshold) {
        Some(r) => notes.line(format!(
            "both square-root terms below {threshold} from T = {} s (N = {})",
            r.horizon,
            (r.horizon / dt).round()
        )),
        None => notes.line(format!(
            "square-root terms stay above {threshold} up to the last row"
        )),
    }
    if let Some(r) = rows.last() {
        notes.line(format!(
            "at T = {} s: a = {:.6e}, b = {:.6e}",
            r.horizon, r.a, r.b
        ));
    }
    emit(t, a.output.out.as_deref(), a.output.seed())?;
    Ok(0)
}

fn montecarlo(mut a: MontecarloArgs, file: &mut ConfigFile) -> Result<u8, CliError> {
    a.model.merge(file)?;
    a.time.merge(file)?;
    a.stability.merge(file)?;
    a.output.merge(file)?;
    fill(&mut a.n, file, "n")?;
    fill(&mut a.safety, file, "safety")?;
    let fit_from_file: Option<bool> = file.take("fit")?;
    let want_fit = a.fit || fit_from_file.unwrap_or(false);
    let model = a.model.build()?;
    let p = a.stability.build(&model)?;
    let dt = a.time.dt()?;
    let steps = a.time.steps((5.0 / dt).round() as usize)?;
    let n = a.n.unwrap_or(1000);
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let seed = a.output.seed();
    let kind = a.time.kind();
    let report = monte_carlo_envelope(&model, &p, n, dt, steps, kind, seed).map_err(data)?;
    let mut t = report.to_table();
    model_comments(&mut t, &model);
    stability_comments(&mut t, &p);
    t.comments.push(format!("dt={}", fmt17(dt)));
    t.comments.push(format!("steps={steps}"));
    t.comments.push(format!("integrator={kind}"));

    let notes = Notes::for_output(&a.output.out);
    notes.line(format!(
        "{} trajectories, {} violations in {} trajectories, worst margin {:.4e}, chatter floor {}",
        report.n_traj,
        report.violations,
        report.violating_trajectories,
        report.worst_margin,
        report.chatter_floor
    ));
    if want_fit {
        let opts = FitOptions {
            safety: a.safety.unwrap_or(0.8),
            chatter_floor: chatter_band(&model, dt),
        };
        let trajs = simulate_ensemble(&model, p.r0, n, dt, steps, kind, seed).map_err(data)?;
        let fit = fit_exponential_params(&trajs, &opts).map_err(data)?;
        notes.line(format!(
            "{} fit: k_hat = {:.6}, lambda_hat = {:.6} (raw k = {:.6}, raw lambda = {:.6}, safety {}, window to t = {})",
            FittedParams::LABEL,
            fit.k_hat,
            fit.lambda_hat,
            fit.k_raw,
            fit.lambda_raw,
            fit.safety,
            fit.window_end
        ));
        t.comments.push(format!("fit_k_hat={}", fmt17(fit.k_hat)));
        t.comments
            .push(format!("fit_lambda_hat={}", fmt17(fit.lambda_hat)));
    }
    emit(t, a.output.out.as_deref(), seed)?;
    Ok(0)
}

fn verify_error(e: VerifyError) -> CliError {
    match e {
        VerifyError::InvalidConfig(m) => usage(m),
        other => data(other),
    }
}

fn verify(mut a: VerifyArgs, file: &mut ConfigFile) -> Result<u8, CliError> {
    a.model.merge(file)?;
    a.time.merge(file)?;
    a.stability.merge(file)?;
    a.energy.merge(file)?;
    a.output.merge(file)?;
    fill(&mut a.delta, file, "delta")?;
    fill(&mut a.adapt_limit, file, "adapt_limit")?;
    fill(&mut a.spacing, file, "spacing")?;
    let model = a.model.build()?;
    let p = a.stability.build(&model)?;
    let form = a.energy.build(model.dim())?;
    if a.time.steps.is_none() && a.time.horizon.is_none() {
        return Err(usage("missing required option --steps (or --T)"));
    }
    let steps = a.time.steps(0)?;
    let delta = positive(required(&a.delta, "delta")?, "delta")?;
    let mut cfg = VerificationConfig::new(a.time.dt()?, steps, delta, p, form);
    cfg.kind = a.time.kind();
    if let Some(limit) = a.adapt_limit {
        cfg.adapt_limit = limit;
    }
    if let Some(s) = a.spacing {
        cfg.grid = GridOptions {
            spacing: s.0,
            ..cfg.grid
        };
    }
    let report = check_invariance(&model, &cfg).map_err(verify_error)?;

    let mut out = io::stdout().lock();
    let fc = &report.config;
    let _ = writeln!(out, "verdict: {}", report.verdict);
    let _ = writeln!(out, "gamma: {:.6e}", report.gamma);
    let _ = writeln!(out, "condition: {:.6e}", report.condition_lhs);
    let _ = writeln!(out, "margin: {:.6e}", report.margin());
    let _ = writeln!(
        out,
        "max terminal energy: {:.6e} at x0 = {:?}",
        report.max_energy, report.argmax_sample
    );
    let _ = writeln!(
        out,
        "samples: {} (delta {}, covering radius {})",
        report.samples.count(),
        fc.delta,
        report.samples.covering_radius
    );
    let _ = writeln!(
        out,
        "steps: {} (T = {} s), ell: {}",
        fc.n_steps,
        fc.horizon(),
        fc.form.level()
    );
    for c in &report.caveats {
        let _ = writeln!(out, "caveat: {c}");
    }
    for step in &report.adaptation_trace {
        let _ = writeln!(out, "adapted: {} ({})", step.step, step.reason);
    }
    drop(out);
    if let Some(path) = &a.output.out {
        emit(report.to_table(), Some(path), a.output.seed())?;
    }
    Ok(match report.verdict {
        Verdict::ForwardInvariant => 0,
        Verdict::Inconclusive => 1,
        Verdict::Falsified => 2,
    })
}

fn sweep(mut a: SweepArgs, file: &mut ConfigFile) -> Result<u8, CliError> {
    a.model.merge(file)?;
    a.time.merge(file)?;
    a.stability.merge(file)?;
    a.energy.merge(file)?;
    a.output.merge(file)?;
    fill(&mut a.steps_grid, file, "steps_grid")?;
    fill(&mut a.sample_counts, file, "sample_counts")?;
    let model = a.model.build()?;
    let p = a.stability.build(&model)?;
    let form = a.energy.build(model.dim())?;
    let List(steps) = a
        .steps_grid
        .clone()
        .unwrap_or_else(|| List((1..=10).map(|i| 100 * i).collect()));
    let List(counts) = a
        .sample_counts
        .clone()
        .unwrap_or_else(|| List(vec![11, 21, 41, 81, 161]));
    if steps.contains(&0) {
        return Err(usage("--steps-grid entries must be positive"));
    }
    if counts.iter().any(|n| *n < 2) {
        return Err(usage("--sample-counts entries must be at least 2"));
    }
    let max_steps = steps.iter().copied().max().unwrap_or(1);
    let delta = verify::delta_for_sample_count(&form, counts[0]);
    let mut cfg = VerificationConfig::new(a.time.dt()?, max_steps, delta, p, form);
    cfg.kind = a.time.kind();
    let m = verify::sweep(&model, &cfg, &steps, &counts).map_err(verify_error)?;
    let mut t = m.to_table();
    model_comments(&mut t, &model);
    stability_comments(&mut t, &p);
    t.comments.push(format!("ell={}", fmt17(cfg.form.level())));
    t.comments.push(format!("integrator={}", cfg.kind));

    let notes = Notes::for_output(&a.output.out);
    for (i, n) in m.sample_counts.iter().enumerate() {
        let first_pos = m.margins[i].iter().position(|v| *v >= 0.0);
        notes.line(format!(
            "n_samp {n} (delta {:.4}): margin {} ",
            m.deltas[i],
            match first_pos {
                Some(j) => format!("nonnegative from T = {} s", m.horizons()[j]),
                None => "negative throughout".into(),
            }
        ));
    }
    emit(t, a.output.out.as_deref(), a.output.seed())?;
    Ok(0)
}

fn repro(mut a: ReproArgs, file: &mut ConfigFile) -> Result<u8, CliError> {
    fill(&mut a.out_dir, file, "out_dir")?;
    fill(&mut a.seed, file, "seed")?;
    let dir = a.out_dir.unwrap_or_else(|| PathBuf::from("repro-out"));
    let checks = repro::run(a.id, &dir, a.seed.unwrap_or(0))?;
    let mut all = true;
    for c in &checks {
        all &= c.pass;
        println!(
            "{:<5} {:<48} {:>16}  ref {:<18} {}",
            c.id,
            c.quantity,
            c.value,
            c.reference,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    println!("CSV output in {}", dir.display());
    Ok(if all { 0 } else { 1 })
}

fn simulate(mut a: SimulateArgs, file: &mut ConfigFile) -> Result<u8, CliError> {
    a.model.merge(file)?;
    a.time.merge(file)?;
    a.output.merge(file)?;
    fill(&mut a.x0, file, "x0")?;
    let model = a.model.build()?;
    let List(x0) = required(&a.x0, "x0")?;
    if x0.len() != model.dim() {
        return Err(usage(format!(
            "--x0 has {} entries but `{}` has dimension {}",
            x0.len(),
            model.name(),
            model.dim()
        )));
    }
    let dt = a.time.dt()?;
    let kind = a.time.kind();
    let traj = propagate(&model, &x0, dt, a.time.steps(500)?, kind).map_err(data)?;
    let notes = Notes::for_output(&a.output.out);
    if let Some(d) = traj.divergence {
        notes.line(format!(
            "trajectory left the guarded region at step {} (norm {} > {}); truncated",
            d.step, d.norm, d.limit
        ));
    }
    let mut t = traj.to_table(0.0);
    model_comments(&mut t, &model);
    t.comments.push(format!("integrator={kind}"));
    emit(t, a.output.out.as_deref(), a.output.seed())?;
    Ok(0)
}

fn grid(mut a: GridArgs, file: &mut ConfigFile) -> Result<u8, CliError> {
    a.energy.merge(file)?;
    a.output.merge(file)?;
    fill(&mut a.dim, file, "dim")?;
    fill(&mut a.delta, file, "delta")?;
    fill(&mut a.spacing, file, "spacing")?;
    let dim = match (&a.energy.p, a.dim) {
        (Some(List(p)), _) => (p.len() as f64).sqrt().round() as usize,
        (None, Some(d)) if d > 0 => d,
        (None, Some(_)) => return Err(usage("--dim must be at least 1")),
        (None, None) => 1,
    };
    let form = a.energy.build(dim)?;
    let delta = positive(required(&a.delta, "delta")?, "delta")?;
    let opts = GridOptions {
        spacing: a.spacing.map(|s| s.0).unwrap_or_default(),
        ..GridOptions::default()
    };
    let g = delta_grid_with(&form, delta, dim, &opts).map_err(data)?;
    Notes::for_output(&a.output.out).line(format!(
        "{} samples, covering radius {}",
        g.count(),
        g.covering_radius
    ));
    let mut t = g.to_table();
    t.comments.push(format!("ell={}", fmt17(form.level())));
    emit(t, a.output.out.as_deref(), a.output.seed())?;
    Ok(0)
}
