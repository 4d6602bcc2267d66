//! `solve`, `train` and `verify`. Each computes everything first and only
//! then creates the run directory, so a failed run leaves nothing behind.
//!
//! CSV schemas (stable):
//! - `value_regime<i>.csv`: t, x0[, x1], value on the full spatial grid at each slice time
//! - `value_slices.csv`: t, axis, x0[, x1], regime, value
//! - `probability_slices.csv`: t, axis, x0[, x1], from, to, rate, probability
//! - `iteration.csv`: iteration, gap, change, max_violation, violations, seconds
//! - `lambda_sweep.csv`: lambda, sup_distance
//! - `loss.csv`: episode, loss, param_norm, seconds

use std::path::Path;
use std::time::Instant;

use exswitch::acceptance::{run_suite, AcceptanceOptions, CriterionReport};
use exswitch::classical::{lambda_sweep, LambdaSweep};
use exswitch::field::{ValueField, ValueFunction};
use exswitch::iteration::{improve, iterate, IterationConfig, IterationReport};
use exswitch::model::SwitchingModel;
use exswitch::pde::solve_exploratory_hjb;
use exswitch::rl::{
    checkpoint_load, checkpoint_save, policy_matrix, train_with, LogRecord, ModelEnvironment,
    NeuralValue, SeedLineage, TrainingLog,
};
use exswitch::sim::SimConfig;
use serde::Serialize;

use crate::args::{SolveArgs, TrainArgs, VerifyArgs};
use crate::config::{Resolved, SliceSpec};
use crate::manifest::{Manifest, Outputs, Seeds};
use crate::CliError;

/// Records kept for the divergence message.
const LOG_TAIL: usize = 5;
const SOLVE_MAX_ITERS: usize = 50;

fn argv() -> Vec<String> {
    std::env::args().collect()
}

fn header(dim: usize, lead: &[&str], tail: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    h.extend((0..dim).map(|d| format!("x{d}")));
    h.extend(tail.iter().map(|s| s.to_string()));
    h
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn write_value_slices(
    path: &Path,
    slices: &SliceSpec,
    regimes: usize,
    value: impl Fn(f64, &[f64], usize) -> f64,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(
        slices.anchor.len(),
        &["t", "axis"],
        &["regime", "value"],
    ))?;
    for &t in &slices.times {
        for (axis, x) in slices.points() {
            for i in 0..regimes {
                let mut rec = vec![num(t), axis.to_string()];
                rec.extend(x.iter().map(|v| num(*v)));
                rec.push(i.to_string());
                rec.push(num(value(t, &x, i)));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One-step switching probabilities P(I_{t+Δt} = j | I_t = i, X_t = x)
/// = π_ij Δt, renormalized when the exit mass exceeds one (the kernel the
/// simulator applies).
pub fn step_probabilities(rates: &[f64], i: usize, dt: f64) -> Vec<f64> {
    let mut p: Vec<f64> = rates.iter().map(|r| r * dt).collect();
    let exit: f64 = p
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, v)| v)
        .sum();
    if exit > 1.0 {
        p.iter_mut().for_each(|v| *v /= exit);
        p[i] = 0.0;
    } else {
        p[i] = 1.0 - exit;
    }
    p
}

pub fn write_probability_slices(
    path: &Path,
    slices: &SliceSpec,
    regimes: usize,
    dt: f64,
    mut rates: impl FnMut(f64, &[f64], usize, &mut [f64]) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(
        slices.anchor.len(),
        &["t", "axis"],
        &["from", "to", "rate", "probability"],
    ))?;
    let mut row = vec![0.0; regimes];
    for &t in &slices.times {
        for (axis, x) in slices.points() {
            for i in 0..regimes {
                rates(t, &x, i, &mut row)?;
                let p = step_probabilities(&row, i, dt);
                for j in 0..regimes {
                    let mut rec = vec![num(t), axis.to_string()];
                    rec.extend(x.iter().map(|v| num(*v)));
                    rec.extend([i.to_string(), j.to_string(), num(row[j]), num(p[j])]);
                    w.write_record(&rec)?;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_regime_files(
    out: &mut Outputs,
    field: &ValueField,
    times: &[f64],
) -> Result<(), CliError> {
    let grid = field.grid();
    let mut x = vec![0.0; grid.dim()];
    for i in 0..field.regimes() {
        let path = out.file(&format!("value_regime{i}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header(grid.dim(), &["t"], &["value"]))?;
        for &t in times {
            for node in 0..grid.node_count() {
                grid.coords_into(node, &mut x);
                let mut rec = vec![num(t)];
                rec.extend(x.iter().map(|v| num(*v)));
                rec.push(num(field.interpolate(t, &x, i)));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn finish(
    out: &Outputs,
    command: &str,
    cfg: &Resolved,
    model: &SwitchingModel,
    t0: Instant,
) -> Result<(), CliError> {
    let manifest = Manifest {
        format: crate::manifest::MANIFEST_FORMAT,
        version: crate::manifest::MANIFEST_VERSION,
        command,
        argv: argv(),
        exswitch_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        model_hash: model.hash(),
        seeds: Seeds::from_base(cfg.seed),
        outputs: out.digests()?,
        wall_seconds: t0.elapsed().as_secs_f64(),
    };
    let p = out.write_manifest(&manifest)?;
    println!("wrote {}", p.display());
    Ok(())
}

#[derive(Serialize)]
struct SolveReport {
    model_hash: String,
    lambda: f64,
    solve_seconds: f64,
    value_at_origin: Vec<f64>,
    iteration: Option<IterationReport>,
    lambda_sweep: Option<LambdaSweep>,
    sweep_strictly_decreasing: Option<bool>,
}

pub fn solve(args: &SolveArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let cfg = args.common.layered(args.flags(), "solve")?;
    let model = cfg.build_model()?;
    let grid = cfg.build_grid(&model)?;
    let opts = cfg.solver_options();

    let ts = Instant::now();
    let field = solve_exploratory_hjb(&model, &grid, &opts)?;
    let solve_seconds = ts.elapsed().as_secs_f64();
    println!(
        "solved {} on {} nodes × {} steps in {solve_seconds:.1}s",
        model.label(),
        grid.node_count(),
        grid.time_steps()
    );
    let iteration = if cfg.iterate {
        let init = ValueField::terminal_extension(grid.clone(), &model);
        // coarse grids can need a sweep or two beyond the library's 12
        let it_cfg = IterationConfig {
            max_iters: SOLVE_MAX_ITERS,
            reference: Some(field.clone()),
            solver: opts.clone(),
            ..Default::default()
        };
        let (_, _, rep) = iterate(&model, &grid, init, &it_cfg)?;
        println!(
            "policy iteration: {} iterations, converged {}, final gap {:.2e}, {} monotonicity violations",
            rep.records.len(),
            rep.converged,
            rep.gaps().last().copied().unwrap_or(f64::NAN),
            rep.monotonicity_violations
        );
        Some(rep)
    } else {
        None
    };
    let sweep = match &cfg.lambda_sweep {
        Some(lambdas) => {
            let (s, _) = lambda_sweep(&model, &grid, lambdas, &opts, 2)?;
            for r in &s.rows {
                println!("λ = {:<8} sup |V^λ − V| = {:.6}", r.lambda, r.sup_distance);
            }
            Some(s)
        }
        None => None,
    };
    let policy = improve(field.clone(), &model);
    let origin = cfg.slices.anchor.clone();
    let report = SolveReport {
        model_hash: model.hash(),
        lambda: model.temperature(),
        solve_seconds,
        value_at_origin: (0..model.regimes())
            .map(|i| field.interpolate(0.0, &origin, i))
            .collect(),
        sweep_strictly_decreasing: sweep.as_ref().map(|s| s.is_strictly_decreasing()),
        iteration,
        lambda_sweep: sweep,
    };

    let mut out = Outputs::create(&cfg.out)?;
    let hash = model.hash();
    field.write_binary(&out.file("value.bin"), &hash)?;
    write_regime_files(&mut out, &field, &cfg.slices.times)?;
    write_value_slices(
        &out.file("value_slices.csv"),
        &cfg.slices,
        model.regimes(),
        |t, x, i| field.interpolate(t, x, i),
    )?;
    let dt = model.horizon() / cfg.train.steps as f64;
    write_probability_slices(
        &out.file("probability_slices.csv"),
        &cfg.slices,
        model.regimes(),
        dt,
        |t, x, i, row| Ok(policy.row_into(t, x, i, row)?),
    )?;
    if let Some(rep) = &report.iteration {
        rep.write_csv(&out.file("iteration.csv"))?;
    }
    if let Some(s) = &report.lambda_sweep {
        s.write_csv(&out.file("lambda_sweep.csv"))?;
    }
    write_json(&out.file("report.json"), &report)?;
    finish(&out, "solve", &cfg, &model, t0)
}

fn tail_text(records: &[LogRecord]) -> String {
    let mut s = String::from("last log records (episode, loss, |ξ|):\n");
    for r in records {
        s.push_str(&format!(
            "  {} {:.6e} {:.6e}\n",
            r.episode, r.loss, r.param_norm
        ));
    }
    s
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let cfg = args.common.layered(args.flags(), "train")?;
    let model = cfg.build_model()?;
    let hidden = cfg.train.hidden_pairs();
    let arch = NeuralValue::architecture_for(&model, &hidden, cfg.train.encoding)?;
    let (mut net, mut lineage) = match &cfg.train.resume {
        Some(p) => {
            let ck = checkpoint_load(p, Some(&arch), Some(&model.hash()))?;
            let lineage = SeedLineage {
                parent: Some(ck.digest.clone()),
                ..ck.lineage.clone()
            };
            (
                NeuralValue::from_params(ck.params, ck.encoding, &model)?,
                lineage,
            )
        }
        None => (
            NeuralValue::for_model(&model, &hidden, cfg.train.encoding, cfg.seed)?,
            SeedLineage {
                init_seed: cfg.seed,
                ..Default::default()
            },
        ),
    };
    let env = ModelEnvironment::new(&model, cfg.train.start.clone())?;
    let sim = SimConfig::new(model.horizon(), cfg.train.steps, 1, cfg.seed)?;
    let tcfg = cfg.train.config(cfg.seed);

    let mut tail: Vec<LogRecord> = Vec::new();
    let every = (tcfg.episodes / 20).max(1);
    let result = train_with(&model, &sim, &tcfg, &env, &mut net, &mut |r, _| {
        if tail.len() == LOG_TAIL {
            tail.remove(0);
        }
        tail.push(*r);
        if (r.episode + 1) % every == 0 {
            println!(
                "episode {:>5}  loss {:.4e}  |ξ| {:.3}  {:.0}s",
                r.episode + 1,
                r.loss,
                r.param_norm,
                r.seconds
            );
        }
    });
    let log: TrainingLog = match result {
        Ok(log) => log,
        Err(e @ exswitch::Error::Divergence { .. }) => {
            return Err(CliError::Diverged {
                source: e,
                tail: tail_text(&tail),
            })
        }
        Err(e) => return Err(e.into()),
    };
    if tcfg.episodes > 0 {
        lineage.train_seed = Some(cfg.seed);
        lineage.episodes += tcfg.episodes;
    }

    let mut out = Outputs::create(&cfg.out)?;
    let digest = checkpoint_save(
        &out.file("checkpoint.json"),
        net.network(),
        net.encoding(),
        &model.hash(),
        &lineage,
    )?;
    log.write_csv(&out.file("loss.csv"))?;
    write_value_slices(
        &out.file("value_slices.csv"),
        &cfg.slices,
        model.regimes(),
        |t, x, i| ValueFunction::value(&net, t, x, i),
    )?;
    let m = model.regimes();
    write_probability_slices(
        &out.file("probability_slices.csv"),
        &cfg.slices,
        m,
        sim.dt(),
        |t, x, i, row| {
            let pi = policy_matrix(&net, &model, t, x)?;
            row.copy_from_slice(&pi[i * m..(i + 1) * m]);
            Ok(())
        },
    )?;
    println!("checkpoint digest {digest}");
    finish(&out, "train", &cfg, &model, t0)
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let cfg = args.common.layered(args.flags(), "verify")?;
    let model = cfg.build_model()?;
    let opts = AcceptanceOptions {
        seed: cfg.seed,
        coarse: cfg.verify.coarse,
        mc_scale: cfg.verify.mc_scale,
    };
    println!(
        "{:<4} {:<6} {:<40} {:>9}  observed | required",
        "id", "result", "criterion", "seconds"
    );
    let reports: Vec<CriterionReport> = run_suite(&cfg.verify.only, &opts, |r| {
        println!(
            "{:<4} {:<6} {:<40} {:>9.1}  {} | {}",
            r.id,
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.observed,
            r.tolerance
        );
    });
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", reports.len() - failed);

    let mut out = Outputs::create(&cfg.out)?;
    write_json(&out.file("verify.json"), &reports)?;
    finish(&out, "verify", &cfg, &model, t0)?;
    if failed > 0 {
        return Err(CliError::VerifyFailed {
            failed,
            total: reports.len(),
        });
    }
    Ok(())
}
