//! The six subcommands. Each writes into its output directory and prints a
//! short summary to stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mocha_core::baselines::Trainer;
use mocha_core::data::{generate_synthetic, load_federated_csv, prediction_error, save_federated_csv};
use mocha_core::experiment::{self, CompareConfig, FaultCurve, Method};
use mocha_core::regularizers::write_matrix_csv;
use mocha_core::systems::Heterogeneity;
use mocha_core::theory::{
    convergence_constant_s, lipschitz_iteration_bound, sigma_total, smooth_iteration_bound, theta_bar, LipschitzInputs,
};
use mocha_core::trace::{time_to_target, write_csv, write_jsonl, TraceRecord};
use mocha_core::{Dataset, Weights};
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig, TrainerName};
use crate::{CliError, RunArgs};

type CmdResult = Result<(), CliError>;

/// Config with command-line overrides applied, and the output directory.
fn load(args: &RunArgs) -> Result<(ExperimentConfig, Option<PathBuf>), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    let out = args.out.clone().or_else(|| cfg.out.clone());
    Ok((cfg, out))
}

/// Creates `out` and echoes the effective config into it.
fn prepare_out(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let out = out.ok_or_else(|| ConfigError::new("out", "no output directory: set `out` or pass --out"))?;
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    match (&cfg.data.synthetic, &cfg.data.csv_dir) {
        (Some(spec), _) => Ok(generate_synthetic(spec)?),
        (None, Some(dir)) => Ok(load_federated_csv(dir)?),
        (None, None) => Err(ConfigError::new("data", "no dataset source").into()),
    }
}

/// Keeps file names portable: anything outside `[A-Za-z0-9._-]` becomes `_`.
fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// CSV field, quoted when it holds a comma or quote.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mode_label(mode: Heterogeneity) -> String {
    match mode {
        Heterogeneity::None => "none".into(),
        Heterogeneity::Low => "low".into(),
        Heterogeneity::High => "high".into(),
        Heterogeneity::Fixed(k) => format!("fixed-{k}"),
    }
}

/// `d` rows, one column per task.
fn write_weights_csv(w: &Weights, path: &Path) -> CmdResult {
    let header: Vec<String> = (0..w.num_tasks()).map(|t| format!("w{t}")).collect();
    let mut text = header.join(",") + "\n";
    for k in 0..w.dim() {
        let row: Vec<String> = w.columns().iter().map(|c| c[k].to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

fn write_traces(records: &[TraceRecord], dir: &Path, stem: &str) -> CmdResult {
    write_jsonl(records, dir.join(format!("{stem}.jsonl")))?;
    write_csv(records, dir.join(format!("{stem}.csv")))?;
    Ok(())
}

pub fn generate(args: &RunArgs) -> CmdResult {
    let (cfg, out) = load(args)?;
    if cfg.data.synthetic.is_none() {
        return Err(ConfigError::new("data.synthetic", "generate needs a synthetic spec").into());
    }
    let out = prepare_out(&cfg, out)?;
    let ds = dataset(&cfg)?;
    save_federated_csv(&ds, &out)?;
    let sizes = ds.task_sizes();
    let mean = ds.num_examples() as f64 / sizes.len() as f64;
    println!(
        "wrote {} tasks to {}: d = {}, n_t min {} / max {} / mean {mean:.1}",
        ds.num_tasks(),
        out.display(),
        ds.dim(),
        ds.min_task_size(),
        ds.max_task_size()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    method: String,
    seed: u64,
    rounds: usize,
    final_gap: Option<f64>,
    final_primal: Option<f64>,
    final_dual: Option<f64>,
    /// Mean per-task training misclassification rate.
    train_error: f64,
    elapsed_ms_estimated: Option<f64>,
}

pub fn train(args: &RunArgs) -> CmdResult {
    let (cfg, out) = load(args)?;
    let out = prepare_out(&cfg, out)?;
    let ds = dataset(&cfg)?;
    let sim = cfg.simulation(ds.num_tasks());
    let run = experiment::simulate_run(&cfg.method, &ds, &sim)?;

    write_traces(&run.records, &out, "trace")?;
    write_weights_csv(&run.weights, &out.join("W.csv"))?;
    let omega_path = out.join("omega.csv");
    match &run.omega {
        Some(omega) => write_matrix_csv(omega, &omega_path)?,
        // A stale file from an earlier run would contradict this one.
        None if omega_path.exists() => fs::remove_file(&omega_path)?,
        None => {}
    }
    let last = run.final_record();
    let summary = TrainSummary {
        method: cfg.method.label(),
        seed: cfg.seed,
        rounds: run.records.len(),
        final_gap: last.and_then(|r| r.gap),
        final_primal: last.map(|r| r.primal),
        final_dual: last.and_then(|r| r.dual),
        train_error: prediction_error(&run.weights, &ds)?.mean,
        elapsed_ms_estimated: last.and_then(|r| r.elapsed_ms_estimated),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{}: {} rounds, gap {}, train error {:.2}%, estimated time {} ms",
        summary.method,
        summary.rounds,
        summary.final_gap.map_or("-".into(), |g| format!("{g:.3e}")),
        100.0 * summary.train_error,
        summary.elapsed_ms_estimated.map_or("-".into(), |t| format!("{t:.1}")),
    );
    Ok(())
}

pub fn compare(args: &RunArgs) -> CmdResult {
    let (cfg, out) = load(args)?;
    let out = prepare_out(&cfg, out)?;
    let ds = dataset(&cfg)?;
    let c = &cfg.compare;
    let trainers = c
        .methods
        .iter()
        .map(|name| match name {
            TrainerName::Local => Trainer::Local,
            TrainerName::Global => Trainer::Global,
            TrainerName::Mtl => Trainer::Mtl {
                model: cfg.model,
                config: cfg.solver.clone(),
            },
        })
        .collect();
    let compare_cfg = CompareConfig {
        shuffles: c.shuffles,
        train_fraction: c.train_fraction,
        k_folds: c.k_folds,
        grid: c.grid.clone(),
        standardize: c.standardize,
        trainers,
    };
    let results = experiment::compare(&ds, &compare_cfg, cfg.seed)?;
    write_json(&out.join("compare.json"), &results)?;
    let mut table = String::from("method,mean_error,std_error\n");
    for r in &results {
        table.push_str(&format!("{},{},{}\n", csv_field(&r.method), r.mean_error, r.std_error));
        println!(
            "{:<8} {:>6.2}% ± {:.2}  over {} shuffles",
            r.method,
            100.0 * r.mean_error,
            100.0 * r.std_error,
            r.errors.len()
        );
    }
    write_text(&out.join("compare.csv"), &table)
}

pub fn bench(args: &RunArgs) -> CmdResult {
    let (cfg, out) = load(args)?;
    let out = prepare_out(&cfg, out)?;
    let ds = dataset(&cfg)?;
    let methods: Vec<Method> = if cfg.bench.methods.is_empty() {
        vec![cfg.method]
    } else {
        cfg.bench.methods.clone()
    };
    let presets: Vec<_> = cfg
        .bench
        .presets
        .iter()
        .map(|p| p.resolve().expect("validated preset"))
        .collect();
    let base = cfg.simulation(ds.num_tasks());
    let p_star = experiment::reference_primal(&ds, &base)?;
    let cells = experiment::bench(&ds, &base, &methods, &presets, &cfg.bench.heterogeneity, p_star)?;

    let cell_dir = out.join("cells");
    fs::create_dir_all(&cell_dir)?;
    let target = cfg.bench.target;
    let mut summary = String::from("method,preset,heterogeneity,file,time_to_target_ms,final_suboptimality\n");
    for cell in &cells {
        let mode = mode_label(cell.heterogeneity);
        let name = format!("{}__{}__{mode}.csv", file_stem(&cell.method), file_stem(&cell.preset));
        let mut text = String::from("elapsed_ms,primal_suboptimality\n");
        for (t, s) in &cell.curve {
            text.push_str(&format!("{t},{s}\n"));
        }
        write_text(&cell_dir.join(&name), &text)?;
        let hit = experiment::time_to_suboptimality(&cell.curve, target);
        let last = cell.curve.last().map(|p| p.1);
        summary.push_str(&format!(
            "{},{},{mode},cells/{name},{},{}\n",
            csv_field(&cell.method),
            csv_field(&cell.preset),
            hit.map_or(String::new(), |t| t.to_string()),
            last.map_or(String::new(), |s| s.to_string())
        ));
        println!(
            "{:<28} {:<10} {:<8} time to {target:e}: {}",
            cell.method,
            cell.preset,
            mode,
            hit.map_or("not reached".into(), |t| format!("{t:.1} ms"))
        );
    }
    write_text(&out.join("summary.csv"), &summary)?;
    write_json(
        &out.join("reference.json"),
        &json!({ "p_star": p_star, "target": target }),
    )
}

pub fn fault(args: &RunArgs) -> CmdResult {
    let (cfg, out) = load(args)?;
    let out = prepare_out(&cfg, out)?;
    let ds = dataset(&cfg)?;
    let sim = cfg.simulation(ds.num_tasks());
    let curves: Vec<FaultCurve> =
        experiment::fault_sweep(&ds, &sim, &cfg.fault.probabilities, cfg.fault.permanent_drop)?;
    let target = cfg.fault.target;
    let mut summary = String::from("scenario,rounds_to_target,final_gap,time_to_target_ms\n");
    for curve in &curves {
        write_traces(&curve.records, &out, &file_stem(&curve.label))?;
        let rounds = curve.rounds_to_gap(target);
        let time = time_to_target(&curve.records, target, |r| r.gap);
        let gap = curve.final_gap();
        summary.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&curve.label),
            rounds.map_or(String::new(), |r| r.to_string()),
            gap.map_or(String::new(), |g| g.to_string()),
            time.map_or(String::new(), |t| t.to_string())
        ));
        println!(
            "{:<8} gap {target:e} after {} rounds, final gap {}",
            curve.label,
            rounds.map_or("-".into(), |r| r.to_string()),
            gap.map_or("-".into(), |g| format!("{g:.3e}"))
        );
    }
    write_text(&out.join("summary.csv"), &summary)
}

pub fn theory(args: &RunArgs) -> CmdResult {
    let (cfg, out) = load(args)?;
    let ds = dataset(&cfg)?;
    let m = ds.num_tasks();
    let rel = cfg.solver.relationship(&cfg.model, cfg.model.initial_omega::<f64>(m))?;
    let sigma = sigma_total(&ds, &rel.mbar)?;
    let t = &cfg.theory;
    let n = ds.num_examples() as f64;
    let tb = theta_bar(t.p_max, t.theta_max)?;
    let constants = cfg.solver.loss.constants();

    let mut smooth = serde_json::Value::Null;
    if let Some(mu) = constants.mu {
        let s = convergence_constant_s(mu, sigma.sigma_max, rel.sigma_prime)?;
        let h = smooth_iteration_bound(n, t.epsilon, s, tb)?;
        smooth = json!({ "mu": mu, "s": s, "iteration_bound": h });
    }
    let mut lipschitz = serde_json::Value::Null;
    if let Some(l) = constants.lipschitz {
        let inputs = LipschitzInputs {
            n,
            epsilon: t.epsilon,
            lipschitz: l,
            sigma: sigma.sigma_total,
            sigma_prime: rel.sigma_prime,
            theta_bar: tb,
            initial_suboptimality: t.initial_suboptimality.unwrap_or(n),
        };
        let b = lipschitz_iteration_bound(&inputs)?;
        lipschitz = json!({ "inputs": inputs, "H": b.h, "H0": b.h0_rounds, "h0": b.h0 });
    }
    let report = json!({
        "tasks": m,
        "examples": ds.num_examples(),
        "dim": ds.dim(),
        "loss": cfg.solver.loss,
        "gamma": cfg.solver.gamma,
        "sigma_prime": rel.sigma_prime,
        "sigma_prime_per_task": rel.sigma_prime_per_task,
        "sigma": sigma,
        "epsilon": t.epsilon,
        "p_max": t.p_max,
        "theta_max": t.theta_max,
        "theta_bar": tb,
        "smooth": smooth,
        "lipschitz": lipschitz,
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(out) = out {
        let out = prepare_out(&cfg, Some(out))?;
        write_text(&out.join("theory.json"), &(text.clone() + "\n"))?;
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}")?;
    Ok(())
}
