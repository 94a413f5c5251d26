use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lqg_rl::experiment::{
    parse_theta, policy_from_theta, run_lqg, run_sweep, run_trials, save_records, save_summary, summary_path,
    ExperimentConfig, SweepRecord,
};
use lqg_rl::margins::{analyze, MarginReport};
use lqg_rl::reward::{exact_reward, mc_bias_allowance, mc_reward};
use lqg_rl::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NO_STABLE_POLICY: u8 = 3;
const EXIT_UNSTABLE_NOMINAL: u8 = 4;

#[derive(Parser)]
#[command(name = "lqg-rl", version, about = "Policy search, margins and perturbation sweeps for LQG plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: `doyle` or `flexible`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the human-readable report on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct Budget {
    /// Override the number of random initializations.
    #[arg(long)]
    n_ri: Option<usize>,
    /// Override the number of gradient steps per initialization.
    #[arg(long)]
    n_ga: Option<usize>,
}

#[derive(Args)]
struct ThetaInput {
    /// Policy parameters, comma or space separated.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "theta_file")]
    theta: Option<String>,
    /// File holding the policy parameters.
    #[arg(long)]
    theta_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// LQG gains, cost, margins and (second-order plants) companion coordinates.
    Lqg {
        #[command(flatten)]
        common: Common,
    },
    /// Train policies at one perturbation level, one CSV row per trial.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        budget: Budget,
        /// Perturbation half-width (defaults to the config's `train.b`).
        #[arg(long)]
        b: Option<f64>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
    /// Train and analyze over every perturbation level and trial.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        budget: Budget,
        /// Perturbation levels, overriding `sweep.levels`.
        #[arg(long, value_delimiter = ',')]
        b: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Gain, phase and disk margins of a given policy.
    Margins {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        theta: ThetaInput,
    },
    /// Print (or write with --out) a configuration as JSON, e.g. a preset to edit.
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo rollouts of a policy next to its exact reward.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        theta: ThetaInput,
        #[arg(long, default_value_t = 100_000)]
        horizon: usize,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Input perturbation δ applied during the rollouts.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        delta: f64,
    },
}

enum Failure {
    Lib(Error),
    NoStablePolicy,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = Result<(), Failure>;

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    match (&common.config, &common.preset) {
        (Some(path), _) => ExperimentConfig::load(path),
        (None, Some(name)) => ExperimentConfig::preset(name),
        (None, None) => Err(Error::Config("one of --config or --preset is required".into())),
    }
}

fn apply_budget(cfg: &mut ExperimentConfig, budget: &Budget) -> Result<(), Error> {
    if let Some(n) = budget.n_ri {
        cfg.train.n_ri = n;
    }
    if let Some(n) = budget.n_ga {
        cfg.train.n_ga = n;
    }
    cfg.validate()
}

fn read_theta(input: &ThetaInput) -> Result<Vec<f64>, Error> {
    let text = match (&input.theta, &input.theta_file) {
        (Some(t), _) => t.clone(),
        (None, Some(path)) => {
            fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Err(Error::Config("one of --theta or --theta-file is required".into())),
    };
    parse_theta(&text).map_err(|e| Error::Config(format!("theta: {e}")))
}

fn say(common: &Common, text: impl AsRef<str>) {
    if !common.quiet {
        println!("{}", text.as_ref());
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", items.join(", "))
}

fn margin_lines(m: &MarginReport) -> String {
    let phase = if m.phase.has_crossover() {
        format!("±{:.4} deg", m.phase.degrees)
    } else {
        "inf (no unit-gain crossover)".to_string()
    };
    format!(
        "gain margin interval: [{:.6}, {:.6}]\nphase margin:         {phase}\ndisk margin:          m_d = {:.6} (alpha = {:.6e})",
        m.gain_interval.0, m.gain_interval.1, m.disk.m_d, m.disk.alpha
    )
}

fn margins_json(m: &MarginReport) -> serde_json::Value {
    let num = |v: f64| if v.is_finite() { json!(v) } else { json!(v.to_string()) };
    json!({
        "gain_interval": [num(m.gain_interval.0), num(m.gain_interval.1)],
        "phase_deg": num(m.phase.degrees),
        "phase_crossover": m.phase.has_crossover(),
        "alpha": num(m.disk.alpha),
        "m_d": num(m.disk.m_d),
    })
}

fn write_text(path: &PathBuf, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn cmd_lqg(common: &Common) -> CliResult {
    let cfg = load(common)?;
    let r = run_lqg(&cfg)?;
    let mut text = format!("K = {}\nL = {}\nJ_LQG (cost) = {:.6e}\n", fmt_vec(&r.k), fmt_vec(&r.l), r.cost);
    text.push_str(&margin_lines(&r.margins));
    if let Some(theta) = &r.theta {
        text.push_str(&format!("\ntheta_LQG = {}", fmt_vec(theta)));
    }
    say(common, &text);
    if let Some(path) = &common.out {
        let report = json!({
            "k": r.k,
            "l": r.l,
            "cost": r.cost,
            "margins": margins_json(&r.margins),
            "theta": r.theta,
        });
        write_text(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(())
}

fn report_records(common: &Common, records: &[SweepRecord]) {
    for r in records {
        let md = r.md.map(|m| format!("{m:.6}")).unwrap_or_else(|| "-".into());
        say(common, format!("b = {:.3} trial {} seed {}: cost = {:.6e}, m_d = {md}", r.b, r.trial, r.seed, r.cost));
    }
}

fn cmd_train(common: &Common, budget: &Budget, b: Option<f64>, trials: usize) -> CliResult {
    let mut cfg = load(common)?;
    apply_budget(&mut cfg, budget)?;
    let b = b.unwrap_or(cfg.train.b);
    cfg.train.b = b;
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()).into());
    }
    let records = run_trials(&cfg, common.seed, b, trials)?;
    report_records(common, &records);
    if let Some(path) = &common.out {
        save_records(path, cfg.policy.n_params(), &records)?;
    }
    if records.iter().all(|r| !r.is_stable()) {
        return Err(Failure::NoStablePolicy);
    }
    Ok(())
}

fn cmd_sweep(common: &Common, budget: &Budget, levels: &Option<Vec<f64>>, trials: Option<usize>) -> CliResult {
    let mut cfg = load(common)?;
    if let Some(levels) = levels {
        cfg.sweep.levels = levels.clone();
    }
    if let Some(t) = trials {
        cfg.sweep.trials = t;
    }
    apply_budget(&mut cfg, budget)?;
    let out = run_sweep(&cfg, common.seed)?;
    report_records(common, &out.records);
    for row in &out.summary {
        let label = row.b.map(|b| format!("b = {b:.3}")).unwrap_or_else(|| "LQG".into());
        let md = row.md_mean.map(|m| format!("{m:.6}")).unwrap_or_else(|| "-".into());
        let cost = row.cost_mean.map(|c| format!("{c:.6e}")).unwrap_or_else(|| "-".into());
        say(common, format!("{label}: mean m_d = {md}, mean cost = {cost} ({}/{} stable)", row.stable, row.trials));
    }
    if let Some(path) = &common.out {
        save_records(path, cfg.policy.n_params(), &out.records)?;
        save_summary(&summary_path(path), &out.summary)?;
    }
    Ok(())
}

fn cmd_margins(common: &Common, theta: &ThetaInput) -> CliResult {
    let cfg = load(common)?;
    let policy = policy_from_theta(&cfg, read_theta(theta)?).map_err(|e| Error::Config(format!("theta: {e}")))?;
    let m = analyze(&cfg.plant_model()?, &policy.realize())?;
    say(common, margin_lines(&m));
    if let Some(path) = &common.out {
        write_text(path, &serde_json::to_string_pretty(&margins_json(&m)).expect("report serializes"))?;
    }
    Ok(())
}

fn cmd_simulate(common: &Common, theta: &ThetaInput, horizon: usize, episodes: usize, delta: f64) -> CliResult {
    let cfg = load(common)?;
    let plant = cfg.plant_model()?;
    let policy = policy_from_theta(&cfg, read_theta(theta)?).map_err(|e| Error::Config(format!("theta: {e}")))?;
    let deltas = vec![delta; plant.n_u()];
    let exact = exact_reward(&plant, &policy, &deltas)?;
    if !exact.stable {
        return Err(Error::UnstableNominal.into());
    }
    let mc = mc_reward(&plant, &policy, &deltas, horizon, episodes, common.seed)?;
    let bias = mc_bias_allowance(&plant, &policy, &deltas, horizon)?;
    say(
        common,
        format!(
            "Monte-Carlo reward: {:.6e} ± {:.3e} (standard error, {} episodes x {horizon} steps)\nexact reward:       {:.6e}\nbias allowance:     {:.3e}",
            mc.mean, mc.std_error, mc.episodes, exact.value, bias
        ),
    );
    if let Some(path) = &common.out {
        let report = json!({
            "mc_mean": mc.mean,
            "mc_std_error": mc.std_error,
            "episodes": mc.episodes,
            "horizon": horizon,
            "exact": exact.value,
            "bias_allowance": bias,
        });
        write_text(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(())
}

fn cmd_config(common: &Common) -> CliResult {
    let cfg = load(common)?;
    cfg.validate()?;
    let text = cfg.to_json();
    match &common.out {
        Some(path) => write_text(path, &text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Error::Io(format!("stdout: {e}")))?
        }
    }
    Ok(())
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::NoStablePolicy => EXIT_NO_STABLE_POLICY,
        Failure::Lib(e) => match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::UnstableNominal | Error::UnstableLoop | Error::Overflow { .. } => EXIT_UNSTABLE_NOMINAL,
            _ => EXIT_FAILURE,
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Lqg { common } => cmd_lqg(common),
        Command::Train { common, budget, b, trials } => cmd_train(common, budget, *b, *trials),
        Command::Sweep { common, budget, b, trials } => cmd_sweep(common, budget, b, *trials),
        Command::Margins { common, theta } => cmd_margins(common, theta),
        Command::Config { common } => cmd_config(common),
        Command::Simulate { common, theta, horizon, episodes, delta } => {
            cmd_simulate(common, theta, *horizon, *episodes, *delta)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::NoStablePolicy => eprintln!("error: no trial found a stabilizing policy"),
                Failure::Lib(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
