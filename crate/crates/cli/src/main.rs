use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathsig::interactions::ThresholdMode;
use pathsig::report::{cmd_analyze, cmd_compare, cmd_memorisation, cmd_selfcheck, OutputDir, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Class-separation diagnostics from significant weight-activation paths.
#[derive(Parser, Debug)]
#[command(name = "pathsig", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// KL heatmaps, entropies, histograms and ablation metrics per dump.
    Analyze(Common),
    /// Reference dump (first input) against a shifted dump (second input).
    Compare(Common),
    /// Untrained / shuffled-label / true-label experiment on synthetic blobs.
    Memorisation(Common),
    /// Run the built-in oracle checks.
    Selfcheck {
        #[command(flatten)]
        common: Common,
        /// Replace the bundled reference .npy fixture.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only analyze manifests with this layer_id.
    #[arg(long)]
    layer: Option<String>,
    /// literal | row-mean-abs | quantile:<q>
    #[arg(long, value_parser = parse_mode)]
    threshold_mode: Option<ThresholdMode>,
    /// Smoothing pseudo-count.
    #[arg(long)]
    alpha: Option<f64>,
    /// Histogram bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<ThresholdMode, String> {
    s.parse().map_err(|e: pathsig::Error| e.to_string())
}

enum Failure {
    Usage(String),
    Data(pathsig::Error),
    Check(String),
}

impl Common {
    fn resolve(&self, config_required: bool) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| Failure::Usage(format!("config: {e}")))?,
            None if config_required => return Err(Failure::Usage("--config is required".into())),
            None => RunConfig::default(),
        };
        if let Some(layer) = &self.layer {
            cfg.layer = Some(layer.clone());
        }
        if let Some(mode) = self.threshold_mode {
            cfg.threshold_mode = mode;
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if let Some(bins) = self.bins {
            cfg.bins = bins;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze(common) => {
            let cfg = common.resolve(true)?;
            let report = cmd_analyze(&cfg).map_err(Failure::Data)?;
            for run in &report.runs {
                let s = &run.summary;
                println!(
                    "{}: mean inter-class KL {}, mean class entropy {}",
                    run.dir,
                    s.mean_inter_class_kl.map_or("n/a".into(), |v| format!("{v:.6}")),
                    format_args!("{:.6}", s.mean_class_entropy)
                );
            }
            println!("wrote {}", cfg.out.display());
        }
        Command::Compare(common) => {
            let cfg = common.resolve(true)?;
            let report = cmd_compare(&cfg).map_err(Failure::Data)?;
            println!("mean ID-OOD KL {:.6}", report.mean_id_ood_kl);
            if let Some(d) = report.mean_inter_class_kl {
                println!("mean inter-class KL {:.6} -> {:.6}", d.id, d.ood);
            }
            let e = report.mean_class_entropy;
            println!("mean class entropy {:.6} -> {:.6}", e.id, e.ood);
            println!("wrote {}", cfg.out.display());
        }
        Command::Memorisation(common) => {
            let cfg = common.resolve(false)?;
            let report = cmd_memorisation(&cfg).map_err(Failure::Data)?;
            println!("condition   train_acc  inter_kl    entropy");
            for r in &report.rows {
                println!(
                    "{:<10}  {:>9.3}  {:>9.6}  {:>9.6}",
                    r.condition, r.train_accuracy, r.mean_inter_class_kl, r.mean_class_entropy
                );
            }
            println!(
                "{:<10}  {:>9.3}  {:>9.6}  {:>9.6}",
                "true_ood", report.ood.accuracy, report.ood.mean_inter_class_kl, report.ood.mean_class_entropy
            );
            println!("wrote {}", cfg.out.display());
        }
        Command::Selfcheck { common, fixture } => {
            let cfg = common.resolve(false)?;
            let bytes = match &fixture {
                Some(path) => Some(
                    std::fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
                ),
                None => None,
            };
            let report = cmd_selfcheck(bytes.as_deref());
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if common.out.is_some() || common.config.is_some() {
                let out = OutputDir::create(&cfg.out).map_err(Failure::Data)?;
                out.write_json("selfcheck.json", &report).map_err(Failure::Data)?;
                pathsig::report::write_index(out.root()).map_err(Failure::Data)?;
            }
            if !report.passed() {
                let names: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
                return Err(Failure::Check(format!("failed checks: {}", names.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}
