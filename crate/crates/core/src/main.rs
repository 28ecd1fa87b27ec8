//! `edgelab` command line: corpus generation, benchmark pipelines, losses,
//! ROUGE scoring and report checking.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgelab::bench::{
    run_evict_bench, run_gen, run_lora_demo, run_quant_bench, run_spec_bench, ExperimentConfig, MethodSpec,
    OutputFormat, RunReport,
};
use edgelab::metrics::{rouge_texts, ROUGE_VARIANT};
use edgelab::train::{mpo_joint_loss, MpoWeights, PrefSample};
use edgelab::{Error, Result};

#[derive(Parser)]
#[command(name = "edgelab", version, about = "Toy-transformer laboratory for on-device LLM acceleration")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON). Built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for reports and generated files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the task corpus as JSON lines.
    Gen,
    /// KV cache eviction benchmark.
    Evict,
    /// Speculative decoding benchmark.
    Spec {
        /// Emit per-round traces (rounds.jsonl) into the output directory.
        #[arg(long)]
        trace: bool,
    },
    /// Quantization benchmark.
    Quant,
    /// Multi-adapter swaps and QALFT fit over a quantized base.
    LoraDemo,
    /// MPO joint loss over JSON-lines preference samples.
    Losses {
        /// JSON lines, one preference sample per line.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// JSON array of per-token log-probabilities for the generation term.
        #[arg(long, value_name = "PATH")]
        gen_logprobs: Option<PathBuf>,
    },
    /// ROUGE-1/2/L of a hypothesis text against a reference text.
    Rouge {
        #[arg(long, value_name = "PATH")]
        reference: PathBuf,
        #[arg(long, value_name = "PATH")]
        hypothesis: PathBuf,
    },
    /// Validate a report and print its summary.
    Report {
        /// A `report.json` file or the directory containing it.
        path: PathBuf,
    },
}

fn load_config(global: &Global, command: &str) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_for(command)?,
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(dir) = &global.out {
        cfg.output.dir = Some(dir.display().to_string());
    }
    if let Some(f) = global.format {
        cfg.output.format = f;
    }
    Ok(cfg)
}

fn emit_report(report: &RunReport, cfg: &ExperimentConfig) -> Result<()> {
    report.check_aggregates()?;
    if let Some(dir) = &cfg.output.dir {
        report.write_dir(Path::new(dir))?;
    }
    report.write_summary(std::io::stdout().lock(), cfg.output.format)
}

fn print_value(value: &serde_json::Value, format: OutputFormat) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match format {
        OutputFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(value)?)?,
        OutputFormat::Csv => {
            let obj = value.as_object().ok_or_else(|| Error::InvalidInput("value is not an object".into()))?;
            let scalars: Vec<_> = obj.iter().filter(|(_, v)| v.is_number()).collect();
            writeln!(out, "{}", scalars.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(","))?;
            writeln!(out, "{}", scalars.iter().map(|(_, v)| v.to_string()).collect::<Vec<_>>().join(","))?;
        }
    }
    Ok(())
}

fn read_prefs(path: &Path) -> Result<Vec<PrefSample>> {
    std::fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1))))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let format = g.format.unwrap_or_default();
    match cli.command {
        Command::Gen => {
            let cfg = load_config(g, "gen")?;
            let corpus = run_gen(&cfg)?;
            match &cfg.output.dir {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(Path::new(dir).join("corpus.jsonl"), &corpus)?;
                }
                None => std::io::stdout().lock().write_all(corpus.as_bytes())?,
            }
        }
        Command::Evict => {
            let cfg = load_config(g, "evict")?;
            emit_report(&run_evict_bench(&cfg)?, &cfg)?;
        }
        Command::Spec { trace } => {
            let mut cfg = load_config(g, "spec")?;
            if let MethodSpec::Spec { trace: t, .. } = &mut cfg.method {
                *t |= trace;
            }
            emit_report(&run_spec_bench(&cfg)?, &cfg)?;
        }
        Command::Quant => {
            let cfg = load_config(g, "quant")?;
            emit_report(&run_quant_bench(&cfg)?, &cfg)?;
        }
        Command::LoraDemo => {
            let cfg = load_config(g, "lora-demo")?;
            emit_report(&run_lora_demo(&cfg)?, &cfg)?;
        }
        Command::Losses { input, gen_logprobs } => {
            let weights: MpoWeights = match &g.config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::Config(format!("loss weights: {e}")))?,
                None => MpoWeights::default(),
            };
            let batch = read_prefs(&input)?;
            let tokens: Vec<f64> = match gen_logprobs {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => vec![0.0],
            };
            let loss = mpo_joint_loss(&batch, &weights, &tokens)?;
            let mut value = serde_json::to_value(loss)?;
            value["samples"] = batch.len().into();
            print_value(&value, format)?;
        }
        Command::Rouge { reference, hypothesis } => {
            let r = rouge_texts(&std::fs::read_to_string(reference)?, &std::fs::read_to_string(hypothesis)?);
            let value = serde_json::json!({
                "rouge1_f1": r.rouge1.f1, "rouge2_f1": r.rouge2.f1, "rougeL_f1": r.rouge_l.f1,
                "rouge1_precision": r.rouge1.precision, "rouge1_recall": r.rouge1.recall,
                "variant": ROUGE_VARIANT,
            });
            print_value(&value, format)?;
        }
        Command::Report { path } => {
            let file = if path.is_dir() { path.join("report.json") } else { path };
            let report = RunReport::load(&file)?;
            report.check_aggregates()?;
            report.write_summary(std::io::stdout().lock(), format)?;
        }
    }
    Ok(())
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let err = serde_json::json!({"error": {"kind": kind, "message": message}});
    eprintln!("{err}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), 64),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if matches!(e, Error::Contract(_)) { 2 } else { 1 };
            fail(e.kind(), e.to_string(), code)
        }
    }
}
