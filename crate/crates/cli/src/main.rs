//! `igdm`: prepare data, train, evaluate, sweep and stress-test runs.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric failure, 4 artifact
//! mismatch.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use igdm_core::datahub::LoadOptions;
use igdm_core::harness::{
    cmd_eval, cmd_export_graph, cmd_robustness, cmd_sweep, cmd_train, format_metrics, parse_synth_spec, prepare_raw,
    prepare_synth, Axis, Condition, GraphKind, RunConfig,
};
use igdm_core::{Error, Result};
use log::info;

#[derive(Parser)]
#[command(
    name = "igdm",
    version,
    about = "Diffusion-denoised item graphs for multimodal recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a prepared dataset directory from raw files or a synthetic spec.
    Prepare(PrepareArgs),
    /// Train one model; writes report, timings, checkpoint and resolved config.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test metrics of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prepared dataset; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        k: Vec<usize>,
        /// Also write the metrics as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clean, noisy and masked-feature runs with a degradation table.
    Robustness {
        #[command(flatten)]
        run: RunArgs,
        /// Gaussian noise variances.
        #[arg(long, value_delimiter = ',', default_value = "0.0001")]
        noise: Vec<f64>,
        /// Missing rates of the modality mask.
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8")]
        mask: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid of runs over one or more config keys.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `key=v1,v2,...`; repeat for a grid.
        #[arg(long, required = true)]
        axis: Vec<String>,
        /// Runs in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an item graph of a trained run as a TSV edge list.
    ExportGraph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// semantic, behavioral or diffusion.
        #[arg(long)]
        graph: String,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PrepareArgs {
    /// Synthetic spec such as `users=200 items=100 clusters=2 seed=7`.
    #[arg(long, num_args = 1.., conflicts_with_all = ["interactions", "visual", "textual"])]
    synth: Option<Vec<String>>,
    /// `user<TAB>item` lines.
    #[arg(long, requires_all = ["visual", "textual"])]
    interactions: Option<PathBuf>,
    /// Visual features `.f32`; its manifest sits beside it.
    #[arg(long)]
    visual: Option<PathBuf>,
    #[arg(long)]
    textual: Option<PathBuf>,
    /// k-core threshold; 0 disables filtering.
    #[arg(long, default_value_t = 5)]
    core: usize,
    /// Seed of the train/validation/test split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prepared dataset directory (same as `--set data=DIR`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// `key=value` override; repeatable.
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// igdmrec, igdmrec-star or no-item-graph.
    #[arg(long)]
    variant: Option<String>,
    /// wo-ci, wo-cl or wo-ed; repeatable.
    #[arg(long)]
    ablate: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.set("data", &d.display().to_string())?;
        }
        for kv in &self.set {
            cfg.apply_override(kv)?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(v) = &self.variant {
            cfg.variant = v.parse()?;
        }
        for a in &self.ablate {
            cfg.ablations.push(a.parse()?);
        }
        cfg.resolve()
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => {
            if let Some(tokens) = &a.synth {
                let spec = parse_synth_spec(tokens)?;
                let data = prepare_synth(&spec, &a.out)?;
                info!(
                    "wrote {} users, {} items to {}",
                    data.dataset.num_users(),
                    data.dataset.num_items(),
                    a.out.display()
                );
            } else {
                let (Some(i), Some(v), Some(t)) = (&a.interactions, &a.visual, &a.textual) else {
                    return Err(Error::Config(
                        "prepare needs --synth or --interactions, --visual and --textual".into(),
                    ));
                };
                let opts = LoadOptions {
                    core: a.core,
                    split_seed: a.seed,
                };
                let (data, report) = prepare_raw(i, v, t, &opts, &a.out)?;
                info!(
                    "wrote {} users, {} items to {} ({} duplicate lines, {} pairs removed by the core filter)",
                    data.dataset.num_users(),
                    data.dataset.num_items(),
                    a.out.display(),
                    report.duplicates,
                    report.core_removed_pairs
                );
            }
        }
        Command::Train { run, out } => {
            let cfg = run.resolve()?;
            let outcome = cmd_train(&cfg, &out)?;
            println!("{}", format_metrics(&outcome.report.result.test));
        }
        Command::Eval {
            checkpoint,
            data,
            k,
            out,
        } => {
            let m = cmd_eval(&checkpoint, data.as_deref(), &k)?;
            println!("{}", format_metrics(&m));
            if let Some(p) = out {
                let json = serde_json::to_string(&m).expect("metrics serialize") + "\n";
                write_or_print(Some(&p), &json)?;
            }
        }
        Command::Robustness { run, noise, mask, out } => {
            let cfg = run.resolve()?;
            let mut conditions = vec![Condition::Clean];
            conditions.extend(noise.into_iter().map(Condition::Noise));
            conditions.extend(mask.into_iter().map(Condition::Mask));
            let rows = cmd_robustness(&cfg, &conditions, &out)?;
            println!("condition\tR@20\tN@20\tavg_delta");
            for r in rows {
                println!(
                    "{}\t{:.5}\t{:.5}\t{:.4}",
                    r.condition.label(),
                    r.recall20,
                    r.ndcg20,
                    r.delta
                );
            }
        }
        Command::Sweep { run, axis, jobs, out } => {
            let cfg = run.resolve()?;
            let axes: Vec<Axis> = axis.iter().map(|a| a.parse()).collect::<Result<_>>()?;
            let points = cmd_sweep(&cfg, &axes, jobs, &out)?;
            let text = std::fs::read_to_string(out.join("summary.tsv")).map_err(|e| Error::Io {
                path: out.join("summary.tsv"),
                source: e,
            })?;
            print!("{text}");
            info!("{} runs written under {}", points.len(), out.display());
        }
        Command::ExportGraph {
            checkpoint,
            data,
            graph,
            out,
        } => {
            let kind: GraphKind = graph.parse()?;
            let text = cmd_export_graph(&checkpoint, data.as_deref(), kind)?;
            write_or_print(out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
