//! Command-line front end: `fit`, `predict`, `simulate`, `bench`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use stvgp::harness::{
    bench, evaluate, fit_dataset, predict_dataset, split_dataset, synthesize, write_bench_csv,
    write_predictions, FittedModel, GridDataset, RunConfig, RunMetrics, SynthKind, SynthSpec,
};
use stvgp::{Error, FilterMode, Result};
use tempfile::NamedTempFile;

#[derive(Parser)]
#[command(name = "stvgp", version, about = "Spatio-temporal variational GP inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CSV dataset.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Model state (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration `iteration,elbo,seconds` CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics JSON on the held-out fold, or on the training data.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Hold out this fold (0-based) and train on the rest.
        #[arg(long)]
        test_fold: Option<usize>,
        /// Where to write the held-out rows as CSV.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Predict at the rows of a CSV file with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Predictions CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Write a synthetic dataset.
    Simulate {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        nt: usize,
        #[arg(long)]
        ns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Latent function values in the same layout.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Time training over a sweep of time-series lengths.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        nt: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        ns: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "sequential")]
        modes: Vec<String>,
        /// Overrides the configured iteration count.
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Output files written to temporaries and moved into place only once every
/// artifact of the command has been produced.
#[derive(Default)]
struct Artifacts {
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl Artifacts {
    fn write(&mut self, path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = NamedTempFile::new_in(dir)?;
        {
            let mut w = std::io::BufWriter::new(tmp.as_file_mut());
            fill(&mut w)?;
            w.flush()?;
        }
        self.staged.push((tmp, path.to_path_buf()));
        Ok(())
    }

    fn write_or_stdout(&mut self, path: Option<&Path>, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        match path {
            Some(p) => self.write(p, fill),
            None => {
                let mut buf = Vec::new();
                fill(&mut buf)?;
                std::io::stdout().write_all(&buf)?;
                Ok(())
            }
        }
    }

    fn commit(self) -> Result<()> {
        let mut done: Vec<PathBuf> = Vec::new();
        for (tmp, path) in self.staged {
            if let Err(e) = tmp.persist(&path) {
                for p in done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e.error.into());
            }
            done.push(path);
        }
        Ok(())
    }
}

fn json_to(value: &impl serde::Serialize) -> impl FnOnce(&mut dyn Write) -> Result<()> + '_ {
    move |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    }
}

fn run(cmd: Command) -> Result<()> {
    let mut out = Artifacts::default();
    match cmd {
        Command::Fit {
            config,
            data,
            out: model_path,
            trace,
            metrics,
            folds,
            test_fold,
            test_out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let all = GridDataset::load_csv(&data)?;
            let (train, test) = match test_fold {
                Some(f) => {
                    let (a, b) = split_dataset(&all, folds, f, cfg.seed)?;
                    (a, Some(b))
                }
                None => (all, None),
            };
            let model = fit_dataset(&cfg, &train)?;
            out.write(&model_path, json_to(&model))?;
            if let Some(p) = &trace {
                let st = &model.state;
                out.write(p, |w| {
                    writeln!(w, "iteration,elbo,seconds")?;
                    for (i, (e, s)) in st.elbo_trace().iter().zip(st.iteration_seconds()).enumerate() {
                        writeln!(w, "{},{e},{s}", i + 1)?;
                    }
                    Ok(())
                })?;
            }
            if let (Some(p), Some(t)) = (&test_out, &test) {
                out.write(p, |w| t.write_to(w))?;
            }
            let eval_on = test.as_ref().unwrap_or(&train);
            let scores: Option<RunMetrics> = match &metrics {
                Some(p) => {
                    let m = evaluate(&model, eval_on, &predict_dataset(&model, eval_on)?)?;
                    out.write(p, json_to(&m))?;
                    Some(m)
                }
                None => None,
            };
            out.commit()?;
            let summary = serde_json::json!({
                "counts": train.counts(),
                "elbo_final": model.state.elbo_trace().last(),
                "seconds_per_iter": model.state.seconds_per_iter(),
                "metrics": scores,
            });
            println!("{summary}");
            Ok(())
        }
        Command::Predict {
            model,
            data,
            out: pred_path,
            metrics,
        } => {
            let model = FittedModel::load(&model)?;
            let query = GridDataset::load_csv(&data)?;
            let preds = predict_dataset(&model, &query)?;
            if let Some(p) = &metrics {
                out.write(p, json_to(&evaluate(&model, &query, &preds)?))?;
            }
            out.write_or_stdout(pred_path.as_deref(), |w| write_predictions(&query, &preds, &model, w))?;
            out.commit()
        }
        Command::Simulate {
            kind,
            nt,
            ns,
            seed,
            t_max,
            out: data_path,
            truth,
        } => {
            let kind: SynthKind = kind.parse()?;
            let s = synthesize(&SynthSpec { kind, nt, ns, seed, t_max })?;
            if let Some(p) = &truth {
                let f = s.dataset.unvec(&DVector::from_column_slice(&s.truth))?;
                out.write(p, |w| f.write_to(w))?;
            }
            out.write_or_stdout(data_path.as_deref(), |w| s.dataset.write_to(w))?;
            out.commit()
        }
        Command::Bench {
            nt,
            ns,
            config,
            modes,
            iterations,
            out: table,
        } => {
            let base = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let cfg = RunConfig { iterations, ..base };
            let modes = modes
                .iter()
                .map(|m| match m.as_str() {
                    "sequential" => Ok(FilterMode::Sequential),
                    "parallel" => Ok(FilterMode::Parallel),
                    other => Err(Error::Config(format!("unknown filter mode `{other}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = bench(&cfg, &nt, ns, &modes)?;
            out.write_or_stdout(table.as_deref(), |w| write_bench_csv(&rows, w))?;
            out.commit()
        }
    }
}

fn report(kind: &str, code: u8, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            return report("usage", 1, text.join(" ").trim_start_matches("error: "));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.kind(), e.exit_code() as u8, &e.to_string().replace('\n', " ")),
    }
}
