use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use ldbfss_core::cluster::{assign_pseudo_domains, Linkage};
use ldbfss_core::harness::gradsuite::{run_suite, STEP, TOLERANCE};
use ldbfss_core::harness::train::{separate_batch, train_run, TrainOutcome};
use ldbfss_core::harness::{ablate, probe_accuracy, silhouette, sweep_k, RunConfigFile, TrainConfig};
use ldbfss_core::io::{
    parse_embeddings, write_ablation_csv, write_embeddings_csv, write_embeddings_json, write_metrics_csv,
    write_sweep_csv, write_with_sidecar, EmbeddingBatch, EmbeddingRecord,
};

/// Latent-domain feature separation and suppression harness.
#[derive(Debug, Parser)]
#[command(name = "ldbfss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the finite-difference gradient suite; exits nonzero on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Train on synthetic features and write metrics and embeddings.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cluster every scale of an embedding CSV and write `id,cluster`.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = Linkage::Average)]
        linkage: Linkage,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train once per k in [k-min, k-max] and write the comparison table.
    SweepK {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        k_min: usize,
        #[arg(long)]
        k_max: usize,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report class probe accuracy and class silhouette of an embedding CSV.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the four incremental variants and write the ablation table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gradcheck { seeds } => gradcheck(seeds),
        Command::Train { config, seed } => {
            let file = load_config(&config, seed)?;
            train(&file)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Cluster {
            input,
            k,
            linkage,
            output,
        } => {
            cluster(&input, k, linkage, output.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepK {
            config,
            k_min,
            k_max,
            seeds,
            seed,
        } => {
            if k_min == 0 || k_min > k_max {
                bail!("need 1 <= k-min <= k-max, got {k_min}..{k_max}");
            }
            let file = load_config(&config, seed)?;
            let ks: Vec<usize> = (k_min..=k_max).collect();
            let rows = sweep_k(&file.train, &ks, seeds)?;
            let path = prepare_output(&file)?.join("sweep_k.csv");
            let resolved = json!({ "config": file, "k_values": ks, "seeds": seeds });
            write_with_sidecar(&path, &resolved, |w| write_sweep_csv(w, &rows))?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { input, seed, output } => {
            eval(&input, seed, output.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate { config, seeds, seed } => {
            let file = load_config(&config, seed)?;
            let rows = ablate(&file.train, seeds)?;
            let path = prepare_output(&file)?.join("ablation.csv");
            let resolved = json!({ "config": file, "seeds": seeds });
            write_with_sidecar(&path, &resolved, |w| write_ablation_csv(w, &rows))?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfigFile> {
    let mut file = RunConfigFile::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        file.train.seed = s;
    }
    Ok(file)
}

fn prepare_output(file: &RunConfigFile) -> Result<PathBuf> {
    fs::create_dir_all(&file.output_dir).with_context(|| format!("creating {}", file.output_dir.display()))?;
    Ok(file.output_dir.clone())
}

fn gradcheck(seeds: usize) -> Result<ExitCode> {
    if seeds == 0 {
        bail!("need at least one seed");
    }
    let outcomes = run_suite(seeds)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "case,seeds,max_rel_error,passed")?;
    for o in &outcomes {
        writeln!(out, "{},{},{:.3e},{}", o.name, o.seeds, o.max_error, o.passed)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    eprintln!(
        "{} of {} cases within {TOLERANCE:e} (h = {STEP:e})",
        outcomes.len() - failed,
        outcomes.len()
    );
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn train(file: &RunConfigFile) -> Result<()> {
    let dir = prepare_output(file)?;
    let outcome = train_run(&file.train)?;

    let metrics = dir.join("metrics.csv");
    write_with_sidecar(&metrics, file, |w| write_metrics_csv(w, &outcome.records))?;

    let (batches, records) = export(&outcome, &file.train)?;
    let csv_path = dir.join("embeddings.csv");
    write_with_sidecar(&csv_path, file, |w| write_embeddings_csv(w, &batches))?;
    let json_path = dir.join("embeddings.json");
    write_with_sidecar(&json_path, file, |w| write_embeddings_json(w, &records))?;

    let last = outcome.records.last().expect("a run records its initial evaluation");
    println!(
        "epoch {} total {:.6} probe_obj {:.3} probe_cand {:.3} silhouette {:.3} agreement {:.3}",
        last.epoch, last.losses.total, last.probe_obj, last.probe_cand, last.silhouette, last.agreement
    );
    println!("wrote {}", dir.display());
    Ok(())
}

/// Object features of the evaluation candidates, with pseudo domains from
/// clustering their domain features one training batch at a time.
fn export(outcome: &TrainOutcome, config: &TrainConfig) -> Result<(Vec<EmbeddingBatch>, Vec<EmbeddingRecord>)> {
    let mut batches = Vec::new();
    let mut records = Vec::new();
    for batch in &outcome.eval_set.batches {
        let sep = separate_batch(&outcome.model, batch)?;
        let n = batch.len();
        let mut pseudo = Vec::with_capacity(n);
        for start in (0..n).step_by(config.batch_size) {
            let rows: Vec<usize> = (start..(start + config.batch_size).min(n)).collect();
            let k = config.clusters.min(rows.len());
            pseudo.extend(assign_pseudo_domains(&sep.domain.select_rows(&rows), k, config.linkage)?.labels);
        }
        let ids: Vec<String> = (0..n).map(|i| format!("s{}-{i}", batch.scale)).collect();
        for (i, id) in ids.iter().enumerate() {
            records.push(EmbeddingRecord {
                id: id.clone(),
                scale: batch.scale,
                class: batch.class_labels[i],
                pseudo_domain: pseudo[i],
                vector: sep.object.row(i).to_vec(),
            });
        }
        batches.push(EmbeddingBatch {
            scale: batch.scale,
            ids,
            classes: batch.class_labels.clone(),
            features: sep.object,
        });
    }
    Ok((batches, records))
}

fn cluster(input: &Path, k: usize, linkage: Linkage, output: Option<&Path>) -> Result<()> {
    let batches = parse_embeddings(input)?;
    let mut rows = Vec::new();
    for b in &batches {
        if b.is_empty() {
            continue;
        }
        let labels = assign_pseudo_domains(&b.features, k, linkage)
            .with_context(|| format!("clustering scale {}", b.scale))?;
        rows.extend(b.ids.iter().cloned().zip(labels.labels));
    }
    let write = |w: &mut dyn Write| -> ldbfss_core::Result<()> {
        writeln!(w, "id,cluster")?;
        for (id, c) in &rows {
            writeln!(w, "{id},{c}")?;
        }
        Ok(())
    };
    match output {
        Some(path) => {
            let resolved = json!({ "input": input, "k": k, "linkage": linkage });
            write_with_sidecar(path, &resolved, |w| write(w))?;
        }
        None => write(&mut std::io::stdout().lock())?,
    }
    Ok(())
}

fn eval(input: &Path, seed: u64, output: Option<&Path>) -> Result<()> {
    let batches = parse_embeddings(input)?;
    let mut lines = Vec::new();
    for b in batches.iter().filter(|b| !b.is_empty()) {
        let acc = probe_accuracy(&b.features, &b.classes, seed).with_context(|| format!("probing scale {}", b.scale))?;
        let sil = silhouette(&b.features, &b.classes).with_context(|| format!("silhouette of scale {}", b.scale))?;
        lines.push(format!("{},{},{acc:.6},{sil:.6}", b.scale, b.len()));
    }
    if lines.is_empty() {
        bail!("{} holds no embeddings", input.display());
    }
    let write = |w: &mut dyn Write| -> ldbfss_core::Result<()> {
        writeln!(w, "scale,rows,probe_accuracy,silhouette")?;
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    };
    match output {
        Some(path) => {
            let resolved = json!({ "input": input, "seed": seed });
            write_with_sidecar(path, &resolved, |w| write(w))?;
        }
        None => write(&mut std::io::stdout().lock())?,
    }
    Ok(())
}
