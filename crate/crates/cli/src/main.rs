use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deftrack::config::Config;
use deftrack::eval::{
    failure_rate, result_curves, robustness, run_ablation, run_battery, run_sequence,
    save_result, save_sequence, PRECISION_AT_PX, ROBUSTNESS_S,
};
use deftrack::synthseq::{attribute_suite_frames, SequenceDataset};
use deftrack::tracker::{train_offline, TrackerModel, Variant};
use deftrack::Error;

#[derive(Parser)]
#[command(name = "deftrack", about = "Deformable-convolution gated-fusion tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the six-sequence synthetic attribute suite
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        frames: usize,
    },
    /// Offline three-step training on a directory of sequences
    Train {
        /// Directory whose subdirectories are sequences
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track one sequence with a trained model
    Track {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize tracking results into curves and a table
    Eval {
        /// Glob over RESULT.json files
        #[arg(long)]
        results: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full gradient-check battery
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Train and evaluate all variants over the attribute suite
    Ablate {
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        frames: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, Error> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(Config::default()),
    }
}

fn load_data_dir(dir: &Path) -> Result<Vec<SequenceDataset>, Error> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Invalid(format!("cannot open {}: {}", dir.display(), e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("groundtruth_rect.txt").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Invalid(format!(
            "no sequence directories (with groundtruth_rect.txt) under {}",
            dir.display()
        )));
    }
    dirs.iter().map(|d| deftrack::eval::load_sequence(d)).collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { out, seed, frames } => {
            for (name, seq) in attribute_suite_frames(seed, frames)? {
                let dir = out.join(&name);
                fs::create_dir_all(&dir)?;
                save_sequence(&dir, &seq)?;
                println!("wrote {} ({} frames)", dir.display(), seq.frames.len());
            }
        }
        Command::Train {
            data,
            variant,
            config,
            out,
        } => {
            let variant = Variant::parse(&variant)?;
            let cfg = load_config(&config)?;
            let seqs = load_data_dir(&data)?;
            let model = train_offline(&seqs, &cfg.model, &cfg.train, variant, None)?;
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(&out, serde_json::to_string(&model)?)?;
            println!("trained {} model -> {}", variant.label(), out.display());
        }
        Command::Track {
            model,
            seq,
            out,
            config,
        } => {
            let cfg = load_config(&config)?;
            let model: TrackerModel = serde_json::from_str(&fs::read_to_string(&model)?)?;
            let dataset = deftrack::eval::load_sequence(&seq)?;
            let (result, _) = run_sequence(&model, &dataset, &cfg.track, &seq.to_string_lossy())?;
            save_result(&result, &dataset.gt, &out)?;
            let (prec, succ) = result_curves(&result, &dataset.gt)?;
            println!(
                "{}: precision@20 {:.4}, success-AUC {:.4}",
                seq.display(),
                prec.value_at(PRECISION_AT_PX).unwrap(),
                succ.auc
            );
        }
        Command::Eval { results, out } => {
            let paths: Vec<PathBuf> = glob::glob(&results)
                .map_err(|e| Error::Invalid(format!("bad glob '{}': {}", results, e)))?
                .filter_map(|p| p.ok())
                .collect();
            if paths.is_empty() {
                return Err(Error::Invalid(format!("no results match '{}'", results)));
            }
            fs::create_dir_all(&out)?;
            let mut table = format!(
                "{:<30} {:<10} {:>12} {:>12} {:>12}\n",
                "sequence", "variant", "precision@20", "success-AUC", "robustness"
            );
            for path in paths {
                let result = deftrack::eval::load_result(&path)?;
                let dataset = deftrack::eval::load_sequence(Path::new(&result.sequence))?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "result".into());
                save_result(&result, &dataset.gt, &out.join(format!("{}.json", stem)))?;
                let (prec, succ) = result_curves(&result, &dataset.gt)?;
                let rob = robustness(failure_rate(&result.boxes, &dataset.gt), ROBUSTNESS_S);
                table.push_str(&format!(
                    "{:<30} {:<10} {:>12.4} {:>12.4} {:>12.4}\n",
                    result.sequence,
                    result.variant,
                    prec.value_at(PRECISION_AT_PX).unwrap(),
                    succ.auc,
                    rob
                ));
            }
            fs::write(out.join("table.txt"), &table)?;
            print!("{}", table);
        }
        Command::Gradcheck { seeds } => {
            let checks = run_battery(seeds)?;
            let mut failed = false;
            for c in &checks {
                println!(
                    "{:<18} max rel err {:>12.3e}  {}",
                    c.name,
                    c.max_rel_err,
                    if c.passed { "ok" } else { "FAIL" }
                );
                failed |= !c.passed;
            }
            if failed {
                return Err(Error::Invalid("gradient check battery failed".into()));
            }
        }
        Command::Ablate {
            seeds,
            out,
            config,
            frames,
        } => {
            if seeds == 0 {
                return Err(Error::Invalid("--seeds must be at least 1".into()));
            }
            let cfg = load_config(&config)?;
            let seed_list: Vec<u64> = (0..seeds).collect();
            let report = run_ablation(&cfg, &seed_list, frames)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            fs::write(out.join("table.txt"), report.table())?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(0),
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::Invalid(_) | Error::GroundTruth { .. } | Error::Shape { .. } => {
                    ExitCode::from(1)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}
