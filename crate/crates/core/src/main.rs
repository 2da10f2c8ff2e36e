use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cutclust::expr::{load_matrix, preprocess, MatrixFormat, PreprocessConfig};
use cutclust::graph::build_graph_pair;
use cutclust::linalg::fmt17;
use cutclust::metrics::Metrics;
use cutclust::pipeline::{
    efficiency_report, parse_separation, prepare_input, read_labels, run_ablation_suite, synth_blobs, train,
    write_ablation_csv, write_labels, write_run_outputs, write_timing_csv, ClusterCount, RunConfig,
};
use cutclust::{Error, Result};

#[derive(Parser)]
#[command(name = "cutclust", version, about = "Cut-informed deep clustering of expression matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a matrix and write assignments, embedding, losses and a checkpoint.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Number of clusters, or "auto" to take it from --labels.
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the final soft assignments to q.csv.
        #[arg(long)]
        dump_assignments: bool,
        /// Also write both affinity matrices to affinity_c.csv and affinity_s.csv.
        #[arg(long)]
        dump_graphs: bool,
    },
    /// Generate a synthetic blob dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        genes: usize,
        #[arg(long)]
        k: usize,
        /// low, medium, high or a number
        #[arg(long, default_value = "high")]
        separation: String,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Score predicted labels against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "true")]
        truth: PathBuf,
    },
    /// Run every ablation variant over a range of seeds.
    Ablate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Filter, normalize, log-transform and select genes, writing a CSV.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time full runs on synthetic data of increasing size.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 60)]
        genes: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_json_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_matrix(path: &Path, m: &ndarray::Array2<f64>) -> Result<()> {
    let body: String =
        m.rows().into_iter().map(|r| r.iter().map(|&v| fmt17(v)).collect::<Vec<_>>().join(",") + "\n").collect();
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { input, labels, k, config, out, seed, dump_assignments, dump_graphs } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(k) = k {
                cfg.k = k.parse::<ClusterCount>()?;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cfg.output_dir = Some(out.clone());
            cfg.validate()?;
            let x = load_matrix(&input, MatrixFormat::from_path(&input))?;
            let truth = labels.as_deref().map(read_labels).transpose()?;
            let res = train(&x, truth.as_deref(), &cfg)?;
            write_run_outputs(&out, &res)?;
            if dump_assignments {
                write_matrix(&out.join("q.csv"), &res.q)?;
            }
            if dump_graphs {
                let graphs = build_graph_pair(&prepare_input(&x, &cfg)?, &cfg.graph)?;
                write_matrix(&out.join("affinity_c.csv"), &graphs.c_matrix)?;
                write_matrix(&out.join("affinity_s.csv"), &graphs.s_matrix)?;
            }
            if let Some(m) = res.metrics {
                println!("{}", m.to_json());
            }
            eprintln!("wrote {} assignments to {}", res.labels.len(), out.display());
        }
        Command::Synth { n, genes, k, separation, dropout, seed, out } => {
            let sep = parse_separation(&separation)?;
            let (x, labels) = synth_blobs(n, genes, k, sep, dropout, seed)?;
            create_dir(&out)?;
            x.write_csv(&out.join("matrix.csv"))?;
            write_labels(&out.join("labels.csv"), &labels)?;
        }
        Command::Eval { pred, truth } => {
            let p = read_labels(&pred)?;
            let t = read_labels(&truth)?;
            println!("{}", Metrics::compute(&p, &t)?.to_json());
        }
        Command::Ablate { input, labels, config, out, seeds } => {
            let cfg = load_config(config.as_deref())?;
            let x = load_matrix(&input, MatrixFormat::from_path(&input))?;
            let truth = read_labels(&labels)?;
            let seed_list: Vec<u64> = (0..seeds).map(|s| cfg.seed + s).collect();
            let rows = run_ablation_suite(&x, &truth, &cfg, &seed_list)?;
            create_dir(&out)?;
            write_ablation_csv(&out.join("ablation.csv"), &rows)?;
            for r in &rows {
                println!(
                    "{:<10} acc {:.4}±{:.4}  nmi {:.4}±{:.4}  ari {:.4}±{:.4}",
                    r.variant.name(),
                    r.acc.mean,
                    r.acc.std,
                    r.nmi.mean,
                    r.nmi.std,
                    r.ari.mean,
                    r.ari.std
                );
            }
        }
        Command::Preprocess { input, out, config } => {
            let pcfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str::<PreprocessConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => PreprocessConfig::default(),
            };
            pcfg.validate()?;
            let x = load_matrix(&input, MatrixFormat::from_path(&input))?;
            preprocess(&x, &pcfg)?.write_csv(&out)?;
        }
        Command::Bench { sizes, genes, k, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let rows = efficiency_report(&sizes, genes, k, parse_separation("high")?, &cfg)?;
            create_dir(&out)?;
            write_timing_csv(&out.join("timing.csv"), &rows)?;
            for r in &rows {
                println!("n={:<6} total {:.3}s", r.n, r.timings.total);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
