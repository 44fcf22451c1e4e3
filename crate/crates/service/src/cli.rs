//! The `rr` pipeline verbs: generate → extract → train → index → query → eval → serve.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tumor_retrieval::dataset::Dataset;
use tumor_retrieval::eval::{run_ablation_suite, write_csv, write_json, EvalConfig};
use tumor_retrieval::index::{build_index, encode_reference, load_index, save_index};
use tumor_retrieval::model::{read_checkpoint, write_checkpoint, Setting};
use tumor_retrieval::phantom::{phantom_id, sample_dataset, write_dataset};
use tumor_retrieval::train::{train_with, write_loss_trace, TrainConfig};
use tumor_retrieval::volume::read_volume;

use crate::error::ApiError;
use crate::http::{port_from_env, serve, AppState};
use crate::query::{execute, InlineVolume, QuerySpec, Snapshot, Units, DEFAULT_K};

#[derive(Debug, Parser)]
#[command(name = "rr", version, about = "Tumor-level retrieval over 3D volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic phantom datasets.
    Phantom {
        #[command(subcommand)]
        command: PhantomCommand,
    },
    /// Radiomics feature extraction.
    Radiomics {
        #[command(subcommand)]
        command: RadiomicsCommand,
    },
    /// Train one ablation setting and write its checkpoint.
    Train(TrainArgs),
    /// Reference index construction.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Run one query and print the ranked results as JSON.
    Query(QueryArgs),
    /// Evaluate every checkpoint in a directory.
    Eval(EvalArgs),
    /// Serve the HTTP query API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum PhantomCommand {
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum RadiomicsCommand {
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_setting)]
    pub setting: Setting,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Build {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a JSON-lines listing.
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory the index's volume paths are relative to.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// RRV1 volume for an image query.
    #[arg(long, requires = "point")]
    pub volume: Option<PathBuf>,
    /// Prompt voxel `x,y,z`; repeat for more prompts.
    #[arg(long, value_parser = parse_voxel)]
    pub point: Vec<[usize; 3]>,
    /// `Name=value` pairs, comma separated.
    #[arg(long, conflicts_with = "volume")]
    pub features: Option<String>,
    /// Feature values are raw rather than z-scored.
    #[arg(long)]
    pub raw: bool,
    /// `a,b,c` in [-1, 1].
    #[arg(long, value_parser = parse_triple, conflicts_with = "volume")]
    pub ape: Option<[f64; 3]>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `<setting>.rrnn` checkpoints.
    #[arg(long)]
    pub settings_dir: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides `RR_PORT`.
    #[arg(long)]
    pub port: Option<u16>,
}

fn parse_setting(s: &str) -> Result<Setting, String> {
    Setting::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Setting::ALL.iter().map(|s| s.name()).collect();
        format!("unknown setting {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_numbers<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<T> = s.split(',').map(|p| p.trim().parse().map_err(|_| format!("bad number in {s:?}"))).collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected three comma-separated values, got {s:?}"))
}

fn parse_voxel(s: &str) -> Result<[usize; 3], String> {
    parse_numbers(s)
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_numbers(s)
}

pub fn parse_feature_list(s: &str) -> Result<BTreeMap<String, f64>, ApiError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (n, v) = p.split_once('=').ok_or_else(|| ApiError::bad_request("BadFeatureList", format!("expected Name=value, got {p:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| ApiError::bad_request("BadFeatureValue", format!("bad value in {p:?}")))?;
            Ok((n.trim().to_string(), v))
        })
        .collect()
}

fn ensure_parent(path: &Path) -> Result<(), ApiError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, ApiError> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path)?))
}

fn snapshot(index: &Path, checkpoint: &Path, data: Option<PathBuf>) -> Result<Snapshot, ApiError> {
    let index = load_index(index)?;
    let model = read_checkpoint(checkpoint)?;
    Ok(Snapshot { index, model, data_dir: data })
}

/// Runs one verb; the HTTP server blocks until interrupted.
pub fn run(cli: Cli) -> Result<(), ApiError> {
    match cli.command {
        Command::Phantom { command: PhantomCommand::Gen { n, seed, out } } => {
            let items: Vec<_> = sample_dataset(n, seed)?.into_iter().enumerate().map(|(i, p)| (phantom_id(seed, i), p)).collect();
            let manifest = write_dataset(&out, &items)?;
            println!("{}", serde_json::json!({ "written": manifest.len(), "out": out }));
        }
        Command::Radiomics { command: RadiomicsCommand::Extract { data, out } } => {
            let d = Dataset::load(&data, None)?;
            d.write_radiomics_csv(create(&out)?).map_err(|e| ApiError::new(500, "Csv", e.to_string()))?;
            println!("{}", serde_json::json!({ "tumors": d.len(), "out": out }));
        }
        Command::Train(a) => {
            let data = Dataset::load(&a.data, None)?;
            let mut cfg = TrainConfig::new(a.setting, a.seed);
            cfg.epochs = a.epochs;
            if let Some(lr) = a.lr {
                cfg.adam.lr = lr;
            }
            let out = train_with(&data, &cfg, |e| {
                eprintln!("{}", serde_json::to_string(e).expect("losses serialize"));
            })?;
            ensure_parent(&a.out)?;
            write_checkpoint(&out.model, &a.out)?;
            if let Some(t) = &a.trace {
                write_loss_trace(&out.trace, create(t)?)?;
            }
            println!("{}", serde_json::json!({ "setting": a.setting, "epochs": a.epochs, "checkpoint": a.out }));
        }
        Command::Index { command: IndexCommand::Build { data, checkpoint, out, jsonl } } => {
            let d = Dataset::load(&data, None)?;
            let model = read_checkpoint(&checkpoint)?;
            let index = build_index(encode_reference(&model, &d)?, d.stats.clone())?;
            ensure_parent(&out)?;
            save_index(&index, &out)?;
            if let Some(j) = &jsonl {
                index.write_jsonl(create(j)?)?;
            }
            println!("{}", serde_json::json!({ "records": index.len(), "out": out }));
        }
        Command::Query(a) => {
            let snap = snapshot(&a.index, &a.checkpoint, a.data.clone())?;
            let spec = if let Some(v) = &a.volume {
                let vol = read_volume(v)?;
                let g = *vol.geometry();
                QuerySpec::Image {
                    volume_id: None,
                    volume: Some(InlineVolume { dims: g.dims, spacing: g.spacing, origin: g.origin, data: vol.data().to_vec() }),
                    prompts: a.point.clone(),
                    k: a.k,
                    checkpoint: None,
                }
            } else if let Some(f) = &a.features {
                let features = parse_feature_list(f)?;
                QuerySpec::Radiomics { features, ape: a.ape, units: if a.raw { Units::Raw } else { Units::Z }, k: a.k, checkpoint: None }
            } else if let Some(ape) = a.ape {
                QuerySpec::Ape { ape, k: a.k, checkpoint: None }
            } else {
                return Err(ApiError::bad_request("EmptyQuery", "give --volume with --point, --features, or --ape"));
            };
            println!("{}", serde_json::to_string_pretty(&execute(&snap, &spec)?)?);
        }
        Command::Eval(a) => {
            let reference = Dataset::load(&a.reference, None)?;
            let queries = Dataset::load(&a.queries, Some(&reference.stats))?;
            let mut models = BTreeMap::new();
            for s in Setting::ALL {
                let p = a.settings_dir.join(format!("{}.rrnn", s.name()));
                if p.exists() {
                    models.insert(s, read_checkpoint(&p)?);
                }
            }
            if models.is_empty() {
                return Err(ApiError::new(500, "MissingCheckpoint", format!("no <setting>.rrnn files in {}", a.settings_dir.display())));
            }
            let settings: Vec<Setting> = models.keys().copied().collect();
            let cfg = EvalConfig { seed: a.seed, ..Default::default() };
            let report = run_ablation_suite(&models, &settings, &reference, &queries, &cfg)?;
            std::fs::create_dir_all(&a.out)?;
            write_csv(&report.reports, create(&a.out.join("report.csv"))?)?;
            write_json(&report, create(&a.out.join("report.json"))?)?;
            println!("{}", serde_json::json!({ "reports": report.reports.len(), "out": a.out }));
        }
        Command::Serve(a) => {
            let snap = snapshot(&a.index, &a.checkpoint, a.data.clone())?;
            let port = match a.port {
                Some(p) => p,
                None => port_from_env()?,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(AppState::new(Some(snap)), port))?;
        }
    }
    Ok(())
}
