//! `malite` command line: byteplot conversion, featurization, training,
//! evaluation, the parameter sweep and cost reports.
//!
//! Exit codes: 0 success, 2 usage, 3 data/format error, 4 numeric error.
//! `MALITE_THREADS` caps worker threads (0 or unset = auto).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use malite::byteplot;
use malite::costmodel;
use malite::data::{self, Manifest};
use malite::featurizer::{self, FeatureTable, HistogramConfig, PatchSpec};
use malite::forest::ForestConfig;
use malite::harness::{self, SweepGrid, TrainedModel};
use malite::net::{NetConfig, TrainConfig};
use malite::parallel::workers_from_env;
use malite::{Error, Result};

#[derive(Parser)]
#[command(
    name = "malite",
    version,
    about = "Lightweight malware classification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a binary file into a byteplot image (raw dump or PNG)
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Three consecutive bytes per pixel instead of one
        #[arg(long)]
        rgb: bool,
        /// Resize to side x side; omit to keep the native geometry
        #[arg(long)]
        side: Option<u32>,
        /// Write PNG instead of the raw dump format
        #[arg(long)]
        png: bool,
    },
    /// Extract patch-histogram features into a CSV table
    Featurize {
        /// Class directory tree or a manifest CSV
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
        /// Also write the packed binary feature matrix here
        #[arg(long)]
        mlfv: Option<PathBuf>,
    },
    /// Train the histogram + random-forest classifier from a feature CSV
    TrainHrf {
        features: PathBuf,
        model: PathBuf,
        #[arg(long, default_value_t = 51)]
        estimators: usize,
        #[arg(long, default_value_t = 15)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Featurization settings recorded in the model (must match the
        /// ones used to produce the feature CSV)
        #[command(flatten)]
        features_meta: FeatureArgs,
    },
    /// Train the bottleneck-CNN classifier from a dataset
    TrainMn {
        /// Class directory tree or a manifest CSV
        input: PathBuf,
        model: PathBuf,
        /// JSON file with optional "net" and "train" sections
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a trained model; prints a report table
    Eval {
        model: PathBuf,
        /// Feature CSV (hrf), manifest CSV, or class directory tree
        data: PathBuf,
        /// Write the JSON report here as well
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and score a forest per feature-parameter grid point
    Sweep {
        /// Class directory tree or a manifest CSV
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated bin sizes (default 16,32,64,128,256)
        #[arg(long, value_delimiter = ',')]
        bins: Option<Vec<u32>>,
        /// Comma-separated patch heights (default 8,16,32,64,128,256)
        #[arg(long, value_delimiter = ',')]
        ph: Option<Vec<u32>>,
        /// Comma-separated estimator counts (default 11,31,51,101)
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<usize>>,
    },
    /// Parameter / mult-add / size accounting for a model or config
    Cost {
        /// Model file (.mlte), net-config JSON, "default-mn" or "default-hrf"
        target: String,
        /// Emit the report as JSON instead of a table
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct FeatureArgs {
    #[arg(long, default_value_t = 64)]
    bins: u32,
    #[arg(long, default_value_t = 32)]
    ph: u32,
    #[arg(long, default_value_t = 256)]
    pw: u32,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
}

impl FeatureArgs {
    fn specs(&self) -> Result<(PatchSpec, HistogramConfig)> {
        Ok((
            PatchSpec::new(self.ph, self.pw, self.overlap)?,
            HistogramConfig::new(self.bins)?,
        ))
    }
}

/// Print to stdout, treating a closed pipe (e.g. `| head`) as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    if let Err(e) = std::io::stdout().write_all(text.as_bytes()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        return Err(e.into());
    }
    Ok(())
}

/// Directory tree or manifest CSV.
fn read_manifest(path: &Path) -> Result<Manifest> {
    if path.is_dir() {
        data::scan_dir(path)
    } else {
        data::read_manifest_csv(std::fs::File::open(path)?)
    }
}

/// Feature CSV, manifest CSV, or directory, detected by shape.
enum EvalData {
    Features(FeatureTable),
    Dataset(Manifest),
}

fn read_eval_data(path: &Path) -> Result<EvalData> {
    if path.is_dir() {
        return Ok(EvalData::Dataset(data::scan_dir(path)?));
    }
    let head = {
        use std::io::Read;
        let mut buf = [0u8; 64];
        let n = std::fs::File::open(path)?.read(&mut buf)?;
        String::from_utf8_lossy(&buf[..n]).into_owned()
    };
    if head.starts_with("path,label,bytes") {
        Ok(EvalData::Dataset(data::read_manifest_csv(
            std::fs::File::open(path)?,
        )?))
    } else if head.starts_with("path,label,f0") {
        Ok(EvalData::Features(featurizer::read_features_csv(
            std::fs::File::open(path)?,
        )?))
    } else {
        Err(Error::format(format!(
            "{} is neither a manifest (path,label,bytes) nor a feature CSV (path,label,f0...)",
            path.display()
        )))
    }
}

#[derive(serde::Deserialize, Default)]
struct MnConfigFile {
    net: Option<NetConfig>,
    train: Option<TrainConfig>,
}

fn run(cli: Cli) -> Result<()> {
    let workers = workers_from_env();
    match cli.command {
        Command::Convert {
            input,
            output,
            rgb,
            side,
            png,
        } => {
            let img = harness::byteplot_from_file(&input, rgb, side)?;
            if png || output.extension().is_some_and(|e| e == "png") {
                std::fs::write(&output, byteplot::to_png_bytes(&img)?)?;
            } else {
                let mut file = std::io::BufWriter::new(std::fs::File::create(&output)?);
                byteplot::write_raw(&img, &mut file)?;
            }
            eprintln!(
                "wrote {}x{}x{} image to {}",
                img.width,
                img.height,
                img.channels,
                output.display()
            );
        }
        Command::Featurize {
            input,
            output,
            features,
            mlfv,
        } => {
            let (patch, hist) = features.specs()?;
            let manifest = read_manifest(&input)?;
            let table = harness::featurize_manifest(&manifest, &patch, &hist, workers)?;
            featurizer::write_features_csv(&table, std::fs::File::create(&output)?)?;
            if let Some(packed) = mlfv {
                featurizer::write_features_packed(
                    &table.features,
                    std::fs::File::create(&packed)?,
                )?;
            }
            eprintln!(
                "featurized {} samples into {}-dim vectors",
                table.features.len(),
                table.feature_dim()
            );
        }
        Command::TrainHrf {
            features,
            model,
            estimators,
            depth,
            seed,
            features_meta,
        } => {
            let (patch, hist) = features_meta.specs()?;
            let table = featurizer::read_features_csv(std::fs::File::open(&features)?)?;
            let cfg = ForestConfig {
                n_estimators: estimators,
                max_depth: depth,
                seed,
                ..ForestConfig::default()
            };
            let trained = harness::train_hrf(&table, patch, hist, &cfg, workers)?;
            let stats = trained.forest.tree_stats();
            std::fs::write(&model, harness::save_model(&TrainedModel::Hrf(trained))?)?;
            eprintln!(
                "trained {estimators} trees (max depth {}, {} nodes) -> {}",
                stats.max_depth_observed,
                stats.total_nodes,
                model.display()
            );
        }
        Command::TrainMn {
            input,
            model,
            config,
            epochs,
            seed,
        } => {
            let manifest = read_manifest(&input)?;
            let file_cfg: MnConfigFile = match &config {
                Some(path) => serde_json::from_reader(std::fs::File::open(path)?)?,
                None => MnConfigFile::default(),
            };
            let net_cfg = file_cfg
                .net
                .unwrap_or_else(|| NetConfig::default_256(manifest.classes.len()));
            let mut train_cfg = file_cfg.train.unwrap_or_default();
            if let Some(epochs) = epochs {
                train_cfg.epochs = epochs;
            }
            train_cfg.seed = seed;
            let (trained, history) =
                harness::train_mn(&manifest, &net_cfg, &train_cfg, seed, workers)?;
            std::fs::write(&model, harness::save_model(&TrainedModel::Mn(trained))?)?;
            eprintln!(
                "trained {} epochs, final loss {:.6} -> {}",
                history.len(),
                history.last().copied().unwrap_or(f64::NAN),
                model.display()
            );
        }
        Command::Eval {
            model,
            data,
            report,
        } => {
            let loaded = harness::load_model(&std::fs::read(&model)?)?;
            let eval_report = match loaded {
                TrainedModel::Hrf(hrf) => match read_eval_data(&data)? {
                    EvalData::Features(table) => {
                        harness::evaluate_hrf(&hrf, &table, &data.to_string_lossy())?
                    }
                    EvalData::Dataset(manifest) => {
                        let table =
                            harness::featurize_manifest(&manifest, &hrf.patch, &hrf.hist, workers)?;
                        harness::evaluate_hrf(&hrf, &table, &data.to_string_lossy())?
                    }
                },
                TrainedModel::Mn(mut mn) => match read_eval_data(&data)? {
                    EvalData::Dataset(manifest) => {
                        harness::evaluate_mn(&mut mn, &manifest, workers)?
                    }
                    EvalData::Features(_) => {
                        return Err(Error::format(
                            "network models evaluate on images; pass a manifest or directory",
                        ))
                    }
                },
            };
            emit(&eval_report.render_table())?;
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_vec_pretty(&eval_report)?)?;
            }
        }
        Command::Sweep {
            input,
            output,
            seed,
            bins,
            ph,
            estimators,
        } => {
            let manifest = read_manifest(&input)?;
            let split = data::SplitSpec {
                seed,
                ..Default::default()
            };
            let (train, eval) = data::stratified_split(&manifest, &split)?;
            let mut grid = SweepGrid::default();
            if let Some(bins) = bins {
                grid.bins = bins;
            }
            if let Some(ph) = ph {
                grid.patch_heights = ph;
            }
            if let Some(estimators) = estimators {
                grid.estimators = estimators;
            }
            let rows = harness::sweep_hrf(&train, &eval, &grid, 15, seed, workers)?;
            harness::write_sweep_csv(&rows, std::fs::File::create(&output)?)?;
            let evaluated = rows.iter().filter(|r| r.skipped.is_none()).count();
            eprintln!(
                "swept {} grid points ({} evaluated) -> {}",
                rows.len(),
                evaluated,
                output.display()
            );
        }
        Command::Cost { target, json } => {
            let report = cost_target(&target)?;
            if json {
                emit(&format!("{}\n", serde_json::to_string_pretty(&report)?))?;
            } else {
                emit(&report.render_table())?;
            }
        }
    }
    Ok(())
}

fn cost_target(target: &str) -> Result<costmodel::CostReport> {
    match target {
        "default-mn" => {
            let cfg = NetConfig::default_256(10);
            let net = malite::net::build_malite_mn(&cfg, 0)?;
            let labels = (0..10).map(|i| format!("class{i}")).collect();
            let model = TrainedModel::Mn(harness::MnModel { net, labels });
            harness::cost_report(&model)
        }
        // planned pipeline: configured depth bound, no trained nodes yet
        "default-hrf" => Ok(costmodel::report_hrf(16, 32, 256, 51, 15, 0, 0)),
        path => {
            let path = Path::new(path);
            let bytes = std::fs::read(path)?;
            if bytes.starts_with(b"MLTE") {
                return harness::cost_report(&harness::load_model(&bytes)?);
            }
            // net-config JSON, bare or under a "net" key
            let cfg: NetConfig = serde_json::from_slice::<NetConfig>(&bytes).or_else(|_| {
                serde_json::from_slice::<MnConfigFile>(&bytes)?
                    .net
                    .ok_or_else(|| Error::format(format!("{} holds no net config", path.display())))
            })?;
            cfg.validate()?;
            let net = malite::net::build_malite_mn(&cfg, 0)?;
            let labels = (0..cfg.classes).map(|i| format!("class{i}")).collect();
            harness::cost_report(&TrainedModel::Mn(harness::MnModel { net, labels }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
