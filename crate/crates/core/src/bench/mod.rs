//! Benchmark driver: feature preparation, single runs and the full
//! encoder × architecture grid.

pub mod config;
pub mod table;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{BenchConfig, DatasetSource, NamedEncoder, SplitChoice, TableFormat};
pub use table::{format_cell, BenchResult, Cell, CellStats};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{encode, load_embedding_file, save_embedding_file, EncoderSpec};
use crate::gradcheck::{run_suite, GradReport};
use crate::models::Arch;
use crate::tensor::FeatureMatrix;
use crate::train::{aggregate, run_seed, RunResult};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrepareReport {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<PathBuf>,
    /// File encoders, checked but never rewritten.
    pub validated: Vec<PathBuf>,
}

fn check_rows(path: &Path, m: &FeatureMatrix, dataset: &Dataset) -> Result<()> {
    if m.rows() != dataset.num_nodes() {
        return Err(Error::Dataset(format!(
            "feature file {} has {} rows but dataset {} has {} nodes",
            path.display(),
            m.rows(),
            dataset.name,
            dataset.num_nodes()
        )));
    }
    Ok(())
}

fn prepare_one(config: &BenchConfig, enc: &NamedEncoder, dataset: &Dataset, force: bool, report: &mut PrepareReport) -> Result<()> {
    let path = config.feature_path(enc);
    if let EncoderSpec::File { .. } = enc.spec {
        check_rows(&path, &load_embedding_file(&path)?, dataset)?;
        report.validated.push(path);
        return Ok(());
    }
    if path.exists() && !force {
        report.skipped.push(path);
        return Ok(());
    }
    let m = encode(&enc.spec, dataset)?;
    save_embedding_file(&path, &m)?;
    report.written.push(path);
    Ok(())
}

/// Writes one EMB1 file per encoder under `<output_dir>/features/`.
/// Existing files are kept unless `force` is set.
pub fn cmd_prepare(config: &BenchConfig, force: bool) -> Result<PrepareReport> {
    let dataset = config.load_dataset()?;
    let mut report = PrepareReport::default();
    for enc in &config.encoders {
        prepare_one(config, enc, &dataset, force, &mut report)?;
    }
    Ok(report)
}

/// Loads the prepared features of `enc` into a copy of `dataset`.
fn with_features(config: &BenchConfig, enc: &NamedEncoder, dataset: &Dataset) -> Result<Dataset> {
    let path = config.feature_path(enc);
    let m = load_embedding_file(&path)?;
    check_rows(&path, &m, dataset)?;
    let mut ds = dataset.clone();
    ds.set_features(m)?;
    Ok(ds)
}

fn run_cell(config: &BenchConfig, dataset: &Dataset, arch: Arch, seed: u64) -> Result<RunResult> {
    let x = dataset.features()?;
    let spec = config.model_spec(arch, x.cols(), dataset.num_classes());
    let split = config.split_for(dataset, seed)?;
    let (_, result) = run_seed(&spec, dataset, &split, &config.train, seed)?;
    Ok(result)
}

fn write_log(config: &BenchConfig, encoder: &str, arch: Arch, r: &RunResult) -> Result<()> {
    let path = config.log_path(encoder, arch, r.seed);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    r.write_log(std::io::BufWriter::new(file)).map_err(|e| Error::io(&path, e))
}

/// One training run. Prepares the encoder's features first if they are
/// missing. Logs per-epoch metrics under `<output_dir>/logs/`.
pub fn cmd_train(config: &BenchConfig, encoder: &str, arch: Arch, seed: u64) -> Result<RunResult> {
    let enc = config.encoder(encoder)?;
    let dataset = config.load_dataset()?;
    prepare_one(config, enc, &dataset, false, &mut PrepareReport::default())?;
    let ds = with_features(config, enc, &dataset)?;
    let result = run_cell(config, &ds, arch, seed)?;
    write_log(config, &enc.name, arch, &result)?;
    Ok(result)
}

/// Runs every (encoder, arch, seed) triple on a bounded worker pool and
/// aggregates per cell. Failures are recorded in their cells; the grid is
/// always complete.
pub fn cmd_bench(config: &BenchConfig) -> Result<BenchResult> {
    if config.train.seeds.len() < 2 {
        return Err(Error::Config(format!(
            "bench aggregates mean ± std and needs at least 2 seeds, got {}",
            config.train.seeds.len()
        )));
    }
    let dataset = config.load_dataset()?;
    let prepared: Vec<Result<Dataset>> = config
        .encoders
        .iter()
        .map(|enc| {
            prepare_one(config, enc, &dataset, false, &mut PrepareReport::default())?;
            with_features(config, enc, &dataset)
        })
        .collect();

    let seeds = &config.train.seeds;
    let jobs: Vec<(usize, usize, u64)> = (0..config.encoders.len())
        .flat_map(|e| (0..config.archs.len()).flat_map(move |a| seeds.iter().map(move |&s| (e, a, s))))
        .filter(|&(e, _, _)| prepared[e].is_ok())
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<RunResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(e, a, seed)| {
                let ds = prepared[e].as_ref().expect("filtered");
                let arch = config.archs[a];
                let r = run_cell(config, ds, arch, seed)?;
                write_log(config, &config.encoders[e].name, arch, &r)?;
                Ok(r)
            })
            .collect()
    });

    let mut cells = Vec::with_capacity(config.encoders.len() * config.archs.len());
    for (e, enc) in config.encoders.iter().enumerate() {
        for (a, &arch) in config.archs.iter().enumerate() {
            let outcome = match &prepared[e] {
                Err(err) => Err(err.to_string()),
                Ok(_) => {
                    let mine = jobs.iter().zip(&outcomes).filter(|((je, ja, _), _)| *je == e && *ja == a);
                    let mut runs = Vec::new();
                    let mut failure = None;
                    for ((_, _, seed), r) in mine {
                        match r {
                            Ok(r) => runs.push(r.clone()),
                            Err(err) => {
                                failure.get_or_insert_with(|| format!("seed {seed}: {err}"));
                            }
                        }
                    }
                    match failure {
                        Some(f) => Err(f),
                        None => aggregate(&runs).map_err(|e| e.to_string()).map(|(mean, std)| CellStats {
                            mean,
                            std,
                            seeds: runs.iter().map(|r| r.seed).collect(),
                            epochs_ran: runs.iter().map(|r| r.epochs_ran).collect(),
                            test_accs: runs.iter().map(|r| r.test_acc_at_best_val).collect(),
                        }),
                    }
                }
            };
            cells.push(Cell {
                encoder: enc.name.clone(),
                arch,
                outcome,
            });
        }
    }
    Ok(BenchResult {
        encoders: config.encoders.iter().map(|e| e.name.clone()).collect(),
        archs: config.archs.clone(),
        cells,
    })
}

/// Renders `result` in `format`.
pub fn render(result: &BenchResult, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Md => Ok(result.to_markdown()),
        TableFormat::Tex => Ok(result.to_latex()),
        TableFormat::Csv => result.to_csv(),
    }
}

/// Writes `<output_dir>/results.csv` and returns its path.
pub fn write_results_csv(config: &BenchConfig, result: &BenchResult) -> Result<PathBuf> {
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let path = config.output_dir.join("results.csv");
    fs::write(&path, result.to_csv()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn cmd_gradcheck(seeds: u64) -> Result<GradReport> {
    run_suite(seeds)
}
