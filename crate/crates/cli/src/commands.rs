use std::fs;
use std::path::{Path, PathBuf};

use koopid::analysis::{observability_rank, spectral_radius, ObservabilityReport};
use koopid::autodiff::{Parameters, Tensor};
use koopid::benchmarks::{
    default_wh_system, generate_poly, generate_siso, LinearSystem, PolySystem, SplitLengths, WhEmbedding, WhSystem,
    DEFAULT_WH_SEED,
};
use koopid::data::Dataset;
use koopid::model::StructureKind;
use koopid::training::{
    evaluate_dataset, train_with_observer, EpochRecord, EvalMode, EvalReport, IdentifiedModel, StatePredictor,
    TrainConfig, TrainReport, WhOracle,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::trace::Trace;

pub const SYSTEM_FILE: &str = "system.json";
pub const MODEL_FILE: &str = "model.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.csv";

fn required_dir(value: &str, key: &str) -> Result<PathBuf> {
    if value.is_empty() {
        return Err(CliError::Config(format!("`{key}` is required")));
    }
    Ok(PathBuf::from(value))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Poly,
    Wh,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSettings {
    pub system: SystemKind,
    /// Signal-to-noise ratio in dB; `none` for noise-free data.
    pub snr: Option<f64>,
    pub seed: u64,
    /// Draws the Wiener-Hammerstein or linear system itself.
    pub system_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// State dimension of the linear system.
    pub order: usize,
    /// Spectral radius of the linear system.
    pub radius: f64,
    pub out: String,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        let lens = SplitLengths::default();
        GenerateSettings {
            system: SystemKind::Wh,
            snr: None,
            seed: 0,
            system_seed: DEFAULT_WH_SEED,
            n_train: lens.train,
            n_val: lens.val,
            n_test: lens.test,
            order: 4,
            radius: 0.9,
            out: String::new(),
        }
    }
}

/// The data-generating system, as recorded next to the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum SystemRecord {
    Poly(PolySystem),
    Wh(WhSystem),
    Linear(LinearSystem),
}

pub fn wh_system(seed: u64) -> WhSystem {
    if seed == DEFAULT_WH_SEED {
        default_wh_system()
    } else {
        WhSystem::random(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

pub fn generate(s: &GenerateSettings) -> Result<()> {
    let out = required_dir(&s.out, "out")?;
    if let Some(snr) = s.snr {
        if !snr.is_finite() {
            return Err(CliError::Config("snr must be finite".into()));
        }
    }
    let lens = SplitLengths {
        train: s.n_train,
        val: s.n_val,
        test: s.n_test,
    };
    if lens.as_array().iter().any(|&n| n < 2) {
        return Err(CliError::Config("every split needs at least two samples".into()));
    }
    let (ds, record) = match s.system {
        SystemKind::Poly => {
            if s.snr.is_some() {
                return Err(CliError::Config("the polynomial benchmark is noise-free; use snr = none".into()));
            }
            let sys = PolySystem::default();
            (generate_poly(&sys, lens, s.seed)?, SystemRecord::Poly(sys))
        }
        SystemKind::Wh => {
            let sys = wh_system(s.system_seed);
            (generate_siso(&sys, lens, s.snr, s.seed)?, SystemRecord::Wh(sys))
        }
        SystemKind::Linear => {
            if s.order == 0 || !(s.radius > 0.0 && s.radius < 1.0) {
                return Err(CliError::Config("linear system needs order ≥ 1 and 0 < radius < 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(s.system_seed);
            let sys = LinearSystem::random(s.order, s.radius, s.snr.is_some(), &mut rng)?;
            (generate_siso(&sys, lens, s.snr, s.seed)?, SystemRecord::Linear(sys))
        }
    };
    create_dir(&out)?;
    ds.save(&out)?;
    write_json(
        &out.join(SYSTEM_FILE),
        &json!({
            "version": koopid::VERSION,
            "command": "generate",
            "config": s,
            "system": record,
            "sigma_e": ds.provenance.sigma_e,
        }),
    )?;
    println!(
        "wrote {} samples ({}/{}/{}) to {}",
        ds.total_len(),
        lens.train,
        lens.val,
        lens.test,
        out.display()
    );
    Ok(())
}

/// The system recorded by `generate` in a data directory, if any.
pub fn read_system(dir: &Path) -> Result<Option<SystemRecord>> {
    let path = dir.join(SYSTEM_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let record = serde_json::from_value(v["system"].clone())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Some(record))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainSettings {
    pub data: String,
    pub out: String,
    #[serde(flatten)]
    pub train: TrainConfig,
}

pub fn train(s: &TrainSettings) -> Result<()> {
    let data = required_dir(&s.data, "data")?;
    let out = required_dir(&s.out, "out")?;
    s.train.validate()?;
    let ds = Dataset::load(&data)?;
    create_dir(&out)?;
    let header = format!("resolved train configuration, koopid {}", koopid::VERSION);
    write_text(&out.join(CONFIG_SNAPSHOT_FILE), &crate::config::to_flat(s, &header)?)?;

    let checkpoint = out.join(CHECKPOINT_FILE);
    let mut records = Vec::<EpochRecord>::new();
    let mut save_error = None;
    let result = train_with_observer(&ds, &s.train, &mut |rec, best| {
        println!(
            "epoch {:>4}  train {:.6e}  val {:.6e}  val_nrms {:.4}{}",
            rec.epoch,
            rec.train_loss,
            rec.val_loss,
            rec.val_nrms,
            if best.is_some() { "  *" } else { "" }
        );
        records.push(rec.clone());
        if let Some(m) = best {
            if let Err(e) = m.save(&checkpoint) {
                save_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = save_error {
        return Err(e.into());
    }
    match result {
        Ok(outcome) => {
            outcome.model.save(&out.join(MODEL_FILE))?;
            write_report(&out, s, "completed", None, &outcome.report.epochs, Some(&outcome.report))?;
            println!(
                "best epoch {} (val {:.6e}), model written to {}",
                outcome.report.best_epoch,
                outcome.report.best_val_loss,
                out.join(MODEL_FILE).display()
            );
            Ok(())
        }
        Err(e) => {
            let status = match e {
                koopid::Error::Divergence { .. } | koopid::Error::NonFinite(_) => "diverged",
                _ => "failed",
            };
            write_report(&out, s, status, Some(&e.to_string()), &records, None)?;
            Err(e.into())
        }
    }
}

fn write_report(
    out: &Path,
    s: &TrainSettings,
    status: &str,
    error: Option<&str>,
    epochs: &[EpochRecord],
    report: Option<&TrainReport>,
) -> Result<()> {
    write_json(
        &out.join(REPORT_FILE),
        &json!({
            "version": koopid::VERSION,
            "command": "train",
            "status": status,
            "error": error,
            "config": s,
            "epochs": epochs,
            "report": report,
        }),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    None,
    Poly,
    Wh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSplit {
    Train,
    Val,
    Test,
    TestClean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Model file written by `train`.
    pub model: String,
    /// Evaluate the exact benchmark model instead of a trained one.
    pub oracle: OracleKind,
    /// Warm-up samples for the oracle; a trained model uses its own lag.
    pub lag: usize,
    pub data: String,
    pub out: String,
    /// Split written to the trace file.
    pub split: TraceSplit,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            model: String::new(),
            oracle: OracleKind::None,
            lag: 12,
            data: String::new(),
            out: String::new(),
            split: TraceSplit::Test,
        }
    }
}

fn wh_oracle_system(data: Option<&Path>) -> Result<WhSystem> {
    match data.map(read_system).transpose()?.flatten() {
        None => Ok(default_wh_system()),
        Some(SystemRecord::Wh(sys)) => Ok(sys),
        Some(_) => Err(CliError::Data("the data was not generated by a Wiener-Hammerstein system".into())),
    }
}

fn check_source(model: &str, oracle: OracleKind) -> Result<()> {
    match (model.is_empty(), oracle) {
        (true, OracleKind::None) => Err(CliError::Config("either `model` or `oracle` is required".into())),
        (false, o) if o != OracleKind::None => Err(CliError::Config("`model` and `oracle` are exclusive".into())),
        _ => Ok(()),
    }
}

pub fn eval(s: &EvalSettings) -> Result<()> {
    check_source(&s.model, s.oracle)?;
    let data = required_dir(&s.data, "data")?;
    let out = required_dir(&s.out, "out")?;
    let ds = Dataset::load(&data)?;
    let predictor: Box<dyn StatePredictor> = match s.oracle {
        OracleKind::None => Box::new(IdentifiedModel::load(Path::new(&s.model))?),
        OracleKind::Wh => {
            let embedding = WhEmbedding::new(&wh_oracle_system(Some(&data))?)?;
            Box::new(WhOracle { embedding, lag: s.lag })
        }
        OracleKind::Poly => return Err(CliError::Config("the polynomial oracle has no input-output predictor".into())),
    };
    if predictor.n_u() != ds.n_u() || predictor.n_y() != ds.n_y() {
        return Err(CliError::Data(format!(
            "model has {} inputs and {} outputs, data has {} and {}",
            predictor.n_u(),
            predictor.n_y(),
            ds.n_u(),
            ds.n_y()
        )));
    }
    let metrics: EvalReport = evaluate_dataset(predictor.as_ref(), &ds)?;
    let series = match s.split {
        TraceSplit::Train => &ds.train,
        TraceSplit::Val => &ds.val,
        TraceSplit::Test => &ds.test,
        TraceSplit::TestClean => ds
            .test_clean
            .as_ref()
            .ok_or_else(|| CliError::Data("the dataset has no clean test split".into()))?,
    };
    let lag = predictor.lag();
    let trace = Trace {
        k: (lag..series.len()).collect(),
        y: series.y_rows().split_off(lag),
        simulation: predictor.predict(series, EvalMode::Simulation)?,
        one_step: predictor.predict(series, EvalMode::OneStep)?,
    };
    create_dir(&out)?;
    trace.write(&out.join(TRACE_FILE))?;
    write_json(
        &out.join(METRICS_FILE),
        &json!({
            "version": koopid::VERSION,
            "command": "eval",
            "config": s,
            "metrics": metrics,
        }),
    )?;
    println!(
        "simulation NRMS test {:.6}, one-step NRMS test {:.6}",
        metrics.simulation.test, metrics.one_step.test
    );
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct DiagnoseSettings {
    pub model: String,
    pub oracle: OracleKind,
    /// Data directory whose recorded system the Wiener-Hammerstein oracle uses.
    pub data: String,
    /// Number of observability blocks; defaults to the state dimension.
    pub n: Option<usize>,
    /// Report file; printed to stdout when empty.
    pub out: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub model: usize,
    pub encoder: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub source: String,
    pub n_z: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub observability: ObservabilityReport,
    pub spectral_radius: f64,
    pub parameters: Option<ParameterCounts>,
    pub b_structure: Option<StructureKind>,
    pub k_structure: Option<StructureKind>,
}

fn count(p: &dyn Parameters) -> usize {
    let mut n = 0;
    p.visit_params("", &mut |_, t| n += t.len());
    n
}

fn matrix_tensor(rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) -> Result<Tensor> {
    let data = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| at(i, j)).collect();
    Ok(Tensor::matrix(rows, cols, data)?)
}

pub fn diagnosis(s: &DiagnoseSettings) -> Result<Diagnosis> {
    check_source(&s.model, s.oracle)?;
    let (source, a, c, n_u, params, kinds) = match s.oracle {
        OracleKind::None => {
            let m = IdentifiedModel::load(Path::new(&s.model))?;
            let (pm, pe) = (count(&m.model), count(&m.encoder));
            let params = ParameterCounts {
                model: pm,
                encoder: pe,
                total: pm + pe,
            };
            let kinds = (m.model.b.kind(), m.model.k.kind());
            ("model".to_string(), m.model.a.clone(), m.model.c.clone(), m.model.n_u(), Some(params), Some(kinds))
        }
        OracleKind::Poly => {
            let sys = PolySystem::default();
            ("oracle:poly".into(), sys.lifted_a(), PolySystem::lifted_c(), 0, None, None)
        }
        OracleKind::Wh => {
            let data = (!s.data.is_empty()).then(|| PathBuf::from(&s.data));
            let emb = WhEmbedding::new(&wh_oracle_system(data.as_deref())?)?;
            let (a, c) = (emb.a(), emb.c());
            let a = matrix_tensor(a.nrows(), a.ncols(), |i, j| a[(i, j)])?;
            let c = matrix_tensor(c.nrows(), c.ncols(), |i, j| c[(i, j)])?;
            ("oracle:wh".into(), a, c, 1, None, None)
        }
    };
    let n_z = a.rows();
    let n = s.n.unwrap_or(n_z);
    if n == 0 {
        return Err(CliError::Config("`n` must be positive".into()));
    }
    Ok(Diagnosis {
        source,
        n_z,
        n_u,
        n_y: c.rows(),
        observability: observability_rank(&a, &c, n)?,
        spectral_radius: spectral_radius(&a)?,
        parameters: params,
        b_structure: kinds.map(|k| k.0),
        k_structure: kinds.map(|k| k.1),
    })
}

pub fn diagnose(s: &DiagnoseSettings) -> Result<()> {
    let d = diagnosis(s)?;
    let v = json!({
        "version": koopid::VERSION,
        "command": "diagnose",
        "config": s,
        "diagnosis": d,
    });
    if s.out.is_empty() {
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        let out = PathBuf::from(&s.out);
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_json(&out, &v)?;
    }
    Ok(())
}
