//! Model configuration files, event-log files, CSV tables and run manifests.
//!
//! Complex numbers are `[re, im]` pairs and matrices are row-major lists of
//! rows. Sector indices are 0-based. Floats in event logs and tables are
//! written with 17 significant digits so that every `f64` round-trips.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{EventLog, EventRecord};
use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::model::{
    build_chain, build_model, ChainRule, ChainStep, Coupling, HybridModel, ModelError, ModelSpec, PureHybridState,
    UNIT_NORM_TOL,
};

/// Tolerance on `||psi|| = 1` when validating event-log records.
pub const LOG_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{origin}:{line}:{column}: at `{field}`: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("`{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{context}: {source}")]
    Model { context: String, source: ModelError },
    #[error("line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Write(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

/// `[re, im]`.
pub type ComplexEntry = [f64; 2];
/// Row-major rows of `[re, im]` entries.
pub type MatrixConfig = Vec<Vec<ComplexEntry>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub to: usize,
    pub from: usize,
    pub matrix: MatrixConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainCouplingConfig {
    pub offset: usize,
    pub matrix: MatrixConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub dim: usize,
    pub hamiltonian: MatrixConfig,
    #[serde(default)]
    pub couplings: Vec<ChainCouplingConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub sector: usize,
    pub psi: Vec<ComplexEntry>,
}

impl InitialConfig {
    /// Normalized state; `context` labels validation errors.
    pub fn to_state(&self, model: &HybridModel, context: &str) -> Result<PureHybridState> {
        let psi = ComplexVector::from_iterator(self.psi.len(), self.psi.iter().map(|[re, im]| Complex64::new(*re, *im)));
        PureHybridState::new(model, self.sector, psi).map_err(|source| IoError::Model {
            context: context.into(),
            source,
        })
    }
}

/// Declarative model description. Either `sectors`/`hamiltonians`/
/// `couplings` (finite) or `chain` is given, not both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sectors: Vec<SectorConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hamiltonians: Vec<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub couplings: Vec<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn matrix_from_config(field: &str, m: &MatrixConfig) -> Result<ComplexMatrix> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    for (i, row) in m.iter().enumerate() {
        if row.len() != cols {
            return Err(config_error(
                format!("{field}[{i}]"),
                format!("row has {} entries, expected {cols}", row.len()),
            ));
        }
    }
    Ok(ComplexMatrix::from_fn(rows, cols, |i, j| {
        let [re, im] = m[i][j];
        Complex64::new(re, im)
    }))
}

fn matrix_to_config(m: &ComplexMatrix) -> MatrixConfig {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

impl ModelConfig {
    pub fn is_chain(&self) -> bool {
        self.chain.is_some()
    }

    pub fn to_model(&self) -> Result<HybridModel> {
        if let Some(chain) = &self.chain {
            if !self.sectors.is_empty() || !self.hamiltonians.is_empty() || !self.couplings.is_empty() {
                return Err(config_error(
                    "chain",
                    "a chain rule excludes `sectors`, `hamiltonians` and `couplings`",
                ));
            }
            let hamiltonian = matrix_from_config("chain.hamiltonian", &chain.hamiltonian)?;
            let steps = chain
                .couplings
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    Ok(ChainStep {
                        offset: c.offset,
                        matrix: matrix_from_config(&format!("chain.couplings[{k}].matrix"), &c.matrix)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return build_chain(ChainRule {
                dim: chain.dim,
                hamiltonian,
                steps,
            })
            .map_err(|source| IoError::Model {
                context: "chain".into(),
                source,
            });
        }
        let hamiltonians = if self.hamiltonians.is_empty() {
            self.sectors
                .iter()
                .map(|s| ComplexMatrix::zeros(s.dim, s.dim))
                .collect::<Vec<_>>()
        } else {
            self.hamiltonians
                .iter()
                .enumerate()
                .map(|(k, h)| matrix_from_config(&format!("hamiltonians[{k}]"), h))
                .collect::<Result<Vec<_>>>()?
        };
        if !self.sectors.is_empty() {
            if self.sectors.len() != hamiltonians.len() {
                return Err(config_error(
                    "hamiltonians",
                    format!("{} matrices for {} sectors", hamiltonians.len(), self.sectors.len()),
                ));
            }
            for (k, (s, h)) in self.sectors.iter().zip(&hamiltonians).enumerate() {
                if h.nrows() != s.dim || h.ncols() != s.dim {
                    return Err(config_error(
                        format!("hamiltonians[{k}]"),
                        format!("shape {}x{} does not match sector dim {}", h.nrows(), h.ncols(), s.dim),
                    ));
                }
            }
        }
        let couplings = self
            .couplings
            .iter()
            .enumerate()
            .map(|(k, c)| {
                Ok(Coupling {
                    target: c.to,
                    source: c.from,
                    matrix: matrix_from_config(&format!("couplings[{k}].matrix"), &c.matrix)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        build_model(hamiltonians, couplings).map_err(|source| IoError::Model {
            context: "model".into(),
            source,
        })
    }

    /// The configured initial state, if any.
    pub fn initial_state(&self, model: &HybridModel) -> Option<Result<PureHybridState>> {
        self.initial.as_ref().map(|init| init.to_state(model, "initial"))
    }

    /// Description of `model`, without initial state or sector names.
    pub fn from_model(model: &HybridModel) -> Self {
        match model.spec() {
            ModelSpec::Finite { hamiltonians, couplings } => ModelConfig {
                sectors: hamiltonians
                    .iter()
                    .map(|h| SectorConfig {
                        name: None,
                        dim: h.nrows(),
                    })
                    .collect(),
                hamiltonians: hamiltonians.iter().map(matrix_to_config).collect(),
                couplings: couplings
                    .iter()
                    .map(|c| CouplingConfig {
                        to: c.target,
                        from: c.source,
                        matrix: matrix_to_config(&c.matrix),
                    })
                    .collect(),
                ..ModelConfig::default()
            },
            ModelSpec::Chain(rule) => ModelConfig {
                chain: Some(ChainConfig {
                    dim: rule.dim,
                    hamiltonian: matrix_to_config(&rule.hamiltonian),
                    couplings: rule
                        .steps
                        .iter()
                        .map(|s| ChainCouplingConfig {
                            offset: s.offset,
                            matrix: matrix_to_config(&s.matrix),
                        })
                        .collect(),
                }),
                ..ModelConfig::default()
            },
        }
    }

    pub fn with_initial(mut self, x: &PureHybridState) -> Self {
        self.initial = Some(InitialConfig {
            sector: x.sector,
            psi: x.psi.iter().map(|z| [z.re, z.im]).collect(),
        });
        self
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a configuration document. `origin` names the source in errors.
pub fn parse_model_config_str(text: &str, origin: &str) -> Result<ModelConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let parsed: std::result::Result<ModelConfig, _> = serde_path_to_error::deserialize(&mut de);
    let config = parsed.map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse {
            origin: origin.to_string(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| IoError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        field: ".".into(),
        message: e.to_string(),
    })?;
    Ok(config)
}

pub fn parse_model_config(path: &Path) -> Result<ModelConfig> {
    parse_model_config_str(&read_file(path)?, &path.display().to_string())
}

/// Reads and validates a model file.
pub fn parse_model(path: &Path) -> Result<HybridModel> {
    parse_model_config(path)?.to_model()
}

pub fn serialize_config(config: &ModelConfig) -> String {
    let mut s = serde_json::to_string_pretty(config).expect("configs serialize");
    s.push('\n');
    s
}

pub fn serialize_model(model: &HybridModel) -> String {
    serialize_config(&ModelConfig::from_model(model))
}

/// Decimal with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogHeader {
    model_digest: String,
    master_seed: u64,
    trajectory_index: u64,
    t_end: f64,
    records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogRecord {
    trajectory_index: u64,
    n: usize,
    t: f64,
    sector: usize,
    psi: Vec<ComplexEntry>,
}

/// Writes one trajectory as a header line followed by one line per record.
pub fn write_event_log<W: Write>(w: &mut W, log: &EventLog) -> Result<()> {
    writeln!(
        w,
        "{{\"model_digest\":{},\"master_seed\":{},\"trajectory_index\":{},\"t_end\":{},\"records\":{}}}",
        Value::String(log.model_id.clone()),
        log.master_seed,
        log.trajectory_index,
        format_f64(log.t_end),
        log.records.len()
    )?;
    for r in &log.records {
        let psi: Vec<String> = r
            .psi
            .iter()
            .map(|z| format!("[{},{}]", format_f64(z.re), format_f64(z.im)))
            .collect();
        writeln!(
            w,
            "{{\"trajectory_index\":{},\"n\":{},\"t\":{},\"sector\":{},\"psi\":[{}]}}",
            log.trajectory_index,
            r.n,
            format_f64(r.t),
            r.sector,
            psi.join(",")
        )?;
    }
    Ok(())
}

fn log_error(line: usize, message: impl Into<String>) -> IoError {
    IoError::Log {
        line,
        message: message.into(),
    }
}

/// Reads concatenated trajectories, checking the line structure: a header,
/// then exactly the announced number of records with matching trajectory
/// index and `n = 0, 1, ...`.
pub fn read_event_logs<R: Read>(reader: R) -> Result<Vec<EventLog>> {
    let mut logs: Vec<EventLog> = Vec::new();
    let mut expected = 0usize;
    let mut last_line = 0;
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = k + 1;
        last_line = lineno;
        let line = line?;
        if line.trim().is_empty() {
            return Err(log_error(lineno, "empty line"));
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| log_error(lineno, e.to_string()))?;
        if value.get("model_digest").is_some() {
            if expected != 0 {
                return Err(log_error(lineno, format!("header before {expected} remaining records")));
            }
            let h: LogHeader = serde_json::from_value(value).map_err(|e| log_error(lineno, e.to_string()))?;
            if h.records == 0 {
                return Err(log_error(lineno, "a trajectory has at least one record"));
            }
            expected = h.records;
            logs.push(EventLog {
                model_id: h.model_digest,
                master_seed: h.master_seed,
                trajectory_index: h.trajectory_index,
                records: Vec::with_capacity(h.records),
                t_end: h.t_end,
            });
            continue;
        }
        let r: LogRecord = serde_json::from_value(value).map_err(|e| log_error(lineno, e.to_string()))?;
        let log = match logs.last_mut() {
            Some(log) if expected > 0 => log,
            _ => return Err(log_error(lineno, "record without a header")),
        };
        if r.trajectory_index != log.trajectory_index {
            return Err(log_error(
                lineno,
                format!("trajectory_index {} under header {}", r.trajectory_index, log.trajectory_index),
            ));
        }
        if r.n != log.records.len() {
            return Err(log_error(lineno, format!("record n = {}, expected {}", r.n, log.records.len())));
        }
        log.records.push(EventRecord {
            n: r.n,
            t: r.t,
            sector: r.sector,
            psi: ComplexVector::from_iterator(r.psi.len(), r.psi.iter().map(|[re, im]| Complex64::new(*re, *im))),
        });
        expected -= 1;
    }
    if expected != 0 {
        return Err(log_error(last_line, format!("file ends {expected} records early")));
    }
    Ok(logs)
}

pub fn read_event_log_file(path: &Path) -> Result<Vec<EventLog>> {
    let f = fs::File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    read_event_logs(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LogSummary {
    pub trajectories: usize,
    pub events: usize,
}

/// Checks the contents of parsed logs: times start at 0, increase strictly
/// and stay within `t_end`; states are unit vectors. With a model, also
/// checks the digest, sector dimensions and that every jump follows a
/// nonzero coupling.
pub fn validate_event_logs(logs: &[EventLog], model: Option<&HybridModel>) -> std::result::Result<LogSummary, String> {
    let mut events = 0;
    for log in logs {
        let id = log.trajectory_index;
        if let Some(m) = model {
            if log.model_id != m.digest() {
                return Err(format!("trajectory {id}: model digest {} does not match", log.model_id));
            }
        }
        let first = log.records.first().ok_or(format!("trajectory {id}: no records"))?;
        if first.t != 0.0 {
            return Err(format!("trajectory {id}: first record at t = {}", first.t));
        }
        if !(log.t_end >= 0.0) || !log.t_end.is_finite() {
            return Err(format!("trajectory {id}: invalid t_end {}", log.t_end));
        }
        for (k, r) in log.records.iter().enumerate() {
            if k > 0 {
                let prev = &log.records[k - 1];
                if !(r.t > prev.t) {
                    return Err(format!("trajectory {id} record {k}: time {} does not exceed {}", r.t, prev.t));
                }
                if let Some(m) = model {
                    if m.coupling(r.sector, prev.sector).is_none() {
                        return Err(format!(
                            "trajectory {id} record {k}: no coupling ({},{})",
                            r.sector, prev.sector
                        ));
                    }
                }
            }
            if r.t > log.t_end {
                return Err(format!("trajectory {id} record {k}: time {} beyond t_end {}", r.t, log.t_end));
            }
            if (r.psi.norm() - 1.0).abs() > LOG_NORM_TOL.max(UNIT_NORM_TOL) {
                return Err(format!("trajectory {id} record {k}: state norm {}", r.psi.norm()));
            }
            if let Some(m) = model {
                let dim = m.dim(r.sector).map_err(|e| format!("trajectory {id} record {k}: {e}"))?;
                if dim != r.psi.len() {
                    return Err(format!(
                        "trajectory {id} record {k}: state length {} in sector of dim {dim}",
                        r.psi.len()
                    ));
                }
            }
        }
        events += log.records.len() - 1;
    }
    Ok(LogSummary {
        trajectories: logs.len(),
        events,
    })
}

/// Numeric table with a header row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Columns written as integers.
    pub integer: Vec<bool>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        let header: Vec<String> = header.into_iter().map(Into::into).collect();
        Table {
            integer: vec![false; header.len()],
            header,
            rows: Vec::new(),
        }
    }

    /// Marks `name` as an integer column.
    pub fn integer_column(mut self, name: &str) -> Self {
        if let Some(j) = self.header.iter().position(|h| h == name) {
            self.integer[j] = true;
        }
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn write_csv<W: Write>(w: W, table: &Table) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&table.header)?;
    for row in &table.rows {
        out.write_record(row.iter().zip(&table.integer).map(|(x, int)| {
            if *int {
                format!("{}", *x as i64)
            } else {
                format_f64(*x)
            }
        }))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Table> {
    let mut input = csv::Reader::from_reader(r);
    let header: Vec<String> = input.headers()?.iter().map(String::from).collect();
    let mut table = Table::new(header);
    for (k, record) in input.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| log_error(k + 2, format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        table.rows.push(row);
    }
    Ok(table)
}

/// Everything needed to regenerate an output: the command line, the model
/// digest it ran against and the resolved parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub model_digest: String,
    pub seed: u64,
    pub params: BTreeMap<String, Value>,
    pub outputs: Vec<String>,
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifests serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = read_file(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse {
            origin: path.display().to_string(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::applications::{build_fluorescence, build_telegraph, FluorescenceParams};
    use crate::engine::{simulate_trajectory, TrajectoryConfig};
    use rand::SeedableRng;

    const TELEGRAPH: &str = r#"{
  "sectors": [{"name": "up", "dim": 1}, {"name": "down", "dim": 1}],
  "hamiltonians": [[[[0, 0]]], [[[0, 0]]]],
  "couplings": [
    {"to": 1, "from": 0, "matrix": [[[1.4142135623730951, 0]]]},
    {"to": 0, "from": 1, "matrix": [[[1.4142135623730951, 0]]]}
  ]
}"#;

    #[test]
    fn telegraph_config() {
        let config = parse_model_config_str(TELEGRAPH, "telegraph").unwrap();
        let m = config.to_model().unwrap();
        for a in 0..2 {
            let rate = &m.sector(a).unwrap().rate_operator;
            assert!((rate[(0, 0)].re - 2.0).abs() < 1e-15);
        }
        assert!(config.initial_state(&m).is_none());
    }

    #[test]
    fn diagonal_coupling_is_named() {
        let text = r#"{"hamiltonians": [[[[0,0]]], [[[0,0]]]],
            "couplings": [{"to": 1, "from": 1, "matrix": [[[0.5, 0]]]}]}"#;
        let err = parse_model_config_str(text, "x").unwrap().to_model().unwrap_err();
        assert!(matches!(err, IoError::Model { source: ModelError::DiagonalCoupling { sector: 1 }, .. }));
        assert!(err.to_string().contains("(1,1)"), "{err}");
    }

    #[test]
    fn parse_errors_carry_context() {
        let text = "{\n  \"sectors\": [{\"dim\": 1}],\n  \"hamiltonians\": [[[[0, \"x\"]]]]\n}";
        match parse_model_config_str(text, "bad.json").unwrap_err() {
            IoError::Parse { line, field, origin, .. } => {
                assert_eq!(line, 3);
                assert_eq!(origin, "bad.json");
                assert!(field.starts_with("hamiltonians[0]"), "{field}");
            }
            e => panic!("{e}"),
        }
        let err = parse_model_config_str(r#"{"sectorz": []}"#, "x").unwrap_err();
        assert!(err.to_string().contains("sectorz"));
        let ragged = r#"{"hamiltonians": [[[[0,0],[0,0]], [[0,0]]]]}"#;
        let err = parse_model_config_str(ragged, "x").unwrap().to_model().unwrap_err();
        assert!(matches!(err, IoError::Config { ref field, .. } if field == "hamiltonians[0][1]"), "{err}");
        let mismatch = r#"{"sectors": [{"dim": 2}], "hamiltonians": [[[[0,0]]]]}"#;
        assert!(parse_model_config_str(mismatch, "x").unwrap().to_model().is_err());
    }

    #[test]
    fn chain_config_matches_builder() {
        let p = FluorescenceParams::new(1.0, 2.0).unwrap();
        let built = build_fluorescence(p, None).unwrap();
        let text = serialize_model(&built);
        let parsed = parse_model_config_str(&text, "chain").unwrap();
        assert!(parsed.is_chain());
        let m = parsed.to_model().unwrap();
        assert_eq!(m.digest(), built.digest());
        for n in 0..=5 {
            let (a, b) = (m.sector(n).unwrap(), built.sector(n).unwrap());
            assert_eq!(a.generator, b.generator);
            assert_eq!(m.outgoing(n).unwrap().len(), 1);
        }
    }

    #[test]
    fn round_trip_preserves_digest() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = crate::model::random_model(&mut rng, 4, 3, 1.0);
            let again = parse_model_config_str(&serialize_model(&m), "r").unwrap().to_model().unwrap();
            assert_eq!(again.digest(), m.digest());
        }
        let t = build_telegraph(0.7).unwrap();
        let x = PureHybridState::basis(&t, 1, 0).unwrap();
        let config = ModelConfig::from_model(&t).with_initial(&x);
        let back = parse_model_config_str(&serialize_config(&config), "r").unwrap();
        assert_eq!(back, config);
        assert_eq!(back.initial_state(&t).unwrap().unwrap(), x);
    }

    #[test]
    fn event_log_round_trip() {
        let p = FluorescenceParams::new(1.0, 2.0).unwrap();
        let m = build_fluorescence(p, None).unwrap();
        let x0 = PureHybridState::new(&m, 0, crate::applications::ground_state()).unwrap();
        let cfg = TrajectoryConfig {
            t_max: 20.0,
            seed: 3,
            ..TrajectoryConfig::default()
        };
        let mut buf = Vec::new();
        let mut logs = Vec::new();
        for i in 0..3 {
            let log = simulate_trajectory(&m, &x0, &cfg, i).unwrap();
            write_event_log(&mut buf, &log).unwrap();
            logs.push(log);
        }
        let back = read_event_logs(&buf[..]).unwrap();
        assert_eq!(back, logs);
        let summary = validate_event_logs(&back, Some(&m)).unwrap();
        assert_eq!(summary.trajectories, 3);
        assert_eq!(summary.events, logs.iter().map(|l| l.jump_count()).sum::<usize>());
        let other = build_telegraph(1.0).unwrap();
        assert!(validate_event_logs(&back, Some(&other)).is_err());
    }

    #[test]
    fn malformed_logs_are_rejected() {
        let header = r#"{"model_digest":"d","master_seed":0,"trajectory_index":0,"t_end":1.0,"records":2}"#;
        let r0 = r#"{"trajectory_index":0,"n":0,"t":0.0,"sector":0,"psi":[[1.0,0.0]]}"#;
        let r1 = r#"{"trajectory_index":0,"n":1,"t":0.5,"sector":1,"psi":[[1.0,0.0]]}"#;
        let ok = format!("{header}\n{r0}\n{r1}\n");
        assert_eq!(read_event_logs(ok.as_bytes()).unwrap().len(), 1);
        let truncated = format!("{header}\n{r0}\n");
        assert!(read_event_logs(truncated.as_bytes()).is_err());
        let orphan = format!("{r0}\n");
        assert!(read_event_logs(orphan.as_bytes()).is_err());
        let skipped = format!("{header}\n{r0}\n{}\n", r1.replace("\"n\":1", "\"n\":2"));
        match read_event_logs(skipped.as_bytes()).unwrap_err() {
            IoError::Log { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let backwards = format!("{header}\n{r0}\n{}\n", r1.replace("0.5", "0.0"));
        let logs = read_event_logs(backwards.as_bytes()).unwrap();
        assert!(validate_event_logs(&logs, None).is_err());
        let late = format!("{header}\n{r0}\n{}\n", r1.replace("0.5", "1.5"));
        let logs = read_event_logs(late.as_bytes()).unwrap();
        assert!(validate_event_logs(&logs, None).is_err());
    }

    #[test]
    fn floats_keep_every_bit() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut t = Table::new(["t", "p"]);
        t.push(vec![0.0, 1.0]);
        t.push(vec![0.05, 1.0 / 3.0]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &t).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("t,p\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), t);
        let mut counts = Table::new(["n", "p"]).integer_column("n");
        counts.push(vec![3.0, 0.25]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &counts).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,p\n3,2.5000000000000000e-1\n");
        assert_eq!(t.column("p").unwrap()[1], 1.0 / 3.0);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = std::env::temp_dir().join(format!("hybrid-pdp-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let out = dir.join("traj.jsonl");
        let path = manifest_path(&out);
        assert!(path.to_string_lossy().ends_with("traj.jsonl.manifest.json"));
        let mut params = BTreeMap::new();
        params.insert("t_max".to_string(), Value::from(10.0));
        let m = RunManifest {
            version: "0.1.0".into(),
            command: "trajectory".into(),
            argv: vec!["trajectory".into(), "--seed".into(), "7".into()],
            model_digest: "abc".into(),
            seed: 7,
            params,
            outputs: vec![out.display().to_string()],
        };
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
        fs::remove_dir_all(&dir).unwrap();
    }
}
