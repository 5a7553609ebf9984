//! Versioned CSV artifacts.
//!
//! Every file starts with one metadata line
//!
//! ```text
//! # pcis-<kind> v<version> config=<sha256> seed=<seed> [key=value ...]
//! ```
//!
//! followed by an ordinary CSV header row and the data rows. Readers reject
//! other kinds and unknown versions, and report errors with 1-based file line
//! numbers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pcis_core::oracle::FiniteMdpModel;
use pcis_core::shield::{RunRecord, TrajectoryStep};
use pcis_core::{
    ActionMaps, DataOrigin, LatticeGrid, LatticeMask, OperatorResult, SafetyValueTable, Transition, TransitionDataset,
};

use crate::error::{PcisError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Dataset,
    Mask,
    Values,
    ActionMaps,
    Operator,
    Kernel,
    Trajectory,
    Weights,
    RunRecord,
    IntervalSummary,
    Summary,
    Verdict,
    VerifyReport,
}

impl TableKind {
    pub const ALL: [TableKind; 13] = [
        TableKind::Dataset,
        TableKind::Mask,
        TableKind::Values,
        TableKind::ActionMaps,
        TableKind::Operator,
        TableKind::Kernel,
        TableKind::Trajectory,
        TableKind::Weights,
        TableKind::RunRecord,
        TableKind::IntervalSummary,
        TableKind::Summary,
        TableKind::Verdict,
        TableKind::VerifyReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TableKind::Dataset => "dataset",
            TableKind::Mask => "mask",
            TableKind::Values => "values",
            TableKind::ActionMaps => "action-maps",
            TableKind::Operator => "operator",
            TableKind::Kernel => "kernel",
            TableKind::Trajectory => "trajectory",
            TableKind::Weights => "weights",
            TableKind::RunRecord => "run-record",
            TableKind::IntervalSummary => "interval-summary",
            TableKind::Summary => "summary",
            TableKind::Verdict => "verdict",
            TableKind::VerifyReport => "verify-report",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Config hash and master seed stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: TableKind,
    pub provenance: Provenance,
    /// Extra `key=value` metadata; keys and values must not contain spaces.
    pub extra: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: TableKind, provenance: &Provenance, columns: Vec<String>) -> Self {
        Self { kind, provenance: provenance.clone(), extra: Vec::new(), columns, rows: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "# pcis-{} v{} config={} seed={}",
            self.kind.name(),
            SCHEMA_VERSION,
            self.provenance.config_hash,
            self.provenance.seed
        );
        for (k, v) in &self.extra {
            out.push_str(&format!(" {k}={v}"));
        }
        out.push('\n');
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out.into_bytes());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| PcisError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| PcisError::io(path, e))
    }
}

/// A parsed artifact; each row keeps its 1-based file line number.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub path: PathBuf,
    pub kind: TableKind,
    pub version: u32,
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

impl ParsedTable {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| PcisError::format(&self.path, 2, format!("missing column `{name}`")))
    }

    pub fn error(&self, line: u64, message: impl Into<String>) -> PcisError {
        PcisError::format(&self.path, line, message)
    }

    pub fn parse<T: std::str::FromStr>(&self, line: u64, row: &[String], col: usize) -> Result<T> {
        row[col]
            .trim()
            .parse()
            .map_err(|_| self.error(line, format!("cannot parse `{}` in column `{}`", row[col], self.columns[col])))
    }

    pub fn seed(&self) -> Option<u64> {
        self.meta.get("seed")?.parse().ok()
    }
}

pub fn parse_table(text: &str, path: &Path, expected: TableKind) -> Result<ParsedTable> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let mut tokens = first.trim_end_matches('\r').split_whitespace();
    if tokens.next() != Some("#") {
        return Err(PcisError::format(path, 1, "missing `# pcis-<kind> v<version>` metadata line"));
    }
    let kind = tokens
        .next()
        .and_then(|t| t.strip_prefix("pcis-"))
        .ok_or_else(|| PcisError::format(path, 1, "missing `pcis-<kind>` tag"))?;
    let kind = TableKind::from_name(kind).ok_or_else(|| PcisError::format(path, 1, format!("unknown artifact kind `{kind}`")))?;
    if kind != expected {
        return Err(PcisError::format(path, 1, format!("expected a {} file, found {}", expected.name(), kind.name())));
    }
    let version = tokens
        .next()
        .and_then(|t| t.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| PcisError::format(path, 1, "missing schema version"))?;
    if version != SCHEMA_VERSION {
        return Err(PcisError::format(path, 1, format!("unsupported schema version v{version} (this build reads v{SCHEMA_VERSION})")));
    }
    let mut meta = BTreeMap::new();
    for t in tokens {
        let (k, v) = t.split_once('=').ok_or_else(|| PcisError::format(path, 1, format!("malformed metadata `{t}`")))?;
        meta.insert(k.to_string(), v.to_string());
    }

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| PcisError::format(path, 2, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line()) + 1;
            PcisError::format(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line()) + 1;
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(ParsedTable { path: path.to_path_buf(), kind, version, meta, columns, rows })
}

pub fn read_table(path: &Path, expected: TableKind) -> Result<ParsedTable> {
    let text = std::fs::read_to_string(path).map_err(|e| PcisError::io(path, e))?;
    parse_table(&text, path, expected)
}

/// Column names of a state: `x, v` for two dimensions, `x` for one.
pub fn state_columns(dim: usize) -> Vec<String> {
    match dim {
        1 => vec!["x".into()],
        2 => vec!["x".into(), "v".into()],
        _ => (0..dim).map(|i| format!("x{i}")).collect(),
    }
}

fn coords(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|v| v.to_string())
}

fn origin_name(origin: DataOrigin) -> &'static str {
    match origin {
        DataOrigin::Grow => "grow",
        DataOrigin::Certification => "certification",
        DataOrigin::Offline => "offline",
    }
}

pub fn dataset_table(dataset: &TransitionDataset, dim: usize, provenance: &Provenance) -> Table {
    let state = state_columns(dim);
    let mut columns = state.clone();
    columns.push("u".into());
    columns.extend(state.iter().map(|c| format!("{c}_next")));
    let mut t = Table::new(TableKind::Dataset, provenance, columns).with_meta("origin", origin_name(dataset.origin()));
    for tr in dataset.transitions() {
        let mut row: Vec<String> = coords(&tr.state).collect();
        row.push(tr.action.to_string());
        row.extend(coords(&tr.next_state));
        t.push(row);
    }
    t
}

/// Reads `(x, u, x′)` rows. A zero-byte file is an empty dataset.
pub fn read_dataset(path: &Path, dim: usize, action_count: usize, origin: DataOrigin) -> Result<TransitionDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| PcisError::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(TransitionDataset::new(origin));
    }
    let t = parse_table(&text, path, TableKind::Dataset)?;
    if t.columns.len() != 2 * dim + 1 {
        return Err(PcisError::Config(format!(
            "{}: dataset has {} columns but the configured state dimension {dim} needs {}",
            path.display(),
            t.columns.len(),
            2 * dim + 1
        )));
    }
    let mut data = TransitionDataset::new(origin);
    for (line, row) in &t.rows {
        let mut values = Vec::with_capacity(2 * dim);
        for col in (0..dim).chain(dim + 1..2 * dim + 1) {
            let v: f64 = t.parse(*line, row, col)?;
            if !v.is_finite() {
                return Err(t.error(*line, "non-finite state coordinate"));
            }
            values.push(v);
        }
        let action: usize = t.parse(*line, row, dim)?;
        if action >= action_count {
            return Err(t.error(*line, format!("action {action} out of range (|U| = {action_count})")));
        }
        let next = values.split_off(dim);
        data.push(Transition::new(values, action, next));
    }
    Ok(data)
}

pub fn mask_table(grid: &LatticeGrid, mask: &LatticeMask, provenance: &Provenance) -> Table {
    let mut columns = vec!["index".to_string()];
    columns.extend(state_columns(grid.dim()));
    columns.push("member".into());
    let mut t = Table::new(TableKind::Mask, provenance, columns).with_meta("points", grid.len());
    for (i, p) in grid.points().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(coords(&p));
        row.push(u8::from(mask.contains(i)).to_string());
        t.push(row);
    }
    t
}

/// Reads a mask written for `grid`; any disagreement in size or
/// coordinates is a grid mismatch.
pub fn read_mask(path: &Path, grid: &LatticeGrid) -> Result<LatticeMask> {
    let t = read_table(path, TableKind::Mask)?;
    let dim = grid.dim();
    if t.columns.len() != dim + 2 {
        return Err(PcisError::Config(format!("{}: mask has state dimension {} but the grid has {dim}", path.display(), t.columns.len().saturating_sub(2))));
    }
    if t.rows.len() != grid.len() {
        return Err(PcisError::Config(format!("{}: mask has {} points but the grid has {}", path.display(), t.rows.len(), grid.len())));
    }
    let mut bits = vec![false; grid.len()];
    for (k, (line, row)) in t.rows.iter().enumerate() {
        let index: usize = t.parse(*line, row, 0)?;
        if index != k {
            return Err(t.error(*line, format!("expected lattice index {k}, found {index}")));
        }
        let point = grid.point(index);
        for (a, expected) in point.iter().enumerate() {
            let c: f64 = t.parse(*line, row, a + 1)?;
            if (c - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(PcisError::Config(format!(
                    "{}:{line}: grid mismatch: coordinate {c} does not match the configured lattice point {expected}",
                    path.display()
                )));
            }
        }
        bits[k] = match row[dim + 1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(t.error(*line, format!("member must be 0 or 1, found `{other}`"))),
        };
    }
    Ok(LatticeMask::from_bits(bits))
}

pub fn values_table(grid: &LatticeGrid, table: &SafetyValueTable, provenance: &Provenance) -> Table {
    let mut columns = vec!["stage".to_string(), "index".to_string()];
    columns.extend(state_columns(grid.dim()));
    columns.push("value".into());
    let mut t = Table::new(TableKind::Values, provenance, columns).with_meta("horizon", table.horizon());
    for j in 0..=table.horizon() {
        for (i, p) in grid.points().enumerate() {
            let mut row = vec![j.to_string(), i.to_string()];
            row.extend(coords(&p));
            row.push(table.get(j, i).to_string());
            t.push(row);
        }
    }
    t
}

pub fn action_maps_table(maps: &ActionMaps, provenance: &Provenance) -> Table {
    let columns = ["stage", "index", "action_bits", "selector"].map(String::from).to_vec();
    let mut t = Table::new(TableKind::ActionMaps, provenance, columns)
        .with_meta("horizon", maps.horizon())
        .with_meta("actions", maps.action_count());
    for j in 0..maps.horizon() {
        for i in 0..maps.points() {
            t.push(vec![j.to_string(), i.to_string(), maps.bits(j, i).to_string(), maps.selector(j, i).to_string()]);
        }
    }
    t
}

/// Per stage: lattice index, value `p̃_j`, and the thresholded action bitmask.
pub fn operator_table(result: &OperatorResult, provenance: &Provenance) -> Table {
    let columns = ["stage", "index", "value", "action_bits"].map(String::from).to_vec();
    let mut t = Table::new(TableKind::Operator, provenance, columns)
        .with_meta("horizon", result.horizon())
        .with_meta("epsilon", result.epsilon);
    for j in 0..result.horizon() {
        for i in 0..result.action_maps.points() {
            t.push(vec![
                j.to_string(),
                i.to_string(),
                result.value_table.get(j, i).to_string(),
                result.action_maps.bits(j, i).to_string(),
            ]);
        }
    }
    t
}

/// Every kernel entry; the sink is next state −1.
pub fn kernel_table(model: &FiniteMdpModel, provenance: &Provenance) -> Table {
    let columns = ["state", "action", "next_state", "probability", "safe"].map(String::from).to_vec();
    let s = model.state_count();
    let mut t = Table::new(TableKind::Kernel, provenance, columns)
        .with_meta("states", s)
        .with_meta("actions", model.action_count());
    for x in 0..s {
        for u in 0..model.action_count() {
            for (k, p) in model.row(x, u).iter().enumerate() {
                let next = if k == s { -1 } else { k as i64 };
                t.push(vec![
                    x.to_string(),
                    u.to_string(),
                    next.to_string(),
                    p.to_string(),
                    u8::from(model.safe_states()[x]).to_string(),
                ]);
            }
        }
    }
    t
}

pub fn trajectory_table(steps: &[TrajectoryStep], dim: usize, provenance: &Provenance) -> Table {
    let mut columns = vec!["step".to_string()];
    columns.extend(state_columns(dim));
    columns.extend(["action_proposed", "action_executed", "reward", "in_omega", "unsafe_exit"].map(String::from));
    let mut t = Table::new(TableKind::Trajectory, provenance, columns);
    for s in steps {
        let mut row = vec![s.step.to_string()];
        row.extend(coords(&s.state));
        row.extend([
            s.proposed.to_string(),
            s.executed.to_string(),
            s.reward.to_string(),
            u8::from(s.in_omega).to_string(),
            u8::from(s.unsafe_exit).to_string(),
        ]);
        t.push(row);
    }
    t
}

/// Flat learner checkpoint: one row per parameter, `(action, feature)` blocks.
pub fn weights_table(weights: &[f64], action_count: usize, provenance: &Provenance) -> Table {
    let columns = ["index", "action", "feature", "weight"].map(String::from).to_vec();
    let block = weights.len() / action_count.max(1);
    let mut t = Table::new(TableKind::Weights, provenance, columns).with_meta("actions", action_count);
    for (i, w) in weights.iter().enumerate() {
        t.push(vec![i.to_string(), (i / block).to_string(), (i % block).to_string(), w.to_string()]);
    }
    t
}

pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let t = read_table(path, TableKind::Weights)?;
    let (ci, cw) = (t.column("index")?, t.column("weight")?);
    let mut out = Vec::with_capacity(t.rows.len());
    for (k, (line, row)) in t.rows.iter().enumerate() {
        let i: usize = t.parse(*line, row, ci)?;
        if i != k {
            return Err(t.error(*line, format!("expected parameter index {k}, found {i}")));
        }
        out.push(t.parse(*line, row, cw)?);
    }
    Ok(out)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn run_record_table(record: &RunRecord, provenance: &Provenance) -> Table {
    let columns = [
        "interval",
        "steps",
        "interval_return",
        "cumulative_return",
        "unsafe_steps",
        "goal",
        "omega_size",
        "accepted",
        "tentative_size",
        "certified",
        "cert_missing",
        "interventions",
        "episodes",
    ]
    .map(String::from)
    .to_vec();
    let mut t = Table::new(TableKind::RunRecord, provenance, columns)
        .with_meta("executed_steps", record.executed_steps)
        .with_meta("unsafe_steps", record.total_unsafe_steps)
        .with_meta("goal_events", record.goal_events)
        .with_meta("cert_unsafe_exits", record.cert_unsafe_exits)
        .with_meta("anomalies", record.anomalies)
        .with_meta("outside_resets", record.outside_resets);
    for r in &record.intervals {
        t.push(vec![
            r.interval.to_string(),
            r.steps.to_string(),
            r.interval_return.to_string(),
            r.cumulative_return.to_string(),
            r.unsafe_steps.to_string(),
            u8::from(r.goal_reached).to_string(),
            r.omega_size.to_string(),
            u8::from(r.accepted).to_string(),
            opt(r.tentative_size),
            opt(r.certified.map(u8::from)),
            opt(r.cert_missing),
            r.interventions.to_string(),
            r.episodes_started.to_string(),
        ]);
    }
    t
}
