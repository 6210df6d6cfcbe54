//! Benchmark-task manifests, split loading and metric dispatch.
//!
//! Manifest grammar, one `key<TAB>value` pair per line after the header:
//!
//! ```text
//! protok-manifest<TAB>1
//! task<TAB><short name>
//! task_name<TAB><long name>
//! dataset<TAB><dataset or split-strategy name>
//! category<TAB>protein-wise | protein-pair
//! kind<TAB>regression | classification
//! metric<TAB>spearman | accuracy | mse
//! class_count<TAB><n>               (classification only)
//! multi_label<TAB>true | false      (optional, default false)
//! train<TAB><path>
//! validation<TAB><path>
//! test<TAB><path>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Split paths are
//! relative to a dataset root chosen by the caller.
//!
//! Split files are CSV with a header row: `sequence,label` for protein-wise
//! tasks and `sequence_a,sequence_b,label` for protein-pair tasks. Labels
//! are reals for regression, class ids for classification, and
//! `;`-separated class ids for multi-label tasks.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{CorpusError, ProteinSequence};
use crate::metrics::{accuracy, mse, spearman, MetricError, PredictionBatch, Target, TaskKind};

const MANIFEST_MAGIC: &str = "protok-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("manifest line 1: bad header {0:?}")]
    BadHeader(String),
    #[error("manifest line {line}: {msg}")]
    BadLine { line: usize, msg: String },
    #[error("manifest is missing field {0:?}")]
    MissingField(&'static str),
    #[error("manifest line {line}: duplicate field {field:?}")]
    DuplicateField { line: usize, field: String },
    #[error("manifest line {line}: unknown field {field:?}")]
    UnknownField { line: usize, field: String },
    #[error("manifest line {line}: unknown category {value:?}")]
    UnknownCategory { line: usize, value: String },
    #[error("manifest line {line}: unknown kind {value:?}")]
    UnknownKind { line: usize, value: String },
    #[error("manifest line {line}: unknown metric {value:?}")]
    UnknownMetric { line: usize, value: String },
    #[error("metric {metric} does not apply to {kind} tasks")]
    MetricKindMismatch { metric: Metric, kind: TaskKind },
    #[error("classification tasks need a positive class_count")]
    MissingClassCount,
    #[error("class_count is only valid for classification tasks")]
    UnexpectedClassCount,
    #[error("multi_label is only valid for classification tasks")]
    UnexpectedMultiLabel,
    #[error("manifest has no {0} split file")]
    MissingSplit(Split),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {msg}")]
    Csv { path: PathBuf, line: u64, msg: String },
    #[error("{path}: header {found:?}, expected {expected:?}")]
    BadColumns { path: PathBuf, found: Vec<String>, expected: Vec<String> },
    #[error("{path}: line {line}: bad label {value:?}")]
    BadLabel { path: PathBuf, line: u64, value: String },
    #[error("{path}: line {line}: class {class} is not below the class count {class_count}")]
    ClassOutOfRange { path: PathBuf, line: u64, class: u32, class_count: usize },
    #[error("{path}: line {line}: {source}")]
    Residue { path: PathBuf, line: u64, source: CorpusError },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    ProteinWise,
    ProteinPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Spearman,
    Accuracy,
    Mse,
}

impl Metric {
    pub fn kind(self) -> TaskKind {
        match self {
            Metric::Spearman | Metric::Mse => TaskKind::Regression,
            Metric::Accuracy => TaskKind::Classification,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Spearman => "spearman",
            Metric::Accuracy => "accuracy",
            Metric::Mse => "mse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskManifest {
    pub task: String,
    pub task_name: String,
    pub dataset: String,
    pub category: Category,
    pub kind: TaskKind,
    pub metric: Metric,
    pub class_count: Option<usize>,
    pub multi_label: bool,
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
}

impl TaskManifest {
    pub fn split_path(&self, split: Split) -> &Path {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn columns(&self) -> &'static [&'static str] {
        match self.category {
            Category::ProteinWise => &["sequence", "label"],
            Category::ProteinPair => &["sequence_a", "sequence_b", "label"],
        }
    }
}

const FIELDS: [&str; 11] = [
    "task",
    "task_name",
    "dataset",
    "category",
    "kind",
    "metric",
    "class_count",
    "multi_label",
    "train",
    "validation",
    "test",
];

pub fn load_manifest(bytes: &[u8]) -> Result<TaskManifest, BenchError> {
    let text = std::str::from_utf8(bytes).map_err(|e| BenchError::BadLine { line: 0, msg: e.to_string() })?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    if header != format!("{MANIFEST_MAGIC}\t{MANIFEST_VERSION}") {
        return Err(BenchError::BadHeader(header.to_string()));
    }
    let mut values: [Option<(usize, String)>; FIELDS.len()] = Default::default();
    for (line, l) in lines {
        if l.trim().is_empty() || l.starts_with('#') {
            continue;
        }
        let (key, value) = l
            .split_once('\t')
            .ok_or_else(|| BenchError::BadLine { line, msg: format!("expected <key>\\t<value>, got {l:?}") })?;
        let idx = FIELDS
            .iter()
            .position(|f| *f == key)
            .ok_or_else(|| BenchError::UnknownField { line, field: key.to_string() })?;
        if values[idx].is_some() {
            return Err(BenchError::DuplicateField { line, field: key.to_string() });
        }
        values[idx] = Some((line, value.trim().to_string()));
    }
    let get = |name: &'static str| {
        let idx = FIELDS.iter().position(|f| *f == name).unwrap();
        values[idx].clone().filter(|(_, v)| !v.is_empty())
    };
    let required = |name: &'static str| get(name).ok_or(BenchError::MissingField(name));

    let (line, v) = required("category")?;
    let category = match v.as_str() {
        "protein-wise" => Category::ProteinWise,
        "protein-pair" => Category::ProteinPair,
        _ => return Err(BenchError::UnknownCategory { line, value: v }),
    };
    let (line, v) = required("kind")?;
    let kind = match v.as_str() {
        "regression" => TaskKind::Regression,
        "classification" => TaskKind::Classification,
        _ => return Err(BenchError::UnknownKind { line, value: v }),
    };
    let (line, v) = required("metric")?;
    let metric = match v.as_str() {
        "spearman" => Metric::Spearman,
        "accuracy" => Metric::Accuracy,
        "mse" => Metric::Mse,
        _ => return Err(BenchError::UnknownMetric { line, value: v }),
    };
    if metric.kind() != kind {
        return Err(BenchError::MetricKindMismatch { metric, kind });
    }
    let class_count = match get("class_count") {
        Some((line, v)) => {
            let n: usize = v.parse().map_err(|_| BenchError::BadLine { line, msg: format!("bad class_count {v:?}") })?;
            if n == 0 {
                return Err(BenchError::MissingClassCount);
            }
            Some(n)
        }
        None => None,
    };
    match (kind, class_count) {
        (TaskKind::Classification, None) => return Err(BenchError::MissingClassCount),
        (TaskKind::Regression, Some(_)) => return Err(BenchError::UnexpectedClassCount),
        _ => {}
    }
    let multi_label = match get("multi_label") {
        None => false,
        Some((_, v)) if v == "false" => false,
        Some((_, v)) if v == "true" => true,
        Some((line, v)) => return Err(BenchError::BadLine { line, msg: format!("bad multi_label {v:?}") }),
    };
    if multi_label && kind != TaskKind::Classification {
        return Err(BenchError::UnexpectedMultiLabel);
    }
    let split = |s: Split| get(s.name()).map(|(_, v)| PathBuf::from(v)).ok_or(BenchError::MissingSplit(s));
    Ok(TaskManifest {
        task: required("task")?.1,
        task_name: required("task_name")?.1,
        dataset: required("dataset")?.1,
        category,
        kind,
        metric,
        class_count,
        multi_label,
        train: split(Split::Train)?,
        validation: split(Split::Validation)?,
        test: split(Split::Test)?,
    })
}

pub fn save_manifest(m: &TaskManifest) -> String {
    let category = match m.category {
        Category::ProteinWise => "protein-wise",
        Category::ProteinPair => "protein-pair",
    };
    let mut out = format!(
        "{MANIFEST_MAGIC}\t{MANIFEST_VERSION}\ntask\t{}\ntask_name\t{}\ndataset\t{}\ncategory\t{category}\nkind\t{}\nmetric\t{}\n",
        m.task, m.task_name, m.dataset, m.kind, m.metric
    );
    if let Some(n) = m.class_count {
        out.push_str(&format!("class_count\t{n}\n"));
    }
    out.push_str(&format!("multi_label\t{}\n", m.multi_label));
    for s in Split::ALL {
        out.push_str(&format!("{s}\t{}\n", m.split_path(s).display()));
    }
    out
}

/// Loads every `*.manifest` file in `dir`, sorted by file name.
pub fn load_manifest_dir(dir: &Path) -> Result<Vec<(PathBuf, TaskManifest)>, BenchError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BenchError::Io { path, source }
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io(dir))?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "manifest"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).map_err(io(&p))?;
            let m = load_manifest(&bytes)?;
            Ok((p, m))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExampleInput {
    Single(ProteinSequence),
    Pair(ProteinSequence, ProteinSequence),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub input: ExampleInput,
    pub label: Target,
}

/// Parses one label cell under the manifest's label grammar. `path` and
/// `line` are used only in diagnostics.
pub fn parse_label(m: &TaskManifest, raw: &str, path: &Path, line: u64) -> Result<Target, BenchError> {
    let bad = || BenchError::BadLabel { path: path.to_path_buf(), line, value: raw.to_string() };
    let class = |s: &str| -> Result<u32, BenchError> {
        let c: u32 = s.trim().parse().map_err(|_| bad())?;
        let class_count = m.class_count.unwrap_or(0);
        if c as usize >= class_count {
            return Err(BenchError::ClassOutOfRange { path: path.to_path_buf(), line, class: c, class_count });
        }
        Ok(c)
    };
    match m.kind {
        TaskKind::Regression => {
            let x: f64 = raw.trim().parse().map_err(|_| bad())?;
            if !x.is_finite() {
                return Err(bad());
            }
            Ok(Target::Real(x))
        }
        TaskKind::Classification if m.multi_label => {
            let ids = if raw.trim().is_empty() {
                Vec::new()
            } else {
                raw.split(';').map(class).collect::<Result<_, _>>()?
            };
            Ok(Target::class_set(ids))
        }
        TaskKind::Classification => Ok(Target::Class(class(raw)?)),
    }
}

/// Parses split-file contents. `path` is used only in diagnostics.
pub fn parse_split(m: &TaskManifest, bytes: &[u8], path: &Path) -> Result<Vec<LabeledExample>, BenchError> {
    let csv_err = |e: csv::Error| BenchError::Csv {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        msg: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let found: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let expected: Vec<String> = m.columns().iter().map(|s| s.to_string()).collect();
    if found != expected {
        return Err(BenchError::BadColumns { path: path.to_path_buf(), found, expected });
    }
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let seq = |col: usize, suffix: &str| {
            ProteinSequence::new(format!("row{}{suffix}", row + 1), record[col].trim()).map_err(|source| BenchError::Residue {
                path: path.to_path_buf(),
                line,
                source,
            })
        };
        let (input, label_col) = match m.category {
            Category::ProteinWise => (ExampleInput::Single(seq(0, "")?), 1),
            Category::ProteinPair => (ExampleInput::Pair(seq(0, "a")?, seq(1, "b")?), 2),
        };
        let label = parse_label(m, &record[label_col], path, line)?;
        out.push(LabeledExample { input, label });
    }
    Ok(out)
}

/// Reads the split file of `m` resolved against `root`.
pub fn load_split(m: &TaskManifest, split: Split, root: &Path) -> Result<Vec<LabeledExample>, BenchError> {
    let path = root.join(m.split_path(split));
    let bytes = std::fs::read(&path).map_err(|source| BenchError::Io { path: path.clone(), source })?;
    parse_split(m, &bytes, &path)
}

/// Serializes examples in the split-file format of `m`.
pub fn write_split(m: &TaskManifest, examples: &[LabeledExample]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(m.columns()).expect("in-memory write");
    for ex in examples {
        let label = match &ex.label {
            Target::Real(x) => x.to_string(),
            Target::Class(c) => c.to_string(),
            Target::ClassSet(s) => s.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
        };
        match &ex.input {
            ExampleInput::Single(s) => w.write_record([s.residues(), &label]),
            ExampleInput::Pair(a, b) => w.write_record([a.residues(), b.residues(), &label]),
        }
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}

/// Computes the manifest's metric over aligned predictions and labels.
pub fn evaluate(m: &TaskManifest, predictions: &[Target], labels: &[Target]) -> Result<f64, BenchError> {
    let batch = PredictionBatch::new(m.kind, predictions.to_vec(), labels.to_vec(), m.class_count)?;
    Ok(match m.metric {
        Metric::Spearman => {
            let (p, l) = batch.reals()?;
            spearman(&p, &l)?
        }
        Metric::Mse => mse(&batch)?,
        Metric::Accuracy => accuracy(&batch)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GB1: &str = "protok-manifest\t1\ntask\tGB1\ntask_name\tGB1 fitness prediction\ndataset\tone_vs_rest\n\
category\tprotein-wise\nkind\tregression\nmetric\tspearman\ntrain\tgb1/train.csv\nvalidation\tgb1/valid.csv\ntest\tgb1/test.csv\n";
    const YEAST: &str = "protok-manifest\t1\ntask\tYeast\ntask_name\tYeast PPI prediction\ndataset\tdefault\n\
category\tprotein-pair\nkind\tclassification\nmetric\taccuracy\nclass_count\t2\ntrain\ty/train.csv\nvalidation\ty/valid.csv\ntest\ty/test.csv\n";

    fn shs() -> TaskManifest {
        let text = YEAST.replace("class_count\t2", "class_count\t7").replace("Yeast", "SHS27k");
        load_manifest(text.as_bytes()).unwrap()
    }

    #[test]
    fn loads_example_manifests() {
        let m = load_manifest(GB1.as_bytes()).unwrap();
        assert_eq!((m.category, m.kind, m.metric), (Category::ProteinWise, TaskKind::Regression, Metric::Spearman));
        assert_eq!(m.class_count, None);
        let y = load_manifest(YEAST.as_bytes()).unwrap();
        assert_eq!((y.category, y.metric, y.class_count), (Category::ProteinPair, Metric::Accuracy, Some(2)));
        assert_eq!(load_manifest(save_manifest(&y).as_bytes()).unwrap(), y);
    }

    #[test]
    fn rejects_invalid_manifests() {
        let bad = GB1.replace("metric\tspearman", "metric\taccuracy");
        assert!(matches!(load_manifest(bad.as_bytes()), Err(BenchError::MetricKindMismatch { .. })));
        let bad = YEAST.replace("metric\taccuracy", "metric\tmse");
        assert!(matches!(load_manifest(bad.as_bytes()), Err(BenchError::MetricKindMismatch { .. })));
        let bad = GB1.replace("test\tgb1/test.csv\n", "");
        assert!(matches!(load_manifest(bad.as_bytes()), Err(BenchError::MissingSplit(Split::Test))));
        let bad = GB1.replace("protein-wise", "residue-wise");
        assert!(matches!(load_manifest(bad.as_bytes()), Err(BenchError::UnknownCategory { line: 5, .. })));
        let bad = YEAST.replace("class_count\t2\n", "");
        assert!(matches!(load_manifest(bad.as_bytes()), Err(BenchError::MissingClassCount)));
        let bad = GB1.replace("metric\tspearman\n", "metric\tspearman\nclass_count\t3\n");
        assert!(matches!(load_manifest(bad.as_bytes()), Err(BenchError::UnexpectedClassCount)));
        let bad = GB1.replace("task\tGB1\n", "task\tGB1\ntask\tAAV\n");
        assert!(matches!(load_manifest(bad.as_bytes()), Err(BenchError::DuplicateField { .. })));
        assert!(matches!(load_manifest(b"manifest\n"), Err(BenchError::BadHeader(_))));
    }

    #[test]
    fn split_files_round_trip() {
        let m = load_manifest(GB1.as_bytes()).unwrap();
        let p = Path::new("gb1.csv");
        let ex = parse_split(&m, b"sequence,label\nMKV,0.5\nGGA,-1.25e-3\n", p).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[1].label, Target::Real(-1.25e-3));
        assert_eq!(parse_split(&m, write_split(&m, &ex).as_bytes(), p).unwrap(), ex);

        let m = shs();
        let ex = parse_split(&m, b"sequence_a,sequence_b,label\nMKV,GG,6\nAA,CC,0\n", p).unwrap();
        assert!(matches!(&ex[0].input, ExampleInput::Pair(a, b) if a.residues() == "MKV" && b.residues() == "GG"));
        assert_eq!(parse_split(&m, write_split(&m, &ex).as_bytes(), p).unwrap(), ex);
    }

    #[test]
    fn split_errors_carry_rows() {
        let m = shs();
        let p = Path::new("shs.csv");
        let err = parse_split(&m, b"sequence_a,sequence_b,label\nMKV,GG,6\nAA,CC,7\n", p).unwrap_err();
        assert!(matches!(err, BenchError::ClassOutOfRange { line: 3, class: 7, class_count: 7, .. }), "{err}");
        let err = parse_split(&m, b"sequence_a,sequence_b,label\nMK1,GG,1\n", p).unwrap_err();
        assert!(matches!(err, BenchError::Residue { line: 2, .. }), "{err}");
        let err = parse_split(&m, b"sequence,label\nMK,1\n", p).unwrap_err();
        assert!(matches!(err, BenchError::BadColumns { .. }));
        let g = load_manifest(GB1.as_bytes()).unwrap();
        let err = parse_split(&g, b"sequence,label\nMK,high\n", p).unwrap_err();
        assert!(matches!(err, BenchError::BadLabel { line: 2, .. }));
    }

    #[test]
    fn multi_label_sets() {
        let text = YEAST
            .replace("protein-pair", "protein-wise")
            .replace("class_count\t2", "class_count\t9\nmulti_label\ttrue");
        let m = load_manifest(text.as_bytes()).unwrap();
        let ex = parse_split(&m, b"sequence,label\nMK,3;1\nGG,\nAA,8\n", Path::new("s.csv")).unwrap();
        assert_eq!(ex[0].label, Target::ClassSet(vec![1, 3]));
        assert_eq!(ex[1].label, Target::ClassSet(vec![]));
        assert_eq!(parse_split(&m, write_split(&m, &ex).as_bytes(), Path::new("s.csv")).unwrap(), ex);
    }

    #[test]
    fn evaluate_dispatch() {
        let g = load_manifest(GB1.as_bytes()).unwrap();
        let ys = [Target::Real(0.1), Target::Real(0.7), Target::Real(0.3)];
        assert_eq!(evaluate(&g, &ys, &ys).unwrap(), 1.0);
        let e = load_manifest(GB1.replace("metric\tspearman", "metric\tmse").as_bytes()).unwrap();
        assert_eq!(evaluate(&e, &ys, &ys).unwrap(), 0.0);
        let m = shs();
        let labels: Vec<Target> = (0..7).map(Target::Class).collect();
        let wrong: Vec<Target> = (0..7).map(|c| Target::Class((c + 1) % 7)).collect();
        assert_eq!(evaluate(&m, &wrong, &labels).unwrap(), 0.0);
        assert_eq!(evaluate(&m, &labels, &labels).unwrap(), 1.0);
        assert!(evaluate(&m, &[Target::Class(7)], &[Target::Class(0)]).is_err());
    }

    #[test]
    fn shipped_manifests_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/manifests");
        let all = load_manifest_dir(&dir).unwrap();
        assert_eq!(all.len(), 33);
        let count = |t: &str| all.iter().filter(|(_, m)| m.task == t).count();
        assert_eq!((count("GB1"), count("AAV"), count("Fold")), (5, 7, 3));
    }

    #[test]
    fn load_split_reads_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("gb1")).unwrap();
        std::fs::write(dir.path().join("gb1/train.csv"), "sequence,label\nMKV,1\n").unwrap();
        let m = load_manifest(GB1.as_bytes()).unwrap();
        assert_eq!(load_split(&m, Split::Train, dir.path()).unwrap().len(), 1);
        assert!(matches!(load_split(&m, Split::Test, dir.path()), Err(BenchError::Io { .. })));
    }
}
