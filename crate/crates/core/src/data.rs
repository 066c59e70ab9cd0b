//! Dataset ingestion, split files, and the triangle/hexagon generators.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::eval::{sample_non_edges, EdgeSplit};
use crate::graph::{parse_edge_list, SparseGraph};

pub const SPLIT_VERSION: u32 = 1;
pub const DEFAULT_TRIANGLES: usize = 333;
pub const DEFAULT_HEXAGONS: usize = 167;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub graph: SparseGraph,
    pub features: Option<DenseMatrix>,
    /// Where the data came from: file paths, generator and seed.
    pub provenance: BTreeMap<String, String>,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features.as_ref().map(DenseMatrix::cols)
    }
}

/// Parses a CSV feature matrix: a header `f0,f1,…` then one row per node.
pub fn parse_feature_csv(text: &str) -> Result<DenseMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "empty feature file".into(),
    })?;
    let cols = header.split(',').count();
    for (k, name) in header.split(',').enumerate() {
        if name.trim() != format!("f{k}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header f0..f{}, found {name:?}", cols - 1),
            });
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines {
        let before = values.len();
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad number {tok:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("non-finite feature {tok:?}"),
                });
            }
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected {cols} columns, found {}", values.len() - before),
            });
        }
        rows += 1;
    }
    DenseMatrix::from_vec(rows, cols, values)
}

/// Parses the binary feature layout: rows and columns as little-endian
/// `u64`, then row-major little-endian `f64` values.
pub fn parse_feature_binary(bytes: &[u8]) -> Result<DenseMatrix> {
    let bad = |msg: String| Error::Parse { line: 0, msg };
    if bytes.len() < 16 {
        return Err(bad("binary feature header truncated".into()));
    }
    let dim = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (dim(0) as usize, dim(1) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(16))
        .ok_or_else(|| bad("binary feature dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("{rows}x{cols} features need {expected} bytes, file has {}", bytes.len())));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite feature value".into()));
    }
    DenseMatrix::from_vec(rows, cols, values)
}

/// Reads features as CSV unless the file starts with anything other than
/// the `f0` header, in which case the binary layout is assumed.
pub fn read_features(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"f0") {
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("feature CSV is not UTF-8: {e}"),
        })?;
        parse_feature_csv(&text)
    } else {
        parse_feature_binary(&bytes)
    }
}

pub fn write_features_csv(path: impl AsRef<Path>, x: &DenseMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let header: Vec<String> = (0..x.cols()).map(|k| format!("f{k}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_features_binary(path: impl AsRef<Path>, x: &DenseMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    out.write_all(&(x.rows() as u64).to_le_bytes())?;
    out.write_all(&(x.cols() as u64).to_le_bytes())?;
    for v in x.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads an edge list and optional feature matrix. The node count is
/// `1 + max id`, or the feature row count when that is larger (trailing
/// isolated nodes).
pub fn load_dataset(edge_path: impl AsRef<Path>, feature_path: Option<&Path>) -> Result<Dataset> {
    let edge_path = edge_path.as_ref();
    let (edges, max_id) = parse_edge_list(&fs::read_to_string(edge_path)?)?;
    let features = feature_path.map(read_features).transpose()?;
    let from_edges = max_id.map_or(0, |m| m + 1);
    let n = match &features {
        Some(x) if x.rows() < from_edges => {
            return Err(Error::DimensionMismatch(format!(
                "feature file has {} rows, edge list references {from_edges} nodes",
                x.rows()
            )))
        }
        Some(x) => x.rows(),
        None => from_edges,
    };
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let graph = SparseGraph::from_edges(n, &edges)?;
    let mut provenance = BTreeMap::new();
    provenance.insert("edges".to_string(), edge_path.display().to_string());
    if let Some(p) = feature_path {
        provenance.insert("features".to_string(), p.display().to_string());
    }
    let name = edge_path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset {
        name,
        graph,
        features,
        provenance,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Triangular,
    Hexagonal,
}

impl SynthKind {
    pub fn cycle_len(self) -> usize {
        match self {
            SynthKind::Triangular => 3,
            SynthKind::Hexagonal => 6,
        }
    }

    /// Path length joining the endpoints of a removed cycle edge.
    pub fn closing_path_len(self) -> usize {
        self.cycle_len() - 1
    }

    pub fn default_size(self) -> usize {
        match self {
            SynthKind::Triangular => DEFAULT_TRIANGLES,
            SynthKind::Hexagonal => DEFAULT_HEXAGONS,
        }
    }
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthKind::Triangular => "triangular",
            SynthKind::Hexagonal => "hexagonal",
        })
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triangular" => Ok(SynthKind::Triangular),
            "hexagonal" => Ok(SynthKind::Hexagonal),
            _ => Err(Error::InvalidParameter(format!("unknown synthetic kind {s:?}"))),
        }
    }
}

/// Cycle `c` occupies nodes `len·c .. len·c + len` in ring order.
fn disjoint_cycles(kind: SynthKind, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidParameter(format!("{kind} generator needs at least one component")));
    }
    let len = kind.cycle_len();
    let edges: Vec<(usize, usize)> = (0..count)
        .flat_map(|c| (0..len).map(move |k| (len * c + k, len * c + (k + 1) % len)))
        .collect();
    let graph = SparseGraph::from_edges(len * count, &edges)?;
    let mut provenance = BTreeMap::new();
    provenance.insert("generator".to_string(), kind.to_string());
    provenance.insert("components".to_string(), count.to_string());
    provenance.insert("seed".to_string(), seed.to_string());
    Ok(Dataset {
        name: kind.to_string(),
        graph,
        features: None,
        provenance,
    })
}

/// Disjoint triangles on nodes `3t, 3t+1, 3t+2`. The layout is fixed; the
/// seed is recorded and drives [`case_study_split`].
pub fn generate_triangular(num_triangles: usize, seed: u64) -> Result<Dataset> {
    disjoint_cycles(SynthKind::Triangular, num_triangles, seed)
}

/// Disjoint 6-cycles on nodes `6h .. 6h+5` in ring order.
pub fn generate_hexagonal(num_hexagons: usize, seed: u64) -> Result<Dataset> {
    disjoint_cycles(SynthKind::Hexagonal, num_hexagons, seed)
}

pub fn generate(kind: SynthKind, size: usize, seed: u64) -> Result<Dataset> {
    disjoint_cycles(kind, size, seed)
}

/// Holds out one random edge per cycle. Held-out edges of most components
/// become training targets; whole components are reserved for validation
/// and testing in the given ratios. The remaining cycle edges form the
/// propagation graph, so every target pair is joined only by the path of
/// length `cycle_len − 1` around its cycle. Negatives are sampled non-edges
/// of the full graph.
pub fn case_study_split(kind: SynthKind, num_components: usize, valid_ratio: f64, test_ratio: f64, seed: u64) -> Result<EdgeSplit> {
    for r in [valid_ratio, test_ratio] {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidParameter(format!("split ratio {r} outside [0, 1)")));
        }
    }
    if valid_ratio + test_ratio >= 1.0 {
        return Err(Error::InvalidParameter("split ratios must sum below 1".into()));
    }
    let full = generate(kind, num_components, seed)?.graph;
    let len = kind.cycle_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let held: Vec<(usize, usize)> = (0..num_components)
        .map(|c| {
            let k = rand::Rng::gen_range(&mut rng, 0..len);
            let (u, v) = (len * c + k, len * c + (k + 1) % len);
            (u.min(v), u.max(v))
        })
        .collect();
    let held_set: HashSet<_> = held.iter().copied().collect();
    let mut train: Vec<_> = full.edges().into_iter().filter(|e| !held_set.contains(e)).collect();
    train.sort_unstable();
    let mut order: Vec<usize> = (0..num_components).collect();
    order.shuffle(&mut rng);
    let n_valid = (valid_ratio * num_components as f64).floor() as usize;
    let n_test = (test_ratio * num_components as f64).floor() as usize;
    let pick = |range: std::ops::Range<usize>| -> Vec<(usize, usize)> { order[range].iter().map(|&c| held[c]).collect() };
    let valid_pos = pick(0..n_valid);
    let test_pos = pick(n_valid..n_valid + n_test);
    let mut supervision = pick(n_valid + n_test..num_components);
    supervision.sort_unstable();
    let mut taken = HashSet::new();
    let valid_neg = sample_non_edges(&full, n_valid, &mut taken, &mut rng)?;
    let test_neg = sample_non_edges(&full, n_test, &mut taken, &mut rng)?;
    let split = EdgeSplit {
        seed,
        valid_ratio,
        test_ratio,
        train,
        valid_pos,
        valid_neg,
        test_pos,
        test_neg,
        supervision: Some(supervision),
    };
    split.validate()?;
    Ok(split)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Ratios {
    valid: f64,
    test: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    version: u32,
    seed: u64,
    ratios: Ratios,
    train: Vec<(usize, usize)>,
    valid_pos: Vec<(usize, usize)>,
    valid_neg: Vec<(usize, usize)>,
    test_pos: Vec<(usize, usize)>,
    test_neg: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    supervision: Option<Vec<(usize, usize)>>,
}

pub fn save_split(split: &EdgeSplit, path: impl AsRef<Path>) -> Result<()> {
    let file = SplitFile {
        version: SPLIT_VERSION,
        seed: split.seed,
        ratios: Ratios {
            valid: split.valid_ratio,
            test: split.test_ratio,
        },
        train: split.train.clone(),
        valid_pos: split.valid_pos.clone(),
        valid_neg: split.valid_neg.clone(),
        test_pos: split.test_pos.clone(),
        test_neg: split.test_neg.clone(),
        supervision: split.supervision.clone(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Reads and validates a split file.
pub fn load_split(path: impl AsRef<Path>) -> Result<EdgeSplit> {
    let file: SplitFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.version != SPLIT_VERSION {
        return Err(Error::Version {
            found: file.version,
            expected: SPLIT_VERSION,
        });
    }
    let split = EdgeSplit {
        seed: file.seed,
        valid_ratio: file.ratios.valid,
        test_ratio: file.ratios.test,
        train: file.train,
        valid_pos: file.valid_pos,
        valid_neg: file.valid_neg,
        test_pos: file.test_pos,
        test_neg: file.test_neg,
        supervision: file.supervision,
    };
    split.validate()?;
    Ok(split)
}
