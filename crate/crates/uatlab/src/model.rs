//! JSON file formats: model files (layer stacks), sigmoidal-sum files,
//! low-rank update files, lowered-operator dumps, and sample-pair files.
//!
//! Weight payloads are nested row arrays when small enough to read at a
//! desk, and base64-packed little-endian `f64` otherwise; either form
//! round-trips entry-exactly (JSON numbers are written with shortest
//! round-trip formatting). Schema problems (unparseable files, unknown
//! encodings, version mismatches) are reported separately from shape
//! problems (inconsistent dimensions, non-finite entries), because command
//! line callers map them to different exit codes.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::lora::LowRankUpdate;
use crate::lowering::{LoweredOp, OpKind};
use crate::mat::Mat;
use crate::transformer::{HeadWeights, LinearLayer, MhaParams};
use crate::uat::{SigmoidalSum, Term};

/// Version written into and required from every file this module handles.
pub const SCHEMA_VERSION: u32 = 1;

/// Entry-count threshold above which matrices are base64-packed.
pub const PLAIN_PAYLOAD_LIMIT: usize = 4096;

const PACKED_ENCODING: &str = "f64-le-base64";

/// Errors from reading or writing files, split by exit-code class.
#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    /// The file does not match the schema: bad JSON, unknown encoding or
    /// kind, wrong schema version.
    #[error("schema: {0}")]
    Schema(String),
    /// The file parses but its contents are dimensionally or numerically
    /// inconsistent.
    #[error("shape: {0}")]
    Shape(String),
}

impl From<serde_json::Error> for FileError {
    fn from(e: serde_json::Error) -> Self {
        FileError::Schema(e.to_string())
    }
}

fn shape_err(context: &str, e: Error) -> FileError {
    FileError::Shape(format!("{context}: {e}"))
}

fn check_version(found: u32, what: &str) -> Result<(), FileError> {
    if found != SCHEMA_VERSION {
        return Err(FileError::Schema(format!(
            "{what}: unsupported schema_version {found}, expected {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

/// A matrix on the wire: nested rows, or a packed base64 object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatPayload {
    Rows(Vec<Vec<f64>>),
    Packed {
        rows: usize,
        cols: usize,
        encoding: String,
        data: String,
    },
}

impl MatPayload {
    pub fn from_mat(m: &Mat) -> Self {
        if m.rows() * m.cols() <= PLAIN_PAYLOAD_LIMIT {
            MatPayload::Rows((0..m.rows()).map(|i| m.row(i).to_vec()).collect())
        } else {
            let mut bytes = Vec::with_capacity(m.data().len() * 8);
            for v in m.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            MatPayload::Packed {
                rows: m.rows(),
                cols: m.cols(),
                encoding: PACKED_ENCODING.to_string(),
                data: BASE64.encode(bytes),
            }
        }
    }

    pub fn to_mat(&self, field: &str) -> Result<Mat, FileError> {
        match self {
            MatPayload::Rows(rows) => Mat::from_rows(rows).map_err(|e| shape_err(field, e)),
            MatPayload::Packed {
                rows,
                cols,
                encoding,
                data,
            } => {
                if encoding != PACKED_ENCODING {
                    return Err(FileError::Schema(format!(
                        "{field}: unknown encoding {encoding:?}, expected {PACKED_ENCODING:?}"
                    )));
                }
                let bytes = BASE64
                    .decode(data)
                    .map_err(|e| FileError::Schema(format!("{field}: bad base64: {e}")))?;
                if bytes.len() % 8 != 0 || bytes.len() / 8 != rows * cols {
                    return Err(FileError::Shape(format!(
                        "{field}: payload holds {} bytes, expected {} for {rows}x{cols}",
                        bytes.len(),
                        rows * cols * 8
                    )));
                }
                let values = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect();
                Mat::from_vec(*rows, *cols, values).map_err(|e| shape_err(field, e))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        n: usize,
        weight: MatPayload,
    },
    Mha {
        n: usize,
        m: usize,
        h: usize,
        heads: Vec<HeadSpec>,
        w_o: MatPayload,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HeadSpec {
    pub w_q: MatPayload,
    pub w_k: MatPayload,
    pub w_v: MatPayload,
}

/// One validated layer of a loaded model.
#[derive(Debug, Clone)]
pub enum ModelLayer {
    Linear(LinearLayer),
    Mha(MhaParams),
}

/// A validated stack of shape-preserving layers.
///
/// All layers share the declared row count `N`; attention layers also pin
/// the column count `M`.
#[derive(Debug, Clone, Default)]
pub struct Model {
    layers: Vec<ModelLayer>,
    n_rows: Option<usize>,
    m_cols: Option<usize>,
    metadata: Option<serde_json::Value>,
}

impl Model {
    pub fn new(layers: Vec<ModelLayer>) -> Result<Self, FileError> {
        let mut model = Model::default();
        for layer in layers {
            match layer {
                ModelLayer::Linear(l) => model.push_linear(l)?,
                ModelLayer::Mha(p) => model.push_mha(p, None)?,
            }
        }
        Ok(model)
    }

    fn merge_n(&mut self, n: usize, what: &str) -> Result<(), FileError> {
        match self.n_rows {
            None => {
                self.n_rows = Some(n);
                Ok(())
            }
            Some(existing) if existing == n => Ok(()),
            Some(existing) => Err(FileError::Shape(format!(
                "{what}: declares n={n} but an earlier layer declared n={existing}"
            ))),
        }
    }

    fn merge_m(&mut self, m: usize, what: &str) -> Result<(), FileError> {
        match self.m_cols {
            None => {
                self.m_cols = Some(m);
                Ok(())
            }
            Some(existing) if existing == m => Ok(()),
            Some(existing) => Err(FileError::Shape(format!(
                "{what}: declares m={m} but an earlier layer declared m={existing}"
            ))),
        }
    }

    pub fn push_linear(&mut self, layer: LinearLayer) -> Result<(), FileError> {
        let idx = self.layers.len();
        self.merge_n(layer.n(), &format!("layer {idx} (linear)"))?;
        self.layers.push(ModelLayer::Linear(layer));
        Ok(())
    }

    pub fn push_mha(&mut self, params: MhaParams, n: Option<usize>) -> Result<(), FileError> {
        let idx = self.layers.len();
        if let Some(n) = n {
            self.merge_n(n, &format!("layer {idx} (mha)"))?;
        }
        self.merge_m(params.d_model(), &format!("layer {idx} (mha)"))?;
        self.layers.push(ModelLayer::Mha(params));
        Ok(())
    }

    pub fn layers(&self) -> &[ModelLayer] {
        &self.layers
    }

    pub fn n_rows(&self) -> Option<usize> {
        self.n_rows
    }

    pub fn m_cols(&self) -> Option<usize> {
        self.m_cols
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn set_metadata(&mut self, metadata: Option<serde_json::Value>) {
        self.metadata = metadata;
    }

    /// Swaps one layer for another of the same shape.
    pub fn replace_layer(&mut self, index: usize, layer: ModelLayer) -> Result<(), FileError> {
        let Some(slot) = self.layers.get_mut(index) else {
            return Err(FileError::Shape(format!(
                "layer index {index} out of range; model has {} layers",
                self.layers.len()
            )));
        };
        match &layer {
            ModelLayer::Linear(l) => {
                if let Some(n) = self.n_rows {
                    if l.n() != n {
                        return Err(FileError::Shape(format!(
                            "replacement weight is {0}x{0}, model declares n={n}",
                            l.n()
                        )));
                    }
                }
            }
            ModelLayer::Mha(p) => {
                if let Some(m) = self.m_cols {
                    if p.d_model() != m {
                        return Err(FileError::Shape(format!(
                            "replacement attention has m={}, model declares m={m}",
                            p.d_model()
                        )));
                    }
                }
            }
        }
        *slot = layer;
        Ok(())
    }

    /// Checks that an input matrix fits every layer of the stack.
    pub fn check_input(&self, x: &Mat) -> Result<(), FileError> {
        if let Some(n) = self.n_rows {
            if x.rows() != n {
                return Err(FileError::Shape(format!(
                    "input has {} rows, model declares n={n}",
                    x.rows()
                )));
            }
        }
        if let Some(m) = self.m_cols {
            if x.cols() != m {
                return Err(FileError::Shape(format!(
                    "input has {} columns, model declares m={m}",
                    x.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> ModelFile {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                ModelLayer::Linear(l) => LayerSpec::Linear {
                    n: l.n(),
                    weight: MatPayload::from_mat(l.weight()),
                },
                ModelLayer::Mha(p) => LayerSpec::Mha {
                    n: self.n_rows.unwrap_or(p.d_model()),
                    m: p.d_model(),
                    h: p.n_heads(),
                    heads: p
                        .heads()
                        .iter()
                        .map(|h| HeadSpec {
                            w_q: MatPayload::from_mat(&h.w_q),
                            w_k: MatPayload::from_mat(&h.w_k),
                            w_v: MatPayload::from_mat(&h.w_v),
                        })
                        .collect(),
                    w_o: MatPayload::from_mat(p.w_o()),
                },
            })
            .collect();
        ModelFile {
            schema_version: SCHEMA_VERSION,
            layers,
            metadata: self.metadata.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self, FileError> {
        check_version(file.schema_version, "model file")?;
        let mut model = Model {
            metadata: file.metadata,
            ..Model::default()
        };
        for (idx, spec) in file.layers.into_iter().enumerate() {
            match spec {
                LayerSpec::Linear { n, weight } => {
                    let field = format!("layer {idx}: weight");
                    let w = weight.to_mat(&field)?;
                    if w.shape() != (n, n) {
                        return Err(FileError::Shape(format!(
                            "layer {idx}: weight is {}x{}, declared n={n}",
                            w.rows(),
                            w.cols()
                        )));
                    }
                    let layer =
                        LinearLayer::new(w).map_err(|e| shape_err(&format!("layer {idx}"), e))?;
                    model.push_linear(layer)?;
                }
                LayerSpec::Mha {
                    n,
                    m,
                    h,
                    heads,
                    w_o,
                } => {
                    if h == 0 || m % h != 0 {
                        return Err(FileError::Shape(format!(
                            "layer {idx}: m={m} is not divisible by h={h}"
                        )));
                    }
                    if heads.len() != h {
                        return Err(FileError::Shape(format!(
                            "layer {idx}: {} head blocks, declared h={h}",
                            heads.len()
                        )));
                    }
                    let d = m / h;
                    let mut head_weights = Vec::with_capacity(h);
                    for (hi, head) in heads.iter().enumerate() {
                        let mut mats = [("w_q", &head.w_q), ("w_k", &head.w_k), ("w_v", &head.w_v)]
                            .map(|(name, payload)| {
                                let field = format!("layer {idx}: head {hi}: {name}");
                                payload.to_mat(&field).and_then(|mat| {
                                    if mat.shape() != (d, d) {
                                        Err(FileError::Shape(format!(
                                            "{field} is {}x{}, expected {d}x{d}",
                                            mat.rows(),
                                            mat.cols()
                                        )))
                                    } else {
                                        Ok(mat)
                                    }
                                })
                            });
                        // Surface the first error, in declaration order.
                        for m in &mut mats {
                            if let Err(e) = m {
                                return Err(std::mem::replace(e, FileError::Schema(String::new())));
                            }
                        }
                        let [w_q, w_k, w_v] = mats.map(|m| m.expect("checked above"));
                        head_weights.push(HeadWeights { w_q, w_k, w_v });
                    }
                    let field = format!("layer {idx}: w_o");
                    let w_o = w_o.to_mat(&field)?;
                    if w_o.shape() != (m, m) {
                        return Err(FileError::Shape(format!(
                            "{field} is {}x{}, declared m={m}",
                            w_o.rows(),
                            w_o.cols()
                        )));
                    }
                    let params = MhaParams::new(h, head_weights, w_o)
                        .map_err(|e| shape_err(&format!("layer {idx}"), e))?;
                    model.push_mha(params, Some(n))?;
                }
            }
        }
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// Sigmoidal sum files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct SumFile {
    pub schema_version: u32,
    pub input_dim: usize,
    pub output_dim: usize,
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TermSpec {
    pub weights: MatPayload,
    pub bias: Vec<f64>,
    pub gain: Vec<f64>,
}

pub fn sum_to_file(g: &SigmoidalSum) -> SumFile {
    SumFile {
        schema_version: SCHEMA_VERSION,
        input_dim: g.input_dim(),
        output_dim: g.output_dim(),
        terms: g
            .terms()
            .iter()
            .map(|t| TermSpec {
                weights: MatPayload::from_mat(t.weights()),
                bias: t.bias().to_vec(),
                gain: t.gain().to_vec(),
            })
            .collect(),
    }
}

pub fn sum_from_file(file: SumFile) -> Result<SigmoidalSum, FileError> {
    check_version(file.schema_version, "sum file")?;
    let terms = file
        .terms
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let field = format!("term {j}: weights");
            let weights = spec.weights.to_mat(&field)?;
            Term::new(weights, spec.bias.clone(), spec.gain.clone())
                .map_err(|e| shape_err(&format!("term {j}"), e))
        })
        .collect::<Result<Vec<_>, FileError>>()?;
    SigmoidalSum::new(file.input_dim, file.output_dim, terms).map_err(|e| shape_err("sum file", e))
}

// ---------------------------------------------------------------------------
// Low-rank update files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct UpdateFile {
    pub schema_version: u32,
    pub scale: f64,
    pub b: MatPayload,
    pub a: MatPayload,
}

pub fn update_to_file(u: &LowRankUpdate) -> UpdateFile {
    UpdateFile {
        schema_version: SCHEMA_VERSION,
        scale: u.scale(),
        b: MatPayload::from_mat(u.b()),
        a: MatPayload::from_mat(u.a()),
    }
}

pub fn update_from_file(file: UpdateFile) -> Result<LowRankUpdate, FileError> {
    check_version(file.schema_version, "update file")?;
    let b = file.b.to_mat("update: b")?;
    let a = file.a.to_mat("update: a")?;
    LowRankUpdate::new(b, a, file.scale).map_err(|e| shape_err("update file", e))
}

// ---------------------------------------------------------------------------
// Lowered operator dumps
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct LoweredDump {
    pub schema_version: u32,
    pub kind: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub size: usize,
    pub nnz: usize,
    pub matrix: MatPayload,
}

pub fn lowered_to_dump(op: &LoweredOp) -> LoweredDump {
    LoweredDump {
        schema_version: SCHEMA_VERSION,
        kind: op.kind().as_str().to_string(),
        n_rows: op.n_rows(),
        n_cols: op.n_cols(),
        size: op.size(),
        nnz: op.nnz(),
        matrix: MatPayload::from_mat(op.matrix()),
    }
}

pub fn lowered_from_dump(dump: LoweredDump) -> Result<LoweredOp, FileError> {
    check_version(dump.schema_version, "lowered dump")?;
    let kind = match dump.kind.as_str() {
        "linear" => OpKind::Linear,
        "mha" => OpKind::Mha,
        "composed" => OpKind::Composed,
        other => {
            return Err(FileError::Schema(format!(
                "lowered dump: unknown kind {other:?}"
            )))
        }
    };
    if dump.size != dump.n_rows * dump.n_cols {
        return Err(FileError::Shape(format!(
            "lowered dump: size {} does not equal n_rows*n_cols = {}",
            dump.size,
            dump.n_rows * dump.n_cols
        )));
    }
    let matrix = dump.matrix.to_mat("lowered dump: matrix")?;
    let op = LoweredOp::from_matrix(kind, dump.n_rows, dump.n_cols, matrix)
        .map_err(|e| shape_err("lowered dump", e))?;
    if op.nnz() != dump.nnz {
        return Err(FileError::Shape(format!(
            "lowered dump: nnz field {} disagrees with matrix ({} nonzero entries)",
            dump.nnz,
            op.nnz()
        )));
    }
    Ok(op)
}

// ---------------------------------------------------------------------------
// Sample pair files
// ---------------------------------------------------------------------------

/// Training pairs stored with samples as columns: `y = W* · x` columnwise.
#[derive(Debug, Serialize, Deserialize)]
pub struct PairsFile {
    pub schema_version: u32,
    pub x: MatPayload,
    pub y: MatPayload,
}

// ---------------------------------------------------------------------------
// Disk I/O
// ---------------------------------------------------------------------------

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model, FileError> {
    Model::from_file(read_json(path)?)
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), FileError> {
    write_json(&model.to_file(), path)
}

pub fn load_matrix(path: &Path) -> Result<Mat, FileError> {
    let payload: MatPayload = read_json(path)?;
    payload.to_mat("matrix file")
}

pub fn save_matrix(m: &Mat, path: &Path) -> Result<(), FileError> {
    write_json(&MatPayload::from_mat(m), path)
}

pub fn load_sum(path: &Path) -> Result<SigmoidalSum, FileError> {
    sum_from_file(read_json(path)?)
}

pub fn save_sum(g: &SigmoidalSum, path: &Path) -> Result<(), FileError> {
    write_json(&sum_to_file(g), path)
}

pub fn load_update(path: &Path) -> Result<LowRankUpdate, FileError> {
    update_from_file(read_json(path)?)
}

pub fn save_update(u: &LowRankUpdate, path: &Path) -> Result<(), FileError> {
    write_json(&update_to_file(u), path)
}

pub fn load_lowered(path: &Path) -> Result<LoweredOp, FileError> {
    lowered_from_dump(read_json(path)?)
}

pub fn save_lowered(op: &LoweredOp, path: &Path) -> Result<(), FileError> {
    write_json(&lowered_to_dump(op), path)
}

pub fn load_pairs(path: &Path) -> Result<(Mat, Mat), FileError> {
    let file: PairsFile = read_json(path)?;
    check_version(file.schema_version, "pairs file")?;
    let x = file.x.to_mat("pairs: x")?;
    let y = file.y.to_mat("pairs: y")?;
    if x.cols() != y.cols() || x.rows() != y.rows() {
        return Err(FileError::Shape(format!(
            "pairs: x is {}x{} but y is {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    Ok((x, y))
}

pub fn save_pairs(x: &Mat, y: &Mat, path: &Path) -> Result<(), FileError> {
    let file = PairsFile {
        schema_version: SCHEMA_VERSION,
        x: MatPayload::from_mat(x),
        y: MatPayload::from_mat(y),
    };
    write_json(&file, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn plain_matrix_payload_round_trips_exactly() {
        let mut rng = Rng::new(50);
        let m = rng.uniform_mat(5, 7, -1e3, 1e3);
        let json = serde_json::to_string(&MatPayload::from_mat(&m)).unwrap();
        let back: MatPayload = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_mat("test").unwrap(), m);
    }

    #[test]
    fn large_matrices_pack_to_base64_and_round_trip() {
        let mut rng = Rng::new(51);
        let m = rng.uniform_mat(70, 70, -1.0, 1.0); // 4900 > plain limit
        let payload = MatPayload::from_mat(&m);
        assert!(matches!(payload, MatPayload::Packed { .. }));
        let json = serde_json::to_string(&payload).unwrap();
        let back: MatPayload = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_mat("test").unwrap(), m);
    }

    #[test]
    fn model_file_round_trips_through_disk() {
        let dir = tmp();
        let path = dir.path().join("model.json");
        let mut rng = Rng::new(52);
        let mut model = Model::default();
        model
            .push_linear(LinearLayer::new(rng.uniform_mat(3, 3, -1.0, 1.0)).unwrap())
            .unwrap();
        model
            .push_mha(MhaParams::random(2, 4, &mut rng).unwrap(), Some(3))
            .unwrap();
        // The mha layer pins m=4; the linear weight is 3x3 over n=3 rows.
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.layers().len(), 2);
        assert_eq!(loaded.n_rows(), Some(3));
        assert_eq!(loaded.m_cols(), Some(4));
        match (&loaded.layers()[0], &model.layers()[0]) {
            (ModelLayer::Linear(a), ModelLayer::Linear(b)) => {
                assert_eq!(a.weight(), b.weight());
            }
            _ => panic!("layer kind changed in round trip"),
        }
    }

    #[test]
    fn malformed_json_is_a_schema_error() {
        let dir = tmp();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_model(&path), Err(FileError::Schema(_))));
    }

    #[test]
    fn wrong_version_is_a_schema_error() {
        let dir = tmp();
        let path = dir.path().join("v9.json");
        std::fs::write(&path, r#"{"schema_version": 9, "layers": []}"#).unwrap();
        assert!(matches!(load_model(&path), Err(FileError::Schema(_))));
    }

    #[test]
    fn undivisible_heads_are_a_shape_error() {
        let dir = tmp();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{
              "schema_version": 1,
              "layers": [{
                "type": "mha", "n": 2, "m": 4, "h": 3,
                "heads": [], "w_o": [[1.0]]
              }]
            }"#,
        )
        .unwrap();
        match load_model(&path) {
            Err(FileError::Shape(msg)) => assert!(msg.contains("divisible"), "{msg}"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_weight_shape_names_the_layer() {
        let dir = tmp();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{
              "schema_version": 1,
              "layers": [{"type": "linear", "n": 3, "weight": [[1.0, 2.0], [3.0, 4.0]]}]
            }"#,
        )
        .unwrap();
        match load_model(&path) {
            Err(FileError::Shape(msg)) => {
                assert!(msg.contains("layer 0"), "{msg}");
                assert!(msg.contains("n=3"), "{msg}");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn sum_file_round_trips() {
        let dir = tmp();
        let path = dir.path().join("sum.json");
        let mut rng = Rng::new(53);
        let terms = (0..5)
            .map(|_| {
                Term::new(
                    rng.uniform_mat(2, 1, -3.0, 3.0),
                    vec![rng.uniform(-1.0, 1.0)],
                    vec![rng.uniform(-2.0, 2.0)],
                )
                .unwrap()
            })
            .collect();
        let g = SigmoidalSum::new(2, 1, terms).unwrap();
        save_sum(&g, &path).unwrap();
        let back = load_sum(&path).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn update_file_round_trips() {
        let dir = tmp();
        let path = dir.path().join("update.json");
        let mut rng = Rng::new(54);
        let u = LowRankUpdate::new(
            rng.uniform_mat(4, 2, -1.0, 1.0),
            rng.uniform_mat(2, 4, -1.0, 1.0),
            0.25,
        )
        .unwrap();
        save_update(&u, &path).unwrap();
        let back = load_update(&path).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn lowered_dump_round_trips_and_checks_nnz() {
        let dir = tmp();
        let path = dir.path().join("op.json");
        let mut rng = Rng::new(55);
        let op = crate::lowering::lower_linear(&rng.uniform_mat(3, 3, 0.5, 1.5), 2).unwrap();
        save_lowered(&op, &path).unwrap();
        let back = load_lowered(&path).unwrap();
        assert_eq!(back, op);

        let mut dump = lowered_to_dump(&op);
        dump.nnz += 1;
        assert!(matches!(lowered_from_dump(dump), Err(FileError::Shape(_))));
    }

    #[test]
    fn pairs_file_round_trips() {
        let dir = tmp();
        let path = dir.path().join("pairs.json");
        let mut rng = Rng::new(56);
        let x = rng.normal_mat(3, 6);
        let y = rng.normal_mat(3, 6);
        save_pairs(&x, &y, &path).unwrap();
        let (bx, by) = load_pairs(&path).unwrap();
        assert_eq!((bx, by), (x, y));
    }

    #[test]
    fn saved_files_are_byte_stable_across_round_trips() {
        let dir = tmp();
        let first = dir.path().join("a.json");
        let second = dir.path().join("b.json");
        let mut rng = Rng::new(57);
        let mut model = Model::default();
        model
            .push_linear(LinearLayer::new(rng.uniform_mat(4, 4, -1.0, 1.0)).unwrap())
            .unwrap();
        save_model(&model, &first).unwrap();
        let loaded = load_model(&first).unwrap();
        save_model(&loaded, &second).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }
}
