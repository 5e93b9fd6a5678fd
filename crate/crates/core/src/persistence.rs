//! Versioned JSON model bundles.
//!
//! A bundle is a JSON object with the keys `schema_version`, `kind`,
//! `metadata` and `payload`. Every learned real is stored as a hex-float
//! string, so a load reproduces the saved model bit for bit. The metadata
//! carries a SHA-256 digest of the payload; a bundle whose payload no longer
//! matches is rejected before anything is deserialized.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::learners::tree::{ClassLeaf, Node, Tree};
use crate::learners::{ForestModel, ForestRegressor, MlpModel, RidgeModel, SvmModel, TrainedModel};
use crate::pipeline::{Stage, ToxTreePipeline};
use crate::preprocess::{PcaModel, ScalerParams};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u64 = 1;
pub const BUNDLE_EXTENSION: &str = ".toxtree.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    /// Caller-supplied timestamp; saving never reads the clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Content hash of the training data, see [`fingerprint_dataset`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_fingerprint: Option<String>,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Scaler(ScalerParams),
    Pca(PcaModel),
    Forest(ForestModel),
    ForestRegressor(ForestRegressor),
    Svm(SvmModel),
    Mlp(MlpModel),
    Ridge(RidgeModel),
    Pipeline(ToxTreePipeline),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Scaler(_) => "scaler",
            Artifact::Pca(_) => "pca",
            Artifact::Forest(_) => "forest",
            Artifact::ForestRegressor(_) => "forest-regressor",
            Artifact::Svm(_) => "svm",
            Artifact::Mlp(_) => "mlp",
            Artifact::Ridge(_) => "ridge",
            Artifact::Pipeline(_) => "pipeline",
        }
    }

    fn payload(&self) -> Result<Value> {
        let v = match self {
            Artifact::Scaler(m) => serde_json::to_value(m),
            Artifact::Pca(m) => serde_json::to_value(m),
            Artifact::Forest(m) => serde_json::to_value(m),
            Artifact::ForestRegressor(m) => serde_json::to_value(m),
            Artifact::Svm(m) => serde_json::to_value(m),
            Artifact::Mlp(m) => serde_json::to_value(m),
            Artifact::Ridge(m) => serde_json::to_value(m),
            Artifact::Pipeline(m) => serde_json::to_value(m),
        };
        v.map_err(|e| Error::Bundle(format!("cannot encode {}: {e}", self.kind())))
    }

    fn from_payload(kind: &str, payload: Value) -> Result<Self> {
        fn de<T: serde::de::DeserializeOwned>(kind: &str, v: Value) -> Result<T> {
            serde_json::from_value(v).map_err(|e| Error::Bundle(format!("malformed {kind} payload: {e}")))
        }
        let artifact = match kind {
            "scaler" => Artifact::Scaler(de(kind, payload)?),
            "pca" => Artifact::Pca(de(kind, payload)?),
            "forest" => Artifact::Forest(de(kind, payload)?),
            "forest-regressor" => Artifact::ForestRegressor(de(kind, payload)?),
            "svm" => Artifact::Svm(de(kind, payload)?),
            "mlp" => Artifact::Mlp(de(kind, payload)?),
            "ridge" => Artifact::Ridge(de(kind, payload)?),
            "pipeline" => Artifact::Pipeline(de(kind, payload)?),
            other => return Err(Error::Bundle(format!("unknown bundle kind '{other}'"))),
        };
        artifact.validate()?;
        Ok(artifact)
    }

    /// Structural checks so that a loaded model can never index out of
    /// bounds at prediction time.
    fn validate(&self) -> Result<()> {
        match self {
            Artifact::Scaler(s) => check_scaler(s),
            Artifact::Pca(p) => check_pca(p),
            Artifact::Forest(f) => check_forest(f),
            Artifact::ForestRegressor(f) => {
                if f.trees.is_empty() {
                    return bad("forest regressor has no trees");
                }
                f.trees.iter().try_for_each(|t| check_tree(t, f.n_features, |_| Ok(())))
            }
            Artifact::Svm(s) => check_svm(s),
            Artifact::Mlp(m) => check_mlp(m),
            Artifact::Ridge(_) => Ok(()),
            Artifact::Pipeline(p) => {
                for stage in &p.stages {
                    match stage {
                        Stage::Single(s) => check_trained(&s.model)?,
                        Stage::Consensus(c) => {
                            check_trained(&c.model_a.model)?;
                            check_trained(&c.model_b.model)?;
                        }
                    }
                }
                if let Some(s) = &p.preprocessing.scaler {
                    check_scaler(s)?;
                }
                if let Some(pca) = &p.preprocessing.pca {
                    check_pca(pca)?;
                }
                ToxTreePipeline::new(p.target, p.preprocessing.clone(), p.stages.clone()).map(|_| ())
            }
        }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Bundle(msg.into()))
}

fn check_scaler(s: &ScalerParams) -> Result<()> {
    if s.mean.len() != s.std.len() {
        return bad("scaler mean and std lengths differ");
    }
    if s.std.iter().any(|&v| !(v > 0.0)) {
        return bad("scaler std must be positive");
    }
    Ok(())
}

fn check_pca(p: &PcaModel) -> Result<()> {
    if p.mean.len() != p.components.nrows() || p.eigenvalues.len() < p.components.ncols() {
        return bad("PCA dimensions are inconsistent");
    }
    Ok(())
}

fn check_tree<L>(t: &Tree<L>, n_features: usize, leaf: impl Fn(&L) -> Result<()>) -> Result<()> {
    if t.nodes.is_empty() || t.n_features != n_features {
        return bad("tree is empty or has the wrong width");
    }
    for (id, node) in t.nodes.iter().enumerate() {
        match node {
            Node::Split { feature, left, right, .. } => {
                if *feature >= n_features {
                    return bad(format!("tree node {id} splits on feature {feature} of {n_features}"));
                }
                // Preorder arena: children always follow their parent.
                if *left <= id || *right <= id || *left >= t.nodes.len() || *right >= t.nodes.len() {
                    return bad(format!("tree node {id} has invalid children"));
                }
            }
            Node::Leaf(l) => leaf(l)?,
        }
    }
    Ok(())
}

fn check_forest(f: &ForestModel) -> Result<()> {
    if f.trees.is_empty() || f.n_classes == 0 {
        return bad("forest has no trees or no classes");
    }
    let leaf = |l: &ClassLeaf| {
        if l.counts.len() != f.n_classes || l.counts.iter().all(|&c| c == 0) {
            return bad("forest leaf counts are malformed");
        }
        Ok(())
    };
    f.trees.iter().try_for_each(|t| check_tree(t, f.n_features, leaf))
}

fn check_svm(s: &SvmModel) -> Result<()> {
    s.kernel.validate().map_err(|e| Error::Bundle(e.to_string()))?;
    let (rows, cols) = s.support_vectors.dim();
    if rows != s.dual_coefs.len() || rows != s.support_indices.len() || (rows > 0 && cols != s.n_features) {
        return bad("SVM support vectors and coefficients disagree");
    }
    Ok(())
}

fn check_mlp(m: &MlpModel) -> Result<()> {
    if m.layer_sizes.len() < 2 || m.layers.len() != m.layer_sizes.len() - 1 {
        return bad("MLP layer list is inconsistent");
    }
    for (l, layer) in m.layers.iter().enumerate() {
        let shape = (m.layer_sizes[l], m.layer_sizes[l + 1]);
        if layer.weights.dim() != shape || layer.bias.len() != shape.1 {
            return bad(format!("MLP layer {l} has the wrong shape"));
        }
    }
    if m.batchnorm.len() != m.layer_sizes.len() - 2 {
        return bad("MLP batch-norm list is inconsistent");
    }
    for (l, bn) in m.batchnorm.iter().enumerate() {
        if let Some(bn) = bn {
            let w = m.layer_sizes[l + 1];
            if [bn.scale.len(), bn.shift.len(), bn.running_mean.len(), bn.running_var.len()] != [w; 4] {
                return bad(format!("MLP batch norm {l} has the wrong width"));
            }
        }
    }
    if !(0.0..1.0).contains(&m.dropout_rate) {
        return bad("MLP dropout rate out of range");
    }
    Ok(())
}

fn check_trained(m: &TrainedModel) -> Result<()> {
    match m {
        TrainedModel::Forest(f) => check_forest(f),
        TrainedModel::Svm(s) => check_svm(s),
        TrainedModel::Mlp(n) => check_mlp(n),
        TrainedModel::Rule(r) => {
            if r.feature >= r.n_features {
                return bad("rule feature out of range");
            }
            Ok(())
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a labelled dataset (shape, exact value bits, labels and
/// class names).
pub fn fingerprint_dataset(data: &LabeledDataset) -> String {
    let mut h = Sha256::new();
    h.update((data.n_rows() as u64).to_le_bytes());
    h.update((data.n_features() as u64).to_le_bytes());
    for v in data.matrix.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    for &l in &data.labels {
        h.update((l as u64).to_le_bytes());
    }
    for name in &data.class_names {
        h.update(name.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct MetadataOut<'a> {
    #[serde(flatten)]
    meta: &'a Metadata,
    payload_sha256: String,
}

/// Serializes `artifact` to bytes. Identical inputs give identical bytes.
pub fn bundle_bytes(artifact: &Artifact, metadata: &Metadata) -> Result<Vec<u8>> {
    let payload = artifact.payload()?;
    let canonical = serde_json::to_string(&payload).map_err(|e| Error::Bundle(e.to_string()))?;
    let meta = MetadataOut { meta: metadata, payload_sha256: sha256_hex(canonical.as_bytes()) };
    let mut doc = serde_json::Map::new();
    doc.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    doc.insert("kind".into(), Value::from(artifact.kind()));
    doc.insert("metadata".into(), serde_json::to_value(&meta).map_err(|e| Error::Bundle(e.to_string()))?);
    doc.insert("payload".into(), payload);
    let mut out = serde_json::to_vec_pretty(&Value::Object(doc)).map_err(|e| Error::Bundle(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn save_bundle<W: Write>(artifact: &Artifact, metadata: &Metadata, mut sink: W) -> Result<()> {
    sink.write_all(&bundle_bytes(artifact, metadata)?)?;
    sink.flush()?;
    Ok(())
}

pub fn load_bundle<R: Read>(mut source: R) -> Result<(Artifact, Metadata)> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(|e| Error::Bundle(format!("bundle is not readable UTF-8: {e}")))?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| Error::Bundle(format!("bundle is not valid JSON: {e}")))?;
    let Value::Object(mut doc) = doc else {
        return bad("bundle must be a JSON object");
    };
    let version = doc
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Bundle("bundle lacks an integer schema_version".into()))?;
    if version != SCHEMA_VERSION {
        return bad(format!("unsupported bundle schema_version {version}; this build reads version {SCHEMA_VERSION}"));
    }
    let kind =
        doc.get("kind").and_then(Value::as_str).ok_or_else(|| Error::Bundle("bundle lacks a kind".into()))?.to_owned();
    let mut meta_value = doc.remove("metadata").ok_or_else(|| Error::Bundle("bundle lacks metadata".into()))?;
    let payload = doc.remove("payload").ok_or_else(|| Error::Bundle("bundle lacks a payload".into()))?;
    if doc.len() != 2 {
        let extra: Vec<&String> = doc.keys().filter(|k| *k != "schema_version" && *k != "kind").collect();
        return bad(format!("unexpected top-level keys {extra:?}"));
    }
    let digest = meta_value
        .as_object_mut()
        .and_then(|m| m.remove("payload_sha256"))
        .and_then(|v| v.as_str().map(str::to_owned))
        .ok_or_else(|| Error::Bundle("metadata lacks payload_sha256".into()))?;
    let canonical = serde_json::to_string(&payload).map_err(|e| Error::Bundle(e.to_string()))?;
    if sha256_hex(canonical.as_bytes()) != digest {
        return bad("payload digest mismatch; the bundle is corrupted");
    }
    let metadata: Metadata =
        serde_json::from_value(meta_value).map_err(|e| Error::Bundle(format!("malformed metadata: {e}")))?;
    Ok((Artifact::from_payload(&kind, payload)?, metadata))
}

pub fn save_bundle_file(path: &Path, artifact: &Artifact, metadata: &Metadata) -> Result<()> {
    std::fs::write(path, bundle_bytes(artifact, metadata)?)?;
    Ok(())
}

pub fn load_bundle_file(path: &Path) -> Result<(Artifact, Metadata)> {
    load_bundle(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{forest_fit, ForestParams, Kernel};
    use ndarray::{array, Array2};

    fn small_forest() -> ForestModel {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 5) % 13) as f64 / 3.0);
        let labels: Vec<usize> = (0..40).map(|i| usize::from(x[[i, 0]] + x[[i, 1]] > 4.0)).collect();
        let ds = LabeledDataset::binary(x, labels).unwrap();
        forest_fit(&ds, &ForestParams::new(5, None, 1)).unwrap()
    }

    fn meta() -> Metadata {
        Metadata { seed: Some(1), created_at: Some("2024-01-01T00:00:00Z".into()), ..Default::default() }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let a = Artifact::Forest(small_forest());
        let bytes = bundle_bytes(&a, &meta()).unwrap();
        let (back, m) = load_bundle(bytes.as_slice()).unwrap();
        assert_eq!(back, a);
        assert_eq!(m, meta());
        assert_eq!(bundle_bytes(&back, &m).unwrap(), bytes);
    }

    #[test]
    fn corrupted_payload_rejected() {
        let bytes = bundle_bytes(&Artifact::Forest(small_forest()), &meta()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let pos = text.find("\"counts\"").unwrap();
        let digit = text[pos..].find(|c: char| c.is_ascii_digit()).unwrap() + pos;
        let mut corrupted = text.into_bytes();
        corrupted[digit] = if corrupted[digit] == b'9' { b'8' } else { corrupted[digit] + 1 };
        let err = load_bundle(corrupted.as_slice()).unwrap_err();
        assert!(err.to_string().contains("digest"), "{err}");
    }

    #[test]
    fn truncated_and_future_bundles_rejected() {
        let bytes = bundle_bytes(&Artifact::Forest(small_forest()), &meta()).unwrap();
        assert!(load_bundle(&bytes[..bytes.len() / 2]).is_err());
        let text = String::from_utf8(bytes).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
        let err = load_bundle(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("schema_version 2"), "{err}");
    }

    #[test]
    fn non_finite_values_refused() {
        let s = ScalerParams { mean: vec![f64::NAN], std: vec![1.0] };
        assert!(bundle_bytes(&Artifact::Scaler(s), &Metadata::default()).is_err());
    }

    #[test]
    fn svm_kernel_round_trip() {
        let svm = SvmModel {
            kernel: Kernel::Poly { degree: 3, gamma: 0.1, coef0: 1.0 },
            c: 0.8,
            support_vectors: array![[0.1, 0.2]],
            dual_coefs: vec![-0.3],
            support_indices: vec![4],
            bias: 1.0 / 3.0,
            n_features: 2,
            converged: true,
            iterations: 17,
        };
        let a = Artifact::Svm(svm);
        let (back, _) = load_bundle(bundle_bytes(&a, &Metadata::default()).unwrap().as_slice()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn invalid_structure_rejected() {
        let mut f = small_forest();
        if let Node::Split { feature, .. } = &mut f.trees[0].nodes[0] {
            *feature = 99;
        }
        let bytes = bundle_bytes(&Artifact::Forest(f), &Metadata::default()).unwrap();
        assert!(load_bundle(bytes.as_slice()).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = LabeledDataset::binary(array![[1.0], [2.0]], vec![0, 1]).unwrap();
        let b = LabeledDataset::binary(array![[1.0], [2.0]], vec![1, 0]).unwrap();
        assert_eq!(fingerprint_dataset(&a), fingerprint_dataset(&a.clone()));
        assert_ne!(fingerprint_dataset(&a), fingerprint_dataset(&b));
    }
}
