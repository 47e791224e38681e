//! Network representation, inference, and the JSON model document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constructor::{TrainConfig, Variant};
use crate::data::{ColumnRange, NormStats};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Sigmoid,
}

impl ActivationKind {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

pub fn activate(kind: ActivationKind, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite("activation input".into()));
    }
    Ok(kind.apply(z))
}

/// One hidden unit: input weights `w` and bias `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenNode {
    pub w: Vec<f64>,
    pub b: f64,
}

impl HiddenNode {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Hidden output on every row of `x` (N x d).
    pub fn output(&self, kind: ActivationKind, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.w.len() {
            return Err(Error::dim(format!(
                "node expects {} inputs, data has {}",
                self.w.len(),
                x.cols()
            )));
        }
        Ok(self.output_unchecked(kind, x))
    }

    pub(crate) fn output_unchecked(&self, kind: ActivationKind, x: &Matrix) -> Vec<f64> {
        (0..x.rows())
            .map(|i| {
                let z: f64 = x.row(i).iter().zip(&self.w).map(|(a, w)| a * w).sum();
                kind.apply(z + self.b)
            })
            .collect()
    }
}

pub fn node_output(node: &HiddenNode, kind: ActivationKind, x: &Matrix) -> Result<Vec<f64>> {
    node.output(kind, x)
}

/// A trained single-hidden-layer network with its normalization baked in.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoNet {
    pub activation: ActivationKind,
    pub nodes: Vec<HiddenNode>,
    /// L x m output weights.
    pub beta: Matrix,
    pub norm_stats: NormStats,
    pub meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub variant: Variant,
    pub seed: u64,
    pub config: Option<TrainConfig>,
}

impl GeoNet {
    pub fn new(
        activation: ActivationKind,
        nodes: Vec<HiddenNode>,
        beta: Matrix,
        norm_stats: NormStats,
        meta: ModelMeta,
    ) -> Result<Self> {
        let net = GeoNet {
            activation,
            nodes,
            beta,
            norm_stats,
            meta,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.norm_stats.features.len()
    }

    pub fn output_dim(&self) -> usize {
        self.norm_stats.targets.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        let m = self.output_dim();
        if self.beta.rows() != self.nodes.len() {
            return Err(Error::Malformed(format!(
                "beta has {} rows but the network has {} nodes",
                self.beta.rows(),
                self.nodes.len()
            )));
        }
        if self.beta.cols() != m {
            return Err(Error::Malformed(format!(
                "beta has {} columns but there are {m} targets",
                self.beta.cols()
            )));
        }
        for (j, node) in self.nodes.iter().enumerate() {
            if node.dim() != d {
                return Err(Error::Malformed(format!(
                    "node {j} has {} weights, expected {d}",
                    node.dim()
                )));
            }
            if !node.b.is_finite() || node.w.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite(format!("node {j}")));
            }
        }
        self.beta.ensure_finite("beta")?;
        self.norm_stats.validate()?;
        Ok(())
    }

    /// N x L matrix of hidden outputs on already-normalized inputs.
    pub fn hidden_matrix(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() && !self.nodes.is_empty() {
            return Err(Error::dim(format!(
                "network expects {} inputs, data has {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let columns = self
            .nodes
            .iter()
            .map(|n| n.output(self.activation, x))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_columns(x.rows(), &columns)
    }

    /// Output in normalized target space for normalized inputs.
    pub fn predict_normalized(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "network expects {} inputs, data has {}",
                self.input_dim(),
                x.cols()
            )));
        }
        if self.nodes.is_empty() {
            return Ok(Matrix::zeros(x.rows(), self.output_dim()));
        }
        self.hidden_matrix(x)?.matmul(&self.beta)
    }

    /// Normalizes raw inputs, evaluates the network, and maps the result back
    /// to raw target units.
    pub fn predict(&self, x_raw: &Matrix) -> Result<Matrix> {
        let x = self.norm_stats.normalize_features(x_raw)?;
        let y = self.predict_normalized(&x)?;
        self.norm_stats.denormalize_targets(&y)
    }

    pub fn to_document(&self) -> Result<ModelDocument> {
        self.validate()?;
        Ok(ModelDocument {
            schema_version: SCHEMA_VERSION.to_string(),
            variant: self.meta.variant,
            activation: self.activation,
            d: self.input_dim(),
            m: self.output_dim(),
            nodes: self.nodes.clone(),
            beta: self.beta.to_rows(),
            feature_stats: self.norm_stats.features.clone(),
            target_stats: self.norm_stats.targets.clone(),
            seed: self.meta.seed,
            config: self.meta.config.clone(),
        })
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: doc.schema_version,
                expected: SCHEMA_VERSION.to_string(),
            });
        }
        if doc.feature_stats.len() != doc.d {
            return Err(Error::Malformed(format!(
                "feature_stats has {} entries, d = {}",
                doc.feature_stats.len(),
                doc.d
            )));
        }
        if doc.target_stats.len() != doc.m {
            return Err(Error::Malformed(format!(
                "target_stats has {} entries, m = {}",
                doc.target_stats.len(),
                doc.m
            )));
        }
        if doc.beta.len() != doc.nodes.len() {
            return Err(Error::Malformed(format!(
                "beta has {} rows but there are {} nodes",
                doc.beta.len(),
                doc.nodes.len()
            )));
        }
        let beta = if doc.beta.is_empty() {
            Matrix::zeros(0, doc.m)
        } else {
            Matrix::from_rows(&doc.beta).map_err(|e| Error::Malformed(e.to_string()))?
        };
        GeoNet::new(
            doc.activation,
            doc.nodes,
            beta,
            NormStats {
                features: doc.feature_stats,
                targets: doc.target_stats,
            },
            ModelMeta {
                variant: doc.variant,
                seed: doc.seed,
                config: doc.config,
            },
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_document()?)
            .map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        GeoNet::from_document(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GeoNet::from_json(&text)
    }
}

pub fn hidden_matrix(net: &GeoNet, x: &Matrix) -> Result<Matrix> {
    net.hidden_matrix(x)
}

pub fn predict(net: &GeoNet, x_raw: &Matrix) -> Result<Matrix> {
    net.predict(x_raw)
}

/// On-disk model layout. `serde_json` writes floats in shortest
/// round-trip form, so weights survive a save/load cycle bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: String,
    pub variant: Variant,
    pub activation: ActivationKind,
    pub d: usize,
    pub m: usize,
    pub nodes: Vec<HiddenNode>,
    pub beta: Vec<Vec<f64>>,
    pub feature_stats: Vec<ColumnRange>,
    pub target_stats: Vec<ColumnRange>,
    pub seed: u64,
    pub config: Option<TrainConfig>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_stats(d: usize, m: usize) -> NormStats {
        NormStats {
            features: vec![ColumnRange { min: 0.0, max: 1.0 }; d],
            targets: vec![ColumnRange { min: 0.0, max: 1.0 }; m],
        }
    }

    fn meta() -> ModelMeta {
        ModelMeta {
            variant: Variant::LightGcnetII,
            seed: 7,
            config: None,
        }
    }

    fn random_net(l: usize, d: usize, m: usize, seed: u64) -> GeoNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (0..l)
            .map(|_| HiddenNode {
                w: (0..d).map(|_| rng.random_range(-5.0..5.0)).collect(),
                b: rng.random_range(-5.0..5.0),
            })
            .collect();
        let beta = Matrix::new(
            l,
            m,
            (0..l * m).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let stats = NormStats {
            features: (0..d)
                .map(|j| ColumnRange {
                    min: -1.0 - j as f64,
                    max: 2.5 + j as f64 / 3.0,
                })
                .collect(),
            targets: (0..m).map(|_| ColumnRange { min: 0.1, max: 7.3 }).collect(),
        };
        GeoNet::new(ActivationKind::Sigmoid, nodes, beta, stats, meta()).unwrap()
    }

    #[test]
    fn sigmoid_values() {
        let s = ActivationKind::Sigmoid;
        assert_eq!(activate(s, 0.0).unwrap(), 0.5);
        assert!((activate(s, 40.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((activate(s, 3f64.ln()).unwrap() - 0.75).abs() < 1e-15);
        assert!(activate(s, f64::NAN).is_err());
        assert!(activate(s, f64::INFINITY).is_err());
    }

    #[test]
    fn node_output_examples() {
        let x = Matrix::new(3, 2, vec![0.1, 0.2, 3.0, -4.0, 0.0, 9.0]).unwrap();
        let zero = HiddenNode {
            w: vec![0.0, 0.0],
            b: 0.0,
        };
        assert_eq!(
            zero.output(ActivationKind::Sigmoid, &x).unwrap(),
            vec![0.5; 3]
        );

        let one = HiddenNode {
            w: vec![1.0],
            b: 0.0,
        };
        let x0 = Matrix::new(2, 1, vec![0.0, 3f64.ln()]).unwrap();
        let g = one.output(ActivationKind::Sigmoid, &x0).unwrap();
        assert_eq!(g[0], 0.5);
        assert!((g[1] - 0.75).abs() < 1e-15);

        assert!(matches!(
            one.output(ActivationKind::Sigmoid, &x),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn hidden_matrix_columns_follow_nodes() {
        let net = random_net(0, 2, 1, 1);
        let x = Matrix::new(4, 2, vec![0.1; 8]).unwrap();
        let h = net.hidden_matrix(&x).unwrap();
        assert_eq!((h.rows(), h.cols()), (4, 0));

        let net = random_net(3, 2, 1, 2);
        let h = net.hidden_matrix(&x).unwrap();
        for (j, node) in net.nodes.iter().enumerate() {
            assert_eq!(h.column(j), node.output(net.activation, &x).unwrap());
        }
        assert!(h.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn predict_examples() {
        let net = GeoNet::new(
            ActivationKind::Sigmoid,
            vec![HiddenNode {
                w: vec![0.0],
                b: 0.0,
            }],
            Matrix::new(1, 1, vec![2.0]).unwrap(),
            unit_stats(1, 1),
            meta(),
        )
        .unwrap();
        let x = Matrix::new(3, 1, vec![0.0, 0.4, 1.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap().as_slice(), &[1.0, 1.0, 1.0]);

        let empty = GeoNet::new(
            ActivationKind::Sigmoid,
            vec![],
            Matrix::zeros(0, 1),
            unit_stats(1, 1),
            meta(),
        )
        .unwrap();
        assert_eq!(empty.predict(&x).unwrap().as_slice(), &[0.0, 0.0, 0.0]);

        let wrong = Matrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(net.predict(&wrong), Err(Error::Dimension(_))));
    }

    #[test]
    fn beta_scaling_scales_normalized_output() {
        let net = random_net(6, 3, 2, 3);
        let x = Matrix::new(5, 3, (0..15).map(|i| i as f64 / 15.0).collect()).unwrap();
        let base = net.predict_normalized(&x).unwrap();
        let mut scaled = net.clone();
        scaled.beta = net.beta.scale(-2.5);
        let out = scaled.predict_normalized(&x).unwrap();
        for (a, b) in base.as_slice().iter().zip(out.as_slice()) {
            assert!((a * -2.5 - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let net = random_net(10, 3, 2, 4);
        let back = GeoNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let x = Matrix::new(4, 3, (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = net.predict(&x).unwrap();
        let b = back.predict(&x).unwrap();
        assert!(a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn document_validation() {
        let net = random_net(3, 2, 1, 5);
        let mut doc = net.to_document().unwrap();
        doc.beta.pop();
        assert!(matches!(
            GeoNet::from_document(doc),
            Err(Error::Malformed(_))
        ));

        let mut doc = net.to_document().unwrap();
        doc.schema_version = "999".into();
        assert!(matches!(
            GeoNet::from_document(doc),
            Err(Error::SchemaVersion { .. })
        ));

        assert!(matches!(
            GeoNet::from_json("{\"schema_version\": \"1\""),
            Err(Error::Malformed(_))
        ));

        let mut bad = net.clone();
        bad.beta.set(0, 0, f64::INFINITY);
        assert!(bad.to_json().is_err());
    }

    #[test]
    fn zero_node_model_round_trips() {
        let net = random_net(0, 2, 3, 6);
        let back = GeoNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back.output_dim(), 3);
        assert!(back.is_empty());
    }
}
