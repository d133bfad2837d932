//! Captured posterior draws and their JSON form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::Scaling;
use super::sampler::SampleTrace;
use super::tree::{Node, NodeKind, Tree};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

impl Serialize for Tree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nodes().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Tree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let nodes = Vec::<Node>::deserialize(d)?;
        Tree::from_nodes(nodes).map_err(serde::de::Error::custom)
    }
}

/// One posterior draw of the ensemble. Predictions are in response units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    /// Noise variance on the scaled response.
    sigma2: f64,
    scaling: Scaling,
}

impl Forest {
    pub fn new(trees: Vec<Tree>, sigma2: f64, scaling: Scaling) -> Self {
        Forest { trees, sigma2, scaling }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn sigma2_scaled(&self) -> f64 {
        self.sigma2
    }

    /// Noise standard deviation in response units.
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt() * self.scaling.y_range
    }

    /// Sum of tree outputs on the scaled response.
    #[inline]
    pub fn predict_scaled(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum()
    }

    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.scaling.unscale(self.predict_scaled(row))
    }

    pub fn predict_rows(&self, x: &Matrix) -> Vec<f64> {
        x.rows().map(|r| self.predict(r)).collect()
    }

    /// Split counts per feature over all trees.
    pub fn split_counts(&self, n_features: usize) -> Vec<u64> {
        let mut out = vec![0u64; n_features];
        for t in &self.trees {
            for id in t.internal_nodes() {
                out[t.rule(id).expect("internal").feature] += 1;
            }
        }
        out
    }

    /// Parent-child split pairs on distinct features, keyed `(min, max)`.
    pub fn interaction_pairs(&self) -> BTreeMap<(usize, usize), u64> {
        let mut out = BTreeMap::new();
        for t in &self.trees {
            for id in t.internal_nodes() {
                let node = t.node(id);
                let (Some(p), NodeKind::Split { rule, .. }) = (node.parent, &node.kind) else {
                    continue;
                };
                let pf = t.rule(p).expect("parent is internal").feature;
                if pf != rule.feature {
                    *out.entry((pf.min(rule.feature), pf.max(rule.feature))).or_insert(0) += 1;
                }
            }
        }
        out
    }
}

pub const FOREST_FORMAT: &str = "bartlab-posterior";
pub const FOREST_VERSION: u32 = 1;

/// Sequence of captured forests plus sampler diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub forests: Vec<Forest>,
    pub n_features: usize,
    #[serde(skip)]
    pub trace: SampleTrace,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorFile {
    format: String,
    version: u32,
    feature_names: Vec<String>,
    n_features: usize,
    forests: Vec<Forest>,
}

impl Posterior {
    pub fn new(forests: Vec<Forest>, n_features: usize, trace: SampleTrace) -> Self {
        Posterior {
            forests,
            n_features,
            trace,
        }
    }

    pub fn len(&self) -> usize {
        self.forests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forests.is_empty()
    }

    /// `draws[k][i]`: forest `k` evaluated on row `i`.
    pub fn draws(&self, x: &Matrix) -> Vec<Vec<f64>> {
        self.forests.iter().map(|f| f.predict_rows(x)).collect()
    }

    pub fn mean_prediction(&self, x: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; x.n_rows()];
        for f in &self.forests {
            for (o, r) in out.iter_mut().zip(x.rows()) {
                *o += f.predict(r);
            }
        }
        let k = self.forests.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }

    /// Noise standard deviation per draw, response units.
    pub fn sigma_draws(&self) -> Vec<f64> {
        self.forests.iter().map(Forest::sigma).collect()
    }

    /// Versioned JSON document with the feature schema.
    pub fn to_json(&self, feature_names: &[String]) -> Result<String> {
        let file = PosteriorFile {
            format: FOREST_FORMAT.into(),
            version: FOREST_VERSION,
            feature_names: feature_names.to_vec(),
            n_features: self.n_features,
            forests: self.forests.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Schema(e.to_string()))
    }

    /// Inverse of [`Posterior::to_json`]; returns the feature names too.
    pub fn from_json(text: &str) -> Result<(Posterior, Vec<String>)> {
        let file: PosteriorFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if file.format != FOREST_FORMAT || file.version != FOREST_VERSION {
            return Err(Error::Schema(format!(
                "unsupported forest file {} v{} (want {FOREST_FORMAT} v{FOREST_VERSION})",
                file.format, file.version
            )));
        }
        if file.feature_names.len() != file.n_features {
            return Err(Error::Schema("feature name count differs from n_features".into()));
        }
        for f in &file.forests {
            for t in f.trees() {
                if let Some(bad) = t.internal_nodes().find(|&id| t.rule(id).unwrap().feature >= file.n_features) {
                    return Err(Error::Schema(format!("split on node {bad} references a missing feature")));
                }
            }
        }
        Ok((Posterior::new(file.forests, file.n_features, SampleTrace::default()), file.feature_names))
    }
}
