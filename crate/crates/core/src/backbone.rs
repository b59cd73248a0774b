//! Scoring backbones: matrix factorization and a LightGCN-style propagation
//! model without feature transforms or non-linearities.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model needs at least one user and one item (got {users} users, {items} items)")]
    EmptyTables { users: usize, items: usize },
    #[error("embedding dimension must be at least 1")]
    ZeroDim,
    #[error("{kind} index {index} out of range (count {count})")]
    OutOfRange {
        kind: &'static str,
        index: usize,
        count: usize,
    },
    #[error("non-finite gradient at {table}[{row}, {col}]")]
    NonFiniteGradient {
        table: &'static str,
        row: usize,
        col: usize,
    },
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("graph covers {graph_users} users / {graph_items} items but model has {model_users} / {model_items}")]
    GraphMismatch {
        graph_users: usize,
        graph_items: usize,
        model_users: usize,
        model_items: usize,
    },
    #[error("propagation requires a LightGCN-style model")]
    NotPropagating,
    #[error("propagated embeddings are stale; call refresh() first")]
    StalePropagation,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    #[default]
    Mf,
    #[serde(alias = "lightgcn", alias = "light_gcn_lite")]
    LightGcnLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct AdamMoments {
    m: Array2<f64>,
    v: Array2<f64>,
}

impl AdamMoments {
    fn zeros(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    step: u64,
    users: Option<AdamMoments>,
    items: Option<AdamMoments>,
}

impl OptimizerState {
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Gradients with respect to the base embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            users: Array2::zeros(model.user_embeddings.raw_dim()),
            items: Array2::zeros(model.item_embeddings.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: BackboneKind,
    pub user_embeddings: Array2<f64>,
    pub item_embeddings: Array2<f64>,
    pub layers: usize,
    pub optimizer_state: OptimizerState,
    propagated: Option<(Array2<f64>, Array2<f64>)>,
}

impl Model {
    pub fn init(
        kind: BackboneKind,
        user_count: usize,
        item_count: usize,
        dim: usize,
        layers: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if user_count == 0 || item_count == 0 {
            return Err(ModelError::EmptyTables {
                users: user_count,
                items: item_count,
            });
        }
        if dim == 0 {
            return Err(ModelError::ZeroDim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1 / (dim as f64).sqrt()).expect("valid std");
        let user_embeddings = Array2::from_shape_fn((user_count, dim), |_| normal.sample(&mut rng));
        let item_embeddings = Array2::from_shape_fn((item_count, dim), |_| normal.sample(&mut rng));
        Ok(Self {
            kind,
            user_embeddings,
            item_embeddings,
            layers: if kind == BackboneKind::Mf { 0 } else { layers },
            optimizer_state: OptimizerState::default(),
            propagated: None,
        })
    }

    pub fn from_tables(kind: BackboneKind, users: Array2<f64>, items: Array2<f64>, layers: usize) -> Self {
        Self {
            kind,
            user_embeddings: users,
            item_embeddings: items,
            layers,
            optimizer_state: OptimizerState::default(),
            propagated: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.user_embeddings.ncols()
    }

    pub fn user_count(&self) -> usize {
        self.user_embeddings.nrows()
    }

    pub fn item_count(&self) -> usize {
        self.item_embeddings.nrows()
    }

    /// Recomputes the propagated tables used for scoring. No-op for MF.
    pub fn refresh(&mut self, graph: &InteractionGraph) -> Result<(), ModelError> {
        if self.kind == BackboneKind::LightGcnLite {
            self.propagated = Some(propagate(self, graph)?);
        }
        Ok(())
    }

    fn check(&self, user: usize, item: usize) -> Result<(), ModelError> {
        if user >= self.user_count() {
            return Err(ModelError::OutOfRange {
                kind: "user",
                index: user,
                count: self.user_count(),
            });
        }
        if item >= self.item_count() {
            return Err(ModelError::OutOfRange {
                kind: "item",
                index: item,
                count: self.item_count(),
            });
        }
        Ok(())
    }

    /// Tables actually used for scoring: base tables for MF, propagated
    /// tables for the graph backbone.
    pub fn scoring_tables(&self) -> Result<(&Array2<f64>, &Array2<f64>), ModelError> {
        match self.kind {
            BackboneKind::Mf => Ok((&self.user_embeddings, &self.item_embeddings)),
            BackboneKind::LightGcnLite => self
                .propagated
                .as_ref()
                .map(|(u, i)| (u, i))
                .ok_or(ModelError::StalePropagation),
        }
    }

    pub fn predict(&self, user: usize, item: usize) -> Result<f64, ModelError> {
        self.check(user, item)?;
        let (users, items) = self.scoring_tables()?;
        Ok(users.row(user).dot(&items.row(item)))
    }

    /// Scores of one user against every item.
    pub fn score_all(&self, user: usize) -> Result<Vec<f64>, ModelError> {
        self.check(user, 0)?;
        let (users, items) = self.scoring_tables()?;
        Ok(items.dot(&users.row(user)).to_vec())
    }

    /// Applies one optimizer step. Non-finite gradients abort the step before
    /// any parameter is touched. Propagated tables are not refreshed here;
    /// the graph backbone re-propagates once per epoch.
    pub fn apply_gradients(
        &mut self,
        grads: &GradientSet,
        learning_rate: f64,
        optimizer: Optimizer,
    ) -> Result<(), ModelError> {
        if learning_rate.is_nan() || learning_rate <= 0.0 {
            return Err(ModelError::BadLearningRate(learning_rate));
        }
        for (table, g) in [("user_embeddings", &grads.users), ("item_embeddings", &grads.items)] {
            if let Some(((row, col), _)) = g.indexed_iter().find(|(_, x)| !x.is_finite()) {
                return Err(ModelError::NonFiniteGradient { table, row, col });
            }
        }
        match optimizer {
            Optimizer::Sgd => {
                self.user_embeddings.scaled_add(-learning_rate, &grads.users);
                self.item_embeddings.scaled_add(-learning_rate, &grads.items);
                self.optimizer_state.step += 1;
            }
            Optimizer::Adam => {
                let state = &mut self.optimizer_state;
                state.step += 1;
                let t = state.step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                let users = state
                    .users
                    .get_or_insert_with(|| AdamMoments::zeros(self.user_embeddings.dim()));
                adam_update(&mut self.user_embeddings, &grads.users, users, learning_rate, bc1, bc2);
                let items = state
                    .items
                    .get_or_insert_with(|| AdamMoments::zeros(self.item_embeddings.dim()));
                adam_update(&mut self.item_embeddings, &grads.items, items, learning_rate, bc1, bc2);
            }
        }
        Ok(())
    }

    /// Adds `coeff · ∂score(u, i)/∂(scoring tables)` into `grads`, where the
    /// gradient is taken with respect to the tables returned by
    /// [`Model::scoring_tables`].
    pub fn accumulate_score_grad(
        &self,
        user: usize,
        item: usize,
        coeff: f64,
        grads: &mut GradientSet,
    ) -> Result<(), ModelError> {
        self.check(user, item)?;
        let (users, items) = self.scoring_tables()?;
        grads.users.row_mut(user).scaled_add(coeff, &items.row(item));
        grads.items.row_mut(item).scaled_add(coeff, &users.row(user));
        Ok(())
    }

    /// Maps gradients with respect to the scoring tables onto the base tables.
    pub fn backprop_to_base(
        &self,
        grads: GradientSet,
        graph: Option<&InteractionGraph>,
    ) -> Result<GradientSet, ModelError> {
        match self.kind {
            BackboneKind::Mf => Ok(grads),
            BackboneKind::LightGcnLite => {
                let graph = graph.ok_or(ModelError::StalePropagation)?;
                // the layer-mean operator is symmetric, so its adjoint is itself
                let (users, items) = layer_mean(graph, &grads.users, &grads.items, self.layers)?;
                Ok(GradientSet { users, items })
            }
        }
    }
}

fn adam_update(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    moments: &mut AdamMoments,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(&mut moments.m)
        .and(&mut moments.v)
        .for_each(|p, &g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        });
}

/// Symmetric-normalized user–item adjacency `D^{-1/2} A D^{-1/2}` over the
/// bipartite graph of training positives. Node ids: users first, then items.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    pub user_count: usize,
    pub item_count: usize,
    /// Per-node neighbor lists with normalized edge weights.
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl InteractionGraph {
    pub fn from_dataset(train: &Dataset) -> Self {
        let edges: Vec<(usize, usize)> = train
            .interactions
            .iter()
            .filter(|x| x.label == 1)
            .map(|x| (x.user, x.item))
            .collect();
        Self::from_edges(train.user_count, train.item_count, &edges)
    }

    pub fn from_edges(user_count: usize, item_count: usize, edges: &[(usize, usize)]) -> Self {
        let mut edges = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();
        let n = user_count + item_count;
        let mut degree = vec![0usize; n];
        for &(u, i) in &edges {
            degree[u] += 1;
            degree[user_count + i] += 1;
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, i) in &edges {
            let a = u;
            let b = user_count + i;
            let w = 1.0 / ((degree[a] as f64).sqrt() * (degree[b] as f64).sqrt());
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        Self {
            user_count,
            item_count,
            adjacency,
        }
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    fn multiply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (node, neigh) in self.adjacency.iter().enumerate() {
            let mut row = out.row_mut(node);
            for &(other, w) in neigh {
                row.scaled_add(w, &x.row(other));
            }
        }
        out
    }
}

/// Mean of `Â^l E` for `l = 0..=layers`, split back into user and item parts.
fn layer_mean(
    graph: &InteractionGraph,
    users: &Array2<f64>,
    items: &Array2<f64>,
    layers: usize,
) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    if graph.user_count != users.nrows() || graph.item_count != items.nrows() {
        return Err(ModelError::GraphMismatch {
            graph_users: graph.user_count,
            graph_items: graph.item_count,
            model_users: users.nrows(),
            model_items: items.nrows(),
        });
    }
    let mut layer = ndarray::concatenate(Axis(0), &[users.view(), items.view()]).expect("same width");
    let mut sum = layer.clone();
    for _ in 0..layers {
        layer = graph.multiply(&layer);
        sum += &layer;
    }
    sum /= (layers + 1) as f64;
    let items = sum.slice(ndarray::s![graph.user_count.., ..]).to_owned();
    let users = sum.slice(ndarray::s![..graph.user_count, ..]).to_owned();
    Ok((users, items))
}

/// Layer-averaged propagated user and item embeddings.
pub fn propagate(model: &Model, graph: &InteractionGraph) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    if model.kind != BackboneKind::LightGcnLite {
        return Err(ModelError::NotPropagating);
    }
    layer_mean(graph, &model.user_embeddings, &model.item_embeddings, model.layers)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub kind: BackboneKind,
    pub dim: usize,
    pub layers: usize,
    pub user_count: usize,
    pub item_count: usize,
    /// Always `f64-le`: user table then item table, both row-major.
    pub dtype: String,
}

fn bin_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes `<path>` (JSON header) and `<path>.bin` (raw little-endian f64
/// tensors, user table followed by item table).
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    let fail = |message: String| ModelError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let header = CheckpointHeader {
        kind: model.kind,
        dim: model.dim(),
        layers: model.layers,
        user_count: model.user_count(),
        item_count: model.item_count(),
        dtype: "f64-le".into(),
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| fail(e.to_string()))?;
    fs::write(path, json).map_err(|e| fail(e.to_string()))?;
    let mut bytes = Vec::with_capacity(8 * (model.user_embeddings.len() + model.item_embeddings.len()));
    for x in model.user_embeddings.iter().chain(model.item_embeddings.iter()) {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(bin_path(path), bytes).map_err(|e| fail(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let fail = |message: String| ModelError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let json = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let header: CheckpointHeader = serde_json::from_str(&json).map_err(|e| fail(e.to_string()))?;
    if header.dtype != "f64-le" {
        return Err(fail(format!("unsupported dtype {}", header.dtype)));
    }
    let bytes = fs::read(bin_path(path)).map_err(|e| fail(e.to_string()))?;
    let n_users = header.user_count * header.dim;
    let n_items = header.item_count * header.dim;
    if bytes.len() != 8 * (n_users + n_items) {
        return Err(fail(format!(
            "tensor file holds {} bytes, header implies {}",
            bytes.len(),
            8 * (n_users + n_items)
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let users = Array2::from_shape_vec((header.user_count, header.dim), values[..n_users].to_vec())
        .map_err(|e| fail(e.to_string()))?;
    let items = Array2::from_shape_vec((header.item_count, header.dim), values[n_users..].to_vec())
        .map_err(|e| fail(e.to_string()))?;
    Ok(Model::from_tables(header.kind, users, items, header.layers))
}
