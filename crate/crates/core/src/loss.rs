//! Per-sample BPR and BCE losses, their score derivatives, and batch
//! gradients with respect to the backbone's base embeddings.

use serde::{Deserialize, Serialize};

use crate::backbone::{GradientSet, InteractionGraph, Model, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Pointwise,
    #[default]
    Pairwise,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−ln σ(y_pos − y_neg)`.
pub fn bpr_loss(y_pos: f64, y_neg: f64) -> f64 {
    softplus(y_neg - y_pos)
}

/// Derivative of [`bpr_loss`] with respect to `y_pos`; the derivative with
/// respect to `y_neg` is its negation.
pub fn bpr_grad(y_pos: f64, y_neg: f64) -> f64 {
    -sigmoid(y_neg - y_pos)
}

/// Binary cross-entropy of the logistic-squashed raw score against `label`,
/// in logit form: `softplus(s) − y·s`.
pub fn bce_loss(raw: f64, label: u8) -> f64 {
    if label == 1 {
        softplus(-raw)
    } else {
        softplus(raw)
    }
}

/// Derivative of [`bce_loss`] with respect to the raw score.
pub fn bce_grad(raw: f64, label: u8) -> f64 {
    sigmoid(raw) - f64::from(label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// Pairwise sample against a fixed negative item.
    Pair { neg_item: usize },
    /// Pointwise sample with a binary label.
    Label(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub user: usize,
    /// Positive item for pairwise samples; the labelled item otherwise.
    pub item: usize,
    pub target: Target,
    /// Index of the originating training interaction.
    pub source: usize,
    /// Whether the positive side was planted as noise.
    pub planted: bool,
    /// Predictions from the last forward pass: (item score, negative score).
    pub cached: Option<(f64, Option<f64>)>,
}

impl TrainSample {
    pub fn pairwise(user: usize, pos_item: usize, neg_item: usize, source: usize) -> Self {
        Self {
            user,
            item: pos_item,
            target: Target::Pair { neg_item },
            source,
            planted: false,
            cached: None,
        }
    }

    pub fn pointwise(user: usize, item: usize, label: u8, source: usize) -> Self {
        Self {
            user,
            item,
            target: Target::Label(label),
            source,
            planted: false,
            cached: None,
        }
    }

    pub fn mode(&self) -> TrainMode {
        match self.target {
            Target::Pair { .. } => TrainMode::Pairwise,
            Target::Label(_) => TrainMode::Pointwise,
        }
    }

    /// True for pointwise negatives.
    pub fn is_negative(&self) -> bool {
        self.target == Target::Label(0)
    }

    fn forward(&self, model: &Model) -> Result<(f64, Option<f64>), ModelError> {
        let y = model.predict(self.user, self.item)?;
        let neg = match self.target {
            Target::Pair { neg_item } => Some(model.predict(self.user, neg_item)?),
            Target::Label(_) => None,
        };
        Ok((y, neg))
    }

    fn loss_of(&self, y: f64, neg: Option<f64>) -> f64 {
        match self.target {
            Target::Pair { .. } => bpr_loss(y, neg.expect("pairwise forward has a negative")),
            Target::Label(label) => bce_loss(y, label),
        }
    }

    /// Loss from a fresh forward pass.
    pub fn loss(&self, model: &Model) -> Result<f64, ModelError> {
        let (y, neg) = self.forward(model)?;
        Ok(self.loss_of(y, neg))
    }
}

/// Per-sample losses aligned with `batch`; caches predictions on each sample.
pub fn batch_losses(model: &Model, batch: &mut [TrainSample]) -> Result<Vec<f64>, ModelError> {
    batch
        .iter_mut()
        .map(|s| {
            let (y, neg) = s.forward(model)?;
            s.cached = Some((y, neg));
            Ok(s.loss_of(y, neg))
        })
        .collect()
}

/// Mean loss over `selected` batch positions (ascending) and the gradient of
///
/// `(1/n) Σ_s [ loss_s + (l2/2)(‖e_u‖² + ‖e_i‖² + ‖e_j‖²) ]`
///
/// with respect to the base tables, where `e_*` are the base embedding rows
/// touched by sample `s`. Uses the cached predictions from
/// [`batch_losses`].
pub fn batch_gradients(
    model: &Model,
    graph: Option<&InteractionGraph>,
    batch: &[TrainSample],
    selected: &[usize],
    l2: f64,
) -> Result<(f64, GradientSet), ModelError> {
    let mut grads = GradientSet::zeros_like(model);
    if selected.is_empty() {
        return Ok((0.0, grads));
    }
    let n = selected.len() as f64;
    let mut total = 0.0;
    for &k in selected {
        let s = &batch[k];
        let (y, neg) = match s.cached {
            Some(c) => c,
            None => s.forward(model)?,
        };
        total += s.loss_of(y, neg);
        match s.target {
            Target::Pair { neg_item } => {
                let g = bpr_grad(y, neg.expect("pairwise")) / n;
                model.accumulate_score_grad(s.user, s.item, g, &mut grads)?;
                model.accumulate_score_grad(s.user, neg_item, -g, &mut grads)?;
            }
            Target::Label(label) => {
                let g = bce_grad(y, label) / n;
                model.accumulate_score_grad(s.user, s.item, g, &mut grads)?;
            }
        }
    }
    let mut grads = model.backprop_to_base(grads, graph)?;
    if l2 > 0.0 {
        let c = l2 / n;
        for &k in selected {
            let s = &batch[k];
            grads
                .users
                .row_mut(s.user)
                .scaled_add(c, &model.user_embeddings.row(s.user));
            grads
                .items
                .row_mut(s.item)
                .scaled_add(c, &model.item_embeddings.row(s.item));
            if let Target::Pair { neg_item } = s.target {
                grads
                    .items
                    .row_mut(neg_item)
                    .scaled_add(c, &model.item_embeddings.row(neg_item));
            }
        }
    }
    Ok((total / n, grads))
}

/// The regularized objective that [`batch_gradients`] differentiates,
/// evaluated from scratch with fresh predictions.
pub fn objective(model: &Model, batch: &[TrainSample], selected: &[usize], l2: f64) -> Result<f64, ModelError> {
    let n = selected.len() as f64;
    let mut total = 0.0;
    for &k in selected {
        let s = &batch[k];
        total += s.loss(model)?;
        let sq = |row: ndarray::ArrayView1<f64>| row.dot(&row);
        let mut reg = sq(model.user_embeddings.row(s.user)) + sq(model.item_embeddings.row(s.item));
        if let Target::Pair { neg_item } = s.target {
            reg += sq(model.item_embeddings.row(neg_item));
        }
        total += 0.5 * l2 * reg;
    }
    Ok(total / n)
}
