//! Gradient-boosted trees on normalized deciles plus protocol descriptors.
//!
//! CEP targets are normalized with the row's own constants before fitting and
//! denormalized the same way at prediction time, so the model only ever sees
//! scale-free quantities.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Design;
use super::trees::{boost, GbtLoss, TreeEnsemble, TreeParams};
use super::{require_book, FeatureMask, FitError, ModelKind, PredictError, TargetKind};
use crate::features::{FeatureRow, DECILES};
use crate::market::{FeedbackSetting, PriceRule};

pub const GBT_FEATURES: usize = 2 * DECILES + 4 + 3 + 2;
const FEEDBACK_AT: usize = 2 * DECILES;
const RULE_AT: usize = FEEDBACK_AT + 4;
const ROUND_AT: usize = RULE_AT + 3;
const N_AT: usize = ROUND_AT + 1;

pub fn gbt_feature_names() -> Vec<String> {
    let mut names: Vec<String> = (0..DECILES).map(|k| format!("bid_q{}", k * 10)).collect();
    names.extend((0..DECILES).map(|k| format!("ask_q{}", k * 10)));
    names.extend(FeedbackSetting::ALL.iter().map(|f| format!("feedback_{}", f.as_str())));
    names.extend(PriceRule::ALL.iter().map(|r| format!("rule_{}", r.as_str())));
    names.push("round".into());
    names.push("n_deals".into());
    names
}

/// Model inputs for a row; `None` unless both book sides are present.
/// Rounds a normalized decile onto a 2^-32 grid. Values that agree up to
/// floating-point noise then compare equal, which keeps split search
/// independent of the price scale.
fn snap(v: f64) -> f64 {
    const GRID: f64 = 4_294_967_296.0;
    libm::round(v * GRID) / GRID
}

pub fn gbt_features(row: &FeatureRow) -> Option<[f64; GBT_FEATURES]> {
    let bids = row.normalized_bids()?;
    let asks = row.normalized_asks()?;
    let mut x = [0.0; GBT_FEATURES];
    for (dst, v) in x[..FEEDBACK_AT].iter_mut().zip(bids.iter().chain(&asks)) {
        *dst = snap(*v);
    }
    x[FEEDBACK_AT + row.treatment.feedback.index()] = 1.0;
    x[RULE_AT + row.treatment.price_rule.index()] = 1.0;
    x[ROUND_AT] = row.round as f64;
    x[N_AT] = row.n_deals as f64;
    Some(x)
}

fn allowed_features(mask: &FeatureMask) -> Vec<bool> {
    (0..GBT_FEATURES)
        .map(|j| match j {
            _ if j < FEEDBACK_AT => true,
            _ if j < ROUND_AT => mask.treatment,
            ROUND_AT => mask.round,
            _ => mask.n_deals,
        })
        .collect()
}

/// Hyper-parameter grid searched on a random 80/20 split of the training
/// rows. A single-point grid skips the search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtGrid {
    pub max_depths: Vec<usize>,
    pub n_trees: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub min_samples_leaf: usize,
    pub validation_fraction: f64,
}

impl GbtGrid {
    pub fn default_for(target: TargetKind) -> Self {
        GbtGrid {
            max_depths: match target {
                TargetKind::Cep => vec![4, 6, 8],
                TargetKind::Ae => vec![6, 8, 10],
            },
            n_trees: vec![100, 300],
            learning_rates: vec![0.05, 0.1],
            min_samples_leaf: 5,
            validation_fraction: 0.2,
        }
    }

    pub fn single(max_depth: usize, n_trees: usize, learning_rate: f64) -> Self {
        GbtGrid {
            max_depths: vec![max_depth],
            n_trees: vec![n_trees],
            learning_rates: vec![learning_rate],
            min_samples_leaf: 5,
            validation_fraction: 0.2,
        }
    }

    pub fn len(&self) -> usize {
        self.max_depths.len() * self.n_trees.len() * self.learning_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub max_depth: usize,
    pub n_trees: usize,
    pub learning_rate: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub target: TargetKind,
    pub mask: FeatureMask,
    pub params: TreeParams,
    pub ensemble: TreeEnsemble,
    /// Mean training loss at the base score and after each tree.
    pub train_loss: Vec<f64>,
    pub grid_scores: Vec<GridScore>,
}

fn loss_for(target: TargetKind) -> GbtLoss {
    match target {
        TargetKind::Ae => GbtLoss::Squared,
        TargetKind::Cep => GbtLoss::Pinball { quantile: 0.5 },
    }
}

fn model_target(row: &FeatureRow, target: TargetKind) -> Option<f64> {
    let y = target.of(row).filter(|v| v.is_finite())?;
    match target {
        TargetKind::Ae => Some(y),
        TargetKind::Cep => Some(row.norm?.normalize(y)),
    }
}

fn subset(x: &Design, y: &[f64], idx: &[usize]) -> (Design, Vec<f64>) {
    let mut d = Design::with_capacity(x.p, idx.len());
    for &i in idx {
        d.push_row(x.row(i));
    }
    (d, idx.iter().map(|&i| y[i]).collect())
}

fn search(
    x: &Design,
    y: &[f64],
    grid: &GbtGrid,
    loss: GbtLoss,
    allowed: &[bool],
    seed: u64,
) -> (TreeParams, Vec<GridScore>) {
    let mut first = TreeParams {
        max_depth: grid.max_depths[0],
        n_trees: grid.n_trees[0],
        learning_rate: grid.learning_rates[0],
        min_samples_leaf: grid.min_samples_leaf,
        loss,
    };
    if grid.len() == 1 || x.n < 2 {
        return (first, Vec::new());
    }
    let mut idx: Vec<usize> = (0..x.n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (libm::round(x.n as f64 * grid.validation_fraction) as usize).clamp(1, x.n - 1);
    let (val_idx, fit_idx) = idx.split_at(n_val);
    let (mut fit_idx, mut val_idx) = (fit_idx.to_vec(), val_idx.to_vec());
    fit_idx.sort_unstable();
    val_idx.sort_unstable();
    let (xf, yf) = subset(x, y, &fit_idx);
    let (xv, yv) = subset(x, y, &val_idx);
    let max_trees = grid.n_trees.iter().copied().max().unwrap_or(0);

    let mut scores = Vec::new();
    let mut best = f64::INFINITY;
    for &max_depth in &grid.max_depths {
        for &learning_rate in &grid.learning_rates {
            let params = TreeParams { max_depth, n_trees: max_trees, learning_rate, min_samples_leaf: grid.min_samples_leaf, loss };
            let ens = boost(&xf, &yf, &params, allowed).ensemble;
            // validation loss after every tree count, built up incrementally
            let mut pred = vec![ens.base_score; xv.n];
            let mut staged = vec![loss.mean_loss(&yv, &pred)];
            for t in &ens.trees {
                for (i, p) in pred.iter_mut().enumerate() {
                    *p += learning_rate * t.predict(xv.row(i));
                }
                staged.push(loss.mean_loss(&yv, &pred));
            }
            for &n_trees in &grid.n_trees {
                let validation_loss = staged[n_trees.min(staged.len() - 1)];
                scores.push(GridScore { max_depth, n_trees, learning_rate, validation_loss });
                if validation_loss < best {
                    best = validation_loss;
                    first = TreeParams { n_trees, ..params };
                }
            }
        }
    }
    (first, scores)
}

pub fn fit_gbt(
    train: &[FeatureRow],
    target: TargetKind,
    grid: &GbtGrid,
    mask: &FeatureMask,
    seed: u64,
) -> Result<GbtModel, FitError> {
    if grid.is_empty() {
        return Err(FitError::NoUsableRows(ModelKind::Gbt));
    }
    let mut x = Design::with_capacity(GBT_FEATURES, train.len());
    let mut y = Vec::with_capacity(train.len());
    for r in train {
        if let (Some(f), Some(t)) = (gbt_features(r), model_target(r, target)) {
            x.push_row(&f);
            y.push(t);
        }
    }
    if y.is_empty() {
        return Err(FitError::NoUsableRows(ModelKind::Gbt));
    }
    let allowed = allowed_features(mask);
    let loss = loss_for(target);
    let (params, grid_scores) = search(&x, &y, grid, loss, &allowed, seed);
    let fit = boost(&x, &y, &params, &allowed);
    Ok(GbtModel { target, mask: *mask, params, ensemble: fit.ensemble, train_loss: fit.train_loss, grid_scores })
}

impl GbtModel {
    /// Prediction in target units before clipping.
    pub fn predict(&self, row: &FeatureRow) -> Result<f64, PredictError> {
        require_book(row)?;
        let x = gbt_features(row).ok_or(PredictError::MissingInput("book normalization"))?;
        Ok(self.predict_features(&x, row))
    }

    /// Prediction from an explicit feature vector; `row` supplies the
    /// normalization constants for CEP.
    pub fn predict_features(&self, x: &[f64], row: &FeatureRow) -> f64 {
        let raw = self.ensemble.predict(x);
        match (self.target, row.norm) {
            (TargetKind::Cep, Some(norm)) => norm.denormalize(raw),
            _ => raw,
        }
    }

    pub fn importance(&self) -> Vec<(String, f64)> {
        gbt_feature_names().into_iter().zip(self.ensemble.gain_importance()).collect()
    }
}
