//! Label/feature normalization, the RMSE + L2 objective, the batched Adam
//! training loop, and model checkpoints.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
use crate::autodiff::{
    adam_step, gradient_check, sample_coords, AdamConfig, AdamState, AutodiffError, GradCheckReport, Tape, Tensor, Var,
};
use crate::datagen::{oracle_labels, Sample};
use crate::derive_seed;
use crate::metrics::{self, MetricError};
use crate::model::{
    forward, forward_on_tape, mc_predict, ForwardInput, GraphPlan, McEstimate, Mode, ModelConfig, ModelError, ModelParams,
    Target,
};
use crate::netgraph::{build_hetero_graph, union_batch, HeteroGraph, RoutingScheme, Topology, TrafficMatrix};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs a non-empty {0} set")]
    EmptySet(&'static str),
    #[error("loss needs at least one path")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("labels have zero spread; cannot normalize")]
    DegenerateLabels,
    #[error("loss became non-finite at step {step}")]
    DivergedLoss { step: usize, last_good: Box<ModelParams> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Coefficient of the squared-weight penalty added to the loss.
    pub l2_coeff: f64,
    pub max_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, learning_rate: 1e-3, l2_coeff: 0.1, max_steps: 2000, eval_every: 100, seed: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.l2_coeff.is_finite() && self.l2_coeff >= 0.0) {
            return Err(TrainError::InvalidConfig(format!("l2_coeff {} must be non-negative", self.l2_coeff)));
        }
        if self.eval_every == 0 {
            return Err(TrainError::InvalidConfig("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Z-scores labels and divides features by the largest training capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub label_mean: f64,
    pub label_std: f64,
    pub feature_scale: f64,
}

impl Normalizer {
    pub fn fit(samples: &[Sample], target: Target) -> Result<Self, TrainError> {
        let labels: Vec<f64> = samples.iter().flat_map(|s| s.labels.get(target).iter().copied()).collect();
        if labels.is_empty() {
            return Err(TrainError::EmptySet("training"));
        }
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let std = (labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(TrainError::DegenerateLabels);
        }
        let feature_scale = samples.iter().map(|s| s.topology.max_capacity()).fold(0.0, f64::max);
        Ok(Self { label_mean: mean, label_std: std, feature_scale })
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.label_mean) / self.label_std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.label_std + self.label_mean
    }

    /// Scaled path demands and link capacities.
    pub fn features(&self, topology: &Topology, traffic: &TrafficMatrix) -> (Vec<f64>, Vec<f64>) {
        let x_p = traffic.demand().iter().map(|d| d / self.feature_scale).collect();
        let x_l = topology.links().iter().map(|l| l.capacity / self.feature_scale).collect();
        (x_p, x_l)
    }
}

/// A sample turned into graph + normalized features + normalized labels.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub graph: HeteroGraph,
    pub x_p: Vec<f64>,
    pub x_l: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn prepare(samples: &[Sample], normalizer: &Normalizer, target: Target) -> Result<Vec<PreparedSample>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let graph = build_hetero_graph(&s.topology, &s.routing).map_err(ModelError::from)?;
            let (x_p, x_l) = normalizer.features(&s.topology, &s.traffic);
            let y = s.labels.get(target).iter().map(|&v| normalizer.normalize(v)).collect();
            Ok(PreparedSample { graph, x_p, x_l, y })
        })
        .collect()
}

/// Disjoint union of several prepared samples.
pub struct Batch {
    pub graph: HeteroGraph,
    pub plan: GraphPlan,
    pub x_p: Vec<f64>,
    pub x_l: Vec<f64>,
    pub y: Vec<f64>,
    /// Path count of each member, in order.
    pub sizes: Vec<usize>,
}

impl Batch {
    pub fn new(members: &[&PreparedSample], config: &ModelConfig) -> Result<Self, TrainError> {
        let graphs: Vec<&HeteroGraph> = members.iter().map(|m| &m.graph).collect();
        let graph = union_batch(&graphs).map_err(ModelError::from)?;
        let plan = GraphPlan::new(&graph, config.include_self_in_neighbors);
        Ok(Self {
            plan,
            graph,
            x_p: members.iter().flat_map(|m| m.x_p.iter().copied()).collect(),
            x_l: members.iter().flat_map(|m| m.x_l.iter().copied()).collect(),
            y: members.iter().flat_map(|m| m.y.iter().copied()).collect(),
            sizes: members.iter().map(|m| m.graph.n_paths).collect(),
        })
    }

    fn input(&self) -> ForwardInput<'_> {
        ForwardInput { graph: &self.graph, plan: &self.plan, x_p: &self.x_p, x_l: &self.x_l }
    }

    fn split<T: Clone>(&self, flat: &[T]) -> Vec<Vec<T>> {
        let mut at = 0;
        self.sizes
            .iter()
            .map(|&n| {
                let part = flat[at..at + n].to_vec();
                at += n;
                part
            })
            .collect()
    }
}

/// `sqrt(mean((ŷ - y)²)) + l2 · Σ w²` recorded on the tape. `weights` are
/// the parameter vars to penalize.
pub fn loss_on_tape(tape: &mut Tape, pred: Var, labels: &[f64], weights: &[Var], l2_coeff: f64) -> Result<Var, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let y = tape.constant(Tensor::column(labels));
    let mse = tape.mse_reduce(pred, y)?;
    let mut total = tape.sqrt(mse);
    if l2_coeff != 0.0 && !weights.is_empty() {
        let mut penalty = tape.sum_squares(weights[0]);
        for &w in &weights[1..] {
            let s = tape.sum_squares(w);
            penalty = tape.add(penalty, s)?;
        }
        let penalty = tape.scale(penalty, l2_coeff);
        total = tape.add(total, penalty)?;
    }
    Ok(total)
}

/// The same objective evaluated directly.
pub fn loss(predictions: &[f64], labels: &[f64], params: &ModelParams, l2_coeff: f64) -> Result<f64, TrainError> {
    if predictions.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if predictions.len() != labels.len() {
        return Err(TrainError::Metric(MetricError::LengthMismatch(predictions.len(), labels.len())));
    }
    let mse = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / predictions.len() as f64;
    Ok(mse.sqrt() + l2_coeff * params.weight_sum_squares())
}

fn weight_vars(tape: &Tape, params: &ModelParams) -> Vec<Var> {
    params
        .named()
        .iter()
        .zip(tape.params())
        .filter(|(p, _)| p.is_weight)
        .map(|(_, &v)| v)
        .collect()
}

/// Loss and flat gradient of the whole model on one batch. Used by training
/// and by the gradient check.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &Batch,
    config: &ModelConfig,
    l2_coeff: f64,
    mode: Mode,
    seed: u64,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let pred = forward_on_tape(&mut tape, &vars, &batch.input(), config, mode, seed, None)?;
    let weights = weight_vars(&tape, params);
    let total = loss_on_tape(&mut tape, pred, &batch.y, &weights, l2_coeff)?;
    let value = tape.value(total).item();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(total)?.param_grads(&tape);
    Ok((value, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_mape: f64,
    pub val_pcc: f64,
}

/// Parameters with everything needed to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub latest: TrainedModel,
    /// Lowest validation MAPE seen, with its step.
    pub best: Option<(usize, TrainedModel)>,
    pub history: Vec<HistoryRow>,
}

/// Progress callbacks from [`train_with`].
pub enum TrainEvent<'a> {
    Evaluated { row: &'a HistoryRow, latest: &'a TrainedModel, improved: bool },
}

pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with(train_set, val_set, model_config, train_config, |_| Ok(()))
}

/// Training loop. Each step draws `batch_size` distinct samples, runs a
/// train-mode forward over their union and applies one Adam update.
/// Validation runs every `eval_every` steps and after the last step.
pub fn train_with<F>(
    train_set: &[Sample],
    val_set: &[Sample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_event: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(TrainEvent<'_>) -> Result<(), TrainError>,
{
    model_config.validate()?;
    train_config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let target = model_config.target;
    let normalizer = Normalizer::fit(train_set, target)?;
    let prepared = prepare(train_set, &normalizer, target)?;
    let val_prepared = prepare(val_set, &normalizer, target)?;
    let val_truth: Vec<f64> = val_set.iter().flat_map(|s| s.labels.get(target).iter().copied()).collect();

    let seed = train_config.seed;
    let mut model = TrainedModel {
        config: model_config.clone(),
        params: ModelParams::init(model_config, derive_seed(seed, 0))?,
        normalizer,
    };
    let mut best: Option<(usize, TrainedModel)> = None;
    let mut best_mape = f64::INFINITY;
    let mut history = Vec::new();
    let mut adam = AdamState::new();
    let adam_config = AdamConfig { learning_rate: train_config.learning_rate, ..AdamConfig::default() };
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for step in 1..=train_config.max_steps {
        let picks = sample(&mut batch_rng, prepared.len(), train_config.batch_size.min(prepared.len()));
        let members: Vec<&PreparedSample> = picks.iter().map(|i| &prepared[i]).collect();
        let batch = Batch::new(&members, model_config)?;
        let dropout_seed = derive_seed(seed, 2 + step as u64);
        let (value, grads) =
            loss_and_grad(&model.params, &batch, model_config, train_config.l2_coeff, Mode::Train, dropout_seed)?;
        if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::DivergedLoss { step, last_good: Box::new(model.params) });
        }
        let mut slots: Vec<&mut Tensor> = model.params.named_mut().into_iter().map(|p| p.tensor).collect();
        adam_step(&mut slots, &grads, &mut adam, &adam_config)?;
        loss_sum += value;
        loss_count += 1;

        if step % train_config.eval_every == 0 || step == train_config.max_steps {
            let preds = predict_prepared(&model, &val_prepared, Mode::Eval, 0)?;
            let flat: Vec<f64> = preds.into_iter().flatten().collect();
            let m = metrics::all_metrics(&flat, &val_truth)?;
            let row = HistoryRow {
                step,
                train_loss: loss_sum / loss_count as f64,
                val_mae: m.mae,
                val_mape: m.mape,
                val_pcc: m.pcc,
            };
            (loss_sum, loss_count) = (0.0, 0);
            let improved = m.mape < best_mape;
            if improved {
                best_mape = m.mape;
                best = Some((step, model.clone()));
            }
            on_event(TrainEvent::Evaluated { row: &row, latest: &model, improved })?;
            history.push(row);
        }
    }
    Ok(TrainOutcome { latest: model, best, history })
}

const PREDICT_BATCH: usize = 32;

/// Denormalized per-sample predictions, batched through disjoint unions.
fn predict_prepared(
    model: &TrainedModel,
    prepared: &[PreparedSample],
    mode: Mode,
    seed: u64,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut out = Vec::with_capacity(prepared.len());
    for (chunk_idx, chunk) in prepared.chunks(PREDICT_BATCH).enumerate() {
        let members: Vec<&PreparedSample> = chunk.iter().collect();
        let batch = Batch::new(&members, &model.config)?;
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let chunk_seed = derive_seed(seed, chunk_idx as u64);
        let pred = forward_on_tape(&mut tape, &vars, &batch.input(), &model.config, mode, chunk_seed, None)?;
        let values: Vec<f64> = tape.value(pred).as_slice().iter().map(|&z| model.normalizer.denormalize(z)).collect();
        out.extend(batch.split(&values));
    }
    Ok(out)
}

/// Eval-mode predictions in physical units, one vector per sample.
pub fn predict(model: &TrainedModel, samples: &[Sample]) -> Result<Vec<Vec<f64>>, TrainError> {
    let prepared = prepare(samples, &model.normalizer, model.config.target)?;
    predict_prepared(model, &prepared, Mode::Eval, 0)
}

/// Eval-mode predictions for a scenario without labels.
pub fn predict_unlabeled(
    model: &TrainedModel,
    topology: &Topology,
    routing: &RoutingScheme,
    traffic: &TrafficMatrix,
) -> Result<Vec<f64>, TrainError> {
    let graph = build_hetero_graph(topology, routing).map_err(ModelError::from)?;
    let (x_p, x_l) = model.normalizer.features(topology, traffic);
    let out = forward(&graph, &x_p, &x_l, &model.params, &model.config, Mode::Eval, 0)?;
    Ok(out.into_iter().map(|z| model.normalizer.denormalize(z)).collect())
}

/// MC-dropout mean and standard deviation in physical units, per sample.
pub fn predict_mc(
    model: &TrainedModel,
    samples: &[Sample],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<McEstimate>>, TrainError> {
    let prepared = prepare(samples, &model.normalizer, model.config.target)?;
    let mut out = Vec::with_capacity(samples.len());
    for (chunk_idx, chunk) in prepared.chunks(PREDICT_BATCH).enumerate() {
        let members: Vec<&PreparedSample> = chunk.iter().collect();
        let batch = Batch::new(&members, &model.config)?;
        let est = mc_predict(
            &batch.graph,
            &batch.x_p,
            &batch.x_l,
            &model.params,
            &model.config,
            n_samples,
            derive_seed(seed, chunk_idx as u64),
        )?;
        let scale = model.normalizer.label_std;
        let physical: Vec<McEstimate> = est
            .into_iter()
            .map(|e| McEstimate { mean: model.normalizer.denormalize(e.mean), std: e.std * scale })
            .collect();
        out.extend(batch.split(&physical));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub model_config: ModelConfig,
    pub normalizer: Normalizer,
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<(), TrainError> {
    let header = ModelHeader { model_config: model.config.clone(), normalizer: model.normalizer };
    Ok(write_checkpoint(path, &header, &model.params.to_arrays())?)
}

pub fn load_model(path: &Path) -> Result<TrainedModel, TrainError> {
    let file = read_checkpoint::<ModelHeader>(path)?;
    let config = file.header.model_config;
    config.validate()?;
    let params = ModelParams::from_arrays(&config, &file.params)?;
    Ok(TrainedModel { config, params, normalizer: file.header.normalizer })
}

/// `step,train_loss,val_mae,val_mape,val_pcc` with a header line.
pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("step,train_loss,val_mae,val_mape,val_pcc\n");
    for r in history {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.train_loss, r.val_mae, r.val_mape, r.val_pcc));
    }
    out
}

/// Four directed links over four nodes with three routed paths that all
/// share at least one link; demands are drawn from `seed`.
pub fn gradcheck_instance(seed: u64) -> Sample {
    let topology = Topology::from_triples(4, &[(0, 1, 10.0), (1, 2, 12.0), (2, 3, 8.0), (1, 3, 9.0)])
        .expect("fixed topology is valid");
    let routing = RoutingScheme::from_link_seqs(&topology, &[vec![0, 1, 2], vec![1, 2], vec![0, 3]])
        .expect("fixed routing is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demand: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.5)).collect();
    let traffic = TrafficMatrix::new(&routing, demand).expect("demands are positive");
    let labels = oracle_labels(&topology, &routing, &traffic).expect("instance is under capacity");
    Sample { topology, routing, traffic, labels }
}

/// Small model used by the gradient check: two rounds keep cross-round
/// gradient paths in play while gradients stay above finite-difference
/// resolution.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig { state_dim: 8, rounds: 2, readout_hidden: 16, ..ModelConfig::default() }
}

/// Central-difference check of the full forward + loss on
/// [`gradcheck_instance`], in eval mode, over `n_coords` sampled parameters.
/// Parameters are drawn uniformly from (-1, 1) rather than from the
/// training init so that deep gradients stay well above rounding noise.
pub fn model_gradcheck(
    config: &ModelConfig,
    seed: u64,
    eps: f64,
    n_coords: usize,
) -> Result<GradCheckReport, TrainError> {
    config.validate()?;
    let sample = gradcheck_instance(seed);
    let samples = std::slice::from_ref(&sample);
    let normalizer = Normalizer::fit(samples, config.target)?;
    let prepared = prepare(samples, &normalizer, config.target)?;
    let batch = Batch::new(&[&prepared[0]], config)?;
    let mut params = ModelParams::init(config, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let theta: Vec<f64> = (0..params.n_scalars()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    params.set_flat(&theta)?;
    let coords = sample_coords(theta.len(), n_coords, derive_seed(seed, 1));
    let l2 = 1e-3;
    let mut failure = None;
    let report = gradient_check(
        |flat| {
            params.set_flat(flat).expect("flat length is fixed");
            match loss_and_grad(&params, &batch, config, l2, Mode::Eval, 0) {
                Ok((value, grads)) => Ok((value, grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect())),
                Err(e) => {
                    failure = Some(e);
                    Err(AutodiffError::InvalidArgument("model evaluation failed".into()))
                }
            }
        },
        &theta,
        eps,
        &coords,
    );
    match (report, failure) {
        (_, Some(e)) => Err(e),
        (r, None) => Ok(r?),
    }
}
