//! The path/link message-passing network.
//!
//! Each round runs three phases over a [`HeteroGraph`]:
//!
//! 1. every path runs its recurrent cell over the states of its links in
//!    traversal order; the state right after consuming link `l` is the
//!    message `m[p,l]` and the final state is the new primary state;
//! 2. every path updates its secondary state with a GRU whose input is the
//!    mean of its neighbors' new primary states (zero when it has none);
//! 3. every link updates its state with a GRU whose input is
//!    `Σ_p (1-λ)·m[p,l] + λ·m'[p]`, `m'[p]` being the new secondary state.
//!
//! The readout is a SELU hidden layer followed by a linear unit over the
//! concatenated final primary and secondary path states.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::checkpoint::NamedArray;
use crate::autodiff::{
    dense, gru_step, rnn_step, Activation, AutodiffError, DenseParams, DenseVars, GruCellParams, GruVars, ParamMut,
    ParamRef, RnnCellParams, RnnVars, Tape, Tensor, Var,
};
use crate::derive_seed;
use crate::netgraph::{GraphError, HeteroGraph};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("parameters do not match the model config: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Delay,
    Jitter,
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Target::Delay => "delay",
            Target::Jitter => "jitter",
        })
    }
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delay" => Ok(Target::Delay),
            "jitter" => Ok(Target::Jitter),
            other => Err(format!("unknown target '{other}' (expected delay or jitter)")),
        }
    }
}

/// Cell used for the path update of phase 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathCellKind {
    Gru,
    Rnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub state_dim: usize,
    /// Number of message-passing rounds.
    pub rounds: usize,
    /// Weight of the secondary message in the link update.
    pub lambda: f64,
    pub readout_hidden: usize,
    pub dropout_p: f64,
    pub secondary_enabled: bool,
    pub include_self_in_neighbors: bool,
    pub target: Target,
    pub path_cell: PathCellKind,
    /// One parameter set for all rounds instead of one per round.
    pub share_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 32,
            rounds: 8,
            lambda: 0.1,
            readout_hidden: 256,
            dropout_p: 0.5,
            secondary_enabled: true,
            include_self_in_neighbors: false,
            target: Target::Delay,
            path_cell: PathCellKind::Gru,
            share_weights: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.state_dim == 0 {
            return bad("state_dim must be at least 1".into());
        }
        if self.readout_hidden == 0 {
            return bad("readout_hidden must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Width of the readout input.
    pub fn readout_input_dim(&self) -> usize {
        if self.secondary_enabled {
            2 * self.state_dim
        } else {
            self.state_dim
        }
    }

    fn n_param_rounds(&self) -> usize {
        if self.share_weights {
            1
        } else {
            self.rounds.max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathCell {
    Gru(GruCellParams),
    Rnn(RnnCellParams),
}

/// Cells used in one round (or in every round when weights are shared).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundParams {
    pub path_cell: PathCell,
    pub secondary: GruCellParams,
    pub link: GruCellParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub rounds: Vec<RoundParams>,
    pub readout_hidden: DenseParams,
    pub readout_out: DenseParams,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.state_dim;
        let rounds = (0..config.n_param_rounds())
            .map(|_| RoundParams {
                path_cell: match config.path_cell {
                    PathCellKind::Gru => PathCell::Gru(GruCellParams::init(d, d, &mut rng)),
                    PathCellKind::Rnn => PathCell::Rnn(RnnCellParams::init(d, d, &mut rng)),
                },
                secondary: GruCellParams::init(d, d, &mut rng),
                link: GruCellParams::init(d, d, &mut rng),
            })
            .collect();
        let readout_hidden =
            DenseParams::init(config.readout_input_dim(), config.readout_hidden, Activation::Selu, &mut rng);
        let readout_out = DenseParams::init(config.readout_hidden, 1, Activation::Linear, &mut rng);
        Ok(Self { rounds, readout_hidden, readout_out })
    }

    /// Every parameter tensor in a fixed order; tape registration, optimizer
    /// state and checkpoints all use this order.
    pub fn named(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (r, round) in self.rounds.iter().enumerate() {
            match &round.path_cell {
                PathCell::Gru(p) => out.extend(p.named(&format!("round{r}.path_gru"))),
                PathCell::Rnn(p) => out.extend(p.named(&format!("round{r}.path_rnn"))),
            }
            out.extend(round.secondary.named(&format!("round{r}.secondary_gru")));
            out.extend(round.link.named(&format!("round{r}.link_gru")));
        }
        out.extend(self.readout_hidden.named("readout.hidden"));
        out.extend(self.readout_out.named("readout.out"));
        out
    }

    pub fn named_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (r, round) in self.rounds.iter_mut().enumerate() {
            match &mut round.path_cell {
                PathCell::Gru(p) => out.extend(p.named_mut(&format!("round{r}.path_gru"))),
                PathCell::Rnn(p) => out.extend(p.named_mut(&format!("round{r}.path_rnn"))),
            }
            out.extend(round.secondary.named_mut(&format!("round{r}.secondary_gru")));
            out.extend(round.link.named_mut(&format!("round{r}.link_gru")));
        }
        out.extend(self.readout_hidden.named_mut("readout.hidden"));
        out.extend(self.readout_out.named_mut("readout.out"));
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.named().iter().map(|p| p.tensor.len()).sum()
    }

    /// Sum of squared weights; biases are excluded.
    pub fn weight_sum_squares(&self) -> f64 {
        self.named().iter().filter(|p| p.is_weight).map(|p| p.tensor.sum_squares()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.named().iter().flat_map(|p| p.tensor.as_slice().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.n_scalars() {
            return Err(ModelError::SizeMismatch(format!("{} values for {} parameters", flat.len(), self.n_scalars())));
        }
        let mut at = 0;
        for p in self.named_mut() {
            let n = p.tensor.len();
            p.tensor.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        self.named().iter().map(|p| NamedArray::from_tensor(p.name.clone(), p.tensor)).collect()
    }

    /// Rebuilds parameters for `config` from checkpoint arrays; names and
    /// shapes must match exactly.
    pub fn from_arrays(config: &ModelConfig, arrays: &[NamedArray]) -> Result<Self, ModelError> {
        let mut params = Self::init(config, 0)?;
        let slots = params.named_mut();
        if slots.len() != arrays.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "config expects {} arrays, checkpoint has {}",
                slots.len(),
                arrays.len()
            )));
        }
        for (slot, arr) in slots.into_iter().zip(arrays) {
            if slot.name != arr.name || [slot.tensor.rows(), slot.tensor.cols()] != arr.shape {
                return Err(ModelError::ConfigMismatch(format!(
                    "expected {} {:?}, found {} {:?}",
                    slot.name,
                    slot.tensor.shape(),
                    arr.name,
                    arr.shape
                )));
            }
            *slot.tensor = arr
                .to_tensor()
                .map_err(|e| ModelError::ConfigMismatch(e.to_string()))?;
        }
        Ok(params)
    }

    /// Registers every parameter on `tape`, in [`ModelParams::named`] order.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let rounds = self
            .rounds
            .iter()
            .map(|r| RoundVars {
                path_cell: match &r.path_cell {
                    PathCell::Gru(p) => PathCellVars::Gru(p.bind(tape)),
                    PathCell::Rnn(p) => PathCellVars::Rnn(p.bind(tape)),
                },
                secondary: r.secondary.bind(tape),
                link: r.link.bind(tape),
            })
            .collect();
        let readout_hidden = self.readout_hidden.bind(tape);
        let readout_out = self.readout_out.bind(tape);
        ModelVars { rounds, readout_hidden, readout_out }
    }

    fn check_against(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = Self::init(config, 0)?;
        let shapes = |p: &Self| p.named().iter().map(|r| (r.name.clone(), r.tensor.shape())).collect::<Vec<_>>();
        if shapes(self) != shapes(&expected) {
            return Err(ModelError::ConfigMismatch("parameter layout differs from config".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum PathCellVars {
    Gru(GruVars),
    Rnn(RnnVars),
}

#[derive(Debug, Clone)]
struct RoundVars {
    path_cell: PathCellVars,
    secondary: GruVars,
    link: GruVars,
}

/// Tape handles for a bound [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    rounds: Vec<RoundVars>,
    readout_hidden: DenseVars,
    readout_out: DenseVars,
}

impl ModelVars {
    fn round(&self, t: usize) -> &RoundVars {
        &self.rounds[t.min(self.rounds.len() - 1)]
    }
}

/// Link, primary path and secondary path states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    pub h_link: Tensor,
    pub h_path: Tensor,
    pub h_path_secondary: Tensor,
}

/// Places each (already normalized) feature in the first state component and
/// zeros elsewhere. Both path states start from the path feature.
pub fn init_states(graph: &HeteroGraph, x_p: &[f64], x_l: &[f64], config: &ModelConfig) -> Result<StateSet, ModelError> {
    if x_p.len() != graph.n_paths || x_l.len() != graph.n_links {
        return Err(ModelError::SizeMismatch(format!(
            "{} path and {} link features for a graph with {} paths and {} links",
            x_p.len(),
            x_l.len(),
            graph.n_paths,
            graph.n_links
        )));
    }
    let d = config.state_dim;
    let place = |xs: &[f64]| -> Result<Tensor, ModelError> {
        let mut t = Tensor::zeros(xs.len(), d);
        for (r, &x) in xs.iter().enumerate() {
            t.row_mut(r)[0] = x;
        }
        if !t.is_finite() {
            return Err(ModelError::Autodiff(AutodiffError::NonFinite("input features".into())));
        }
        Ok(t)
    };
    let h_path = place(x_p)?;
    Ok(StateSet { h_link: place(x_l)?, h_path_secondary: h_path.clone(), h_path })
}

struct Position {
    active: Arc<[usize]>,
    links: Arc<[usize]>,
    all_paths: bool,
}

/// Index lists derived once per graph and reused by every round.
pub struct GraphPlan {
    n_paths: usize,
    n_links: usize,
    positions: Vec<Position>,
    /// Canonical incidence order: links ascending, then the link's paths in
    /// `link_paths` order. Entry `k` gives the row of that incidence among
    /// the phase-1 messages stacked position by position.
    incidence_rows: Arc<[usize]>,
    incidence_links: Arc<[usize]>,
    incidence_paths: Arc<[usize]>,
    incidences: Vec<(usize, usize)>,
    neighbor_src: Arc<[usize]>,
    neighbor_group: Arc<[usize]>,
}

impl GraphPlan {
    pub fn new(graph: &HeteroGraph, include_self: bool) -> Self {
        let max_len = graph.max_path_len();
        let mut positions = Vec::with_capacity(max_len);
        let mut row_of: Vec<Vec<usize>> = graph.path_links.iter().map(|s| vec![0; s.len()]).collect();
        let mut offset = 0;
        for i in 0..max_len {
            let active: Vec<usize> = (0..graph.n_paths).filter(|&p| graph.path_links[p].len() > i).collect();
            let links: Vec<usize> = active.iter().map(|&p| graph.path_links[p][i]).collect();
            for (rank, &p) in active.iter().enumerate() {
                row_of[p][i] = offset + rank;
            }
            offset += active.len();
            positions.push(Position {
                all_paths: active.len() == graph.n_paths,
                active: active.into(),
                links: links.into(),
            });
        }

        let mut incidence_rows = Vec::with_capacity(offset);
        let mut incidence_links = Vec::with_capacity(offset);
        let mut incidences = Vec::with_capacity(offset);
        for (l, entries) in graph.link_paths.iter().enumerate() {
            for &(p, i) in entries {
                incidence_rows.push(row_of[p][i]);
                incidence_links.push(l);
                incidences.push((p, l));
            }
        }
        let incidence_paths: Vec<usize> = incidences.iter().map(|&(p, _)| p).collect();

        let mut neighbor_src = Vec::new();
        let mut neighbor_group = Vec::new();
        for (p, nbrs) in graph.path_neighbors.iter().enumerate() {
            let mut members = nbrs.clone();
            if include_self {
                let at = members.partition_point(|&q| q < p);
                members.insert(at, p);
            }
            neighbor_group.extend(std::iter::repeat_n(p, members.len()));
            neighbor_src.extend(members);
        }

        Self {
            n_paths: graph.n_paths,
            n_links: graph.n_links,
            positions,
            incidence_rows: incidence_rows.into(),
            incidence_links: incidence_links.into(),
            incidence_paths: incidence_paths.into(),
            incidences,
            neighbor_src: neighbor_src.into(),
            neighbor_group: neighbor_group.into(),
        }
    }
}

/// Intermediate values of one round, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    /// `(path, link)` of each row of `messages`, in canonical order.
    pub incidences: Vec<(usize, usize)>,
    /// Phase-1 messages `m[p,l]`.
    pub messages: Tensor,
    /// Phase-2 GRU inputs (neighbor means), one row per path.
    pub neighbor_means: Option<Tensor>,
    /// Phase-3 GRU inputs, one row per link.
    pub link_inputs: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct TapeStates {
    h_link: Var,
    h_path: Var,
    h_path_secondary: Var,
}

fn path_cell_step(tape: &mut Tape, cell: &PathCellVars, state: Var, input: Var) -> Result<Var, AutodiffError> {
    match cell {
        PathCellVars::Gru(p) => gru_step(tape, p, state, input),
        PathCellVars::Rnn(p) => rnn_step(tape, p, state, input),
    }
}

fn round_on_tape(
    tape: &mut Tape,
    vars: &RoundVars,
    plan: &GraphPlan,
    states: TapeStates,
    config: &ModelConfig,
    trace: Option<&mut Vec<RoundTrace>>,
) -> Result<TapeStates, ModelError> {
    let d = config.state_dim;

    // Phase 1: each path consumes its links in order.
    let mut h_path = states.h_path;
    let mut step_outputs = Vec::with_capacity(plan.positions.len());
    for pos in &plan.positions {
        let links = tape.gather_rows(states.h_link, pos.links.clone())?;
        let current = if pos.all_paths { h_path } else { tape.gather_rows(h_path, pos.active.clone())? };
        let next = path_cell_step(tape, &vars.path_cell, current, links)?;
        h_path = if pos.all_paths { next } else { tape.set_rows(h_path, pos.active.clone(), next)? };
        step_outputs.push(next);
    }
    let stacked = tape.concat_rows(&step_outputs)?;
    let messages = tape.gather_rows(stacked, plan.incidence_rows.clone())?;

    // Phase 2: secondary state from the mean of neighbor primaries.
    let mut neighbor_mean = None;
    let h_path_secondary = if config.secondary_enabled {
        let mean = if plan.neighbor_src.is_empty() {
            tape.constant(Tensor::zeros(plan.n_paths, d))
        } else {
            let nbr = tape.gather_rows(h_path, plan.neighbor_src.clone())?;
            tape.mean_rows_by_group(nbr, plan.neighbor_group.clone(), plan.n_paths)?
        };
        neighbor_mean = Some(mean);
        gru_step(tape, &vars.secondary, states.h_path_secondary, mean)?
    } else {
        states.h_path_secondary
    };

    // Phase 3: links from fused path messages.
    let fused = if config.secondary_enabled {
        let primary = tape.scale(messages, 1.0 - config.lambda);
        let sec = tape.gather_rows(h_path_secondary, plan.incidence_paths.clone())?;
        let sec = tape.scale(sec, config.lambda);
        tape.add(primary, sec)?
    } else {
        messages
    };
    let link_input = tape.sum_rows_by_group(fused, plan.incidence_links.clone(), plan.n_links)?;
    let h_link = gru_step(tape, &vars.link, states.h_link, link_input)?;

    if let Some(trace) = trace {
        trace.push(RoundTrace {
            incidences: plan.incidences.clone(),
            messages: tape.value(messages).clone(),
            neighbor_means: neighbor_mean.map(|v| tape.value(v).clone()),
            link_inputs: tape.value(link_input).clone(),
        });
    }
    Ok(TapeStates { h_link, h_path, h_path_secondary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph features ready for a forward pass.
pub struct ForwardInput<'a> {
    pub graph: &'a HeteroGraph,
    pub plan: &'a GraphPlan,
    pub x_p: &'a [f64],
    pub x_l: &'a [f64],
}

/// Records the full forward pass on `tape` and returns the `n_paths x 1`
/// prediction. Dropout masks come from `seed` in train mode.
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    input: &ForwardInput<'_>,
    config: &ModelConfig,
    mode: Mode,
    seed: u64,
    mut trace: Option<&mut Vec<RoundTrace>>,
) -> Result<Var, ModelError> {
    let init = init_states(input.graph, input.x_p, input.x_l, config)?;
    let mut states = TapeStates {
        h_link: tape.constant(init.h_link),
        h_path: tape.constant(init.h_path),
        h_path_secondary: tape.constant(init.h_path_secondary),
    };
    for t in 0..config.rounds {
        states = round_on_tape(tape, vars.round(t), input.plan, states, config, trace.as_deref_mut())?;
    }
    readout(tape, vars, states, config, mode, seed)
}

fn readout(
    tape: &mut Tape,
    vars: &ModelVars,
    states: TapeStates,
    config: &ModelConfig,
    mode: Mode,
    seed: u64,
) -> Result<Var, ModelError> {
    let features = if config.secondary_enabled {
        tape.concat_cols(states.h_path, states.h_path_secondary)?
    } else {
        states.h_path
    };
    let hidden = dense(tape, &vars.readout_hidden, features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = tape.dropout(hidden, config.dropout_p, mode == Mode::Train, &mut rng)?;
    Ok(dense(tape, &vars.readout_out, hidden)?)
}

/// Runs one round outside of training and returns the new states together
/// with the round's intermediate values.
pub fn message_passing_round(
    graph: &HeteroGraph,
    states: &StateSet,
    round: &RoundParams,
    config: &ModelConfig,
) -> Result<(StateSet, RoundTrace), ModelError> {
    config.validate()?;
    let d = config.state_dim;
    let shapes_ok = states.h_link.shape() == (graph.n_links, d)
        && states.h_path.shape() == (graph.n_paths, d)
        && states.h_path_secondary.shape() == (graph.n_paths, d);
    if !shapes_ok {
        return Err(ModelError::SizeMismatch("state shapes do not match the graph".into()));
    }
    let plan = GraphPlan::new(graph, config.include_self_in_neighbors);
    let mut tape = Tape::new();
    let vars = RoundVars {
        path_cell: match &round.path_cell {
            PathCell::Gru(p) => PathCellVars::Gru(p.bind(&mut tape)),
            PathCell::Rnn(p) => PathCellVars::Rnn(p.bind(&mut tape)),
        },
        secondary: round.secondary.bind(&mut tape),
        link: round.link.bind(&mut tape),
    };
    let start = TapeStates {
        h_link: tape.constant(states.h_link.clone()),
        h_path: tape.constant(states.h_path.clone()),
        h_path_secondary: tape.constant(states.h_path_secondary.clone()),
    };
    let mut trace = Vec::with_capacity(1);
    let out = round_on_tape(&mut tape, &vars, &plan, start, config, Some(&mut trace))?;
    let next = StateSet {
        h_link: tape.value(out.h_link).clone(),
        h_path: tape.value(out.h_path).clone(),
        h_path_secondary: tape.value(out.h_path_secondary).clone(),
    };
    Ok((next, trace.remove(0)))
}

/// Per-path predictions (in normalized label units).
pub fn forward(
    graph: &HeteroGraph,
    x_p: &[f64],
    x_l: &[f64],
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    seed: u64,
) -> Result<Vec<f64>, ModelError> {
    Ok(forward_traced(graph, x_p, x_l, params, config, mode, seed)?.0)
}

/// [`forward`] that also returns every round's intermediate values.
pub fn forward_traced(
    graph: &HeteroGraph,
    x_p: &[f64],
    x_l: &[f64],
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    seed: u64,
) -> Result<(Vec<f64>, Vec<RoundTrace>), ModelError> {
    config.validate()?;
    params.check_against(config)?;
    let plan = GraphPlan::new(graph, config.include_self_in_neighbors);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let mut trace = Vec::with_capacity(config.rounds);
    let input = ForwardInput { graph, plan: &plan, x_p, x_l };
    let out = forward_on_tape(&mut tape, &vars, &input, config, mode, seed, Some(&mut trace))?;
    Ok((tape.value(out).as_slice().to_vec(), trace))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std: f64,
}

/// Monte-Carlo dropout: `n_samples` train-mode passes with seeds derived
/// from `seed`, summarized per path by the sample mean and the sample
/// standard deviation (zero for a single sample).
pub fn mc_predict(
    graph: &HeteroGraph,
    x_p: &[f64],
    x_l: &[f64],
    params: &ModelParams,
    config: &ModelConfig,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate>, ModelError> {
    if n_samples == 0 {
        return Err(ModelError::InvalidConfig("n_samples must be at least 1".into()));
    }
    let runs = (0..n_samples)
        .map(|i| forward(graph, x_p, x_l, params, config, Mode::Train, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let n = n_samples as f64;
    Ok((0..graph.n_paths)
        .map(|p| {
            let first = runs[0][p];
            if runs.iter().all(|r| r[p] == first) {
                return McEstimate { mean: first, std: 0.0 };
            }
            let mean = runs.iter().map(|r| r[p]).sum::<f64>() / n;
            let std = if n_samples > 1 {
                (runs.iter().map(|r| (r[p] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            McEstimate { mean, std }
        })
        .collect())
}
