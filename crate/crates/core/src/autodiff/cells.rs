//! Parameter blocks for the recurrent cells and dense layers, and their
//! forward passes on a [`Tape`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// A parameter tensor together with its name and whether it counts as a
/// weight (L2-penalized) or a bias.
pub struct ParamRef<'a> {
    pub name: String,
    pub tensor: &'a Tensor,
    pub is_weight: bool,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub tensor: &'a mut Tensor,
    pub is_weight: bool,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, `fan_in` being the row count.
pub fn init_weight<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Gated recurrent unit with the reset gate applied to the state before the
/// hidden-to-hidden product:
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// h~ = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

const GRU_NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

impl GruCellParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, state_dim: usize, rng: &mut R) -> Self {
        Self {
            w_z: init_weight(input_dim, state_dim, rng),
            w_r: init_weight(input_dim, state_dim, rng),
            w_h: init_weight(input_dim, state_dim, rng),
            u_z: init_weight(state_dim, state_dim, rng),
            u_r: init_weight(state_dim, state_dim, rng),
            u_h: init_weight(state_dim, state_dim, rng),
            b_z: Tensor::zeros(1, state_dim),
            b_r: Tensor::zeros(1, state_dim),
            b_h: Tensor::zeros(1, state_dim),
        }
    }

    pub fn zeros(input_dim: usize, state_dim: usize) -> Self {
        let w = Tensor::zeros(input_dim, state_dim);
        let u = Tensor::zeros(state_dim, state_dim);
        let b = Tensor::zeros(1, state_dim);
        Self {
            w_z: w.clone(),
            w_r: w.clone(),
            w_h: w,
            u_z: u.clone(),
            u_r: u.clone(),
            u_h: u,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.u_z.cols()
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn named(&self, prefix: &str) -> Vec<ParamRef<'_>> {
        GRU_NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| ParamRef { name: format!("{prefix}.{n}"), tensor: t, is_weight: !n.starts_with('b') })
            .collect()
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_>> {
        GRU_NAMES
            .iter()
            .zip(self.tensors_mut())
            .map(|(n, t)| ParamMut { name: format!("{prefix}.{n}"), tensor: t, is_weight: !n.starts_with('b') })
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> GruVars {
        let [w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h] = self.tensors().map(|t| tape.param(t));
        GruVars { w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    w_z: Var,
    w_r: Var,
    w_h: Var,
    u_z: Var,
    u_r: Var,
    u_h: Var,
    b_z: Var,
    b_r: Var,
    b_h: Var,
}

fn affine(tape: &mut Tape, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var, AutodiffError> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let sum = tape.add(xw, hu)?;
    tape.add_row(sum, b)
}

/// One GRU update of every row of `state` with the matching row of `input`.
pub fn gru_step(tape: &mut Tape, p: &GruVars, state: Var, input: Var) -> Result<Var, AutodiffError> {
    if tape.shape(state).0 != tape.shape(input).0 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "gru_step: state {:?} vs input {:?}",
            tape.shape(state),
            tape.shape(input)
        )));
    }
    let z_pre = affine(tape, input, p.w_z, state, p.u_z, p.b_z)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = affine(tape, input, p.w_r, state, p.u_r, p.b_r)?;
    let r = tape.sigmoid(r_pre);
    let reset = tape.mul(r, state)?;
    let cand_pre = affine(tape, input, p.w_h, reset, p.u_h, p.b_h)?;
    let cand = tape.tanh(cand_pre);
    // (1 - z)·h + z·h~ written as h + z·(h~ - h)
    let delta = tape.sub(cand, state)?;
    let step = tape.mul(z, delta)?;
    tape.add(state, step)
}

/// Elman cell `h' = tanh(x·W + h·U + b)`, kept for the path-update ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCellParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl RnnCellParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, state_dim: usize, rng: &mut R) -> Self {
        Self {
            w: init_weight(input_dim, state_dim, rng),
            u: init_weight(state_dim, state_dim, rng),
            b: Tensor::zeros(1, state_dim),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<ParamRef<'_>> {
        vec![
            ParamRef { name: format!("{prefix}.w"), tensor: &self.w, is_weight: true },
            ParamRef { name: format!("{prefix}.u"), tensor: &self.u, is_weight: true },
            ParamRef { name: format!("{prefix}.b"), tensor: &self.b, is_weight: false },
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_>> {
        vec![
            ParamMut { name: format!("{prefix}.w"), tensor: &mut self.w, is_weight: true },
            ParamMut { name: format!("{prefix}.u"), tensor: &mut self.u, is_weight: true },
            ParamMut { name: format!("{prefix}.b"), tensor: &mut self.b, is_weight: false },
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> RnnVars {
        RnnVars { w: tape.param(&self.w), u: tape.param(&self.u), b: tape.param(&self.b) }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RnnVars {
    w: Var,
    u: Var,
    b: Var,
}

pub fn rnn_step(tape: &mut Tape, p: &RnnVars, state: Var, input: Var) -> Result<Var, AutodiffError> {
    let pre = affine(tape, input, p.w, state, p.u, p.b)?;
    Ok(tape.tanh(pre))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Selu,
    Linear,
}

/// Fully connected layer `act(x·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: init_weight(input_dim, output_dim, rng),
            bias: Tensor::zeros(1, output_dim),
            activation,
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<ParamRef<'_>> {
        vec![
            ParamRef { name: format!("{prefix}.weight"), tensor: &self.weight, is_weight: true },
            ParamRef { name: format!("{prefix}.bias"), tensor: &self.bias, is_weight: false },
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_>> {
        vec![
            ParamMut { name: format!("{prefix}.weight"), tensor: &mut self.weight, is_weight: true },
            ParamMut { name: format!("{prefix}.bias"), tensor: &mut self.bias, is_weight: false },
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> DenseVars {
        DenseVars {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    weight: Var,
    bias: Var,
    activation: Activation,
}

pub fn dense(tape: &mut Tape, p: &DenseVars, x: Var) -> Result<Var, AutodiffError> {
    let xw = tape.matmul(x, p.weight)?;
    let pre = tape.add_row(xw, p.bias)?;
    Ok(match p.activation {
        Activation::Selu => tape.selu(pre),
        Activation::Linear => pre,
    })
}
