//! Encoder, projection head, parameter initialization and optimizer.

mod adam;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};

use crate::autodiff::{Gradients, Tape, Var};
use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::graph::{normalize, View};
use crate::sparse::CsrMatrix;

/// Encoder architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    /// `Ĥ · prelu(Ĥ X W₁) · W₂`
    Gcn,
    /// `prelu(X W₁) · W₂`, ignoring structure.
    Mlp,
    /// `Ĥ X W₁`; one linear propagation step, used by diagnostics.
    LinearGcn,
}

impl EncoderMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gcn" => Some(Self::Gcn),
            "mlp" => Some(Self::Mlp),
            "linear-gcn" => Some(Self::LinearGcn),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gcn => "gcn",
            Self::Mlp => "mlp",
            Self::LinearGcn => "linear-gcn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub mode: EncoderMode,
    /// `F × h` (or `F × d` for the linear mode).
    pub w1: DenseMat,
    /// `h × d`; absent for the linear mode.
    pub w2: Option<DenseMat>,
    /// Negative-side slope of the PReLU between the layers.
    pub slope: f64,
}

impl EncoderParams {
    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.as_ref().unwrap_or(&self.w1).cols()
    }
}

/// Two-layer MLP `d → d_proj → d_proj` with an ELU in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub w1: DenseMat,
    pub b1: DenseMat,
    pub w2: DenseMat,
    pub b2: DenseMat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub projection: ProjectionParams,
}

fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMat {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DenseMat::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound))
}

/// Glorot-uniform weights, zero biases, PReLU slope 0.25.
///
/// `hidden` is unused by [`EncoderMode::LinearGcn`].
pub fn init_params<R: Rng + ?Sized>(
    mode: EncoderMode,
    input_dim: usize,
    hidden: usize,
    output_dim: usize,
    projection_dim: usize,
    rng: &mut R,
) -> Result<ModelParams> {
    for (name, v) in [
        ("input_dim", input_dim),
        ("hidden_dim", hidden),
        ("output_dim", output_dim),
        ("projection_dim", projection_dim),
    ] {
        if v == 0 {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
    }
    let encoder = match mode {
        EncoderMode::LinearGcn => EncoderParams {
            mode,
            w1: glorot(input_dim, output_dim, rng),
            w2: None,
            slope: 0.25,
        },
        _ => EncoderParams {
            mode,
            w1: glorot(input_dim, hidden, rng),
            w2: Some(glorot(hidden, output_dim, rng)),
            slope: 0.25,
        },
    };
    let projection = ProjectionParams {
        w1: glorot(output_dim, projection_dim, rng),
        b1: DenseMat::zeros(1, projection_dim),
        w2: glorot(projection_dim, projection_dim, rng),
        b2: DenseMat::zeros(1, projection_dim),
    };
    Ok(ModelParams {
        encoder,
        projection,
    })
}

/// Model parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub w1: Var,
    pub w2: Option<Var>,
    pub slope: Var,
    pub proj_w1: Var,
    pub proj_b1: Var,
    pub proj_w2: Var,
    pub proj_b2: Var,
}

impl ModelParams {
    /// Records every parameter as a leaf (`trainable`) or a constant.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let mut put = |m: &DenseMat| {
            if trainable {
                tape.leaf(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let e = &self.encoder;
        let p = &self.projection;
        ModelVars {
            w1: put(&e.w1),
            w2: e.w2.as_ref().map(&mut put),
            slope: put(&DenseMat::scalar(e.slope)),
            proj_w1: put(&p.w1),
            proj_b1: put(&p.b1),
            proj_w2: put(&p.w2),
            proj_b2: put(&p.b2),
        }
    }

    /// Flat views of every parameter block, flagged with whether weight
    /// decay applies to it (weight matrices only).
    pub fn blocks_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let e = &mut self.encoder;
        let p = &mut self.projection;
        let mut out: Vec<(&mut [f64], bool)> = vec![(e.w1.as_mut_slice(), true)];
        if let Some(w2) = e.w2.as_mut() {
            out.push((w2.as_mut_slice(), true));
        }
        out.push((std::slice::from_mut(&mut e.slope), false));
        out.push((p.w1.as_mut_slice(), true));
        out.push((p.b1.as_mut_slice(), false));
        out.push((p.w2.as_mut_slice(), true));
        out.push((p.b2.as_mut_slice(), false));
        out
    }

    /// Read-only counterpart of [`ModelParams::blocks_mut`], same order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let e = &self.encoder;
        let p = &self.projection;
        let mut out: Vec<&[f64]> = vec![e.w1.as_slice()];
        if let Some(w2) = e.w2.as_ref() {
            out.push(w2.as_slice());
        }
        out.push(std::slice::from_ref(&e.slope));
        out.extend([p.w1.as_slice(), p.b1.as_slice(), p.w2.as_slice(), p.b2.as_slice()]);
        out
    }

    pub fn is_finite(&self) -> bool {
        let e = &self.encoder;
        let p = &self.projection;
        e.w1.is_finite()
            && e.w2.as_ref().is_none_or(DenseMat::is_finite)
            && e.slope.is_finite()
            && [&p.w1, &p.b1, &p.w2, &p.b2].iter().all(|m| m.is_finite())
    }
}

impl ModelVars {
    /// Gradients laid out like the parameters they belong to.
    pub fn gradients(&self, grads: &Gradients, like: &ModelParams) -> ModelParams {
        ModelParams {
            encoder: EncoderParams {
                mode: like.encoder.mode,
                w1: grads.get(self.w1),
                w2: self.w2.map(|v| grads.get(v)),
                slope: grads.get(self.slope).get(0, 0),
            },
            projection: ProjectionParams {
                w1: grads.get(self.proj_w1),
                b1: grads.get(self.proj_b1),
                w2: grads.get(self.proj_w2),
                b2: grads.get(self.proj_b2),
            },
        }
    }
}

/// Structure and features of one view, in the form the encoder consumes.
#[derive(Clone, Debug)]
pub enum GraphInput {
    /// Constant normalized adjacency and features in CSR form.
    Sparse {
        propagation: Arc<CsrMatrix>,
        features: Arc<CsrMatrix>,
    },
    /// Dense adjacency and features recorded on the tape, so gradients
    /// reach them; `propagation` is their recorded normalization.
    Dense {
        adjacency: Var,
        propagation: Var,
        features: Var,
    },
}

impl GraphInput {
    pub fn sparse(view: &View) -> Self {
        GraphInput::Sparse {
            propagation: Arc::new(normalize(&view.adjacency).matrix),
            features: Arc::new(CsrMatrix::from_dense(&view.features)),
        }
    }

    /// Records the view's adjacency and features as differentiable leaves.
    pub fn dense(view: &View, tape: &mut Tape) -> Result<Self> {
        let adjacency = tape.leaf(view.adjacency.to_dense());
        let propagation = tape.gcn_norm(adjacency)?;
        let features = tape.leaf(view.features.clone());
        Ok(GraphInput::Dense {
            adjacency,
            propagation,
            features,
        })
    }

    fn features_times(&self, w: Var, tape: &mut Tape) -> Result<Var> {
        match self {
            GraphInput::Sparse { features, .. } => tape.spmm(features.clone(), w),
            GraphInput::Dense { features, .. } => tape.matmul(*features, w),
        }
    }

    fn propagate(&self, h: Var, tape: &mut Tape) -> Result<Var> {
        match self {
            GraphInput::Sparse { propagation, .. } => tape.spmm(propagation.clone(), h),
            GraphInput::Dense { propagation, .. } => tape.matmul_sparse_lhs(*propagation, h),
        }
    }
}

/// Node embeddings `Z` for one view.
pub fn encode(
    params: &ModelParams,
    vars: &ModelVars,
    input: &GraphInput,
    tape: &mut Tape,
) -> Result<Var> {
    let xw = input.features_times(vars.w1, tape)?;
    match params.encoder.mode {
        EncoderMode::LinearGcn => input.propagate(xw, tape),
        mode => {
            let w2 = vars
                .w2
                .ok_or_else(|| Error::invalid("two-layer encoder without a second weight"))?;
            let h = match mode {
                EncoderMode::Gcn => input.propagate(xw, tape)?,
                _ => xw,
            };
            let h = tape.prelu(h, vars.slope)?;
            let z = tape.matmul(h, w2)?;
            match mode {
                EncoderMode::Gcn => input.propagate(z, tape),
                _ => Ok(z),
            }
        }
    }
}

/// The projection head `g`.
pub fn project(vars: &ModelVars, z: Var, tape: &mut Tape) -> Result<Var> {
    let h = tape.matmul(z, vars.proj_w1)?;
    let h = tape.add_row(h, vars.proj_b1)?;
    let h = tape.elu(h)?;
    let h = tape.matmul(h, vars.proj_w2)?;
    tape.add_row(h, vars.proj_b2)
}

/// Embeddings of `view` under frozen parameters.
pub fn embed(params: &ModelParams, view: &View) -> Result<DenseMat> {
    if view.num_features() != params.encoder.input_dim() {
        return Err(Error::Shape(format!(
            "view has {} features, encoder expects {}",
            view.num_features(),
            params.encoder.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let z = encode(params, &vars, &GraphInput::sparse(view), &mut tape)?;
    Ok(tape.value(z).clone())
}

#[cfg(test)]
mod tests;
