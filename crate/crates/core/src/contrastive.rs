//! The symmetric node-level contrastive loss and the three-term cross-view
//! objective built from it.
//!
//! Losses are returned with the sign that makes them minimizable: each
//! anchor contributes `−log(e^{θ⁺/τ} / (e^{θ⁺/τ} + Σ inter negatives + Σ intra
//! negatives))`, where `θ` is the cosine similarity of projected embeddings.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{project, ModelVars};

/// Which of the two stochastic views anchors the auxiliary loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxAnchor {
    #[default]
    View1,
    View2,
}

/// Scalar values of the objective's terms. Terms whose weight is zero are
/// skipped and reported as `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_aug: f64,
    pub l_adv: Option<f64>,
    pub l_sp: Option<f64>,
    pub total: f64,
}

/// The objective's terms as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_aug: Var,
    pub l_adv: Option<Var>,
    pub l_sp: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            l_aug: tape.scalar(self.l_aug),
            l_adv: self.l_adv.map(|v| tape.scalar(v)),
            l_sp: self.l_sp.map(|v| tape.scalar(v)),
            total: tape.scalar(self.total),
        }
    }
}

/// Sum over anchors `i` of the loss with `a_i` as anchor and `b_i` as its
/// positive; `a`, `b` hold unit rows.
fn one_direction(a: Var, b: Var, tau: f64, tape: &mut Tape) -> Result<Var> {
    let a_scaled = tape.scale(a, 1.0 / tau)?;
    let inter = tape.matmul_nt(a_scaled, b)?;
    let intra = tape.matmul_nt(a_scaled, a)?;
    let log_denominator = tape.logsumexp_rows(&[(inter, false), (intra, true)])?;
    let positive = tape.diag(inter)?;
    let per_anchor = tape.sub(log_denominator, positive)?;
    tape.sum(per_anchor)
}

/// Loss between two sets of already projected embeddings (`g(Z)` rows).
pub fn pairwise_loss_projected(h1: Var, h2: Var, tau: f64, tape: &mut Tape) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (s1, s2) = (tape.value(h1).shape(), tape.value(h2).shape());
    if s1 != s2 {
        return Err(Error::Shape(format!("views disagree: {s1:?} vs {s2:?}")));
    }
    let n = s1.0;
    if n < 2 {
        return Err(Error::invalid("contrastive loss needs at least two nodes"));
    }
    let u1 = tape.row_l2_normalize(h1)?;
    let u2 = tape.row_l2_normalize(h2)?;
    let forward = one_direction(u1, u2, tau, tape)?;
    let backward = one_direction(u2, u1, tau, tape)?;
    let both = tape.add(forward, backward)?;
    tape.scale(both, 1.0 / (2 * n) as f64)
}

/// Loss between two embedding matrices through the shared projection head.
pub fn pairwise_loss(z1: Var, z2: Var, vars: &ModelVars, tau: f64, tape: &mut Tape) -> Result<Var> {
    let h1 = project(vars, z1, tape)?;
    let h2 = project(vars, z2, tape)?;
    pairwise_loss_projected(h1, h2, tau, tape)
}

/// Weights and options of the cross-view objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub anchor: AuxAnchor,
}

/// `L(Z¹,Z²) + λ₁·L(Z_anchor, Z_adv) + λ₂·L(Z_anchor, Z_sp)`.
///
/// A term is evaluated only when its weight is positive; its view must then
/// be supplied. Each view is projected once and shared across terms.
pub fn cross_view_loss(
    z1: Var,
    z2: Var,
    z_adv: Option<Var>,
    z_sp: Option<Var>,
    vars: &ModelVars,
    weights: ObjectiveWeights,
    tape: &mut Tape,
) -> Result<LossVars> {
    let ObjectiveWeights {
        tau,
        lambda1,
        lambda2,
        anchor,
    } = weights;
    for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("{name} must be >= 0, got {l}")));
        }
    }
    let h1 = project(vars, z1, tape)?;
    let h2 = project(vars, z2, tape)?;
    let l_aug = pairwise_loss_projected(h1, h2, tau, tape)?;
    let h_anchor = match anchor {
        AuxAnchor::View1 => h1,
        AuxAnchor::View2 => h2,
    };
    let aux = |weight: f64, z: Option<Var>, name: &str, tape: &mut Tape| -> Result<Option<Var>> {
        if weight == 0.0 {
            return Ok(None);
        }
        let z = z.ok_or_else(|| Error::invalid(format!("{name} view required for a positive weight")))?;
        let h = project(vars, z, tape)?;
        pairwise_loss_projected(h_anchor, h, tau, tape).map(Some)
    };
    let l_adv = aux(lambda1, z_adv, "adversarial", tape)?;
    let l_sp = aux(lambda2, z_sp, "similarity-preserving", tape)?;
    let mut total = l_aug;
    for (weight, term) in [(lambda1, l_adv), (lambda2, l_sp)] {
        if let Some(term) = term {
            let weighted = tape.scale(term, weight)?;
            total = tape.add(total, weighted)?;
        }
    }
    Ok(LossVars {
        l_aug,
        l_adv,
        l_sp,
        total,
    })
}
