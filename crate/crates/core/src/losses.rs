//! Objective terms: feature distillation, correlation alignment, exploration,
//! and their weighted sum.
//!
//! Every term is a scalar node on a [`Graph`], so the combined objective can be
//! differentiated in one backward pass. Batch reductions are means, which keeps
//! the loss weights independent of the batch size.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::LossError;
use crate::scalar::Scalar;

/// Rows with an L2 norm at or below this value cannot be normalised.
pub const NORM_EPS: f64 = 1e-12;

/// Distance used by the exploration term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exploration {
    /// Negative squared L2 distance between paired rows.
    #[default]
    L2,
    /// Negative L1 distance between L2-normalised rows.
    NormL1,
}

impl std::str::FromStr for Exploration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" => Ok(Exploration::L2),
            "norm-l1" => Ok(Exploration::NormL1),
            other => Err(format!(
                "unknown exploration distance `{other}` (expected l2 or norm-l1)"
            )),
        }
    }
}

impl std::fmt::Display for Exploration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Exploration::L2 => "l2",
            Exploration::NormL1 => "norm-l1",
        })
    }
}

/// Trade-off weights of the distillation, alignment and exploration terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub exploration: Exploration,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            exploration: Exploration::NormL1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        exploration: Exploration::L2,
    };

    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(LossError::BadWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Mean squared difference between student features and (constant) teacher
/// features. The teacher enters the graph as a constant, so no gradient can
/// reach it.
pub fn mse_distill<S: Scalar>(g: &mut Graph<S>, student: Var, teacher: &Tensor<S>) -> Result<Var, LossError> {
    let t = g.constant(teacher.clone());
    let diff = g.sub(student, t)?;
    let sq = g.square(diff)?;
    Ok(g.mean(sq)?)
}

/// Unbiased covariance `1/(n-1) · (XᵀX - (1/n)(1ᵀX)ᵀ(1ᵀX))` of `x: [n×d]`.
pub fn covariance<S: Scalar>(g: &mut Graph<S>, x: Var) -> Result<Var, LossError> {
    let n = g.shape(x)[0];
    if g.shape(x).len() != 2 || n < 2 {
        return Err(LossError::TooFewRows(n));
    }
    let xt = g.transpose(x)?;
    let gram = g.matmul(xt, x)?;
    let sums = g.col_sum(x)?;
    let sums_t = g.transpose(sums)?;
    let outer = g.matmul(sums_t, sums)?;
    let centred = g.scale(outer, S::one() / S::count(n))?;
    let scatter = g.sub(gram, centred)?;
    Ok(g.scale(scatter, S::one() / S::count(n - 1))?)
}

/// Row indices of each domain, keyed by domain id in ascending order.
pub fn group_by_domain(domains: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &d) in domains.iter().enumerate() {
        groups.entry(d).or_default().push(row);
    }
    groups
}

/// Mean over unordered domain pairs of `‖Cⁱ - Cʲ‖²_F`, where `Cⁱ` is the
/// covariance of the rows of `features` belonging to domain `i`.
pub fn coral_loss<S: Scalar>(g: &mut Graph<S>, features: Var, domains: &[usize]) -> Result<Var, LossError> {
    let rows = g.shape(features)[0];
    if domains.len() != rows {
        return Err(LossError::DomainCount {
            ids: domains.len(),
            rows,
        });
    }
    let groups = group_by_domain(domains);
    if groups.len() < 2 {
        return Err(LossError::TooFewDomains(groups.len()));
    }
    if let Some((&domain, idx)) = groups.iter().find(|(_, idx)| idx.len() < 2) {
        return Err(LossError::DomainTooSmall {
            domain,
            count: idx.len(),
        });
    }
    let mut covs = Vec::with_capacity(groups.len());
    for idx in groups.values() {
        let part = g.select_rows(features, idx)?;
        covs.push(covariance(g, part)?);
    }
    let mut total: Option<Var> = None;
    let mut pairs = 0usize;
    for i in 0..covs.len() {
        for j in i + 1..covs.len() {
            let diff = g.sub(covs[i], covs[j])?;
            let sq = g.square(diff)?;
            let fro = g.sum(sq)?;
            total = Some(match total {
                Some(acc) => g.add(acc, fro)?,
                None => fro,
            });
            pairs += 1;
        }
    }
    let total = total.expect("at least one pair");
    Ok(g.scale(total, S::one() / S::count(pairs))?)
}

/// `-mean_b ‖z1_b - z2_b‖²`.
pub fn exploration_l2<S: Scalar>(g: &mut Graph<S>, z1: Var, z2: Var) -> Result<Var, LossError> {
    let diff = g.sub(z1, z2)?;
    let sq = g.square(diff)?;
    let per_row = g.row_sum(sq)?;
    let m = g.mean(per_row)?;
    Ok(g.neg(m)?)
}

/// `-mean_b ‖z1_b/‖z1_b‖ - z2_b/‖z2_b‖‖₁`; bounded below by `-2√k` for rows
/// of width `k`.
pub fn exploration_norm_l1<S: Scalar>(g: &mut Graph<S>, z1: Var, z2: Var) -> Result<Var, LossError> {
    if g.shape(z1) != g.shape(z2) {
        return Err(crate::error::DiffError::ShapeMismatch {
            op: "exploration_norm_l1",
            left: g.shape(z1).to_vec(),
            right: g.shape(z2).to_vec(),
        }
        .into());
    }
    let eps = S::lit(NORM_EPS);
    let u1 = g.normalize_rows(z1, eps)?;
    let u2 = g.normalize_rows(z2, eps)?;
    let diff = g.sub(u1, u2)?;
    let a = g.abs(diff)?;
    let per_row = g.row_sum(a)?;
    let m = g.mean(per_row)?;
    Ok(g.neg(m)?)
}

pub fn exploration<S: Scalar>(g: &mut Graph<S>, kind: Exploration, z1: Var, z2: Var) -> Result<Var, LossError> {
    match kind {
        Exploration::L2 => exploration_l2(g, z1, z2),
        Exploration::NormL1 => exploration_norm_l1(g, z1, z2),
    }
}

/// Forward-pass pieces the combined objective is built from.
pub struct ObjectiveInputs<'a, S> {
    pub logits: Var,
    pub labels: &'a [usize],
    /// Internally-invariant half of the feature layer.
    pub z1: Var,
    /// Mutually-invariant half of the feature layer.
    pub z2: Var,
    pub domains: &'a [usize],
    /// Frozen teacher features for the distillation term.
    pub teacher: Option<&'a Tensor<S>>,
}

/// Graph nodes of the combined objective. Terms whose weight is zero are not
/// built at all.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub cls: Var,
    pub mse: Option<Var>,
    pub align: Option<Var>,
    pub exp: Option<Var>,
}

/// Scalar values of an [`Objective`], for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub cls: f64,
    pub mse: Option<f64>,
    pub align: Option<f64>,
    pub exp: Option<f64>,
    pub total: f64,
}

impl Objective {
    pub fn terms<S: Scalar>(&self, g: &Graph<S>) -> LossTerms {
        let v = |x: Var| g.value(x).item().as_f64();
        LossTerms {
            cls: v(self.cls),
            mse: self.mse.map(v),
            align: self.align.map(v),
            exp: self.exp.map(v),
            total: v(self.total),
        }
    }
}

/// `L_cls + λ₁·L_mse(z1, teacher) + λ₂·L_align(z2) + λ₃·L_exp(z1, z2)`.
///
/// Alignment acts on the mutually-invariant half `z2`, distillation on `z1`.
pub fn total_objective<S: Scalar>(
    g: &mut Graph<S>,
    inputs: &ObjectiveInputs<'_, S>,
    w: &LossWeights,
) -> Result<Objective, LossError> {
    w.validate()?;
    let cls = g.softmax_cross_entropy(inputs.logits, inputs.labels)?;
    let mut total = cls;
    let mut add_term = |g: &mut Graph<S>, term: Var, lambda: f64| -> Result<(), LossError> {
        let scaled = g.scale(term, S::lit(lambda))?;
        total = g.add(total, scaled)?;
        Ok(())
    };

    let mse = if w.lambda1 > 0.0 {
        let teacher = inputs.teacher.ok_or(LossError::MissingTeacher)?;
        let t = mse_distill(g, inputs.z1, teacher)?;
        add_term(g, t, w.lambda1)?;
        Some(t)
    } else {
        None
    };
    let align = if w.lambda2 > 0.0 {
        let t = coral_loss(g, inputs.z2, inputs.domains)?;
        add_term(g, t, w.lambda2)?;
        Some(t)
    } else {
        None
    };
    let exp = if w.lambda3 > 0.0 {
        let t = exploration(g, w.exploration, inputs.z1, inputs.z2)?;
        add_term(g, t, w.lambda3)?;
        Some(t)
    } else {
        None
    };
    Ok(Objective {
        total,
        cls,
        mse,
        align,
        exp,
    })
}
