//! The training objective: steering loss, weighted multi-task losses on
//! speed and torque, and weighted feature-mimicking losses. Every term is a
//! mean squared error on z-scored targets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::auxnet::{AuxKind, MimicPath, PathId, DEFAULT_BETA};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Names of the auxiliary regression tasks, in prediction order after the
/// steering angle.
pub const TASKS: [&str; 2] = ["speed", "torque"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// One weight per entry of [`TASKS`].
    pub alpha: Vec<f64>,
    /// Mimicking weight per auxiliary network.
    pub beta: BTreeMap<AuxKind, f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: vec![1.0; TASKS.len()],
            beta: AuxKind::ALL.iter().map(|&k| (k, DEFAULT_BETA)).collect(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != TASKS.len() {
            return Err(Error::config(format!(
                "alpha needs {} entries ({}), got {}",
                TASKS.len(),
                TASKS.join(", "),
                self.alpha.len()
            )));
        }
        if self.alpha.iter().chain(self.beta.values()).any(|w| !(*w >= 0.0)) {
            return Err(Error::config("loss weights must be ≥ 0"));
        }
        Ok(())
    }

    pub fn beta_of(&self, kind: AuxKind) -> f64 {
        self.beta.get(&kind).copied().unwrap_or(DEFAULT_BETA)
    }
}

/// Per-term values of one evaluation of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub steer: f64,
    /// Unweighted per-task losses.
    pub multi: Vec<f64>,
    /// Unweighted per-path losses.
    pub mimic: BTreeMap<PathId, f64>,
    /// Weight applied to each path.
    pub beta: BTreeMap<PathId, f64>,
    pub alpha: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// Assemble and total the components.
    pub fn compose(
        steer: f64,
        multi: Vec<f64>,
        alpha: &[f64],
        mimic: BTreeMap<PathId, f64>,
        beta: BTreeMap<PathId, f64>,
    ) -> Result<Self> {
        if multi.len() != alpha.len() {
            return Err(Error::config(format!(
                "{} task losses but {} alpha weights",
                multi.len(),
                alpha.len()
            )));
        }
        if mimic.keys().ne(beta.keys()) {
            return Err(Error::config("mimic losses and beta weights cover different paths"));
        }
        let mut b = LossBreakdown {
            steer,
            multi,
            mimic,
            beta,
            alpha: alpha.to_vec(),
            total: 0.0,
        };
        b.total = b.recompute_total();
        Ok(b)
    }

    pub fn multi_weighted(&self) -> f64 {
        self.multi.iter().zip(&self.alpha).fold(0.0, |acc, (m, a)| acc + a * m)
    }

    pub fn mimic_weighted(&self) -> f64 {
        self.mimic
            .iter()
            .fold(0.0, |acc, (p, m)| acc + self.beta[p] * m)
    }

    /// `steer + Σ α·multi + Σ β·mimic`, summed left to right.
    pub fn recompute_total(&self) -> f64 {
        let mut t = self.steer;
        for (m, a) in self.multi.iter().zip(&self.alpha) {
            t += a * m;
        }
        for (p, m) in &self.mimic {
            t += self.beta[p] * m;
        }
        t
    }
}

fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::usage("loss over an empty batch"));
    }
    if a.len() != b.len() {
        return Err(Error::config(format!("loss operands have {} and {} elements", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Mean squared steering error over a batch.
pub fn steering_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    mse(pred, truth)
}

/// Per-task mean squared errors and their `alpha`-weighted sum.
pub fn multi_task_loss(pred: &[Vec<f64>], truth: &[Vec<f64>], alpha: &[f64]) -> Result<(Vec<f64>, f64)> {
    if pred.len() != truth.len() || pred.len() != alpha.len() {
        return Err(Error::config(format!(
            "multi-task loss needs matching lengths, got {} predictions, {} targets, {} weights",
            pred.len(),
            truth.len(),
            alpha.len()
        )));
    }
    let per: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| mse(p, t)).collect::<Result<_>>()?;
    let weighted = per.iter().zip(alpha).fold(0.0, |acc, (m, a)| acc + a * m);
    Ok((per, weighted))
}

/// Per-path mean squared error between Φ and Ψ outputs and the
/// `beta`-weighted sum.
pub fn mimic_loss<T: Scalar>(
    phi: &BTreeMap<PathId, Tensor<T>>,
    psi: &BTreeMap<PathId, Tensor<T>>,
    beta: &BTreeMap<PathId, f64>,
) -> Result<(BTreeMap<PathId, f64>, f64)> {
    let mut per = BTreeMap::new();
    let mut weighted = 0.0;
    for (id, a) in phi {
        let b = psi
            .get(id)
            .ok_or_else(|| Error::config(format!("no Ψ output for path {id}")))?;
        if a.shape() != b.shape() {
            return Err(Error::config(format!(
                "path {id}: Φ dims {:?} differ from Ψ dims {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let w = *beta
            .get(id)
            .ok_or_else(|| Error::config(format!("no beta for path {id}")))?;
        let av: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
        let bv: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
        let m = mse(&av, &bv)?;
        weighted += w * m;
        per.insert(*id, m);
    }
    Ok((per, weighted))
}

/// Objective over a batch, built on a graph.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub total: Var,
    pub steer: Var,
    pub multi: Vec<Var>,
    pub mimic: BTreeMap<PathId, Var>,
}

/// One mimicking path of a batch: Φ outputs per clip and the matching Ψ
/// targets (constants).
pub struct MimicTerm<T> {
    pub path: MimicPath,
    pub phi: Vec<Var>,
    pub psi: Vec<Tensor<T>>,
}

/// `predictions` holds one normalized `[angle, speed, torque]` per clip;
/// `targets` the matching normalized ground truth.
pub fn graph_loss<T: Scalar>(
    g: &mut Graph<T>,
    predictions: &[Var],
    targets: &[[f64; 3]],
    alpha: &[f64],
    mimic: &[MimicTerm<T>],
) -> Result<LossVars> {
    if predictions.is_empty() {
        return Err(Error::usage("loss over an empty batch"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::config("predictions and targets differ in batch size"));
    }
    if alpha.len() != TASKS.len() {
        return Err(Error::config(format!("alpha needs {} entries", TASKS.len())));
    }
    let mut columns = Vec::with_capacity(3);
    for k in 0..3 {
        let parts = predictions
            .iter()
            .map(|&p| g.slice(p, k, 1))
            .collect::<Result<Vec<_>>>()?;
        let pred = g.concat(&parts)?;
        let truth = g.constant(Tensor::vector(
            targets.iter().map(|t| T::from_f64(t[k])).collect(),
        )?);
        columns.push(g.mse(pred, truth)?);
    }
    let steer = columns[0];
    let multi = columns[1..].to_vec();
    let mut total = steer;
    for (&m, &a) in multi.iter().zip(alpha) {
        let w = g.scale(m, a);
        total = g.add(total, w)?;
    }
    let mut per_path = BTreeMap::new();
    for term in mimic {
        if term.phi.len() != term.psi.len() || term.phi.is_empty() {
            return Err(Error::config(format!(
                "path {}: {} Φ outputs for {} Ψ targets",
                term.path.id,
                term.phi.len(),
                term.psi.len()
            )));
        }
        for (&v, t) in term.phi.iter().zip(&term.psi) {
            if g.shape(v) != t.shape() {
                return Err(Error::config(format!(
                    "path {}: Φ dims {:?} differ from Ψ dims {:?}",
                    term.path.id,
                    g.shape(v),
                    t.shape()
                )));
            }
        }
        let phi = g.concat(&term.phi)?;
        let psi = g.constant(Tensor::new(
            vec![term.psi.iter().map(|t| t.numel()).sum()],
            term.psi.iter().flat_map(|t| t.data().iter().copied()).collect(),
        )?);
        let m = g.mse(phi, psi)?;
        let w = g.scale(m, term.path.beta);
        total = g.add(total, w)?;
        per_path.insert(term.path.id, m);
    }
    Ok(LossVars {
        total,
        steer,
        multi,
        mimic: per_path,
    })
}

impl LossVars {
    /// Read the component values back into a breakdown.
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>, alpha: &[f64], mimic: &[MimicTerm<T>]) -> Result<LossBreakdown> {
        let val = |v: Var| g.value(v).data()[0].as_f64();
        LossBreakdown::compose(
            val(self.steer),
            self.multi.iter().map(|&v| val(v)).collect(),
            alpha,
            self.mimic.iter().map(|(p, &v)| (*p, val(v))).collect(),
            mimic.iter().map(|t| (t.path.id, t.path.beta)).collect(),
        )
    }
}
