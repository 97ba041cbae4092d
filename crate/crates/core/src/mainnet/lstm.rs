use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Hidden and cell vectors carried between clips of one driving sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Result<Self> {
        Ok(Self {
            h: Tensor::zeros(&[hidden])?,
            c: Tensor::zeros(&[hidden])?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> LstmState<U> {
        LstmState {
            h: self.h.cast(),
            c: self.c.cast(),
        }
    }
}

/// Adds `{prefix}.w` of shape `(input + hidden) × 4·hidden` and a zero
/// `{prefix}.b`. Gate blocks are ordered input, forget, candidate, output.
pub fn init_lstm<T: Scalar, R: Rng>(
    params: &mut ParamStore<T>,
    rng: &mut R,
    prefix: &str,
    input: usize,
    hidden: usize,
) -> Result<()> {
    let fan_in = input + hidden;
    params.insert(
        format!("{prefix}.w"),
        fan_in_uniform(rng, &[fan_in, 4 * hidden], fan_in)?,
    )?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[4 * hidden])?)?;
    Ok(())
}

/// One LSTM step:
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamStore<T>,
    prefix: &str,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let hidden = g.value(h).numel();
    if g.value(c).numel() != hidden {
        return Err(Error::config(format!(
            "lstm cell has {} units, hidden has {hidden}",
            g.value(c).numel()
        )));
    }
    let w = params.bind(g, &format!("{prefix}.w"))?;
    let b = params.bind(g, &format!("{prefix}.b"))?;
    let xh = g.concat(&[x, h])?;
    let z = g.dense(xh, w, b)?;
    let zi = g.slice(z, 0, hidden)?;
    let zf = g.slice(z, hidden, hidden)?;
    let zg = g.slice(z, 2 * hidden, hidden)?;
    let zo = g.slice(z, 3 * hidden, hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}
