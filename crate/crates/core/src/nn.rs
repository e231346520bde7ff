//! Layers built on the graph: affine maps, embedding lookup, the context-fed
//! LSTM cell and the softmax cross-entropy head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::TokenId;
use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// One item per LSTM gate: input, forget, output and candidate cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Gates<P> {
    pub input: P,
    pub forget: P,
    pub output: P,
    pub cell: P,
}

impl<P> Gates<P> {
    pub fn from_fn(mut f: impl FnMut(char) -> P) -> Self {
        Gates { input: f('i'), forget: f('f'), output: f('o'), cell: f('c') }
    }

    pub fn try_map<Q, E>(&self, mut f: impl FnMut(&P) -> Result<Q, E>) -> Result<Gates<Q>, E> {
        Ok(Gates {
            input: f(&self.input)?,
            forget: f(&self.forget)?,
            output: f(&self.output)?,
            cell: f(&self.cell)?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, &P)> {
        [('i', &self.input), ('f', &self.forget), ('o', &self.output), ('c', &self.cell)].into_iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut P> {
        [&mut self.input, &mut self.forget, &mut self.output, &mut self.cell].into_iter()
    }
}

/// LSTM weights. `hidden` multiplies the previous hidden state, `input` the
/// step input, `context` the memory read (absent for encoder and key LSTMs).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<P> {
    pub hidden: Gates<P>,
    pub input: Gates<P>,
    pub context: Option<Gates<P>>,
    pub bias: Gates<P>,
}

/// Sizes of an LSTM: hidden width, input width, optional context width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmDims {
    pub hidden: usize,
    pub input: usize,
    pub context: Option<usize>,
}

impl<P> LstmParams<P> {
    pub fn try_map<Q, E>(&self, mut f: impl FnMut(&P) -> Result<Q, E>) -> Result<LstmParams<Q>, E> {
        Ok(LstmParams {
            hidden: self.hidden.try_map(&mut f)?,
            input: self.input.try_map(&mut f)?,
            context: match &self.context {
                Some(c) => Some(c.try_map(&mut f)?),
                None => None,
            },
            bias: self.bias.try_map(&mut f)?,
        })
    }

    /// Visits every weight with its name (`w_i`, `u_f`, `a_o`, `b_c`, ...).
    pub fn for_each<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        let groups = [('w', Some(&self.hidden)), ('u', Some(&self.input)), ('a', self.context.as_ref()), ('b', Some(&self.bias))];
        for (letter, gates) in groups {
            if let Some(gates) = gates {
                for (gate, p) in gates.iter() {
                    f(format!("{prefix}.{letter}_{gate}"), p);
                }
            }
        }
    }
}

impl<P> LstmParams<P> {
    /// Mutable visit in the same order as [`LstmParams::for_each`].
    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        let groups = [Some(&mut self.hidden), Some(&mut self.input), self.context.as_mut(), Some(&mut self.bias)];
        for gates in groups.into_iter().flatten() {
            gates.iter_mut().for_each(&mut *f);
        }
    }
}

impl LstmParams<Tensor> {
    pub fn zeros(dims: LstmDims) -> Self {
        let h = dims.hidden;
        LstmParams {
            hidden: Gates::from_fn(|_| Tensor::zeros(&[h, h])),
            input: Gates::from_fn(|_| Tensor::zeros(&[h, dims.input])),
            context: dims.context.map(|c| Gates::from_fn(|_| Tensor::zeros(&[h, c]))),
            bias: Gates::from_fn(|_| Tensor::zeros(&[h])),
        }
    }

    /// Checks that every gate block agrees on its dims and returns them.
    pub fn dims(&self) -> Result<LstmDims> {
        let h = self.bias.input.len();
        let input = self.input.input.cols();
        let context = self.context.as_ref().map(|c| c.input.cols());
        let expect = Self::zeros(LstmDims { hidden: h, input, context });
        let mut actual = Vec::new();
        self.for_each("", &mut |_, t| actual.push(t.dims().to_vec()));
        let mut wanted = Vec::new();
        expect.for_each("", &mut |_, t| wanted.push(t.dims().to_vec()));
        if actual == wanted {
            Ok(LstmDims { hidden: h, input, context })
        } else {
            Err(shape_err!("inconsistent LSTM gate dims: {actual:?}"))
        }
    }
}

/// One LSTM step with optional context input.
///
/// Gates follow `sigma(W h + U x + A ctx + b)`, the cell update is
/// `c = i * c~ + f * c_prev`. With `standard_output` off the hidden state is
/// `h = o * c`; with it on, `h = o * tanh(c)`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_step(
    g: &mut Graph,
    params: &LstmParams<NodeId>,
    h_prev: NodeId,
    c_prev: NodeId,
    x: NodeId,
    context: Option<NodeId>,
    standard_output: bool,
) -> Result<(NodeId, NodeId)> {
    if params.context.is_some() != context.is_some() {
        return Err(contract_err!(
            "context input {} but context weights {}",
            if context.is_some() { "given" } else { "missing" },
            if params.context.is_some() { "present" } else { "absent" },
        ));
    }
    let mut pre = |w: NodeId, u: NodeId, a: Option<NodeId>, b: NodeId| -> Result<NodeId> {
        let wh = g.matmul(w, h_prev)?;
        let ux = g.matmul(u, x)?;
        let mut s = g.add(wh, ux)?;
        if let (Some(a), Some(ctx)) = (a, context) {
            let ac = g.matmul(a, ctx)?;
            s = g.add(s, ac)?;
        }
        g.add(s, b)
    };
    let ctx = |pick: fn(&Gates<NodeId>) -> NodeId| params.context.as_ref().map(pick);
    let i = pre(params.hidden.input, params.input.input, ctx(|c| c.input), params.bias.input)?;
    let f = pre(params.hidden.forget, params.input.forget, ctx(|c| c.forget), params.bias.forget)?;
    let o = pre(params.hidden.output, params.input.output, ctx(|c| c.output), params.bias.output)?;
    let cand = pre(params.hidden.cell, params.input.cell, ctx(|c| c.cell), params.bias.cell)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let o = g.sigmoid(o)?;
    let cand = g.tanh(cand)?;
    let ic = g.mul(i, cand)?;
    let fc = g.mul(f, c_prev)?;
    let c = g.add(ic, fc)?;
    let h = if standard_output {
        let tc = g.tanh(c)?;
        g.mul(o, tc)?
    } else {
        g.mul(o, c)?
    };
    Ok((h, c))
}

/// `w x (+ b)`.
pub fn linear(g: &mut Graph, w: NodeId, x: NodeId, b: Option<NodeId>) -> Result<NodeId> {
    let y = g.matmul(w, x)?;
    match b {
        Some(b) => g.add(y, b),
        None => Ok(y),
    }
}

/// Embedding row for `token`; gradients flow only into that row.
pub fn embed(g: &mut Graph, table: NodeId, token: TokenId) -> Result<NodeId> {
    let rows = g.value(table).rows();
    if token.index() >= rows {
        return Err(contract_err!("token id {} outside vocabulary of {rows}", token.0));
    }
    g.row(table, token.index())
}

/// Cross-entropy `-log p[target]` of a logit vector, plus the probabilities.
pub fn softmax_xent(g: &mut Graph, logits: NodeId, target: TokenId) -> Result<(NodeId, Vec<f64>)> {
    if target == TokenId::PAD {
        return Err(contract_err!("PAD positions must be masked before the loss"));
    }
    let loss = g.softmax_xent(logits, target.index())?;
    Ok((loss, softmax(g.value(logits).data())))
}

/// Stable softmax of a plain slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; x.len()];
    crate::tensor::softmax_into(x, &mut p);
    p
}

/// Stable log-softmax of a plain slice.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = crate::tensor::log_sum_exp(x);
    x.iter().map(|v| v - lse).collect()
}
