use alloc::vec;
use alloc::vec::Vec;

use super::{EpisodeGraph, Model, Session};
use crate::data::{Episode, TokenId};
use crate::error::{contract_err, Result};
use crate::nn::softmax_xent;
use crate::tensor::{Graph, NodeId};

/// Batch loss with optional parameter gradients and the attention used at
/// every step of every item.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceLoss {
    pub loss: f64,
    /// One buffer per parameter in visit order.
    pub grads: Option<Vec<Vec<f64>>>,
    /// `alphas[item][step]` is the attention distribution at that step.
    pub alphas: Vec<Vec<Vec<f64>>>,
}

/// Teacher-forced `-sum log p(y_j | y_<j)` over the non-PAD targets of
/// `caption` (which starts with BOS). Returns the loss node and per-step alphas.
pub fn caption_nll(g: &mut Graph, session: &Session, caption: &[TokenId]) -> Result<(NodeId, Vec<Vec<f64>>)> {
    if caption.len() < 2 || caption[1..].iter().all(|&t| t == TokenId::PAD) {
        return Err(contract_err!("caption has no target tokens"));
    }
    let (mut addr, mut dec) = session.start(g)?;
    dec.prev_token = caption[0];
    let mut terms = Vec::with_capacity(caption.len() - 1);
    let mut alphas = Vec::with_capacity(caption.len() - 1);
    for &target in &caption[1..] {
        let out = session.step(g, &addr, &dec)?;
        alphas.push(g.value(out.addressing.alpha).data().to_vec());
        if target != TokenId::PAD {
            let (term, _) = softmax_xent(g, out.decode.logits, target)?;
            terms.push(term);
        }
        dec = dec.advance(&out.decode, target);
        addr = out.addressing;
    }
    let all = g.concat(&terms)?;
    Ok((g.sum(all)?, alphas))
}

/// `-(1/N) sum_items sum_j log p(y_j | y_<j)` over `items` of
/// (episode, caption). Gradients are accumulated item by item in order.
pub fn sequence_loss(model: &Model, items: &[(&Episode, &[TokenId])], with_grads: bool) -> Result<SequenceLoss> {
    if items.is_empty() {
        return Err(contract_err!("empty batch"));
    }
    let scale = 1.0 / items.len() as f64;
    let mut grads: Option<Vec<Vec<f64>>> =
        with_grads.then(|| model.param_sizes().into_iter().map(|n| vec![0.0; n]).collect());
    let mut loss = 0.0;
    let mut alphas = Vec::with_capacity(items.len());
    for (episode, caption) in items {
        let mut eg = EpisodeGraph::new(model, episode, with_grads)?;
        let (nll, a) = caption_nll(&mut eg.graph, &eg.session, caption)?;
        let scaled = eg.graph.scale(nll, scale)?;
        loss += eg.graph.value(scaled).data()[0];
        alphas.push(a);
        if let Some(acc) = grads.as_mut() {
            eg.graph.backward(scaled)?;
            let mut i = 0;
            eg.session.params.for_each(&mut |_, &id| {
                if let Some(g) = eg.graph.grad(id) {
                    for (a, &v) in acc[i].iter_mut().zip(g) {
                        *a += v;
                    }
                }
                i += 1;
            });
        }
    }
    Ok(SequenceLoss { loss, grads, alphas })
}
