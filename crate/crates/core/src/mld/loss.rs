use super::{MldArch, MldError, PreparedEpisode, Result};
use crate::scalar::Scalar;
use crate::tensor::{Binding, Graph, ParamStore, Tensor, Var};

/// A recorded loss evaluation.
pub struct LossGraph<S: Scalar> {
    pub graph: Graph<S>,
    pub total: Var,
    pub mse: Var,
    pub jec: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub mse: f64,
    pub jec: f64,
    pub total: f64,
}

impl<S: Scalar> LossGraph<S> {
    pub fn values(&self) -> LossValues {
        LossValues {
            mse: self.graph.value(self.mse).item().to_f64c(),
            jec: self.graph.value(self.jec).item().to_f64c(),
            total: self.graph.value(self.total).item().to_f64c(),
        }
    }
}

/// `λ·L_MSE + L_JEC`, both normalized by `B·H`, over a teacher-free latent
/// rollout of the batch. With `decay = Some(β)` the graph also carries
/// `(β/2)‖θ‖²`; training leaves it out and lets the optimizer add `β·θ`.
pub fn augmented_loss<S: Scalar>(
    arch: &MldArch,
    store: &ParamStore<S>,
    batch: &[&PreparedEpisode],
    lambda: f64,
    decay: Option<f64>,
) -> Result<LossGraph<S>> {
    let b = batch.len();
    if b == 0 {
        return Err(MldError::Data("empty batch".into()));
    }
    let h = batch[0].horizon;
    if h == 0 {
        return Err(MldError::Data(
            "episodes need at least one control step".into(),
        ));
    }
    let (n_a, n_d) = (arch.n_actions, arch.n_responses);
    let sl = arch.state_len();
    for e in batch {
        if e.horizon != h
            || e.states.len() != (h + 1) * sl
            || e.actions.len() != h * n_a
            || e.responses.len() != h * n_d
        {
            return Err(MldError::Data(format!(
                "episode does not match horizon {h} and the network shapes"
            )));
        }
    }
    let mut g = Graph::new();
    let mut states = Vec::with_capacity((h + 1) * b * sl);
    for t in 0..=h {
        for e in batch {
            states.extend_from_slice(e.state_at(t));
        }
    }
    let states = g.constant(Tensor::from_f64(
        &[(h + 1) * b, 2, arch.ny, arch.nx],
        &states,
    )?);
    let statics = if arch.mask.static_fields {
        let v: Vec<f64> = batch
            .iter()
            .flat_map(|e| e.static_fields.iter().copied())
            .collect();
        Some(g.constant(Tensor::from_f64(&[b, 2 * arch.nz, arch.ny, arch.nx], &v)?))
    } else {
        None
    };
    let relperms = if arch.mask.relperm {
        let v: Vec<f64> = batch.iter().flat_map(|e| e.relperm).collect();
        Some(g.constant(Tensor::from_f64(&[b, 6], &v)?))
    } else {
        None
    };
    let episode_of: Vec<usize> = (0..(h + 1) * b).map(|r| r % b).collect();
    let z_all = arch.encode(
        &mut g,
        store,
        states,
        statics,
        relperms,
        &episode_of,
        Binding::Trainable,
    )?;
    let rows = |t: usize| (t * b..(t + 1) * b).collect::<Vec<_>>();
    let mut z_hat = g.gather_rows(z_all, &rows(0))?;
    let mut mse_terms = Vec::with_capacity(h);
    let mut jec_terms = Vec::with_capacity(h);
    for t in 0..h {
        let a: Vec<f64> = batch
            .iter()
            .flat_map(|e| e.actions[t * n_a..(t + 1) * n_a].iter().copied())
            .collect();
        let d: Vec<f64> = batch
            .iter()
            .flat_map(|e| e.responses[t * n_d..(t + 1) * n_d].iter().copied())
            .collect();
        let a = g.constant(Tensor::from_f64(&[b, n_a], &a)?);
        let d = g.constant(Tensor::from_f64(&[b, n_d], &d)?);
        let (d_hat, z_next) = arch.step(&mut g, store, z_hat, a, Binding::Trainable)?;
        let err = g.sub(d_hat, d)?;
        let sq = g.square(err);
        mse_terms.push(g.sum(sq));
        let z_enc = g.gather_rows(z_all, &rows(t + 1))?;
        let gap = g.sub(z_next, z_enc)?;
        let sq = g.square(gap);
        jec_terms.push(g.sum(sq));
        z_hat = z_next;
    }
    let norm = S::from_f64c(1.0 / (b * h) as f64);
    let mse = sum_all(&mut g, &mse_terms)?;
    let mse = g.scale(mse, norm);
    let jec = sum_all(&mut g, &jec_terms)?;
    let jec = g.scale(jec, norm);
    let weighted = g.scale(mse, S::from_f64c(lambda));
    let mut total = g.add(weighted, jec)?;
    if let Some(beta) = decay {
        let names: Vec<String> = store.names().map(str::to_string).collect();
        let mut sq = Vec::with_capacity(names.len());
        for n in &names {
            let p = g.param(store, n)?;
            let s = g.square(p);
            sq.push(g.sum(s));
        }
        let reg = sum_all(&mut g, &sq)?;
        let reg = g.scale(reg, S::from_f64c(beta / 2.0));
        total = g.add(total, reg)?;
    }
    Ok(LossGraph {
        graph: g,
        total,
        mse,
        jec,
    })
}

fn sum_all<S: Scalar>(g: &mut Graph<S>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}
