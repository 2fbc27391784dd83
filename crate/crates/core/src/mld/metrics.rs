use super::{Mld, MldError, PreparedEpisode, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub r2: f64,
    pub rmse: f64,
    /// `NaN` for an episode whose responses never vary.
    pub per_case_r2: Vec<f64>,
    /// Physical predictions, `[H, N_d]` per episode.
    pub predictions: Vec<Vec<f64>>,
}

/// Split-level R² against the per-step mean of the references, and RMSE
/// summed over steps and producers inside the per-sample mean.
pub fn r2_rmse(pred: &[Vec<f64>], refs: &[Vec<f64>], horizon: usize) -> Result<(f64, f64)> {
    let n = refs.len();
    if n == 0 || pred.len() != n {
        return Err(MldError::Data(
            "metrics need equally many predictions and references".into(),
        ));
    }
    let len = refs[0].len();
    if horizon == 0 || len % horizon != 0 || refs.iter().chain(pred).any(|v| v.len() != len) {
        return Err(MldError::Data("every sample must hold H·N_d values".into()));
    }
    let mut mean = vec![0.0; len];
    for r in refs {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let (mut sse, mut sst) = (0.0, 0.0);
    for (p, r) in pred.iter().zip(refs) {
        for k in 0..len {
            sse += (p[k] - r[k]).powi(2);
            sst += (mean[k] - r[k]).powi(2);
        }
    }
    if sst == 0.0 {
        return Err(MldError::Data(
            "references have zero variance; R² is undefined".into(),
        ));
    }
    Ok((1.0 - sse / sst, (sse / n as f64).sqrt()))
}

/// R² of one episode against each producer's mean over the episode.
pub fn case_r2(pred: &[f64], reference: &[f64], n_d: usize) -> f64 {
    let h = reference.len() / n_d;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for k in 0..n_d {
        let mean = (0..h).map(|t| reference[t * n_d + k]).sum::<f64>() / h as f64;
        for t in 0..h {
            let i = t * n_d + k;
            sse += (pred[i] - reference[i]).powi(2);
            sst += (reference[i] - mean).powi(2);
        }
    }
    if sst == 0.0 {
        f64::NAN
    } else {
        1.0 - sse / sst
    }
}

/// Linear-interpolation percentile of the finite entries, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Rolls every episode from its first state and scores the physical
/// response predictions.
pub fn evaluate<S: Scalar>(mld: &Mld<S>, episodes: &[PreparedEpisode]) -> Result<Evaluation> {
    if episodes.is_empty() {
        return Err(MldError::Data("cannot evaluate an empty split".into()));
    }
    let h = episodes[0].horizon;
    let n_d = mld.arch.n_responses;
    let initial: Vec<_> = episodes.iter().map(|e| e.encoder_input(0)).collect();
    let actions: Vec<Vec<f64>> = (0..h)
        .map(|t| {
            episodes
                .iter()
                .flat_map(|e| e.action_rows()[t].clone())
                .collect()
        })
        .collect();
    let roll = mld.rollout(&initial, &actions)?;
    let mut predictions = vec![Vec::with_capacity(h * n_d); episodes.len()];
    for step in &roll.responses {
        for (i, row) in step.chunks(n_d).enumerate() {
            predictions[i].extend(mld.norm.denormalize_responses(row));
        }
    }
    let refs: Vec<Vec<f64>> = episodes
        .iter()
        .map(|e| e.physical_responses.clone())
        .collect();
    let (r2, rmse) = r2_rmse(&predictions, &refs, h)?;
    let per_case_r2 = predictions
        .iter()
        .zip(&refs)
        .map(|(p, r)| case_r2(p, r, n_d))
        .collect();
    Ok(Evaluation {
        r2,
        rmse,
        per_case_r2,
        predictions,
    })
}
