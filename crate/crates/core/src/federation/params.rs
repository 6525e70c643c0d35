use crate::federation::{FedError, WeightMatrix};
use crate::nn::{Model, ParamSet};
use crate::scalar::{cast, Scalar};

/// Splits a model's state into the BN part `phi` (gamma, beta, running mean,
/// running variance of every BN layer) and the rest `psi`.
pub fn partition_params<S: Scalar>(model: &Model<S>) -> (ParamSet<S>, ParamSet<S>) {
    let mut phi = ParamSet::new();
    let mut psi = ParamSet::new();
    for (name, t) in model.named_tensors() {
        if model.is_bn_tensor(&name) {
            phi.insert(name, t.clone());
        } else {
            psi.insert(name, t.clone());
        }
    }
    (phi, psi)
}

/// State of the layers with index below `cut`.
pub fn layers_below<S: Scalar>(model: &Model<S>, cut: usize) -> ParamSet<S> {
    model
        .named_tensors()
        .into_iter()
        .filter(|(name, _)| model.layer_of(name).is_some_and(|l| l < cut))
        .map(|(name, t)| (name, t.clone()))
        .collect()
}

fn check_congruent<S: Scalar>(sets: &[ParamSet<S>]) -> Result<(), FedError> {
    let first = sets.first().ok_or(FedError::ClientCount(0))?;
    match sets.iter().position(|s| !s.is_congruent(first)) {
        Some(i) => Err(FedError::Incongruent(i)),
        None => Ok(()),
    }
}

/// `out_i = sum_j w_ij * sets_j`, accumulated in client order.
pub fn aggregate<S: Scalar>(sets: &[ParamSet<S>], w: &WeightMatrix) -> Result<Vec<ParamSet<S>>, FedError> {
    check_congruent(sets)?;
    if w.len() != sets.len() {
        return Err(FedError::WeightShape {
            weights: w.len(),
            clients: sets.len(),
        });
    }
    Ok((0..sets.len())
        .map(|i| {
            let mut out = sets[0].zeros_like();
            for (j, s) in sets.iter().enumerate() {
                let wij: S = cast(w.get(i, j));
                for (name, acc) in out.iter_mut() {
                    acc.axpy(wij, s.get(name).expect("congruent sets"));
                }
            }
            out
        })
        .collect())
}

/// Elementwise arithmetic mean: the sum in client order divided by `N`.
pub fn average<S: Scalar>(sets: &[ParamSet<S>]) -> Result<ParamSet<S>, FedError> {
    check_congruent(sets)?;
    let mut out = sets[0].zeros_like();
    for s in sets {
        for (name, acc) in out.iter_mut() {
            acc.axpy(S::one(), s.get(name).expect("congruent sets"));
        }
    }
    let n: S = cast(sets.len() as f64);
    for (_, t) in out.iter_mut() {
        for v in t.data_mut() {
            *v /= n;
        }
    }
    Ok(out)
}
