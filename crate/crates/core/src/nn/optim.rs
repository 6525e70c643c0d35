//! Stochastic gradient descent with optional heavy-ball momentum.
//!
//! The velocity recurrence is
//!
//! ```text
//! v <- momentum * v + g      (v starts at 0)
//! p <- p - lr * v
//! ```
//!
//! so with `momentum = 0` this is plain SGD. BN running statistics are not
//! trainable and are never touched.

use crate::nn::{Gradients, Model, NnError, ParamSet};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Clone)]
pub struct Sgd<S> {
    lr: S,
    momentum: S,
    velocity: ParamSet<S>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self, NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::LearningRate(lr));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NnError::Momentum(momentum));
        }
        Ok(Self {
            lr: cast(lr),
            momentum: cast(momentum),
            velocity: ParamSet::new(),
        })
    }

    pub fn step(&mut self, model: &mut Model<S>, grads: &Gradients<S>) -> Result<(), NnError> {
        let trainable = model.trainable_names();
        for (name, g) in grads.iter() {
            if !trainable.iter().any(|t| t == name) {
                return Err(NnError::UnknownParam(name.to_string()));
            }
            let p = model.tensor(name).expect("trainable name");
            if !p.same_shape(g) {
                return Err(NnError::ParamShape {
                    name: name.to_string(),
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
        for (name, g) in grads.iter() {
            let update = if self.momentum == S::zero() {
                g.clone()
            } else {
                let v = match self.velocity.get_mut(name) {
                    Some(v) => {
                        v.scale(self.momentum);
                        v.axpy(S::one(), g);
                        v
                    }
                    None => {
                        self.velocity.insert(name, g.clone());
                        self.velocity.get_mut(name).expect("just inserted")
                    }
                };
                v.clone()
            };
            model.tensor_mut(name).expect("validated").axpy(-self.lr, &update);
        }
        Ok(())
    }
}

/// One optimizer step with a fresh optimizer (no momentum history).
pub fn sgd_step<S: Scalar>(model: &mut Model<S>, grads: &Gradients<S>, lr: f64, momentum: f64) -> Result<(), NnError> {
    Sgd::new(lr, momentum)?.step(model, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BnConfig, LayerSpec, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(p: f64) -> Model<f64> {
        let mut m = Model::new(
            &[1, 1],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: 1,
                    out_features: 1,
                },
            ],
            BnConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        m.tensor_mut("1.weight").unwrap().data_mut()[0] = p;
        m
    }

    fn grad_of(v: f64) -> Gradients<f64> {
        let mut g = ParamSet::new();
        g.insert("1.weight", Tensor::new(vec![1, 1], vec![v]).unwrap());
        g
    }

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        let mut m = scalar_model(0.3);
        let before = m.clone();
        let zeros = m.state_dict();
        let zeros: Gradients<f64> = zeros
            .iter()
            .filter(|(n, _)| m.trainable_names().iter().any(|t| t == n))
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        sgd_step(&mut m, &zeros, 0.5, 0.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn plain_step_arithmetic() {
        let mut m = scalar_model(1.0);
        sgd_step(&mut m, &grad_of(0.5), 0.01, 0.0).unwrap();
        assert!((m.tensor("1.weight").unwrap().data()[0] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        // v1 = 1, v2 = 0.9 * 1 + 1 = 1.9; p2 = -(0.1 * 1 + 0.1 * 1.9) = -0.29
        let mut m = scalar_model(0.0);
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        opt.step(&mut m, &grad_of(1.0)).unwrap();
        opt.step(&mut m, &grad_of(1.0)).unwrap();
        assert!((m.tensor("1.weight").unwrap().data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters_and_shapes() {
        assert!(Sgd::<f64>::new(0.0, 0.0).is_err());
        assert!(Sgd::<f64>::new(0.1, 1.0).is_err());
        let mut m = scalar_model(0.0);
        let mut g = ParamSet::new();
        g.insert("1.weight", Tensor::<f64>::zeros(&[2]));
        assert!(matches!(
            sgd_step(&mut m, &g, 0.1, 0.0),
            Err(NnError::ParamShape { .. })
        ));
    }
}
