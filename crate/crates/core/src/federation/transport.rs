//! In-process stand-in for the client/server link. Every payload crosses
//! it as bytes: models as checkpoints, statistics as text records.

use std::sync::mpsc::{channel, Receiver, Sender};

use crate::federation::FedError;
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::stats::{stats_from_text, stats_to_text, ClientStats};

#[derive(Debug, Clone)]
pub enum Payload {
    Model(Vec<u8>),
    Stats(String),
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub client: usize,
    pub payload: Payload,
}

/// One uplink shared by all clients and one downlink per client.
pub struct Transport {
    up_tx: Sender<Envelope>,
    up_rx: Receiver<Envelope>,
    down: Vec<(Sender<Envelope>, Receiver<Envelope>)>,
}

/// Sending half of the uplink, cloneable into worker threads.
#[derive(Clone)]
pub struct Uplink(Sender<Envelope>);

impl Uplink {
    pub fn push_model<S: Scalar>(&self, client: usize, model: &Model<S>) -> Result<(), FedError> {
        self.send(client, Payload::Model(model.to_checkpoint_bytes()))
    }

    pub fn push_stats<S: Scalar>(&self, client: usize, stats: &ClientStats<S>) -> Result<(), FedError> {
        self.send(client, Payload::Stats(stats_to_text(stats)))
    }

    fn send(&self, client: usize, payload: Payload) -> Result<(), FedError> {
        self.0
            .send(Envelope { client, payload })
            .map_err(|_| FedError::Transport("uplink closed".into()))
    }
}

impl Transport {
    pub fn new(clients: usize) -> Self {
        let (up_tx, up_rx) = channel();
        Self {
            up_tx,
            up_rx,
            down: (0..clients).map(|_| channel()).collect(),
        }
    }

    pub fn clients(&self) -> usize {
        self.down.len()
    }

    pub fn uplink(&self) -> Uplink {
        Uplink(self.up_tx.clone())
    }

    /// Receives exactly one envelope from every client, ordered by client.
    fn gather(&self) -> Result<Vec<Payload>, FedError> {
        let n = self.clients();
        let mut slots: Vec<Option<Payload>> = vec![None; n];
        for _ in 0..n {
            let env = self
                .up_rx
                .recv()
                .map_err(|_| FedError::Transport("uplink closed".into()))?;
            let slot = slots
                .get_mut(env.client)
                .ok_or_else(|| FedError::Transport(format!("unknown client {}", env.client)))?;
            if slot.replace(env.payload).is_some() {
                return Err(FedError::Transport(format!("client {} pushed twice", env.client)));
            }
        }
        Ok(slots.into_iter().map(|s| s.expect("every slot filled")).collect())
    }

    pub fn gather_models<S: Scalar>(&self) -> Result<Vec<Model<S>>, FedError> {
        self.gather()?
            .into_iter()
            .enumerate()
            .map(|(i, p)| match p {
                Payload::Model(bytes) => Ok(Model::from_checkpoint_bytes(&bytes)?),
                Payload::Stats(_) => Err(FedError::Transport(format!("client {i} sent stats, expected a model"))),
            })
            .collect()
    }

    pub fn gather_stats<S: Scalar>(&self) -> Result<Vec<ClientStats<S>>, FedError> {
        self.gather()?
            .into_iter()
            .enumerate()
            .map(|(i, p)| match p {
                Payload::Stats(text) => Ok(stats_from_text(&text)?),
                Payload::Model(_) => Err(FedError::Transport(format!("client {i} sent a model, expected stats"))),
            })
            .collect()
    }

    pub fn distribute<S: Scalar>(&self, client: usize, model: &Model<S>) -> Result<(), FedError> {
        let (tx, _) = self
            .down
            .get(client)
            .ok_or_else(|| FedError::Transport(format!("unknown client {client}")))?;
        tx.send(Envelope {
            client,
            payload: Payload::Model(model.to_checkpoint_bytes()),
        })
        .map_err(|_| FedError::Transport("downlink closed".into()))
    }

    pub fn receive<S: Scalar>(&self, client: usize) -> Result<Model<S>, FedError> {
        let (_, rx) = self
            .down
            .get(client)
            .ok_or_else(|| FedError::Transport(format!("unknown client {client}")))?;
        match rx.try_recv() {
            Ok(Envelope {
                payload: Payload::Model(bytes),
                ..
            }) => Ok(Model::from_checkpoint_bytes(&bytes)?),
            Ok(_) => Err(FedError::Transport(format!("client {client} received stats"))),
            Err(_) => Err(FedError::Transport(format!("nothing sent to client {client}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BnConfig, LayerSpec};
    use crate::stats::{LayerGaussian, StatsVariant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Model<f64> {
        let specs = [
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_features: 3,
                out_features: 2,
            },
            LayerSpec::BatchNorm { channels: 2 },
            LayerSpec::Dense {
                in_features: 2,
                out_features: 2,
            },
        ];
        Model::new(
            &[1, 3],
            specs.to_vec(),
            BnConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn models_arrive_in_client_order() {
        let t = Transport::new(3);
        let up = t.uplink();
        for c in [2, 0, 1] {
            up.push_model(c, &model(c as u64)).unwrap();
        }
        let got = t.gather_models::<f64>().unwrap();
        for (c, m) in got.iter().enumerate() {
            assert_eq!(m, &model(c as u64));
        }
    }

    #[test]
    fn stats_survive_the_wire() {
        let t = Transport::new(2);
        let s = ClientStats {
            variant: StatsVariant::BnLayers,
            layers: vec![LayerGaussian {
                mean: vec![0.1, -2.0 / 3.0],
                var: vec![1.0 / 7.0, 0.0],
            }],
        };
        t.uplink().push_stats(1, &s).unwrap();
        t.uplink().push_stats(0, &s).unwrap();
        assert_eq!(t.gather_stats::<f64>().unwrap(), vec![s.clone(), s]);
    }

    #[test]
    fn duplicate_push_and_wrong_payload_rejected() {
        let t = Transport::new(2);
        t.uplink().push_model(0, &model(0)).unwrap();
        t.uplink().push_model(0, &model(0)).unwrap();
        assert!(t.gather_models::<f64>().is_err());

        let t = Transport::new(1);
        t.uplink().push_model(0, &model(0)).unwrap();
        assert!(t.gather_stats::<f64>().is_err());
    }

    #[test]
    fn downlink_round_trip() {
        let t = Transport::new(2);
        t.distribute(1, &model(5)).unwrap();
        assert_eq!(t.receive::<f64>(1).unwrap(), model(5));
        assert!(t.receive::<f64>(0).is_err());
    }
}
