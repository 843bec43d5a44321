//! Discriminators and the TCN frame encoder.

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{sigmoid, DiffError, Graph, NodeId, Param, Tensor};

use super::nn::{ConvTrunk, Mlp};

/// Discriminator outputs are clamped into [EPS, 1-EPS] before any log.
pub const DISC_EPS: f64 = 1e-7;

/// MLP discriminator over concatenated (s,a) or (s,s') vectors.
#[derive(Debug, Clone)]
pub struct MlpDiscriminator {
    pub mlp: Mlp,
    pub input_dim: usize,
}

impl MlpDiscriminator {
    pub fn new(input_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        MlpDiscriminator {
            mlp: Mlp::new("disc", &[input_dim, 64, 64, 1], (1.0f64 / 64.0).sqrt(), rng),
            input_dim,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.mlp.bind(g)
    }

    /// D(x) in [EPS, 1-EPS] for a batch of rows, differentiable.
    pub fn prob_graph(
        &self,
        g: &mut Graph,
        inputs: &Tensor,
        ids: &[NodeId],
    ) -> Result<NodeId, DiffError> {
        let batch = inputs.shape()[0];
        let x = g.constant(inputs.clone());
        let logits = self.mlp.forward_graph(g, x, ids)?;
        let flat = g.reshape(logits, vec![batch])?;
        let p = g.sigmoid(flat);
        Ok(g.clamp(p, DISC_EPS, 1.0 - DISC_EPS))
    }

    /// Same arithmetic without a tape; used for reward labeling.
    pub fn prob_plain(&self, input: &[f64]) -> f64 {
        let logit = self.mlp.forward_vec(input)[0];
        sigmoid(logit).clamp(DISC_EPS, 1.0 - DISC_EPS)
    }
}

/// Convolutional discriminator over k stacked frames.
#[derive(Debug, Clone)]
pub struct ConvDiscriminator {
    pub trunk: ConvTrunk,
}

impl ConvDiscriminator {
    /// `channels` already includes the frame stacking factor (k * C).
    pub fn new(channels: usize, height: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvDiscriminator {
            trunk: ConvTrunk::new("disc", channels, height, width, 1, rng),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.trunk.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk.params_mut()
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.trunk.bind(g)
    }

    /// Inputs [B, kC, H, W] -> probabilities [B], differentiable.
    pub fn prob_graph(
        &self,
        g: &mut Graph,
        inputs: &Tensor,
        ids: &[NodeId],
    ) -> Result<NodeId, DiffError> {
        let batch = inputs.shape()[0];
        let x = g.constant(inputs.clone());
        let logits = self.trunk.forward_graph(g, x, ids)?;
        let flat = g.reshape(logits, vec![batch])?;
        let p = g.sigmoid(flat);
        Ok(g.clamp(p, DISC_EPS, 1.0 - DISC_EPS))
    }

    /// Batched plain forward; input length batch * kC * H * W.
    pub fn prob_plain(&self, inputs: &[f64], batch: usize) -> Vec<f64> {
        self.trunk
            .forward_plain(inputs, batch)
            .into_iter()
            .map(|logit| sigmoid(logit).clamp(DISC_EPS, 1.0 - DISC_EPS))
            .collect()
    }
}

/// Single-frame encoder for time-contrastive embeddings (dimension 16).
#[derive(Debug, Clone)]
pub struct TcnEncoder {
    pub trunk: ConvTrunk,
}

pub const TCN_EMBED_DIM: usize = 16;

impl TcnEncoder {
    pub fn new(channels: usize, height: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        TcnEncoder {
            trunk: ConvTrunk::new("tcn", channels, height, width, TCN_EMBED_DIM, rng),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk.params_mut()
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.trunk.bind(g)
    }

    /// Embeddings [B, 16] for a constant frame batch, differentiable.
    pub fn embed_graph(
        &self,
        g: &mut Graph,
        frames: &Tensor,
        ids: &[NodeId],
    ) -> Result<NodeId, DiffError> {
        let x = g.constant(frames.clone());
        self.trunk.forward_graph(g, x, ids)
    }

    /// Embedding of one normalized frame (length C * H * W).
    pub fn embed_plain(&self, frame: &[f64]) -> Vec<f64> {
        self.trunk.forward_plain(frame, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn outputs_stay_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let disc = MlpDiscriminator::new(4, &mut rng);
        for scale in [1.0, 1e3, 1e9] {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
            let p = disc.prob_plain(&x);
            assert!(p >= DISC_EPS && p <= 1.0 - DISC_EPS);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn conv_disc_plain_matches_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let disc = ConvDiscriminator::new(2, 16, 16, &mut rng);
        let x: Vec<f64> = (0..2 * 2 * 16 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plain = disc.prob_plain(&x, 2);

        let mut g = Graph::new();
        let ids = disc.bind(&mut g);
        let t = Tensor::new(vec![2, 2, 16, 16], x).unwrap();
        let p = disc.prob_graph(&mut g, &t, &ids).unwrap();
        for (a, b) in g.value(p).data().iter().zip(&plain) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn embedding_dimension_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = TcnEncoder::new(1, 32, 32, &mut rng);
        let e = enc.embed_plain(&vec![0.5; 32 * 32]);
        assert_eq!(e.len(), TCN_EMBED_DIM);
        assert!(e.iter().all(|v| v.is_finite()));
    }
}
