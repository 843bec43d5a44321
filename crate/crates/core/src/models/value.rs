use rand_chacha::ChaCha8Rng;

use crate::diffcore::{DiffError, Graph, NodeId, Param, Tensor};

use super::nn::Mlp;

/// State-value baseline: state_dim -> 64 -> 64 -> 1, ReLU hidden.
#[derive(Debug, Clone)]
pub struct ValueMlp {
    pub mlp: Mlp,
}

impl ValueMlp {
    pub fn new(state_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ValueMlp {
            mlp: Mlp::new("value", &[state_dim, 64, 64, 1], 0.1, rng),
        }
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        self.mlp.forward_vec(state)[0]
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

    /// Predictions over a state batch, shape [batch].
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        states: &Tensor,
        ids: &[NodeId],
    ) -> Result<NodeId, DiffError> {
        let batch = states.shape()[0];
        let x = g.constant(states.clone());
        let out = self.mlp.forward_graph(g, x, ids)?;
        g.reshape(out, vec![batch])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn finite_output_for_finite_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = ValueMlp::new(4, &mut rng);
        let out = v.value(&[1e6, -1e6, 3.0, -0.5]);
        assert!(out.is_finite());
    }
}
