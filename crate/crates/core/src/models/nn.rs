//! Layer primitives shared by policies, value functions, and discriminators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{DiffError, Graph, NodeId, Param, Tensor};

/// Box-Muller standard normal; deterministic given the rng stream.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn init_weights(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng) * std).collect()
}

/// Fully connected layer, weights [in, out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Param::new(
                format!("{name}/w"),
                Tensor::new(vec![in_dim, out_dim], init_weights(rng, in_dim * out_dim, std))
                    .unwrap(),
            ),
            b: Param::new(format!("{name}/b"), Tensor::zeros(vec![out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let w = self.w.value.data();
        let b = self.b.value.data();
        let mut out = b.to_vec();
        for (i, &xv) in x.iter().enumerate() {
            if xv != 0.0 {
                let row = &w[i * self.out_dim..(i + 1) * self.out_dim];
                for (o, wv) in out.iter_mut().zip(row) {
                    *o += xv * wv;
                }
            }
        }
        out
    }

    pub fn bind(&self, g: &mut Graph) -> (NodeId, NodeId) {
        (g.param(&self.w), g.param(&self.b))
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x: NodeId,
        ids: (NodeId, NodeId),
    ) -> Result<NodeId, DiffError> {
        let h = g.matmul(x, ids.0)?;
        g.add_row(h, ids.1)
    }
}

/// MLP with ReLU hidden activations and a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` = [in, hidden..., out]; hidden layers use He init, the output
    /// layer uses `out_std` (small values keep initial policies near-neutral).
    pub fn new(name: &str, dims: &[usize], out_std: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let std = if i + 2 == dims.len() {
                out_std
            } else {
                (2.0 / dims[i] as f64).sqrt()
            };
            layers.push(Linear::new(
                &format!("{name}/l{i}"),
                dims[i],
                dims[i + 1],
                std,
                rng,
            ));
        }
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.layers[0].forward_vec(x);
        for layer in &self.layers[1..] {
            for v in h.iter_mut() {
                *v = v.max(0.0);
            }
            h = layer.forward_vec(&h);
        }
        h
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.layers
            .iter()
            .flat_map(|l| {
                let (w, b) = l.bind(g);
                [w, b]
            })
            .collect()
    }

    /// `ids` must come from [`Mlp::bind`] on the same graph.
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId, ids: &[NodeId]) -> Result<NodeId, DiffError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward_graph(g, h, (ids[2 * i], ids[2 * i + 1]))?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// 4x4 stride-2 convolution layer with channel bias.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub kernel: Param,
    pub bias: Param,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, ksize: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_ch * ksize * ksize;
        Conv2dLayer {
            kernel: Param::new(
                format!("{name}/k"),
                Tensor::new(
                    vec![out_ch, in_ch, ksize, ksize],
                    init_weights(rng, out_ch * fan_in, (2.0 / fan_in as f64).sqrt()),
                )
                .unwrap(),
            ),
            bias: Param::new(format!("{name}/b"), Tensor::zeros(vec![out_ch])),
            in_ch,
            out_ch,
            stride: 2,
            pad: 1,
        }
    }
}

/// DCGAN-style trunk: three 4x4 stride-2 leaky-ReLU convolutions with
/// widths 8 -> 16 -> 32, flattened into a linear head.
#[derive(Debug, Clone)]
pub struct ConvTrunk {
    pub convs: Vec<Conv2dLayer>,
    pub head: Linear,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub flat_dim: usize,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl ConvTrunk {
    pub fn new(
        name: &str,
        in_ch: usize,
        in_h: usize,
        in_w: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(in_h % 8 == 0 && in_w % 8 == 0, "trunk needs dims divisible by 8");
        let widths = [8usize, 16, 32];
        let mut convs = Vec::new();
        let mut ch = in_ch;
        for (i, &oc) in widths.iter().enumerate() {
            convs.push(Conv2dLayer::new(&format!("{name}/conv{i}"), ch, oc, 4, rng));
            ch = oc;
        }
        let flat_dim = 32 * (in_h / 8) * (in_w / 8);
        let head = Linear::new(
            &format!("{name}/head"),
            flat_dim,
            out_dim,
            (1.0 / flat_dim as f64).sqrt(),
            rng,
        );
        ConvTrunk {
            convs,
            head,
            in_ch,
            in_h,
            in_w,
            flat_dim,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self
            .convs
            .iter()
            .flat_map(|c| [&c.kernel, &c.bias])
            .collect();
        out.push(&self.head.w);
        out.push(&self.head.b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self
            .convs
            .iter_mut()
            .flat_map(|c| [&mut c.kernel, &mut c.bias])
            .collect();
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        let mut ids = Vec::new();
        for c in &self.convs {
            ids.push(g.param(&c.kernel));
            ids.push(g.param(&c.bias));
        }
        let (w, b) = self.head.bind(g);
        ids.push(w);
        ids.push(b);
        ids
    }

    /// Input [B, in_ch, H, W] -> [B, out_dim].
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId, ids: &[NodeId]) -> Result<NodeId, DiffError> {
        let batch = g.value(x).shape()[0];
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = g.conv2d(h, ids[2 * i], conv.stride, conv.pad)?;
            h = g.add_chan(h, ids[2 * i + 1])?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        let flat = g.reshape(h, vec![batch, self.flat_dim])?;
        let n = ids.len();
        self.head.forward_graph(g, flat, (ids[n - 2], ids[n - 1]))
    }

    /// Plain forward over a batch, no tape. Input length B * in_ch * H * W.
    pub fn forward_plain(&self, x: &[f64], batch: usize) -> Vec<f64> {
        use crate::diffcore::Graph as G;
        // A throwaway graph of constants evaluates the same arithmetic as
        // the recorded path, which keeps the two forwards identical by
        // construction.
        let mut g = G::new();
        let xn = g.constant(
            Tensor::new(vec![batch, self.in_ch, self.in_h, self.in_w], x.to_vec()).unwrap(),
        );
        let ids = self.bind(&mut g);
        let out = self.forward_graph(&mut g, xn, &ids).unwrap();
        g.value(out).data().to_vec()
    }
}
