//! Sequential convolutional networks over NHWC batches.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_same_layout, init_uniform, Activation, Array, Graph, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        name: String,
        kernel: usize,
        out_channels: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        act: Option<Activation>,
    },
    Upsample(usize),
}

impl Layer {
    pub fn conv(name: &str, kernel: usize, out_channels: usize, stride: usize, act: Option<Activation>) -> Self {
        Layer::Conv {
            name: name.to_string(),
            kernel,
            out_channels,
            stride,
            pad: kernel / 2,
            bias: true,
            act,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvNet {
    in_channels: usize,
    layers: Vec<Layer>,
    params: ParamStore,
}

impl ConvNet {
    /// Seeded initialization; bias-free layers keep an all-zero bias.
    pub fn new(in_channels: usize, layers: Vec<Layer>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut c = in_channels;
        for layer in &layers {
            if let Layer::Conv {
                name,
                kernel,
                out_channels,
                bias,
                ..
            } = layer
            {
                let fan_in = kernel * kernel * c;
                let w = init_uniform(&mut rng, vec![*kernel, *kernel, c, *out_channels], fan_in);
                let b = if *bias {
                    init_uniform(&mut rng, vec![*out_channels], fan_in)
                } else {
                    Array::zeros(vec![*out_channels])
                };
                params.insert(format!("{name}.w"), w);
                params.insert(format!("{name}.b"), b);
                c = *out_channels;
            }
        }
        Self {
            in_channels,
            layers,
            params,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Names of parameters that training may update (bias-free layers pin their bias).
    pub fn trainable(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().flat_map(|l| match l {
            Layer::Conv { name, bias, .. } => {
                let mut v = vec![format!("{name}.w")];
                if *bias {
                    v.push(format!("{name}.b"));
                }
                v
            }
            Layer::Upsample(_) => vec![],
        })
        .map(|s| self.params.get_key_value(&s).unwrap().0.as_str())
    }

    pub fn set_params(&mut self, params: ParamStore) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Graph with input `x: [batch, h, w, in_channels]` and output `y`.
    pub fn graph(&self, batch: usize, h: usize, w: usize) -> Result<Graph> {
        let mut g = Graph::new();
        let mut x = g.input("x", vec![batch, h, w, self.in_channels])?;
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    name,
                    stride,
                    pad,
                    act,
                    ..
                } => {
                    let wn = g.param(&format!("{name}.w"), self.params[&format!("{name}.w")].clone())?;
                    let bn = g.param(&format!("{name}.b"), self.params[&format!("{name}.b")].clone())?;
                    x = g.conv2d(x, wn, bn, *stride, *pad)?;
                    if let Some(a) = act {
                        x = g.act(x, *a)?;
                    }
                }
                Layer::Upsample(f) => x = g.upsample(x, *f)?,
            }
        }
        g.mark_output("y", x)?;
        Ok(g)
    }

    pub fn output_shape(&self, batch: usize, h: usize, w: usize) -> Result<Vec<usize>> {
        let g = self.graph(batch, h, w)?;
        Ok(g.shape(g.output_node("y").unwrap()).to_vec())
    }

    pub fn forward(&self, x: &Array) -> Result<Array> {
        Ok(self.run(x)?.1)
    }

    /// Forward pass that keeps the tape for a later backward call.
    pub fn run(&self, x: &Array) -> Result<(Graph, Array)> {
        if x.shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!("expected an NHWC batch, got {:?}", x.shape)));
        }
        let mut g = self.graph(x.shape[0], x.shape[1], x.shape[2])?;
        let out = g.forward(&BTreeMap::from([("x".to_string(), x.clone())]))?;
        Ok((g, out["y"].clone()))
    }
}

/// Encoder-decoder generator: input is the corrupted image with the mask
/// appended as an extra channel; output is a full image in `(0, 1)`.
/// Spatial extent must be divisible by 4.
pub fn generator(channels: usize, width: usize, seed: u64) -> ConvNet {
    let t = Some(Activation::Tanh);
    ConvNet::new(
        channels + 1,
        vec![
            Layer::conv("g.enc1", 3, width, 1, t),
            Layer::conv("g.enc2", 3, width * 2, 2, t),
            Layer::conv("g.enc3", 3, width * 2, 2, t),
            Layer::Upsample(4),
            Layer::conv("g.out", 3, channels, 1, Some(Activation::Sigmoid)),
        ],
        seed,
    )
}
