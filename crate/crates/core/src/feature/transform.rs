use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::net::models::{ConvNet, Layer};
use crate::net::{Activation, Array, Graph};
use crate::tensor::load_tensor;

/// Which feature map stands in for the pretrained-network layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum TransformSpec {
    #[default]
    Identity,
    /// Seeded per-pixel linear map to `channels` outputs.
    RandomProjection { seed: u64, channels: usize },
    /// `depth` seeded stride-2 3x3 convolutions with tanh.
    ConvStack { seed: u64, depth: usize, channels: usize },
    /// Precomputed `H x W x C` feature dump in `.dt` format.
    External { path: PathBuf },
}


impl TransformSpec {
    pub fn id(&self) -> String {
        match self {
            TransformSpec::Identity => "identity".into(),
            TransformSpec::RandomProjection { seed, channels } => {
                format!("random_projection(seed={seed},channels={channels})")
            }
            TransformSpec::ConvStack {
                seed,
                depth,
                channels,
            } => format!("conv_stack(seed={seed},depth={depth},channels={channels})"),
            TransformSpec::External { path } => format!("external({})", path.display()),
        }
    }

    /// Parses the compact `kind[:key=value,...]` form used on the command line.
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut table = toml::Table::new();
        table.insert("kind".into(), toml::Value::String(kind.trim().to_string()));
        for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::UnknownTransform(format!("bad option `{pair}` in `{text}`")))?;
            let value = v
                .trim()
                .parse::<i64>()
                .map(toml::Value::Integer)
                .unwrap_or_else(|_| toml::Value::String(v.trim().to_string()));
            table.insert(k.trim().to_string(), value);
        }
        Self::deserialize(toml::Value::Table(table))
            .map_err(|e| Error::UnknownTransform(format!("`{text}`: {e}")))
    }
}

/// A realized transform, ready to map `[H, W, C]` images to feature maps.
#[derive(Debug, Clone)]
pub struct Transform {
    spec: TransformSpec,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Identity,
    Net { net: ConvNet, downscale: usize },
    External(Array),
}

/// Tape from a batched transform evaluation, for pulling feature-space
/// gradients back to pixels.
pub struct TransformTape {
    graph: Option<Graph>,
}

impl Transform {
    pub fn new(spec: &TransformSpec, in_channels: usize) -> Result<Self> {
        let kind = match spec {
            TransformSpec::Identity => Kind::Identity,
            TransformSpec::RandomProjection { seed, channels } => {
                if *channels == 0 {
                    return Err(Error::UnknownTransform("random_projection needs channels > 0".into()));
                }
                let layer = Layer::Conv {
                    name: "phi.proj".into(),
                    kernel: 1,
                    out_channels: *channels,
                    stride: 1,
                    pad: 0,
                    bias: false,
                    act: None,
                };
                Kind::Net {
                    net: ConvNet::new(in_channels, vec![layer], *seed),
                    downscale: 1,
                }
            }
            TransformSpec::ConvStack {
                seed,
                depth,
                channels,
            } => {
                if *depth == 0 || *channels == 0 || *depth > 16 {
                    return Err(Error::UnknownTransform(format!(
                        "conv_stack needs 1 <= depth <= 16 and channels > 0, got {depth}, {channels}"
                    )));
                }
                let layers = (0..*depth)
                    .map(|i| Layer::conv(&format!("phi.conv{i}"), 3, *channels, 2, Some(Activation::Tanh)))
                    .collect();
                Kind::Net {
                    net: ConvNet::new(in_channels, layers, *seed),
                    downscale: 1 << depth,
                }
            }
            TransformSpec::External { path } => {
                let t = load_tensor(path)?;
                if t.ndim() != 3 {
                    return Err(Error::MalformedHeader(format!(
                        "external feature dump {} must be HxWxC, found shape {:?}",
                        path.display(),
                        t.shape()
                    )));
                }
                Kind::External(Array::from_tensor(&t))
            }
        };
        Ok(Self {
            spec: spec.clone(),
            kind,
        })
    }

    pub fn spec(&self) -> &TransformSpec {
        &self.spec
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self.kind, Kind::External(_))
    }

    fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        if let Kind::Net { downscale, .. } = &self.kind {
            if !h.is_multiple_of(*downscale) || !w.is_multiple_of(*downscale) {
                return Err(Error::ShapeMismatch(format!(
                    "{h}x{w} image is not divisible by the transform's downscale factor {downscale}"
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, image: &Array) -> Result<FeatureMap> {
        if image.shape.len() != 3 {
            return Err(Error::ShapeMismatch(format!("expected HxWxC image, got {:?}", image.shape)));
        }
        let (h, w, c) = (image.shape[0], image.shape[1], image.shape[2]);
        let values = match &self.kind {
            Kind::External(dump) => dump.clone(),
            _ => {
                let batch = Array::new(vec![1, h, w, c], image.data.clone())?;
                let (_, out) = self.apply_batch(&batch)?;
                let s = out.shape.clone();
                Array::new(vec![s[1], s[2], s[3]], out.data)?
            }
        };
        FeatureMap::new(values, (h, w), self.spec.id())
    }

    /// Maps an `[N, H, W, C]` batch; the returned tape supports [`Self::backward`].
    pub fn apply_batch(&self, images: &Array) -> Result<(TransformTape, Array)> {
        if images.shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!("expected NHWC batch, got {:?}", images.shape)));
        }
        self.check_extent(images.shape[1], images.shape[2])?;
        match &self.kind {
            Kind::Identity => Ok((TransformTape { graph: None }, images.clone())),
            Kind::Net { net, .. } => {
                let (graph, out) = net.run(images)?;
                Ok((TransformTape { graph: Some(graph) }, out))
            }
            Kind::External(_) => Err(Error::UnknownTransform(
                "external feature dumps cannot be recomputed for new images".into(),
            )),
        }
    }

    /// Pulls `d loss / d features` back to `d loss / d pixels`.
    pub fn backward(&self, tape: &TransformTape, feature_grad: &Array) -> Result<Array> {
        match &tape.graph {
            None => Ok(feature_grad.clone()),
            Some(g) => {
                let grads = g.backward("y", feature_grad)?;
                Ok(grads.inputs["x"].clone())
            }
        }
    }
}

/// One-shot form of [`Transform::new`] + [`Transform::apply`].
pub fn apply_transform(spec: &TransformSpec, image: &Array) -> Result<FeatureMap> {
    let channels = *image
        .shape
        .last()
        .ok_or_else(|| Error::ShapeMismatch("empty image shape".into()))?;
    Transform::new(spec, channels)?.apply(image)
}
