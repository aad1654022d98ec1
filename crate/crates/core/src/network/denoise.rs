use rand::Rng;

use crate::error::Result;
use crate::tensor::{Graph, Real, Tensor, Var};

use super::dm::{BoundLayer, ConvLayer};

/// Width and depth of the residual denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DnArch {
    pub width: usize,
    /// Number of conv layers, at least 2.
    pub depth: usize,
}

impl DnArch {
    /// `3->16->16->3`, about 3.2k parameters.
    pub fn compact() -> Self {
        DnArch { width: 16, depth: 3 }
    }

    /// Deep 64-channel residual stack, about 631k parameters.
    pub fn full() -> Self {
        DnArch { width: 64, depth: 19 }
    }

    fn layers(self) -> Vec<(usize, usize)> {
        let d = self.depth.max(2);
        (0..d)
            .map(|i| {
                let cin = if i == 0 { 3 } else { self.width };
                let cout = if i == d - 1 { 3 } else { self.width };
                (cin, cout)
            })
            .collect()
    }
}

/// Conv stack predicting a residual that is subtracted from its input.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseNet<T: Real = f32> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> DenoiseNet<T> {
    /// All-zero weights: the identity map.
    pub fn zeros(arch: DnArch) -> Self {
        DenoiseNet {
            layers: arch
                .layers()
                .into_iter()
                .map(|(i, o)| ConvLayer::zeros(i, o, 3))
                .collect(),
        }
    }

    /// Random hidden layers and a zero output layer, so the network starts
    /// as the identity but still receives gradients everywhere.
    pub fn init<R: Rng + ?Sized>(arch: DnArch, rng: &mut R) -> Self {
        let specs = arch.layers();
        let last = specs.len() - 1;
        DenoiseNet {
            layers: specs
                .into_iter()
                .enumerate()
                .map(|(i, (cin, cout))| {
                    if i == last {
                        ConvLayer::zeros(cin, cout, 3)
                    } else {
                        ConvLayer::random(cin, cout, 3, 1.0, rng)
                    }
                })
                .collect(),
        }
    }

    pub fn arch(&self) -> DnArch {
        DnArch {
            width: self.layers.first().map_or(0, |l| l.weight.shape()[0]),
            depth: self.layers.len(),
        }
    }

    pub fn residual(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i != last {
                h = h.map(|v| v.tanh());
            }
        }
        Ok(h)
    }

    /// `clamp01(x - residual(x))`.
    pub fn denoise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self.residual(x)?;
        Ok(x.zip_map(&r, |a, b| a - b)?.clamp01())
    }

    pub fn bind(&self, g: &Graph<T>) -> BoundDenoise {
        BoundDenoise {
            layers: self.layers.iter().map(|l| l.bind(g)).collect(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{i}.weight"), &l.weight),
                    (format!("{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn cast<U: Real>(&self) -> DenoiseNet<U> {
        DenoiseNet {
            layers: self.layers.iter().map(ConvLayer::cast).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundDenoise {
    pub layers: Vec<BoundLayer>,
}

impl BoundDenoise {
    pub fn denoise<T: Real>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i != last {
                h = g.tanh(h);
            }
        }
        Ok(g.clamp01(g.sub(x, h)?))
    }

    pub fn params(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}
