use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, Graph, Real, Tensor, Var};

/// Initial bias of the alpha head; `sigmoid(-2) ~ 0.12` keeps the first
/// steps close to an identity curve.
pub const ALPHA_HEAD_BIAS: f64 = -2.0;

/// One same-padded convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Real = f32> {
    /// `[out, in, k, k]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        ConvLayer {
            weight: Tensor::zeros(vec![cout, cin, k, k]),
            bias: Tensor::zeros(vec![cout]),
        }
    }

    /// Zero-mean Gaussian weights with standard deviation `gain / sqrt(fan_in)`, zero bias.
    pub fn random<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / ((cin * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weight = Tensor::from_fn(vec![cout, cin, k, k], |_| T::lit(normal.sample(rng)));
        ConvLayer {
            weight,
            bias: Tensor::zeros(vec![cout]),
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn padding(&self) -> usize {
        self.kernel() / 2
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, Some(&self.bias), self.padding())
    }

    pub fn bind(&self, g: &Graph<T>) -> BoundLayer {
        BoundLayer {
            weight: g.param(self.weight.clone()),
            bias: g.param(self.bias.clone()),
            pad: self.padding(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// A [`ConvLayer`] registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub weight: Var,
    pub bias: Var,
    pad: usize,
}

impl BoundLayer {
    pub fn forward<T: Real>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        g.conv2d(x, self.weight, Some(self.bias), self.pad)
    }
}

/// Layout of a disordered module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DmArch {
    /// `conv3x3(3->w) tanh, conv3x3(w->w) tanh`, then two `conv3x3(w->3)` heads.
    Standard { width: usize },
    /// `conv3x3(3->3) tanh`, then two `conv1x1(3->3)` heads.
    Tiny,
}

impl Default for DmArch {
    fn default() -> Self {
        DmArch::Standard { width: 32 }
    }
}

impl DmArch {
    /// `(in, out, kernel)` of each trunk layer.
    pub fn trunk(self) -> Vec<(usize, usize, usize)> {
        match self {
            DmArch::Standard { width } => vec![(3, width, 3), (width, width, 3)],
            DmArch::Tiny => vec![(3, 3, 3)],
        }
    }

    /// `(in, kernel)` of both heads; heads always emit 3 channels.
    pub fn head(self) -> (usize, usize) {
        match self {
            DmArch::Standard { width } => (width, 3),
            DmArch::Tiny => (3, 1),
        }
    }
}

/// A disordered module: a tiny conv net emitting raw `(alpha, beta)` maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvModule<T: Real = f32> {
    pub arch: DmArch,
    pub trunk: Vec<ConvLayer<T>>,
    pub head_alpha: ConvLayer<T>,
    pub head_beta: ConvLayer<T>,
}

impl<T: Real> ConvModule<T> {
    pub fn zeros(arch: DmArch) -> Self {
        let (hin, hk) = arch.head();
        ConvModule {
            arch,
            trunk: arch
                .trunk()
                .into_iter()
                .map(|(i, o, k)| ConvLayer::zeros(i, o, k))
                .collect(),
            head_alpha: ConvLayer::zeros(hin, 3, hk),
            head_beta: ConvLayer::zeros(hin, 3, hk),
        }
    }

    /// Random trunk, small random heads, alpha bias at [`ALPHA_HEAD_BIAS`].
    pub fn init<R: Rng + ?Sized>(arch: DmArch, rng: &mut R) -> Self {
        let (hin, hk) = arch.head();
        let trunk = arch
            .trunk()
            .into_iter()
            .map(|(i, o, k)| ConvLayer::random(i, o, k, 1.0, rng))
            .collect();
        let mut head_alpha = ConvLayer::random(hin, 3, hk, 0.1, rng);
        head_alpha.bias = Tensor::full(vec![3], T::lit(ALPHA_HEAD_BIAS));
        let head_beta = ConvLayer::random(hin, 3, hk, 0.1, rng);
        ConvModule {
            arch,
            trunk,
            head_alpha,
            head_beta,
        }
    }

    /// A module whose alpha is numerically zero everywhere, so each curve
    /// leaves its input unchanged.
    pub fn identity(arch: DmArch) -> Self {
        let mut m = Self::zeros(arch);
        m.head_alpha.bias = Tensor::full(vec![3], T::lit(-40.0));
        m
    }

    /// Raw `(alpha, beta)` maps for a `[3,H,W]` image.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut h = x.clone();
        for layer in &self.trunk {
            h = layer.forward(&h)?.map(|v| v.tanh());
        }
        Ok((self.head_alpha.forward(&h)?, self.head_beta.forward(&h)?))
    }

    pub fn bind(&self, g: &Graph<T>) -> BoundModule {
        BoundModule {
            trunk: self.trunk.iter().map(|l| l.bind(g)).collect(),
            head_alpha: self.head_alpha.bind(g),
            head_beta: self.head_beta.bind(g),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = (String, &ConvLayer<T>)> {
        self.trunk
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("trunk.{i}"), l))
            .chain([
                ("head_alpha".to_string(), &self.head_alpha),
                ("head_beta".to_string(), &self.head_beta),
            ])
    }

    /// Every tensor with its name, in a fixed order shared with [`ConvModule::tensors_mut`].
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &l.weight),
                    (format!("{name}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.trunk
            .iter_mut()
            .chain([&mut self.head_alpha, &mut self.head_beta])
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(_, l)| l.param_count()).sum()
    }

    /// True when both modules have the same layer shapes.
    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ModelState(format!(
                "module architectures differ: {:?} vs {:?}",
                self.arch, other.arch
            )))
        }
    }

    pub fn cast<U: Real>(&self) -> ConvModule<U> {
        ConvModule {
            arch: self.arch,
            trunk: self.trunk.iter().map(ConvLayer::cast).collect(),
            head_alpha: self.head_alpha.cast(),
            head_beta: self.head_beta.cast(),
        }
    }
}

/// A [`ConvModule`] registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundModule {
    pub trunk: Vec<BoundLayer>,
    pub head_alpha: BoundLayer,
    pub head_beta: BoundLayer,
}

impl BoundModule {
    pub fn forward<T: Real>(&self, g: &Graph<T>, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for layer in &self.trunk {
            h = g.tanh(layer.forward(g, h)?);
        }
        Ok((self.head_alpha.forward(g, h)?, self.head_beta.forward(g, h)?))
    }

    /// Parameter handles in [`ConvModule::tensors_mut`] order.
    pub fn params(&self) -> Vec<Var> {
        self.trunk
            .iter()
            .chain([&self.head_alpha, &self.head_beta])
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}
