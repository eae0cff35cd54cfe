use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// One dense layer: `weight` is `[in × out]`, `bias` is `[1 × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Parameters of a ReLU multilayer perceptron. The last layer emits raw logits.
///
/// The same type doubles as the container for gradients and momentum buffers,
/// since those mirror the parameter shapes one to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.out_dim()) {
                return Err(Error::shape(
                    "ModelParams::new",
                    format!("bias 1x{} in layer {i}", l.out_dim()),
                    format!("{}x{}", l.bias.rows(), l.bias.cols()),
                ));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "ModelParams::new",
                    format!("layer {} in-dim {}", i + 1, pair[0].out_dim()),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// He-normal weights, zero biases. `dims` lists every width from input to output.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!(
                "model dims must have >= 2 positive entries, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .expect("finite positive std");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Layer {
                    weight: DenseMatrix::new(fan_in, fan_out, data).expect("sized"),
                    bias: DenseMatrix::zeros(1, fan_out),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("model dims must have >= 2 entries"));
        }
        Self::new(
            dims.windows(2)
                .map(|w| Layer {
                    weight: DenseMatrix::zeros(w[0], w[1]),
                    bias: DenseMatrix::zeros(1, w[1]),
                })
                .collect(),
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DenseMatrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: DenseMatrix::zeros(1, l.bias.cols()),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths from input to output, e.g. `[784, 64, 10]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(Layer::out_dim));
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape())
    }

    pub(crate) fn check_same_shape(&self, context: &'static str, other: &ModelParams) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                context,
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        Ok(())
    }

    /// Parameter tensors in a fixed order: w0, b0, w1, b1, ...
    pub fn tensors(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut DenseMatrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            v.extend_from_slice(t.data());
        }
        v
    }

    /// Rebuilds a model with this model's shapes from a flat vector.
    pub fn unflatten(&self, values: &[f64]) -> Result<ModelParams> {
        if values.len() != self.num_params() {
            return Err(Error::shape(
                "unflatten",
                format!("{} values", self.num_params()),
                format!("{} values", values.len()),
            ));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for t in out.tensors_mut() {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// `self += k · other`
    pub fn axpy(&mut self, k: f64, other: &ModelParams) -> Result<()> {
        self.check_same_shape("ModelParams::axpy", other)?;
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.axpy(k, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors_mut().for_each(|t| t.scale(k));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(DenseMatrix::is_finite)
    }

    /// Euclidean distance between two same-shaped models.
    pub fn distance(&self, other: &ModelParams) -> Result<f64> {
        self.check_same_shape("ModelParams::distance", other)?;
        let sq: f64 = self
            .tensors()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)))
            .sum();
        Ok(sq.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_incompatible_layers() {
        let layers = vec![
            Layer {
                weight: DenseMatrix::zeros(3, 4),
                bias: DenseMatrix::zeros(1, 4),
            },
            Layer {
                weight: DenseMatrix::zeros(5, 2),
                bias: DenseMatrix::zeros(1, 2),
            },
        ];
        assert!(matches!(ModelParams::new(layers), Err(Error::Shape { .. })));
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let m = ModelParams::zeros(&[2, 3, 2]).unwrap();
        assert_eq!(m.num_params(), 6 + 3 + 6 + 2);
        assert!(m.unflatten(&[0.0; 5]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trip_is_bitwise(
            seed in any::<u64>(),
            dims in prop::collection::vec(1usize..8, 2..5),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = ModelParams::init(&dims, &mut rng).unwrap();
            let flat = m.flatten();
            let back = m.zeros_like().unflatten(&flat).unwrap();
            prop_assert_eq!(back.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            flat.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, m);
        }
    }
}
