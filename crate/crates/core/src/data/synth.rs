use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// Smallest distance kept between class means, so a vanishing spread still
/// yields a learnable problem.
const MIN_SEPARATION: f64 = 1.0;

/// Class means with pairwise distance at least `separation`.
///
/// With `dim >= classes` the means sit on scaled basis vectors (a simplex),
/// otherwise on a circle in the first two coordinates, or on a line when
/// `dim == 1`.
pub fn class_means(num_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut means = vec![vec![0.0; dim]; num_classes];
    if num_classes <= 1 {
        return means;
    }
    if dim >= num_classes {
        let r = separation / std::f64::consts::SQRT_2;
        for (c, m) in means.iter_mut().enumerate() {
            m[c] = r;
        }
    } else if dim >= 2 {
        let k = num_classes as f64;
        let r = separation / (2.0 * (std::f64::consts::PI / k).sin());
        for (c, m) in means.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / k;
            m[0] = r * angle.cos();
            m[1] = r * angle.sin();
        }
    } else {
        for (c, m) in means.iter_mut().enumerate() {
            m[0] = separation * c as f64;
        }
    }
    means
}

/// Isotropic Gaussian blobs, `per_class` samples per class, laid out class by class.
pub fn synth_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::invalid("synth_blobs counts must all be >= 1"));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::invalid(format!("spread must be positive, got {spread}")));
    }
    let means = class_means(num_classes, dim, (4.0 * spread).max(MIN_SEPARATION));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(DenseMatrix::new(n, dim, data)?, labels, num_classes)
}
