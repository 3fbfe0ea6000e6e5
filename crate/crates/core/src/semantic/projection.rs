use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, ParamStore};
use crate::util::Rng;

/// Frozen principal-component projection fitted on training-corpus encodings.
/// `transform` multiplies by the component matrix without re-centering, so
/// the zero vector maps to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// `input_dim × k`, orthonormal columns in decreasing variance order.
    pub components: Mat,
    pub mean: Vec<f64>,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
    pub total_variance: f64,
}

impl Pca {
    /// Top-`k` components of the centered rows of `corpus`.
    pub fn fit(corpus: &Mat, k: usize) -> Result<Self> {
        let (n, dim) = corpus.dim();
        if k == 0 || k > dim {
            return Err(Error::Config(format!("PCA width {k} must be in 1..={dim}")));
        }
        if n < k {
            return Err(Error::Config(format!(
                "PCA needs at least {k} encodings, have {n}; lower d_mid"
            )));
        }
        let mean = corpus.mean_axis(ndarray::Axis(0)).expect("nonempty corpus");
        let centered = corpus - &mean;
        let cov = centered.t().dot(&centered) / n as f64;
        let eig = SymmetricEigen::new(DMatrix::from_fn(dim, dim, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
        let mut components = Mat::zeros((dim, k));
        let mut variances = Vec::with_capacity(k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            let col = eig.eigenvectors.column(idx);
            // Sign convention: the largest-magnitude entry is positive.
            let pivot = (0..dim).max_by(|a, b| col[*a].abs().total_cmp(&col[*b].abs())).unwrap_or(0);
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for r in 0..dim {
                components[[r, c]] = sign * col[r];
            }
            variances.push(eig.eigenvalues[idx].max(0.0));
        }
        let total_variance = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        Ok(Self { components, mean: mean.to_vec(), variances, total_variance })
    }

    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v / self.total_variance.max(f64::MIN_POSITIVE)).collect()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "PCA expects {} dims, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let v = ndarray::ArrayView1::from(x);
        Ok(self.components.t().dot(&v).to_vec())
    }

    /// Orthogonal projector onto the component span, `C Cᵀ`.
    pub fn projector(&self) -> Mat {
        self.components.dot(&self.components.t())
    }
}

/// Trainable two-layer map from the PCA space to the model width.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub mlp: Mlp,
}

impl Adapter {
    pub fn new(ps: &mut ParamStore, name: &str, rng: &mut Rng, input: usize, dim: usize) -> Self {
        Self { mlp: Mlp::new(ps, name, rng, (input, dim, dim), Activation::Tanh) }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Var {
        self.mlp.forward(g, ps, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;
    use approx::assert_abs_diff_eq;

    fn corpus(n: usize, dim: usize, rank: usize, seed: u64) -> Mat {
        let mut rng = rng_for(seed, "pca");
        let basis = crate::nn::normal(&mut rng, rank, dim, 1.0);
        let coef = crate::nn::normal(&mut rng, n, rank, 1.0);
        coef.dot(&basis)
    }

    #[test]
    fn low_rank_data_leaves_trailing_components_empty() {
        let pca = Pca::fit(&corpus(50, 8, 2, 1), 5).unwrap();
        let ratio = pca.explained_variance_ratio();
        assert!(ratio[0] + ratio[1] > 1.0 - 1e-9);
        assert!(ratio[2..].iter().all(|r| *r < 1e-9));
    }

    #[test]
    fn components_are_orthonormal_and_projector_idempotent() {
        let pca = Pca::fit(&corpus(40, 6, 6, 2), 3).unwrap();
        let gram = pca.components.t().dot(&pca.components);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(gram[[i, j]], f64::from(u8::from(i == j)), epsilon = 1e-9);
            }
        }
        let p = pca.projector();
        let pp = p.dot(&p);
        for (a, b) in p.iter().zip(pp.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let inside = pca.components.column(0).to_vec();
        let proj = p.dot(&ndarray::ArrayView1::from(&inside));
        for (a, b) in proj.iter().zip(&inside) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_maps_to_zero_and_dims_are_checked() {
        let pca = Pca::fit(&corpus(30, 6, 6, 3), 4).unwrap();
        assert_eq!(pca.transform(&[0.0; 6]).unwrap(), vec![0.0; 4]);
        assert!(pca.transform(&[0.0; 5]).is_err());
        assert!(Pca::fit(&corpus(3, 6, 6, 3), 4).is_err());
    }

    #[test]
    fn adapter_output_width() {
        let mut ps = ParamStore::new();
        let ad = Adapter::new(&mut ps, "ad", &mut rng_for(0, "ad"), 4, 7);
        let mut g = Graph::new();
        let x = g.constant(Mat::zeros((3, 4)));
        let y = ad.forward(&mut g, &ps, x);
        assert_eq!(g.shape(y), (3, 7));
    }
}
