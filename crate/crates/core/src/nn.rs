use kbie_tensor::{Graph, ParamId, ParamSet, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

/// Glorot-uniform `rows x cols` matrix.
pub fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Result<Tensor> {
    let b = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-b..b)).collect();
    Ok(Tensor::matrix(rows, cols, data)?.with_grad())
}

/// Trainable zero matrix.
pub fn zeros_param(rows: usize, cols: usize) -> Tensor {
    Tensor::zeros(vec![rows, cols]).with_grad()
}

/// Row-wise feed-forward network; the activation sits between layers only.
#[derive(Clone, Debug, PartialEq)]
pub struct Ffnn {
    pub layers: Vec<(ParamId, ParamId)>,
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Ffnn {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(config_err(format!("{prefix}: bad layer sizes {dims:?}")));
        }
        let mut layers = Vec::new();
        for (k, w) in dims.windows(2).enumerate() {
            let wid = params.add(format!("{prefix}/w{k}"), glorot(rng, w[0], w[1])?)?;
            let bid = params.add(format!("{prefix}/b{k}"), zeros_param(1, w[1]))?;
            layers.push((wid, bid));
        }
        Ok(Ffnn {
            layers,
            activation,
            input_dim: dims[0],
            output_dim: dims[dims.len() - 1],
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> kbie_tensor::Result<Var> {
        let mut h = x;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            if k > 0 {
                h = match self.activation {
                    Activation::Relu => g.relu(h)?,
                    Activation::Tanh => g.tanh(h)?,
                };
            }
            let (wv, bv) = (g.param(params, w), g.param(params, b));
            let z = g.matmul(h, wv)?;
            h = g.add(z, bv)?;
        }
        Ok(h)
    }

    /// Forward pass on plain rows, outside any training graph.
    pub fn eval_rows(&self, params: &ParamSet, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(rows)?);
        let y = self.forward(&mut g, params, x)?;
        let t = g.value(y);
        Ok((0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect())
    }
}
