//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamSet;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tol: f64,
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so gradients that are
    /// zero on both sides compare as absolute differences.
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        GradCheckOptions {
            tol,
            step: 1e-5,
            floor: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_error >= self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare backward-pass gradients of the scalar built by `build` against
/// central differences, for every trainable parameter in `params`.
///
/// `build` must be deterministic given the parameter values; it is called on
/// evaluation-mode graphs.
pub fn gradient_check<F>(params: &mut ParamSet, tol: f64, build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    gradient_check_with(params, &GradCheckOptions::with_tol(tol), build)
}

pub fn gradient_check_with<F>(
    params: &mut ParamSet,
    opts: &GradCheckOptions,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    for (_, t) in params.iter_mut() {
        t.grad = None;
    }
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    g.backward(loss, params)?;

    let mut eval = |params: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let out = build(&mut g, params)?;
        g.value(out).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        params: Vec::new(),
        tol: opts.tol,
    };
    for id in params.ids().collect::<Vec<_>>() {
        let t = params.get(id);
        if !t.requires_grad {
            continue;
        }
        let analytic = t.grad.clone().expect("backward fills every trainable grad");
        let n = t.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &k in &coords {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + opts.step;
            let up = eval(params)?;
            params.get_mut(id).data_mut()[k] = orig - opts.step;
            let down = eval(params)?;
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[k], numeric, opts.floor));
        }
        report.params.push(ParamCheck {
            name: params.name(id).to_string(),
            max_rel_error: worst,
            coords_checked: coords.len(),
        });
    }
    Ok(report)
}
