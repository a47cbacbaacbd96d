mod common;

use kbie::kbmodule::WeightingScheme;
use kbie_tensor::{gradient_check_with, GradCheckOptions};

fn check(scheme: Option<WeightingScheme>, seed: u64) -> f64 {
    let mut model = common::micro_model(scheme, seed);
    let doc = common::micro_doc();
    let mut params = std::mem::take(&mut model.params);
    let opts = GradCheckOptions {
        max_coords: Some(6),
        seed,
        ..GradCheckOptions::with_tol(1e-3)
    };
    let report = gradient_check_with(&mut params, &opts, |g, p| {
        let out = model.forward(g, p, &doc, None).map_err(to_tensor)?;
        Ok(model.loss(g, &out, &doc).map_err(to_tensor)?.total)
    })
    .unwrap();
    assert!(
        report.passed(),
        "{scheme:?} seed {seed}: {:?}",
        report.failures().collect::<Vec<_>>()
    );
    report.max_error()
}

fn to_tensor(e: kbie::KbieError) -> kbie_tensor::TensorError {
    kbie_tensor::TensorError::Contract(e.to_string())
}

#[test]
fn full_model_matches_finite_differences_over_twenty_seeds() {
    for seed in 0..20 {
        check(Some(WeightingScheme::AttPrior), seed);
    }
}

#[test]
fn every_scheme_and_the_baseline_pass() {
    check(None, 100);
    for s in WeightingScheme::ALL {
        check(Some(s), 101);
    }
}
