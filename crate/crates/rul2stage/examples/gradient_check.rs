//! Verify the hand-written backward pass against central finite differences.
//!
//! Samples a tiny stacked-LSTM model, picks an input whose rectifier
//! pre-activations sit safely away from zero (so the finite-difference
//! stencil cannot cross a kink), and compares every analytic partial to
//! (L(w+h) - L(w-h)) / 2h.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rul2stage::nn::{
    finite_difference_check, sample_gradient_check_case, Head, LossKind, ModelSpec,
};

fn main() -> rul2stage::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let cases = [
        (LossKind::Bce, Head::Hs),
        (LossKind::Mae, Head::Rul),
        (LossKind::Mse, Head::Rul),
    ];
    for (loss, head) in cases {
        let spec = ModelSpec {
            n_steps: 3,
            step_input: 6,
            hidden: 4,
            layers_per_stack: 2,
            num_stacks: 1,
            dense_units: 8,
            head,
        };
        // Margin 1e-4 on the dense/head pre-activations: the probe step
        // h = 1e-5 moves them far less than that, so ReLU stays linear
        // across the whole stencil and the comparison is exact.
        let (params, input, target) = sample_gradient_check_case(&spec, &mut rng, 1e-4)?;
        let report = finite_difference_check(&spec, &params, &input, target, loss, 1e-5)?;
        println!(
            "{:?} loss: {} params checked, max relative error {:.3e} (worst at #{})",
            loss, report.n_params, report.max_rel_err, report.worst_param
        );
        assert!(report.max_rel_err < 1e-4, "gradient mismatch");
    }

    println!("\nall heads and losses agree with finite differences");
    Ok(())
}
