//! Solves the centering equation for a biased walk on F₂ and compares variance routes.

use hyperwalk::martingale::{accelerated_variance, DriftCocycle};
use hyperwalk::walk::StepMeasure;

fn main() -> Result<(), hyperwalk::error::Error> {
    let m = StepMeasure::biased_f2(8);
    let c = DriftCocycle::solve(&m, 1, 1)?;
    let s = &c.solution;
    println!("drift {:.6}  residual {:.2e}  sup|psi| {:.4}", s.ell, s.residual, s.sup_norm);

    let sigma_sq: f64 = s.stationary.iter().zip(c.phi_values()).map(|(p, f)| p * f).sum();
    println!("sigma^2 (stationary mean of phi) {sigma_sq:.4}  v(mu) {:.4}", c.v_mu());

    for k in [1, 2, 4] {
        let a = accelerated_variance(&m, k, 8, s.ell)?;
        println!("k = {k}: {a:?}");
    }
    Ok(())
}
