//! Closed-form critical window in optimizer steps, with the coupling
//! constant and its Monte Carlo check.
//!
//! cargo run --release --example predict_window -- [gamma] [eta]

use critwin::theory::{
    coupling_constant, coupling_moment_mc, flow_rates, half_times, predict_window, StylizedConfig, StylizedProblem,
};

fn main() -> critwin::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let gamma = args.first().copied().unwrap_or(0.8);
    let eta = args.get(1).copied().unwrap_or(3e-3);
    let p = StylizedProblem::new(&StylizedConfig::reference(gamma, 0))?;
    println!(
        "σ_e = {:.4}, σ_u = {:.4}, c_r = {}",
        p.sigma_e,
        p.sigma_u,
        coupling_constant(&p)
    );
    let mc = coupling_moment_mc(&p, gamma, 20_000, 1)?;
    println!(
        "E[S(W₂)] Monte Carlo {:.5} ± {:.5} vs closed form {:.5} (z = {:.2})",
        mc.mean,
        mc.std_err,
        mc.expected,
        mc.z_score()
    );
    let (tm, tr) = half_times(&p, gamma);
    println!("half-times: memorization {tm:.2}, reasoning {tr:.2} (flow time)");
    let (mu_m, mu_r) = flow_rates(&p, gamma);
    println!("flow rates of this model: μ_m = {mu_m:.4}, μ_r = {mu_r:.4}");
    for delta in [0.5, 0.25, 0.1] {
        let w = predict_window(&p, gamma, eta, delta, Some(20_000.0))?;
        println!(
            "δ = {delta}: t1 = {:.0} steps, t2 = {:.0} steps{}",
            w.t1,
            w.t2_raw,
            if w.t2_clamped { " (beyond T = 20000)" } else { "" }
        );
    }
    Ok(())
}
