//! Grid search over the trade-off and the ADMM penalty for each source
//! model, scored by mean PSNR of the unweighted solve on Case-1 noise.
//!
//! ```text
//! cargo run --release -p hwprox-core --example lambda_grid
//! ```

use hwprox_core::admm::{solve, SolverConfig};
use hwprox_core::metrics::psnr;
use hwprox_core::noise::{synth_noise, NoiseCase, NoiseSpec};
use hwprox_core::regularizer::{Penalty, RegularizerSpec};
use hwprox_core::synthetic::{synthetic_scene, SceneParams};
use hwprox_core::HsiCube;

fn main() -> hwprox_core::Result<()> {
    let scene = SceneParams::new(16, 16, 8);
    let pairs: Vec<(HsiCube, HsiCube)> = (0..10)
        .map(|i| {
            let clean = synthetic_scene(&scene, 9000 + i)?;
            let (noisy, _) = synth_noise(&clean, &NoiseSpec::new(NoiseCase::Case1, 7000 + i))?;
            Ok((clean, noisy))
        })
        .collect::<hwprox_core::Result<_>>()?;
    let ones = HsiCube::filled(16, 16, 8, 1.0)?;
    let noisy_psnr: f64 = pairs.iter().map(|(c, n)| psnr(c, n, 1.0).unwrap()).sum::<f64>() / 10.0;
    println!("noisy input: {noisy_psnr:.3} dB");

    let grids = [
        (Penalty::NuclearNorm, vec![2.5, 3.0, 3.5]),
        (Penalty::SpatialTv, vec![0.3, 0.4, 0.5, 0.6, 0.8]),
        (Penalty::SpectralTv, vec![0.15, 0.2]),
    ];
    for (penalty, lambdas) in grids {
        for &lambda in &lambdas {
            for mu in [0.1, 0.3, 0.5, 1.0] {
                let spec = RegularizerSpec::single(penalty, lambda);
                let cfg = SolverConfig { mu, ..SolverConfig::default() };
                let (mut total, mut iters, mut conv) = (0.0, 0, 0);
                for (clean, noisy) in &pairs {
                    let r = solve(noisy, &ones, &spec, &cfg)?;
                    total += psnr(clean, &r.x_hat, 1.0)?;
                    iters += r.iterations;
                    conv += r.converged as usize;
                }
                println!(
                    "{:<3} lambda {:<6} mu {:<4} psnr {:.3} iters {:>5.1} converged {}/10",
                    penalty.short_name(),
                    lambda,
                    mu,
                    total / 10.0,
                    iters as f64 / 10.0,
                    conv
                );
            }
        }
    }
    Ok(())
}
