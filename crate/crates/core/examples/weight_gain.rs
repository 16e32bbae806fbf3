//! Trains a small hyper-weight network on synthetic Case-1 pairs and
//! compares the weighted nuclear-norm solve against the uniform-weight one
//! on held-out cubes.
//!
//! ```text
//! cargo run --release -p hwprox-core --example weight_gain -- [seed]
//! ```

use std::time::Instant;

use hwprox_core::admm::{solve, SolverConfig};
use hwprox_core::hwnet::{hwnet_forward, HwnetParams};
use hwprox_core::metrics::psnr;
use hwprox_core::noise::{synth_noise, NoiseCase, NoiseSpec};
use hwprox_core::regularizer::RegularizerSpec;
use hwprox_core::synthetic::{synthetic_scene, SceneParams};
use hwprox_core::trainer::{train_from, TrainConfig};
use hwprox_core::{HsiCube, PatchPair};

fn pairs(n: u64, offset: u64) -> hwprox_core::Result<Vec<PatchPair>> {
    let scene = SceneParams::new(16, 16, 8);
    (0..n)
        .map(|i| {
            let clean = synthetic_scene(&scene, offset + i)?;
            let (noisy, _) = synth_noise(&clean, &NoiseSpec::new(NoiseCase::Case1, offset + 50_000 + i))?;
            PatchPair::new(noisy, clean, format!("p{i}"))
        })
        .collect()
}

fn main() -> hwprox_core::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let zero_head = std::env::args().nth(2).is_some_and(|s| s == "zero");
    let train_set = pairs(200, 1_000 * (seed + 1))?;
    let test_set = pairs(20, 900_000)?;
    let cfg = TrainConfig {
        channels: 8,
        unroll_k: 5,
        epochs: 2,
        seed,
        ..TrainConfig::default()
    };
    let mut init = HwnetParams::init(cfg.channels, seed)?;
    if zero_head {
        init.zero_head();
    }
    let t0 = Instant::now();
    let (params, log) = train_from(&train_set, &cfg, init.clone())?;
    println!("train {:.1}s best epoch {}", t0.elapsed().as_secs_f64(), log.best_epoch);
    for e in &log.epochs {
        println!("epoch {} val loss {:.6} psnr {:?}", e.epoch, e.validation_loss, e.validation_psnr);
    }
    let first: Vec<f64> = log.steps.iter().take(3).map(|s| s.loss).collect();
    let last: Vec<f64> = log.steps.iter().rev().take(3).map(|s| s.loss).collect();
    println!("first losses {first:?} last {last:?}");
    let spec = RegularizerSpec::nuclear(3.0);
    let solver = SolverConfig::default();
    let (mut hw, mut uni, mut hw0) = (0.0, 0.0, 0.0);
    for p in &test_set {
        let ones = HsiCube::filled(16, 16, 8, 1.0)?;
        let w = hwnet_forward(&params, &p.noisy)?;
        let w0 = hwnet_forward(&init, &p.noisy)?;
        hw += psnr(&p.clean, &solve(&p.noisy, &w, &spec, &solver)?.x_hat, 1.0)?;
        hw0 += psnr(&p.clean, &solve(&p.noisy, &w0, &spec, &solver)?.x_hat, 1.0)?;
        uni += psnr(&p.clean, &solve(&p.noisy, &ones, &spec, &solver)?.x_hat, 1.0)?;
    }
    let n = test_set.len() as f64;
    println!(
        "seed {seed}: HW-NN {:.3} dB, init-W {:.3} dB, uniform {:.3} dB, gain {:.3} dB, total {:.1}s",
        hw / n,
        hw0 / n,
        uni / n,
        (hw - uni) / n,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
