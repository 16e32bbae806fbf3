use hwprox_core::autodiff::{Backend, Tape};
use hwprox_core::hwnet::{decode_params, encode_params, hwnet_forward_taped, WEIGHTS_MAGIC};
use hwprox_core::{hwnet_forward, load_params, save_params, Error, HsiCube, HwnetParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(h: usize, w: usize, b: usize, seed: u64) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HsiCube::new(h, w, b, (0..h * w * b).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn mean(c: &HsiCube) -> f64 {
    c.data().iter().sum::<f64>() / c.len() as f64
}

#[test]
fn init_is_seeded() {
    let a = HwnetParams::init(4, 7).unwrap();
    let b = HwnetParams::init(4, 7).unwrap();
    let c = HwnetParams::init(4, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.flat(), c.flat());
    assert!(HwnetParams::init(0, 1).is_err());
}

#[test]
fn parameter_count_follows_layer_shapes() {
    let c = 16;
    let shapes = [
        [c, 1, 3, 3, 1],
        [c, c, 1, 1, 3],
        [c, c, 3, 3, 1],
        [c, c, 1, 1, 3],
        [c, c, 3, 3, 1],
        [c, c, 1, 1, 3],
        [1, c, 3, 3, 3],
    ];
    let want: usize = shapes.iter().map(|s| s.iter().product::<usize>() + s[0]).sum();
    let p = HwnetParams::init(c, 0).unwrap();
    assert_eq!(p.param_count(), want);
    assert_eq!(HwnetParams::count_for(c), want);
    for (block, s) in p.blocks().iter().zip(shapes) {
        assert_eq!(block.kernel.shape(), &s[..]);
        assert_eq!(block.bias.shape(), &[s[0]][..]);
    }
    let y = uniform(64, 64, 31, 1);
    let w = hwnet_forward(&HwnetParams::init(2, 0).unwrap(), &y).unwrap();
    assert_eq!(w.dims(), (64, 64, 31));
}

#[test]
fn zero_head_gives_unit_weights() {
    let mut p = HwnetParams::init(4, 3).unwrap();
    p.zero_head();
    let w = hwnet_forward(&p, &uniform(6, 5, 4, 2)).unwrap();
    assert!(w.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn receptive_field_is_enforced() {
    let p = HwnetParams::init(2, 0).unwrap();
    let small = uniform(2, 5, 5, 0);
    assert!(matches!(hwnet_forward(&p, &small), Err(Error::Argument(_))));
}

#[test]
fn translation_equivariant_away_from_borders() {
    let p = HwnetParams::init(4, 11).unwrap();
    let big = uniform(24, 24, 5, 12);
    let (di, dj) = (2, 3);
    let crop = HsiCube::from_fn(18, 18, 5, |i, j, k| big.get(i + di, j + dj, k)).unwrap();
    let wb = hwnet_forward(&p, &big).unwrap();
    let wc = hwnet_forward(&p, &crop).unwrap();
    // four 3x3 spatial convolutions: a margin of 4 pixels sees no padding
    let margin = 4;
    let mut ratios = Vec::new();
    for i in margin..18 - margin {
        for j in margin..18 - margin {
            for k in 0..5 {
                ratios.push(wc.get(i, j, k) / wb.get(i + di, j + dj, k));
            }
        }
    }
    let r0 = ratios[0];
    assert!(ratios.iter().all(|r| (r / r0 - 1.0).abs() < 1e-10));
}

#[test]
fn taped_forward_matches_eager_bitwise() {
    let p = HwnetParams::init(3, 5).unwrap();
    let y = uniform(6, 6, 4, 6);
    let eager = hwnet_forward(&p, &y).unwrap();
    let mut tape = Tape::new();
    let yv = tape.input(y.to_tensor());
    let (_, w) = hwnet_forward_taped(&p, &mut tape, yv).unwrap();
    let taped = tape.get(w).data();
    assert!(eager.data().iter().zip(taped).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn parameter_gradients_match_finite_differences() {
    // nonzero biases keep pre-activations off the ReLU kink
    let init = HwnetParams::init(3, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let jittered: Vec<f64> = init.flat().iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
    let p = init.from_flat(&jittered).unwrap();
    let y = uniform(5, 5, 4, 22);
    let c = uniform(5, 5, 4, 23);
    let loss = |params: &HwnetParams| -> f64 {
        let w = hwnet_forward(params, &y).unwrap();
        w.data().iter().zip(c.data()).map(|(a, b)| a * b * a).sum()
    };
    let mut tape = Tape::new();
    let yv = tape.input(y.to_tensor());
    let cv = tape.input(c.to_tensor());
    let (vars, w) = hwnet_forward_taped(&p, &mut tape, yv).unwrap();
    let w2 = tape.mul(&w, &w);
    let l = tape.mul(&w2, &cv);
    let l = tape.sum(&l);
    let grads = tape.backward_scalar(l).unwrap();
    let g = p.gradients_from(&vars, &grads).flat();

    let base = p.flat();
    let mut offset = 0;
    let h = 1e-6;
    for block in p.blocks() {
        let n = block.kernel.len() + block.bias.len();
        // four kernel entries and one bias entry per block
        let mut picks: Vec<usize> = (0..4).map(|_| offset + rng.random_range(0..block.kernel.len())).collect();
        picks.push(offset + block.kernel.len());
        for i in picks {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss(&p.from_flat(&plus).unwrap()) - loss(&p.from_flat(&minus).unwrap())) / (2.0 * h);
            let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            assert!(err < 1e-5, "param {i}: analytic {} fd {fd}", g[i]);
        }
        offset += n;
    }
}

fn f32_exact(p: &HwnetParams) -> HwnetParams {
    p.map(|v| v as f32 as f64)
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.hwn");
    let p = f32_exact(&HwnetParams::init(4, 9).unwrap());
    save_params(&p, &path).unwrap();
    assert_eq!(load_params(&path).unwrap(), p);
    assert!(matches!(load_params(dir.path().join("none.hwn")), Err(Error::MissingInput(_))));
}

#[test]
fn damaged_files_are_rejected() {
    let p = HwnetParams::init(2, 1).unwrap();
    let bytes = encode_params(&p).unwrap();
    assert!(matches!(decode_params(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
    assert!(matches!(decode_params(&bytes[..6]), Err(Error::Corrupt(_))));

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(decode_params(&wrong_magic), Err(Error::Format(_))));

    // header claims 3 channels while the layer shapes describe 2
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[8..8 + hlen]).unwrap();
    let lied = header.replacen("\"channels\":2", "\"channels\":3", 1);
    assert_ne!(lied, header);
    let mut forged = WEIGHTS_MAGIC.to_vec();
    forged.extend_from_slice(&(lied.len() as u32).to_le_bytes());
    forged.extend_from_slice(lied.as_bytes());
    forged.extend_from_slice(&bytes[8 + hlen..]);
    assert!(matches!(decode_params(&forged), Err(Error::Format(_))));

    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_params(&nan), Err(Error::Corrupt(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_are_positive_with_unit_mean(seed in any::<u64>(), net_seed in any::<u64>(), h in 3usize..7, b in 3usize..6) {
        let p = HwnetParams::init(3, net_seed).unwrap();
        let w = hwnet_forward(&p, &uniform(h, 4, b, seed)).unwrap();
        prop_assert!((mean(&w) - 1.0).abs() < 1e-12);
        prop_assert!(w.data().iter().all(|&v| v > 0.0));
    }
}
