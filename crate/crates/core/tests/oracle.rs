use df2_core::netspec::{infer_geometry, InputShape, LayerGeometry, NetworkSpec};
use df2_core::oracle::{count_macs, count_ops, reference_inference, OracleError};
use df2_core::quantizer::QuantizedModel;
use df2_core::synth::{self, NetShape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn net(input: InputShape, layers: &[&str]) -> Vec<LayerGeometry> {
    infer_geometry(&NetworkSpec::from_notation("o", input, 100.0, layers).unwrap()).unwrap()
}

#[test]
fn zero_image_potentials_are_zero() {
    let g = net(InputShape::new(8, 8, 3), &["pConv3-1-8/b1", "Conv2-2-8/b1", "Fc-4/b1"]);
    let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(1), &g);
    let r = reference_inference(&g, &model, &vec![0; 8 * 8 * 3]).unwrap();
    let first = &r.layers[0];
    assert!(first.potentials.iter().all(|&p| p == 0));
    for (i, &s) in first.spikes.iter().enumerate() {
        assert_eq!(s, 0 > model.layers[0].thresholds[i % 8]);
    }
}

#[test]
fn degenerate_window_is_a_dot_product() {
    let g = net(InputShape::new(3, 3, 2), &["Conv3-1-1/b1", "Fc-1/b1"]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = synth::random_quantized_model(&mut rng, &g);
    let image: Vec<u8> = (0..18).map(|_| rng.gen()).collect();
    let r = reference_inference(&g, &model, &image).unwrap();
    assert_eq!(r.layers[0].potentials.len(), 1);
    // One beat per kernel position; lanes 0 and 1 carry the two channels.
    let mut dot = 0i32;
    for pos in 0..9 {
        for ch in 0..2 {
            dot += image[pos * 2 + ch] as i32 * model.layers[0].weights[pos][ch] as i32;
        }
    }
    assert_eq!(r.layers[0].potentials[0], dot);
}

#[test]
fn class_is_first_maximum() {
    let g = net(InputShape::new(2, 2, 1), &["Conv2-2-8/b1", "Fc-3/b1"]);
    let mut model: QuantizedModel = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(3), &g);
    for beat in &mut model.layers[1].weights {
        *beat = [0; 8];
    }
    // Every classifier potential is zero: the tie resolves to class 0.
    let r = reference_inference(&g, &model, &[9, 9, 9, 9]).unwrap();
    assert_eq!(r.final_potentials(), &[0, 0, 0]);
    assert_eq!(r.class(), 0);
}

#[test]
fn shape_errors() {
    let g = net(InputShape::new(4, 4, 1), &["pConv3-1-8/b1", "Fc-2/b1"]);
    let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(4), &g);
    assert!(reference_inference(&g, &model, &[0; 15]).is_err());
    let mut short = model.clone();
    short.layers.pop();
    assert!(matches!(
        reference_inference(&g, &short, &[0; 16]),
        Err(OracleError::LayerCount { .. })
    ));
}

#[test]
fn mac_counts() {
    let g = net(InputShape::new(28, 28, 1), &["pConv3-1-16/b1", "Fc-10/b1"]);
    assert_eq!(count_macs(&g[..1]), 28 * 28 * 16 * 9);
    assert_eq!(count_macs(&g[1..]), 28 * 28 * 16 * 10);
    let fc = net(InputShape::new(2, 2, 32), &["Conv2-2-128/b1", "Fc-10/b1"]);
    assert_eq!(count_macs(&fc[1..]), 1_280);
    assert_eq!(count_macs(&[]), 0);
}

proptest! {
    #[test]
    fn ops_are_twice_macs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = synth::random_network(&mut rng, NetShape::default());
        let g = infer_geometry(&spec).unwrap();
        prop_assert_eq!(count_ops(&g), 2 * count_macs(&g));
    }

    /// Shifting the image by one stride along the columns shifts every
    /// output of a valid first layer by one column.
    #[test]
    fn valid_convolution_commutes_with_shift(
        seed in any::<u64>(),
        stride in 1usize..=2,
        rows in 3usize..9,
        cols in 5usize..10,
        channels in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = [format!("Conv3-{stride}-8/b1"), "Fc-2/b1".to_string()];
        let refs: Vec<&str> = layers.iter().map(String::as_str).collect();
        let g = net(InputShape::new(rows, cols, channels), &refs);
        let model = synth::random_quantized_model(&mut rng, &g);
        let image: Vec<u8> = (0..rows * cols * channels).map(|_| rng.gen()).collect();
        let mut shifted = vec![0u8; image.len()];
        for r in 0..rows {
            for c in stride..cols {
                for ch in 0..channels {
                    shifted[(r * cols + c) * channels + ch] = image[(r * cols + c - stride) * channels + ch];
                }
            }
        }
        let a = reference_inference(&g, &model, &image).unwrap();
        let b = reference_inference(&g, &model, &shifted).unwrap();
        let out = g[0].out_dims;
        for r in 0..out.rows {
            for c in 0..out.cols - 1 {
                for ch in 0..out.channels {
                    let ia = (r * out.cols + c) * out.channels + ch;
                    let ib = (r * out.cols + c + 1) * out.channels + ch;
                    prop_assert_eq!(a.layers[0].potentials[ia], b.layers[0].potentials[ib]);
                }
            }
        }
    }
}
