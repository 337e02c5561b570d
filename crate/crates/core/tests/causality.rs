//! Perturbation tests for the causal structure of the encoder: no output may
//! depend on a future input, and in a linear configuration the influence
//! region must match the computed receptive field exactly.

use deeptcn_core::layers::{
    receptive_field, Activation, BufStore, Encoder, Mode, ParamStore, Session,
};
use deeptcn_core::rng::RngState;
use deeptcn_core::tape::Tape;
use deeptcn_core::tensor::Tensor;

const ARCHITECTURES: [&[usize]; 3] = [
    &[1, 2, 4, 8, 16],
    &[1, 2, 4, 8, 16, 32],
    &[1, 2, 4, 8, 16, 20, 32],
];
const INPUT_LEN: usize = 168;

fn build_encoder(
    dilations: &[usize],
    seed: u64,
) -> (ParamStore<f64>, BufStore<f64>, Encoder) {
    let mut params = ParamStore::new();
    let mut buffers = BufStore::new();
    let mut rng = RngState::new(seed);
    let encoder = Encoder::init(
        &mut params,
        &mut buffers,
        &mut rng,
        2,
        3,
        2,
        dilations,
        INPUT_LEN,
    )
    .unwrap();
    (params, buffers, encoder)
}

fn run_sequence(
    params: &ParamStore<f64>,
    buffers: &BufStore<f64>,
    encoder: &Encoder,
    input: &Tensor<f64>,
) -> Vec<f64> {
    let mut bufs = buffers.clone();
    let mut tape = Tape::new();
    let mut sess = Session::new(&mut tape, params, &mut bufs, Mode::Infer);
    let x = sess.tape.constant(input.clone());
    let out = encoder.forward_sequence(&mut sess, x).unwrap();
    tape.value(out).data().to_vec()
}

fn random_input(seed: u64) -> Tensor<f64> {
    let mut rng = RngState::new(seed);
    let data: Vec<f64> = (0..2 * INPUT_LEN).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::new(vec![1, 2, INPUT_LEN], data).unwrap()
}

#[test]
fn no_future_to_past_influence_bitwise() {
    for (ai, dilations) in ARCHITECTURES.iter().enumerate() {
        let (params, buffers, encoder) = build_encoder(dilations, 100 + ai as u64);
        let base = random_input(7 + ai as u64);
        let base_out = run_sequence(&params, &buffers, &encoder, &base);
        let channels = 3;

        // bump a handful of positions; everything strictly before each bump
        // must stay bit-identical across all output channels
        for &bump in &[1usize, 40, 97, INPUT_LEN - 1] {
            let mut perturbed = base.clone();
            for c in 0..2 {
                let idx = c * INPUT_LEN + bump;
                perturbed.data_mut()[idx] += 1.0;
            }
            let out = run_sequence(&params, &buffers, &encoder, &perturbed);
            for c in 0..channels {
                for t in 0..bump {
                    let i = c * INPUT_LEN + t;
                    assert!(
                        base_out[i].to_bits() == out[i].to_bits(),
                        "dilations {dilations:?}: future bump at {bump} leaked into t={t}"
                    );
                }
            }
        }
    }
}

#[test]
fn influence_region_matches_receptive_field_exactly() {
    for (ai, dilations) in ARCHITECTURES.iter().enumerate() {
        let rf = receptive_field(dilations, 2, 2).unwrap();
        assert!(rf <= INPUT_LEN, "architecture must fit the input");

        let (params, buffers, mut encoder) = build_encoder(dilations, 200 + ai as u64);
        // linear configuration: identity activation, batch norm disabled
        encoder.options.activation = Activation::Identity;
        encoder.options.batch_norm = false;

        let base = random_input(31 + ai as u64);
        let base_out = run_sequence(&params, &buffers, &encoder, &base);
        let last = |out: &[f64]| -> Vec<f64> {
            (0..3)
                .map(|c| out[c * INPUT_LEN + INPUT_LEN - 1])
                .collect()
        };
        let base_h = last(&base_out);

        for t in 0..INPUT_LEN {
            let mut perturbed = base.clone();
            perturbed.data_mut()[t] += 1.0; // channel 0 at position t
            let out = run_sequence(&params, &buffers, &encoder, &perturbed);
            let h = last(&out);
            let delta: f64 = base_h
                .iter()
                .zip(&h)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let inside = t >= INPUT_LEN - rf;
            if inside {
                assert!(
                    delta > 0.0,
                    "dilations {dilations:?}: position {t} inside rf {rf} had no influence"
                );
            } else {
                assert!(
                    delta == 0.0,
                    "dilations {dilations:?}: position {t} outside rf {rf} influenced h by {delta:e}"
                );
            }
        }
    }
}

#[test]
fn section_architectures_all_fit_t168() {
    for dilations in ARCHITECTURES {
        for &d in dilations {
            assert!(2 * d <= INPUT_LEN);
        }
    }
    // and an oversized dilation is rejected by the constraint
    assert!(2 * 128 > INPUT_LEN);
}
