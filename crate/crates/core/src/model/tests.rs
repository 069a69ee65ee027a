use proptest::prelude::*;

use super::*;
use crate::numerics::{Tape, Tensor};

fn image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn([3, h, w], |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

fn tiny() -> Oetr<f64> {
    Oetr::new(ModelConfig::tiny(), 3).unwrap()
}

#[test]
fn backbone_reaches_stride_sixteen_and_shares_weights() {
    let m = tiny();
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    let x = tape.constant(image(1, 64, 64));
    let y = tape.constant(image(1, 64, 64));
    let fx = g.backbone(x).unwrap();
    let fy = g.backbone(y).unwrap();
    assert_eq!(tape.shape(fx), vec![8, 4, 4]);
    assert_eq!(*tape.value(fx), *tape.value(fy));
    let bad = tape.constant(Tensor::zeros([3, 48, 64]));
    assert!(g.backbone(bad).is_err());
}

#[test]
fn zero_image_gives_constant_planes() {
    let m = tiny();
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    let f = g.backbone(tape.constant(Tensor::zeros([3, 64, 64]))).unwrap();
    let v = tape.value(f);
    // Zero padding equals the zero input, so every plane is flat.
    for plane in v.data().chunks(16) {
        assert!(plane.iter().all(|&x| x == plane[0]));
    }
}

#[test]
fn msf_grid_and_channels() {
    let m = tiny();
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    // The tiny backbone ends in 8 channels.
    let feat8 = tape.constant(Tensor::from_fn([8, 76, 76], |i| (i as f64 * 0.37).sin()));
    let stack = g.msf(feat8, vec![true; 38 * 38]).unwrap();
    assert_eq!(stack.grid, (38, 38));
    assert_eq!(tape.shape(stack.flat), vec![1444, 8]);
    assert!(g.msf(feat8, vec![true; 10]).is_err());

    let zero = tape.constant(Tensor::zeros([8, 8, 8]));
    let stack = g.msf(zero, vec![true; 16]).unwrap();
    let v = tape.value(stack.flat);
    let first = v.data()[..8].to_vec();
    for row in v.data().chunks(8) {
        assert_eq!(row, first.as_slice());
    }
    let mut biases = Vec::new();
    for k in [4, 8, 16] {
        biases.extend_from_slice(m.params().by_name(&format!("msf.k{k}.bias")).unwrap().data());
    }
    assert_eq!(first, biases);
}

#[test]
fn default_split_concatenates_to_d_model() {
    let c = ModelConfig {
        d_model: 256,
        msf_split: vec![128, 64, 64],
        ..ModelConfig::default()
    };
    let m: Oetr<f32> = Oetr::new(c, 0).unwrap();
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    let f = tape.constant(Tensor::zeros([128, 4, 4]));
    let s = g.msf(f, vec![true; 4]).unwrap();
    assert_eq!(tape.shape(s.flat), vec![4, 256]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn msf_halves_every_even_grid(h in 1usize..12, w in 1usize..12) {
        let m = tiny();
        let tape = Tape::new();
        let g = m.bind(&tape, false);
        let f = tape.constant(Tensor::zeros([8, 2 * h, 2 * w]));
        let s = g.msf(f, vec![true; h * w]).unwrap();
        prop_assert_eq!(s.grid, (h, w));
    }
}

fn encoded(m: &Oetr<f64>, tape: &Tape<f64>, a: &Tensor<f64>, b: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let g = m.bind(tape, false);
    let fa = g.features(tape.constant(a.clone()), (64, 64)).unwrap();
    let fb = g.features(tape.constant(b.clone()), (64, 64)).unwrap();
    let (ea, eb) = g.encoder(&fa, &fb).unwrap();
    assert_eq!(tape.shape(ea.current()), tape.shape(fa.flat));
    ((*tape.value(ea.current())).clone(), (*tape.value(eb.current())).clone())
}

#[test]
fn encoder_is_swap_symmetric() {
    let m = tiny();
    let (a, b) = (image(4, 64, 64), image(5, 64, 64));
    let tape = Tape::new();
    let (fa, fb) = encoded(&m, &tape, &a, &b);
    let (gb, ga) = encoded(&m, &tape, &b, &a);
    assert_eq!(fa, ga);
    assert_eq!(fb, gb);
    let (sa, sb) = encoded(&m, &tape, &a, &a);
    assert_eq!(sa, sb);
}

#[test]
fn decoder_shape_and_determinism() {
    let m = tiny();
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    let f = FeatureStack {
        flat: tape.constant(Tensor::from_fn([6, 8], |i| (i as f64).cos())),
        correlated: None,
        grid: (2, 3),
        mask: vec![true; 6],
    };
    let q1 = g.decoder(&f).unwrap();
    let q2 = g.decoder(&f).unwrap();
    assert_eq!(tape.shape(q1), vec![1, 8]);
    assert_eq!(*tape.value(q1), *tape.value(q2));
}

#[test]
fn decoder_ignores_row_order_of_position_free_memory() {
    // Cross-attention sums over keys, so permuting memory rows only reorders
    // the sum.
    let m = tiny();
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    let rows: Vec<Vec<f64>> = (0..4).map(|r| (0..8).map(|c| ((r * 8 + c) as f64 * 0.7).sin()).collect()).collect();
    let make = |order: [usize; 4]| FeatureStack {
        flat: tape.constant(Tensor::new([4, 8], order.iter().flat_map(|&r| rows[r].clone()).collect()).unwrap()),
        correlated: None,
        grid: (2, 2),
        mask: vec![true; 4],
    };
    let q1 = g.decoder(&make([0, 1, 2, 3])).unwrap();
    let q2 = g.decoder(&make([2, 0, 3, 1])).unwrap();
    assert!(tape.value(q1).max_abs_diff(&tape.value(q2)) < 1e-12);
}

fn stack(tape: &Tape<f64>, seed: u64, grid: (usize, usize)) -> FeatureStack {
    let n = grid.0 * grid.1;
    FeatureStack {
        flat: tape.constant(Tensor::from_fn([n, 8], |i| ((i as u64 * 31 + seed) as f64 * 0.13).sin())),
        correlated: None,
        grid,
        mask: vec![true; n],
    }
}

#[test]
fn uniform_centerness_logits_give_the_grid_center() {
    let mut m = tiny();
    let last = ModelConfig::tiny().centerness_channels.len();
    let w = m.params_mut().by_name_mut(&format!("centerness.{last}.weight")).unwrap();
    *w = Tensor::zeros(w.shape().to_vec());
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    let f = stack(&tape, 1, (3, 5));
    let q = tape.constant(Tensor::from_fn([1, 8], |i| i as f64 - 3.0));
    let c = g.ws_centerness(q, &f).unwrap();
    let center = tape.value(c.center);
    assert!((center.data()[0] - 0.5).abs() < 1e-12 && (center.data()[1] - 0.5).abs() < 1e-12);
    assert!(tape.value(c.prob).data().iter().all(|&p| (p - 1.0 / 15.0).abs() < 1e-12));
}

#[test]
fn peaked_centerness_lands_on_its_cell() {
    let mut m = tiny();
    let last = ModelConfig::tiny().centerness_channels.len();
    let w = m.params_mut().by_name_mut(&format!("centerness.{last}.weight")).unwrap();
    *w = Tensor::zeros(w.shape().to_vec());
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    // Masking all cells but (1, 3) of a 2x4 grid yields a delta there.
    let mut f = stack(&tape, 2, (2, 4));
    f.mask = (0..8).map(|n| n == 7).collect();
    let q = tape.constant(Tensor::full([1, 8], 0.3));
    let c = g.ws_centerness(q, &f).unwrap();
    let center = tape.value(c.center);
    assert!((center.data()[0] - 3.5 / 4.0).abs() < 1e-12);
    assert!((center.data()[1] - 1.5 / 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn centerness_stays_normalized(seed in 0u64..1000, gh in 1usize..5, gw in 1usize..5) {
        let m = tiny();
        let tape = Tape::new();
        let g = m.bind(&tape, false);
        let f = stack(&tape, seed, (gh, gw));
        let q = tape.constant(Tensor::from_fn([1, 8], |i| ((i as u64 + seed) as f64).cos() * 3.0));
        let c = g.ws_centerness(q, &f).unwrap();
        let p = tape.value(c.prob);
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|&v| v >= 0.0));
        prop_assert!(tape.value(c.center).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn offsets_are_open_unit_interval(seed in 0u64..1000) {
        let m = tiny();
        let tape = Tape::new();
        let g = m.bind(&tape, false);
        let q = tape.constant(Tensor::from_fn([1, 8], |i| ((i as u64 * 7 + seed) as f64).sin() * 10.0));
        let o = g.box_regression(q).unwrap();
        prop_assert!(tape.value(o).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn zero_box_logits_give_halves() {
    let mut m = tiny();
    for name in ["box.down.weight", "box.down.bias"] {
        let p = m.params_mut().by_name_mut(name).unwrap();
        *p = Tensor::zeros(p.shape().to_vec());
    }
    let tape = Tape::new();
    let g = m.bind(&tape, false);
    let o = g.box_regression(tape.constant(Tensor::full([1, 8], 1.0))).unwrap();
    assert_eq!(tape.value(o).data(), &[0.5; 4]);
}

#[test]
fn forward_swaps_exactly_and_stays_in_bounds() {
    let m = tiny();
    let (a, b) = (image(7, 64, 64), image(8, 64, 64));
    let (pa, pb) = m.predict(&a, &b).unwrap();
    let (qb, qa) = m.predict(&b, &a).unwrap();
    assert_eq!(pa, qa);
    assert_eq!(pb, qb);
    for p in [&pa, &pb] {
        assert!(p.bbox.x_min >= 0.0 && p.bbox.y_min >= 0.0 && p.bbox.x_max <= 64.0 && p.bbox.y_max <= 64.0);
        assert_eq!(p.grid, (2, 2));
    }
    assert!(m.predict(&a, &image(1, 32, 32)).is_err());
}

#[test]
fn padded_cells_get_no_probability() {
    let m = tiny();
    let (a, b) = (image(9, 64, 64), image(10, 64, 64));
    let (pa, _) = m.predict_valid(&a, &b, (30, 64), (64, 64)).unwrap();
    assert_eq!(&pa.prob[2..], &[0.0, 0.0]);
    assert_eq!(cell_mask((2, 2), 32, (30, 64)), vec![true, true, false, false]);
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let m = tiny();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), m.config(), m.params(), Default::default()).unwrap();
    let back: Oetr<f64> = Oetr::load(dir.path()).unwrap();
    assert_eq!(back.params(), m.params());

    let mut manifest = read_manifest(dir.path()).unwrap();
    manifest.config.ffn_hidden += 1;
    std::fs::write(dir.path().join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
    assert!(matches!(Oetr::<f64>::load(dir.path()), Err(crate::OetrError::Load(_))));
}

#[test]
fn end_to_end_loss_gradients_match_finite_differences() {
    let report = crate::loss::model_loss_grad_check(ModelConfig::tiny(), 3, 32).unwrap();
    assert_eq!(report.coordinates, tiny().params().scalar_count());
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
