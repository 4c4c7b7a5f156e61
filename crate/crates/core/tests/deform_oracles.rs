use kbnet_core::deform::{
    bilinear_sample, deform_conv, deform_conv_backward, deform_conv_grad_check, DeformInstance, FeatureMap,
    OffsetField, KINK_MARGIN,
};
use ndarray::{Array1, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Zero-padded bilinear read written out corner by corner.
fn bilinear_ref(f: &FeatureMap, c: usize, y: f64, x: f64) -> f64 {
    let (_, h, w) = f.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let mut acc = 0.0;
    for (yy, wy) in [(y0, 1.0 - (y - y0)), (y0 + 1.0, y - y0)] {
        for (xx, wx) in [(x0, 1.0 - (x - x0)), (x0 + 1.0, x - x0)] {
            if yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64 {
                acc += wy * wx * f[[c, yy as usize, xx as usize]];
            }
        }
    }
    acc
}

fn deform_ref(f: &FeatureMap, off: &OffsetField, wts: &Array4<f64>, bias: &Array1<f64>) -> Array3<f64> {
    let (c_in, h, w) = f.dim();
    let oc = wts.dim().0;
    Array3::from_shape_fn((oc, h, w), |(o, y, x)| {
        let mut acc = bias[o];
        for c in 0..c_in {
            for i in 0..3 {
                for j in 0..3 {
                    let m = i * 3 + j;
                    let sy = y as f64 + i as f64 - 1.0 + off.0[[2 * m, y, x]];
                    let sx = x as f64 + j as f64 - 1.0 + off.0[[2 * m + 1, y, x]];
                    acc += wts[[o, c, i, j]] * bilinear_ref(f, c, sy, sx);
                }
            }
        }
        acc
    })
}

/// Ordinary 3×3 cross-correlation with zero padding.
fn conv_ref(f: &FeatureMap, wts: &Array4<f64>, bias: &Array1<f64>) -> Array3<f64> {
    let (c_in, h, w) = f.dim();
    Array3::from_shape_fn((wts.dim().0, h, w), |(o, y, x)| {
        let mut acc = bias[o];
        for c in 0..c_in {
            for i in 0..3 {
                for j in 0..3 {
                    let (sy, sx) = (y as isize + i as isize - 1, x as isize + j as isize - 1);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        acc += wts[[o, c, i, j]] * f[[c, sy as usize, sx as usize]];
                    }
                }
            }
        }
        acc
    })
}

fn max_abs(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_case(seed: u64) -> (FeatureMap, OffsetField, Array4<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, oc) = (rng.random_range(1..4), rng.random_range(1..4));
    let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
    let f = Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0));
    let off = OffsetField(Array3::from_shape_fn((18, h, w), |_| rng.random_range(-2.5..2.5)));
    let wts = Array4::from_shape_fn((oc, c, 3, 3), |_| rng.random_range(-1.0..1.0));
    let bias = Array1::from_shape_fn(oc, |_| rng.random_range(-1.0..1.0));
    (f, off, wts, bias)
}

#[test]
fn matches_brute_force_oracle_on_small_maps() {
    for seed in 0..200 {
        let (f, off, wts, bias) = random_case(seed);
        let got = deform_conv(&f, &off, &wts, &bias).unwrap();
        let want = deform_ref(&f, &off, &wts, &bias);
        assert!(max_abs(&got, &want) < 1e-6, "seed {seed}");
    }
}

#[test]
fn zero_offsets_equal_standard_convolution() {
    for seed in 0..50 {
        let (f, _, wts, bias) = random_case(seed);
        let (_, h, w) = f.dim();
        let got = deform_conv(&f, &OffsetField::zeros(h, w), &wts, &bias).unwrap();
        assert!(max_abs(&got, &conv_ref(&f, &wts, &bias)) < 1e-5, "seed {seed}");
    }
}

#[test]
fn integer_offset_equals_convolution_of_shifted_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, h, w) = (2, 8, 8);
    let f = Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0));
    let wts = Array4::from_shape_fn((2, c, 3, 3), |_| rng.random_range(-1.0..1.0));
    let bias = Array1::from_shape_fn(2, |_| rng.random_range(-1.0..1.0));
    // every tap displaced by (+1, -1) reads feature(y+1, x-1)
    let shifted = Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        if y + 1 < h && x >= 1 {
            f[[ch, y + 1, x - 1]]
        } else {
            0.0
        }
    });
    let got = deform_conv(&f, &OffsetField::constant(1.0, -1.0, h, w), &wts, &bias).unwrap();
    let want = conv_ref(&shifted, &wts, &bias);
    // border pixels differ because the shifted copy drops a row and a column
    for o in 0..2 {
        for y in 1..h - 2 {
            for x in 2..w - 1 {
                assert!((got[[o, y, x]] - want[[o, y, x]]).abs() < 1e-9, "({o},{y},{x})");
            }
        }
    }
}

#[test]
fn bilinear_sample_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = Array3::from_shape_fn((2, 5, 6), |_| rng.random_range(-1.0..1.0));
    for _ in 0..500 {
        let (y, x) = (rng.random_range(-1.5..5.5), rng.random_range(-1.5..6.5));
        let got = bilinear_sample(&f, y, x);
        for c in 0..2 {
            assert!((got[c] - bilinear_ref(&f, c, y, x)).abs() < 1e-12);
        }
    }
}

#[test]
fn finite_difference_gradients_agree() {
    for seed in 0..6 {
        let inst = DeformInstance::random(2, 2, 5, 4, seed);
        assert!(inst.avoids_kinks(KINK_MARGIN));
        let err = deform_conv_grad_check(&inst);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn zero_offset_weight_gradient_matches_standard_convolution() {
    let inst = DeformInstance::random(2, 3, 4, 5, 9);
    let (_, h, w) = inst.feature.dim();
    let g = deform_conv_backward(
        &inst.feature,
        &OffsetField::zeros(h, w),
        &inst.weights,
        &inst.bias,
        &inst.probe,
    )
    .unwrap();
    // ∂/∂w[o,c,i,j] of Σ probe ⊙ conv = Σ_p probe[o,p]·feature[c, p + (i-1, j-1)]
    for ((o, c, i, j), &got) in g.weights.indexed_iter() {
        let mut want = 0.0;
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (y as isize + i as isize - 1, x as isize + j as isize - 1);
                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    want += inst.probe[[o, y, x]] * inst.feature[[c, sy as usize, sx as usize]];
                }
            }
        }
        assert!((got - want).abs() < 1e-10);
    }
}

#[test]
fn offsets_have_no_gradient_on_a_constant_interior() {
    // Bilinear reads of a constant map are constant, so offsets that keep every read
    // well inside the map receive zero gradient.
    let (h, w) = (7, 7);
    let f = Array3::from_elem((1, h, w), 0.7);
    let wts = Array4::from_elem((1, 1, 3, 3), 0.3);
    let off = OffsetField::constant(0.25, -0.4, h, w);
    let probe = Array3::from_elem((1, h, w), 1.0);
    let g = deform_conv_backward(&f, &off, &wts, &Array1::zeros(1), &probe).unwrap();
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            for k in 0..18 {
                assert!(g.offsets[[k, y, x]].abs() < 1e-12);
            }
        }
    }
}
