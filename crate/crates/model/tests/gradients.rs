//! Double-precision finite-difference checks of every sub-network.

use candle_core::{DType, Device, Tensor, Var};
use kbnet_core::deform::relative_error;
use kbnet_core::kernel::KernelPca;
use kbnet_model::akab::Akab;
use kbnet_model::align::Aligner;
use kbnet_model::estimator::Estimator;
use kbnet_model::params::ParamStore;
use kbnet_model::recon::Reconstructor;
use kbnet_model::{KbNet, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn randn(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Gives every zero-initialised parameter random values so all paths carry gradient.
fn randomise_zeros(ps: &ParamStore, scale: f64, rng: &mut ChaCha8Rng) {
    for (_, var) in ps.iter() {
        let all_zero = var
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap()
            .iter()
            .all(|&v| v == 0.0);
        if all_zero {
            var.set(&randn(var.dims(), scale, rng)).unwrap();
        }
    }
}

/// Largest relative error over up to `per_var` entries of each variable.
fn check(vars: &[(String, Var)], loss: &dyn Fn() -> Tensor, per_var: usize) -> f64 {
    let grads = loss().backward().unwrap();
    let mut worst = 0.0f64;
    for (name, var) in vars {
        let g = grads
            .get(var.as_tensor())
            .unwrap_or_else(|| panic!("no gradient for {name}"))
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let base = var.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let stride = (base.len() / per_var).max(1);
        for i in (0..base.len()).step_by(stride) {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, var.dims(), &Device::Cpu).unwrap())
                    .unwrap();
                loss().to_scalar::<f64>().unwrap()
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let err = relative_error(g[i], numeric);
            assert!(err < TOL, "{name}[{i}]: analytic {} numeric {numeric}", g[i]);
            worst = worst.max(err);
        }
        var.set(&Tensor::from_vec(base, var.dims(), &Device::Cpu).unwrap())
            .unwrap();
    }
    worst
}

/// Bilinear sampling has kinks at integer offsets; checks must stay clear of them.
fn clear_of_kinks(offsets: &[Tensor]) -> bool {
    offsets.iter().all(|o| {
        o.flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap()
            .iter()
            .all(|v| (v - v.round()).abs() > 1e-5)
    })
}

fn store_vars(ps: &ParamStore) -> Vec<(String, Var)> {
    ps.iter().map(|(n, v)| (n.to_string(), v.clone())).collect()
}

fn probe_loss(out: &Tensor, probe: &Tensor) -> Tensor {
    (out * probe).unwrap().sum_all().unwrap()
}

#[test]
fn akab_gradients_including_the_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamStore::new(1, DType::F64, Device::Cpu);
    let blk = Akab::new(&mut ps, "feat.block0", 3, 4).unwrap();
    randomise_zeros(&ps, 0.5, &mut rng);
    let x = randn(&[2, 3, 4, 4], 1.0, &mut rng);
    let emb = Var::from_tensor(&randn(&[2, 4], 1.0, &mut rng)).unwrap();
    let probe = randn(&[2, 3, 4, 4], 1.0, &mut rng);
    let loss = || probe_loss(&blk.forward(&x, emb.as_tensor()).unwrap(), &probe);
    let mut vars = store_vars(&ps);
    vars.push(("embedding".into(), emb.clone()));
    assert!(check(&vars, &loss, 12) < TOL);
}

#[test]
fn kernel_aware_alignment_gradients_through_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamStore::new(2, DType::F64, Device::Cpu);
    let al = Aligner::new(&mut ps, 3, 2, 1, true).unwrap();
    randomise_zeros(&ps, 0.3, &mut rng);
    let feats = Var::from_tensor(&randn(&[1, 2, 3, 5, 5], 1.0, &mut rng)).unwrap();
    let emb = randn(&[1, 2, 2], 1.0, &mut rng);
    let probe = randn(&[2, 3, 5, 5], 1.0, &mut rng);
    let loss = || probe_loss(&al.forward(feats.as_tensor(), Some(&emb)).unwrap().aligned, &probe);
    // offsets must be non-trivial for the check to exercise the sampling path
    let offsets = al.forward(feats.as_tensor(), Some(&emb)).unwrap().offsets;
    assert!(
        offsets[0]
            .abs()
            .unwrap()
            .mean_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
            > 0.05
    );
    assert!(clear_of_kinks(&offsets));
    let mut vars = store_vars(&ps);
    vars.push(("features".into(), feats.clone()));
    assert!(check(&vars, &loss, 10) < TOL);
}

#[test]
fn pyramid_alignment_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamStore::new(5, DType::F64, Device::Cpu);
    let al = Aligner::new(&mut ps, 2, 2, 3, true).unwrap();
    randomise_zeros(&ps, 0.3, &mut rng);
    let feats = Var::from_tensor(&randn(&[1, 2, 2, 16, 16], 1.0, &mut rng)).unwrap();
    let emb = randn(&[1, 2, 2], 1.0, &mut rng);
    let probe = randn(&[2, 2, 16, 16], 1.0, &mut rng);
    assert!(clear_of_kinks(
        &al.forward(feats.as_tensor(), Some(&emb)).unwrap().offsets
    ));
    let loss = || probe_loss(&al.forward(feats.as_tensor(), Some(&emb)).unwrap().aligned, &probe);
    let mut vars = store_vars(&ps);
    vars.push(("features".into(), feats.clone()));
    assert!(check(&vars, &loss, 6) < TOL);
}

#[test]
fn single_block_reconstruction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamStore::new(4, DType::F64, Device::Cpu);
    let rec = Reconstructor::new(&mut ps, 4, 1, true, 1).unwrap();
    let x = Var::from_tensor(&randn(&[1, 4, 3, 3], 1.0, &mut rng)).unwrap();
    let probe = randn(&[1, 3, 6, 6], 1.0, &mut rng);
    let loss = || probe_loss(&rec.forward(x.as_tensor()).unwrap(), &probe);
    let mut vars = store_vars(&ps);
    vars.push(("input".into(), x.clone()));
    assert!(check(&vars, &loss, 10) < TOL);
}

#[test]
fn estimator_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamStore::new(5, DType::F64, Device::Cpu);
    let est = Estimator::new(&mut ps, 4, 1).unwrap();
    let x = randn(&[2, 4, 4, 4], 1.0, &mut rng);
    let probe = randn(&[2, 961], 1.0, &mut rng);
    let loss = || probe_loss(&est.forward(&x).unwrap(), &probe);
    assert!(check(&store_vars(&ps), &loss, 8) < TOL);
}

#[test]
fn end_to_end_restorer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pca = KernelPca::fit_seeded(1000, 3, (0.6, 5.0), 1).unwrap();
    let cfg = ModelConfig {
        base_channels: 4,
        n_akab: 1,
        n_rcab: 1,
        embed_t: 3,
        scale: 1,
        estimator_blocks: 1,
        ..ModelConfig::default()
    }
    .with_variant(Variant::E);
    let net = KbNet::new(cfg, pca, 6, DType::F64, Device::Cpu).unwrap();
    randomise_zeros(net.params(), 0.3, &mut rng);
    let burst = randn(&[1, 2, 4, 4, 4], 1.0, &mut rng);
    let probe = randn(&[1, 3, 8, 8], 1.0, &mut rng);
    assert!(clear_of_kinks(&net.forward(&burst).unwrap().offsets));
    let loss = || probe_loss(&net.forward(&burst).unwrap().sr, &probe);
    // the estimator only trains through the kernel loss
    let vars: Vec<_> = store_vars(net.params())
        .into_iter()
        .filter(|(n, _)| !n.starts_with("est."))
        .collect();
    assert!(check(&vars, &loss, 3) < TOL);
}
