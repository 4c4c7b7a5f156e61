use std::collections::BTreeSet;
use std::sync::OnceLock;

use candle_core::{DType, Device, Tensor};
use kbnet_core::kernel::KernelPca;
use kbnet_model::akab::{stretch_embedding, Akab};
use kbnet_model::align::{fuse, Aligner};
use kbnet_model::checkpoint::{load_checkpoint, save_checkpoint};
use kbnet_model::params::ParamStore;
use kbnet_model::recon::Rcab;
use kbnet_model::{KbNet, ModelConfig, ModelError, Variant};

fn pca() -> &'static KernelPca {
    static P: OnceLock<KernelPca> = OnceLock::new();
    P.get_or_init(|| KernelPca::fit_seeded(1000, 15, (0.6, 5.0), 3).unwrap())
}

fn small(v: Variant) -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        n_akab: 2,
        n_rcab: 2,
        ..ModelConfig::default()
    }
    .with_variant(v)
}

fn net(cfg: ModelConfig) -> KbNet {
    KbNet::new(cfg, pca().clone(), 1, DType::F32, Device::Cpu).unwrap()
}

fn burst(n: usize, h: usize, seed: u64) -> Tensor {
    let dev = Device::Cpu;
    let v: Vec<f32> = (0..n * 4 * h * h)
        .map(|i| (((i as u64 * 2654435761 + seed * 97) % 1000) as f32) / 1000.0)
        .collect();
    Tensor::from_vec(v, (1, n, 4, h, h), &dev).unwrap()
}

fn values(t: &Tensor) -> Vec<f32> {
    t.to_dtype(DType::F32)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f32>()
        .unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
    values(a)
        .iter()
        .zip(values(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

#[test]
fn full_size_burst_gives_four_times_upscaled_output() {
    // 64×64 raw frames are packed to 32×32
    let m = net(ModelConfig::default());
    let out = m.forward(&burst(8, 32, 0)).unwrap();
    assert_eq!(out.sr.dims(), &[1, 3, 256, 256]);
    assert_eq!(out.kernels.as_ref().unwrap().dims(), &[1, 8, 31, 31]);
}

#[test]
fn estimated_kernels_lie_on_the_simplex() {
    let m = net(small(Variant::E));
    let k = m.forward(&burst(4, 8, 3)).unwrap().kernels.unwrap();
    for f in 0..4 {
        let v = values(&k.get(0).unwrap().get(f).unwrap());
        let s: f64 = v.iter().map(|&x| f64::from(x)).sum();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}

#[test]
fn identical_frames_give_identical_kernels() {
    let m = net(small(Variant::E));
    let one = burst(1, 8, 5);
    let two = Tensor::cat(&[&one, &one], 1).unwrap();
    let k = m.forward(&two).unwrap().kernels.unwrap();
    assert_eq!(
        values(&k.get(0).unwrap().get(0).unwrap()),
        values(&k.get(0).unwrap().get(1).unwrap())
    );
}

#[test]
fn forward_is_deterministic_and_accepts_any_frame_count() {
    let m = net(small(Variant::E));
    for n in [1, 2, 4, 8, 14] {
        let x = burst(n, 8, n as u64);
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a.sr.dims(), &[1, 3, 64, 64]);
        assert_eq!(values(&a.sr), values(&b.sr), "n = {n}");
        assert_eq!(a.kernels.unwrap().dims(), &[1, n, 31, 31]);
    }
}

#[test]
fn fuse_is_a_frame_mean() {
    let dev = Device::Cpu;
    let x = Tensor::randn(0f32, 1.0, (2, 1, 3, 4, 4), &dev).unwrap();
    assert_eq!(values(&fuse(&x).unwrap()), values(&x.squeeze(1).unwrap()));

    let zero_and_double = Tensor::cat(&[&x.zeros_like().unwrap(), &(&x * 2.0).unwrap()], 1).unwrap();
    assert_eq!(values(&fuse(&zero_and_double).unwrap()), values(&x.squeeze(1).unwrap()));

    let frames = Tensor::randn(0f32, 1.0, (1, 6, 3, 4, 4), &dev).unwrap();
    let perm = Tensor::new(&[0u32, 4, 2, 5, 1, 3], &dev).unwrap();
    let shuffled = frames.index_select(&perm, 1).unwrap();
    assert!(max_diff(&fuse(&frames).unwrap(), &fuse(&shuffled).unwrap()) < 1e-6);
    assert!(fuse(&Tensor::zeros((1, 0, 3, 4, 4), DType::F32, &dev).unwrap()).is_err());
}

#[test]
fn variant_namespaces_differ_only_in_toggled_blocks() {
    let a = net(small(Variant::A));
    let e = net(small(Variant::E));
    let names = |m: &KbNet| m.params().names().map(String::from).collect::<BTreeSet<_>>();
    let (na, ne) = (names(&a), names(&e));
    assert!(na.iter().all(|n| !n.starts_with("est.")));
    assert!(na.iter().all(|n| !n.contains("scale") && !n.contains("shift")));
    assert_eq!(a.params().namespaces(), vec!["align", "feat", "recon"]);
    assert_eq!(e.params().namespaces(), vec!["align", "est", "feat", "recon"]);
    let toggled = |n: &str| {
        n.starts_with("est.")
            || n.contains(".scale")
            || n.contains(".shift")
            || n.contains(".squeeze")
            || n.contains(".excite")
            || n.starts_with("align.level1")
            || n.starts_with("align.level2")
            || n.starts_with("align.down")
            || n.starts_with("align.fusion")
    };
    for n in ne.symmetric_difference(&na) {
        assert!(toggled(n), "{n}");
    }
    // shared names differ in shape only where the offset predictor sees embeddings or coarser offsets
    for n in na.intersection(&ne) {
        let (sa, se) = (
            a.params().get(n).unwrap().dims().to_vec(),
            e.params().get(n).unwrap().dims().to_vec(),
        );
        if sa != se {
            assert_eq!(n, "align.level0.offset.conv1.weight");
        }
    }
}

#[test]
fn stretch_replicates_the_embedding() {
    let dev = Device::Cpu;
    let e = Tensor::new(&[[0.25f32, -1.5]], &dev).unwrap();
    let m = stretch_embedding(&e, 2, 2).unwrap();
    assert_eq!(m.dims(), &[1, 2, 2, 2]);
    for y in 0..2 {
        for x in 0..2 {
            let col = m.get(0).unwrap().narrow(1, y, 1).unwrap().narrow(2, x, 1).unwrap();
            assert_eq!(values(&col), vec![0.25, -1.5]);
        }
    }
    assert_eq!(values(&m.mean((2, 3)).unwrap()), values(&e));
    // a strided identity convolution keeps every column equal to the embedding
    let mut w = vec![0f32; 2 * 2 * 9];
    // centre taps of the (0, 0) and (1, 1) filters
    w[4] = 1.0;
    w[18 + 9 + 4] = 1.0;
    let w = Tensor::from_vec(w, (2, 2, 3, 3), &dev).unwrap();
    let big = stretch_embedding(&e, 8, 8).unwrap();
    let down = big.conv2d(&w, 1, 2, 1, 1).unwrap();
    assert_eq!(down.dims(), &[1, 2, 4, 4]);
    assert_eq!(values(&down.mean((2, 3)).unwrap()), values(&e));
    assert_eq!(
        values(
            &down
                .narrow(2, 2, 1)
                .unwrap()
                .narrow(3, 1, 1)
                .unwrap()
                .flatten_all()
                .unwrap()
        ),
        vec![0.25, -1.5]
    );
}

#[test]
fn fresh_akab_halves_its_branch() {
    let mut ps = ParamStore::new(2, DType::F64, Device::Cpu);
    let blk = Akab::new(&mut ps, "feat.block0", 4, 3).unwrap();
    let x = Tensor::randn(0f64, 1.0, (2, 4, 5, 5), &Device::Cpu).unwrap();
    let e = Tensor::randn(0f64, 1.0, (2, 3), &Device::Cpu).unwrap();
    let out = blk.forward(&x, &e).unwrap();
    let f = blk
        .conv2
        .forward(&blk.conv1.forward(&x).unwrap().relu().unwrap())
        .unwrap();
    let want = ((f * 0.5).unwrap() + &x).unwrap();
    assert_eq!(out.dims(), x.dims());
    let d = (out - want)
        .unwrap()
        .abs()
        .unwrap()
        .max_all()
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();
    assert_eq!(d, 0.0);
    assert!(blk
        .forward(&x, &Tensor::zeros((2, 4), DType::F64, &Device::Cpu).unwrap())
        .is_err());
}

#[test]
fn zeroed_offset_predictor_reduces_to_standard_convolution() {
    for levels in [1, 3] {
        let mut ps = ParamStore::new(4, DType::F32, Device::Cpu);
        let al = Aligner::new(&mut ps, 4, 3, levels, true).unwrap();
        let feats = Tensor::randn(0f32, 1.0, (1, 3, 4, 8, 8), &Device::Cpu).unwrap();
        let emb = Tensor::randn(0f32, 1.0, (1, 3, 3), &Device::Cpu).unwrap();
        let out = al.forward(&feats, Some(&emb)).unwrap();
        assert_eq!(out.aligned.dims(), &[3, 4, 8, 8]);
        assert_eq!(out.offsets.len(), levels);
        for o in &out.offsets {
            assert_eq!(values(o).iter().fold(0f32, |m, v| m.max(v.abs())), 0.0);
        }
        if levels == 1 {
            let lvl = &al.levels[0];
            let flat = feats.reshape((3, 4, 8, 8)).unwrap();
            let conv = flat
                .conv2d(&lvl.weight, 1, 1, 1, 1)
                .unwrap()
                .broadcast_add(&lvl.bias.reshape((1, 4, 1, 1)).unwrap())
                .unwrap();
            assert!(max_diff(&out.aligned, &conv) < 1e-5);
        }
    }
}

#[test]
fn offset_fields_follow_input_resolution() {
    let mut ps = ParamStore::new(4, DType::F32, Device::Cpu);
    let al = Aligner::new(&mut ps, 4, 3, 3, false).unwrap();
    for h in [8, 16] {
        let feats = Tensor::randn(0f32, 1.0, (1, 2, 4, h, h), &Device::Cpu).unwrap();
        let out = al.forward(&feats, None).unwrap();
        for (l, o) in out.offsets.iter().enumerate() {
            assert_eq!(o.dims(), &[2, 18, h >> l, h >> l]);
        }
    }
    let odd = Tensor::zeros((1, 2, 4, 6, 6), DType::F32, &Device::Cpu).unwrap();
    assert!(matches!(al.forward(&odd, None), Err(ModelError::Shape(_))));
}

#[test]
fn saturated_attention_gate_leaves_a_residual_pair() {
    let mut ps = ParamStore::new(5, DType::F64, Device::Cpu);
    let blk = Rcab::new(&mut ps, "recon.block0", 8).unwrap();
    ps.get("recon.block0.excite.bias")
        .unwrap()
        .set(&Tensor::full(1e3f64, 8, &Device::Cpu).unwrap())
        .unwrap();
    let x = Tensor::randn(0f64, 1.0, (1, 8, 5, 5), &Device::Cpu).unwrap();
    let pair = (blk
        .conv2
        .forward(&blk.conv1.forward(&x).unwrap().relu().unwrap())
        .unwrap()
        + &x)
        .unwrap();
    let d = (blk.forward(&x).unwrap() - pair)
        .unwrap()
        .abs()
        .unwrap()
        .max_all()
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();
    assert!(d < 1e-12, "{d}");
}

#[test]
fn checkpoint_reload_is_bit_exact_and_checks_the_basis() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tns");
    let m = KbNet::new(small(Variant::E), pca().clone(), 9, DType::F32, Device::Cpu).unwrap();
    save_checkpoint(&path, &m, None, 12, 3).unwrap();
    let back = load_checkpoint(&path, Some(pca()), DType::F32, Device::Cpu).unwrap();
    assert_eq!((back.meta.step, back.meta.epoch), (12, 3));
    let x = burst(3, 8, 1);
    assert_eq!(
        values(&m.forward(&x).unwrap().sr),
        values(&back.net.forward(&x).unwrap().sr)
    );

    let other = KernelPca::fit_seeded(1000, 15, (0.6, 5.0), 4).unwrap();
    assert!(matches!(
        load_checkpoint(&path, Some(&other), DType::F32, Device::Cpu),
        Err(ModelError::PcaMismatch { .. })
    ));
}

#[test]
fn rejects_bad_inputs() {
    let m = net(small(Variant::E));
    assert!(m
        .forward(&Tensor::zeros((1, 2, 3, 8, 8), DType::F32, &Device::Cpu).unwrap())
        .is_err());
    // pyramid needs packed sides divisible by 4
    assert!(m
        .forward(&Tensor::zeros((1, 2, 4, 6, 6), DType::F32, &Device::Cpu).unwrap())
        .is_err());
    let wrong_t = ModelConfig {
        embed_t: 7,
        ..small(Variant::E)
    };
    assert!(KbNet::new(wrong_t, pca().clone(), 0, DType::F32, Device::Cpu).is_err());
}
