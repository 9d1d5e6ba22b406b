use dofa_core::autograd::Graph;
use dofa_core::data::{modality, synth_sample, SpectralImage};
use dofa_core::hypernet::generate_decoder_weights;
use dofa_core::losses::{composite_terms, make_proxy, TeacherModel};
use dofa_core::model::random_mask;
use dofa_core::verify::{encode_invariance_error, kernel_equivariance_error};
use dofa_core::{DofaModel, ModelConfig, Tensor, WavelengthList};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn model() -> &'static DofaModel<f32> {
    static M: OnceLock<DofaModel<f32>> = OnceLock::new();
    M.get_or_init(|| DofaModel::new(&ModelConfig::desk(), 3).unwrap())
}

fn random_image(c: usize, rng: &mut ChaCha8Rng) -> SpectralImage {
    let data: Vec<f32> = (0..c * 32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lambdas: Vec<f64> = (0..c).map(|_| rng.random_range(0.4..2.5)).collect();
    SpectralImage::new(Tensor::new(vec![c, 32, 32], data).unwrap(), WavelengthList::new(lambdas).unwrap(), "x", None).unwrap()
}

#[test]
fn shapes_for_every_channel_count() {
    let m = model();
    let count = m.num_parameters();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for c in [1, 2, 3, 4, 9, 202] {
        let x = random_image(c, &mut rng);
        assert_eq!(m.embed(&x, &x.wavelengths).unwrap().shape(), &[5, 64]);
        let plan = random_mask(4, 0.75, c as u64).unwrap();
        let z = m.encode(&x, &x.wavelengths, Some(&plan)).unwrap();
        assert_eq!(z.shape(), &[2, 64]);
        assert_eq!(m.decode_reconstruct(&z, Some(&plan), &x.wavelengths).unwrap().shape(), &[4, c * 256]);
        assert_eq!(m.encode(&x, &x.wavelengths, None).unwrap().shape(), &[5, 64]);
    }
    assert_eq!(m.num_parameters(), count);
}

#[test]
fn decoder_head_shapes() {
    let m = model();
    let s1 = WavelengthList::new(vec![3.75, 3.75]).unwrap();
    let (w, b) = generate_decoder_weights(&s1, &m.net.dec_generator, &m.store).unwrap();
    assert_eq!((w.shape(), b.shape()), (&[48, 512][..], &[512][..]));
    let one = WavelengthList::new(vec![0.8]).unwrap();
    assert_eq!(generate_decoder_weights(&one, &m.net.dec_generator, &m.store).unwrap().0.shape(), &[48, 256]);
}

#[test]
fn decoder_blocks_follow_wavelength_permutation() {
    let m = model().cast::<f64>();
    let l = WavelengthList::new(vec![0.49, 0.56, 0.665, 0.842]).unwrap();
    let perm = [2, 0, 3, 1];
    let (w, b) = generate_decoder_weights(&l, &m.net.dec_generator, &m.store).unwrap();
    let (wp, bp) = generate_decoder_weights(&l.permuted(&perm), &m.net.dec_generator, &m.store).unwrap();
    let cols = 4 * 256;
    for r in 0..48 {
        for (i, &src) in perm.iter().enumerate() {
            for k in 0..256 {
                assert!((wp.data()[r * cols + i * 256 + k] - w.data()[r * cols + src * 256 + k]).abs() < 1e-10);
            }
        }
    }
    for (i, &src) in perm.iter().enumerate() {
        for k in 0..256 {
            assert!((bp.data()[i * 256 + k] - b.data()[src * 256 + k]).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn joint_permutation(c in 2usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_image(c, &mut rng);
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut rng);
        prop_assert!(kernel_equivariance_error(model(), &x.wavelengths, &perm).unwrap() < 1e-5);
        prop_assert!(encode_invariance_error(model(), &x, &perm).unwrap() < 1e-5);
    }
}

#[test]
fn conv_embedding_matches_matmul() {
    let m = model().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for c in [1, 3, 9, 202] {
        let x = random_image(c, &mut rng);
        let a = m.embed(&x, &x.wavelengths).unwrap();
        let b = m.embed_by_conv(&x, &x.wavelengths).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-5);
    }
}

#[test]
fn channel_wavelength_mismatch_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_image(3, &mut rng);
    let l = WavelengthList::new(vec![0.5, 0.6]).unwrap();
    assert!(model().embed(&x, &l).is_err());
    assert!(model().encode(&x, &l, None).is_err());
}

#[test]
fn zero_head_reconstructs_zero() {
    let mut m = model().clone();
    let gen = m.net.dec_generator.clone();
    for id in [gen.fc_weight.weight, gen.fc_weight.bias, gen.fc_bias.weight, gen.fc_bias.bias] {
        let shape = m.store.value(id).shape().to_vec();
        m.store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_image(9, &mut rng);
    let plan = random_mask(4, 0.75, 1).unwrap();
    let z = m.encode(&x, &x.wavelengths, Some(&plan)).unwrap();
    let rec = m.decode_reconstruct(&z, Some(&plan), &x.wavelengths).unwrap();
    assert_eq!(rec.shape(), &[4, 9 * 256]);
    assert!(rec.data().iter().all(|&v| v == 0.0));
}

#[test]
fn teacher_receives_no_gradient() {
    let cfg = ModelConfig::desk();
    let mut student = DofaModel::<f64>::new(&cfg, 1).unwrap();
    let mut teacher = TeacherModel::<f64>::new(&cfg, 2).unwrap();
    let spec = modality("sentinel2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = synth_sample(&spec, 32, 32, 4, 10, &mut rng).unwrap();
    let proxy = make_proxy(&x, &spec, &mut rng).unwrap();
    let plan = random_mask(4, 0.75, 2).unwrap();

    let mut g = Graph::new();
    let sp = student.store.bind(&mut g, true);
    let tp = teacher.store.bind(&mut g, false);
    let t = composite_terms(&mut g, &student.net, &sp, &teacher.net, &tp, &x, &plan, &proxy, false).unwrap();
    let total = g.sub(t.recon, t.cos).unwrap();
    let grads = g.backward(total).unwrap();
    student.store.accumulate_grads(&sp, &grads);
    teacher.store.accumulate_grads(&tp, &grads);
    assert!(tp.vars().iter().all(|&v| grads.get(v).is_none()));
    assert!(teacher.store.iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    assert!(student.store.iter().any(|p| p.grad.data().iter().any(|&v| v != 0.0)));
}
