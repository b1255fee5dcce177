use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{build_graph, normalized_laplacian, Interaction, InteractionTable};
use crate::spectral::{eigendecompose, gft_forward, reconstruct_band, Modality, PartitionScope, SpectralMode};

fn rand_array3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn rand_array2(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn random_kernel(rng: &mut ChaCha8Rng, b: usize, d: usize, r: usize) -> HyperKernel {
    HyperKernel::new(
        rand_array2(rng, (b, r)),
        rand_array2(rng, (b, r)),
        rand_array3(rng, (r, d, d)),
    )
    .unwrap()
}

/// `Σ_n K_mn x⁽ⁿ⁾` with every kernel built explicitly.
fn explicit_hsno(x: &Array3<f64>, k: &HyperKernel) -> Array3<f64> {
    let (n, b, d) = x.dim();
    let mut out = Array3::zeros((n, b, d));
    for m in 0..b {
        for src in 0..b {
            let kmn = k.materialize(m, src);
            for v in 0..n {
                let y = kmn.dot(&x.slice(s![v, src, ..]));
                let mut row = out.slice_mut(s![v, m, ..]);
                row += &y;
            }
        }
    }
    out
}

fn max_abs(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn materialize_matches_cp_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = random_kernel(&mut rng, 3, 4, 2);
    for m in 0..3 {
        for n in 0..3 {
            let mut direct = Array2::<f64>::zeros((4, 4));
            for e in 0..4 {
                for f in 0..4 {
                    direct[[e, f]] = (0..2)
                        .map(|i| k.wq[[m, i]] * k.wk[[n, i]] * k.cores[[i, e, f]])
                        .sum();
                }
            }
            let diff = (&k.materialize(m, n) - &direct).mapv(f64::abs);
            assert!(diff.iter().all(|&v| v <= 1e-10));
        }
    }
}

#[test]
fn factored_operator_matches_materialized_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_array3(&mut rng, (6, 3, 4));
    let k = random_kernel(&mut rng, 3, 4, 2);
    let got = hsno_apply(x.view(), &k).unwrap();
    assert!(max_abs(&got, &explicit_hsno(&x, &k)) <= 1e-10);
}

#[test]
fn rank_one_identity_core_sums_bands() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_array3(&mut rng, (5, 3, 4));
    let k = HyperKernel::new(
        Array2::ones((3, 1)),
        Array2::ones((3, 1)),
        Array2::<f64>::eye(4).insert_axis(Axis(0)),
    )
    .unwrap();
    let got = hsno_apply(x.view(), &k).unwrap();
    let total = x.sum_axis(Axis(1));
    for m in 0..3 {
        let diff = (&got.index_axis(Axis(1), m) - &total).mapv(f64::abs);
        assert!(diff.iter().all(|&v| v < 1e-12));
    }
}

#[test]
fn operator_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = random_kernel(&mut rng, 4, 3, 2);
    let zero = Array3::zeros((5, 4, 3));
    assert!(hsno_apply(zero.view(), &k).unwrap().iter().all(|&v| v == 0.0));
    for _ in 0..20 {
        let x = rand_array3(&mut rng, (5, 4, 3));
        let y = rand_array3(&mut rng, (5, 4, 3));
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let lhs = hsno_apply((&x * a + &y * b).view(), &k).unwrap();
        let rhs = hsno_apply(x.view(), &k).unwrap() * a + hsno_apply(y.view(), &k).unwrap() * b;
        assert!(max_abs(&lhs, &rhs) <= 1e-8);
    }
}

#[test]
fn zero_rank_and_band_mismatch_rejected() {
    assert!(HyperKernel::new(Array2::zeros((2, 0)), Array2::zeros((2, 0)), Array3::zeros((0, 3, 3))).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = random_kernel(&mut rng, 3, 2, 1);
    assert!(hsno_apply(Array3::zeros((2, 4, 2)).view(), &k).is_err());
}

#[test]
fn orthogonal_query_key_rows_isolate_bands() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (b, d) = (3, 4);
    let mut wq = rand_array2(&mut rng, (b, 2));
    let mut wk = rand_array2(&mut rng, (b, 2));
    // output band 0 draws only from rank 0; input band 2 feeds only rank 1
    wq.row_mut(0).assign(&Array1::from(vec![1.3, 0.0]));
    wk.row_mut(2).assign(&Array1::from(vec![0.0, -0.7]));
    let k = HyperKernel::new(wq, wk, rand_array3(&mut rng, (2, d, d))).unwrap();
    let x = rand_array3(&mut rng, (5, b, d));
    let mut masked = x.clone();
    MaskSample { gamma: vec![true, true, false], rate: 0.5 }
        .apply(&mut masked)
        .unwrap();
    let full = hsno_apply(x.view(), &k).unwrap();
    let part = hsno_apply(masked.view(), &k).unwrap();
    let d0 = (&full.index_axis(Axis(1), 0) - &part.index_axis(Axis(1), 0)).mapv(f64::abs);
    assert!(d0.iter().all(|&v| v < 1e-14));
    let d1 = (&full.index_axis(Axis(1), 1) - &part.index_axis(Axis(1), 1)).mapv(f64::abs);
    assert!(d1.iter().any(|&v| v > 1e-6));
}

#[test]
fn zero_rate_keeps_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        assert!(MaskSample::draw(6, 0.0, &mut rng).unwrap().is_identity());
    }
    assert!(MaskSample::draw(3, 1.0, &mut rng).is_err());
    assert!(MaskSample::draw(3, -0.1, &mut rng).is_err());
}

#[test]
fn keep_rate_matches_bernoulli_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let b = 8;
    let draws = 10_000;
    let mut kept = vec![0usize; b];
    for _ in 0..draws {
        let m = MaskSample::draw(b, 0.3, &mut rng).unwrap();
        for (k, g) in kept.iter_mut().zip(&m.gamma) {
            *k += *g as usize;
        }
    }
    for k in kept {
        let rate = k as f64 / draws as f64;
        assert!((0.69..=0.71).contains(&rate), "{rate}");
    }
}

#[test]
fn heavy_masking_never_drops_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5_000 {
        let m = MaskSample::draw(2, 0.999, &mut rng).unwrap();
        assert!(m.n_kept() >= 1);
    }
}

#[test]
fn mask_keeps_only_selected_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data = rand_array3(&mut rng, (4, 2, 3));
    let mut masked = data.clone();
    MaskSample { gamma: vec![true, false], rate: 0.5 }.apply(&mut masked).unwrap();
    assert_eq!(masked.index_axis(Axis(1), 0), data.index_axis(Axis(1), 0));
    assert!(masked.index_axis(Axis(1), 1).iter().all(|&v| v == 0.0));
}

struct Fixture {
    graph: crate::graph::BipartiteGraph,
    params: ModelParams,
    img: Array2<f64>,
    txt: Array2<f64>,
}

fn fixture(seed: u64, cfg: &ModelConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_users, n_items) = (10, 6);
    let mut records = Vec::new();
    for u in 0..n_users {
        records.push(Interaction { user: u, item: u % n_items, timestamp: 0 });
        for _ in 0..2 {
            records.push(Interaction { user: u, item: rng.random_range(0..n_items), timestamp: 1 });
        }
    }
    let graph = build_graph(&InteractionTable::new(records), n_users, n_items).unwrap();
    let img = rand_array2(&mut rng, (n_items, 5));
    let txt = rand_array2(&mut rng, (n_items, 3));
    let shape = ModelShape::new(cfg, n_users, n_items, vec![(Modality::Img, 5), (Modality::Txt, 3)]).unwrap();
    let params = ModelParams::init(shape, &mut rng);
    Fixture { graph, params, img, txt }
}

fn small_config() -> ModelConfig {
    ModelConfig { dim: 4, bands: 2, rank: 2, gate_hidden: 5, ..ModelConfig::default() }
}

fn prepare(f: &Fixture, mode: SpectralMode) -> (SpectralInputs, crate::spectral::Spectrum) {
    let l = normalized_laplacian(&f.graph).unwrap();
    let sp = eigendecompose(&l, mode, 4096).unwrap();
    let id = f.params.id_signal().unwrap();
    let feats = [(Modality::Img, f.img.view()), (Modality::Txt, f.txt.view())];
    let inputs = SpectralInputs::prepare(
        &f.graph,
        Some(&sp),
        &f.params.shape,
        PartitionScope::PerModality,
        &feats,
        id.view(),
    )
    .unwrap();
    (inputs, sp)
}

fn check_stack_against_reconstruction(mode: SpectralMode) {
    let f = fixture(11, &small_config());
    let (inputs, sp) = prepare(&f, mode);
    let out = node_outputs(&f.params, &inputs, None).unwrap();
    let lift = |x: &Array2<f64>| crate::graph::propagate_features(&f.graph, x.view()).unwrap();
    let raw = [(Modality::Img, lift(&f.img)), (Modality::Txt, lift(&f.txt))];
    let raw_views: Vec<_> = raw.iter().map(|(c, x)| (*c, x.view())).collect();
    let signals = project_modalities(&f.params, &raw_views).unwrap();
    for (ci, (c, x)) in signals.iter().enumerate() {
        let (pc, part) = &inputs.partitions[ci];
        assert_eq!(pc, c);
        let xhat = gft_forward(&sp, x.view()).unwrap();
        for m in 0..2 {
            let expected = reconstruct_band(&sp, x.view(), xhat.view(), part, m).unwrap();
            let got = out.stack.index_axis(Axis(1), ci * 2 + m);
            let diff = (&got - &expected).mapv(f64::abs);
            assert!(diff.iter().all(|&v| v < 1e-9), "{c} band {m}");
        }
    }
}

#[test]
fn band_stack_matches_direct_reconstruction() {
    check_stack_against_reconstruction(SpectralMode::Full);
}

#[test]
fn truncated_band_stack_keeps_residual() {
    check_stack_against_reconstruction(SpectralMode::Truncated(6));
    let f = fixture(12, &small_config());
    let (inputs, _) = prepare(&f, SpectralMode::Truncated(6));
    let out = node_outputs(&f.params, &inputs, None).unwrap();
    let id = f.params.id_signal().unwrap();
    let sum = out.stack.slice(s![.., 0..2, ..]).sum_axis(Axis(1));
    assert!((&sum - &id).iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn projection_examples() {
    let cfg = ModelConfig { dim: 3, ..small_config() };
    let mut f = fixture(13, &cfg);
    let n = f.params.shape.n_nodes();
    let raw = rand_array2(&mut ChaCha8Rng::seed_from_u64(0), (n, 5));
    let zeros = Array2::zeros((n, 3));
    f.params.store.insert("proj.txt", Array2::<f64>::eye(3).into_dyn());
    let out = project_modalities(&f.params, &[(Modality::Img, raw.view()), (Modality::Txt, zeros.view())]).unwrap();
    assert_eq!(out[0].0, Modality::Id);
    assert_eq!(out[1].1.dim(), (n, 3));
    assert!(out[2].1.iter().all(|&v| v == 0.0));
    let ident = rand_array2(&mut ChaCha8Rng::seed_from_u64(1), (n, 3));
    let out = project_modalities(&f.params, &[(Modality::Txt, ident.view())]).unwrap();
    assert_eq!(out[1].1, ident);
    assert!(project_modalities(&f.params, &[(Modality::Txt, raw.view())]).is_err());
}

#[test]
fn wide_features_project_to_model_width() {
    let cfg = ModelConfig { dim: 64, ..small_config() };
    let shape = ModelShape::new(&cfg, 2, 3, vec![(Modality::Txt, 384)]).unwrap();
    let params = ModelParams::init(shape, &mut ChaCha8Rng::seed_from_u64(0));
    let raw = Array2::from_elem((5, 384), 0.1);
    let out = project_modalities(&params, &[(Modality::Txt, raw.view())]).unwrap();
    assert_eq!(out[1].1.dim(), (5, 64));
}

#[test]
fn neutral_gate_halves_activations() {
    let f = fixture(14, &small_config());
    let b = f.params.shape.n_ext_bands();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = rand_array3(&mut rng, (f.graph.n_nodes(), b, 4));
    let h = graph_gate(z.view(), &f.graph, &f.params).unwrap();
    let w = f.params.matrix("out.w").unwrap();
    for v in 0..f.graph.n_nodes() {
        for m in 0..b {
            let pre = z.slice(s![v, m, ..]).dot(&w);
            for (e, p) in pre.iter().enumerate() {
                let phi = if *p >= 0.0 { *p } else { LEAKY_SLOPE * p };
                assert!((h[[v, m, e]] - 0.5 * phi).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn identity_projection_passes_nonnegative_input() {
    let mut f = fixture(15, &small_config());
    f.params.store.insert("out.w", Array2::<f64>::eye(4).into_dyn());
    let b = f.params.shape.n_ext_bands();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = rand_array3(&mut rng, (f.graph.n_nodes(), b, 4)).mapv(f64::abs);
    let h = graph_gate(z.view(), &f.graph, &f.params).unwrap();
    assert!((&h - &(&z * 0.5)).iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn degree_gate_stays_in_unit_interval() {
    let mut f = fixture(16, &small_config());
    let b = f.params.shape.n_ext_bands();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    f.params.store.insert("graph_gate.a", rand_array2(&mut rng, (1, b)).into_shape_with_order(b).unwrap().into_dyn() * 5.0);
    f.params.store.insert("graph_gate.b", rand_array2(&mut rng, (1, b)).into_shape_with_order(b).unwrap().into_dyn());
    let (inputs, _) = prepare(&f, SpectralMode::Full);
    let out = node_outputs(&f.params, &inputs, None).unwrap();
    assert!(out.gate.iter().all(|&g| g > 0.0 && g < 1.0));
    // nodes with different degree see different gates
    let col = out.gate.column(0);
    assert!(col.iter().any(|&g| (g - col[0]).abs() > 1e-6));
}

#[test]
fn equal_logits_average_bands() {
    let mut f = fixture(17, &small_config());
    let b = f.params.shape.n_ext_bands();
    let h_dim = f.params.shape.gate_hidden;
    f.params.store.insert("gate.w2", ndarray::ArrayD::zeros(ndarray::IxDyn(&[h_dim, b])));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = f.graph.n_nodes();
    let h = rand_array3(&mut rng, (n, b, 4));
    let id = rand_array2(&mut rng, (n, 4));
    let stats = rand_array2(&mut rng, (n, b));
    let (z, alpha) = fuse_bands(h.view(), &f.params, id.view(), stats.view()).unwrap();
    assert!(alpha.iter().all(|&a| (a - 1.0 / b as f64).abs() < 1e-15));
    let mean = h.mean_axis(Axis(1)).unwrap();
    assert!((&z - &mean).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn saturated_logit_selects_one_band() {
    let mut f = fixture(18, &small_config());
    let b = f.params.shape.n_ext_bands();
    let h_dim = f.params.shape.gate_hidden;
    f.params.store.insert("gate.w2", ndarray::ArrayD::zeros(ndarray::IxDyn(&[h_dim, b])));
    let mut bias = ndarray::ArrayD::zeros(ndarray::IxDyn(&[b]));
    bias[[2]] = 50.0;
    f.params.store.insert("gate.b2", bias);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = f.graph.n_nodes();
    let h = rand_array3(&mut rng, (n, b, 4));
    let (z, alpha) = fuse_bands(h.view(), &f.params, rand_array2(&mut rng, (n, 4)).view(), rand_array2(&mut rng, (n, b)).view()).unwrap();
    assert!(alpha.column(2).iter().all(|&a| a > 1.0 - 1e-12));
    let pick = h.index_axis(Axis(1), 2);
    assert!((&z - &pick).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn fusion_weights_are_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for seed in 0..10 {
        let f = fixture(seed, &small_config());
        let (inputs, _) = prepare(&f, SpectralMode::Full);
        let mask = MaskSample::draw(f.params.shape.n_ext_bands(), 0.5, &mut rng).unwrap();
        let out = node_outputs(&f.params, &inputs, Some(&mask)).unwrap();
        for row in out.alpha.rows() {
            assert!(row.iter().all(|&a| a >= 0.0));
            assert!((row.sum() - 1.0).abs() <= 1e-7);
        }
    }
}

#[test]
fn unit_mask_equals_no_mask_and_is_deterministic() {
    let f = fixture(20, &small_config());
    let (inputs, _) = prepare(&f, SpectralMode::Full);
    let b = f.params.shape.n_ext_bands();
    let plain = node_embedding(&f.params, &inputs, None).unwrap();
    let unit = node_embedding(&f.params, &inputs, Some(&MaskSample::keep_all(b))).unwrap();
    let again = node_embedding(&f.params, &inputs, None).unwrap();
    assert_eq!(plain.dim(), (16, 4));
    assert_eq!(plain, unit);
    assert_eq!(plain, again);
}

#[test]
fn energy_fractions_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut x = rand_array3(&mut rng, (4, 3, 2));
    x.index_axis_mut(Axis(0), 3).fill(0.0);
    let f = band_energy_fractions(x.view());
    for v in 0..3 {
        assert!((f.row(v).sum() - 1.0).abs() < 1e-12);
        let e0: f64 = x.slice(s![v, 0, ..]).iter().map(|a| a * a).sum();
        let tot: f64 = x.slice(s![v, .., ..]).iter().map(|a| a * a).sum();
        assert!((f[[v, 0]] - e0 / tot).abs() < 1e-12);
    }
    assert!(f.row(3).iter().all(|&v| v == 0.0));
}

#[test]
fn score_examples() {
    let mut z = Array2::zeros((3, 2));
    z.row_mut(1).assign(&Array1::from(vec![0.3, -0.2]));
    assert_eq!(score_pairs(z.view(), 1, &[(0, 0)]).unwrap(), vec![0.5]);
    let c = (3f64.ln() / 2.0).sqrt();
    z.row_mut(0).fill(c);
    z.row_mut(2).fill(c);
    let y = score_pairs(z.view(), 1, &[(0, 1)]).unwrap()[0];
    assert!((y - 0.75).abs() < 1e-12);
    z.row_mut(2).fill(-c);
    assert!(score_pairs(z.view(), 1, &[(0, 1)]).unwrap()[0] < 0.5);
    assert!(score_pairs(z.view(), 1, &[(1, 0)]).is_err());
    assert!(score_pairs(z.view(), 1, &[(0, 2)]).is_err());
}

#[test]
fn initial_parameters_follow_declared_shapes() {
    let f = fixture(22, &small_config());
    let shape = f.params.shape.clone();
    assert_eq!(shape.n_ext_bands(), 6);
    for (name, dims) in shape.tensor_shapes() {
        assert_eq!(f.params.get(&name).unwrap().shape(), dims.as_slice(), "{name}");
    }
    assert!(f.params.get("graph_gate.a").unwrap().iter().all(|&v| v == 0.0));
    let bound = 1.0 / 2f64.sqrt();
    assert!(f.params.get("cp.wq").unwrap().iter().all(|&v| v.abs() <= bound));
    assert!(ModelParams::from_store(shape.clone(), f.params.store.clone()).is_ok());
    let mut bad = f.params.store.clone();
    bad.insert("out.w", ndarray::ArrayD::zeros(ndarray::IxDyn(&[3, 4])));
    assert!(ModelParams::from_store(shape, bad).is_err());
}
