use neurtv::metrics::{mse, mse_rsquare, psnr};
use neurtv::optim::soft_threshold;
use neurtv::sampling::{CoordMap, Points};
use neurtv::tasks::{
    denoise_image, fit, hsi_mixed_denoise, inpaint_image, reconstruct_transcriptomics,
    recover_pointcloud, sparse_objective, synth, FitProblem, ObservationTable, TaskConfig,
};
use neurtv::{DenseArray, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quiet(mut cfg: TaskConfig) -> TaskConfig {
    cfg.trace_stride = 0;
    cfg
}

fn shuffled(t: &ObservationTable, seed: u64) -> ObservationTable {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    t.select(&order).unwrap()
}

#[test]
fn denoise_pure_fit_reaches_small_loss() {
    let img = synth::smooth_image(16);
    let t = ObservationTable::from_array(&img).unwrap();
    let cfg = TaskConfig::denoise().with_lambda(0.0).with_iterations(3000);
    let out = denoise_image(&t, &cfg).unwrap();
    let last = out.fits[0].trace.last().unwrap();
    assert!(last.loss < 1e-3, "{}", last.loss);
    assert_eq!(last.regularizer, 0.0);
}

#[test]
fn denoise_noiseless_piecewise_constant() {
    let clean = synth::piecewise_constant_image(32);
    let t = ObservationTable::from_array(&clean).unwrap();
    let out = denoise_image(&t, &quiet(TaskConfig::denoise().with_iterations(1000))).unwrap();
    let p = psnr(clean.data(), out.array.data(), 1.0).unwrap();
    assert!(p >= 40.0, "{p}");
    assert_eq!(out.array.shape(), &[32, 32]);
}

#[test]
fn denoise_requires_full_meshgrid() {
    let img = synth::smooth_image(8);
    let t = ObservationTable::from_array(&img).unwrap();
    let partial = t.select(&(0..60).collect::<Vec<_>>()).unwrap();
    assert!(matches!(
        denoise_image(&partial, &TaskConfig::denoise()),
        Err(Error::NotMeshgrid)
    ));
}

#[test]
fn denoise_is_channel_wise_and_clipped() {
    let gray = synth::smooth_image(8);
    let mut data = Vec::new();
    for v in gray.data() {
        data.extend([*v, 1.0 - v]);
    }
    let color = DenseArray::new(vec![8, 8, 2], data).unwrap();
    let t = ObservationTable::from_array(&color).unwrap();
    let cfg = quiet(TaskConfig::denoise().with_iterations(50));
    let out = denoise_image(&t, &cfg).unwrap();
    assert_eq!(out.fits.len(), 2);
    assert_eq!(out.array.shape(), &[8, 8, 2]);
    let (lo, hi) = t.value_range();
    assert!(out.array.data().iter().all(|v| (lo..=hi).contains(v)));
    // Channel 0 alone gives the same result as inside the color run.
    let t0 = ObservationTable::from_array(&gray).unwrap();
    let single = denoise_image(&t0, &cfg).unwrap();
    for (i, v) in single.array.data().iter().enumerate() {
        assert_eq!(*v, out.array.data()[2 * i]);
    }
}

#[test]
fn pipelines_are_deterministic() {
    let clean = synth::piecewise_smooth_image(16);
    let noisy = synth::add_gaussian(&clean, 0.1, 1).unwrap();
    let t = ObservationTable::from_array(&noisy).unwrap();
    let cfg = TaskConfig::denoise().with_iterations(40).with_seed(9);
    let a = denoise_image(&t, &cfg).unwrap();
    let b = denoise_image(&shuffled(&t, 4), &cfg).unwrap();
    assert_eq!(a.array, b.array);
    assert_eq!(a.fits[0].trace, b.fits[0].trace);
}

#[test]
fn inpaint_full_observation_pure_fit() {
    let img = synth::smooth_image(16);
    let t = ObservationTable::from_array(&img).unwrap();
    let cfg = quiet(TaskConfig::inpaint().with_lambda(0.0).with_iterations(2000));
    let out = inpaint_image(&t, &[16, 16], &cfg).unwrap();
    let m = mse(img.data(), out.array.data()).unwrap();
    assert!(m < 1e-3, "{m}");
}

#[test]
fn inpaint_beats_zero_filling() {
    let img = synth::smooth_image(32);
    let full = ObservationTable::from_array(&img).unwrap();
    let obs = synth::mask_table(&full, 0.2, 3).unwrap();
    let cfg = quiet(TaskConfig::inpaint().with_iterations(1500));
    let out = inpaint_image(&obs, &[32, 32], &cfg).unwrap();
    let zero = obs.to_array(&[32, 32]).unwrap();
    let p_zero = psnr(img.data(), zero.data(), 1.0).unwrap();
    let p = psnr(img.data(), out.array.data(), 1.0).unwrap();
    assert!(p >= p_zero + 5.0, "{p} vs zero-filled {p_zero}");
}

#[test]
fn inpaint_ignores_row_order_and_rejects_out_of_grid() {
    let img = synth::smooth_image(8);
    let full = ObservationTable::from_array(&img).unwrap();
    let obs = synth::mask_table(&full, 0.5, 5).unwrap();
    let cfg = quiet(TaskConfig::inpaint().with_iterations(30));
    let a = inpaint_image(&obs, &[8, 8], &cfg).unwrap();
    let b = inpaint_image(&shuffled(&obs, 6), &[8, 8], &cfg).unwrap();
    assert_eq!(a.array, b.array);
    assert!(inpaint_image(&obs, &[4, 8], &cfg).is_err());
    assert!(matches!(
        ObservationTable::new(Points::new(2, vec![]).unwrap(), vec![]),
        Err(Error::EmptySampleSet)
    ));
}

#[test]
fn inpaint_color_channels_share_one_network() {
    let gray = synth::smooth_image(8);
    let mut data = Vec::new();
    for v in gray.data() {
        data.extend([*v, 0.5 * v, 0.25 + 0.5 * v]);
    }
    let color = DenseArray::new(vec![8, 8, 3], data).unwrap();
    let full = ObservationTable::from_array(&color).unwrap();
    let obs = synth::mask_table(&full, 0.5, 2).unwrap();
    let out = inpaint_image(&obs, &[8, 8, 3], &quiet(TaskConfig::inpaint().with_iterations(20))).unwrap();
    assert_eq!(out.array.shape(), &[8, 8, 3]);
    assert_eq!(out.fits.len(), 1);
    assert_eq!(out.fits[0].network.input_dim(), 3);
}

#[test]
fn hsi_large_gamma_keeps_sparse_part_empty() {
    let clean = synth::smooth_cube(8, 8, 4);
    let noisy = synth::add_gaussian(&clean, 0.02, 1).unwrap();
    let mut cfg = quiet(TaskConfig::hsi_gaussian().with_iterations(300));
    cfg.gamma = 10.0;
    let out = hsi_mixed_denoise(&noisy, &cfg).unwrap();
    assert!(out.sparse.is_zero());
    assert_eq!(out.sparse.array.shape(), noisy.shape());
}

#[test]
fn hsi_recovers_spike_support() {
    let clean = synth::smooth_cube(16, 16, 8);
    let (noisy, mask) = synth::add_impulse(&clean, 0.1, 11).unwrap();
    let out = hsi_mixed_denoise(&noisy, &quiet(TaskConfig::hsi().with_iterations(2000))).unwrap();
    let sup = out.sparse.support();
    let tp = sup.iter().zip(&mask).filter(|(a, b)| **a && **b).count() as f64;
    let pos = sup.iter().filter(|a| **a).count() as f64;
    let truth = mask.iter().filter(|a| **a).count() as f64;
    let f1 = 2.0 * tp / (pos + truth);
    assert!(f1 >= 0.8, "{f1}");
}

#[test]
fn hsi_rejects_bad_gamma_and_shape() {
    let cube = synth::smooth_cube(4, 4, 2);
    let mut cfg = TaskConfig::hsi();
    cfg.gamma = 0.0;
    assert!(hsi_mixed_denoise(&cube, &cfg).is_err());
    let flat = synth::smooth_image(4);
    assert!(matches!(
        hsi_mixed_denoise(&flat, &TaskConfig::hsi()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn sparse_update_never_increases_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = 20;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let prev: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gamma = rng.random_range(0.01..3.0);
        let s = soft_threshold(&r, gamma / 2.0).unwrap();
        assert!(sparse_objective(&r, &s, gamma) <= sparse_objective(&r, &prev, gamma) + 1e-15);
    }
}

#[test]
fn hsi_trace_objective_decreases_overall() {
    let clean = synth::smooth_cube(8, 8, 4);
    let (noisy, _) = synth::add_impulse(&clean, 0.1, 3).unwrap();
    let out = hsi_mixed_denoise(&noisy, &TaskConfig::hsi().with_iterations(300)).unwrap();
    let tr = &out.fit.trace;
    assert!(tr.last().unwrap().loss < tr[0].loss);
}

#[test]
fn pointcloud_constant_color() {
    let cloud = synth::color_cloud(200, 1, |_, _, _, _| 0.6).unwrap();
    let (obs, held) = synth::split(&cloud, 0.2, 2).unwrap();
    let cfg = quiet(TaskConfig::pointcloud().with_iterations(200));
    let out = recover_pointcloud(&obs, &synth::query_points(&held), &cfg).unwrap();
    let rmse = mse(held.values(), &out.predictions).unwrap().sqrt();
    assert!(rmse / 0.6 < 0.05, "{rmse}");
}

#[test]
fn pointcloud_duplicates_and_malformed_rows() {
    let cloud = synth::color_cloud(60, 3, synth::smooth_color).unwrap();
    let (obs, held) = synth::split(&cloud, 0.3, 4).unwrap();
    let q = synth::query_points(&held);
    let cfg = quiet(TaskConfig::pointcloud().with_iterations(30));
    let a = recover_pointcloud(&obs, &q, &cfg).unwrap();
    let doubled: Vec<usize> = (0..obs.len()).chain(0..obs.len() / 2).collect();
    let b = recover_pointcloud(&obs.select(&doubled).unwrap(), &q, &cfg).unwrap();
    for (x, y) in a.predictions.iter().zip(&b.predictions) {
        assert!((x - y).abs() <= 1e-6);
    }
    let three = ObservationTable::from_rows(&[vec![0.0, 0.0, 0.0, 1.0]], 3).unwrap();
    assert!(matches!(
        recover_pointcloud(&three, &q, &cfg),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn transcriptomics_two_genes() {
    let field = synth::two_gene_field(20).unwrap();
    let (obs, held) = synth::split(&field, 0.4, 70).unwrap();
    let cfg = quiet(TaskConfig::transcriptomics().with_iterations(1000));
    let out = reconstruct_transcriptomics(&obs, &synth::query_points(&held), &cfg).unwrap();
    let (nrmse, r2) = mse_rsquare(held.values(), &out.predictions).unwrap();
    assert!(r2 >= 0.8, "R² {r2}, nRMSE {nrmse}");
}

#[test]
fn transcriptomics_row_order_invariant() {
    let field = synth::two_gene_field(8).unwrap();
    let (obs, held) = synth::split(&field, 0.4, 1).unwrap();
    let q = synth::query_points(&held);
    let cfg = quiet(TaskConfig::transcriptomics().with_iterations(20));
    let a = reconstruct_transcriptomics(&obs, &q, &cfg).unwrap();
    let b = reconstruct_transcriptomics(&shuffled(&obs, 2), &q, &cfg).unwrap();
    assert_eq!(a.predictions, b.predictions);
}

#[test]
fn single_gene_grid_matches_inpainting() {
    let n = 8;
    let img = synth::smooth_image(n);
    let full = ObservationTable::from_array(&img).unwrap();
    let (obs, held) = synth::split(&full, 0.5, 3).unwrap();
    let with_gene = |t: &ObservationTable| {
        let rows: Vec<Vec<f64>> = (0..t.len())
            .map(|i| {
                let (p, v) = t.row(i);
                vec![p[0], p[1], 0.0, v]
            })
            .collect();
        ObservationTable::from_rows(&rows, 3).unwrap()
    };
    let spots = with_gene(&obs);
    let queries = with_gene(&held);

    let mut st = TaskConfig::transcriptomics().with_iterations(1);
    st.coord_ranges = Some(CoordMap::for_grid(&[n, n, 1]).unwrap().ranges().to_vec());
    let mut ip = TaskConfig::inpaint().with_iterations(1).with_lambda(st.lambda);
    ip.network = st.network.clone();
    ip.regularizer = st.regularizer.clone();

    let a = reconstruct_transcriptomics(&spots, queries.coords(), &st).unwrap();
    let b = inpaint_image(&obs, &[n, n], &ip).unwrap();
    let (la, lb) = (a.fit.trace[0].loss, b.fits[0].trace[0].loss);
    assert!((la - lb).abs() <= 1e-12 * la.abs(), "{la} vs {lb}");
    for (i, v) in a.predictions.iter().enumerate() {
        let (p, _) = held.row(i);
        let want = b.array.data()[p[0] as usize * n + p[1] as usize];
        assert!((v - want).abs() < 1e-12);
    }
}

#[test]
fn fit_rejects_invalid_config() {
    let pts = Points::new(1, vec![0.0, 0.5]).unwrap();
    let gamma = neurtv::sampling::SampleSet::from_points(pts.clone()).unwrap();
    let problem = FitProblem::new(pts, vec![0.0, 1.0], gamma).unwrap();
    let mut cfg = TaskConfig::denoise();
    cfg.network = neurtv::net::NetworkSpec::sine_mlp(1, 8, 2);
    cfg.lambda = 0.0;
    cfg.iterations = 5;
    assert!(fit(&problem, &cfg).is_ok());
    cfg.lambda = -1.0;
    assert!(fit(&problem, &cfg).is_err());
    cfg.lambda = 0.0;
    cfg.factor = 0;
    assert!(fit(&problem, &cfg).is_err());
}
