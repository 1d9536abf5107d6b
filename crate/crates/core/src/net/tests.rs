use super::*;
use crate::sampling::Points;
use rand::Rng;

fn pts(rows: &[&[f64]]) -> Points {
    Points::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn random_points(dim: usize, n: usize, seed: u64) -> Points {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dim * n).map(|_| rng.random_range(-0.9..0.9)).collect();
    Points::new(dim, data).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn set(net: &mut CoordinateNetwork, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
    net.set_param(name, DenseArray::matrix(rows, cols, data).unwrap())
        .unwrap();
}

/// Sine MLP with a single unit: `f(x) = w1 sin(ω0 w0 x)`, with ω0 = 1.
fn scalar_sine(w0: f64, w1: f64) -> CoordinateNetwork {
    let spec = NetworkSpec::sine_mlp(1, 1, 2).with_omega0(1.0);
    let mut net = CoordinateNetwork::init(spec).unwrap();
    set(&mut net, "w0", 1, 1, vec![w0]);
    set(&mut net, "w1", 1, 1, vec![w1]);
    net
}

#[test]
fn sine_mlp_hand_values() {
    let net = scalar_sine(std::f64::consts::FRAC_PI_2, 2.0);
    let x = pts(&[&[1.0]]);
    assert!((net.forward(&x).unwrap()[0] - 2.0).abs() < 1e-15);
    assert!(net.partial_x(&x, 0).unwrap()[0].abs() < 1e-15);
}

#[test]
fn sine_param_count() {
    let net = CoordinateNetwork::init(NetworkSpec::sine_mlp(2, 150, 3)).unwrap();
    assert_eq!(net.param_count(), 2 * 150 + 150 * 150 + 150);
}

#[test]
fn tf_core_shape_and_init_determinism() {
    let spec = NetworkSpec::tf_net(vec![4, 4], 16, 3).with_seed(7);
    let a = CoordinateNetwork::init(spec.clone()).unwrap();
    let b = CoordinateNetwork::init(spec).unwrap();
    assert_eq!(a.params()["core"].shape(), &[4, 4]);
    assert_eq!(a, b);
}

#[test]
fn invalid_specs_rejected() {
    assert!(CoordinateNetwork::init(NetworkSpec::sine_mlp(0, 4, 2)).is_err());
    assert!(CoordinateNetwork::init(NetworkSpec::sine_mlp(2, 4, 1)).is_err());
    assert!(CoordinateNetwork::init(NetworkSpec::tf_net(vec![2, 0], 4, 2)).is_err());
    assert!(CoordinateNetwork::init(NetworkSpec::pe_mlp(2, 4, 2, 0)).is_err());
}

/// Rank-1 tf-net whose factor nets are `g(x) = sin(a x)`, `h(y) = sin(b y)`
/// with ω0 = 1 and unit output weights.
fn rank1(a: f64, b: f64, core: f64) -> CoordinateNetwork {
    let spec = NetworkSpec::tf_net(vec![1, 1], 1, 2).with_omega0(1.0);
    let mut net = CoordinateNetwork::init(spec).unwrap();
    set(&mut net, "core", 1, 1, vec![core]);
    set(&mut net, "f0.w0", 1, 1, vec![a]);
    set(&mut net, "f0.w1", 1, 1, vec![1.0]);
    set(&mut net, "f1.w0", 1, 1, vec![b]);
    set(&mut net, "f1.w1", 1, 1, vec![1.0]);
    net
}

#[test]
fn tf_constant_factors_product() {
    // Constant factors via biases: g = 3, h = 4 with zero weights.
    let spec = NetworkSpec::tf_net(vec![1, 1], 1, 2).with_bias(true).with_omega0(1.0);
    let mut net = CoordinateNetwork::init(spec).unwrap();
    set(&mut net, "core", 1, 1, vec![2.0]);
    for (d, c) in [(0, 3.0), (1, 4.0)] {
        set(&mut net, &format!("f{d}.w0"), 1, 1, vec![0.0]);
        set(&mut net, &format!("f{d}.b0"), 1, 1, vec![0.0]);
        set(&mut net, &format!("f{d}.w1"), 1, 1, vec![0.0]);
        set(&mut net, &format!("f{d}.b1"), 1, 1, vec![c]);
    }
    let v = net.forward(&pts(&[&[0.3, -0.2], &[0.9, 0.1]])).unwrap();
    assert_eq!(v, vec![24.0, 24.0]);
}

#[test]
fn tf_rank1_separability() {
    let (a, b, c) = (1.3, -0.7, 1.5);
    let net = rank1(a, b, c);
    let p = random_points(2, 20, 3);
    let f = net.forward(&p).unwrap();
    let fx = net.partial_x(&p, 0).unwrap();
    let fy = net.partial_x(&p, 1).unwrap();
    let fxy = net.second_partial_x(&p, 0, 1).unwrap();
    let fxx = net.second_partial_x(&p, 0, 0).unwrap();
    for (i, q) in p.iter().enumerate() {
        let (x, y) = (q[0], q[1]);
        let (g, h) = ((a * x).sin(), (b * y).sin());
        let (dg, dh) = (a * (a * x).cos(), b * (b * y).cos());
        assert!((f[i] - c * g * h).abs() < 1e-14);
        assert!((fx[i] - c * dg * h).abs() < 1e-14);
        assert!((fy[i] - c * g * dh).abs() < 1e-14);
        assert!((fxy[i] - c * dg * dh).abs() < 1e-14);
        assert!((fxx[i] + c * a * a * g * h).abs() < 1e-14);
    }
}

fn fd_first(net: &CoordinateNetwork, p: &Points, d: usize, h: f64) -> Vec<f64> {
    let f = |s: f64| net.forward(&p.shifted(d, s)).unwrap();
    let (p2, p1, m1, m2) = (f(2.0 * h), f(h), f(-h), f(-2.0 * h));
    (0..p.len())
        .map(|i| (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h))
        .collect()
}

fn fd_second(net: &CoordinateNetwork, p: &Points, d: usize, e: usize, h: f64) -> Vec<f64> {
    let f = |sd: f64, se: f64| net.forward(&p.shifted(d, sd).shifted(e, se)).unwrap();
    if d == e {
        let (a, b, c) = (f(h, 0.0), f(0.0, 0.0), f(-h, 0.0));
        (0..p.len())
            .map(|i| (a[i] - 2.0 * b[i] + c[i]) / (h * h))
            .collect()
    } else {
        let (pp, pm, mp, mm) = (f(h, h), f(h, -h), f(-h, h), f(-h, -h));
        (0..p.len())
            .map(|i| (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h * h))
            .collect()
    }
}

fn nets() -> Vec<CoordinateNetwork> {
    vec![
        CoordinateNetwork::init(NetworkSpec::sine_mlp(2, 24, 3).with_seed(1)).unwrap(),
        CoordinateNetwork::init(NetworkSpec::sine_mlp(3, 16, 4).with_seed(2).with_bias(true)).unwrap(),
        CoordinateNetwork::init(NetworkSpec::tf_net(vec![3, 4], 16, 3).with_seed(3)).unwrap(),
        CoordinateNetwork::init(NetworkSpec::tf_net(vec![2, 3, 2], 12, 3).with_seed(4).with_bias(true))
            .unwrap(),
    ]
}

#[test]
fn first_partials_match_finite_differences() {
    for net in nets() {
        let p = random_points(net.input_dim(), 100, 11);
        for d in 0..net.input_dim() {
            let got = net.partial_x(&p, d).unwrap();
            let want = fd_first(&net, &p, d, 1e-4);
            for (g, w) in got.iter().zip(&want) {
                assert!(rel(*g, *w) < 1e-5, "{} d={d}: {g} vs {w}", net.spec().architecture);
            }
        }
    }
}

#[test]
fn second_partials_match_finite_differences_and_are_symmetric() {
    for net in nets() {
        let p = random_points(net.input_dim(), 40, 12);
        let n = net.input_dim();
        for d in 0..n {
            for e in d..n {
                let got = net.second_partial_x(&p, d, e).unwrap();
                let swapped = net.second_partial_x(&p, e, d).unwrap();
                assert_eq!(got, swapped);
                let want = fd_second(&net, &p, d, e, 1e-3);
                let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() / scale.max(1e-7) < 1e-3, "d={d} e={e}: {g} vs {w}");
                }
            }
        }
    }
}

#[test]
fn pe_mlp_first_partials_and_second_rejected() {
    let net = CoordinateNetwork::init(NetworkSpec::pe_mlp(2, 32, 3, 16).with_seed(5)).unwrap();
    let p = random_points(2, 50, 13);
    for d in 0..2 {
        let got = net.partial_x(&p, d).unwrap();
        let want = fd_first(&net, &p, d, 1e-6);
        let close = got.iter().zip(&want).filter(|(g, w)| rel(**g, **w) < 1e-5).count();
        // A point may sit within a step of a ReLU kink.
        assert!(close >= 48, "{close}/50");
    }
    assert!(matches!(
        net.second_partial_x(&p, 0, 1),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn batching_matches_single_points() {
    for net in nets() {
        let p = random_points(net.input_dim(), 3, 21);
        let batch = net.forward(&p).unwrap();
        let dbatch = net.partial_x(&p, 0).unwrap();
        for i in 0..3 {
            let one = p.select(&[i]);
            assert!((net.forward(&one).unwrap()[0] - batch[i]).abs() < 1e-12);
            assert!((net.partial_x(&one, 0).unwrap()[0] - dbatch[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn tf_grid_and_point_layouts_agree() {
    // A full grid takes the mode-product path; a sparse scatter takes the
    // per-point path. Values at shared points must agree.
    let net = CoordinateNetwork::init(NetworkSpec::tf_net(vec![3, 3], 8, 3).with_seed(9)).unwrap();
    let grid = crate::sampling::make_meshgrid(&[6, 5], 1).unwrap();
    let all = grid.points();
    let sparse = random_points(2, 4, 5);
    let mut rows: Vec<Vec<f64>> = sparse.iter().map(<[f64]>::to_vec).collect();
    rows.push(all.point(7).to_vec());
    let mixed = Points::from_rows(&rows).unwrap();
    let dense_vals = net.second_partial_x(all, 0, 1).unwrap();
    let mixed_vals = net.second_partial_x(&mixed, 0, 1).unwrap();
    assert!((dense_vals[7] - mixed_vals[4]).abs() < 1e-13);
}

#[test]
fn backward_through_derivative_matches_finite_differences() {
    for net in nets() {
        let p = random_points(net.input_dim(), 16, 31);
        let mut tape = Tape::new();
        let mut g = net.graph(&mut tape, &p).unwrap();
        let d = g.partial(&mut tape, 0).unwrap();
        let a = tape.abs(d);
        let loss = tape.mean(a);
        tape.eval(net.params()).unwrap();
        let grads = tape.backward(loss).unwrap();

        let objective = |params: &BTreeMap<String, DenseArray>| {
            let mut n = net.clone();
            *n.params_mut() = params.clone();
            let v = n.partial_x(&p, 0).unwrap();
            v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (name, arr) in net.params() {
            for _ in 0..3 {
                let k = rng.random_range(0..arr.len());
                let h = 1e-5;
                let mut plus = net.params().clone();
                plus.get_mut(name).unwrap().data_mut()[k] += h;
                let mut minus = net.params().clone();
                minus.get_mut(name).unwrap().data_mut()[k] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = grads[name].data()[k];
                assert!(
                    (an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-3),
                    "{name}[{k}]: {an} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn dimension_errors() {
    let net = &nets()[0];
    assert!(matches!(
        net.forward(&random_points(3, 2, 0)),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(matches!(
        net.partial_x(&random_points(2, 2, 0), 2),
        Err(Error::DimensionOutOfRange { .. })
    ));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (i, net) in nets()
        .into_iter()
        .chain([CoordinateNetwork::init(NetworkSpec::pe_mlp(2, 8, 3, 4)).unwrap()])
        .enumerate()
    {
        let path = dir.path().join(format!("n{i}.ckpt"));
        write_checkpoint(&net, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, net);
    }
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"NOT A CHECKPOINT\n").unwrap();
    assert!(matches!(read_checkpoint(&bad), Err(Error::Checkpoint(_))));
}
