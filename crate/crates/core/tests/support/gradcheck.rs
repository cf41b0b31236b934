//! Central-difference gradient checks in f64.

use cnf_core::fabric::{Fabric, FabricDims, Mode};
use cnf_core::ops::{BnMode, RunningStats};
use cnf_core::tape::{Tape, Var};
use cnf_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale. Conv
/// biases feeding batch norm have an exact zero gradient, so a pure
/// relative measure would only compare rounding noise.
pub const FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Worst relative error over every entry of every input, where `build`
/// records a scalar loss from leaves holding `inputs`.
pub fn check(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let v: Vec<Var> = xs.iter().map(|x| t.input(x.clone())).collect();
        let l = build(&mut t, &v);
        t.value(l).data()[0]
    };
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or(vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            xs[i].data_mut()[j] = x0 + STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x0 - STEP;
            let down = eval(&xs);
            xs[i].data_mut()[j] = x0;
            worst = worst.max(rel_err(analytic[j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// Projects a tensor-valued result onto fixed random weights.
fn project(tape: &mut Tape<f64>, v: Var, rng: &mut ChaCha8Rng) -> Var {
    let shape = tape.value(v).shape().to_vec();
    let w = normal(rng, &shape, 1.0);
    tape.dot(v, w).unwrap()
}

fn projected(seed: u64, inputs: &[Tensor<f64>], op: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    check(inputs, |tape, v| {
        let out = op(tape, v);
        project(tape, out, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED))
    })
}

fn conv_case(seed: u64, stride: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
    let inputs = [
        normal(&mut rng, &[b, cin, h, w], 1.0),
        normal(&mut rng, &[cout, cin, 3, 3], 0.5),
        normal(&mut rng, &[cout], 0.5),
    ];
    projected(seed, &inputs, |t, v| t.conv2d(v[0], v[1], v[2], stride).unwrap())
}

fn upsample_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [
        rng.random_range(1..3),
        rng.random_range(1..3),
        rng.random_range(1..5),
        rng.random_range(1..5),
    ];
    let inputs = [normal(&mut rng, &shape, 1.0)];
    projected(seed, &inputs, |t, v| t.upsample_bilinear_x2(v[0]).unwrap())
}

fn batch_norm_case(seed: u64, mode: BnMode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..4);
    let shape = [
        rng.random_range(2..4),
        c,
        rng.random_range(1..4),
        rng.random_range(1..4),
    ];
    let inputs = [
        normal(&mut rng, &shape, 2.0),
        normal(&mut rng, &[c], 1.0),
        normal(&mut rng, &[c], 1.0),
    ];
    let stats = RunningStats {
        mean: normal(&mut rng, &[c], 1.0),
        var: Tensor::from_fn(&[c], |_| rng.random_range(0.5..2.0)),
    };
    projected(seed, &inputs, |t, v| {
        t.batch_norm(v[0], v[1], v[2], &stats, mode).unwrap().0
    })
}

fn relu6_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..40);
    // Values stay clear of the kinks at 0 and 6.
    let x = Tensor::from_fn(&[n], |_| loop {
        let v: f64 = rng.random_range(-3.0..9.0);
        if v.abs() > 1e-3 && (v - 6.0).abs() > 1e-3 {
            break v;
        }
    });
    projected(seed, &[x], |t, v| t.relu6(v[0]))
}

fn sum_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [rng.random_range(1..3), 2, rng.random_range(1..4), 3];
    let k = rng.random_range(1..4);
    let inputs: Vec<_> = (0..k).map(|_| normal(&mut rng, &shape, 1.0)).collect();
    projected(seed, &inputs, |t, v| t.sum(v).unwrap())
}

fn linear_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, h, k) = (
        rng.random_range(1..4),
        rng.random_range(1..4),
        rng.random_range(1..3),
        rng.random_range(1..5),
    );
    let inputs = [
        normal(&mut rng, &[b, c, h, h], 1.0),
        normal(&mut rng, &[k, c * h * h], 1.0),
        normal(&mut rng, &[k], 1.0),
    ];
    projected(seed, &inputs, |t, v| {
        let f = t.flatten(v[0]).unwrap();
        t.linear(f, v[1], v[2]).unwrap()
    })
}

fn cross_entropy_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, k) = (rng.random_range(1..6), rng.random_range(2..6));
    let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let inputs = [normal(&mut rng, &[b, k], 2.0)];
    check(&inputs, |t, v| t.softmax_cross_entropy(v[0], &targets).unwrap())
}

fn total_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..10);
    let inputs = [normal(&mut rng, &[n], 1.0)];
    check(&inputs, |t, v| t.total(v[0]))
}

/// conv → upsample → batch norm → ReLU6, as in an upward link.
fn link_chain_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..3);
    let inputs = [
        normal(&mut rng, &[2, c, 2, 2], 1.0),
        normal(&mut rng, &[c, c, 3, 3], 0.7),
        normal(&mut rng, &[c], 0.3),
        normal(&mut rng, &[c], 1.0),
        normal(&mut rng, &[c], 1.0),
    ];
    let stats = RunningStats::new(c);
    projected(seed, &inputs, |t, v| {
        let h = t.conv2d(v[0], v[1], v[2], 1).unwrap();
        let h = t.upsample_bilinear_x2(h).unwrap();
        let h = t.batch_norm(h, v[3], v[4], &stats, BnMode::Train).unwrap().0;
        t.relu6(h)
    })
}

/// Cross-entropy of a whole fabric against every parameter, with batch
/// statistics in the normalization layers.
pub fn fabric_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(2..4);
    let dims = FabricDims::for_resolution(layers, 2, 4, 3).unwrap();
    let mut fabric = Fabric::<f64>::new(dims, &mut rng).unwrap();
    for (_, p) in fabric.params.iter_mut() {
        let n = p.value().len();
        for i in 0..n {
            p.value_mut().data_mut()[i] += 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let images = normal(&mut rng, &[3, 3, 4, 4], 1.0);
    let targets: Vec<usize> = (0..3).map(|_| rng.random_range(0..3)).collect();
    let loss_of = |f: &Fabric<f64>| {
        let mut tape = Tape::new();
        let x = tape.input(images.clone());
        let fw = f.forward(&mut tape, x, Mode::Probe).unwrap();
        let loss = tape.softmax_cross_entropy(fw.logits, &targets).unwrap();
        (tape, loss)
    };
    let (tape, loss) = loss_of(&fabric);
    let grads = tape.backward(loss).unwrap();
    fabric.params.zero_grads();
    grads.accumulate_into(&tape, &mut fabric.params);

    let ids: Vec<_> = fabric.params.iter().map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = fabric.params.get(id).grad().data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = fabric.params.get(id).value().data()[j];
            fabric.params.get_mut(id).value_mut().data_mut()[j] = x0 + STEP;
            let (t, l) = loss_of(&fabric);
            let up = t.value(l).data()[0];
            fabric.params.get_mut(id).value_mut().data_mut()[j] = x0 - STEP;
            let (t, l) = loss_of(&fabric);
            let down = t.value(l).data()[0];
            fabric.params.get_mut(id).value_mut().data_mut()[j] = x0;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

pub struct OpOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
}

type Case = fn(u64) -> f64;

pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d stride 1", |s| conv_case(s, 1)),
        ("conv2d stride 2", |s| conv_case(s, 2)),
        ("upsample x2", upsample_case),
        ("batch norm (batch stats)", |s| batch_norm_case(s, BnMode::Train)),
        ("batch norm (running stats)", |s| batch_norm_case(s, BnMode::Eval)),
        ("relu6", relu6_case),
        ("sum", sum_case),
        ("flatten + linear", linear_case),
        ("softmax cross-entropy", cross_entropy_case),
        ("total", total_case),
        ("link chain", link_chain_case),
        ("micro fabric", fabric_case),
    ]
}

/// Runs every case on `seeds` seeds.
pub fn run_suite(seeds: u64) -> Vec<OpOutcome> {
    cases()
        .into_iter()
        .map(|(name, case)| OpOutcome {
            name,
            cases: seeds as usize,
            worst: (0..seeds).map(|s| case(1000 + s)).fold(0.0, f64::max),
        })
        .collect()
}
