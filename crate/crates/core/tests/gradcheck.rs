//! Reverse-mode gradients against central finite differences in double precision.

use megkws::gradcheck::rel_err;
use megkws::losses::{combined_loss, sample_rank_pairs, LossConfig};
use megkws::nncore::{Graph, NormStats, RunningStats, Tensor, Var};
use megkws::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-4;

fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Reduce an arbitrary node to a scalar with fixed random weights so every
/// output element gets a distinct upstream gradient.
fn weighted_mean(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let shape = g.shape(out).to_vec();
    let w = g.constant(randn(&shape, &mut stream(seed, &[77])));
    let p = g.mul(out, w).unwrap();
    g.mean(p)
}

/// Check d(loss)/d(input_k) for every input of a graph builder.
fn check_op(name: &str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        let loss = weighted_mean(&mut g, out, 5);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = weighted_mean(&mut g, out, 5);
    g.backward(loss).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for i in 0..analytic.len() {
            let mut up = inputs.clone();
            up[k].data_mut()[i] += H;
            let mut dn = inputs.clone();
            dn[k].data_mut()[i] -= H;
            numeric[i] = (eval(&up) - eval(&dn)) / (2.0 * H);
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-6, "{name}: input {k} relative error {e:e}");
    }
}

#[test]
fn conv1d_gradients() {
    let mut rng = stream(1, &[]);
    for (stride, padding, k) in [(1, 0, 3), (1, 3, 7), (2, 1, 3), (4, 1, 3), (1, 0, 1)] {
        let inputs = vec![randn(&[2, 3, 11], &mut rng), randn(&[4, 3, k], &mut rng), randn(&[4], &mut rng)];
        check_op(&format!("conv s={stride} p={padding} k={k}"), inputs, |g, v| {
            g.conv1d(v[0], v[1], Some(v[2]), stride, padding).unwrap()
        });
    }
}

#[test]
fn batch_norm_gradients() {
    let mut rng = stream(2, &[]);
    let inputs = vec![randn(&[3, 4, 5], &mut rng), randn(&[4], &mut rng), randn(&[4], &mut rng)];
    check_op("norm/train", inputs.clone(), |g, v| {
        let mut stats = RunningStats::new(4);
        g.batch_norm(v[0], v[1], v[2], NormStats::Train(&mut stats)).unwrap()
    });
    let mut frozen = RunningStats::new(4);
    frozen.mean = vec![0.3, -0.2, 0.1, 0.0];
    frozen.var = vec![1.5, 0.7, 2.0, 1.0];
    check_op("norm/eval", inputs, |g, v| g.batch_norm(v[0], v[1], v[2], NormStats::Eval(&frozen)).unwrap());
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = stream(3, &[]);
    // keep relu inputs away from the kink
    let away = Tensor::from_fn(&[3, 7], |i| if i % 2 == 0 { 0.5 + i as f64 * 0.1 } else { -0.4 - i as f64 * 0.05 });
    check_op("relu", vec![away], |g, v| g.relu(v[0]));
    check_op("sigmoid", vec![randn(&[3, 7], &mut rng)], |g, v| g.sigmoid(v[0]));
    check_op("scale", vec![randn(&[5], &mut rng)], |g, v| g.scale(v[0], -1.7));
    check_op("add", vec![randn(&[2, 3], &mut rng), randn(&[2, 3], &mut rng)], |g, v| g.add(v[0], v[1]).unwrap());
    check_op("mul", vec![randn(&[2, 3], &mut rng), randn(&[2, 3], &mut rng)], |g, v| g.mul(v[0], v[1]).unwrap());
    check_op("mul/self", vec![randn(&[4], &mut rng)], |g, v| g.mul(v[0], v[0]).unwrap());
    check_op("softmax", vec![randn(&[3, 6], &mut rng)], |g, v| g.softmax_last(v[0]).unwrap());
    check_op("sum_last", vec![randn(&[3, 6], &mut rng)], |g, v| g.sum_last(v[0]).unwrap());
    check_op("reshape", vec![randn(&[3, 6], &mut rng)], |g, v| g.reshape(v[0], &[2, 9]).unwrap());
    check_op("mean", vec![randn(&[3, 6], &mut rng)], |g, v| g.mean(v[0]));
}

#[test]
fn loss_gradients() {
    let mut rng = stream(4, &[]);
    let labels = [1u8, 0, 0, 1, 0, 0];
    let cfg = LossConfig { rank_weight: 0.3, ..Default::default() };
    let pairs = sample_rank_pairs(&labels, 16, 4, 0);
    check_op("focal+rank", vec![randn(&[6], &mut rng)], |g, v| {
        let prob = g.sigmoid(v[0]);
        combined_loss(g, prob, v[0], &labels, &cfg, &pairs).unwrap()
    });
}

#[test]
fn full_model_gradient() {
    let r = megkws::gradcheck::full_model_gradcheck(20, H).unwrap();
    println!(
        "full-model gradient check: worst relative error {:e}, {}/{} coordinates re-differenced at a smaller step, {:.1}s",
        r.worst, r.kinked, r.coordinates, r.seconds
    );
    for (i, e) in r.rel_errors.iter().enumerate() {
        assert!(*e < 1e-4, "instance {i}: relative error {e:e}");
    }
    assert!(r.seconds < 60.0, "gradient check took {:.1}s", r.seconds);
}
