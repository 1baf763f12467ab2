use samlab_core::models::{loss_and_grads, predict_logits, bind_params, Classifier, LinearModel};
use samlab_core::rng::SeedStream;
use samlab_core::tensor::{Tape, Tensor, Var};

const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy)]
enum Act {
    Relu,
    Tanh,
}

#[derive(Clone, Copy)]
enum Head {
    CrossEntropy,
    MeanSquare,
    SumDiff,
}

struct Graph {
    widths: Vec<usize>,
    acts: Vec<Act>,
    head: Head,
    labels: Vec<usize>,
    target: Tensor,
    /// x, then (weight, bias) per layer.
    leaves: Vec<Tensor>,
}

fn random_tensor(rng: &mut SeedStream, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

fn random_graph(seed: u64) -> Graph {
    let mut rng = SeedStream::new(seed, 77);
    let layers = 1 + rng.below(3);
    let batch = 1 + rng.below(5);
    let mut widths = vec![1 + rng.below(16)];
    for _ in 0..layers {
        widths.push(2 + rng.below(15));
    }
    let acts = (0..layers)
        .map(|_| if rng.bernoulli(0.5) { Act::Relu } else { Act::Tanh })
        .collect();
    let head = match rng.below(3) {
        0 => Head::CrossEntropy,
        1 => Head::MeanSquare,
        _ => Head::SumDiff,
    };
    let out = *widths.last().unwrap();
    let labels = (0..batch).map(|_| rng.below(out)).collect();
    let target = random_tensor(&mut rng, vec![batch, out], 1.0);
    let mut leaves = vec![random_tensor(&mut rng, vec![batch, widths[0]], 1.0)];
    for l in 0..layers {
        let scale = 1.0 / (widths[l] as f64).sqrt();
        leaves.push(random_tensor(&mut rng, vec![widths[l], widths[l + 1]], scale));
        leaves.push(random_tensor(&mut rng, vec![widths[l + 1]], 0.5));
    }
    Graph {
        widths,
        acts,
        head,
        labels,
        target,
        leaves,
    }
}

/// Records the graph; returns the loss, the leaf vars and the smallest
/// |relu input| seen.
fn record(g: &Graph, leaves: &[Tensor], tape: &mut Tape, scale: f64) -> (Var, Vec<Var>, f64) {
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let mut h = vars[0];
    let mut kink = f64::INFINITY;
    for l in 0..g.widths.len() - 1 {
        let z = tape.matmul(h, vars[1 + 2 * l]).unwrap();
        let z = tape.add(z, vars[2 + 2 * l]).unwrap();
        h = match g.acts[l] {
            Act::Relu => {
                let m = tape.value(z).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
                kink = kink.min(m);
                tape.relu(z).unwrap()
            }
            Act::Tanh => tape.tanh(z).unwrap(),
        };
    }
    let data = match g.head {
        Head::CrossEntropy => tape.softmax_cross_entropy(h, &g.labels).unwrap(),
        Head::MeanSquare => {
            let sq = tape.mul(h, h).unwrap();
            tape.mean(sq).unwrap()
        }
        Head::SumDiff => {
            let t = tape.constant(g.target.clone());
            let d = tape.sub(h, t).unwrap();
            let d2 = tape.mul(d, h).unwrap();
            tape.sum(d2).unwrap()
        }
    };
    let reg = tape.squared_norm(vars[1]).unwrap();
    let reg = tape.scale(reg, 0.1).unwrap();
    let total = tape.add(data, reg).unwrap();
    let out = tape.scale(total, scale).unwrap();
    (out, vars, kink)
}

fn evaluate(g: &Graph, leaves: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let (out, _, _) = record(g, leaves, &mut tape, 1.0);
    tape.value(out).item().unwrap()
}

fn analytic(g: &Graph, scale: f64) -> (Vec<Vec<f64>>, f64) {
    let mut tape = Tape::new();
    let (out, vars, kink) = record(g, &g.leaves, &mut tape, scale);
    let mut grads = tape.backward(out).unwrap();
    let gs = vars.iter().map(|&v| grads.take(v).unwrap().into_data()).collect();
    (gs, kink)
}

#[test]
fn gradients_match_central_differences_on_random_graphs() {
    let mut checked = 0;
    let mut seed = 0;
    let mut worst = 0.0f64;
    while checked < 100 {
        seed += 1;
        let g = random_graph(seed);
        let (grads, kink) = analytic(&g, 1.0);
        // A finite-difference step across the relu kink is not a derivative.
        if kink < 1e-3 {
            continue;
        }
        checked += 1;
        for (li, leaf) in g.leaves.iter().enumerate() {
            for k in 0..leaf.numel() {
                let mut plus = g.leaves.clone();
                plus[li].data_mut()[k] += FD_STEP;
                let mut minus = g.leaves.clone();
                minus[li].data_mut()[k] -= FD_STEP;
                let fd = (evaluate(&g, &plus) - evaluate(&g, &minus)) / (2.0 * FD_STEP);
                let a = grads[li][k];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
                assert!(rel < 1e-4, "graph {seed} leaf {li}[{k}]: analytic {a} vs fd {fd} (rel {rel})");
            }
        }
    }
    eprintln!("worst relative error over 100 graphs: {worst:.3e}");
}

#[test]
fn backward_is_linear_in_the_output() {
    for seed in 1..=20 {
        let g = random_graph(seed);
        let (base, _) = analytic(&g, 1.0);
        for c in [0.25, 8.0, -2.0] {
            let (scaled, _) = analytic(&g, c);
            for (b, s) in base.iter().zip(&scaled) {
                for (bv, sv) in b.iter().zip(s) {
                    assert_eq!(c * bv, *sv);
                }
            }
        }
        let c = 0.375 * seed as f64 + 0.1;
        let (scaled, _) = analytic(&g, c);
        for (b, s) in base.iter().zip(&scaled) {
            let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (bv, sv) in b.iter().zip(s) {
                assert!((c * bv - sv).abs() <= 1e-13 * peak);
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_gradients() {
    let g = random_graph(42);
    assert_eq!(analytic(&g, 1.0).0, analytic(&g, 1.0).0);
}

#[test]
fn linear_model_input_gradient_is_the_weight() {
    let model = LinearModel::from_weights(vec![0.5, -1.25, 3.0]).unwrap();
    let mut tape = Tape::new();
    let params = bind_params(&model, &mut tape, false);
    let x = tape.param(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap());
    let logits = predict_logits(&model, &mut tape, &params, x).unwrap();
    let score = tape.constant(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap());
    let picked = tape.mul(logits, score).unwrap();
    let total = tape.sum(picked).unwrap();
    let grads = tape.backward(total).unwrap();
    let gx = grads.get(x).unwrap();
    assert_eq!(gx.data(), &[0.5, -1.25, 3.0, 0.5, -1.25, 3.0]);
}

#[test]
fn cross_entropy_is_shift_invariant() {
    let mut rng = SeedStream::new(3, 0);
    let logits = random_tensor(&mut rng, vec![4, 3], 2.0);
    let labels = [0, 2, 1, 1];
    let ce = |t: Tensor| {
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let l = tape.softmax_cross_entropy(v, &labels).unwrap();
        tape.value(l).item().unwrap()
    };
    let base = ce(logits.clone());
    for shift in [-50.0, -1.5, 0.25, 7.0, 300.0] {
        let mut moved = logits.clone();
        moved.data_mut().iter_mut().for_each(|v| *v += shift);
        assert!((ce(moved) - base).abs() < 1e-12);
    }
}

#[test]
fn linear_loss_matches_scalar_log_loss() {
    let mut rng = SeedStream::new(11, 0);
    let model = LinearModel::init(4, false, 5).unwrap();
    let x = random_tensor(&mut rng, vec![6, 4], 1.0);
    let classes = [0, 1, 1, 0, 1, 0];
    let (loss, _) = loss_and_grads(&model, &x, &classes).unwrap();
    let w = model.weights();
    let expected = (0..6)
        .map(|i| {
            let s: f64 = x.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
            let y = if classes[i] == 1 { 1.0 } else { -1.0 };
            (1.0 + (-y * s).exp()).ln()
        })
        .sum::<f64>()
        / 6.0;
    assert!((loss - expected).abs() < 1e-14);
    assert_eq!(model.num_classes(), 2);
}
