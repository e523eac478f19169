use meshres_model::network::{forward_graph, ModelConfig, ModelParams, Topology};
use meshres_model::tape::Graph;
use meshres_model::train::loss_ce;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(x: &Array2<f64>, topo: &Topology, params: &ModelParams, labels: &[usize]) -> (f64, Vec<usize>) {
    let mut g = Graph::new();
    let (logits, _) = forward_graph(&mut g, x, topo, params).unwrap();
    (loss_ce(g.value(logits), labels), g.branch_pattern())
}

#[test]
fn full_model_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let config = ModelConfig::default();
    let params = ModelParams::init(&config, 17).unwrap();
    let x = Array2::from_shape_fn((32, 24), |_| rng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..32).map(|_| rng.gen_range(0..8)).collect();
    let topo = Topology::build(&x, &config).unwrap();

    let mut g = Graph::new();
    let (logits, vars) = forward_graph(&mut g, &x, &topo, &params).unwrap();
    let root = g.cross_entropy(logits, labels.clone());
    let grads = g.backward(root);

    let h = 1e-5;
    let mut checked = 0;
    let mut straddling = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let t = rng.gen_range(0..params.tensors.len());
        let shape = params.tensors[t].1.dim();
        let idx = (rng.gen_range(0..shape.0), rng.gen_range(0..shape.1));
        let mut plus = params.clone();
        plus.tensors[t].1[idx] += h;
        let mut minus = params.clone();
        minus.tensors[t].1[idx] -= h;
        let (lp, pattern_p) = loss(&x, &topo, &plus, &labels);
        let (lm, pattern_m) = loss(&x, &topo, &minus, &labels);
        // the two evaluations sit on different linear pieces of a ReLU or
        // max-pool; central differences are not defined there
        if pattern_p != pattern_m {
            straddling += 1;
            assert!(straddling <= 10, "too many probes straddle a kink");
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = grads.get(vars[t]).map_or(0.0, |g| g[idx]);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
        assert!(
            rel < 1e-4,
            "{} {:?}: analytic {analytic} numeric {numeric} rel {rel}",
            params.tensors[t].0,
            idx
        );
        worst = worst.max(rel);
        checked += 1;
    }
    eprintln!("worst relative error {worst:.3e} over {checked} probes; {straddling} redrawn");
}
