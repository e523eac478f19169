//! Tensor-level reverse-mode automatic differentiation.
//!
//! Every value is a 2-D `f64` matrix. Operations append nodes to a [`Graph`]
//! in evaluation order, so walking the node list backwards visits each node
//! after all of its consumers.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Relu(Var),
    /// `out[r] = sum_j weights[r * fan + j] * src[index[r * fan + j]]`
    Gather {
        src: Var,
        index: Vec<usize>,
        weights: Option<Vec<f64>>,
        fan: usize,
    },
    Concat(Var, Var),
    /// Source row of the maximum for every output entry, row-major.
    MaxPool { src: Var, argmax: Vec<usize> },
    Affine {
        diff: Var,
        alpha: Var,
        beta: Var,
        eps: f64,
        mean: f64,
        sigma: f64,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
    Sum(Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` where nothing flowed.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Which side of every piecewise-linear branch the recorded values took:
    /// the sign of each ReLU input and the winning row of each max-pool
    /// entry. Two recordings of the same graph with equal patterns lie on
    /// the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.value(*a).iter().map(|&x| usize::from(x > 0.0))),
                Op::MaxPool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let v = self.value(a) + self.value(bias);
        self.push(v, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `x W + b` with `b` a `1 x m` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut v = bv
            .broadcast((xv.nrows(), wv.ncols()))
            .expect("bias must be a single row matching the output width")
            .to_owned();
        general_mat_mul(1.0, xv, wv, 1.0, &mut v);
        self.push(v, Op::Linear { x, w, b })
    }

    /// Row `r` of the result is row `index[r]` of `src`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>) -> Var {
        let s = self.value(src);
        let mut out = Array2::zeros((index.len(), s.ncols()));
        for (mut row, &i) in out.rows_mut().into_iter().zip(&index) {
            row.assign(&s.row(i));
        }
        self.push(
            out,
            Op::Gather {
                src,
                index,
                weights: None,
                fan: 1,
            },
        )
    }

    /// Weighted sum of `fan` source rows per output row.
    pub fn weighted_gather(&mut self, src: Var, index: Vec<usize>, weights: Vec<f64>, fan: usize) -> Var {
        assert_eq!(index.len(), weights.len());
        assert!(fan > 0 && index.len() % fan == 0);
        let s = self.value(src);
        let rows = index.len() / fan;
        let mut out = Array2::zeros((rows, s.ncols()));
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            for j in r * fan..(r + 1) * fan {
                row.scaled_add(weights[j], &s.row(index[j]));
            }
        }
        self.push(
            out,
            Op::Gather {
                src,
                index,
                weights: Some(weights),
                fan,
            },
        )
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat requires equal row counts");
        self.push(v, Op::Concat(a, b))
    }

    /// Column-wise max over consecutive groups of `group` rows. The first
    /// maximal row wins ties.
    pub fn max_pool(&mut self, src: Var, group: usize) -> Var {
        let s = self.value(src);
        assert!(group > 0 && s.nrows() % group == 0);
        let rows = s.nrows() / group;
        let cols = s.ncols();
        let mut out = Array2::zeros((rows, cols));
        let mut argmax = vec![0usize; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let mut best = r * group;
                for i in r * group + 1..(r + 1) * group {
                    if s[[i, c]] > s[[best, c]] {
                        best = i;
                    }
                }
                out[[r, c]] = s[[best, c]];
                argmax[r * cols + c] = best;
            }
        }
        self.push(out, Op::MaxPool { src, argmax })
    }

    /// `alpha * diff / (sigma + eps) + beta`, where `sigma` is the population
    /// standard deviation of every entry of `diff`; `alpha`, `beta` are `1 x C`.
    pub fn geometric_affine(&mut self, diff: Var, alpha: Var, beta: Var, eps: f64) -> Var {
        let d = self.value(diff);
        let (mean, sigma) = mean_std(d);
        let scale = 1.0 / (sigma + eps);
        let v = d * self.value(alpha) * scale + self.value(beta);
        self.push(
            v,
            Op::Affine {
                diff,
                alpha,
                beta,
                eps,
                mean,
                sigma,
            },
        )
    }

    /// Mean negative log-softmax probability of the true class, as `1 x 1`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), labels.len());
        let probs = softmax_rows(z);
        let n = labels.len().max(1) as f64;
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = z.row(r);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.mapv(|x| (x - m).exp()).sum().ln();
            loss += lse - row[l];
        }
        self.push(
            Array2::from_elem((1, 1), loss / n),
            Op::CrossEntropy { logits, labels, probs },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    /// Reverse sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.value(root).raw_dim()));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Linear { x, w, b } => {
                    let gx = g.dot(&self.value(*w).t());
                    let gw = self.value(*x).t().dot(&g);
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *x, gx);
                }
                Op::AddBias(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|x, &y| {
                        if y <= 0.0 {
                            *x = 0.0;
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Gather { src, index, weights, fan } => {
                    let mut ga = Array2::zeros(self.value(*src).raw_dim());
                    for (j, &i) in index.iter().enumerate() {
                        let w = weights.as_ref().map_or(1.0, |w| w[j]);
                        ga.row_mut(i).scaled_add(w, &g.row(j / fan));
                    }
                    acc(&mut grads, *src, ga);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).ncols();
                    acc(&mut grads, *a, g.slice(s![.., ..ca]).to_owned());
                    acc(&mut grads, *b, g.slice(s![.., ca..]).to_owned());
                }
                Op::MaxPool { src, argmax } => {
                    let mut ga = Array2::zeros(self.value(*src).raw_dim());
                    let cols = g.ncols();
                    for ((r, c), &gv) in g.indexed_iter() {
                        ga[[argmax[r * cols + c], c]] += gv;
                    }
                    acc(&mut grads, *src, ga);
                }
                Op::Affine {
                    diff,
                    alpha,
                    beta,
                    eps,
                    mean,
                    sigma,
                } => {
                    let d = self.value(*diff);
                    let a = self.value(*alpha);
                    let s = sigma + eps;
                    let ga = (&g * d).sum_axis(Axis(0)).insert_axis(Axis(0)) / s;
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga_scaled = &g * a;
                    let mut gd = &ga_scaled / s;
                    if *sigma > 0.0 {
                        let dl_ds = -(&ga_scaled * d).sum() / (s * s);
                        let n = d.len() as f64;
                        let k = dl_ds / (n * sigma);
                        Zip::from(&mut gd).and(d).for_each(|x, &dv| *x += k * (dv - mean));
                    }
                    acc(&mut grads, *alpha, ga);
                    acc(&mut grads, *beta, gb);
                    acc(&mut grads, *diff, gd);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let n = labels.len().max(1) as f64;
                    let mut gl = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        gl[[r, l]] -= 1.0;
                    }
                    gl *= g[[0, 0]] / n;
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
            }
        }
        // only leaves still hold gradients; intermediates were taken above
        Gradients { grads }
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

/// Two-pass mean and population standard deviation of all entries.
pub fn mean_std(a: &Array2<f64>) -> (f64, f64) {
    let n = a.len().max(1) as f64;
    let mean = a.sum() / n;
    let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of every entry of every leaf against `build`.
    fn check<F>(leaves: Vec<Array2<f64>>, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let loss_at = |vals: &[Array2<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|v| g.leaf(v.clone())).collect();
            let root = build(&mut g, &vars);
            g.value(root)[[0, 0]]
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|v| g.leaf(v.clone())).collect();
        let root = build(&mut g, &vars);
        let grads = g.backward(root);
        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(vars[li]).cloned().unwrap_or_else(|| Array2::zeros(leaf.raw_dim()));
            for idx in 0..leaf.len() {
                let mut plus = leaves.clone();
                let mut minus = leaves.clone();
                plus[li].as_slice_mut().unwrap()[idx] += h;
                minus[li].as_slice_mut().unwrap()[idx] -= h;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "leaf {li} entry {idx}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn linear_relu_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![random(5, 3, &mut rng), random(3, 4, &mut rng), random(1, 4, &mut rng)], |g, v| {
            let h = g.linear(v[0], v[1], v[2]);
            let r = g.relu(h);
            let s = g.scale(r, 0.7);
            g.sum(s)
        });
    }

    #[test]
    fn gather_concat_pool_sub() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(vec![random(6, 3, &mut rng), random(6, 2, &mut rng)], |g, v| {
            let a = g.gather(v[0], vec![0, 2, 2, 5, 1, 0, 3, 4]);
            let b = g.gather(v[1], vec![1, 1, 3, 0, 5, 5, 2, 4]);
            let c = g.concat(a, b);
            let d = g.weighted_gather(c, vec![0, 3, 7, 2], vec![0.25, 0.75, 1.5, -0.5], 2);
            let p = g.max_pool(c, 4);
            let q = g.sub(p, d);
            let w = g.add(q, p);
            g.cross_entropy(w, vec![1, 4])
        });
    }

    #[test]
    fn affine_and_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(
            vec![random(8, 3, &mut rng), random(1, 3, &mut rng), random(1, 3, &mut rng), random(3, 4, &mut rng)],
            |g, v| {
                let a = g.geometric_affine(v[0], v[1], v[2], 1e-5);
                let logits = g.matmul(a, v[3]);
                g.cross_entropy(logits, vec![0, 3, 1, 1, 2, 0, 3, 2])
            },
        );
    }

    #[test]
    fn constant_root_has_no_parameter_gradients() {
        let mut g = Graph::new();
        let p = g.leaf(array![[1.0, 2.0]]);
        let c = g.leaf(array![[3.0]]);
        let root = g.scale(c, 2.0);
        let grads = g.backward(root);
        assert!(grads.get(p).is_none());
        assert_eq!(grads.get(c).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn linear_softmax_closed_form() {
        // dL/dW = x^T (softmax - onehot) / n for logits = x W
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(4, 3, &mut rng);
        let w = random(3, 8, &mut rng);
        let labels = vec![1, 7, 0, 4];
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let wv = g.leaf(w.clone());
        let z = g.matmul(xv, wv);
        let loss = g.cross_entropy(z, labels.clone());
        let grads = g.backward(loss);
        let mut delta = softmax_rows(&x.dot(&w));
        for (r, &l) in labels.iter().enumerate() {
            delta[[r, l]] -= 1.0;
        }
        let expect = x.t().dot(&delta) / 4.0;
        let err = (grads.get(wv).unwrap() - &expect).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-10);
    }
}
