//! Encoder/decoder network over mesh cells.
//!
//! Encoder stage: farthest-point centers, k-nearest neighbor groups, a
//! geometric affine normalization of the grouped deviations, residual MLP
//! blocks per neighbor, max-pool over the group, residual blocks per center.
//! Decoder: inverse-squared-distance interpolation from 3 nearest coarse
//! points back to the finer level, concatenated with the skip features.
//! Grouping runs on the barycenter columns of the feature rows.

use std::collections::HashMap;

use meshres_core::features::{BARYCENTER_COLUMN, FEATURE_DIMS};
use meshres_core::mesh::NUM_CLASSES;
use meshres_core::spatial::{fps, KdTree};
use meshres_core::Vec3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Graph, Var};
use crate::ModelError;

const INTERP_FAN: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dims: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    /// Output width of each encoder stage.
    pub stage_channels: Vec<usize>,
    /// Center count of each stage as a fraction of the input cell count.
    pub center_fractions: Vec<f64>,
    pub k_neighbors: usize,
    pub pre_blocks: usize,
    pub pos_blocks: usize,
    pub head_dim: usize,
    pub affine_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dims: FEATURE_DIMS,
            num_classes: NUM_CLASSES,
            embed_dim: 32,
            stage_channels: vec![32, 64],
            center_fractions: vec![0.25, 0.0625],
            k_neighbors: 16,
            pre_blocks: 2,
            pos_blocks: 2,
            head_dim: 32,
            affine_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.input_dims != FEATURE_DIMS {
            return bad(format!("input_dims must be {FEATURE_DIMS}"));
        }
        if self.num_classes == 0 || self.embed_dim == 0 || self.head_dim == 0 || self.k_neighbors == 0 {
            return bad("widths and k must be positive".into());
        }
        if self.stage_channels.len() != self.center_fractions.len() || self.stage_channels.is_empty() {
            return bad("need one center fraction per stage and at least one stage".into());
        }
        if self.stage_channels.contains(&0) {
            return bad("stage widths must be positive".into());
        }
        let mut prev = 1.0;
        for &f in &self.center_fractions {
            if !(f > 0.0 && f < prev) && !(f > 0.0 && f <= 1.0 && prev == 1.0) {
                return bad(format!("center fractions must decrease within (0, 1]: {:?}", self.center_fractions));
            }
            prev = f;
        }
        Ok(())
    }

    /// Center count per stage for `n` input cells.
    pub fn centers_per_stage(&self, n: usize) -> Vec<usize> {
        let mut prev = n;
        self.center_fractions
            .iter()
            .map(|f| {
                let m = ((f * n as f64).ceil() as usize).clamp(1, prev.max(1));
                prev = m;
                m
            })
            .collect()
    }

    /// Feature width at encoder level `l` (0 = embedded input cells).
    fn level_width(&self, l: usize) -> usize {
        if l == 0 {
            self.embed_dim
        } else {
            self.stage_channels[l - 1]
        }
    }

    /// Every parameter name and shape, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let lin = |out: &mut Vec<(String, (usize, usize))>, name: String, i: usize, o: usize| {
            out.push((format!("{name}.w"), (i, o)));
            out.push((format!("{name}.b"), (1, o)));
        };
        lin(&mut out, "embed".into(), self.input_dims, self.embed_dim);
        for s in 0..self.stages() {
            let c_in = self.level_width(s);
            let c = self.stage_channels[s];
            out.push((format!("stage{s}.affine.alpha"), (1, c_in + 3)));
            out.push((format!("stage{s}.affine.beta"), (1, c_in + 3)));
            lin(&mut out, format!("stage{s}.transfer"), 2 * c_in + 3, c);
            for j in 0..self.pre_blocks {
                lin(&mut out, format!("stage{s}.pre{j}.fc1"), c, c);
                lin(&mut out, format!("stage{s}.pre{j}.fc2"), c, c);
            }
            for j in 0..self.pos_blocks {
                lin(&mut out, format!("stage{s}.pos{j}.fc1"), c, c);
                lin(&mut out, format!("stage{s}.pos{j}.fc2"), c, c);
            }
        }
        let mut src_w = self.level_width(self.stages());
        for l in (1..=self.stages()).rev() {
            let w = self.level_width(l - 1);
            lin(&mut out, format!("dec{l}.fuse"), src_w + w, w);
            lin(&mut out, format!("dec{l}.block.fc1"), w, w);
            lin(&mut out, format!("dec{l}.block.fc2"), w, w);
            src_w = w;
        }
        lin(&mut out, "head.fc1".into(), self.embed_dim, self.head_dim);
        lin(&mut out, "head.fc2".into(), self.head_dim, self.num_classes);
        out
    }
}

/// Named parameter tensors in the order given by [`ModelConfig::param_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl ModelParams {
    /// Uniform `±1/sqrt(fan_in)` weights and biases; affine `alpha = 1`, `beta = 0`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.param_shapes();
        let fan_in: HashMap<String, usize> = shapes
            .iter()
            .filter(|(n, _)| n.ends_with(".w"))
            .map(|(n, s)| (n.trim_end_matches(".w").to_string(), s.0))
            .collect();
        let tensors = shapes
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".alpha") {
                    Array2::ones(shape)
                } else if name.ends_with(".beta") {
                    Array2::zeros(shape)
                } else {
                    let layer = name.rsplit_once('.').map(|(l, _)| l).unwrap_or(&name);
                    let bound = 1.0 / (fan_in[layer] as f64).sqrt();
                    Array2::from_shape_fn(shape, |_| rng.gen_range(-bound..bound))
                };
                (name, t)
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        let shapes = self.config.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), (tn, t)) in shapes.iter().zip(&self.tensors) {
            if name != tn || t.dim() != *shape {
                return Err(ModelError::Shape(format!(
                    "tensor {tn} {:?} does not match {name} {shape:?}",
                    t.dim()
                )));
            }
            if !t.iter().all(|v| v.is_finite()) {
                return Err(ModelError::Shape(format!("tensor {tn} has non-finite values")));
            }
        }
        Ok(())
    }
}

/// Sampling and neighborhood indices for one input; depends only on the
/// barycenter coordinates, so it can be computed once per surface.
#[derive(Debug, Clone)]
pub struct Topology {
    pub cells: usize,
    stages: Vec<StageTopology>,
    /// Interpolation from level `l` to level `l - 1`, indexed by `l - 1`.
    interp: Vec<Interp>,
}

#[derive(Debug, Clone)]
struct StageTopology {
    centers: Vec<usize>,
    k: usize,
    neighbors: Vec<usize>,
    /// Repeats each center index `k` times.
    center_rows: Vec<usize>,
    rel_xyz: Array2<f64>,
}

#[derive(Debug, Clone)]
struct Interp {
    index: Vec<usize>,
    weights: Vec<f64>,
    fan: usize,
}

pub fn barycenter_coords(features: &Array2<f64>) -> Vec<Vec3> {
    features
        .rows()
        .into_iter()
        .map(|r| Vec3::new(r[BARYCENTER_COLUMN], r[BARYCENTER_COLUMN + 1], r[BARYCENTER_COLUMN + 2]))
        .collect()
}

impl Topology {
    pub fn build(features: &Array2<f64>, config: &ModelConfig) -> Result<Self, ModelError> {
        if features.ncols() != config.input_dims {
            return Err(ModelError::Shape(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                config.input_dims
            )));
        }
        let n = features.nrows();
        if n == 0 {
            return Err(ModelError::Shape("no cells".into()));
        }
        let mut level_points = vec![barycenter_coords(features)];
        let mut stages = Vec::new();
        for m in config.centers_per_stage(n) {
            let pts = level_points.last().unwrap();
            let centers = fps(pts, m);
            let center_pts: Vec<Vec3> = centers.iter().map(|&i| pts[i]).collect();
            let k = config.k_neighbors.min(pts.len());
            let tree = KdTree::new(pts);
            let mut neighbors = Vec::with_capacity(m * k);
            let mut rel_xyz = Array2::zeros((m * k, 3));
            for (ci, c) in center_pts.iter().enumerate() {
                for (j, nb) in tree.nearest(c, k).into_iter().enumerate() {
                    neighbors.push(nb.index);
                    let d = pts[nb.index] - c;
                    for a in 0..3 {
                        rel_xyz[[ci * k + j, a]] = d[a];
                    }
                }
            }
            let center_rows = centers.iter().flat_map(|&c| std::iter::repeat_n(c, k)).collect();
            stages.push(StageTopology {
                centers,
                k,
                neighbors,
                center_rows,
                rel_xyz,
            });
            level_points.push(center_pts);
        }
        let interp = (1..level_points.len())
            .map(|l| {
                let src = &level_points[l];
                let tree = KdTree::new(src);
                let fan = INTERP_FAN.min(src.len());
                let mut index = Vec::new();
                let mut weights = Vec::new();
                for q in &level_points[l - 1] {
                    let nbrs = tree.nearest(q, fan);
                    let w: Vec<f64> = nbrs.iter().map(|nb| 1.0 / (nb.dist2 + 1e-8)).collect();
                    let total: f64 = w.iter().sum();
                    for (nb, wi) in nbrs.iter().zip(w) {
                        index.push(nb.index);
                        weights.push(wi / total);
                    }
                }
                Interp { index, weights, fan }
            })
            .collect();
        Ok(Self {
            cells: n,
            stages,
            interp,
        })
    }

    pub fn centers(&self, stage: usize) -> &[usize] {
        &self.stages[stage].centers
    }
}

/// Records the forward pass on `graph`. Returns the `N x classes` logits and
/// the leaf variable of every parameter (in `params.tensors` order).
pub fn forward_graph(
    graph: &mut Graph,
    features: &Array2<f64>,
    topology: &Topology,
    params: &ModelParams,
) -> Result<(Var, Vec<Var>), ModelError> {
    let config = &params.config;
    if features.nrows() != topology.cells || features.ncols() != config.input_dims {
        return Err(ModelError::Shape(format!(
            "features {:?} do not match topology of {} cells",
            features.dim(),
            topology.cells
        )));
    }
    if topology.stages.len() != config.stages() {
        return Err(ModelError::Shape("topology built for a different stage count".into()));
    }
    let vars: Vec<Var> = params.tensors.iter().map(|(_, t)| graph.leaf(t.clone())).collect();
    let lookup: HashMap<&str, Var> = params
        .tensors
        .iter()
        .zip(&vars)
        .map(|((n, _), v)| (n.as_str(), *v))
        .collect();
    let p = |name: &str| -> Result<Var, ModelError> {
        lookup
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Shape(format!("missing parameter {name}")))
    };
    let linear = |g: &mut Graph, x: Var, name: &str| -> Result<Var, ModelError> {
        Ok(g.linear(x, p(&format!("{name}.w"))?, p(&format!("{name}.b"))?))
    };
    let residual = |g: &mut Graph, x: Var, name: &str| -> Result<Var, ModelError> {
        let h = linear(g, x, &format!("{name}.fc1"))?;
        let h = g.relu(h);
        let h = linear(g, h, &format!("{name}.fc2"))?;
        let y = g.add(x, h);
        Ok(g.relu(y))
    };

    let input = graph.leaf(features.clone());
    let embedded = linear(graph, input, "embed")?;
    let mut levels = vec![graph.relu(embedded)];
    for (s, st) in topology.stages.iter().enumerate() {
        let prev = *levels.last().unwrap();
        let grouped = graph.gather(prev, st.neighbors.clone());
        let center = graph.gather(prev, st.center_rows.clone());
        let dev = graph.sub(grouped, center);
        let rel = graph.leaf(st.rel_xyz.clone());
        let dev = graph.concat(dev, rel);
        let normed = graph.geometric_affine(
            dev,
            p(&format!("stage{s}.affine.alpha"))?,
            p(&format!("stage{s}.affine.beta"))?,
            config.affine_eps,
        );
        let x = graph.concat(normed, center);
        let x = linear(graph, x, &format!("stage{s}.transfer"))?;
        let mut x = graph.relu(x);
        for j in 0..config.pre_blocks {
            x = residual(graph, x, &format!("stage{s}.pre{j}"))?;
        }
        let mut x = graph.max_pool(x, st.k);
        for j in 0..config.pos_blocks {
            x = residual(graph, x, &format!("stage{s}.pos{j}"))?;
        }
        levels.push(x);
    }
    let mut d = *levels.last().unwrap();
    for l in (1..=config.stages()).rev() {
        let it = &topology.interp[l - 1];
        let up = graph.weighted_gather(d, it.index.clone(), it.weights.clone(), it.fan);
        let x = graph.concat(up, levels[l - 1]);
        let x = linear(graph, x, &format!("dec{l}.fuse"))?;
        let x = graph.relu(x);
        d = residual(graph, x, &format!("dec{l}.block"))?;
    }
    let h = linear(graph, d, "head.fc1")?;
    let h = graph.relu(h);
    let logits = linear(graph, h, "head.fc2")?;
    Ok((logits, vars))
}

/// Per-cell logits, `N x num_classes`.
pub fn forward(features: &Array2<f64>, params: &ModelParams) -> Result<Array2<f64>, ModelError> {
    let topology = Topology::build(features, &params.config)?;
    forward_with(features, &topology, params)
}

pub fn forward_with(
    features: &Array2<f64>,
    topology: &Topology,
    params: &ModelParams,
) -> Result<Array2<f64>, ModelError> {
    let mut g = Graph::new();
    let (logits, _) = forward_graph(&mut g, features, topology, params)?;
    Ok(g.value(logits).clone())
}

/// Geometric affine normalization of grouped features laid out as
/// `M * k` rows (group-major) against their `M` centers.
pub fn geometric_affine(
    grouped: &Array2<f64>,
    centers: &Array2<f64>,
    k: usize,
    alpha: &Array2<f64>,
    beta: &Array2<f64>,
    eps: f64,
) -> Array2<f64> {
    let mut g = Graph::new();
    let rows: Vec<usize> = (0..centers.nrows()).flat_map(|c| std::iter::repeat_n(c, k)).collect();
    let gv = g.leaf(grouped.clone());
    let cv = g.leaf(centers.clone());
    let rep = g.gather(cv, rows);
    let d = g.sub(gv, rep);
    let a = g.leaf(alpha.clone());
    let b = g.leaf(beta.clone());
    let out = g.geometric_affine(d, a, b, eps);
    g.value(out).clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_features(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, FEATURE_DIMS), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn config_validation() {
        ModelConfig::default().validate().unwrap();
        let bad = ModelConfig {
            center_fractions: vec![0.1, 0.2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            stage_channels: vec![8],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(ModelConfig::default().centers_per_stage(1000), vec![250, 63]);
        assert_eq!(ModelConfig::default().centers_per_stage(3), vec![1, 1]);
    }

    #[test]
    fn output_shape_and_softmax() {
        let params = ModelParams::init(&ModelConfig::default(), 3).unwrap();
        params.check().unwrap();
        for n in [5, 40, 97] {
            let logits = forward(&random_features(n, n as u64), &params).unwrap();
            assert_eq!(logits.dim(), (n, NUM_CLASSES));
            for row in crate::tape::softmax_rows(&logits).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let params = ModelParams::init(&ModelConfig::default(), 3).unwrap();
        let bad = Array2::zeros((10, 7));
        assert!(matches!(forward(&bad, &params), Err(ModelError::Shape(_))));
        let topo = Topology::build(&random_features(12, 1), &params.config).unwrap();
        assert!(forward_with(&random_features(13, 1), &topo, &params).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let params = ModelParams::init(&ModelConfig::default(), 5).unwrap();
        let x = random_features(64, 9);
        let base = forward(&x, &params).unwrap();
        // permutation fixing index 0
        let mut perm: Vec<usize> = (1..64).collect();
        perm.reverse();
        perm.rotate_left(17);
        perm.insert(0, 0);
        let mut xp = Array2::zeros(x.raw_dim());
        for (new, &old) in perm.iter().enumerate() {
            xp.row_mut(new).assign(&x.row(old));
        }
        let out = forward(&xp, &params).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..NUM_CLASSES {
                assert!((out[[new, c]] - base[[old, c]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn deterministic() {
        let params = ModelParams::init(&ModelConfig::default(), 1).unwrap();
        let x = random_features(50, 2);
        assert_eq!(forward(&x, &params).unwrap(), forward(&x, &params).unwrap());
    }

    #[test]
    fn affine_examples() {
        let centers = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        let rows: Vec<usize> = (0..3).flat_map(|c| [c, c]).collect();
        let grouped = Array2::from_shape_fn((6, 2), |(r, j)| centers[[rows[r], j]]);
        let ones = Array2::ones((1, 2));
        let zeros = Array2::zeros((1, 2));
        let out = geometric_affine(&grouped, &centers, 2, &ones, &zeros, 1e-5);
        assert!(out.iter().all(|&v| v == 0.0));
        let fives = Array2::from_elem((1, 2), 5.0);
        let out = geometric_affine(&grouped, &centers, 2, &ones, &fives, 1e-5);
        assert!(out.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn affine_matches_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (m, k, c) = (4, 3, 2);
        let grouped = Array2::from_shape_fn((m * k, c), |_| rng.gen_range(-2.0..2.0));
        let centers = Array2::from_shape_fn((m, c), |_| rng.gen_range(-2.0..2.0));
        let alpha = Array2::from_shape_fn((1, c), |_| rng.gen_range(0.5..1.5));
        let beta = Array2::from_shape_fn((1, c), |_| rng.gen_range(-1.0..1.0));
        let out = geometric_affine(&grouped, &centers, k, &alpha, &beta, 1e-5);
        // oracle: explicit loops, two passes
        let mut devs = Vec::new();
        for i in 0..m {
            for j in 0..k {
                for ch in 0..c {
                    devs.push(grouped[[i * k + j, ch]] - centers[[i, ch]]);
                }
            }
        }
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let sigma = (devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / devs.len() as f64).sqrt();
        for i in 0..m {
            for j in 0..k {
                for ch in 0..c {
                    let d = grouped[[i * k + j, ch]] - centers[[i, ch]];
                    let expect = alpha[[0, ch]] * d / (sigma + 1e-5) + beta[[0, ch]];
                    assert!((out[[i * k + j, ch]] - expect).abs() < 1e-12);
                }
            }
        }
        // with alpha = 1, beta = 0 the output spread is sigma / (sigma + eps)
        let unit = geometric_affine(&grouped, &centers, k, &Array2::ones((1, c)), &Array2::zeros((1, c)), 1e-5);
        let (_, s) = crate::tape::mean_std(&unit);
        assert!((s - sigma / (sigma + 1e-5)).abs() < 1e-12);
    }
}
