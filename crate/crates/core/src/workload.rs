//! Gradient-tensor workloads: the tensors a model produces each step, how
//! long backprop takes to produce each one, and the noise on top.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::GroupSpec;
use crate::protocol::{ProtocolError, TensorMeta};

pub const WORKLOAD_SCHEMA_VERSION: u32 = 1;

/// Parameter count of the benchmark model.
pub const FC_DENSENET_PARAMS: u64 = 220_000_000;
pub const FC_DENSENET_TENSORS: usize = 500;
/// Per-step compute of the benchmark workload: the four compute rows of the
/// single-node tensor-core timing table (220.801 + 226.612 + 166.337 +
/// 107.445 ms).
pub const FC_DENSENET_COMPUTE_NS: u64 = 721_195_000;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("workload has no tensors")]
    Empty,
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{0}` has a zero compute interval")]
    ZeroInterval(String),
    #[error("{0} compute intervals for {1} tensors")]
    IntervalCount(usize, usize),
    #[error("unsupported workload schema_version {0} (expected {WORKLOAD_SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid jitter: {0}")]
    Jitter(String),
    #[error("total_params ({total}) must be at least tensor_count ({count})")]
    TooFewParams { total: u64, count: usize },
    #[error(transparent)]
    Tensor(#[from] ProtocolError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

/// Per-tensor readiness noise, independent per worker and step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JitterSpec {
    #[default]
    None,
    /// Uniform on `[-half_width_ns, +half_width_ns]`.
    Uniform { half_width_ns: u64 },
    /// Gaussian with standard deviation `sigma_ns`.
    Normal { sigma_ns: u64 },
}

impl JitterSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if let JitterSpec::Normal { sigma_ns } = self {
            Normal::new(0.0, *sigma_ns as f64).map_err(|e| WorkloadError::Jitter(e.to_string()))?;
        }
        Ok(())
    }

    /// One draw in nanoseconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match *self {
            JitterSpec::None => 0,
            JitterSpec::Uniform { half_width_ns: 0 } | JitterSpec::Normal { sigma_ns: 0 } => 0,
            JitterSpec::Uniform { half_width_ns } => {
                let d = half_width_ns as i64;
                rng.random_range(-d..=d)
            }
            JitterSpec::Normal { sigma_ns } => {
                let n = Normal::new(0.0, sigma_ns as f64).expect("validated");
                n.sample(rng).round() as i64
            }
        }
    }
}

impl fmt::Display for JitterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JitterSpec::None => write!(f, "none"),
            JitterSpec::Uniform { half_width_ns } => write!(f, "uniform(±{half_width_ns}ns)"),
            JitterSpec::Normal { sigma_ns } => write!(f, "normal(σ={sigma_ns}ns)"),
        }
    }
}

/// Tensors in creation (forward) order; gradients become ready in reverse.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadGraph {
    tensors: Vec<Arc<TensorMeta>>,
    /// `compute_ns[i]`: backprop compute preceding tensor `i`'s gradient.
    compute_ns: Vec<u64>,
    jitter: JitterSpec,
    groups: Option<GroupSpec>,
}

impl WorkloadGraph {
    pub fn new(
        tensors: Vec<TensorMeta>,
        compute_ns: Vec<u64>,
        jitter: JitterSpec,
    ) -> Result<Self, WorkloadError> {
        if tensors.is_empty() {
            return Err(WorkloadError::Empty);
        }
        if compute_ns.len() != tensors.len() {
            return Err(WorkloadError::IntervalCount(
                compute_ns.len(),
                tensors.len(),
            ));
        }
        let mut names = std::collections::HashSet::new();
        for (t, &c) in tensors.iter().zip(&compute_ns) {
            if !names.insert(t.name().to_string()) {
                return Err(WorkloadError::DuplicateName(t.name().to_string()));
            }
            if c == 0 {
                return Err(WorkloadError::ZeroInterval(t.name().to_string()));
            }
        }
        jitter.validate()?;
        Ok(WorkloadGraph {
            tensors: tensors.into_iter().map(Arc::new).collect(),
            compute_ns,
            jitter,
            groups: None,
        })
    }

    pub fn with_groups(mut self, groups: GroupSpec) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn with_jitter(mut self, jitter: JitterSpec) -> Result<Self, WorkloadError> {
        jitter.validate()?;
        self.jitter = jitter;
        Ok(self)
    }

    pub fn tensors(&self) -> &[Arc<TensorMeta>] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn compute_ns(&self) -> &[u64] {
        &self.compute_ns
    }

    pub fn jitter(&self) -> JitterSpec {
        self.jitter
    }

    pub fn groups(&self) -> Option<&GroupSpec> {
        self.groups.as_ref()
    }

    pub fn total_bytes(&self) -> u64 {
        self.tensors.iter().map(|t| t.message_bytes()).sum()
    }

    pub fn total_params(&self) -> u64 {
        self.tensors.iter().map(|t| t.num_elements()).sum()
    }

    /// Tensor indices in gradient-readiness order.
    pub fn backprop_order(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tensors.len()).rev()
    }

    /// `(tensor index, nominal ready time)` in readiness order, strictly increasing.
    pub fn nominal_readiness(&self) -> Vec<(usize, u64)> {
        let mut t = 0u64;
        self.backprop_order()
            .map(|i| {
                t += self.compute_ns[i];
                (i, t)
            })
            .collect()
    }

    /// Noise-free compute time of one step.
    pub fn critical_path_ns(&self) -> u64 {
        self.compute_ns.iter().sum()
    }

    /// Tensors in backprop order, the order the default grouping walks.
    pub fn backprop_tensors(&self) -> Vec<&TensorMeta> {
        self.backprop_order().map(|i| &*self.tensors[i]).collect()
    }

    pub fn to_file(&self) -> WorkloadFile {
        WorkloadFile {
            schema_version: WORKLOAD_SCHEMA_VERSION,
            jitter: self.jitter,
            tensors: self
                .tensors
                .iter()
                .zip(&self.compute_ns)
                .map(|(t, &c)| TensorEntry {
                    meta: (**t).clone(),
                    compute_ns: c,
                })
                .collect(),
            groups: self.groups.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: WorkloadFile =
            serde_json::from_str(&text).map_err(|source| WorkloadError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        file.into_graph()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    #[serde(flatten)]
    pub meta: TensorMeta,
    pub compute_ns: u64,
}

/// On-disk workload: JSON with a versioned schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadFile {
    pub schema_version: u32,
    #[serde(default)]
    pub jitter: JitterSpec,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupSpec>,
}

impl WorkloadFile {
    pub fn into_graph(self) -> Result<WorkloadGraph, WorkloadError> {
        if self.schema_version != WORKLOAD_SCHEMA_VERSION {
            return Err(WorkloadError::Schema(self.schema_version));
        }
        let (tensors, compute): (Vec<_>, Vec<_>) = self
            .tensors
            .into_iter()
            .map(|e| (e.meta, e.compute_ns))
            .unzip();
        let graph = WorkloadGraph::new(tensors, compute, self.jitter)?;
        Ok(match self.groups {
            Some(g) => graph.with_groups(g),
            None => graph,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Geometric growth of tensor size with depth, largest at the bottleneck.
    FcDensenetLike,
    Uniform,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fc-densenet-like" => Ok(Profile::FcDensenetLike),
            "uniform" => Ok(Profile::Uniform),
            other => Err(format!(
                "unknown profile `{other}` (fc-densenet-like | uniform)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    pub profile: Profile,
    pub total_params: u64,
    pub tensor_count: usize,
    pub seed: u64,
    pub element_bytes: u32,
    /// Total backprop compute per step, split across tensors by size.
    pub compute_ns: u64,
    pub jitter: JitterSpec,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            profile: Profile::FcDensenetLike,
            total_params: FC_DENSENET_PARAMS,
            tensor_count: FC_DENSENET_TENSORS,
            seed: 0,
            element_bytes: 2,
            compute_ns: FC_DENSENET_COMPUTE_NS,
            jitter: JitterSpec::Uniform {
                half_width_ns: 200_000,
            },
        }
    }
}

/// Synthetic workload generator. Sizes sum exactly to `total_params`.
///
/// `FcDensenetLike` is a synthetic stand-in for an encoder-decoder dense
/// network: tensor sizes rise geometrically through the encoder to the
/// bottleneck and fall back through the decoder, with seeded ±20% noise.
/// Compute intervals are proportional to tensor size.
pub fn gen_workload(params: &GenParams) -> Result<WorkloadGraph, WorkloadError> {
    let n = params.tensor_count;
    if n == 0 {
        return Err(WorkloadError::Empty);
    }
    if params.total_params < n as u64 {
        return Err(WorkloadError::TooFewParams {
            total: params.total_params,
            count: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let weights: Vec<f64> = match params.profile {
        Profile::Uniform => vec![1.0; n],
        Profile::FcDensenetLike => {
            // 1 → 100 → 1 across depth, bottleneck in the middle.
            let mid = (n - 1) as f64 / 2.0;
            (0..n)
                .map(|i| {
                    let depth = if mid > 0.0 {
                        1.0 - (i as f64 - mid).abs() / mid
                    } else {
                        1.0
                    };
                    100f64.powf(depth) * rng.random_range(0.8..1.2)
                })
                .collect()
        }
    };
    let sizes = apportion(params.total_params, &weights, 1);
    let compute = apportion(params.compute_ns.max(n as u64), &to_f64(&sizes), 1);

    let tensors = sizes
        .iter()
        .enumerate()
        .map(|(i, &elems)| {
            TensorMeta::new(
                format!("grad/{i:04}"),
                tensor_shape(elems),
                params.element_bytes,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    WorkloadGraph::new(tensors, compute, params.jitter)
}

fn to_f64(v: &[u64]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Splits `total` into integer parts proportional to `weights`, each at
/// least `floor`, summing exactly to `total` (largest remainder method).
fn apportion(total: u64, weights: &[f64], floor: u64) -> Vec<u64> {
    let n = weights.len() as u64;
    let spare = total - floor * n;
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * spare as f64).collect();
    let mut parts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut rest = spare.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        parts[i] += 1;
        rest -= 1;
    }
    // Float rounding can overshoot by a few units; take them back from the largest.
    let mut over: u64 = parts.iter().sum::<u64>().saturating_sub(spare);
    while over > 0 {
        let i = (0..parts.len()).max_by_key(|&i| parts[i]).unwrap();
        parts[i] -= 1;
        over -= 1;
    }
    parts.iter().map(|p| p + floor).collect()
}

/// Conv-weight-like shape when the count allows it, flat otherwise.
fn tensor_shape(elems: u64) -> Vec<u64> {
    if elems.is_multiple_of(9) && elems >= 9 {
        vec![elems / 9, 3, 3]
    } else {
        vec![elems]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_split() {
        let g = gen_workload(&GenParams {
            profile: Profile::Uniform,
            total_params: 1000,
            tensor_count: 10,
            compute_ns: 1_000,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(g.len(), 10);
        assert!(g.tensors().iter().all(|t| t.num_elements() == 100));
        assert!(g.compute_ns().iter().all(|&c| c == 100));
    }

    #[test]
    fn densenet_total_is_exact() {
        let g = gen_workload(&GenParams::default()).unwrap();
        assert_eq!(g.len(), 500);
        assert_eq!(g.total_params(), 220_000_000);
        assert_eq!(g.total_bytes(), 440_000_000);
        assert_eq!(g.critical_path_ns(), FC_DENSENET_COMPUTE_NS);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_workload(&GenParams::default()).unwrap();
        let b = gen_workload(&GenParams::default()).unwrap();
        assert_eq!(a, b);
        let c = gen_workload(&GenParams {
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_params() {
        let err = gen_workload(&GenParams {
            total_params: 5,
            tensor_count: 10,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, WorkloadError::TooFewParams { .. }));
    }

    #[test]
    fn readiness_strictly_increases() {
        let g = gen_workload(&GenParams {
            total_params: 10_000,
            tensor_count: 50,
            compute_ns: 5_000_000,
            ..Default::default()
        })
        .unwrap();
        let r = g.nominal_readiness();
        assert_eq!(r[0].0, 49);
        assert!(r.windows(2).all(|w| w[0].1 < w[1].1));
        assert_eq!(r.last().unwrap().1, g.critical_path_ns());
    }

    #[test]
    fn apportion_edge_cases() {
        assert_eq!(apportion(10, &[1.0; 10], 1), vec![1; 10]);
        let p = apportion(1_000_003, &[1.0, 2.0, 3.0], 1);
        assert_eq!(p.iter().sum::<u64>(), 1_000_003);
        let p = apportion(7, &[1e-12, 1.0, 1e12], 2);
        assert_eq!(p.iter().sum::<u64>(), 7);
        assert!(p.iter().all(|&x| x >= 2));
    }

    #[test]
    fn rejects_bad_graphs() {
        let t = |n: &str| TensorMeta::new(n, vec![2], 2).unwrap();
        assert!(matches!(
            WorkloadGraph::new(vec![t("a"), t("a")], vec![1, 1], JitterSpec::None),
            Err(WorkloadError::DuplicateName(_))
        ));
        assert!(matches!(
            WorkloadGraph::new(vec![t("a")], vec![0], JitterSpec::None),
            Err(WorkloadError::ZeroInterval(_))
        ));
        assert!(matches!(
            WorkloadGraph::new(vec![], vec![], JitterSpec::None),
            Err(WorkloadError::Empty)
        ));
    }

    #[test]
    fn schema_version_checked() {
        let g = gen_workload(&GenParams {
            total_params: 100,
            tensor_count: 4,
            compute_ns: 400,
            ..Default::default()
        })
        .unwrap();
        let mut file = g.to_file();
        file.schema_version = 9;
        assert!(matches!(file.into_graph(), Err(WorkloadError::Schema(9))));
    }

    #[test]
    fn jitter_draws_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j = JitterSpec::Uniform { half_width_ns: 10 };
        for _ in 0..1000 {
            let x = j.sample(&mut rng);
            assert!((-10..=10).contains(&x));
        }
        assert_eq!(JitterSpec::None.sample(&mut rng), 0);
    }
}
