//! Convolution op counting and sustained/peak performance accounting.
//!
//! A direct 2-D convolution with input `H×W×C`, `K` output channels and an
//! `R×S` kernel costs `2·H·W·C·K·R·S` operations (multiply and add). One
//! training step runs three such passes per layer (forward, gradient w.r.t.
//! kernel, gradient w.r.t. input), so
//!
//! * sustained = `3·OPS / t_exec`
//! * peak = `3·OPS / t_comp`, where `t_comp` covers only the three
//!   convolution kernels.
//!
//! Figures are reported in base-10 units.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONV_FWD: &str = "Conv2D_FWD";
pub const CONV_BACKPROP_KERNEL: &str = "Conv2D_BackpropKernel";
pub const CONV_BACKPROP_INPUT: &str = "Conv2D_BackpropInput";
pub const CONV_RECORDS: [&str; 3] = [CONV_FWD, CONV_BACKPROP_KERNEL, CONV_BACKPROP_INPUT];

pub const LAYER_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PerfError {
    #[error("layer `{name}`: dimension {field} must be positive")]
    InvalidLayer { name: String, field: &'static str },
    #[error("op count overflows 128 bits")]
    Overflow,
    #[error("timing record `{0}` is missing")]
    MissingRecord(&'static str),
    #[error("no timing records")]
    NoTimings,
    #[error("timing record `{name}` has invalid duration {duration_ms}")]
    InvalidDuration { name: String, duration_ms: f64 },
    #[error("scaling efficiency must be in (0, 1], got {0}")]
    InvalidEfficiency(f64),
    #[error("num_gpus must be at least 1")]
    NoGpus,
    #[error("no conv op total: pass a layer file or a timing file with analytical_ops")]
    NoOps,
    #[error("unsupported layer schema_version {0}")]
    Schema(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "H")]
    pub h: u64,
    #[serde(rename = "W")]
    pub w: u64,
    #[serde(rename = "C")]
    pub c: u64,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "R")]
    pub r: u64,
    #[serde(rename = "S")]
    pub s: u64,
}

impl ConvLayerSpec {
    pub fn new(h: u64, w: u64, c: u64, k: u64, r: u64, s: u64) -> Self {
        ConvLayerSpec {
            name: String::new(),
            h,
            w,
            c,
            k,
            r,
            s,
        }
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        for (field, v) in [
            ("H", self.h),
            ("W", self.w),
            ("C", self.c),
            ("K", self.k),
            ("R", self.r),
            ("S", self.s),
        ] {
            if v == 0 {
                return Err(PerfError::InvalidLayer {
                    name: self.name.clone(),
                    field,
                });
            }
        }
        Ok(())
    }
}

/// `2·H·W·C·K·R·S`.
pub fn conv_ops(layer: &ConvLayerSpec) -> Result<u128, PerfError> {
    layer.validate()?;
    [layer.h, layer.w, layer.c, layer.k, layer.r, layer.s]
        .into_iter()
        .try_fold(2u128, |acc, d| acc.checked_mul(d as u128))
        .ok_or(PerfError::Overflow)
}

pub fn total_conv_ops(layers: &[ConvLayerSpec]) -> Result<u128, PerfError> {
    layers.iter().try_fold(0u128, |acc, l| {
        acc.checked_add(conv_ops(l)?).ok_or(PerfError::Overflow)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Compute,
    Communication,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub op_name: String,
    pub category: Category,
    pub duration_ms: f64,
}

impl TimingRecord {
    pub fn new(op_name: impl Into<String>, category: Category, duration_ms: f64) -> Self {
        TimingRecord {
            op_name: op_name.into(),
            category,
            duration_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfReport {
    pub total_conv_ops: f64,
    pub t_exec_ms: f64,
    pub t_comp_ms: f64,
    pub t_comm_ms: f64,
    pub t_misc_ms: f64,
    /// FLOP/s.
    pub sustained_flops: f64,
    pub peak_flops: f64,
    pub num_gpus: u64,
    pub scaling_efficiency: f64,
}

impl PerfReport {
    pub fn sustained_tflops(&self) -> f64 {
        self.sustained_flops / 1e12
    }

    pub fn peak_tflops(&self) -> f64 {
        self.peak_flops / 1e12
    }
}

/// Per-GPU sustained and peak performance from one step's kernel timings.
///
/// `t_exec` sums every record. `t_comm` and `t_misc` are the communication
/// and other categories; they are informational.
pub fn performance(total_conv_ops: f64, timings: &[TimingRecord]) -> Result<PerfReport, PerfError> {
    if timings.is_empty() {
        return Err(PerfError::NoTimings);
    }
    for t in timings {
        if !(t.duration_ms >= 0.0 && t.duration_ms.is_finite()) {
            return Err(PerfError::InvalidDuration {
                name: t.op_name.clone(),
                duration_ms: t.duration_ms,
            });
        }
    }
    let mut t_comp_ms = 0.0;
    for name in CONV_RECORDS {
        let rec = timings
            .iter()
            .find(|t| t.op_name == name)
            .ok_or(PerfError::MissingRecord(name))?;
        t_comp_ms += rec.duration_ms;
    }
    let sum = |c: Category| {
        timings
            .iter()
            .filter(|t| t.category == c)
            .map(|t| t.duration_ms)
            .sum::<f64>()
    };
    let t_exec_ms: f64 = timings.iter().map(|t| t.duration_ms).sum();
    Ok(PerfReport {
        total_conv_ops,
        t_exec_ms,
        t_comp_ms,
        t_comm_ms: sum(Category::Communication),
        t_misc_ms: sum(Category::Other),
        sustained_flops: 3.0 * total_conv_ops / (t_exec_ms * 1e-3),
        peak_flops: 3.0 * total_conv_ops / (t_comp_ms * 1e-3),
        num_gpus: 1,
        scaling_efficiency: 1.0,
    })
}

/// Scales per-GPU figures to `num_gpus` at the given scaling efficiency.
pub fn aggregate(
    per_gpu: &PerfReport,
    num_gpus: u64,
    scaling_efficiency: f64,
) -> Result<PerfReport, PerfError> {
    if num_gpus == 0 {
        return Err(PerfError::NoGpus);
    }
    if !(scaling_efficiency > 0.0 && scaling_efficiency <= 1.0) {
        return Err(PerfError::InvalidEfficiency(scaling_efficiency));
    }
    let factor = num_gpus as f64 * scaling_efficiency;
    Ok(PerfReport {
        sustained_flops: per_gpu.sustained_flops * factor,
        peak_flops: per_gpu.peak_flops * factor,
        num_gpus: per_gpu.num_gpus * num_gpus,
        scaling_efficiency: per_gpu.scaling_efficiency * scaling_efficiency,
        ..per_gpu.clone()
    })
}

/// One row of a kernel timing table, with and without tensor cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingRow {
    pub op_name: String,
    #[serde(rename = "type")]
    pub category: Category,
    pub duration_ms_no_tc: f64,
    pub duration_ms_tc: f64,
    #[serde(default)]
    pub analytical_ops: Option<f64>,
    #[serde(default)]
    pub cudnn_ops: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimingColumn {
    NoTensorCores,
    #[default]
    TensorCores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

impl TimingTable {
    pub fn load(path: &Path) -> Result<Self, PerfError> {
        read_json(path)
    }

    pub fn records(&self, column: TimingColumn) -> Vec<TimingRecord> {
        self.rows
            .iter()
            .map(|r| {
                let d = match column {
                    TimingColumn::NoTensorCores => r.duration_ms_no_tc,
                    TimingColumn::TensorCores => r.duration_ms_tc,
                };
                TimingRecord::new(r.op_name.clone(), r.category, d)
            })
            .collect()
    }

    /// Per-direction conv op total, read from the forward record.
    pub fn analytical_ops(&self) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.op_name == CONV_FWD)
            .and_then(|r| r.analytical_ops)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub schema_version: u32,
    #[serde(default)]
    pub note: String,
    pub layers: Vec<ConvLayerSpec>,
}

impl LayerFile {
    pub fn load(path: &Path) -> Result<Self, PerfError> {
        let file: LayerFile = read_json(path)?;
        if file.schema_version != LAYER_SCHEMA_VERSION {
            return Err(PerfError::Schema(file.schema_version));
        }
        for l in &file.layers {
            l.validate()?;
        }
        Ok(file)
    }

    pub fn total_ops(&self) -> Result<u128, PerfError> {
        total_conv_ops(&self.layers)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PerfError> {
    let text = std::fs::read_to_string(path).map_err(|source| PerfError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| PerfError::Parse {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Vec<TimingRecord> {
        vec![
            TimingRecord::new(CONV_FWD, Category::Compute, 220.801),
            TimingRecord::new(CONV_BACKPROP_KERNEL, Category::Compute, 226.612),
            TimingRecord::new(CONV_BACKPROP_INPUT, Category::Compute, 166.337),
            TimingRecord::new("NCCL-allreduce", Category::Communication, 43.080),
            TimingRecord::new("Relu/ReluGrad", Category::Compute, 107.445),
            TimingRecord::new("MEMCPYHtoD", Category::Other, 99.023),
        ]
    }

    #[test]
    fn conv_unit_and_small_cases() {
        assert_eq!(conv_ops(&ConvLayerSpec::new(1, 1, 1, 1, 1, 1)).unwrap(), 2);
        assert_eq!(
            conv_ops(&ConvLayerSpec::new(4, 4, 2, 3, 3, 3)).unwrap(),
            1728
        );
    }

    #[test]
    fn conv_rejects_zero_and_overflow() {
        assert!(matches!(
            conv_ops(&ConvLayerSpec::new(1, 0, 1, 1, 1, 1)),
            Err(PerfError::InvalidLayer { field: "W", .. })
        ));
        let m = u64::MAX;
        assert!(matches!(
            conv_ops(&ConvLayerSpec::new(m, m, m, 1, 1, 1)),
            Err(PerfError::Overflow)
        ));
        // Two maximal factors still fit.
        assert!(conv_ops(&ConvLayerSpec::new(m, 1, 1, 1, 1, 1)).is_ok());
    }

    #[test]
    fn tensor_core_column() {
        let r = performance(1.717e13, &table()).unwrap();
        assert!((r.t_exec_ms - 863.298).abs() < 1e-9);
        assert!((r.t_comp_ms - 613.750).abs() < 1e-9);
        assert!((r.sustained_tflops() - 59.67).abs() / 59.67 < 5e-4);
        assert!((r.peak_tflops() - 83.92).abs() / 83.92 < 1.5e-3);
    }

    #[test]
    fn no_overhead_means_sustained_equals_peak() {
        let only_conv: Vec<_> = table().into_iter().take(3).collect();
        let r = performance(1e12, &only_conv).unwrap();
        assert_eq!(r.sustained_flops, r.peak_flops);
    }

    #[test]
    fn missing_conv_record() {
        let t: Vec<_> = table().into_iter().skip(1).collect();
        assert!(matches!(
            performance(1e12, &t),
            Err(PerfError::MissingRecord(CONV_FWD))
        ));
        assert!(matches!(performance(1e12, &[]), Err(PerfError::NoTimings)));
    }

    #[test]
    fn aggregate_cases() {
        let r = performance(1.717e13, &table()).unwrap();
        let id = aggregate(&r, 1, 1.0).unwrap();
        assert_eq!(id.sustained_flops, r.sustained_flops);
        let node = aggregate(&r, 6, 1.0).unwrap();
        assert!((node.peak_flops - 6.0 * r.peak_flops).abs() < 1.0);
        assert!(aggregate(&r, 6, 0.0).is_err());
        assert!(aggregate(&r, 6, 1.1).is_err());
        assert!(aggregate(&r, 0, 1.0).is_err());
    }
}
