//! Accelerator design-point description, silicon area cost model, and HBM
//! capacity feasibility checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{layer_footprint, shard, ArchError, ModelConfig, Workload};

/// One decimal megabyte; L2 capacities and the area model use MB = 1e6 bytes.
pub const MB: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum HwError {
    #[error("invalid hardware spec: field `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },
}

/// One accelerator design point. Rates are ops/s and bytes/s, capacities
/// bytes, latency seconds, areas mm².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    /// Peak int8 compute throughput of the whole die.
    pub peak_throughput: f64,
    pub throughput_per_core: f64,
    pub area_per_core: f64,
    pub area_per_mb_l2: f64,
    pub hbm_capacity: u64,
    pub hbm_bw: f64,
    pub l2_capacity: u64,
    pub l2_bw: f64,
    pub link_bw: f64,
    pub link_latency: f64,
    pub power_per_core: f64,
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<(), HwError> {
        let positive = |field: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(HwError::Validation {
                    field,
                    reason: format!("{value} must be strictly positive"),
                })
            }
        };
        positive("peak_throughput", self.peak_throughput)?;
        positive("throughput_per_core", self.throughput_per_core)?;
        positive("area_per_core", self.area_per_core)?;
        positive("area_per_mb_l2", self.area_per_mb_l2)?;
        positive("hbm_capacity", self.hbm_capacity as f64)?;
        positive("hbm_bw", self.hbm_bw)?;
        positive("l2_bw", self.l2_bw)?;
        positive("link_bw", self.link_bw)?;
        positive("link_latency", self.link_latency)?;
        positive("power_per_core", self.power_per_core)?;
        // On-chip must not be slower than off-chip; equality is allowed so
        // the no-residency-advantage limit can be modeled.
        if self.l2_bw < self.hbm_bw {
            return Err(HwError::Validation {
                field: "l2_bw",
                reason: format!("{} is below hbm_bw {}", self.l2_bw, self.hbm_bw),
            });
        }
        Ok(())
    }

    pub fn with_l2_capacity(&self, l2_capacity: u64) -> HardwareSpec {
        HardwareSpec {
            l2_capacity,
            ..self.clone()
        }
    }

    /// Number of compute cores implied by the throughput figures.
    pub fn core_count(&self) -> u64 {
        (self.peak_throughput / self.throughput_per_core).ceil() as u64
    }
}

/// The reference accelerator: 800 TeraOps/s int8, 64 GB of HBM at
/// 1.84 TB/s, a 12 TB/s L2 bus, 200 Gbit/s links with 25 µs latency, and
/// 7 nm area/power figures per core and per MB of L2 SRAM. The L2 capacity
/// is the swept design parameter; it defaults to 104 MB.
pub fn default_spec() -> HardwareSpec {
    HardwareSpec {
        peak_throughput: 800e12,
        throughput_per_core: 1.84e12,
        area_per_core: 1.34,
        area_per_mb_l2: 0.36,
        hbm_capacity: 64_000_000_000,
        hbm_bw: 1.84e12,
        l2_capacity: 104 * MB,
        l2_bw: 12e12,
        link_bw: 200e9 / 8.0,
        link_latency: 25e-6,
        power_per_core: 0.526,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub num_devices: u64,
    pub topology: Topology,
}

impl ClusterSpec {
    pub fn ring(num_devices: u64) -> ClusterSpec {
        ClusterSpec {
            num_devices,
            topology: Topology::Ring,
        }
    }
}

/// Total die area in mm²: compute cores plus L2 SRAM.
pub fn die_area(spec: &HardwareSpec) -> f64 {
    let cores = spec.core_count() as f64;
    cores * spec.area_per_core + (spec.l2_capacity as f64 / MB as f64) * spec.area_per_mb_l2
}

/// Whether a model/cluster/workload combination fits in device memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Feasibility {
    Feasible {
        required_bytes: u64,
        hbm_capacity: u64,
    },
    InsufficientHbm {
        required_bytes: u64,
        hbm_capacity: u64,
    },
    Indivisible {
        dimension: String,
    },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

impl std::fmt::Display for Feasibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Feasibility::Feasible {
                required_bytes,
                hbm_capacity,
            } => {
                write!(f, "feasible ({required_bytes} of {hbm_capacity} bytes)")
            }
            Feasibility::InsufficientHbm {
                required_bytes,
                hbm_capacity,
            } => {
                write!(
                    f,
                    "insufficient HBM ({required_bytes} > {hbm_capacity} bytes)"
                )
            }
            Feasibility::Indivisible { dimension } => {
                write!(f, "not shardable ({dimension} is indivisible)")
            }
        }
    }
}

/// Check that the sharded weights plus the full KV cache at the maximum
/// sequence length fit in HBM on every device.
pub fn check_capacity(
    model: &ModelConfig,
    cluster: &ClusterSpec,
    workload: &Workload,
    spec: &HardwareSpec,
) -> Feasibility {
    let sharded = match shard(model, cluster.num_devices) {
        Ok(s) => s,
        Err(ArchError::Indivisible { dimension, .. }) => {
            return Feasibility::Indivisible {
                dimension: dimension.to_string(),
            }
        }
        Err(err) => {
            return Feasibility::Indivisible {
                dimension: err.to_string(),
            }
        }
    };
    let footprint = layer_footprint(&sharded, workload);
    let required_bytes =
        footprint.total_model_bytes_per_device + model.num_layers * footprint.kv_cache_bytes;
    if required_bytes <= spec.hbm_capacity {
        Feasibility::Feasible {
            required_bytes,
            hbm_capacity: spec.hbm_capacity,
        }
    } else {
        Feasibility::InsufficientHbm {
            required_bytes,
            hbm_capacity: spec.hbm_capacity,
        }
    }
}
