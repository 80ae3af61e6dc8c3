//! Per-sample distillation weight kernels.
//!
//! The standard kernel assigns each pair a weight from its seg rank `x`
//! and rgb rank `y`:
//!
//! ```text
//! D1: 1 + (min(N_m, y) − x) / (4·ln(1+x))
//! D2: 1 + (y − x) / (5·ln(1+x))
//! D3: 1 + (y − x) / (4·ln(1+x))
//! D4: 0
//! ```
//!
//! clamped at zero (the D3 branch can go negative for large N_t). The
//! single-branch degenerate kernel, constant per-group weights, the
//! `(y−x)/x` prototype, and the flat selective scheme are provided for
//! ablations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::SamplePair;
use crate::error::{Error, Result};
use crate::partition::{assign_group, Group, PartitionConfig, PartitionTable};

/// Which weighting kernel to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "constants")]
pub enum WeightKind {
    /// The rank-dependent kernel over the four groups.
    Standard,
    /// Single-branch degenerate form: `1 + 1/(4·ln(1+x))` on S1, 0 on S2.
    /// The seg rank plays the role of the surviving branch's ranking.
    SegOnly,
    /// Constant weight per group (D1, D2, D3, D4), e.g. `(8, 4, 1, 0)`.
    Constants([f64; 4]),
    /// The `(y−x)/x` prototype kernel in place of `(y−x)/ln(1+x)`.
    Prototype,
    /// 1 on S1, 0 on S2 — selective but unweighted.
    AllOnes,
    /// 0 everywhere; stage II degenerates to plain VPR training.
    None,
}

/// A weighting kernel bound to its partition thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub kind: WeightKind,
    pub partition: PartitionConfig,
}

impl WeightScheme {
    pub fn new(kind: WeightKind, partition: PartitionConfig) -> Result<Self> {
        partition.validate()?;
        if let WeightKind::Constants(ws) = &kind {
            if ws.iter().any(|&w| !(w >= 0.0)) {
                return Err(Error::Config(format!(
                    "constant weights cannot be negative, got {ws:?}"
                )));
            }
        }
        Ok(Self { kind, partition })
    }

    pub fn standard(partition: PartitionConfig) -> Self {
        Self {
            kind: WeightKind::Standard,
            partition,
        }
    }

    /// True when the scheme disables distillation entirely.
    pub fn is_disabled(&self) -> bool {
        self.kind == WeightKind::None
    }

    /// Parses the CLI syntax `eq4|eq7|const:w1,w2,w3,w4|proto|ones|none`.
    pub fn parse(spec: &str, partition: PartitionConfig) -> Result<Self> {
        let kind = match spec {
            "eq4" | "standard" => WeightKind::Standard,
            "eq7" | "seg_only" => WeightKind::SegOnly,
            "proto" | "prototype" => WeightKind::Prototype,
            "ones" | "all_ones" => WeightKind::AllOnes,
            "none" => WeightKind::None,
            other => match other.strip_prefix("const:") {
                Some(rest) => {
                    let parts: Vec<&str> = rest.split(',').collect();
                    if parts.len() != 4 {
                        return Err(Error::Config(format!(
                            "const scheme needs 4 weights, got '{rest}'"
                        )));
                    }
                    let mut ws = [0.0; 4];
                    for (slot, part) in ws.iter_mut().zip(&parts) {
                        *slot = part.trim().parse::<f64>().map_err(|_| {
                            Error::Config(format!("bad constant weight '{part}'"))
                        })?;
                    }
                    WeightKind::Constants(ws)
                }
                None => {
                    return Err(Error::Config(format!("unknown weight scheme '{other}'")))
                }
            },
        };
        Self::new(kind, partition)
    }
}

/// Evaluates the distillation weight for ranks `x`, `y` (both ≥ 1).
/// Nonnegative for every scheme; exactly zero on D4 for the standard,
/// prototype, seg-only and all-ones kernels.
pub fn weight_phi(x: u32, y: u32, scheme: &WeightScheme) -> f64 {
    debug_assert!(x >= 1 && y >= 1);
    let cfg = &scheme.partition;
    let group = assign_group(x, y, cfg);
    let xf = x as f64;
    let yf = y as f64;
    let raw = match &scheme.kind {
        WeightKind::Standard => match group {
            Group::D1 => 1.0 + ((cfg.n_m as f64).min(yf) - xf) / (4.0 * (1.0 + xf).ln()),
            Group::D2 => 1.0 + (yf - xf) / (5.0 * (1.0 + xf).ln()),
            Group::D3 => 1.0 + (yf - xf) / (4.0 * (1.0 + xf).ln()),
            Group::D4 => 0.0,
        },
        WeightKind::SegOnly => {
            if group == Group::D4 {
                0.0
            } else {
                1.0 + 1.0 / (4.0 * (1.0 + xf).ln())
            }
        }
        WeightKind::Constants(ws) => match group {
            Group::D1 => ws[0],
            Group::D2 => ws[1],
            Group::D3 => ws[2],
            Group::D4 => ws[3],
        },
        WeightKind::Prototype => match group {
            Group::D1 => 1.0 + ((cfg.n_m as f64).min(yf) - xf) / (4.0 * xf),
            Group::D2 => 1.0 + (yf - xf) / (5.0 * xf),
            Group::D3 => 1.0 + (yf - xf) / (4.0 * xf),
            Group::D4 => 0.0,
        },
        WeightKind::AllOnes => {
            if group == Group::D4 {
                0.0
            } else {
                1.0
            }
        }
        WeightKind::None => 0.0,
    };
    raw.max(0.0)
}

/// Pair → weight table handed to stage II. Built offline from a partition
/// table; a disabled scheme resolves every pair to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    weights: HashMap<SamplePair, f64>,
    zero_for_all: bool,
}

impl WeightTable {
    pub fn from_partition(table: &PartitionTable, scheme: &WeightScheme) -> Self {
        if scheme.is_disabled() {
            return Self::disabled();
        }
        let weights = table
            .rows
            .iter()
            .map(|row| (row.pair.clone(), weight_phi(row.x, row.y, scheme)))
            .collect();
        Self {
            weights,
            zero_for_all: false,
        }
    }

    /// The `none` scheme: every pair weighs zero, no table required.
    pub fn disabled() -> Self {
        Self {
            weights: HashMap::new(),
            zero_for_all: true,
        }
    }

    pub fn get(&self, pair: &SamplePair) -> Result<f64> {
        if self.zero_for_all {
            return Ok(0.0);
        }
        self.weights.get(pair).copied().ok_or_else(|| {
            Error::Training(format!(
                "no distillation weight for pair ({}, {})",
                pair.query_id, pair.positive_id
            ))
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True when built from the `none` scheme (every weight is zero).
    pub fn all_zero(&self) -> bool {
        self.zero_for_all
    }
}
