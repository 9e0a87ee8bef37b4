use serde::{Deserialize, Serialize};

use super::eval::MetricKind;
use super::train::{train, TrainConfig};
use crate::error::Result;
use crate::model::{HostrConfig, LevelMode};
use crate::ostr::TemporalMode;
use crate::scalar::Scalar;
use crate::synth::Corpus;

/// Model variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Default,
    AttentionBoth,
    BilstmClipAttentionVideo,
    BilstmBoth,
    GcnLayers(usize),
    NoContext,
    OneLevel,
    OneAndHalfLevel,
    /// Adjacency and GCN bypassed at both levels.
    NoInteraction,
}

impl Variant {
    /// The rows of the ablation table, in order.
    pub fn table_rows() -> Vec<Variant> {
        vec![
            Variant::Default,
            Variant::AttentionBoth,
            Variant::BilstmClipAttentionVideo,
            Variant::BilstmBoth,
            Variant::GcnLayers(1),
            Variant::GcnLayers(4),
            Variant::GcnLayers(8),
            Variant::NoContext,
            Variant::OneLevel,
            Variant::OneAndHalfLevel,
        ]
    }

    pub fn label(self) -> String {
        match self {
            Variant::Default => "Default config.".into(),
            Variant::AttentionBoth => "Attention at both levels".into(),
            Variant::BilstmClipAttentionVideo => "BiLSTM at clip, TA at video level".into(),
            Variant::BilstmBoth => "BiLSTM at both levels".into(),
            Variant::GcnLayers(n) => format!("SR with {n} GCN layer{}", if n == 1 { "" } else { "s" }),
            Variant::NoContext => "w/o contextual representation".into(),
            Variant::OneLevel => "1-level hierarchy".into(),
            Variant::OneAndHalfLevel => "1.5-level hierarchy".into(),
            Variant::NoInteraction => "w/o inter-object interaction".into(),
        }
    }

    /// `base` modified for this variant. "BiLSTM" means the BiLSTM mode the
    /// base configuration uses at the video level.
    pub fn apply(self, base: &HostrConfig) -> HostrConfig {
        let mut c = base.clone();
        let bilstm = match base.video_ostr.temporal_mode {
            TemporalMode::Attention => TemporalMode::BilstmAttention,
            m => m,
        };
        match self {
            Variant::Default => {}
            Variant::AttentionBoth => {
                c.clip_ostr.temporal_mode = TemporalMode::Attention;
                c.video_ostr.temporal_mode = TemporalMode::Attention;
            }
            Variant::BilstmClipAttentionVideo => {
                c.clip_ostr.temporal_mode = bilstm;
                c.video_ostr.temporal_mode = TemporalMode::Attention;
            }
            Variant::BilstmBoth => {
                c.clip_ostr.temporal_mode = bilstm;
                c.video_ostr.temporal_mode = bilstm;
            }
            Variant::GcnLayers(n) => {
                c.clip_ostr.gcn_layers = n;
                c.video_ostr.gcn_layers = n;
            }
            Variant::NoContext => {
                c.clip_ostr.context_enabled = false;
                c.video_ostr.context_enabled = false;
            }
            Variant::OneLevel => c.clip_level = LevelMode::MeanPool,
            Variant::OneAndHalfLevel => c.video_level = LevelMode::MeanPool,
            Variant::NoInteraction => {
                c.clip_ostr.interaction_enabled = false;
                c.video_ostr.interaction_enabled = false;
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub seed: u64,
    pub metric: MetricKind,
    pub test_metric: f64,
    pub best_val_metric: f64,
    pub best_epoch: usize,
    pub param_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Test metric of `variant` under `seed`, if it was run.
    pub fn metric(&self, variant: Variant, seed: u64) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant && r.seed == seed).map(|r| r.test_metric)
    }
}

/// Trains every variant for every seed on the same corpus and splits.
pub fn run_ablations<T: Scalar>(corpus: &Corpus, base: &HostrConfig, tc: &TrainConfig, variants: &[Variant], seeds: &[u64]) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &v in variants {
            let cfg = TrainConfig { seed, ..tc.clone() };
            let out = train::<T>(v.apply(base), &cfg, corpus)?;
            rows.push(AblationRow {
                variant: v,
                label: v.label(),
                seed,
                metric: out.report.metric,
                test_metric: out.report.test_metric,
                best_val_metric: out.report.best_val_metric,
                best_epoch: out.report.best_epoch,
                param_count: out.report.param_count,
            });
        }
    }
    Ok(AblationReport { rows })
}
