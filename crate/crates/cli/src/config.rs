//! Run configuration, read from TOML and echoed into every output.

use std::path::{Path, PathBuf};

use cdainv_core::eval::BucketSpec;
use cdainv_core::features::{Cadence, QuotePool};
use cdainv_core::models::{Ablation, CemhGrouping, FitOptions, GbtGrid, HuberConfig};
use cdainv_core::sim::ValuationSampler;
use cdainv_core::{CorpusConfig, FeatureMask, ModelKind, TargetKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "CDAINV_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub markets: usize,
    pub rounds: u32,
    pub actions_per_round: usize,
    pub valuations: ValuationSampler,
    pub price_range: (f64, f64),
    pub small_side: usize,
    pub large_side: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let c = CorpusConfig::default();
        SimulationConfig {
            markets: c.markets,
            rounds: c.rounds,
            actions_per_round: c.actions_per_round,
            valuations: c.valuations,
            price_range: c.price_range,
            small_side: c.small_side,
            large_side: c.large_side,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Partial-dependence curves for this many of the most important inputs.
    pub pdp_features: usize,
    /// Test rows sampled per curve.
    pub pdp_rows: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { pdp_features: 3, pdp_rows: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_splits: u32,
    pub models: Vec<ModelKind>,
    pub targets: Vec<TargetKind>,
    pub cadence: Cadence,
    pub quote_pool: QuotePool,
    pub feature_mask: FeatureMask,
    /// `None` uses the built-in grid for each target.
    pub gbt: Option<GbtGrid>,
    pub cemh_grouping: CemhGrouping,
    pub huber: HuberConfig,
    pub ablations: Vec<Ablation>,
    pub buckets: BucketSpec,
    pub diagnostics: DiagnosticsConfig,
    pub simulation: SimulationConfig,
    /// Output directory; not part of the config hash.
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_splits: 50,
            models: ModelKind::ALL.to_vec(),
            targets: TargetKind::ALL.to_vec(),
            cadence: Cadence::PerAction,
            quote_pool: QuotePool::LatestPerTrader,
            feature_mask: FeatureMask::FULL,
            gbt: None,
            cemh_grouping: CemhGrouping::default(),
            huber: HuberConfig::default(),
            ablations: Ablation::ALL.to_vec(),
            buckets: BucketSpec::BASIC,
            diagnostics: DiagnosticsConfig::default(),
            simulation: SimulationConfig::default(),
            output: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        toml::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(AppError::Config(m.into()));
        if self.n_splits == 0 {
            return fail("n_splits must be positive");
        }
        if self.roster().is_empty() {
            return fail("no (model, target) pair left to fit");
        }
        if let Some(g) = &self.gbt {
            if g.is_empty() {
                return fail("gbt grid is empty");
            }
            if g.learning_rates.iter().any(|lr| !(*lr > 0.0 && *lr <= 1.0)) {
                return fail("gbt learning rates must lie in (0, 1]");
            }
            if g.max_depths.contains(&0) || g.n_trees.contains(&0) {
                return fail("gbt depths and tree counts must be positive");
            }
            if !(g.validation_fraction > 0.0 && g.validation_fraction < 1.0) {
                return fail("gbt validation_fraction must lie in (0, 1)");
            }
        }
        if !(self.huber.threshold > 0.0) {
            return fail("huber threshold must be positive");
        }
        let s = &self.simulation;
        if s.markets < 2 {
            return fail("simulation needs at least two markets");
        }
        if s.small_side == 0 || s.large_side == 0 {
            return fail("market sides must be nonempty");
        }
        Ok(())
    }

    /// Every configured (model, target) pair the model supports.
    pub fn roster(&self) -> Vec<(ModelKind, TargetKind)> {
        let mut out = Vec::new();
        for &t in &self.targets {
            for &m in &self.models {
                if m.supports(t) && !out.contains(&(m, t)) {
                    out.push((m, t));
                }
            }
        }
        out
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        let s = &self.simulation;
        CorpusConfig {
            markets: s.markets,
            seed: self.seed,
            rounds: s.rounds,
            actions_per_round: s.actions_per_round,
            valuations: s.valuations.clone(),
            price_range: s.price_range,
            small_side: s.small_side,
            large_side: s.large_side,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            mask: self.feature_mask,
            gbt_grid: self.gbt.clone(),
            seed: self.seed,
            cemh_grouping: self.cemh_grouping,
            huber: self.huber,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form,
    /// ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output: None, ..self.clone() };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Output root: explicit flag, then the config file, then the environment,
/// then `./cdainv-out`.
pub fn output_root(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cdainv-out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig { seed: 9, n_splits: 3, gbt: Some(GbtGrid::single(4, 20, 0.1)), ..Default::default() };
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 4\nmodels = [\"GBT\", \"BookMidpoint\"]\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.n_splits, 50);
        assert_eq!(
            cfg.roster(),
            vec![(ModelKind::Gbt, TargetKind::Ae), (ModelKind::Gbt, TargetKind::Cep), (ModelKind::BookMidpoint, TargetKind::Cep)]
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 4\n").is_err());
    }

    #[test]
    fn hash_ignores_output_only() {
        let a = RunConfig::default();
        let b = RunConfig { output: Some("elsewhere".into()), ..Default::default() };
        let c = RunConfig { seed: 1, ..Default::default() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig { n_splits: 0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { models: vec![ModelKind::BookMidpoint], targets: vec![TargetKind::Ae], ..Default::default() }
            .validate()
            .is_err());
    }
}
