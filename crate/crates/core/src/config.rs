//! Top-level JSON configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::gaze::GazeParams;
use crate::grid::{GridSpec, RoutingConfig};
use crate::grounding::{BackendKind, Backends, ModelBackendConfig, PipelineConfig};

pub const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:8080";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingSection {
    pub resolutions: Vec<(usize, usize)>,
    pub max_depth: usize,
    pub reprompt_retries: usize,
}

impl Default for RoutingSection {
    fn default() -> Self {
        let r = RoutingConfig::default();
        Self {
            resolutions: r.resolutions,
            max_depth: r.max_depth,
            reprompt_retries: r.reprompt_retries,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundingSection {
    pub adaptive_gaze: bool,
    pub whole_view_fallback: bool,
}

impl Default for GroundingSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            adaptive_gaze: p.adaptive_gaze,
            whole_view_fallback: p.whole_view_fallback,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsSection {
    pub vlm: ModelBackendConfig,
    pub ovd: ModelBackendConfig,
    pub sam: ModelBackendConfig,
}

impl Default for BackendsSection {
    fn default() -> Self {
        Self {
            vlm: ModelBackendConfig::http(BackendKind::Vlm, DEFAULT_ENDPOINT),
            ovd: ModelBackendConfig::http(BackendKind::Ovd, DEFAULT_ENDPOINT),
            sam: ModelBackendConfig::http(BackendKind::Sam, DEFAULT_ENDPOINT),
        }
    }
}

impl BackendsSection {
    /// All three roles answered by the ground-truth oracle of `dataset`.
    pub fn oracle(dataset: &Path) -> Self {
        Self {
            vlm: ModelBackendConfig::oracle(BackendKind::Vlm, dataset),
            ovd: ModelBackendConfig::oracle(BackendKind::Ovd, dataset),
            sam: ModelBackendConfig::oracle(BackendKind::Sam, dataset),
        }
    }

    pub fn build(&self) -> Result<Backends> {
        Backends::from_configs(&self.vlm, &self.ovd, &self.sam)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub grid: GridSpec,
    pub routing: RoutingSection,
    pub gaze: GazeParams,
    pub grounding: GroundingSection,
    pub backends: BackendsSection,
    pub eval: EvalConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        for b in [&self.backends.vlm, &self.backends.ovd, &self.backends.sam] {
            b.validate()?;
        }
        if self.eval.concurrency == Some(0) {
            return Err(Error::Config("eval.concurrency must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            routing: RoutingConfig {
                grid: self.grid,
                resolutions: self.routing.resolutions.clone(),
                max_depth: self.routing.max_depth,
                reprompt_retries: self.routing.reprompt_retries,
            },
            gaze: self.gaze,
            adaptive_gaze: self.grounding.adaptive_gaze,
            whole_view_fallback: self.grounding.whole_view_fallback,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg, Config::default());
        let p = cfg.pipeline();
        assert_eq!((p.routing.grid.cols, p.routing.grid.rows), (4, 3));
        assert_eq!((p.routing.grid.line_width_px, p.routing.grid.font_size_px), (5, 50));
        assert_eq!(p.routing.resolutions, vec![(2000, 1000), (1500, 1000)]);
        assert_eq!(p.routing.max_depth, 2);
        assert_eq!(p.gaze.margin_deg, 10.0);
        assert!(p.adaptive_gaze);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_json(r#"{"gird":{}}"#), Err(Error::Config(_))));
        assert!(matches!(Config::from_json(r#"{"gaze":{"margin":5}}"#), Err(Error::Config(_))));
        assert!(matches!(
            Config::from_json(r#"{"backends":{"vlm":{"kind":"vlm","endpoint_url":"x","verbose":true},"ovd":{"kind":"ovd","endpoint_url":"x"},"sam":{"kind":"sam","endpoint_url":"x"}}}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_json(r#"{"gaze":{"margin_deg":50}}"#).is_err());
        assert!(Config::from_json(r#"{"grid":{"cols":1,"rows":1}}"#).is_err());
        assert!(Config::from_json(r#"{"eval":{"concurrency":0}}"#).is_err());
        let cfg = Config::from_json(r#"{"backends":{"vlm":{"kind":"vlm","endpoint_url":""},"ovd":{"kind":"ovd","endpoint_url":"x"},"sam":{"kind":"sam","endpoint_url":"x"}}}"#);
        assert!(cfg.is_err());
    }

    #[test]
    fn serialized_defaults_round_trip() {
        let text = serde_json::to_string_pretty(&Config::default()).unwrap();
        assert_eq!(Config::from_json(&text).unwrap(), Config::default());
    }
}
