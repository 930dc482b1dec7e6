use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bake::BakeConfig;
use crate::error::{Error, Result};
use crate::geometry::GeoTransform;
use crate::partition::PartitionConfig;
use crate::raster::RenderConfig;
use crate::train::TrainConfig;

use super::synthetic::SyntheticSpec;

/// Every tunable of the pipeline. Missing keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    pub bake: BakeConfig,
    pub render: RenderConfig,
    pub synthetic: SyntheticSpec,
    pub geo_transform: GeoTransform,
    /// Atlas cache capacity in texture pages.
    pub cache_pages: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            partition: PartitionConfig::default(),
            train: TrainConfig::default(),
            bake: BakeConfig::default(),
            render: RenderConfig::default(),
            synthetic: SyntheticSpec::default(),
            geo_transform: GeoTransform::default(),
            cache_pages: 64,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.train.validate()?;
        self.render.validate()?;
        self.synthetic.validate()?;
        self.geo_transform.validate()?;
        if self.cache_pages == 0 {
            return Err(Error::Config("cache_pages must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let column = s.start - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    (line, column)
                })
                .unwrap_or((0, 0));
            Error::Parse {
                path: path.to_path_buf(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back = PipelineConfig::from_toml(&c.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_override() {
        let text =
            "cache_pages = 3\n[train]\nepochs = 500\nphase_epochs = 100\n[render]\ndither = true\n";
        let c = PipelineConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.cache_pages, 3);
        assert_eq!(c.train.epochs, 500);
        assert_eq!(
            c.train.rays_per_batch,
            TrainConfig::default().rays_per_batch
        );
        assert!(c.render.dither);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "cache_pages = 3\n\nbogus = 1\n";
        match PipelineConfig::from_toml(text, Path::new("x.toml")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }
}
