use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Values that may come from a TOML file. Command-line flags win over the
/// file; the file wins over built-in defaults.
#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub ckpt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub guidance: Option<f64>,
    pub steps: Option<usize>,
    pub nti_lr: Option<f64>,
    pub inner_steps: Option<usize>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub latent_dim: Option<usize>,
    pub cond_dim: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub p_uncond: Option<f64>,
    pub dataset_seed: Option<u64>,
    pub trials: Option<usize>,
    pub samples_per_token: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {}", path.display(), e.message()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_file() {
        let cfg: FileConfig = toml::from_str("seed = 7\nsteps = 25\nhidden = [32, 32]\n").unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.steps, Some(25));
        assert_eq!(cfg.hidden, Some(vec![32, 32]));
        assert_eq!(cfg.guidance, None);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<FileConfig>("sead = 7\n").is_err());
    }
}
