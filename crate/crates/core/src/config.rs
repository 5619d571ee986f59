//! Run configuration: one TOML file with `include` and override semantics,
//! layered over a built-in profile.
//!
//! Resolution order, later wins: profile defaults, included files (in list
//! order, recursively), the file itself, then command-line overrides applied
//! by the caller.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::VaeConfig;
use crate::error::{Error, Result};
use crate::face::{AvatarConfig, DatasetConfig, MODULES};
use crate::mca::McaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Small enough to train on one CPU core in minutes.
    #[default]
    Desk,
    /// Published constants (latent 256, 256x256 camera images, large dome split).
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile `{s}` (expected desk or paper)"))),
        }
    }
}

/// Limits checked by `eval`; a violation is reported through the exit code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Largest acceptable MCA RMSE (0-255) on the compositional split.
    pub max_mca_rmse: f64,
    /// Smallest acceptable share of frames where MCA beats CA, in percent.
    pub min_pct_better: f64,
    /// Require mean MCA RMSE <= mean CA RMSE.
    pub mca_not_worse: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            max_mca_rmse: 25.0,
            min_pct_better: 50.0,
            mca_not_worse: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Clusters per module for the expressiveness curves.
    pub capacities: Vec<usize>,
    /// Frontal PNGs written per evaluated model.
    pub png_frames: usize,
    pub thresholds: Thresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            capacities: vec![8, 16, 32, 64],
            png_frames: 4,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub shuffle_seed: u64,
    pub amplify_factor: f64,
    /// Module whose eye is amplified.
    pub amplify_module: usize,
    /// Frames whose true openness knob exceeds this count as open-eye.
    pub open_eye_threshold: f64,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            shuffle_seed: 1,
            amplify_factor: 2.0,
            amplify_module: 0,
            open_eye_threshold: -0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Number of modules (head-mounted cameras). The avatar defines exactly three.
    pub modules: usize,
    pub avatar: AvatarConfig,
    pub data: DatasetConfig,
    pub codec: VaeConfig,
    pub mca: McaConfig,
    pub eval: EvalConfig,
    pub apps: AppConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut c = RunConfig {
            profile,
            seed: 7,
            modules: MODULES,
            avatar: AvatarConfig::default(),
            data: DatasetConfig::default(),
            codec: VaeConfig::default(),
            mca: McaConfig::default(),
            eval: EvalConfig::default(),
            apps: AppConfig::default(),
        };
        if profile == Profile::Paper {
            c.codec.latent = 256;
            c.avatar.image_size = 256;
            c.data.dome_frames = 10_000;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.modules != MODULES {
            return Err(Error::Config(format!("modules must be {MODULES} (one per head-mounted camera), got {}", self.modules)));
        }
        self.avatar.validate()?;
        self.data.validate()?;
        self.codec.validate()?;
        self.mca.validate()?;
        if self.eval.capacities.is_empty() || self.eval.capacities.contains(&0) {
            return Err(Error::Config("eval.capacities must be non-empty and positive".into()));
        }
        if !(self.apps.amplify_factor >= 0.0 && self.apps.amplify_factor.is_finite()) {
            return Err(Error::Config("apps.amplify_factor must be finite and >= 0".into()));
        }
        if self.apps.amplify_module >= 2 {
            return Err(Error::Config("apps.amplify_module must be an eye module (0 or 1)".into()));
        }
        Ok(())
    }

    /// Codec settings after the latent-dimension ablation (off halves the latent).
    pub fn effective_codec(&self) -> VaeConfig {
        let mut c = self.codec.clone();
        if !self.mca.ablation.dimen {
            c.latent = (c.latent / 2).max(1);
        }
        c
    }

    /// Dataset settings with the master seed applied.
    pub fn effective_data(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            ..self.data.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a complete document (no includes) over the given profile.
    pub fn from_toml_str(text: &str, profile: Option<Profile>) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        resolve(value, profile)
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn load_value(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Value> {
    let canon = path.canonicalize().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if stack.contains(&canon) {
        return Err(Error::Config(format!("include cycle at {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut value: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let includes = match value.as_table_mut().and_then(|t| t.remove("include")) {
        None => Vec::new(),
        Some(toml::Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => Err(Error::Config(format!("include entries must be strings, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()?,
        Some(toml::Value::String(s)) => vec![s],
        Some(other) => return Err(Error::Config(format!("include must be a string or list, got {other}"))),
    };
    stack.push(canon);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = toml::Value::Table(Default::default());
    for inc in includes {
        merge(&mut out, load_value(&dir.join(inc), stack)?);
    }
    stack.pop();
    merge(&mut out, value);
    Ok(out)
}

fn resolve(file: toml::Value, profile: Option<Profile>) -> Result<RunConfig> {
    let named = file
        .get("profile")
        .and_then(|p| p.as_str())
        .map(str::parse::<Profile>)
        .transpose()?;
    let profile = profile.or(named).unwrap_or_default();
    let mut value = toml::Value::try_from(RunConfig::for_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut value, file);
    if let Some(t) = value.as_table_mut() {
        t.insert("profile".into(), toml::Value::try_from(profile).map_err(|e| Error::Config(e.to_string()))?);
    }
    let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Resolve the configuration from an optional file and profile override.
pub fn load_config(path: Option<&Path>, profile: Option<Profile>) -> Result<RunConfig> {
    let file = match path {
        Some(p) => load_value(p, &mut Vec::new())?,
        None => toml::Value::Table(Default::default()),
    };
    resolve(file, profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_profile() {
        let c = RunConfig::from_toml_str("", None).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.codec.latent, 16);
        assert_eq!(c.mca.lambda1, 1.0);
        assert_eq!(c.mca.kernels(), vec![2, 2, 2]);
    }

    #[test]
    fn profile_flag_overrides_file() {
        let c = RunConfig::from_toml_str("profile = \"desk\"\n", Some(Profile::Paper)).unwrap();
        assert_eq!(c.profile, Profile::Paper);
        assert_eq!(c.codec.latent, 256);
        let c = RunConfig::from_toml_str("profile = \"paper\"\n[codec]\nlatent = 32\n", None).unwrap();
        assert_eq!((c.codec.latent, c.avatar.image_size), (32, 256));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.mca.ablation.blend = false;
        c.seed = 99;
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap(), None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn schema_violations_are_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1\n", None).is_err());
        assert!(RunConfig::from_toml_str("[mca]\nlamda1 = 2.0\n", None).is_err());
        assert!(RunConfig::from_toml_str("[mca.ablation]\nblend = \"yes\"\n", None).is_err());
        assert!(RunConfig::from_toml_str("modules = 4\n", None).is_err());
        assert!(RunConfig::from_toml_str("profile = \"huge\"\n", None).is_err());
    }

    #[test]
    fn includes_merge_in_order() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.toml"), "seed = 3\n[mca]\nepochs = 2\nlr = 0.5\n").unwrap();
        std::fs::write(dir.path().join("more.toml"), "[mca]\nlr = 0.25\n").unwrap();
        std::fs::write(dir.path().join("run.toml"), "include = [\"base.toml\", \"more.toml\"]\n[mca]\nepochs = 5\n").unwrap();
        let c = load_config(Some(&dir.path().join("run.toml")), None).unwrap();
        assert_eq!((c.seed, c.mca.epochs, c.mca.lr), (3, 5, 0.25));
        std::fs::write(dir.path().join("loop.toml"), "include = \"loop.toml\"\n").unwrap();
        assert!(load_config(Some(&dir.path().join("loop.toml")), None).is_err());
    }

    #[test]
    fn dimen_ablation_halves_the_latent() {
        let mut c = RunConfig::default();
        assert_eq!(c.effective_codec().latent, 16);
        c.mca.ablation.dimen = false;
        assert_eq!(c.effective_codec().latent, 8);
    }
}
