//! Study configuration files.
//!
//! A config is TOML; every key except `kind` is optional and filled with the
//! study's defaults on parse. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, DEFAULT_POINTS_PER_UNIT, DEFAULT_UNIT_INTERVAL};
use crate::reaction::{ModelDescriptor, ReactionModel};
use crate::sim::{InitialCondition, ProxyConfig, SimConfig, DEFAULT_DT, DEFAULT_HORIZON, DEFAULT_PROXY_LAMBDA};
use crate::wavelet::{BasisDescriptor, Family, WaveletBasis, DEFAULT_XI};

/// Tail quantiles up to 0.995 need a few hundred samples per λ.
pub const MIN_CONCENTRATION_REPLICATES: u32 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Simulate,
    Posterior,
    Contraction,
    Ergodicity,
    Bvm,
    Concentration,
    Figure,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Simulate => "simulate",
            StudyKind::Posterior => "posterior",
            StudyKind::Contraction => "contraction",
            StudyKind::Ergodicity => "ergodicity",
            StudyKind::Bvm => "bvm",
            StudyKind::Concentration => "concentration",
            StudyKind::Figure => "figure",
        }
    }
}

/// Cut-off rule: a fixed `M`, or `M = ⌈log₂(scale · λ^exponent)⌉` (at least 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelRule {
    Fixed {
        max_level: u32,
    },
    LambdaPower {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl LevelRule {
    pub fn max_level(&self, lambda: f64) -> u32 {
        match *self {
            LevelRule::Fixed { max_level } => max_level,
            LevelRule::LambdaPower { exponent, scale } => {
                // guard against 3.0000000000000004-style round-up
                let l = (scale * lambda.powf(exponent)).log2();
                (l - 1e-12).ceil().max(0.0) as u32
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub unit_interval: (f64, f64),
    pub points_per_unit: usize,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            unit_interval: DEFAULT_UNIT_INTERVAL,
            points_per_unit: DEFAULT_POINTS_PER_UNIT,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSettings {
    pub family: Family,
    pub xi: (f64, f64),
    pub rule: LevelRule,
    pub beta0: f64,
}

impl BasisSettings {
    pub fn descriptor(&self, lambda: f64) -> BasisDescriptor {
        BasisDescriptor { family: self.family, xi: self.xi, max_level: self.rule.max_level(lambda), quadrature_step: None }
    }

    pub fn build(&self, lambda: f64) -> Result<WaveletBasis> {
        self.descriptor(lambda).build()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxySettings {
    pub lambda: f64,
    pub points_per_unit: usize,
    pub replicates: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureSettings {
    pub band_level: f64,
    pub posterior_draws: usize,
    pub x_points: usize,
    /// Keep every `time_stride`-th frame in the heat-map output.
    pub time_stride: usize,
    /// Window on which band coverage of `f₀` is measured.
    pub coverage_window: (f64, f64),
}

impl Default for FigureSettings {
    fn default() -> Self {
        Self { band_level: 0.9, posterior_draws: 4000, x_points: 701, time_stride: 25, coverage_window: (-3.0, 3.0) }
    }
}

/// Fully resolved study configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub replicates: u32,
    pub grid: GridSettings,
    pub initial: InitialCondition,
    pub model: ModelDescriptor,
    pub basis: BasisSettings,
    /// Test function `g` (ergodicity, concentration) or `γ` (BvM).
    pub test_function: ModelDescriptor,
    pub proxy: ProxySettings,
    pub figure: FigureSettings,
    /// SPDE1 path used by the `posterior` study instead of a fresh simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// On-disk form: everything but `kind` optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: Option<StudyKind>,
    seed: Option<u64>,
    lambdas: Option<Vec<f64>>,
    replicates: Option<u32>,
    grid: Option<GridSettings>,
    initial: Option<InitialCondition>,
    model: Option<ModelDescriptor>,
    basis: Option<BasisSettings>,
    test_function: Option<ModelDescriptor>,
    proxy: Option<ProxySettings>,
    figure: Option<FigureSettings>,
    input_path: Option<String>,
    output_dir: Option<String>,
}

/// Smooth even test function used by the ergodicity and concentration studies.
pub fn default_ergodic_test_function() -> ModelDescriptor {
    ModelDescriptor::Bump { center: 0.0, radius: 1.0, height: 1.0 }
}

/// Bump spanning both wells of `f₀`; its boundary-layer bias stands out
/// best against the replicate noise.
pub fn wide_bump_test_function() -> ModelDescriptor {
    ModelDescriptor::Bump { center: 0.0, radius: 3.4, height: 1.0 }
}

/// Even pair of bumps over the two wells of `f₀`, used as `γ` in the BvM study.
pub fn default_bvm_test_function() -> ModelDescriptor {
    ModelDescriptor::Sum {
        terms: vec![
            ModelDescriptor::Bump { center: -2.6, radius: 0.85, height: 1.0 },
            ModelDescriptor::Bump { center: 2.6, radius: 0.85, height: 1.0 },
        ],
    }
}

impl StudyConfig {
    /// Defaults for a study kind.
    pub fn defaults(kind: StudyKind) -> Self {
        let haar = |rule| BasisSettings { family: Family::Haar, xi: DEFAULT_XI, rule, beta0: 0.5 };
        let (lambdas, replicates, basis, test_function) = match kind {
            StudyKind::Simulate | StudyKind::Posterior | StudyKind::Figure => {
                (vec![50.0], 1, haar(LevelRule::Fixed { max_level: 7 }), default_ergodic_test_function())
            }
            StudyKind::Contraction => (
                vec![12.5, 25.0, 50.0, 100.0],
                20,
                haar(LevelRule::LambdaPower { exponent: 1.0 / 3.0, scale: 1.0 }),
                default_ergodic_test_function(),
            ),
            StudyKind::Ergodicity => (
                vec![16.0, 32.0, 64.0, 128.0],
                200,
                haar(LevelRule::Fixed { max_level: 7 }),
                wide_bump_test_function(),
            ),
            StudyKind::Concentration => (
                vec![64.0, 128.0],
                500,
                haar(LevelRule::Fixed { max_level: 7 }),
                default_ergodic_test_function(),
            ),
            StudyKind::Bvm => {
                let beta0 = 1.6;
                (
                    vec![100.0],
                    200,
                    BasisSettings {
                        family: Family::Haar,
                        xi: DEFAULT_XI,
                        rule: LevelRule::LambdaPower { exponent: 1.0 / (2.0 * beta0 + 1.0), scale: 1.0 },
                        beta0,
                    },
                    default_bvm_test_function(),
                )
            }
        };
        Self {
            kind,
            seed: 20240601,
            lambdas,
            replicates,
            grid: GridSettings::default(),
            initial: InitialCondition::Zero,
            model: ModelDescriptor::AllenCahn,
            basis,
            test_function,
            proxy: ProxySettings { lambda: DEFAULT_PROXY_LAMBDA, points_per_unit: DEFAULT_POINTS_PER_UNIT, replicates: 1000 },
            figure: FigureSettings::default(),
            input_path: None,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.lambdas.is_empty() {
            return bad("lambdas: ladder must not be empty".into());
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 1.0)) {
            return bad("lambdas: every lambda must be finite and >= 1".into());
        }
        if self.lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return bad("lambdas: ladder must be strictly increasing".into());
        }
        if self.replicates < 1 {
            return bad("replicates: must be >= 1".into());
        }
        if self.kind == StudyKind::Concentration && self.replicates < MIN_CONCENTRATION_REPLICATES {
            return bad(format!("replicates: the concentration study needs >= {MIN_CONCENTRATION_REPLICATES}"));
        }
        if !(self.basis.beta0 >= 0.0 && self.basis.beta0.is_finite()) {
            return bad("basis.beta0: must be a finite number >= 0".into());
        }
        if let LevelRule::LambdaPower { exponent, scale } = self.basis.rule {
            if !(exponent > 0.0 && scale > 0.0 && exponent.is_finite() && scale.is_finite()) {
                return bad("basis.rule: exponent and scale must be positive".into());
            }
        }
        if !(self.figure.band_level > 0.0 && self.figure.band_level < 1.0) {
            return bad("figure.band_level: must lie in (0, 1)".into());
        }
        if self.figure.x_points < 2 || self.figure.time_stride < 1 || self.figure.posterior_draws < 2 {
            return bad("figure: x_points >= 2, time_stride >= 1 and posterior_draws >= 2 required".into());
        }
        if self.proxy.replicates < 2 {
            return bad("proxy.replicates: must be >= 2".into());
        }
        for &l in &self.lambdas {
            SpatialGrid::new(l, self.grid.unit_interval, self.grid.points_per_unit)
                .map_err(|e| Error::Config(format!("grid: {e}")))?;
            self.basis.build(l).map_err(|e| Error::Config(format!("basis: {e}")))?;
        }
        self.sim_config(self.lambdas[0]).and_then(|c| c.n_steps()).map_err(|e| Error::Config(format!("grid: {e}")))?;
        self.model.build().map_err(|e| Error::Config(format!("model: {e}")))?;
        self.test_function.build().map_err(|e| Error::Config(format!("test_function: {e}")))?;
        Ok(())
    }

    pub fn model(&self) -> Result<ReactionModel> {
        self.model.build()
    }

    pub fn test_function(&self) -> Result<ReactionModel> {
        self.test_function.build()
    }

    /// Simulation settings at `lambda` for replicate 0.
    pub fn sim_config(&self, lambda: f64) -> Result<SimConfig> {
        Ok(SimConfig {
            grid: SpatialGrid::new(lambda, self.grid.unit_interval, self.grid.points_per_unit)?,
            horizon: self.grid.horizon,
            dt: self.grid.dt,
            initial: self.initial.clone(),
            model: self.model()?,
            seed: self.seed_for(lambda),
            replicate_id: 0,
            record_noise: false,
            noise: true,
        })
    }

    /// Each rung of the ladder gets its own key so studies sharing a seed do
    /// not reuse noise across domain sizes.
    pub fn seed_for(&self, lambda: f64) -> u128 {
        ((self.seed as u128) << 64) | lambda.to_bits() as u128
    }

    pub fn proxy_config(&self) -> ProxyConfig {
        ProxyConfig {
            lambda: self.proxy.lambda,
            points_per_unit: self.proxy.points_per_unit,
            horizon: self.grid.horizon,
            dt: self.grid.dt,
        }
    }

    /// Canonical TOML text of the resolved config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Parses a config, filling omitted keys with the defaults of its `kind`.
pub fn parse_config_str(text: &str) -> Result<StudyConfig> {
    parse_config_str_as(text, None)
}

/// Like [`parse_config_str`]; `expected` supplies `kind` when the file omits
/// it and must agree with it otherwise.
pub fn parse_config_str_as(text: &str, expected: Option<StudyKind>) -> Result<StudyConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    let kind = match (raw.kind, expected) {
        (Some(k), Some(e)) if k != e => {
            return Err(Error::Config(format!("kind: file declares {} but {} was requested", k.name(), e.name())))
        }
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => return Err(Error::Config("missing field `kind`".into())),
    };
    let d = StudyConfig::defaults(kind);
    let cfg = StudyConfig {
        kind,
        seed: raw.seed.unwrap_or(d.seed),
        lambdas: raw.lambdas.unwrap_or(d.lambdas),
        replicates: raw.replicates.unwrap_or(d.replicates),
        grid: raw.grid.unwrap_or(d.grid),
        initial: raw.initial.unwrap_or(d.initial),
        model: raw.model.unwrap_or(d.model),
        basis: raw.basis.unwrap_or(d.basis),
        test_function: raw.test_function.unwrap_or(d.test_function),
        proxy: raw.proxy.unwrap_or(d.proxy),
        figure: raw.figure.unwrap_or(d.figure),
        input_path: raw.input_path,
        output_dir: raw.output_dir,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &std::path::Path) -> Result<StudyConfig> {
    parse_config_as(path, None)
}

pub fn parse_config_as(path: &std::path::Path, expected: Option<StudyKind>) -> Result<StudyConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str_as(&text, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_fully_populated() {
        let cfg = parse_config_str("kind = \"contraction\"\n").unwrap();
        assert_eq!(cfg, StudyConfig::defaults(StudyKind::Contraction));
        assert_eq!(cfg.lambdas, vec![12.5, 25.0, 50.0, 100.0]);
        assert_eq!(cfg.replicates, 20);
        let ms: Vec<u32> = cfg.lambdas.iter().map(|&l| cfg.basis.rule.max_level(l)).collect();
        assert_eq!(ms, vec![2, 2, 2, 3]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config_str("kind = \"bvm\"\nreplicate = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("replicate"), "{err}");
        let err = parse_config_str("kind = \"bvm\"\n[grid]\npoints_per_unit = 16\nhorizon = 1.0\ndt = 2e-4\nunit_interval = [-0.5, 0.5]\nwidth = 3\n").unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn roundtrip_through_toml() {
        for kind in [
            StudyKind::Simulate,
            StudyKind::Posterior,
            StudyKind::Contraction,
            StudyKind::Ergodicity,
            StudyKind::Bvm,
            StudyKind::Concentration,
            StudyKind::Figure,
        ] {
            let mut cfg = StudyConfig::defaults(kind);
            cfg.output_dir = Some("out dir".into());
            let back = parse_config_str(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{}", kind.name());
            assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "kind = \"ergodicity\"\nlambdas = [32.0, 16.0]\n",
            "kind = \"ergodicity\"\nreplicates = 0\n",
            "kind = \"ergodicity\"\nlambdas = []\n",
            "kind = \"contraction\"\n[grid]\nunit_interval = [-0.5, 0.5]\npoints_per_unit = 16\nhorizon = 1.0\ndt = 0.3\n",
            "kind = \"nonsense\"\n",
            "seed = 3\n",
            "kind = \"figure\"\nseed = -1\n",
        ] {
            let err = parse_config_str(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn kind_can_come_from_the_caller() {
        let cfg = parse_config_str_as("replicates = 3\n", Some(StudyKind::Contraction)).unwrap();
        assert_eq!(cfg.kind, StudyKind::Contraction);
        assert_eq!(cfg.replicates, 3);
        assert!(parse_config_str_as("kind = \"bvm\"\n", Some(StudyKind::Figure)).is_err());
        assert!(parse_config_str_as("kind = \"bvm\"\n", Some(StudyKind::Bvm)).is_ok());
    }

    #[test]
    fn level_rules() {
        let r = LevelRule::LambdaPower { exponent: 1.0 / 3.0, scale: 1.0 };
        assert_eq!(r.max_level(8.0), 1);
        assert_eq!(r.max_level(64.0), 2);
        assert_eq!(r.max_level(1.0), 0);
        assert_eq!(LevelRule::Fixed { max_level: 7 }.max_level(3.0), 7);
        let bvm = StudyConfig::defaults(StudyKind::Bvm);
        assert_eq!(bvm.basis.rule.max_level(100.0), 2);
    }

    #[test]
    fn seeds_differ_across_ladder() {
        let cfg = StudyConfig::defaults(StudyKind::Ergodicity);
        assert_ne!(cfg.seed_for(16.0), cfg.seed_for(32.0));
    }
}
