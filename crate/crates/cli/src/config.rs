//! Run configuration: a TOML file with flat sections, overridable from the
//! command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mlqmc_core::estimators::{Driver, EstimatorParams};
use mlqmc_core::rates::FitWindow;
use mlqmc_core::sampler::LatticeProvider;
use mlqmc_core::{Error, ProblemSpec, Result, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    pub d: usize,
    pub s: usize,
    pub kappa: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            name: "builtin".into(),
            d: 1,
            s: 4,
            kappa: mlqmc_core::model::DEFAULT_KAPPA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub driver: Option<Driver>,
    pub eps: Vec<f64>,
    pub seed: Option<u64>,
    pub replica: Option<u64>,
    pub shifts: Option<usize>,
    pub screen_samples: Option<usize>,
    pub screen_shifts: Option<usize>,
    pub screen_log2_points: Option<u32>,
    pub screen_max_level: Option<usize>,
    pub p_log2_min: Option<u32>,
    pub p_log2_max: Option<u32>,
    pub min_level: Option<usize>,
    pub max_level: Option<usize>,
    pub fixed_level: Option<usize>,
    pub topup_rounds: Option<usize>,
    pub max_doublings: Option<usize>,
    pub fit_min_level: Option<i64>,
    pub fit_max_levels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSection {
    /// Generating-vector file; optional `max_n <N>` header, one entry per line.
    pub file: Option<PathBuf>,
    /// Use a Korobov search when no file is configured or it cannot be read.
    pub korobov_fallback: bool,
    pub search_cap: usize,
}

impl Default for LatticeSection {
    fn default() -> Self {
        LatticeSection {
            file: None,
            korobov_fallback: true,
            search_cap: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Jsonl,
    Csv,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            format: OutputFormat::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub estimator: EstimatorSection,
    pub solver: SolverConfig,
    pub lattice: LatticeSection,
    pub output: OutputSection,
    /// Worker threads; 0 uses the machine parallelism.
    pub threads: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub driver: Option<Driver>,
    pub eps: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    pub sdim: Option<usize>,
    pub out: Option<PathBuf>,
    pub lattice_file: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read configuration {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.driver {
            self.estimator.driver = Some(d);
        }
        if let Some(e) = &o.eps {
            self.estimator.eps = e.clone();
        }
        if let Some(s) = o.seed {
            self.estimator.seed = Some(s);
        }
        if let Some(d) = o.dim {
            self.problem.d = d;
        }
        if let Some(s) = o.sdim {
            self.problem.s = s;
        }
        if let Some(p) = &o.out {
            self.output.dir = p.clone();
        }
        if let Some(f) = &o.lattice_file {
            self.lattice.file = Some(f.clone());
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
    }

    pub fn driver(&self) -> Result<Driver> {
        self.estimator
            .driver
            .ok_or_else(|| Error::Config("estimator.driver is not set (config key or --driver)".into()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.estimator
            .seed
            .ok_or_else(|| Error::Config("estimator.seed is mandatory (config key or --seed)".into()))
    }

    /// The accuracy list; every value must lie in `(0, 1/e)`.
    pub fn eps_list(&self) -> Result<Vec<f64>> {
        if self.estimator.eps.is_empty() {
            return Err(Error::Config("estimator.eps is empty (config key or --eps)".into()));
        }
        let bound = (-1f64).exp();
        for (i, &e) in self.estimator.eps.iter().enumerate() {
            if !(e > 0.0 && e < bound) {
                return Err(Error::Config(format!("estimator.eps[{i}] = {e} must lie in (0, 1/e)")));
            }
        }
        Ok(self.estimator.eps.clone())
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        if !(1..=mlqmc_core::grid::MAX_DIM).contains(&p.d) {
            return Err(Error::Config(format!(
                "problem.d = {} must lie in 1..={}",
                p.d,
                mlqmc_core::grid::MAX_DIM
            )));
        }
        if p.s == 0 {
            return Err(Error::Config("problem.s must be positive".into()));
        }
        let spec = ProblemSpec::from_catalog(&p.name, p.d, p.s, p.kappa)?;
        spec.validate_ellipticity(65)?;
        Ok(spec)
    }

    pub fn params(&self) -> Result<EstimatorParams> {
        let e = &self.estimator;
        let mut p = EstimatorParams {
            seed: self.seed()?,
            ..EstimatorParams::default()
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = e.$field { p.$field = v; } )* };
        }
        set!(replica, shifts, screen_samples, screen_shifts, screen_log2_points, min_level, max_level, topup_rounds, max_doublings);
        p.screen_max_level = e.screen_max_level;
        p.fixed_level = e.fixed_level;
        if let Some(lo) = e.p_log2_min {
            p.p_log2_range.0 = lo;
        }
        if let Some(hi) = e.p_log2_max {
            p.p_log2_range.1 = hi;
        }
        let d = FitWindow::default();
        p.fit_window = FitWindow {
            min_level: e.fit_min_level.unwrap_or(d.min_level),
            max_levels: e.fit_max_levels.unwrap_or(d.max_levels),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        self.solver.validate()?;
        Ok(self.solver.clone())
    }

    /// Lattice rules for QMC drivers: the configured file, or a Korobov
    /// search when the fallback is enabled.
    pub fn lattice(&self, s: usize) -> Result<LatticeProvider> {
        let l = &self.lattice;
        match &l.file {
            Some(path) => match std::fs::read_to_string(path) {
                Ok(text) => LatticeProvider::from_file_text(&text, s)
                    .map_err(|e| Error::Config(format!("lattice.file {}: {e}", path.display()))),
                Err(e) if l.korobov_fallback => {
                    let _ = e;
                    Ok(LatticeProvider::korobov(s, l.search_cap))
                }
                Err(e) => Err(Error::Config(format!(
                    "lattice.file {} cannot be read ({e}) and lattice.korobov_fallback is disabled",
                    path.display()
                ))),
            },
            None if l.korobov_fallback => Ok(LatticeProvider::korobov(s, l.search_cap)),
            None => Err(Error::Config(
                "QMC driver needs lattice.file (or --lattice-file) when lattice.korobov_fallback is disabled".into(),
            )),
        }
    }

    /// SHA-256 of everything that determines the results (output location
    /// and thread count excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        c.threads = 0;
        let json = serde_json::to_string(&c).expect("configuration serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_overrides() {
        let text = r#"
threads = 2
[problem]
d = 2
[estimator]
driver = "mlmc-comb"
eps = [1e-3, 5e-4]
seed = 9
shifts = 8
[solver]
kind = "multigrid"
"#;
        let mut c = RunConfig::parse(text).unwrap();
        assert_eq!(c.driver().unwrap(), Driver::MlmcCombination);
        assert_eq!(c.eps_list().unwrap(), vec![1e-3, 5e-4]);
        assert_eq!(c.params().unwrap().shifts, 8);
        c.apply(&Overrides {
            seed: Some(3),
            dim: Some(1),
            ..Overrides::default()
        });
        assert_eq!(c.seed().unwrap(), 3);
        assert_eq!(c.problem().unwrap().d, 1);
    }

    #[test]
    fn unknown_keys_are_reported_with_position() {
        let err = RunConfig::parse("[estimator]\nepsilon = [0.1]\n").unwrap_err().to_string();
        assert!(err.contains("epsilon") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn seed_is_mandatory_and_eps_bounded() {
        let c = RunConfig::parse("[estimator]\neps = [0.5]\n").unwrap();
        assert!(c.seed().is_err());
        assert!(c.eps_list().unwrap_err().to_string().contains("estimator.eps[0]"));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::parse("[estimator]\nseed = 1\n").unwrap();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        b.threads = 7;
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.estimator.seed = Some(2);
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn lattice_without_file_or_fallback_is_an_error() {
        let c = RunConfig::parse("[lattice]\nkorobov_fallback = false\nfile = \"/nonexistent/z.txt\"\n").unwrap();
        assert!(matches!(c.lattice(4), Err(Error::Config(_))));
        let c = RunConfig::parse("[lattice]\nkorobov_fallback = false\n").unwrap();
        assert!(matches!(c.lattice(4), Err(Error::Config(_))));
    }
}
