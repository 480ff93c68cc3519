//! Option groups shared by the subcommands and the flat `key = value`
//! config file that backs them. Flags win over file values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use simcert::dynamics::DynamicsError;
use simcert::linalg::Matrix;
use simcert::sample::GridSpacing;
use simcert::{EnergyForm, IntegratorKind, ModelParams, Registry, StabilityParams, SystemModel};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 64,
            Self::Data(_) => 65,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn data(msg: impl fmt::Display) -> CliError {
    CliError::Data(msg.to_string())
}

/// Comma-separated values, e.g. `--p 2,0.5,0.5,1`.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let items = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<T>()
                    .map_err(|e| format!("`{}`: {e}", v.trim()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(Self(items))
    }
}

/// Every key any subcommand reads from a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "model",
    "rate",
    "matrix",
    "domain_radius",
    "lipschitz",
    "jump",
    "dt",
    "steps",
    "T",
    "integrator",
    "k",
    "lambda",
    "r0",
    "ell",
    "p",
    "delta",
    "adapt_limit",
    "spacing",
    "seed",
    "out",
    "n",
    "fit",
    "safety",
    "stride",
    "threshold",
    "steps_grid",
    "sample_counts",
    "x0",
    "dim",
    "out_dir",
    "threads",
];

/// Parsed `key = value` lines. Values are consumed as option groups merge
/// them; keys some other subcommand would read are ignored.
#[derive(Debug, Default)]
pub struct ConfigFile {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{source}:{line_no}: expected `key = value`")))?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(usage(format!("{source}:{line_no}: unknown key `{key}`")));
            }
            if entries
                .insert(key.to_string(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(usage(format!("{source}:{line_no}: duplicate key `{key}`")));
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| {
                usage(format!(
                    "{}:{line}: invalid value for `{key}`: {e}",
                    self.source
                ))
            }),
        }
    }
}

/// Copies the file value into `slot` unless a flag already set it.
pub fn fill<T: FromStr>(
    slot: &mut Option<T>,
    file: &mut ConfigFile,
    key: &str,
) -> Result<(), CliError>
where
    T::Err: fmt::Display,
{
    let from_file = file.take(key)?;
    if slot.is_none() {
        *slot = from_file;
    }
    Ok(())
}

pub fn required<T: Clone>(slot: &Option<T>, flag: &str) -> Result<T, CliError> {
    slot.clone()
        .ok_or_else(|| usage(format!("missing required option --{flag}")))
}

fn positive(v: f64, flag: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!(
            "--{flag} must be positive and finite, got {v}"
        )))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Registered model name (sgn-cubic, linear-1d, linear-nd).
    #[arg(long)]
    pub model: Option<String>,
    /// Decay rate for linear-1d.
    #[arg(long, allow_hyphen_values = true)]
    pub rate: Option<f64>,
    /// Row-major system matrix for linear-nd.
    #[arg(long, allow_hyphen_values = true)]
    pub matrix: Option<List<f64>>,
    /// Radius of the region where the declared constants hold (linear models) [default: 10].
    #[arg(long)]
    pub domain_radius: Option<f64>,
    /// Override the declared Lipschitz constant L.
    #[arg(long)]
    pub lipschitz: Option<f64>,
    /// Override the declared jump constant M.
    #[arg(long)]
    pub jump: Option<f64>,
}

impl ModelArgs {
    pub fn merge(&mut self, file: &mut ConfigFile) -> Result<(), CliError> {
        fill(&mut self.model, file, "model")?;
        fill(&mut self.rate, file, "rate")?;
        fill(&mut self.matrix, file, "matrix")?;
        fill(&mut self.domain_radius, file, "domain_radius")?;
        fill(&mut self.lipschitz, file, "lipschitz")?;
        fill(&mut self.jump, file, "jump")
    }

    pub fn build(&self) -> Result<SystemModel, CliError> {
        let name = required(&self.model, "model")?;
        let params = ModelParams {
            rate: self.rate,
            matrix: self.matrix.clone().map(|l| l.0),
            domain_radius: self.domain_radius,
            lipschitz: self.lipschitz,
            jump: self.jump,
        };
        Registry::with_builtins()
            .build(&name, &params)
            .map_err(|e| match e {
                DynamicsError::UnknownModel(_) | DynamicsError::InvalidModel { .. } => {
                    usage(e.to_string())
                }
                other => data(other),
            })
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TimeArgs {
    /// Integration step Δt [default: 0.01].
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of steps N.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Horizon T; sets N = round(T/Δt).
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// euler or rk4 [default: rk4].
    #[arg(long)]
    pub integrator: Option<IntegratorKind>,
}

impl TimeArgs {
    pub fn merge(&mut self, file: &mut ConfigFile) -> Result<(), CliError> {
        fill(&mut self.dt, file, "dt")?;
        fill(&mut self.steps, file, "steps")?;
        fill(&mut self.horizon, file, "T")?;
        fill(&mut self.integrator, file, "integrator")
    }

    pub fn dt(&self) -> Result<f64, CliError> {
        positive(self.dt.unwrap_or(0.01), "dt")
    }

    pub fn kind(&self) -> IntegratorKind {
        self.integrator.unwrap_or_default()
    }

    pub fn steps(&self, default: usize) -> Result<usize, CliError> {
        let dt = self.dt()?;
        let from_t = match self.horizon {
            Some(t) => {
                let n = (positive(t, "T")? / dt).round();
                if (n * dt - t).abs() > 1e-9 * t.max(1.0) {
                    return Err(usage(format!("--T {t} is not a multiple of --dt {dt}")));
                }
                Some(n as usize)
            }
            None => None,
        };
        match (self.steps, from_t) {
            (Some(n), Some(m)) if n != m => Err(usage(format!(
                "--steps {n} disagrees with --T (which gives {m} steps)"
            ))),
            (Some(n), _) | (None, Some(n)) => Ok(n),
            (None, None) => Ok(default),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct StabilityArgs {
    /// Overshoot constant k ≥ 1.
    #[arg(long)]
    pub k: Option<f64>,
    /// Decay rate λ > 0.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Radius r0 of the initial ball [default: model domain radius].
    #[arg(long)]
    pub r0: Option<f64>,
}

impl StabilityArgs {
    pub fn merge(&mut self, file: &mut ConfigFile) -> Result<(), CliError> {
        fill(&mut self.k, file, "k")?;
        fill(&mut self.lambda, file, "lambda")?;
        fill(&mut self.r0, file, "r0")
    }

    pub fn build(&self, model: &SystemModel) -> Result<StabilityParams, CliError> {
        StabilityParams::new(
            required(&self.k, "k")?,
            required(&self.lambda, "lambda")?,
            self.r0.unwrap_or(model.domain_radius()),
        )
        .map_err(|e| usage(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct EnergyArgs {
    /// Level ℓ of the candidate set {E ≤ ℓ}.
    #[arg(long)]
    pub ell: Option<f64>,
    /// Row-major symmetric positive-definite P [default: identity].
    #[arg(long, allow_hyphen_values = true)]
    pub p: Option<List<f64>>,
}

impl EnergyArgs {
    pub fn merge(&mut self, file: &mut ConfigFile) -> Result<(), CliError> {
        fill(&mut self.ell, file, "ell")?;
        fill(&mut self.p, file, "p")
    }

    pub fn build(&self, dim: usize) -> Result<EnergyForm, CliError> {
        let ell = required(&self.ell, "ell")?;
        let p = match &self.p {
            Some(List(v)) => {
                Matrix::from_row_major(v.clone()).map_err(|e| usage(format!("--p: {e}")))?
            }
            None => Matrix::identity(dim),
        };
        if p.dim() != dim {
            return Err(usage(format!(
                "--p is {0}x{0} but the state has dimension {dim}",
                p.dim()
            )));
        }
        EnergyForm::new(p, ell).map_err(|e| usage(format!("--p/--ell: {e}")))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct OutputArgs {
    /// CSV output path [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed echoed into every CSV header; drives all sampling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

impl OutputArgs {
    pub fn merge(&mut self, file: &mut ConfigFile) -> Result<(), CliError> {
        fill(&mut self.out, file, "out")?;
        fill(&mut self.seed, file, "seed")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

pub fn parse_spacing(s: &str) -> Result<GridSpacing, String> {
    match s {
        "covering" => Ok(GridSpacing::Covering),
        "strict" => Ok(GridSpacing::Strict),
        other => Err(format!(
            "unknown spacing `{other}` (expected covering or strict)"
        )),
    }
}

/// Newtype so the spacing can be read from both flags and files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing(pub GridSpacing);

impl FromStr for Spacing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_spacing(s).map(Spacing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let mut f =
            ConfigFile::parse("# run\nmodel = sgn-cubic\ndt=0.01  # step\n\n", "cfg").unwrap();
        assert_eq!(
            f.take::<String>("model").unwrap().as_deref(),
            Some("sgn-cubic")
        );
        assert_eq!(f.take::<f64>("dt").unwrap(), Some(0.01));
        assert_eq!(f.take::<f64>("dt").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for text in ["bogus = 1", "dt = 1\ndt = 2", "just text"] {
            let err = ConfigFile::parse(text, "cfg").unwrap_err();
            assert_eq!(err.exit_code(), 64, "{text}");
        }
        let err = ConfigFile::parse("bogus = 1", "cfg").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn flag_wins_over_file() {
        let mut f = ConfigFile::parse("dt = 0.01", "cfg").unwrap();
        let mut t = TimeArgs {
            dt: Some(0.5),
            ..Default::default()
        };
        t.merge(&mut f).unwrap();
        assert_eq!(t.dt, Some(0.5));
    }

    #[test]
    fn horizon_and_steps() {
        let t = TimeArgs {
            dt: Some(0.01),
            horizon: Some(5.0),
            ..Default::default()
        };
        assert_eq!(t.steps(1).unwrap(), 500);
        let t = TimeArgs {
            steps: Some(400),
            ..t
        };
        assert!(t.steps(1).is_err());
        assert!(TimeArgs {
            horizon: Some(0.015),
            ..Default::default()
        }
        .steps(1)
        .is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(
            "1, 2,3".parse::<List<usize>>().unwrap(),
            List(vec![1, 2, 3])
        );
        assert!("1,,2".parse::<List<f64>>().is_err());
    }

    #[test]
    fn bad_value_names_key() {
        let mut f = ConfigFile::parse("dt = fast", "cfg").unwrap();
        let err = f.take::<f64>("dt").unwrap_err();
        assert!(err.to_string().contains("`dt`"));
    }
}
