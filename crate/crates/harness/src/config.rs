//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: {reason}")]
    Incompatible { key: &'static str, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelId {
    AllenCahn,
    CahnHilliard,
    PhaseFieldCrystal,
    MultiComponent,
    Vesicle,
    NavierStokes,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            Self::AllenCahn => "allen-cahn",
            Self::CahnHilliard => "cahn-hilliard",
            Self::PhaseFieldCrystal => "pfc",
            Self::MultiComponent => "multi",
            Self::Vesicle => "pfvm",
            Self::NavierStokes => "navier-stokes",
        }
    }
}

impl FromStr for ModelId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "allen-cahn" | "ac" => Self::AllenCahn,
            "cahn-hilliard" | "ch" => Self::CahnHilliard,
            "pfc" | "phase-field-crystal" => Self::PhaseFieldCrystal,
            "multi" | "multi-component" => Self::MultiComponent,
            "pfvm" | "vesicle" => Self::Vesicle,
            "navier-stokes" | "ns" => Self::NavierStokes,
            _ => return Err(format!("unknown model `{s}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pressure {
    Correction,
    Poisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeId {
    Resav1Bdf(usize),
    Resav1Cn,
    Rmesav1Cn,
    Resav2Bdf(usize),
    Flow(Pressure, usize),
}

impl SchemeId {
    pub fn order(self) -> usize {
        match self {
            Self::Resav1Bdf(k) | Self::Resav2Bdf(k) | Self::Flow(_, k) => k,
            Self::Resav1Cn | Self::Rmesav1Cn => 2,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Resav1Bdf(k) => write!(f, "resav1-bdf{k}"),
            Self::Resav1Cn => write!(f, "resav1-cn"),
            Self::Rmesav1Cn => write!(f, "rmesav1-cn"),
            Self::Resav2Bdf(k) => write!(f, "resav2-bdf{k}"),
            Self::Flow(Pressure::Correction, k) => write!(f, "ns-scheme1-bdf{k}"),
            Self::Flow(Pressure::Poisson, k) => write!(f, "ns-scheme2-bdf{k}"),
        }
    }
}

impl FromStr for SchemeId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let order = |prefix: &str, max: usize| -> Option<usize> {
            s.strip_prefix(prefix)
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|k| (1..=max).contains(k))
        };
        if s == "resav1-cn" {
            return Ok(Self::Resav1Cn);
        }
        if s == "rmesav1-cn" {
            return Ok(Self::Rmesav1Cn);
        }
        if let Some(k) = order("resav1-bdf", 2) {
            return Ok(Self::Resav1Bdf(k));
        }
        if let Some(k) = order("resav2-bdf", 4) {
            return Ok(Self::Resav2Bdf(k));
        }
        if let Some(k) = order("ns-scheme1-bdf", 4) {
            return Ok(Self::Flow(Pressure::Correction, k));
        }
        if let Some(k) = order("ns-scheme2-bdf", 4) {
            return Ok(Self::Flow(Pressure::Poisson, k));
        }
        Err(format!("unknown scheme `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Manufactured solution at `t = 0`.
    Exact,
    Star,
    Random,
    Constant,
    FourSpheres,
    ShearLayer,
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "exact" => Self::Exact,
            "star" => Self::Star,
            "random" => Self::Random,
            "constant" => Self::Constant,
            "four-spheres" => Self::FourSpheres,
            "shear-layer" => Self::ShearLayer,
            _ => return Err(format!("unknown initial condition `{s}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Exact,
    Fine,
}

impl FromStr for Reference {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Self::Exact),
            "fine" => Ok(Self::Fine),
            _ => Err(format!("expected `exact` or `fine`, got `{s}`")),
        }
    }
}

/// Physical parameters; only those relevant to the model are used.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub sigma0: f64,
    pub mobility: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub nu: f64,
    pub well: f64,
    pub coupling: Vec<Vec<f64>>,
    /// `G = M |k|^2` for multi-component runs instead of `G = M`.
    pub h_minus_one: bool,
    pub alpha: f64,
    pub shear_sigma: f64,
    pub shear_eps: f64,
    pub init_mean: f64,
    pub init_amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelId,
    pub scheme: SchemeId,
    pub relaxed: bool,
    pub extents: Vec<usize>,
    pub lengths: Vec<f64>,
    pub origin: Vec<f64>,
    pub dt: f64,
    pub t_final: f64,
    pub gamma: f64,
    pub scale_c: Option<f64>,
    pub dealias: bool,
    pub strict: bool,
    pub snapshot_times: Vec<f64>,
    pub output: PathBuf,
    pub seed: u64,
    pub init: InitKind,
    pub manufactured: bool,
    pub params: Params,
    pub dt_list: Vec<f64>,
    pub reference: Reference,
}

const KEYS: &[&str] = &[
    "model", "scheme", "relaxed", "n", "dim", "length", "origin", "dt", "T", "gamma", "scale_c",
    "dealias", "strict", "snapshot_times", "output", "seed", "init", "forcing", "sigma0", "mobility",
    "epsilon", "zeta", "sigma1", "sigma2", "nu", "well", "coupling", "mobility_kind", "alpha",
    "shear_sigma", "shear_eps", "init_mean", "init_amplitude", "dt_list", "reference",
];

/// Splits `key = value` lines; `#` starts a comment. Later keys override
/// earlier ones.
pub fn parse_pairs(source: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: line.to_string() })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: line.to_string() });
        }
        map.insert(key.to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn parse_config(source: &str) -> Result<RunConfig, ConfigError> {
    build(parse_pairs(source)?)
}

/// Parses `source` and then applies `overrides` (each `key=value`).
pub fn parse_with_overrides(source: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut map = parse_pairs(source)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, text: o.clone() })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    build(map)
}

struct Reader {
    map: BTreeMap<String, String>,
}

impl Reader {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| invalid(key, format!("cannot parse `{v}`: {e}"))))
            .transpose()
    }

    fn real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.parse::<f64>(key)?.unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(invalid(key, "must be finite"))
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.real(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(invalid(key, format!("must be positive, got {v}")))
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "on" | "yes" | "1") => Ok(true),
            Some("false" | "off" | "no" | "0") => Ok(false),
            Some(v) => Err(invalid(key, format!("expected a boolean, got `{v}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split([',', ' '])
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| invalid(key, format!("cannot parse `{s}`: {e}"))))
                    .collect()
            })
            .transpose()
    }
}

fn parse_matrix(key: &str, v: &str) -> Result<Vec<Vec<f64>>, ConfigError> {
    v.split(';')
        .map(|row| {
            row.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| invalid(key, format!("cannot parse `{s}`: {e}"))))
                .collect()
        })
        .collect()
}

fn build(map: BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
    if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(k.clone()));
    }
    let r = Reader { map };
    let model: ModelId = r.parse("model")?.ok_or(ConfigError::Missing("model"))?;
    let scheme: SchemeId = r.parse("scheme")?.ok_or(ConfigError::Missing("scheme"))?;
    check_compatible(model, scheme)?;

    let manufactured = match r.raw("forcing") {
        None | Some("none") => false,
        Some("manufactured") => true,
        Some(v) => return Err(invalid("forcing", format!("expected `none` or `manufactured`, got `{v}`"))),
    };
    let init = match r.parse::<InitKind>("init")? {
        Some(i) => i,
        None if manufactured => InitKind::Exact,
        None => match model {
            ModelId::AllenCahn => InitKind::Star,
            ModelId::Vesicle => InitKind::FourSpheres,
            ModelId::NavierStokes => InitKind::ShearLayer,
            _ => InitKind::Random,
        },
    };
    if init == InitKind::Exact && !manufactured {
        return Err(ConfigError::Incompatible { key: "init", reason: "`exact` needs forcing = manufactured".into() });
    }
    if manufactured && !matches!(model, ModelId::AllenCahn | ModelId::CahnHilliard | ModelId::NavierStokes) {
        return Err(ConfigError::Incompatible {
            key: "forcing",
            reason: format!("no manufactured solution for model `{}`", model.name()),
        });
    }

    let default_dim = if model == ModelId::Vesicle { 3 } else { 2 };
    let dim = r.parse::<usize>("dim")?.unwrap_or(default_dim);
    let extents = r.list::<usize>("n")?.ok_or(ConfigError::Missing("n"))?;
    let extents = match extents.len() {
        1 => vec![extents[0]; dim],
        d if d == dim || r.raw("dim").is_none() => extents,
        d => return Err(invalid("n", format!("{d} extents for a {dim}-dimensional grid"))),
    };
    let dim = extents.len();
    if !(1..=3).contains(&dim) || extents.iter().any(|&n| n < 4 || n % 2 == 1) {
        return Err(invalid("n", "extents must be even, at least 4, in 1 to 3 dimensions"));
    }
    let (default_len, default_origin) = match (init, model) {
        (InitKind::Star, _) => (1.0, 0.0),
        (InitKind::Exact, ModelId::NavierStokes) => (2.0, -1.0),
        (InitKind::Exact, _) | (InitKind::ShearLayer, _) => (2.0, 0.0),
        (InitKind::FourSpheres, _) => (2.0 * PI, -PI),
        _ => (2.0 * PI, 0.0),
    };
    let expand = |key: &str, v: Option<Vec<f64>>, default: f64| -> Result<Vec<f64>, ConfigError> {
        match v {
            None => Ok(vec![default; dim]),
            Some(v) if v.len() == 1 => Ok(vec![v[0]; dim]),
            Some(v) if v.len() == dim => Ok(v),
            Some(v) => Err(invalid(key, format!("{} values for a {dim}-dimensional grid", v.len()))),
        }
    };
    let lengths = expand("length", r.list("length")?, default_len)?;
    if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(invalid("length", "box lengths must be positive"));
    }
    let origin = expand("origin", r.list("origin")?, default_origin)?;

    let dt = r.parse::<f64>("dt")?.ok_or(ConfigError::Missing("dt"))?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    let t_final = r.parse::<f64>("T")?.ok_or(ConfigError::Missing("T"))?;
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(invalid("T", format!("must be non-negative, got {t_final}")));
    }
    let gamma = r.real("gamma", 1.0)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("must lie in [0, 1], got {gamma}")));
    }
    let scale_c = r.parse::<f64>("scale_c")?;
    if let Some(c) = scale_c {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("scale_c", format!("must be positive, got {c}")));
        }
    }

    let (sigma0, mobility, epsilon) = match model {
        ModelId::CahnHilliard => (0.04, 0.005, 1.0),
        ModelId::PhaseFieldCrystal => (1.0, 1.0, 0.25),
        // interface three cells wide
        ModelId::Vesicle => (1.0, 1.0, 6.0 * PI / extents[0] as f64),
        _ => (1e-4, 1.0, 1.0),
    };
    let sigma0 = r.positive("sigma0", sigma0)?;
    let coupling = match r.raw("coupling") {
        Some(v) => parse_matrix("coupling", v)?,
        None => vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    };
    let h_minus_one = match r.raw("mobility_kind") {
        None | Some("l2") => false,
        Some("h-1") => true,
        Some(v) => return Err(invalid("mobility_kind", format!("expected `l2` or `h-1`, got `{v}`"))),
    };
    let params = Params {
        sigma0,
        mobility: r.positive("mobility", mobility)?,
        epsilon: r.positive("epsilon", epsilon)?,
        zeta: r.real("zeta", 1.0)?,
        sigma1: r.positive("sigma1", 0.01)?,
        sigma2: r.positive("sigma2", 0.01)?,
        nu: r.positive("nu", 0.1)?,
        well: r.positive("well", 1.0)?,
        coupling,
        h_minus_one,
        alpha: r.positive("alpha", sigma0)?,
        shear_sigma: r.positive("shear_sigma", 30.0)?,
        shear_eps: r.real("shear_eps", 0.05)?,
        init_mean: r.real("init_mean", 0.0)?,
        init_amplitude: r.real("init_amplitude", 1.0)?,
    };

    let mut snapshot_times = r.list::<f64>("snapshot_times")?.unwrap_or_default();
    if snapshot_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(invalid("snapshot_times", "times must be non-negative"));
    }
    snapshot_times.sort_by(f64::total_cmp);
    let dt_list = r.list::<f64>("dt_list")?.unwrap_or_default();
    if dt_list.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(invalid("dt_list", "time steps must be positive"));
    }

    Ok(RunConfig {
        model,
        scheme,
        relaxed: r.flag("relaxed", true)?,
        extents,
        lengths,
        origin,
        dt,
        t_final,
        gamma,
        scale_c,
        dealias: r.flag("dealias", false)?,
        strict: r.flag("strict", true)?,
        snapshot_times,
        output: PathBuf::from(r.raw("output").unwrap_or("out")),
        seed: r.parse("seed")?.unwrap_or(0),
        init,
        manufactured,
        params,
        dt_list,
        reference: r.parse("reference")?.unwrap_or(if manufactured { Reference::Exact } else { Reference::Fine }),
    })
}

fn check_compatible(model: ModelId, scheme: SchemeId) -> Result<(), ConfigError> {
    let ok = match scheme {
        SchemeId::Resav1Bdf(_) | SchemeId::Resav2Bdf(_) => {
            matches!(model, ModelId::AllenCahn | ModelId::CahnHilliard | ModelId::PhaseFieldCrystal)
        }
        SchemeId::Resav1Cn => model == ModelId::MultiComponent,
        SchemeId::Rmesav1Cn => model == ModelId::Vesicle,
        SchemeId::Flow(..) => model == ModelId::NavierStokes,
    };
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Incompatible {
            key: "scheme",
            reason: format!("scheme `{scheme}` cannot run model `{}`", model.name()),
        })
    }
}
