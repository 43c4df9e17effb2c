//! Run configuration: one TOML file names the model, the zone constants,
//! the time horizon, the frequency set, and the stage subset. Everything
//! else has a default, so a minimal config is just a `[model]` table.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::ValueEnum;
use serde::Deserialize;
use serde_json::json;

use hypdecay::coeff::{CoeffMatrix, ScalarCoefficient};
use hypdecay::models::{
    build_first_order, build_klein_gordon, build_oscillating_pair, build_wave_dissipation,
    FamilyTag, SymbolModel,
};
use hypdecay::propagate::MIN_SOLVE_TOL;
use hypdecay::zones::ZoneConfig;
use hypdecay::C;

use crate::CliError;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Stage {
    Predict,
    Verify,
    Diagnose,
    Surfaces,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Predict => "predict",
            Stage::Verify => "verify",
            Stage::Diagnose => "diagnose",
            Stage::Surfaces => "surfaces",
        }
    }

    fn parse(s: &str) -> Result<Stage, CliError> {
        match s {
            "predict" => Ok(Stage::Predict),
            "verify" => Ok(Stage::Verify),
            "diagnose" => Ok(Stage::Diagnose),
            "surfaces" => Ok(Stage::Surfaces),
            other => Err(CliError::config(format!(
                "unknown pipeline stage {other:?}; expected predict, verify, diagnose or surfaces"
            ))),
        }
    }
}

/// Which subcommand invoked the run; decides the stage set.
#[derive(Clone, Copy, Debug)]
pub enum Invocation {
    Predict,
    Verify,
    Surfaces,
    Report,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    pub fn wants_json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn wants_csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    /// Parsed in a second pass so unknown keys can be rejected; a tagged
    /// enum cannot deny them itself, and a top-level key accidentally
    /// written below the [model] header would otherwise vanish silently.
    model: toml::value::Table,
    #[serde(default)]
    zone: ZoneSection,
    #[serde(default)]
    horizon: HorizonSection,
    #[serde(default)]
    xi: XiSection,
    /// Stage subset for `report`; the single-stage subcommands ignore it.
    #[serde(default)]
    pipeline: Option<Vec<String>>,
    #[serde(default)]
    workers: Option<usize>,
    #[serde(default)]
    tolerances: TolSection,
    #[serde(default)]
    output: OutputSection,
    #[serde(default)]
    surfaces: SurfacesSection,
}

/// Model families constructible from plain numbers. The tag is the same
/// string the report echoes back.
#[derive(Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum ModelSection {
    /// Scale-invariant dissipation b(t) = mu0 / (1 + t).
    WaveDissipation { mu0: f64 },
    /// Scale-invariant mass m(t) = m0 / (1 + t).
    KleinGordon { m0: f64 },
    /// Bounded oscillating coefficients on the two diagonal entries.
    OscillatingPair { b1: OscSpec, b2: OscSpec },
    /// D_t U = sum_j a_j xi_j U + i diag(c) / (1 + t) U, constant real a_j.
    FirstOrder {
        a: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        b_imag_diag: Option<Vec<f64>>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OscSpec {
    Constant(f64),
    /// offset + amp * sin(omega * log(1 + t) + phase).
    SinLog {
        #[serde(default)]
        offset: f64,
        amp: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl OscSpec {
    fn coefficient(&self) -> ScalarCoefficient {
        match self {
            OscSpec::Constant(c) => ScalarCoefficient::constant(*c),
            OscSpec::SinLog { offset, amp, omega, phase } => {
                ScalarCoefficient::sin_log(*offset, *amp, *omega, *phase)
            }
        }
    }

    fn echo(&self) -> serde_json::Value {
        match self {
            OscSpec::Constant(c) => json!(c),
            OscSpec::SinLog { offset, amp, omega, phase } => {
                json!({ "offset": offset, "amp": amp, "omega": omega, "phase": phase })
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ZoneSection {
    n: f64,
    smoothing_width: f64,
}

impl Default for ZoneSection {
    fn default() -> Self {
        ZoneSection { n: 1.0, smoothing_width: 1.0 }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct HorizonSection {
    start: f64,
    end: f64,
    /// Log-spaced t-grid size for the decay fits.
    points: usize,
}

impl Default for HorizonSection {
    fn default() -> Self {
        HorizonSection { start: 0.0, end: 1e4, points: 33 }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct XiSection {
    /// Explicit frequency vectors; length must match the space dimension.
    #[serde(default)]
    samples: Option<Vec<Vec<f64>>>,
    /// Log-spaced magnitudes times unit directions.
    #[serde(default)]
    grid: Option<XiGridSection>,
}

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields, default)]
struct XiGridSection {
    magnitudes: usize,
    lo: f64,
    hi: f64,
    directions: Option<usize>,
}

impl Default for XiGridSection {
    fn default() -> Self {
        XiGridSection { magnitudes: 16, lo: 1e-6, hi: 1e2, directions: None }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TolSection {
    solve: f64,
}

impl Default for TolSection {
    fn default() -> Self {
        TolSection { solve: 1e-10 }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    #[serde(default)]
    dir: Option<PathBuf>,
    #[serde(default)]
    format: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SurfacesSection {
    /// Evaluation time of the averaged eigenvalues.
    time: f64,
    gamma_max: usize,
    /// Circle direction count (space dimension 2).
    circle: usize,
    /// Latitude rows and longitude columns (space dimension 3).
    sphere: [usize; 2],
    /// Branch subset; all branches when absent.
    branches: Option<Vec<usize>>,
}

impl Default for SurfacesSection {
    fn default() -> Self {
        SurfacesSection {
            time: 1.0,
            gamma_max: 4,
            circle: 720,
            sphere: [360, 720],
            branches: None,
        }
    }
}

pub struct SurfacesConf {
    pub time: f64,
    pub gamma_max: usize,
    pub circle: usize,
    pub sphere: (usize, usize),
    pub branches: Option<Vec<usize>>,
}

/// Everything the pipeline needs, validated and with flags folded in.
pub struct ResolvedConfig {
    pub sym: SymbolModel,
    pub zone: ZoneConfig,
    pub horizon: (f64, f64),
    pub t_points: usize,
    pub xi_set: Vec<Vec<f64>>,
    pub stages: Vec<Stage>,
    /// True when the stage list was defaulted rather than requested; an
    /// inapplicable surfaces stage is then skipped instead of failed.
    pub stages_defaulted: bool,
    pub solve_tol: f64,
    pub out_dir: PathBuf,
    pub format: Format,
    pub workers: Option<usize>,
    pub surfaces: SurfacesConf,
    pub model_echo: BTreeMap<String, serde_json::Value>,
    pub family: String,
}

pub struct Flags {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub format: Option<Format>,
}

fn finite(v: f64, what: &str) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::config(format!("{what} must be finite, got {v}")))
    }
}

fn parse_model(table: &toml::value::Table) -> Result<ModelSection, CliError> {
    let family = table
        .get("family")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::config("[model] needs a string `family` key"))?;
    let allowed: &[&str] = match family {
        "wave_dissipation" => &["family", "mu0"],
        "klein_gordon" => &["family", "m0"],
        "oscillating_pair" => &["family", "b1", "b2"],
        "first_order" => &["family", "a", "b_imag_diag"],
        other => {
            return Err(CliError::config(format!(
                "unknown model family {other:?}; expected wave_dissipation, \
                 klein_gordon, oscillating_pair or first_order"
            )))
        }
    };
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(CliError::config(format!(
                "unknown key `{key}` in [model] for family {family}; \
                 top-level keys must come before the [model] header"
            )));
        }
    }
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e| CliError::config(format!("[model]: {e}")))
}

fn build_model(section: &ModelSection) -> Result<SymbolModel, CliError> {
    let built = match section {
        ModelSection::WaveDissipation { mu0 } => {
            finite(*mu0, "mu0")?;
            build_wave_dissipation(ScalarCoefficient::power(*mu0, -1.0))
        }
        ModelSection::KleinGordon { m0 } => {
            finite(*m0, "m0")?;
            build_klein_gordon(ScalarCoefficient::power(*m0, -1.0), *m0)
        }
        ModelSection::OscillatingPair { b1, b2 } => {
            build_oscillating_pair(b1.coefficient(), b2.coefficient())
        }
        ModelSection::FirstOrder { a, b_imag_diag } => {
            if a.is_empty() {
                return Err(CliError::config("first_order needs at least one a matrix"));
            }
            let d = a[0].len();
            for (j, m) in a.iter().enumerate() {
                if m.len() != d || m.iter().any(|row| row.len() != d) {
                    return Err(CliError::config(format!(
                        "first_order a[{j}] is not {d}x{d}"
                    )));
                }
                for row in m {
                    for &v in row {
                        finite(v, "first_order a entry")?;
                    }
                }
            }
            let coeffs = a
                .iter()
                .map(|m| {
                    let rows: Vec<&[f64]> = m.iter().map(|r| r.as_slice()).collect();
                    CoeffMatrix::constant(&rows)
                })
                .collect();
            let b = match b_imag_diag {
                None => CoeffMatrix::zeros(d, d),
                Some(c) => {
                    if c.len() != d {
                        return Err(CliError::config(format!(
                            "b_imag_diag has {} entries, model dimension is {d}",
                            c.len()
                        )));
                    }
                    let mut entries = vec![ScalarCoefficient::zero(); d * d];
                    for (i, &ci) in c.iter().enumerate() {
                        finite(ci, "b_imag_diag entry")?;
                        entries[i * d + i] =
                            ScalarCoefficient::power(ci, -1.0).scaled(C::new(0.0, 1.0));
                    }
                    CoeffMatrix::from_entries(d, d, entries)
                }
            };
            build_first_order(coeffs, b)
        }
    };
    built.map_err(|e| CliError::config(format!("model construction failed: {e}")))
}

fn family_name(tag: FamilyTag) -> &'static str {
    match tag {
        FamilyTag::FirstOrderDifferential => "first_order",
        FamilyTag::WaveDissipation => "wave_dissipation",
        FamilyTag::KleinGordon => "klein_gordon",
        FamilyTag::OscillatingPair => "oscillating_pair",
        FamilyTag::Cosmology => "cosmology",
        FamilyTag::Custom => "custom",
    }
}

fn model_echo(section: &ModelSection) -> BTreeMap<String, serde_json::Value> {
    let mut echo = BTreeMap::new();
    match section {
        ModelSection::WaveDissipation { mu0 } => {
            echo.insert("mu0".into(), json!(mu0));
        }
        ModelSection::KleinGordon { m0 } => {
            echo.insert("m0".into(), json!(m0));
        }
        ModelSection::OscillatingPair { b1, b2 } => {
            echo.insert("b1".into(), b1.echo());
            echo.insert("b2".into(), b2.echo());
        }
        ModelSection::FirstOrder { a, b_imag_diag } => {
            echo.insert("a".into(), json!(a));
            if let Some(c) = b_imag_diag {
                echo.insert("b_imag_diag".into(), json!(c));
            }
        }
    }
    echo
}

fn resolve_xi(
    section: &XiSection,
    space_dim: usize,
    needed: bool,
) -> Result<Vec<Vec<f64>>, CliError> {
    if section.samples.is_some() && section.grid.is_some() {
        return Err(CliError::config(
            "give either xi.samples or xi.grid, not both",
        ));
    }
    if let Some(samples) = &section.samples {
        for (i, xi) in samples.iter().enumerate() {
            if xi.len() != space_dim {
                return Err(CliError::config(format!(
                    "xi.samples[{i}] has {} components, space dimension is {space_dim}",
                    xi.len()
                )));
            }
            for &v in xi {
                finite(v, "xi sample component")?;
            }
        }
        if samples.is_empty() && needed {
            return Err(CliError::config("verify needs a nonempty frequency set"));
        }
        return Ok(samples.clone());
    }

    let grid = section.grid.clone().unwrap_or_default();
    if grid.magnitudes == 0 {
        return Err(CliError::config("xi.grid.magnitudes must be at least 1"));
    }
    finite(grid.lo, "xi.grid.lo")?;
    finite(grid.hi, "xi.grid.hi")?;
    if !(grid.lo > 0.0 && grid.hi >= grid.lo) {
        return Err(CliError::config("xi.grid needs 0 < lo <= hi"));
    }
    let dirs = grid.directions.unwrap_or(if space_dim == 1 { 1 } else { 8 });
    if dirs == 0 {
        return Err(CliError::config("xi.grid.directions must be at least 1"));
    }
    let mut units: Vec<Vec<f64>> = Vec::new();
    match space_dim {
        1 => {
            if dirs > 2 {
                return Err(CliError::config(
                    "xi.grid.directions for a 1-d model is 1 (+xi) or 2 (both signs)",
                ));
            }
            units.push(vec![1.0]);
            if dirs == 2 {
                units.push(vec![-1.0]);
            }
        }
        2 => {
            for i in 0..dirs {
                let th = std::f64::consts::TAU * i as f64 / dirs as f64;
                units.push(vec![th.cos(), th.sin()]);
            }
        }
        _ => {
            return Err(CliError::config(
                "xi.grid covers space dimensions 1 and 2; give explicit xi.samples",
            ));
        }
    }
    let m = grid.magnitudes;
    let mut out = Vec::with_capacity(m * units.len());
    for i in 0..m {
        let f = if m == 1 { 0.0 } else { i as f64 / (m - 1) as f64 };
        let mag = grid.lo * (grid.hi / grid.lo).powf(f);
        for u in &units {
            out.push(u.iter().map(|c| c * mag).collect());
        }
    }
    Ok(out)
}

fn resolve_stages(
    invocation: Invocation,
    pipeline: &Option<Vec<String>>,
) -> Result<(Vec<Stage>, bool), CliError> {
    match invocation {
        Invocation::Predict => Ok((vec![Stage::Predict], false)),
        Invocation::Verify => Ok((vec![Stage::Verify], false)),
        Invocation::Surfaces => Ok((vec![Stage::Surfaces], false)),
        Invocation::Report => match pipeline {
            Some(names) => {
                let mut stages: Vec<Stage> =
                    names.iter().map(|s| Stage::parse(s)).collect::<Result<_, _>>()?;
                stages.sort();
                stages.dedup();
                Ok((stages, false))
            }
            None => Ok((
                vec![Stage::Predict, Stage::Verify, Stage::Diagnose, Stage::Surfaces],
                true,
            )),
        },
    }
}

pub fn resolve(
    text: &str,
    invocation: Invocation,
    flags: &Flags,
) -> Result<ResolvedConfig, CliError> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;

    let sym = build_model(&raw.model)?;
    let family = family_name(sym.family).to_string();
    let echo = model_echo(&raw.model);

    finite(raw.zone.n, "zone.n")?;
    finite(raw.zone.smoothing_width, "zone.smoothing_width")?;
    if !(raw.zone.n > 0.0 && raw.zone.smoothing_width > 0.0) {
        return Err(CliError::config("zone constants must be positive"));
    }
    let zone = ZoneConfig::new(raw.zone.n, raw.zone.smoothing_width);

    finite(raw.horizon.start, "horizon.start")?;
    finite(raw.horizon.end, "horizon.end")?;
    if !(raw.horizon.start >= 0.0 && raw.horizon.end > raw.horizon.start) {
        return Err(CliError::config(format!(
            "horizon needs end > start >= 0, got [{}, {}]",
            raw.horizon.start, raw.horizon.end
        )));
    }
    if raw.horizon.points < 2 || raw.horizon.points > 100_000 {
        return Err(CliError::config(format!(
            "horizon.points = {} outside 2..=100000",
            raw.horizon.points
        )));
    }

    let (stages, stages_defaulted) = resolve_stages(invocation, &raw.pipeline)?;
    let xi_needed = stages.contains(&Stage::Verify);
    let xi_set = resolve_xi(&raw.xi, sym.space_dim, xi_needed)?;
    if xi_needed && xi_set.is_empty() {
        return Err(CliError::config("verify needs a nonempty frequency set"));
    }

    finite(raw.tolerances.solve, "tolerances.solve")?;
    if !(raw.tolerances.solve >= MIN_SOLVE_TOL && raw.tolerances.solve <= 1e-3) {
        return Err(CliError::config(format!(
            "tolerances.solve = {:.3e} outside [{MIN_SOLVE_TOL:.0e}, 1e-3]",
            raw.tolerances.solve
        )));
    }

    let workers = flags.workers.or(raw.workers);
    if let Some(w) = workers {
        if w == 0 || w > 512 {
            return Err(CliError::config(format!("workers = {w} outside 1..=512")));
        }
    }

    let format = match (&flags.format, &raw.output.format) {
        (Some(f), _) => *f,
        (None, Some(s)) => match s.as_str() {
            "json" => Format::Json,
            "csv" => Format::Csv,
            "both" => Format::Both,
            other => {
                return Err(CliError::config(format!(
                    "output.format {other:?}; expected json, csv or both"
                )))
            }
        },
        (None, None) => Format::Both,
    };

    let out_dir = flags
        .out
        .clone()
        .or_else(|| std::env::var_os("HYPDECAY_OUT").map(PathBuf::from))
        .or_else(|| raw.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    finite(raw.surfaces.time, "surfaces.time")?;
    if !(raw.surfaces.time > 0.0) {
        return Err(CliError::config("surfaces.time must be positive"));
    }
    if !(2..=6).contains(&raw.surfaces.gamma_max) {
        return Err(CliError::config(format!(
            "surfaces.gamma_max = {} outside 2..=6",
            raw.surfaces.gamma_max
        )));
    }
    if let Some(branches) = &raw.surfaces.branches {
        for &j in branches {
            if j >= sym.dim {
                return Err(CliError::config(format!(
                    "surfaces.branches entry {j} out of range for dimension {}",
                    sym.dim
                )));
            }
        }
    }

    Ok(ResolvedConfig {
        zone,
        horizon: (raw.horizon.start, raw.horizon.end),
        t_points: raw.horizon.points,
        xi_set,
        stages,
        stages_defaulted,
        solve_tol: raw.tolerances.solve,
        out_dir,
        format,
        workers,
        surfaces: SurfacesConf {
            time: raw.surfaces.time,
            gamma_max: raw.surfaces.gamma_max,
            circle: raw.surfaces.circle,
            sphere: (raw.surfaces.sphere[0], raw.surfaces.sphere[1]),
            branches: raw.surfaces.branches.clone(),
        },
        model_echo: echo,
        family,
        sym,
    })
}
