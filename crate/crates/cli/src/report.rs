//! Report document and emission. JSON carries the full nested report;
//! CSV gets one file per table. Every float is written as `{:.16e}` (17
//! significant digits), so parsing a report reproduces the bits exactly
//! and reruns of the same config differ only in the wall-time field.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::config::Format;

#[derive(Serialize)]
pub struct ReportDocument {
    pub model: ModelEcho,
    pub stages: Stages,
    /// Stage-level failures; item-level errors live inside the stages.
    pub failures: Vec<StageFailure>,
    /// Stages skipped with a reason (e.g. surfaces on a 1-d model under the
    /// defaulted stage set).
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Serialize)]
pub struct ModelEcho {
    pub family: String,
    pub dim: usize,
    pub space_dim: usize,
    pub params: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

#[derive(Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub tool_version: String,
    pub wall_time_seconds: f64,
}

#[derive(Serialize, Default)]
pub struct Stages {
    pub predict: Option<PredictStage>,
    pub verify: Option<VerifyStage>,
    pub diagnose: Option<DiagnoseStage>,
    pub surfaces: Option<SurfacesStage>,
}

#[derive(Serialize)]
pub struct PredictStage {
    pub analytic: AnalyticEcho,
    /// Integrability exponent of the large-time residual.
    pub sigma: Option<f64>,
    pub kappa: Option<KappaOut>,
    pub kappa_error: Option<String>,
    pub mu: Option<MuOut>,
    pub mu_error: Option<String>,
    pub dichotomy: Option<DichotomyOut>,
    pub dichotomy_error: Option<String>,
}

/// Closed-form exponents the model family carries, where they exist.
#[derive(Serialize)]
pub struct AnalyticEcho {
    pub kappa_plus: Option<f64>,
    pub kappa_minus: Option<f64>,
    pub mu: Option<f64>,
    pub mu_components: Option<Vec<f64>>,
    pub mu_hyperbolic: Option<f64>,
}

#[derive(Serialize)]
pub struct KappaOut {
    pub kappa_plus: f64,
    pub kappa_minus: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub pairs: usize,
}

#[derive(Serialize)]
pub struct MuOut {
    pub mu: f64,
    pub mu_components: Vec<f64>,
    pub settled: bool,
}

#[derive(Serialize)]
pub struct DichotomyOut {
    pub kind: String,
    pub sigma: f64,
    pub pairs: Vec<PairOut>,
}

#[derive(Serialize)]
pub struct PairOut {
    pub i: usize,
    pub j: usize,
    pub gap: f64,
    pub bounded_above: bool,
    pub bounded_below: bool,
}

#[derive(Serialize)]
pub struct VerifyStage {
    pub decay_fits: Vec<DecayRow>,
    pub decay_errors: Vec<XiError>,
    pub liouville: Vec<LiouvilleRow>,
    pub liouville_errors: Vec<XiError>,
    pub products: Vec<ProductRow>,
    pub product_errors: Vec<XiError>,
    pub product_skipped: Vec<XiError>,
    pub solves: usize,
    pub steps: usize,
}

#[derive(Serialize)]
pub struct DecayRow {
    pub xi: Vec<f64>,
    pub xi_norm: f64,
    /// Fitted power of (1 + t); negative means decay.
    pub exponent: f64,
    pub intercept: f64,
    pub residual: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub reliable: bool,
}

#[derive(Serialize)]
pub struct XiError {
    pub xi: Vec<f64>,
    pub error: String,
}

#[derive(Serialize)]
pub struct LiouvilleRow {
    pub xi: Vec<f64>,
    pub t: f64,
    /// |det E - exp(i int tr A)| relative to |exp(i int tr A)|.
    pub defect: f64,
}

#[derive(Serialize)]
pub struct ProductRow {
    pub xi: Vec<f64>,
    pub xi_norm: f64,
    pub t: f64,
    pub t_sep: f64,
    pub k: usize,
    /// Relative spectral-norm deviation of the product form from the
    /// direct solve.
    pub deviation: f64,
}

#[derive(Serialize)]
pub struct DiagnoseStage {
    pub classes: Vec<ClassRow>,
    pub errors: Vec<String>,
}

#[derive(Serialize)]
pub struct ClassRow {
    /// Hierarchy level of the remainder R_k.
    pub k: usize,
    pub m1: f64,
    pub m2: f64,
    pub expected_m1: f64,
    pub expected_m2: f64,
    pub constant: f64,
    pub residual: f64,
}

#[derive(Serialize)]
pub struct SurfacesStage {
    pub time: f64,
    pub gamma_max: usize,
    /// Largest branch gamma; the model-level contact order.
    pub gamma_model: Option<usize>,
    pub branches: Vec<BranchRow>,
    /// Branches whose level-one set is empty at this time.
    pub empty_branches: Vec<usize>,
    pub branch_errors: Vec<BranchError>,
}

#[derive(Serialize)]
pub struct BranchRow {
    pub branch: usize,
    pub coverage: f64,
    pub gamma: Option<usize>,
    pub gamma0: Option<usize>,
    pub kappa_values: Vec<f64>,
    pub kappa0_values: Vec<f64>,
    pub convex: bool,
    pub worst_point: Vec<f64>,
    pub threshold: f64,
    pub skipped_fits: usize,
    /// Surface samples for the CSV table; omitted from JSON.
    #[serde(skip)]
    pub table: Vec<SurfPoint>,
}

#[derive(Serialize)]
pub struct BranchError {
    pub branch: usize,
    pub error: String,
}

/// One stored surface point: direction angles and the certified radius.
pub struct SurfPoint {
    /// atan2 angle for a circle; (polar, azimuth) for a sphere.
    pub angles: Vec<f64>,
    pub r: f64,
}

/// Pretty printing with every float in scientific notation at full
/// precision. Delegates the layout to the stock pretty formatter.
struct SciPretty<'a> {
    inner: PrettyFormatter<'a>,
}

impl<'a> Formatter for SciPretty<'a> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn end_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_key(writer)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

pub fn render_json(doc: &ReportDocument) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    let fmt = SciPretty { inner: PrettyFormatter::new() };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    doc.serialize(&mut ser)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    buf.push(b'\n');
    Ok(buf)
}

fn decay_csv(rows: &[DecayRow]) -> String {
    let mut out = String::from("xi_norm,exponent,residual,window_lo,window_hi\n");
    for r in rows {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.xi_norm, r.exponent, r.residual, r.window_lo, r.window_hi
        ));
    }
    out
}

fn surface_csv(branch: &BranchRow, gamma_max: usize) -> String {
    let mut header = if branch.table.first().map_or(1, |p| p.angles.len()) == 2 {
        String::from("polar,azimuth,r")
    } else {
        String::from("theta,r")
    };
    for order in 2..=gamma_max {
        header.push_str(&format!(",kappa_{order}"));
    }
    header.push('\n');
    let mut out = header;
    for p in &branch.table {
        for a in &p.angles {
            out.push_str(&format!("{a:.16e},"));
        }
        out.push_str(&format!("{:.16e}", p.r));
        for order in 2..=gamma_max {
            let v = branch.kappa_values.get(order - 2).copied().unwrap_or(f64::NAN);
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

/// Writes the requested artifacts and returns their paths in write order.
pub fn emit(
    doc: &ReportDocument,
    out_dir: &Path,
    format: Format,
) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    if format.wants_json() {
        let path = out_dir.join("report.json");
        let bytes = render_json(doc)?;
        write_file(&path, &bytes)?;
        written.push(path);
    }

    if format.wants_csv() {
        if let Some(verify) = &doc.stages.verify {
            let path = out_dir.join("decay_fits.csv");
            write_file(&path, decay_csv(&verify.decay_fits).as_bytes())?;
            written.push(path);
        }
        if let Some(surfaces) = &doc.stages.surfaces {
            for branch in &surfaces.branches {
                let path = out_dir.join(format!("surfaces_branch{}.csv", branch.branch));
                write_file(&path, surface_csv(branch, surfaces.gamma_max).as_bytes())?;
                written.push(path);
            }
        }
    }

    Ok(written)
}

fn write_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()
}
