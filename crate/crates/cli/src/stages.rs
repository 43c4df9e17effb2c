//! Stage runners. Each stage is independent apart from running order;
//! failures are recorded per stage and the pipeline continues. A stage
//! fails when it produces no usable result at all; partially failed item
//! sets (one frequency of many, one branch of many) are recorded inside
//! the stage and do not fail the run.

use hypdecay::asymptotic::{dichotomy, large_time_symbol, mu_exponent, DichotomyKind};
use hypdecay::diagonalize::{diag_step, fit_symbol_class};
use hypdecay::propagate::{decay_fits_par, product_representation, Propagator};
use hypdecay::quad::log_grid;
use hypdecay::spectral::{estimate_kappa, spectral_frame};
use hypdecay::surfaces::{contact_index, slowness_surface, AngularGrid};
use hypdecay::zones::separating_time;

use crate::config::{ResolvedConfig, Stage};
use crate::report::{
    AnalyticEcho, BranchError, BranchRow, ClassRow, DecayRow, DiagnoseStage, DichotomyOut,
    KappaOut, LiouvilleRow, MuOut, PairOut, PredictStage, ProductRow, StageFailure, Stages,
    SurfPoint, SurfacesStage, VerifyStage, XiError,
};

/// Largest time used for the Liouville determinant check.
const LIOUVILLE_T_CAP: f64 = 100.0;
/// Largest time used for the product-representation check.
const PRODUCT_T_CAP: f64 = 50.0;
/// Hierarchy level of the product form.
const PRODUCT_LEVEL: usize = 2;
/// At most this many frequencies get the Liouville check.
const LIOUVILLE_MAX: usize = 8;
/// At most this many hyperbolic-zone frequencies get the product check.
const PRODUCT_MAX: usize = 4;

pub fn run_pipeline(cfg: &ResolvedConfig) -> (Stages, Vec<StageFailure>, Vec<String>) {
    let mut stages = Stages::default();
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    for &stage in &cfg.stages {
        match stage {
            Stage::Predict => {
                let out = run_predict(cfg);
                if out.kappa.is_none() && out.mu.is_none() && out.dichotomy.is_none() {
                    failures.push(StageFailure {
                        stage: "predict".into(),
                        error: format!(
                            "no estimator succeeded; kappa: {}; mu: {}",
                            out.kappa_error.as_deref().unwrap_or("-"),
                            out.mu_error.as_deref().unwrap_or("-")
                        ),
                    });
                }
                stages.predict = Some(out);
            }
            Stage::Verify => {
                let out = run_verify(cfg);
                if out.decay_fits.is_empty() {
                    let first = out
                        .decay_errors
                        .first()
                        .map(|e| e.error.clone())
                        .unwrap_or_else(|| "empty frequency set".into());
                    failures.push(StageFailure {
                        stage: "verify".into(),
                        error: format!("no decay fit succeeded; first error: {first}"),
                    });
                }
                stages.verify = Some(out);
            }
            Stage::Diagnose => {
                let out = run_diagnose(cfg);
                if out.classes.is_empty() {
                    let first = out
                        .errors
                        .first()
                        .cloned()
                        .unwrap_or_else(|| "no class fit produced".into());
                    failures.push(StageFailure {
                        stage: "diagnose".into(),
                        error: format!("no residual class certified; first error: {first}"),
                    });
                }
                stages.diagnose = Some(out);
            }
            Stage::Surfaces => {
                if cfg.sym.space_dim < 2 && cfg.stages_defaulted {
                    notes.push(format!(
                        "surfaces skipped: space dimension {} has no angular surface",
                        cfg.sym.space_dim
                    ));
                    continue;
                }
                match run_surfaces(cfg) {
                    Ok(out) => {
                        if out.branches.is_empty() && out.empty_branches.is_empty() {
                            let first = out
                                .branch_errors
                                .first()
                                .map(|e| e.error.clone())
                                .unwrap_or_else(|| "no branch processed".into());
                            failures.push(StageFailure {
                                stage: "surfaces".into(),
                                error: format!("no branch yielded a surface: {first}"),
                            });
                        }
                        stages.surfaces = Some(out);
                    }
                    Err(error) => {
                        failures.push(StageFailure { stage: "surfaces".into(), error });
                    }
                }
            }
        }
    }

    (stages, failures, notes)
}

/// Hyperbolic-zone (s, t, xi) pairs for the kappa envelope fit: magnitudes
/// at and above the zone constant so the separating time is zero, octave-
/// and-longer time pairs up to the horizon end.
fn kappa_grid(cfg: &ResolvedConfig) -> Vec<(f64, f64, Vec<f64>)> {
    let n = cfg.zone.n;
    let end = cfg.horizon.1;
    let sd = cfg.sym.space_dim;
    let mut dirs: Vec<Vec<f64>> = vec![axis(sd, 0)];
    if sd >= 2 {
        dirs.push(axis(sd, 1));
    }
    let mut grid = Vec::new();
    for mag in [n, 3.0 * n, 10.0 * n] {
        for dir in &dirs {
            for s in [1.0f64, 8.0, 64.0] {
                for factor in [8.0, 64.0, 512.0] {
                    let t = (s * factor).min(end);
                    if t >= 2.0 * s {
                        let xi: Vec<f64> = dir.iter().map(|c| c * mag).collect();
                        grid.push((s, t, xi));
                    }
                }
            }
        }
    }
    grid
}

fn axis(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

fn run_predict(cfg: &ResolvedConfig) -> PredictStage {
    let sym = &cfg.sym;
    let p = &sym.predictions;
    let mut out = PredictStage {
        analytic: AnalyticEcho {
            kappa_plus: p.kappa_plus,
            kappa_minus: p.kappa_minus,
            mu: p.mu,
            mu_components: p.mu_components.clone(),
            mu_hyperbolic: p.mu_hyperbolic,
        },
        sigma: None,
        kappa: None,
        kappa_error: None,
        mu: None,
        mu_error: None,
        dichotomy: None,
        dichotomy_error: None,
    };

    let grid = kappa_grid(cfg);
    match estimate_kappa(sym, &cfg.zone, &grid) {
        Ok(k) => {
            out.kappa = Some(KappaOut {
                kappa_plus: k.kappa_plus,
                kappa_minus: k.kappa_minus,
                c_plus: k.c_plus,
                c_minus: k.c_minus,
                ratio_min: k.ratio_min,
                ratio_max: k.ratio_max,
                pairs: grid.len(),
            });
        }
        Err(e) => out.kappa_error = Some(e.to_string()),
    }

    let horizon = (cfg.horizon.0.max(1.0), cfg.horizon.1);
    match large_time_symbol(sym, horizon) {
        Ok(lts) => {
            out.sigma = Some(lts.sigma);
            match mu_exponent(&lts, horizon) {
                Ok(m) => {
                    let settled = m.window_trace.iter().all(|w| w.settled);
                    out.mu = Some(MuOut { mu: m.mu, mu_components: m.mu_j, settled });
                }
                Err(e) => out.mu_error = Some(e.to_string()),
            }
            match dichotomy(&lts, lts.sigma, horizon) {
                Ok(v) => {
                    let kind = match v.kind {
                        DichotomyKind::Weak => "weak",
                        DichotomyKind::Strong => "strong",
                        DichotomyKind::Failed => "failed",
                    };
                    out.dichotomy = Some(DichotomyOut {
                        kind: kind.into(),
                        sigma: v.sigma,
                        pairs: v
                            .pair_evidence
                            .iter()
                            .map(|p| PairOut {
                                i: p.i,
                                j: p.j,
                                gap: p.gap,
                                bounded_above: p.bounded_above,
                                bounded_below: p.bounded_below,
                            })
                            .collect(),
                    });
                }
                Err(e) => out.dichotomy_error = Some(e.to_string()),
            }
        }
        Err(e) => {
            let msg = format!("large-time symbol unavailable: {e}");
            out.mu_error = Some(msg.clone());
            out.dichotomy_error = Some(msg);
        }
    }

    out
}

/// Evenly strided index subset of 0..len with at most `max` entries.
fn stride_subset(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    if max <= 1 {
        return vec![0];
    }
    (0..max).map(|i| i * (len - 1) / (max - 1)).collect()
}

fn run_verify(cfg: &ResolvedConfig) -> VerifyStage {
    let sym = &cfg.sym;
    let (start, end) = cfg.horizon;
    let t_grid: Vec<f64> = log_grid(1.0 + start, 1.0 + end, cfg.t_points)
        .into_iter()
        .map(|u| u - 1.0)
        .collect();

    let mut out = VerifyStage {
        decay_fits: Vec::new(),
        decay_errors: Vec::new(),
        liouville: Vec::new(),
        liouville_errors: Vec::new(),
        products: Vec::new(),
        product_errors: Vec::new(),
        product_skipped: Vec::new(),
        solves: 0,
        steps: 0,
    };

    for (xi, fit) in cfg.xi_set.iter().zip(decay_fits_par(sym, &cfg.xi_set, &t_grid, None)) {
        match fit {
            Ok(f) => out.decay_fits.push(DecayRow {
                xi: xi.clone(),
                xi_norm: norm(xi),
                exponent: f.exponent,
                intercept: f.intercept,
                residual: f.residual,
                window_lo: f.window.0,
                window_hi: f.window.1,
                reliable: f.reliable,
            }),
            Err(e) => out.decay_errors.push(XiError { xi: xi.clone(), error: e.to_string() }),
        }
    }

    match Propagator::new(sym, cfg.solve_tol) {
        Ok(prop) => {
            let t_liou = end.min(LIOUVILLE_T_CAP);
            for &i in &stride_subset(cfg.xi_set.len(), LIOUVILLE_MAX) {
                let xi = &cfg.xi_set[i];
                match prop.liouville_defect(t_liou, start, xi) {
                    Ok(defect) => {
                        out.liouville.push(LiouvilleRow { xi: xi.clone(), t: t_liou, defect })
                    }
                    Err(e) => out
                        .liouville_errors
                        .push(XiError { xi: xi.clone(), error: e.to_string() }),
                }
            }
            let stats = prop.stats();
            out.solves = stats.solves;
            out.steps = stats.steps;
        }
        Err(e) => {
            out.liouville_errors
                .push(XiError { xi: Vec::new(), error: e.to_string() });
        }
    }

    let t_prod = end.min(PRODUCT_T_CAP);
    let mut hyp_idx = Vec::new();
    for (i, xi) in cfg.xi_set.iter().enumerate() {
        let t_sep = separating_time(xi, &cfg.zone);
        if t_sep <= 0.5 * t_prod {
            hyp_idx.push(i);
        } else {
            out.product_skipped.push(XiError {
                xi: xi.clone(),
                error: format!(
                    "separating time {t_sep:.3e} leaves no room below t = {t_prod:.3e}"
                ),
            });
        }
    }
    for j in stride_subset(hyp_idx.len(), PRODUCT_MAX) {
        let xi = &cfg.xi_set[hyp_idx[j]];
        match product_representation(sym, PRODUCT_LEVEL, t_prod, xi, &cfg.zone) {
            Ok(r) => out.products.push(ProductRow {
                xi: xi.clone(),
                xi_norm: r.xi_norm,
                t: t_prod,
                t_sep: r.t_sep,
                k: r.k,
                deviation: r.deviation,
            }),
            Err(e) => out.product_errors.push(XiError { xi: xi.clone(), error: e.to_string() }),
        }
    }

    out
}

fn norm(xi: &[f64]) -> f64 {
    xi.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Residual classes of the first two hierarchy levels on a fixed
/// hyperbolic-zone grid spanning two decades in both |xi| and 1 + t.
fn run_diagnose(cfg: &ResolvedConfig) -> DiagnoseStage {
    let sym = &cfg.sym;
    let n = cfg.zone.n;
    let sd = cfg.sym.space_dim;
    let mut out = DiagnoseStage { classes: Vec::new(), errors: Vec::new() };

    let mut grid = Vec::new();
    for &t in &[0.0, 1.0, 4.0, 10.0, 30.0, 100.0] {
        for &mag in &[10.0, 30.0, 100.0, 300.0, 1000.0] {
            let xi: Vec<f64> = axis(sd, 0).iter().map(|c| c * mag * n).collect();
            grid.push((t, xi));
        }
    }

    let xi_ref: Vec<f64> = axis(sd, 0).iter().map(|c| c * 10.0 * n).collect();
    let path: Vec<(f64, Vec<f64>)> = log_grid(1.0, 101.0, 9)
        .into_iter()
        .map(|u| (u - 1.0, xi_ref.clone()))
        .collect();
    let frame = match spectral_frame(sym, &path) {
        Ok(f) => f,
        Err(e) => {
            out.errors.push(format!("spectral frame: {e}"));
            return out;
        }
    };

    for k in 1..=2usize {
        let fit = fit_symbol_class(
            |t, xi| {
                let step = diag_step(sym, &frame, k, &[(t, xi.to_vec())])?;
                Ok(step.samples[0].r_k.clone())
            },
            &cfg.zone,
            &grid,
        );
        match fit {
            Ok(f) => out.classes.push(ClassRow {
                k,
                m1: f.m1,
                m2: f.m2,
                expected_m1: -(k as f64),
                expected_m2: k as f64 + 1.0,
                constant: f.c,
                residual: f.residual,
            }),
            Err(e) => out.errors.push(format!("level {k}: {e}")),
        }
    }

    out
}

fn run_surfaces(cfg: &ResolvedConfig) -> Result<SurfacesStage, String> {
    let sym = &cfg.sym;
    let sd = sym.space_dim;
    if !(2..=3).contains(&sd) {
        return Err(format!(
            "slowness surfaces need space dimension 2 or 3, model has {sd}"
        ));
    }
    let grid = if sd == 2 {
        AngularGrid::Circle { count: cfg.surfaces.circle }
    } else {
        AngularGrid::Sphere { rows: cfg.surfaces.sphere.0, cols: cfg.surfaces.sphere.1 }
    };
    let branches: Vec<usize> = cfg
        .surfaces
        .branches
        .clone()
        .unwrap_or_else(|| (0..sym.dim).collect());

    let mut out = SurfacesStage {
        time: cfg.surfaces.time,
        gamma_max: cfg.surfaces.gamma_max,
        gamma_model: None,
        branches: Vec::new(),
        empty_branches: Vec::new(),
        branch_errors: Vec::new(),
    };

    for &j in &branches {
        let surface = match slowness_surface(sym, cfg.surfaces.time, j, &grid) {
            Ok(s) => s,
            Err(e) => {
                out.branch_errors.push(BranchError { branch: j, error: e.to_string() });
                continue;
            }
        };
        if surface.coverage() == 0.0 {
            out.empty_branches.push(j);
            continue;
        }
        let table = surface
            .points()
            .into_iter()
            .map(|p| {
                let r = norm(&p);
                let angles = if sd == 2 {
                    vec![p[1].atan2(p[0])]
                } else {
                    vec![(p[2] / r).clamp(-1.0, 1.0).acos(), p[1].atan2(p[0])]
                };
                SurfPoint { angles, r }
            })
            .collect();
        match contact_index(&surface, cfg.surfaces.gamma_max) {
            Ok(c) => {
                if let Some(g) = c.gamma {
                    out.gamma_model = Some(out.gamma_model.map_or(g, |m: usize| m.max(g)));
                }
                out.branches.push(BranchRow {
                    branch: j,
                    coverage: surface.coverage(),
                    gamma: c.gamma,
                    gamma0: c.gamma0,
                    kappa_values: c.kappa_values,
                    kappa0_values: c.kappa0_values,
                    convex: c.convex,
                    worst_point: c.worst_point,
                    threshold: c.threshold,
                    skipped_fits: c.skipped,
                    table,
                });
            }
            Err(e) => {
                out.branch_errors.push(BranchError {
                    branch: j,
                    error: format!("contact index: {e}"),
                });
                out.branches.push(BranchRow {
                    branch: j,
                    coverage: surface.coverage(),
                    gamma: None,
                    gamma0: None,
                    kappa_values: Vec::new(),
                    kappa0_values: Vec::new(),
                    convex: false,
                    worst_point: Vec::new(),
                    threshold: f64::NAN,
                    skipped_fits: 0,
                    table,
                });
            }
        }
    }

    Ok(out)
}
