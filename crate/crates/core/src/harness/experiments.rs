//! The experiment registry.

use crate::analysis::{
    appendix_suite, decay_exponent, gradient_resolvent_curve, heat_kernel_probe, perturbation_decay, rh_ratio,
    riesz_norm_curve, singular_starts, AppendixConfig, CurveConfig, ProbeConfig, Relation,
};
use crate::coeffs::{gd_decay_joint, gd_profile, halton_points, rescale, GdConfig, MatrixField, WeightField};
use crate::discretize::DiscreteOperator;
use crate::error::{Error, Result};
use crate::fit::fit_power_law;
use crate::grid::Grid;

use super::spec::{build_boundary, build_field, build_weight};
use super::{ExperimentConfig, Record, Recorder};

type RunFn = fn(&ExperimentConfig, &mut Recorder) -> Result<()>;

pub(crate) struct ExperimentDef {
    pub id: &'static str,
    pub summary: &'static str,
    defaults: &'static str,
    pub run: RunFn,
}

const CONIC_UNBOUNDED: &str = r#"
dim = 2
field = "meyer_conic{beta=-0.5}"
weight = "unit"
half_width = 1.0
spacing = [0.0625, 0.03125, 0.015625, 0.0078125]
p = [3.0, 5.0]
critical_p = 4.0
singular_axes = [0, 1]
bump_radius = 0.25
cg_tol = 1e-7
threshold_growth_min = 0.1
threshold_ratio_max = 1.5
"#;

const PARTIAL_CONIC_UNBOUNDED: &str = r#"
dim = 3
field = "partial_conic{beta=-0.5,N=3}"
weight = "unit"
half_width = 1.0
spacing = [0.25, 0.125, 0.0625]
p = [3.0, 6.0]
critical_p = 4.0
singular_axes = [0, 1]
bump_radius = 0.25
cg_tol = 1e-7
threshold_growth_min = 0.1
threshold_ratio_max = 1.5
"#;

const SMOOTH_TILED: &str = r#"
dim = 2
field = "tiled{base=meyer_conic{beta=-0.5},radii=[2,100],moll=1}"
reference_field = "meyer_conic{beta=-0.5}"
rescale = 100.0
annulus = [0.7071067811865476, 2.0]
samples = 200
eigen_samples = 4000
difference_step = 0.001
threshold_match_max = 0.05
threshold_eig_lower = 0.2
threshold_eig_upper = 1.05
threshold_quotient_refinement_max = 1.1
"#;

const GD_STABILITY: &str = r#"
dim = 2
field = "mollify{field=compact{a0=identity,pert=scalar{c=1.5},R0=0.25},scale=0.1}"
weight = "unit"
half_width = 1.0
spacing = [0.0625, 0.03125, 0.015625, 0.0078125]
p = [4.0, 8.0]
singular_axes = [0, 1]
bump_radius = 0.25
cg_tol = 1e-7
threshold_ratio_max = 1.5
threshold_ellipticity_min = 0.5
threshold_ellipticity_max = 2.0
"#;

const STRIP_GD: &str = r#"
dim = 2
field = "strip{a0=identity,pert=scalar{c=2}}"
reference_field = "identity"
weight = "unit"
reference_weight = "unit"
r = [2, 4, 8, 16, 32, 64]
centers = [[0.0, 0.5], [0.0, 0.0], [0.0, 1.0], [5.0, 0.5]]
gd_spacing = 0.125
threshold_eps_target = 1.0
threshold_eps_tol = 0.15
"#;

const COMPACT_GD: &str = r#"
dim = 2
field = "compact{a0=identity,pert=scalar{c=2},R0=1}"
reference_field = "identity"
weight = "unit"
reference_weight = "unit"
r = [2, 4, 8, 16, 32, 64]
centers = [[0.0, 0.0], [0.5, 0.0], [2.0, 0.0]]
gd_spacing = 0.125
threshold_eps_target = 2.0
threshold_eps_tol = 0.2
"#;

const RESOLVENT_DECAY: &str = r#"
dim = 2
field = "compact{a0=identity,pert=scalar{c=2},R0=0.25}"
reference_field = "identity"
weight = "unit"
reference_weight = "unit"
half_width = 1.0
spacing = 0.03125
p = 4.0
t = [2, 4, 8, 16, 32, 64, 128, 256]
gd_epsilon = 2.0
p0 = inf
bump_radius = 0.25
threshold_exponent_min = 0.5
threshold_residual_max = 0.2
threshold_bare_margin = 0.05
"#;

const APPENDIX_LEMMAS: &str = r#"
dim = 2
field = ["identity", "meyer_conic{beta=-0.5}"]
weight = "unit"
half_width = [12.0, 8.0]
spacing = [0.5, 0.125]
p = [4.0, 3.0]
t = [2, 4, 8, 16]
s_values = [0.5, 1, 2]
t_values = [1, 10, 100]
integral_points = 16
expected_nu_fields = ["identity"]
bump_radius_fraction = 0.25
threshold_bound_tol = 1e-8
threshold_integral_tol = 0.01
threshold_nu_target = 0.5
threshold_nu_tol = 0.05
threshold_exponent_slack = 0.05
"#;

const HEAT_KERNEL_BOUNDS: &str = r#"
dim = 2
field = ["identity", "meyer_conic{beta=-0.5}"]
weight = "unit"
half_width = 6.0
spacing = 0.25
t = [0.25, 0.5, 1.0, 1.5, 2.25]
center = [0.0, 0.0]
radius_factor = 3.0
gly_p = 2.0
gaussian_fields = ["identity"]
threshold_c_min = 0.2
threshold_c_max = 0.26
threshold_lower_c_min = 0.2
threshold_lower_c_max = 0.3
threshold_rate_ratio_max = 4.0
threshold_mass_tol = 1e-6
"#;

const RH_PROBE: &str = r#"
dim = 2
field = "meyer_conic{beta=-0.5}"
weight = "unit"
boundary = "radial_power{beta=-0.5}"
beta = -0.5
half_width = 1.0
spacing = [0.03125, 0.015625, 0.0078125, 0.00390625]
center = [0.0, 0.0]
r = 0.5
p = [3.0, 8.0]
threshold_growth_tol = 0.1
threshold_successive_max = 1.3
"#;

const WEIGHTED_DEGENERATE: &str = r#"
dim = 2
weight = "power{alpha=0.3}"
parts = ["strip-gd", "compact-gd", "gd-stability", "resolvent-decay"]
"#;

static REGISTRY: &[ExperimentDef] = &[
    ExperimentDef {
        id: "conic-unbounded",
        summary: "Riesz p-norm growth under refinement for the planar conic operator",
        defaults: CONIC_UNBOUNDED,
        run: conic_unbounded,
    },
    ExperimentDef {
        id: "partial-conic-unbounded",
        summary: "Riesz p-norm growth for the conic block acting on two of three coordinates",
        defaults: PARTIAL_CONIC_UNBOUNDED,
        run: conic_unbounded,
    },
    ExperimentDef {
        id: "smooth-tiled",
        summary: "Tiled, mollified conic field: schedule, rescaled match and ellipticity",
        defaults: SMOOTH_TILED,
        run: smooth_tiled,
    },
    ExperimentDef {
        id: "gd-stability",
        summary: "Riesz p-norm saturation for a compactly perturbed identity",
        defaults: GD_STABILITY,
        run: gd_stability,
    },
    ExperimentDef {
        id: "strip-gd",
        summary: "(GD) exponent of a strip perturbation",
        defaults: STRIP_GD,
        run: gd_exponent,
    },
    ExperimentDef {
        id: "compact-gd",
        summary: "(GD) exponent of a compact perturbation",
        defaults: COMPACT_GD,
        run: gd_exponent,
    },
    ExperimentDef {
        id: "resolvent-decay",
        summary: "Decay of the gradient resolvent difference against the bare gradient resolvent",
        defaults: RESOLVENT_DECAY,
        run: resolvent_decay,
    },
    ExperimentDef {
        id: "appendix-lemmas",
        summary: "Resolvent bounds, the improper resolvent integral and decay transfer to half powers",
        defaults: APPENDIX_LEMMAS,
        run: appendix_lemmas,
    },
    ExperimentDef {
        id: "heat-kernel-bounds",
        summary: "Two-sided Gaussian fits of heat-kernel columns and mass conservation",
        defaults: HEAT_KERNEL_BOUNDS,
        run: heat_kernel_bounds,
    },
    ExperimentDef {
        id: "rh-probe",
        summary: "Reverse Hölder ratios of harmonic functions with exact boundary traces",
        defaults: RH_PROBE,
        run: rh_probe,
    },
    ExperimentDef {
        id: "weighted-degenerate",
        summary: "(GD), stability and resolvent decay re-run with a power weight",
        defaults: WEIGHTED_DEGENERATE,
        run: weighted_degenerate,
    },
];

/// Registered experiment ids, in a stable order.
pub fn registry() -> Vec<&'static str> {
    REGISTRY.iter().map(|d| d.id).collect()
}

/// `(id, one-line summary)` pairs.
pub fn descriptions() -> Vec<(&'static str, &'static str)> {
    REGISTRY.iter().map(|d| (d.id, d.summary)).collect()
}

pub(crate) fn lookup(id: &str) -> Option<&'static ExperimentDef> {
    REGISTRY.iter().find(|d| d.id == id)
}

pub(crate) fn default_table(id: &str) -> Option<&'static str> {
    lookup(id).map(|d| d.defaults)
}

fn dim(cfg: &ExperimentConfig) -> Result<usize> {
    let n = cfg.usize("dim")?;
    if n != 2 && n != 3 {
        return Err(Error::Config(format!("dim must be 2 or 3, got {n}")));
    }
    Ok(n)
}

/// `(L, h)` pairs; a single value of either list is broadcast.
fn meshes(cfg: &ExperimentConfig) -> Result<Vec<(f64, f64)>> {
    let ls = cfg.f64_list("half_width")?;
    let hs = cfg.f64_list("spacing")?;
    let pairs: Vec<(f64, f64)> = match (ls.len(), hs.len()) {
        (a, b) if a == b => ls.into_iter().zip(hs).collect(),
        (1, _) => hs.into_iter().map(|h| (ls[0], h)).collect(),
        (_, 1) => ls.into_iter().map(|l| (l, hs[0])).collect(),
        (a, b) => return Err(Error::Config(format!("half_width has {a} entries and spacing {b}"))),
    };
    Ok(pairs)
}

fn grid_of(n: usize, (l, h): (f64, f64)) -> Result<Grid> {
    Grid::new(n, l, h)
}

/// Picks entry `i`, broadcasting a single entry.
fn nth<T: Clone>(items: &[T], i: usize, key: &str) -> Result<T> {
    match items.len() {
        1 => Ok(items[0].clone()),
        len if i < len => Ok(items[i].clone()),
        len => Err(Error::Config(format!("`{key}` has {len} entries, need {}", i + 1))),
    }
}

fn field_key(cfg: &ExperimentConfig, key: &str, n: usize) -> Result<MatrixField> {
    build_field(&cfg.string(key)?, n)
}

fn weight_key(cfg: &ExperimentConfig, key: &str, n: usize) -> Result<WeightField> {
    build_weight(&cfg.string(key)?, n)
}

/// Resolves every spec and mesh without running anything.
pub(crate) fn validate(cfg: &ExperimentConfig) -> Result<()> {
    if lookup(&cfg.experiment).is_none() {
        return Err(Error::UnknownExperiment(cfg.experiment.clone()));
    }
    let params = cfg.params();
    if cfg.experiment == "weighted-degenerate" {
        for part in cfg.strings("parts")? {
            part_config(cfg, &part)?.validate()?;
        }
        dim(cfg)?;
        return weight_key(cfg, "weight", 2).map(|_| ());
    }
    let n = dim(cfg)?;
    for key in ["field", "reference_field"] {
        if params.contains_key(key) {
            for src in cfg.strings(key)? {
                build_field(&src, n)?;
            }
        }
    }
    for key in ["weight", "reference_weight"] {
        if params.contains_key(key) {
            weight_key(cfg, key, n)?;
        }
    }
    if params.contains_key("boundary") {
        let _ = build_boundary(&cfg.string("boundary")?, n)?;
    }
    if params.contains_key("half_width") {
        for m in meshes(cfg)? {
            grid_of(n, m)?;
        }
    }
    if params.contains_key("p") {
        if let Some(p) = cfg.f64_list("p")?.into_iter().find(|p| !(*p > 1.0 && p.is_finite())) {
            return Err(Error::Config(format!("exponent p = {p} outside (1, ∞)")));
        }
    }
    if params.contains_key("t") {
        if let Some(t) = cfg.f64_list("t")?.into_iter().find(|t| !(*t > 0.0)) {
            return Err(Error::Config(format!("time t = {t} must be positive")));
        }
    }
    if params.contains_key("singular_axes") {
        if let Some(d) = cfg.usize_list("singular_axes")?.into_iter().find(|&d| d >= n) {
            return Err(Error::Config(format!("singular axis {d} outside 0..{n}")));
        }
    }
    Ok(())
}

fn curve_config(cfg: &ExperimentConfig, n: usize) -> Result<CurveConfig> {
    let mut cc = CurveConfig::new(n);
    cc.solver = cfg.solver()?;
    cc.norm = cfg.norm()?;
    cc.bump_radius = cfg.f64("bump_radius")?;
    cc.singular_axes = cfg.usize_list("singular_axes")?;
    Ok(cc)
}

/// Norm curves per exponent; `critical` splits growth from saturation verdicts.
fn norm_curves(cfg: &ExperimentConfig, rec: &mut Recorder, critical: Option<f64>) -> Result<()> {
    let n = dim(cfg)?;
    let a = field_key(cfg, "field", n)?;
    let w = weight_key(cfg, "weight", n)?;
    let meshes = meshes(cfg)?;
    let cc = curve_config(cfg, n)?;
    for p in cfg.f64_list("p")? {
        rec.progress(&format!("norm curve p = {p} on {} meshes", meshes.len()));
        let Some(curve) = rec.attempt(&format!("norm curve p={p}"), || riesz_norm_curve(&a, &w, p, &meshes, &cc))
        else {
            continue;
        };
        for pt in &curve.points {
            rec.record(
                Record::new(a.id(), "riesz_norm", pt.norm.estimate)
                    .mesh(n, pt.half_width, pt.spacing)
                    .p(p)
                    .witness(pt.norm.verified)
                    .iters(pt.solver_iterations),
            );
        }
        let growth = curve.fit.growth();
        let ratio = curve.last_first_ratio();
        rec.record(Record::new(a.id(), "growth_exponent", growth).dim(n).p(p));
        rec.record(Record::new(a.id(), "last_first_ratio", ratio).dim(n).p(p));
        rec.fit(&format!("riesz_norm p={p}"), curve.fit.clone());
        match critical {
            Some(pc) if p > pc => rec.at_least(&format!("growth p={p}"), "growth_exponent", growth, "growth_min")?,
            _ => rec.at_most(&format!("last/first ratio p={p}"), "last_first_ratio", ratio, "ratio_max")?,
        }
    }
    Ok(())
}

fn conic_unbounded(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    norm_curves(cfg, rec, Some(cfg.f64("critical_p")?))
}

fn gd_stability(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let n = dim(cfg)?;
    let a = field_key(cfg, "field", n)?;
    let (lo, hi) = a.ellipticity();
    rec.record(Record::new(a.id(), "ellipticity_lower", lo).dim(n));
    rec.record(Record::new(a.id(), "ellipticity_upper", hi).dim(n));
    rec.at_least("ellipticity lower", "ellipticity_lower", lo, "ellipticity_min")?;
    rec.at_most("ellipticity upper", "ellipticity_upper", hi, "ellipticity_max")?;
    norm_curves(cfg, rec, None)
}

/// Sample points in an annulus from a 2D Halton sequence.
fn annulus_points(n: usize, count: usize, r_in: f64, r_out: f64, log_radial: bool) -> Vec<Vec<f64>> {
    halton_points(n, count, 1.0)
        .into_iter()
        .map(|u| {
            // halton_points maps into [-1, 1]^n
            let s = 0.5 * (u[0] + 1.0);
            let theta = std::f64::consts::PI * (u[1] + 1.0);
            let r = if log_radial {
                (r_in.ln() + s * (r_out.ln() - r_in.ln())).exp()
            } else {
                (r_in * r_in + s * (r_out * r_out - r_in * r_in)).sqrt()
            };
            let mut x = vec![r * theta.cos(), r * theta.sin()];
            if n == 3 {
                x.push(r * u[2]);
            }
            x
        })
        .collect()
}

fn smooth_tiled(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let n = dim(cfg)?;
    let Some(tiled) = rec.attempt("schedule validation", || field_key(cfg, "field", n)) else {
        rec.record(Record::new(&cfg.string("field")?, "schedule_valid", 0.0).dim(n));
        return Ok(());
    };
    rec.record(Record::new(tiled.id(), "schedule_valid", 1.0).dim(n));
    let reference = field_key(cfg, "reference_field", n)?;
    let s = cfg.f64("rescale")?;
    let scaled = rescale(&tiled, s)?;
    let annulus = cfg.f64_list("annulus")?;
    let (r_in, r_out) = (nth(&annulus, 0, "annulus")?, nth(&annulus, 1, "annulus")?);

    let mut worst: f64 = 0.0;
    for x in annulus_points(n, cfg.usize("samples")?, r_in, r_out, false) {
        let (a, b) = (scaled.eval(&x), reference.eval(&x));
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((a.get(i, j) - b.get(i, j)).abs());
            }
        }
    }
    rec.record(Record::new(scaled.id(), "max_entry_difference", worst).dim(n).r(r_out));
    rec.at_most("rescaled tiled field matches the conic", "max_entry_difference", worst, "match_max")?;

    // A jump makes the largest difference quotient double when the step is
    // halved; a smooth field keeps it stable.
    let step = cfg.f64("difference_step")?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut coarse, mut fine) = (0.0f64, 0.0f64);
    let pts = annulus_points(n, cfg.usize("eigen_samples")?, 1e-2, tiled.extent(), true);
    for x in &pts {
        let a = tiled.eval(x);
        let ev = a.eigenvalues();
        lo = lo.min(ev[0]);
        hi = hi.max(ev[n - 1]);
        for d in 0..n {
            let mut y = x.clone();
            y[d] += step;
            coarse = coarse.max(tiled.eval(&y).sub(&a).frobenius() / step);
            y[d] = x[d] + step / 2.0;
            fine = fine.max(tiled.eval(&y).sub(&a).frobenius() / (step / 2.0));
        }
    }
    let refinement = fine / coarse.max(f64::MIN_POSITIVE);
    rec.record(Record::new(tiled.id(), "min_eigenvalue", lo).dim(n));
    rec.record(Record::new(tiled.id(), "max_eigenvalue", hi).dim(n));
    rec.record(Record::new(tiled.id(), "max_difference_quotient", coarse).dim(n));
    rec.record(Record::new(tiled.id(), "max_difference_quotient_half_step", fine).dim(n));
    rec.record(Record::new(tiled.id(), "quotient_refinement_ratio", refinement).dim(n));
    rec.at_least("sampled ellipticity lower", "min_eigenvalue", lo, "eig_lower")?;
    rec.at_most("sampled ellipticity upper", "max_eigenvalue", hi, "eig_upper")?;
    rec.at_most("difference quotient stable under step halving", "quotient_refinement_ratio", refinement, "quotient_refinement_max")?;
    Ok(())
}

fn gd_exponent(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let n = dim(cfg)?;
    let a = field_key(cfg, "field", n)?;
    let a0 = field_key(cfg, "reference_field", n)?;
    let w = weight_key(cfg, "weight", n)?;
    let w0 = weight_key(cfg, "reference_weight", n)?;
    let radii = cfg.f64_list("r")?;
    let centers = cfg.points("centers")?;
    let gdc = GdConfig { spacing: cfg.f64("gd_spacing")? };

    let profile = if w.is_unit() && w0.is_unit() {
        rec.attempt("gd profile", || gd_profile(&a, &a0, &centers, &radii, &w0, &gdc))
    } else {
        rec.attempt("joint gd profile", || gd_decay_joint(&a, &a0, &w, &w0, &centers, &radii, &gdc)).map(|j| {
            rec.record(Record::new(a.id(), "gd_matrix_exponent", j.matrix.fit.exponent).dim(n));
            rec.record(Record::new(a.id(), "gd_weight_exponent", j.weight.fit.exponent).dim(n));
            rec.fit("gd matrix part", j.matrix.fit.clone());
            rec.fit("gd weight part", j.weight.fit.clone());
            j.joint
        })
    };
    if let Some(profile) = profile {
        for (r, v) in profile.radii.iter().zip(&profile.averages) {
            rec.record(Record::new(a.id(), "gd_average", *v).dim(n).r(*r));
        }
        let eps = profile.fit.exponent;
        rec.record(Record::new(a.id(), "gd_exponent", eps).dim(n));
        rec.fit("gd", profile.fit);
        let relation = Relation::Within { target: cfg.threshold("eps_target")?, tol: cfg.threshold("eps_tol")? };
        rec.verdict("gd exponent", "gd_exponent", eps, relation);
    }
    if let Some(same) = rec.attempt("identical-field gd profile", || gd_profile(&a0, &a0, &centers, &radii, &w0, &gdc)) {
        let flag = if same.fit.infinite_decay { 1.0 } else { 0.0 };
        rec.record(Record::new(a0.id(), "identical_infinite_decay", flag).dim(n));
        rec.verdict("identical fields decay infinitely", "identical_infinite_decay", flag, Relation::AtLeast { bound: 1.0 });
    }
    Ok(())
}

fn resolvent_decay(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let n = dim(cfg)?;
    let a = field_key(cfg, "field", n)?;
    let a0 = field_key(cfg, "reference_field", n)?;
    let w = weight_key(cfg, "weight", n)?;
    let w0 = weight_key(cfg, "reference_weight", n)?;
    let mesh = nth(&meshes(cfg)?, 0, "spacing")?;
    let grid = grid_of(n, mesh)?;
    let op = DiscreteOperator::assemble(grid, &a, &w)?;
    let op0 = DiscreteOperator::assemble(grid, &a0, &w0)?;
    let times = cfg.f64_list("t")?;
    let solver = cfg.solver()?;
    let norm = cfg.norm()?;
    let axes: Vec<usize> = (0..n).collect();
    let starts = singular_starts(&grid, cfg.f64("bump_radius")?, &axes);
    let (eps, p0) = (cfg.f64("gd_epsilon")?, cfg.f64("p0")?);
    for p in cfg.f64_list("p")? {
        rec.progress(&format!("resolvent difference p = {p}"));
        let diff = rec.attempt(&format!("perturbation decay p={p}"), || {
            perturbation_decay(&op, &op0, p, &times, &solver, &norm, &starts, eps, p0)
        });
        let iters = op.take_iterations() + op0.take_iterations();
        let Some(diff) = diff else { continue };
        for (t, e) in &diff.samples {
            rec.record(
                Record::new(a.id(), "gradient_resolvent_difference", e.estimate)
                    .mesh(n, mesh.0, mesh.1)
                    .p(p)
                    .t(*t)
                    .witness(e.verified),
            );
        }
        let exponent = diff.fit.exponent;
        rec.record(Record::new(a.id(), "difference_exponent", exponent).mesh(n, mesh.0, mesh.1).p(p).iters(iters));
        rec.record(Record::new(a.id(), "difference_residual", diff.fit.residual).mesh(n, mesh.0, mesh.1).p(p));
        rec.record(Record::new(a.id(), "predicted_alpha", diff.predicted_alpha).mesh(n, mesh.0, mesh.1).p(p));
        rec.fit(&format!("difference p={p}"), diff.fit.clone());

        rec.progress(&format!("bare gradient resolvent p = {p}"));
        let bare = rec.attempt(&format!("bare gradient resolvent p={p}"), || {
            let curve = gradient_resolvent_curve(&op0, p, &times, false, &solver, &norm, &starts)?;
            let samples: Vec<(f64, f64)> = curve.iter().map(|(t, e)| (*t, e.estimate)).collect();
            Ok((curve, decay_exponent(&samples)?))
        });
        let iters = op0.take_iterations();
        rec.at_least(&format!("difference exponent p={p}"), "difference_exponent", exponent, "exponent_min")?;
        rec.at_most(&format!("difference fit residual p={p}"), "difference_residual", diff.fit.residual, "residual_max")?;
        let Some((curve, bare_fit)) = bare else { continue };
        for (t, e) in &curve {
            rec.record(
                Record::new(a0.id(), "bare_gradient_resolvent", e.estimate)
                    .mesh(n, mesh.0, mesh.1)
                    .p(p)
                    .t(*t)
                    .witness(e.verified),
            );
        }
        rec.record(Record::new(a0.id(), "bare_exponent", bare_fit.exponent).mesh(n, mesh.0, mesh.1).p(p).iters(iters));
        rec.fit(&format!("bare p={p}"), bare_fit.clone());
        let bound = bare_fit.exponent - cfg.threshold("bare_margin")?;
        rec.verdict(
            &format!("difference exponent exceeds bare exponent p={p}"),
            "difference_exponent",
            exponent,
            Relation::AtLeast { bound },
        );
    }
    Ok(())
}

fn appendix_lemmas(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let n = dim(cfg)?;
    let w = weight_key(cfg, "weight", n)?;
    let meshes = meshes(cfg)?;
    let ps = cfg.f64_list("p")?;
    let expected = cfg.strings("expected_nu_fields")?;
    for (i, src) in cfg.strings("field")?.iter().enumerate() {
        let a = build_field(src, n)?;
        let mesh = nth(&meshes, i, "half_width/spacing")?;
        let p = nth(&ps, i, "p")?;
        let grid = grid_of(n, mesh)?;
        let op = DiscreteOperator::assemble(grid, &a, &w)?;
        let mut ac = AppendixConfig::new(&grid);
        ac.solver = cfg.solver()?;
        ac.norm = cfg.norm()?;
        ac.times = cfg.f64_list("t")?;
        ac.s_values = cfg.f64_list("s_values")?;
        ac.t_values = cfg.f64_list("t_values")?;
        ac.integral_points = cfg.usize("integral_points")?;
        ac.integral_tol = cfg.threshold("integral_tol")?;
        ac.bound_tol = cfg.threshold("bound_tol")?;
        ac.exponent_slack = cfg.threshold("exponent_slack")?;
        if expected.iter().any(|e| e == a.id()) {
            ac.expected_nu = Some((cfg.threshold("nu_target")?, cfg.threshold("nu_tol")?));
        }
        let axes: Vec<usize> = (0..n).collect();
        ac.starts = singular_starts(&grid, cfg.f64("bump_radius_fraction")? * mesh.0, &axes);
        rec.progress(&format!("suite on {} (L = {}, h = {}, p = {p})", a.id(), mesh.0, mesh.1));
        let Some(report) = rec.attempt(&format!("appendix suite {}", a.id()), || appendix_suite(&op, p, &ac)) else {
            continue;
        };
        let iters = op.take_iterations();
        for c in &report.checks {
            rec.record(Record::new(a.id(), &c.name, c.value).mesh(n, mesh.0, mesh.1).p(p));
            if c.asserted {
                rec.verdict(&format!("{} {}", a.id(), c.name), &c.name, c.value, c.relation);
            }
        }
        rec.record(Record::new(a.id(), "nu_resolvent", report.nu_resolvent.exponent).mesh(n, mesh.0, mesh.1).p(p));
        rec.record(Record::new(a.id(), "nu_sqrt", report.nu_sqrt.exponent).mesh(n, mesh.0, mesh.1).p(p).iters(iters));
        rec.record(Record::new(a.id(), "resolvent_integral", report.integral.1).mesh(n, mesh.0, mesh.1).p(p));
        rec.fit(&format!("{} resolvent gradient", a.id()), report.nu_resolvent);
        rec.fit(&format!("{} sqrt resolvent gradient", a.id()), report.nu_sqrt);
    }
    Ok(())
}

fn heat_kernel_bounds(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let n = dim(cfg)?;
    let w = weight_key(cfg, "weight", n)?;
    let meshes = meshes(cfg)?;
    let times = cfg.f64_list("t")?;
    let y = cfg.f64_list("center")?;
    let gaussian = cfg.strings("gaussian_fields")?;
    let pc = ProbeConfig {
        solver: cfg.solver()?,
        radius_factor: cfg.f64("radius_factor")?,
        gly: Some((cfg.f64("gly_p")?, None)),
    };
    for (i, src) in cfg.strings("field")?.iter().enumerate() {
        let a = build_field(src, n)?;
        let mesh = nth(&meshes, i, "half_width/spacing")?;
        let op = DiscreteOperator::assemble(grid_of(n, mesh)?, &a, &w)?;
        rec.progress(&format!("heat kernel of {}", a.id()));
        let Some(fit) = rec.attempt(&format!("heat kernel probe {}", a.id()), || heat_kernel_probe(&op, &y, &times, &pc))
        else {
            continue;
        };
        let row = |q: &str, v: f64| Record::new(a.id(), q, v).mesh(n, mesh.0, mesh.1);
        rec.record(row("upper_rate", fit.upper.rate));
        rec.record(row("upper_amplitude", fit.upper.amplitude));
        rec.record(row("lower_rate", fit.lower.rate));
        rec.record(row("lower_amplitude", fit.lower.amplitude));
        rec.record(row("min_kernel_value", fit.min_value));
        for g in &fit.gly {
            rec.record(row("gly_normalized", g.normalized).t(g.t).p(cfg.f64("gly_p")?));
        }
        let ratio = (fit.lower.rate / fit.upper.rate).max(fit.upper.rate / fit.lower.rate);
        rec.record(row("rate_ratio", ratio));
        rec.at_most(&format!("{} upper/lower rates comparable", a.id()), "rate_ratio", ratio, "rate_ratio_max")?;
        if gaussian.iter().any(|g| g == a.id()) {
            rec.at_least(&format!("{} upper rate min", a.id()), "upper_rate", fit.upper.rate, "c_min")?;
            rec.at_most(&format!("{} upper rate max", a.id()), "upper_rate", fit.upper.rate, "c_max")?;
            rec.at_least(&format!("{} lower rate min", a.id()), "lower_rate", fit.lower.rate, "lower_c_min")?;
            rec.at_most(&format!("{} lower rate max", a.id()), "lower_rate", fit.lower.rate, "lower_c_max")?;
        }
        if op.is_m_matrix() {
            if fit.mass.is_empty() {
                rec.attempt::<()>(&format!("mass check {}", a.id()), || {
                    Err(Error::InvalidArgument("no boundary-uninfluenced time in the list".into()))
                });
            }
            let tol = cfg.threshold("mass_tol")?;
            for (t, m) in &fit.mass {
                rec.record(row("kernel_mass", *m).t(*t));
                rec.verdict(
                    &format!("{} mass t={t}", a.id()),
                    "kernel_mass",
                    *m,
                    Relation::Within { target: 1.0, tol },
                );
            }
        }
    }
    Ok(())
}

fn rh_probe(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let n = dim(cfg)?;
    let a = field_key(cfg, "field", n)?;
    let w = weight_key(cfg, "weight", n)?;
    let boundary = build_boundary(&cfg.string("boundary")?, n)?;
    let beta = cfg.f64("beta")?;
    let center = cfg.f64_list("center")?;
    let r = nth(&cfg.f64_list("r")?, 0, "r")?;
    let ps = cfg.f64_list("p")?;
    let solver = cfg.solver()?;
    let meshes = meshes(cfg)?;
    let mut ratios: Vec<Vec<(f64, f64)>> = vec![Vec::new(); ps.len()];
    for &mesh in &meshes {
        let op = DiscreteOperator::assemble(grid_of(n, mesh)?, &a, &w)?;
        for (k, &p) in ps.iter().enumerate() {
            let label = format!("rh ratio p={p} h={}", mesh.1);
            if let Some(s) = rec.attempt(&label, || rh_ratio(&op, &center, r, &*boundary, p, &solver)) {
                rec.record(
                    Record::new(a.id(), "rh_ratio", s.ratio).mesh(n, mesh.0, mesh.1).p(p).r(r).iters(s.iterations),
                );
                ratios[k].push((1.0 / mesh.1, s.ratio));
            }
        }
    }
    let critical = 2.0 / beta.abs();
    for (k, &p) in ps.iter().enumerate() {
        if ratios[k].len() < 2 {
            continue;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = ratios[k].iter().cloned().unzip();
        if p > critical {
            let Some(fit) = rec.attempt(&format!("rh growth fit p={p}"), || fit_power_law(&xs, &ys)) else {
                continue;
            };
            let growth = fit.growth();
            rec.record(Record::new(a.id(), "rh_growth_exponent", growth).dim(n).p(p).r(r));
            rec.fit(&format!("rh p={p}"), fit);
            let relation = Relation::Within { target: beta.abs() - 2.0 / p, tol: cfg.threshold("growth_tol")? };
            rec.verdict(&format!("rh growth p={p}"), "rh_growth_exponent", growth, relation);
        } else {
            let worst = ys.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
            rec.record(Record::new(a.id(), "rh_max_successive_ratio", worst).dim(n).p(p).r(r));
            rec.at_most(&format!("rh bounded p={p}"), "rh_max_successive_ratio", worst, "successive_max")?;
        }
    }
    Ok(())
}

/// Defaults of `part` with the weights and shared solver keys of `parent`.
fn part_config(parent: &ExperimentConfig, part: &str) -> Result<ExperimentConfig> {
    if part == "weighted-degenerate" {
        return Err(Error::Config("weighted-degenerate cannot contain itself".into()));
    }
    let mut cfg = ExperimentConfig::defaults(part)?;
    let weight = parent.string("weight")?;
    for key in ["weight", "reference_weight"] {
        if cfg.params().contains_key(key) {
            cfg.set(key, weight.clone())?;
        }
    }
    for key in ["seed", "random_starts", "warmup_iters", "max_iters", "rel_tol"] {
        cfg.set(key, parent.params()[key].clone())?;
    }
    cfg.threads = parent.threads;
    Ok(cfg)
}

fn weighted_degenerate(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    for part in cfg.strings("parts")? {
        let sub = part_config(cfg, &part)?;
        let def = lookup(&part).ok_or_else(|| Error::UnknownExperiment(part.clone()))?;
        let mut inner = Recorder::new(&sub);
        inner.scope = format!("{part}: ");
        (def.run)(&sub, &mut inner)?;
        for r in &mut inner.records {
            r.quantity = format!("{part}/{}", r.quantity);
        }
        for v in &mut inner.verdicts {
            v.quantity = format!("{part}/{}", v.quantity);
        }
        rec.records.extend(inner.records);
        rec.fits.extend(inner.fits);
        rec.verdicts.extend(inner.verdicts);
        rec.failures.extend(inner.failures);
        rec.solver_iterations += inner.solver_iterations;
    }
    Ok(())
}
