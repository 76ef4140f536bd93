//! Scenario runner and the invariant matrix behind the `experiment` and
//! `verify` subcommands.
//!
//! A scenario fixes a domain, an operator pair `(A₀, A)` and a sweep. Each
//! sweep point is evaluated independently; results are ordered by
//! `(resolution, parameter)` so output bytes depend only on the config.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::cdc_sweep;
use crate::carleson::{duality_check, CubeMeasure, CubeTree};
use crate::coefficients::{CoefficientField, FieldSpec};
use crate::domain::{dist, GridDomain, Shape};
use crate::dyadic::power_fit;
use crate::error::{Error, Result};
use crate::perturbation::{
    conical_functional, disagreement, global_functional, pole_pairs, rh_constant, sigma_functional, BallFamily,
    PoleMeasures,
};
use crate::regions::Setting;
use crate::sfnt::{cme_functional, random_boundary_data, s_vs_n};
use crate::solver::Operator;

/// Printed in every report.
pub const DIMENSION_CAVEAT: &str =
    "computed on a voxel model; planar runs sit outside the ambient-dimension-at-least-three setting of the theory";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSpec,
    pub operator: OperatorPair,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub functionals: Functionals,
    #[serde(default)]
    pub checks: Checks,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: String,
    pub resolutions: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorPair {
    pub base: FieldSpec,
    pub perturbed: FieldSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// A single evaluation of the pair as given.
    None,
    /// Rescales the amplitude of a bump perturbation.
    Epsilon,
    /// `A_t = (1-t)A₀ + tA`.
    Blend,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub kind: SweepKind,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep { kind: SweepKind::None, values: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Functionals {
    pub rh_p: Vec<f64>,
    /// Cone aperture of `𝒜_α`.
    pub alpha: f64,
    pub cme: bool,
    /// Number of random boundary data for `S ≲ N`; zero disables it.
    pub sn_samples: usize,
    pub q: f64,
    /// Smallest ball radius in units of the grid spacing.
    pub min_radius_cells: f64,
}

impl Default for Functionals {
    fn default() -> Self {
        Functionals { rh_p: vec![2.0], alpha: 1.0, cme: true, sn_samples: 5, q: 2.0, min_radius_cells: 4.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    /// Largest allowed `[RH_p]` jump between adjacent blend parameters.
    pub jump_threshold: f64,
    /// Required `R²` of the `⫴ϱ⫴ ∝ ε²` fit.
    pub min_r2: f64,
    /// Allowed distance of the fitted exponent from 2.
    pub exponent_tolerance: f64,
    pub identity_tolerance: f64,
}

impl Default for Checks {
    fn default() -> Self {
        Checks { jump_threshold: 0.25, min_r2: 0.99, exponent_tolerance: 0.1, identity_tolerance: 1e-6 }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        Shape::parse(&self.domain.shape)?;
        if self.domain.resolutions.is_empty() {
            return Err(Error::InvalidParameter("no resolution given".into()));
        }
        if let Some(&n) = self.domain.resolutions.iter().find(|&&n| !(9..=513).contains(&n)) {
            return Err(Error::InvalidParameter(format!("resolution {n} outside the supported range 9..=513")));
        }
        match self.sweep.kind {
            SweepKind::None => {}
            SweepKind::Epsilon => {
                if !matches!(self.operator.perturbed, FieldSpec::Bump { .. }) {
                    return Err(Error::InvalidParameter("an epsilon sweep needs a bump perturbation".into()));
                }
                if self.sweep.values.len() < 2 {
                    return Err(Error::InvalidParameter("an epsilon sweep needs at least two values".into()));
                }
            }
            SweepKind::Blend => {
                if self.sweep.values.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(Error::InvalidParameter("blend parameters must lie in [0, 1]".into()));
                }
            }
        }
        if self.functionals.rh_p.iter().any(|&p| !(p > 1.0)) {
            return Err(Error::InvalidParameter("reverse Hölder exponents must exceed 1".into()));
        }
        Ok(())
    }

    fn parameters(&self) -> Vec<f64> {
        match self.sweep.kind {
            SweepKind::None => vec![1.0],
            _ => self.sweep.values.clone(),
        }
    }

    fn field_at(&self, domain: &GridDomain, a0: &CoefficientField, t: f64) -> Result<CoefficientField> {
        match (self.sweep.kind, &self.operator.perturbed) {
            (SweepKind::Epsilon, FieldSpec::Bump { base, direction, center, radius, .. }) => {
                let spec = FieldSpec::Bump {
                    base: base.clone(),
                    eps: t,
                    direction: direction.clone(),
                    center: center.clone(),
                    radius: *radius,
                };
                CoefficientField::from_spec(domain, &spec)
            }
            (SweepKind::Blend, spec) => CoefficientField::blend(a0, &CoefficientField::from_spec(domain, spec)?, t),
            (_, spec) => CoefficientField::from_spec(domain, spec),
        }
    }
}

/// One line of the scenario table.
#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub resolution: usize,
    pub parameter: f64,
    pub rho_global: f64,
    pub rho_sigma: f64,
    pub conical_sup: f64,
    /// `(p, [RH_p(ω₀)])` pairs.
    pub rh: Vec<(f64, f64)>,
    /// CME functional over `‖u‖²_∞`.
    pub cme: Option<f64>,
    pub c_q: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Assertion {
    pub name: String,
    pub anchor: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub caveat: String,
    pub scenario: Scenario,
    pub rows: Vec<Row>,
    pub assertions: Vec<Assertion>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn first_failure(&self) -> Option<&Assertion> {
        self.assertions.iter().find(|a| !a.passed)
    }

    /// Table header and records, one per row.
    pub fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header: Vec<String> = ["resolution", "parameter", "rho_global", "rho_sigma", "conical_sup"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for p in &self.scenario.functionals.rh_p {
            header.push(format!("rh_{p}"));
        }
        header.push("cme".into());
        header.push(format!("c_q{}", self.scenario.functionals.q));
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.10e}"));
        let records = self
            .rows
            .iter()
            .map(|r| {
                let mut rec = vec![
                    r.resolution.to_string(),
                    format!("{}", r.parameter),
                    format!("{:.10e}", r.rho_global),
                    format!("{:.10e}", r.rho_sigma),
                    format!("{:.10e}", r.conical_sup),
                ];
                rec.extend(r.rh.iter().map(|(_, v)| format!("{v:.10}")));
                rec.push(opt(r.cme));
                rec.push(opt(r.c_q));
                rec
            })
            .collect();
        (header, records)
    }

    /// A matplotlib script plotting every column of `csv_name` against the parameter.
    pub fn plot_script(&self, csv_name: &str) -> String {
        let (header, _) = self.table();
        let columns: Vec<String> = header[2..].iter().map(|h| format!("{h:?}")).collect();
        format!(
            "import csv\nimport matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n\
             rows = list(csv.DictReader(open({csv_name:?})))\ncolumns = [{}]\n\
             fig, axes = plt.subplots(len(columns), 1, figsize=(6, 2.5 * len(columns)), squeeze=False)\n\
             for ax, col in zip(axes[:, 0], columns):\n\
             \x20   for res in sorted({{r[\"resolution\"] for r in rows}}, key=int):\n\
             \x20       pts = [(float(r[\"parameter\"]), float(r[col])) for r in rows if r[\"resolution\"] == res and r[col]]\n\
             \x20       if pts:\n\
             \x20           ax.plot(*zip(*pts), marker=\"o\", label=f\"n={{res}}\")\n\
             \x20   ax.set_ylabel(col)\n\
             \x20   ax.legend()\n\
             axes[-1, 0].set_xlabel(\"parameter\")\nfig.tight_layout()\nfig.savefig({:?})\n",
            columns.join(", "),
            format!("{}.png", self.name)
        )
    }
}

fn evaluate(sc: &Scenario, setting: &Setting, family: &BallFamily, t: f64) -> Result<Row> {
    let domain = &setting.domain;
    let a0 = CoefficientField::from_spec(domain, &sc.operator.base)?;
    let a = sc.field_at(domain, &a0, t)?;
    let op0 = Operator::new(domain.clone(), a0.clone())?;
    let op = Operator::new(domain.clone(), a.clone())?;
    let rho = disagreement(domain, &a, &a0);
    let rho_global = global_functional(&op0, &rho, family)?.value;
    let rho_sigma = sigma_functional(domain, &rho, family).value;
    let conical_sup = conical_functional(domain, &rho, sc.functionals.alpha)?.into_iter().fold(0.0, f64::max);
    let balls: Vec<usize> = (0..family.len()).collect();
    let poles: Vec<PoleMeasures> = pole_pairs(&op, &op0, family, &balls)?
        .into_iter()
        .map(|(ball, nu, mu)| PoleMeasures { ball, nu, mu })
        .collect();
    let rh = sc
        .functionals
        .rh_p
        .iter()
        .map(|&p| Ok((p, rh_constant(family, p, &poles)?.constant)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let cme = if sc.functionals.cme {
        let u = op.solve_dirichlet(&random_boundary_data(domain, &mut rng))?;
        let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Some(if sup > 0.0 { cme_functional(&op, &u, family)?.value / (sup * sup) } else { 0.0 })
    } else {
        None
    };
    let c_q = if sc.functionals.sn_samples > 0 {
        let data: Vec<Vec<f64>> =
            (0..sc.functionals.sn_samples).map(|_| random_boundary_data(domain, &mut rng)).collect();
        Some(s_vs_n(setting, &op, &data, setting.grid.roots().start, sc.functionals.q)?.c_q)
    } else {
        None
    };
    // `+ 0.0` turns a -0.0 from empty sums or max folds into 0.
    Ok(Row {
        resolution: domain.n,
        parameter: t,
        rho_global: rho_global + 0.0,
        rho_sigma: rho_sigma + 0.0,
        conical_sup: conical_sup + 0.0,
        rh,
        cme,
        c_q,
    })
}

/// Evaluates every `(resolution, parameter)` point and the embedded assertions.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioReport> {
    sc.validate()?;
    let shape = Shape::parse(&sc.domain.shape)?;
    let mut rows = Vec::new();
    for &n in &sc.domain.resolutions {
        let setting = Setting::build(&shape, n)?;
        let h = setting.domain.h;
        let family = BallFamily::dyadic(
            &setting.domain,
            &setting.grid,
            sc.functionals.min_radius_cells * h,
            setting.domain.diam(),
        )?;
        let part: Vec<Row> =
            sc.parameters().par_iter().map(|&t| evaluate(sc, &setting, &family, t)).collect::<Result<_>>()?;
        rows.extend(part);
    }
    rows.sort_by(|a, b| a.resolution.cmp(&b.resolution).then(a.parameter.total_cmp(&b.parameter)));
    let assertions = assertions(sc, &rows);
    Ok(ScenarioReport {
        name: sc.name.clone(),
        caveat: DIMENSION_CAVEAT.into(),
        scenario: sc.clone(),
        rows,
        assertions,
    })
}

fn assertions(sc: &Scenario, rows: &[Row]) -> Vec<Assertion> {
    let mut out = Vec::new();
    let chk = &sc.checks;
    let mut push = |name: &str, anchor: &str, passed: bool, detail: String| {
        out.push(Assertion { name: name.into(), anchor: anchor.into(), passed, detail })
    };
    for r in rows {
        for &(p, v) in &r.rh {
            push(
                &format!("rh_{p}_at_least_one[n={},t={}]", r.resolution, r.parameter),
                "reverse Hölder constants are at least one",
                v >= 1.0 - 1e-12,
                format!("{v}"),
            );
        }
    }
    if sc.operator.base == sc.operator.perturbed || sc.parameters().iter().all(|&t| t == 0.0) {
        for r in rows {
            let zero = r.rho_global == 0.0 && r.rho_sigma == 0.0 && r.conical_sup == 0.0;
            push(
                &format!("identity_functionals_vanish[n={}]", r.resolution),
                "equal coefficients have zero disagreement",
                zero,
                format!("{} {} {}", r.rho_global, r.rho_sigma, r.conical_sup),
            );
            for &(p, v) in &r.rh {
                push(
                    &format!("identity_rh_{p}_is_one[n={}]", r.resolution),
                    "equal coefficients have constant density",
                    (v - 1.0).abs() <= chk.identity_tolerance,
                    format!("{v}"),
                );
            }
        }
        return out;
    }
    for &n in &sc.domain.resolutions {
        let mut series: Vec<&Row> = rows.iter().filter(|r| r.resolution == n).collect();
        series.sort_by(|a, b| a.parameter.total_cmp(&b.parameter));
        match sc.sweep.kind {
            SweepKind::Epsilon => {
                let xs: Vec<f64> = series.iter().map(|r| r.parameter).collect();
                let ys: Vec<f64> = series.iter().map(|r| r.rho_global).collect();
                let (_, slope, r2) = power_fit(&xs, &ys);
                let detail = if ys.iter().all(|&y| y == 0.0) {
                    "no admissible ball pair at this resolution; raise it or lower min_radius_cells".to_string()
                } else {
                    format!("exponent {slope:.4}, r2 {r2:.6}")
                };
                push(
                    &format!("rho_scales_quadratically[n={n}]"),
                    "small perturbation functional controls the reverse Hölder constant",
                    (slope - 2.0).abs() <= chk.exponent_tolerance && r2 >= chk.min_r2,
                    detail,
                );
                for (k, p) in sc.functionals.rh_p.iter().enumerate() {
                    let vals: Vec<f64> = series.iter().map(|r| r.rh[k].1).collect();
                    let monotone = vals.windows(2).all(|w| w[1] >= w[0] - 1e-12);
                    push(
                        &format!("rh_{p}_monotone_in_epsilon[n={n}]"),
                        "small perturbation functional controls the reverse Hölder constant",
                        monotone,
                        format!("{vals:?}"),
                    );
                }
            }
            SweepKind::Blend => {
                for (k, p) in sc.functionals.rh_p.iter().enumerate() {
                    let vals: Vec<f64> = series.iter().map(|r| r.rh[k].1).collect();
                    let jump = vals.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
                    push(
                        &format!("rh_{p}_continuous_in_blend[n={n}]"),
                        "convex blends of coefficients",
                        jump <= chk.jump_threshold,
                        format!("largest jump {jump:.4}"),
                    );
                }
            }
            SweepKind::None => {}
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyCell {
    pub invariant: String,
    pub domain: String,
    pub status: Status,
    pub detail: String,
}

/// Domains and default resolution of a verification profile.
pub fn profile_domains(profile: &str) -> Result<(Vec<Shape>, usize)> {
    Ok(match profile {
        "square" => (vec![Shape::Square], 65),
        "disk" => (vec![Shape::Disk], 65),
        "lipschitz" => (vec![Shape::LipschitzGraph { slope: 1.0 }], 65),
        "koch" => (vec![Shape::KochPrefractal { depth: 2 }], 129),
        "3d" => (vec![Shape::Cube], 33),
        other => return Err(Error::InvalidParameter(format!("unknown profile {other}"))),
    })
}

fn cell(invariant: &str, domain: &str, r: Result<(bool, String)>) -> VerifyCell {
    optional_cell(invariant, domain, r.map(Some))
}

fn optional_cell(invariant: &str, domain: &str, r: Result<Option<(bool, String)>>) -> VerifyCell {
    let (status, detail) = match r {
        Ok(Some((true, d))) => (Status::Pass, d),
        Ok(Some((false, d))) => (Status::Fail, d),
        Ok(None) => (Status::NotApplicable, String::new()),
        Err(e) => (Status::Fail, e.to_string()),
    };
    VerifyCell { invariant: invariant.into(), domain: domain.into(), status, detail }
}

/// Runs each module's invariants on every domain of the profile. Failures are
/// recorded in the matrix, never returned as errors.
pub fn verify_all(profile: &str, resolution: Option<usize>, seed: u64) -> Result<Vec<VerifyCell>> {
    let (shapes, default_n) = profile_domains(profile)?;
    let n = resolution.unwrap_or(default_n);
    let mut out = Vec::new();
    for shape in shapes {
        let name = format!("{}@{n}", shape.name());
        let setting = match Setting::build(&shape, n) {
            Ok(s) => s,
            Err(e) => {
                out.push(cell("setting_builds", &name, Err(e)));
                continue;
            }
        };
        let d = setting.domain.clone();
        out.push(cell(
            "dyadic_grid_properties",
            &name,
            setting.grid.verify().map(|r| (true, format!("{} cubes, sandwich {:.3}", r.cubes, r.sandwich))),
        ));
        out.push(cell(
            "whitney_bounds_and_cover",
            &name,
            setting
                .whitney
                .verify(&d)
                .map(|r| (d.dim != 2 || r.max_star_overlap <= 12, format!("star overlap {}", r.max_star_overlap))),
        ));
        let sw = setting.sandwich();
        out.push(cell(
            "box_sandwich_nested",
            &name,
            Ok((sw.nested && sw.kappa1 > 0.0, format!("kappa0 {:.2}, kappa1 {:.4}", sw.kappa0_measured, sw.kappa1))),
        ));
        out.push(cell(
            "capacity_density",
            &name,
            cdc_sweep(&d, 20, 2.0 * d.h, 0.25, seed)
                .map(|s| (s.min_ratio >= 0.1, format!("min ratio {:.4}", s.min_ratio))),
        ));
        let op = Operator::new(d.clone(), CoefficientField::identity(&d));
        let deep = (0..d.n_cells()).max_by(|&a, &b| d.delta(a).total_cmp(&d.delta(b)).then(b.cmp(&a))).unwrap_or(0);
        out.push(cell(
            "elliptic_measure_probability",
            &name,
            op.as_ref()
                .map_err(clone_err)
                .and_then(|op| op.elliptic_measure(deep))
                .map(|m| ((m.total() - 1.0).abs() < 1e-8, format!("total {:.12}", m.total()))),
        ));
        out.push(cell(
            "maximum_principle",
            &name,
            op.as_ref().map_err(clone_err).and_then(|op| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                op.solve_dirichlet(&random_boundary_data(&d, &mut rng)).map(|_| (true, "random data".into()))
            }),
        ));
        out.push(optional_cell(
            "green_size_bound",
            &name,
            op.as_ref().map_err(clone_err).and_then(|op| green_size_bound(op, deep)),
        ));
        out.push(cell("tent_duality", &name, tent_duality_on_grid(&setting, seed)));
    }
    Ok(out)
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidParameter(e.to_string())
}

/// `G(X,Y) ≈ |X-Y|^{2-n}` for `2h ≤ |X-Y| ≤ δ(X)/2`: the spread of
/// `G·|X-Y|^{n-2}` must stay below 10. Planar Green functions are logarithmic,
/// so the row does not apply there.
fn green_size_bound(op: &Operator, x: usize) -> Result<Option<(bool, String)>> {
    let d = &op.domain;
    if d.dim == 2 {
        return Ok(None);
    }
    let g = op.green_transpose(x)?;
    let px = d.cell_point(x);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for y in 0..d.n_cells() {
        let r = dist(&px, &d.cell_point(y));
        if r >= 2.0 * d.h && r <= 0.5 * d.delta(x) {
            let v = g[y] * r.powi(d.dim as i32 - 2);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi == 0.0 {
        return Err(Error::Resolution("no cell in the Green annulus".into()));
    }
    Ok(Some((hi / lo <= 10.0, format!("G r^(n-2) spread {:.3}", hi / lo))))
}

fn tent_duality_on_grid(setting: &Setting, seed: u64) -> Result<(bool, String)> {
    let tree = CubeTree::from_grid(&setting.grid, setting.grid.roots().start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mu = CubeMeasure::random(&tree, 0.1, 1.0, &mut rng)?;
        let alpha: Vec<f64> = (0..tree.len()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let beta: Vec<f64> = (0..tree.len()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let (lhs, rhs) = duality_check(&tree, &alpha, &beta, &mu);
        worst = worst.max(lhs / rhs);
    }
    Ok((worst <= 1.0 + 1e-12, format!("worst lhs/rhs {worst:.4}")))
}
