//! Dispatch from a [`RunConfig`] to the numerical modules, producing a
//! [`Report`].

use std::sync::Arc;
use std::time::Instant;

use crate::basis::MonomialBasis;
use crate::bergman::{kernel_field, KernelSolver};
use crate::config::{to_point, DualSectionSpec, Experiment, PointSpec, RunConfig};
use crate::demailly::{classify_weight, default_anchors, DegreePolicy, Regularizer, Verdict};
use crate::domain::{build_quadrature, Domain, HolomorphicSection, QuadratureRule};
use crate::error::{LabError, Result};
use crate::extension::{ExtensionProblem, ExtensionSolver, FamilyWeight};
use crate::finsler::{evaluation_functional, griffiths_positivity_test, hodge_bundle_model, DualFunctional};
use crate::poly::Poly;
use crate::report::{coord_cells, coord_header, Cell, EnvStamp, Report, Table};
use crate::scalar::Cx;
use crate::space::WeightedSpace;
use crate::variation::{joint_psh_test, minimum_principle_field, psh_field_test, SliceKernels};
use crate::weights::{parse_poly, VarLayout, WeightProfile};

/// Process exit status for a finished report: 0 on pass, 2 on a failed
/// verdict. Errors map to 1.
pub fn exit_code(r: &Result<Report>) -> i32 {
    match r {
        Ok(rep) if rep.pass() => 0,
        Ok(_) => 2,
        Err(_) => 1,
    }
}

pub fn suite_name(e: Experiment) -> &'static str {
    match e {
        Experiment::Kernel => "m-Bergman kernel evaluation",
        Experiment::Regularize => "regularization sandwich suite",
        Experiment::Extendtest => "extension-constant growth classification",
        Experiment::Extend => "fiberwise L^p extension iteration",
        Experiment::Variation => "psh-variation suite for relative m-Bergman kernels",
        Experiment::Minprinciple => "minimum-principle suite",
        Experiment::Positivity => "Hodge-bundle Griffiths positivity suite",
    }
}

struct Stages {
    clock: Instant,
    timings: Vec<(String, f64)>,
}

impl Stages {
    fn new() -> Self {
        Stages { clock: Instant::now(), timings: Vec::new() }
    }

    fn mark(&mut self, name: &str) {
        self.timings.push((name.into(), self.clock.elapsed().as_secs_f64()));
        self.clock = Instant::now();
    }
}

fn field_err(field: &str, e: LabError) -> LabError {
    LabError::Config(format!("{field}: {e}"))
}

fn profile(cfg: &RunConfig, layout: VarLayout) -> Result<WeightProfile<f64>> {
    Ok(WeightProfile::parse(&cfg.weight, layout).map_err(|e| field_err("weight", e))?.with_clamp(cfg.clamp))
}

fn rule(cfg: &RunConfig, d: &Domain<f64>) -> Result<Arc<QuadratureRule<f64>>> {
    Ok(Arc::new(build_quadrature(d, cfg.quadrature.radial, cfg.quadrature.angular)?))
}

fn family_rule(cfg: &RunConfig, d: &Domain<f64>) -> Result<Arc<QuadratureRule<f64>>> {
    Ok(Arc::new(build_quadrature(d, cfg.family_quadrature.radial, cfg.family_quadrature.angular)?))
}

fn family_weight(cfg: &RunConfig) -> Result<FamilyWeight<f64>> {
    let fam = cfg.family.build().map_err(|e| field_err("family", e))?;
    let p = profile(cfg, VarLayout::family(fam.base_dim(), fam.fiber_dim()))?;
    FamilyWeight::new(fam, p)
}

fn anchors(spec: &[PointSpec], d: &Domain<f64>) -> Vec<Vec<Cx<f64>>> {
    if spec.is_empty() {
        default_anchors(d)
    } else {
        spec.iter().map(|p| to_point(p)).collect()
    }
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    let e = cfg.experiment()?;
    let mut rep = Report {
        suite: suite_name(e).into(),
        config: cfg.echo(),
        tables: Vec::new(),
        verdicts: Vec::new(),
        env: EnvStamp::current(cfg.seed),
        timings: Vec::new(),
    };
    let mut st = Stages::new();
    match e {
        Experiment::Kernel => run_kernel(cfg, &mut rep, &mut st)?,
        Experiment::Regularize => run_regularize(cfg, &mut rep, &mut st)?,
        Experiment::Extendtest => run_extendtest(cfg, &mut rep, &mut st)?,
        Experiment::Extend => run_extend(cfg, &mut rep, &mut st)?,
        Experiment::Variation => run_variation(cfg, &mut rep, &mut st)?,
        Experiment::Minprinciple => run_minprinciple(cfg, &mut rep, &mut st)?,
        Experiment::Positivity => run_positivity(cfg, &mut rep, &mut st)?,
    }
    rep.timings = st.timings;
    Ok(rep)
}

fn run_kernel(cfg: &RunConfig, rep: &mut Report, st: &mut Stages) -> Result<()> {
    let d = cfg.domain.build().map_err(|e| field_err("domain", e))?;
    let n = d.dimension();
    let p = profile(cfg, VarLayout::domain(n))?;
    let r = rule(cfg, &d)?;
    let grid = cfg.kernel.grid.build(&d);
    let opts = cfg.solver.options(cfg.seed);
    let mut header = coord_header("z", n);
    header.extend(["m", "degree", "K_m", "converged", "starts_agreeing"].map(String::from));
    let mut t = Table::new("kernel.csv", header);
    let mut unconverged = 0;
    st.mark("setup");
    for &m in &cfg.kernel.m {
        let basis = MonomialBasis::total_degree(n, cfg.kernel.degree);
        let solver = KernelSolver::new(WeightedSpace::m_space(&d, r.clone(), p.clone(), basis, m)?)?;
        let f = kernel_field(&solver, &grid, &opts)?;
        for (z, kv) in f.points.iter().zip(&f.values) {
            let mut row = coord_cells(z);
            row.extend([m.into(), cfg.kernel.degree.into(), kv.value.into(), kv.converged().into(), kv.starts_agreeing().into()]);
            unconverged += usize::from(!kv.converged());
            t.push(row);
        }
        st.mark(&format!("m = {m}"));
    }
    rep.verdict("solver convergence", unconverged == 0, format!("{unconverged} of {} solves did not converge", t.rows.len()));
    rep.tables.push(t);
    Ok(())
}

fn regularizer(cfg: &RunConfig, k: u32, d0: u32, d_max: u32) -> Result<Regularizer<f64>> {
    let d = cfg.domain.build().map_err(|e| field_err("domain", e))?;
    let p = profile(cfg, VarLayout::domain(d.dimension()))?;
    let r = rule(cfg, &d)?;
    Ok(Regularizer { domain: d, rule: r, profile: p, k, degree: DegreePolicy { d0, d_max }, opts: cfg.solver.options(cfg.seed) })
}

fn run_regularize(cfg: &RunConfig, rep: &mut Report, st: &mut Stages) -> Result<()> {
    let s = &cfg.regularize;
    let reg = regularizer(cfg, s.k, s.d0, s.d_max)?;
    let n = reg.domain.dimension();
    let grid = s.grid.build(&reg.domain);
    let mut header = coord_header("z", n);
    header.extend(["m", "degree", "phi", "phi_m", "converged"].map(String::from));
    let mut t = Table::new("regularize.csv", header);
    st.mark("setup");
    for &m in &s.m {
        let f = reg.demailly_step(m, &grid)?;
        for ((z, v), c) in f.points.iter().zip(&f.values).zip(&f.converged) {
            let mut row = coord_cells(z);
            row.extend([m.into(), f.degree.into(), reg.profile.value(z).into(), (*v).into(), (*c).into()]);
            t.push(row);
        }
    }
    st.mark("regularize");
    let sw = reg.sandwich_bounds(&grid, &anchors(&s.anchors, &reg.domain), &s.m)?;
    st.mark("sandwich");
    let mut header = vec!["m".to_string(), "point".into()];
    header.extend(coord_header("z", n));
    header.extend(["radius", "lower_slack", "upper_slack", "log_c"].map(String::from));
    let mut ts = Table::new("sandwich.csv", header);
    for r in &sw.rows {
        let mut row: Vec<Cell> = vec![r.m.into(), r.point.into()];
        row.extend(coord_cells(&grid[r.point]));
        row.extend([r.radius.into(), r.lower_slack.into(), r.upper_slack.into(), r.log_c.into()]);
        ts.push(row);
    }
    let bad = sw.violations(s.slack_tol);
    let detail = match bad.first() {
        Some(w) => format!("{} violation(s); first at m = {}, point {} (lower {:e}, upper {:e})", bad.len(), w.m, w.point, w.lower_slack, w.upper_slack),
        None => format!("worst slack {:e} over {} rows, {} skipped", sw.worst_slack(), sw.rows.len(), sw.skipped.len()),
    };
    rep.verdict("sandwich slacks", bad.is_empty(), detail);
    rep.tables.push(t);
    rep.tables.push(ts);
    Ok(())
}

fn run_extendtest(cfg: &RunConfig, rep: &mut Report, st: &mut Stages) -> Result<()> {
    let s = &cfg.extendtest;
    let reg = regularizer(cfg, s.k, s.d0, s.d_max)?;
    let n = reg.domain.dimension();
    let anchors = anchors(&s.anchors, &reg.domain);
    st.mark("setup");
    let series = reg.measure_extension_constants(&anchors, &s.m)?;
    st.mark("constants");
    let mut header = vec!["m".to_string(), "anchor".into()];
    header.extend(coord_header("z", n));
    header.extend(["log_c", "converged"].map(String::from));
    let mut t = Table::new("constants.csv", header);
    for e in &series.entries {
        let mut row: Vec<Cell> = vec![e.m.into(), e.anchor.into()];
        row.extend(coord_cells(&anchors[e.anchor]));
        row.extend([e.log_c.into(), e.converged.into()]);
        t.push(row);
    }
    let mut tg = Table::new("growth.csv", vec!["m".into(), "growth".into(), "anchor".into()]);
    for &m in &s.m {
        if let Some((g, a)) = series.growth(m) {
            tg.push(vec![m.into(), g.into(), a.into()]);
        }
    }
    let v = classify_weight(&series, s.m_tail, s.threshold);
    let detail = match &v {
        Verdict::PshConsistent { limit } => format!("growth limit {limit:.6}"),
        Verdict::NonPsh { anchor, limit } => format!("growth limit {limit:.6}; witness anchor {anchor} at {:?}", anchors[*anchor]),
        Verdict::Inconclusive { reason } => reason.clone(),
    };
    rep.verdict(v.label(), matches!(v, Verdict::PshConsistent { .. }), detail);
    rep.tables.push(t);
    rep.tables.push(tg);
    Ok(())
}

fn run_extend(cfg: &RunConfig, rep: &mut Report, st: &mut Stages) -> Result<()> {
    let s = &cfg.extend;
    let fw = family_weight(cfg)?;
    let n = fw.family.fiber_dim();
    let datum = parse_poly(&s.datum, VarLayout::domain(n)).map_err(|e| field_err("extend.datum", e))?;
    let problem = ExtensionProblem {
        t0: to_point(&s.t0),
        datum,
        joint_degree: s.joint_degree,
        cap_t: s.cap_t,
        cap_z: s.cap_z,
        m: s.m,
    };
    let jr = family_rule(cfg, &fw.family.joint())?;
    let fr = family_rule(cfg, &fw.family.fiber)?;
    let solver = ExtensionSolver::new(fw, problem, jr, fr)?;
    st.mark("setup");
    let (ext, tr) = solver.lp_extend_iterate(s.max_iter, s.tol, cfg.solver.eps_irls)?;
    st.mark("iterate");
    let header = ["step", "a_k", "c_hat", "ratio", "clamp_fraction", "model_excess"].map(String::from).to_vec();
    let mut t = Table::new("trace.csv", header);
    let q = 1.0 - 1.0 / s.m as f64;
    let ratios = tr.ratios();
    for (k, a) in tr.a.iter().enumerate() {
        let c = tr.c_hat.get(k).copied();
        let excess = c.and_then(|c| tr.a.get(k + 1).map(|a1| a1.ln() - c.ln() - q * (a.ln() - c.ln())));
        let clamp = tr.clamp_fraction.get(k).copied();
        t.push(vec![k.into(), (*a).into(), c.into(), ratios[k].into(), clamp.into(), excess.into()]);
    }
    let worst = tr.worst_model_excess();
    rep.verdict("contraction model", worst <= s.model_tol, format!("worst excess {worst:e}"));
    rep.verdict("constraint residual", ext.residual < 1e-8, format!("{:e}", ext.residual));
    rep.verdict(
        "iteration converged",
        tr.converged,
        format!("{} step(s), final ratio {:.12e}{}", tr.a.len() - 1, ext.ratio(), if tr.degraded { ", floor active" } else { "" }),
    );
    rep.tables.push(t);
    Ok(())
}

fn sections(specs: &[Vec<String>], r: usize, n: usize) -> Result<Vec<HolomorphicSection<f64>>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, comps)| {
            if comps.len() != n {
                return Err(LabError::Config(format!("variation.sections[{i}]: expected {n} component(s)")));
            }
            let polys = comps
                .iter()
                .map(|c| parse_poly(c, VarLayout::family(r, 0)).map_err(|e| field_err(&format!("variation.sections[{i}]"), e)))
                .collect::<Result<Vec<Poly<f64>>>>()?;
            Ok(HolomorphicSection::new(polys))
        })
        .collect()
}

fn run_variation(cfg: &RunConfig, rep: &mut Report, st: &mut Stages) -> Result<()> {
    let s = &cfg.variation;
    let fw = family_weight(cfg)?;
    let (r, n) = (fw.family.base_dim(), fw.family.fiber_dim());
    let secs = sections(&s.sections, r, n)?;
    let grid = s.grid.build(&fw.family.base);
    let fr = family_rule(cfg, &fw.family.fiber)?;
    let opts = s.submean.options(r, cfg.seed);
    let mut header = vec!["m".to_string(), "section".into()];
    header.extend(coord_header("t", r));
    header.extend(coord_header("z", n));
    header.extend(["log_k", "worst_deficit", "pass"].map(String::from));
    let mut t = Table::new("variation.csv", header);
    let mut jheader = vec!["m".to_string()];
    jheader.extend(coord_header("t", r));
    jheader.extend(coord_header("z", n));
    jheader.extend(["log_k", "worst_deficit", "pass"].map(String::from));
    let mut tj = Table::new("joint.csv", jheader);
    st.mark("setup");
    let joint: Vec<Vec<Cx<f64>>> = s.joint_points.iter().map(|p| to_point(p)).collect();
    for &m in &s.m {
        let k = SliceKernels { fw: fw.clone(), m, degree: s.degree, rule: fr.clone(), opts: cfg.solver.options(cfg.seed) };
        let v = psh_field_test(&k, &secs, &grid, &opts)?;
        for sv in &v {
            for row in &sv.rows {
                let mut c: Vec<Cell> = vec![m.into(), sv.section.into()];
                c.extend(coord_cells(&row.t));
                c.extend(coord_cells(&row.z));
                c.extend([row.log_k.into(), row.worst_deficit.into(), row.pass.into()]);
                t.push(c);
            }
            let worst = sv.rows.iter().filter_map(|r| r.worst_deficit).fold(f64::NEG_INFINITY, f64::max);
            let failing = sv.rows.iter().find(|r| !r.pass);
            let detail = match failing {
                Some(w) => format!("violation at t = {:?} (deficit {:e})", w.t, w.worst_deficit.unwrap_or(f64::NAN)),
                None => format!("{} point(s), worst deficit {worst:e}, {} skipped", sv.rows.len(), sv.skipped.len()),
            };
            rep.verdict(format!("m = {m}, section {}", sv.section), sv.pass, detail);
        }
        if !joint.is_empty() {
            let jo = s.joint_submean.options(r + n, cfg.seed);
            let rows = joint_psh_test(&k, &joint, &jo)?;
            for row in &rows {
                let mut c: Vec<Cell> = vec![m.into()];
                c.extend(coord_cells(&row.point));
                c.extend([row.log_k.into(), row.worst_deficit.into(), row.pass.into()]);
                tj.push(c);
            }
            let bad = rows.iter().filter(|r| !r.pass).count();
            rep.verdict(format!("m = {m}, joint"), bad == 0, format!("{bad} of {} joint point(s) fail", rows.len()));
        }
        st.mark(&format!("m = {m}"));
    }
    rep.tables.push(t);
    if !joint.is_empty() {
        rep.tables.push(tj);
    }
    Ok(())
}

fn run_minprinciple(cfg: &RunConfig, rep: &mut Report, st: &mut Stages) -> Result<()> {
    let s = &cfg.minprinciple;
    let fw = family_weight(cfg)?;
    let r = fw.family.base_dim();
    let grid = s.grid.build(&fw.family.base);
    let fr = family_rule(cfg, &fw.family.fiber)?;
    st.mark("setup");
    let red = minimum_principle_field(&fw, &fr, &grid, &s.submean.options(r, cfg.seed))?;
    st.mark("reduced weight");
    let mut header = coord_header("t", r);
    header.extend(["phi_tilde", "worst_deficit", "pass"].map(String::from));
    let mut t = Table::new("minprinciple.csv", header);
    for i in 0..red.points.len() {
        let mut c = coord_cells(&red.points[i]);
        c.extend([red.values[i].into(), red.worst_deficit[i].into(), red.pass[i].into()]);
        t.push(c);
    }
    let bad: Vec<usize> = (0..red.pass.len()).filter(|&i| !red.pass[i]).collect();
    let detail = match bad.first() {
        Some(&i) => format!("{} violation(s); first at t = {:?}", bad.len(), red.points[i]),
        None => format!("{} base point(s)", red.points.len()),
    };
    rep.verdict("sub-mean-value of reduced weight", bad.is_empty(), detail);
    rep.tables.push(t);
    Ok(())
}

fn dual_sections(specs: &[DualSectionSpec], r: usize, n: usize, degree: u32) -> Result<Vec<DualFunctional<f64>>> {
    let rank = MonomialBasis::total_degree(n, degree).len();
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            DualSectionSpec::Evaluation(z) => {
                if z.len() != n {
                    return Err(LabError::Config(format!("positivity.sections[{i}]: evaluation point needs {n} coordinate(s)")));
                }
                Ok(DualFunctional::constant(r, &evaluation_functional(n, degree, &to_point(z))))
            }
            DualSectionSpec::Components(cs) => {
                if cs.len() > rank {
                    return Err(LabError::Config(format!("positivity.sections[{i}]: {} components exceed rank {rank}", cs.len())));
                }
                let mut polys = cs
                    .iter()
                    .map(|c| parse_poly(c, VarLayout::family(r, 0)).map_err(|e| field_err(&format!("positivity.sections[{i}]"), e)))
                    .collect::<Result<Vec<Poly<f64>>>>()?;
                polys.resize_with(rank, || Poly::zero(r));
                Ok(DualFunctional::new(polys))
            }
        })
        .collect()
}

fn run_positivity(cfg: &RunConfig, rep: &mut Report, st: &mut Stages) -> Result<()> {
    let s = &cfg.positivity;
    let fw = family_weight(cfg)?;
    let (r, n) = (fw.family.base_dim(), fw.family.fiber_dim());
    let grid = s.grid.build(&fw.family.base);
    let secs = dual_sections(&s.sections, r, n, s.degree)?;
    let fr = family_rule(cfg, &fw.family.fiber)?;
    let field = hodge_bundle_model(&fw, s.degree, fr, &grid)?;
    st.mark("setup");
    let pr = griffiths_positivity_test(&field, &secs, &grid, &s.submean.options(r, cfg.seed))?;
    st.mark("positivity");
    let mut header = vec!["section".to_string()];
    header.extend(coord_header("t", r));
    header.extend(["log_dual_norm", "worst_deficit", "pass"].map(String::from));
    let mut t = Table::new("positivity.csv", header);
    for row in &pr.rows {
        let mut c: Vec<Cell> = vec![row.section.into()];
        c.extend(coord_cells(&row.point));
        c.extend([row.log_dual_norm.into(), row.worst_deficit.into(), row.pass.into()]);
        t.push(c);
    }
    let detail = match pr.rows.iter().find(|r| !r.pass) {
        Some(w) => format!("violation for section {} at t = {:?}", w.section, w.point),
        None => format!("{} row(s), worst deficit {:e}, {} skipped", pr.rows.len(), pr.worst_deficit().unwrap_or(f64::NAN), pr.skipped.len()),
    };
    rep.verdict("log dual norms subharmonic", pr.pass, detail);
    rep.tables.push(t);
    Ok(())
}
