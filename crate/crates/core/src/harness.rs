//! Simulation driver: configuration, the adaptive loop, interface traces,
//! error measurement against the analytic field, and file output.

use crate::assembly::{assemble_dual_rhs, assemble_system, refine_for_source, Dipole, SheetModel};
use crate::dwr::{band_cells, indicators, mark, qoi, reconstruct, DwrFields, IndicatorMap, WeightFunction};
use crate::fespace::{distribute_dofs, EdgeFESpace, FieldSolution};
use crate::mesh::Mesh;
use crate::oracle::{
    dispersion, oracle_samples, BranchCutRule, DispersionMode, OracleSample, QuadratureSpec,
};
use crate::pml::PmlSpec;
use crate::solver::{solve_adjoint, solve_with, Factorization};
use crate::units::RescaledModel;
use crate::{Complex64, Error, Result};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Complex tangential field sampled along the sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceTrace {
    pub x: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl InterfaceTrace {
    pub fn new(x: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if x.len() != values.len() {
            return Err(Error::GridMismatch(format!("{} abscissae for {} values", x.len(), values.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("abscissae must be strictly increasing".into()));
        }
        Ok(InterfaceTrace { x, values })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// How the mesh grows between cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    Adaptive,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sigma_r: Complex64,
    pub a: f64,
    pub r_outer: f64,
    pub s0: f64,
    pub cycles: usize,
    pub d_reg: f64,
    pub d_w: f64,
    pub samples: usize,
    /// Global refinements of the coarse disk before the first cycle.
    pub initial_refines: usize,
    /// The loop stops after the first cycle above this many dofs.
    pub max_dofs: usize,
    pub refinement: Refinement,
    /// Relative tolerance of the analytic reference field.
    pub oracle_tol: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sigma_r: Complex64::new(2.56e-4, 0.16),
            a: 1.0,
            r_outer: 8.0 * PI,
            s0: 2.0,
            cycles: 6,
            d_reg: 0.15625,
            d_w: 1.5625,
            samples: 2048,
            initial_refines: 3,
            max_dofs: 300_000,
            refinement: Refinement::Adaptive,
            oracle_tol: 1e-8,
            out: None,
        }
    }
}

/// Parses `re+imj`, `re-imj`, `imj` or `re`.
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::Config(format!("cannot parse complex number {s:?}"));
    if t.is_empty() {
        return Err(bad());
    }
    let Some(body) = t.strip_suffix(['j', 'i']) else {
        return t.parse::<f64>().map(|re| Complex64::new(re, 0.0)).map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => "1",
        "-" => "-1",
        v => v,
    };
    Ok(Complex64::new(re.parse().map_err(|_| bad())?, im.parse().map_err(|_| bad())?))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
        };
        let count = |v: &str| -> Result<usize> {
            v.parse::<usize>().map_err(|_| Error::Config(format!("{key}: expected a count, got {v:?}")))
        };
        match key {
            "sigma" | "sigma_r" => self.sigma_r = parse_complex(value)?,
            "a" => self.a = num(value)?,
            "R" | "r" | "radius" => self.r_outer = num(value)?,
            "s0" => self.s0 = num(value)?,
            "cycles" => self.cycles = count(value)?,
            "d_reg" => self.d_reg = num(value)?,
            "d_w" => self.d_w = num(value)?,
            "samples" => self.samples = count(value)?,
            "initial_refines" => self.initial_refines = count(value)?,
            "max_dofs" => self.max_dofs = count(value)?,
            "oracle_tol" => self.oracle_tol = num(value)?,
            "refinement" => {
                self.refinement = match value {
                    "adaptive" => Refinement::Adaptive,
                    "uniform" => Refinement::Uniform,
                    v => return Err(Error::Config(format!("refinement must be adaptive or uniform, got {v:?}"))),
                }
            }
            "out" => self.out = Some(PathBuf::from(value)),
            k => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    /// Reads flat `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.cycles < 1 {
            return fail("cycles must be at least 1".into());
        }
        if self.samples < 2 {
            return fail("at least two trace samples are needed".into());
        }
        if !(self.r_outer > 0.0) || !(self.d_reg > 0.0) || !(self.d_w > 0.0) || !(self.s0 >= 0.0) {
            return fail(format!(
                "R, d_reg, d_w must be positive and s0 nonnegative (R = {}, d_reg = {}, d_w = {}, s0 = {})",
                self.r_outer, self.d_reg, self.d_w, self.s0
            ));
        }
        if !(self.a > self.d_reg) || self.a + self.d_reg >= 0.8 * self.r_outer {
            return fail(format!(
                "dipole height a = {} must keep the source disk (radius {}) off the sheet and inside the PML radius",
                self.a, self.d_reg
            ));
        }
        if !(self.oracle_tol > 0.0) {
            return fail("oracle_tol must be positive".into());
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SheetModel> {
        self.model_with_s0(self.s0)
    }

    pub fn model_with_s0(&self, s0: f64) -> Result<SheetModel> {
        SheetModel::new(
            self.sigma_r,
            Dipole::vertical(self.a, self.d_reg),
            PmlSpec::new(self.r_outer, s0)?,
        )
    }

    pub fn weight(&self) -> Result<WeightFunction> {
        WeightFunction::new(self.d_w)
    }

    pub fn oracle_quadrature(&self) -> QuadratureSpec {
        QuadratureSpec {
            rel_tol: self.oracle_tol,
            abs_tol: 1e-14,
            rule: BranchCutRule::MappedRomberg,
            ..QuadratureSpec::default()
        }
    }
}

/// Uniform midpoint grid on `[−0.8R, 0.8R]`; never contains `x = 0` for
/// an even count.
pub fn trace_grid(r_outer: f64, samples: usize) -> Vec<f64> {
    let l = 0.8 * r_outer;
    let h = 2.0 * l / samples as f64;
    (0..samples).map(|i| -l + (i as f64 + 0.5) * h).collect()
}

/// Analytic samples on `xs`, evaluated once per distinct `|x|`.
pub fn oracle_on_grid(xs: &[f64], sigma_r: Complex64, a: f64, quad: &QuadratureSpec) -> Result<Vec<OracleSample>> {
    let mut abs: Vec<f64> = xs.iter().map(|x| x.abs()).filter(|&x| x > 0.0).collect();
    abs.sort_by(f64::total_cmp);
    abs.dedup();
    let half = oracle_samples(&abs, &RescaledModel::vacuum(sigma_r, a), quad)?;
    Ok(xs
        .iter()
        .map(|&x| {
            if x == 0.0 {
                return OracleSample {
                    x,
                    pole: Complex64::new(0.0, 0.0),
                    branchcut: Complex64::new(0.0, 0.0),
                };
            }
            let k = abs.binary_search_by(|v| v.total_cmp(&x.abs())).expect("abscissa present");
            let s = x.signum();
            OracleSample {
                x,
                pole: s * half[k].pole,
                branchcut: s * half[k].branchcut,
            }
        })
        .collect())
}

/// Tangential trace of `E_total − E_primary` on the sheet, from above.
pub fn scattered_trace(
    mesh: &Mesh,
    space: &EdgeFESpace,
    total: &FieldSolution,
    primary: &FieldSolution,
    xs: &[f64],
) -> Result<InterfaceTrace> {
    if total.coeffs.len() != space.n_dofs || primary.coeffs.len() != space.n_dofs {
        return Err(Error::GridMismatch("fields do not belong to the given space".into()));
    }
    let diff: Vec<Complex64> = total.coeffs.iter().zip(&primary.coeffs).map(|(a, b)| a - b).collect();
    let faces = mesh.interface_faces()?;
    let mut values = Vec::with_capacity(xs.len());
    for &x in xs {
        let k = faces.partition_point(|f| f.x1 < x);
        let face = faces
            .get(k)
            .filter(|f| f.x0 <= x && x <= f.x1)
            .ok_or_else(|| Error::GridMismatch(format!("x = {x} lies on no sheet face")))?;
        values.extend(space.tangential_trace(mesh, &diff, face, &[x])?);
    }
    InterfaceTrace::new(xs.to_vec(), values)
}

fn check_grids(a: &InterfaceTrace, b: &InterfaceTrace) -> Result<()> {
    if a.len() != b.len() || a.x.iter().zip(&b.x).any(|(p, q)| (p - q).abs() > 1e-12 * (1.0 + p.abs())) {
        return Err(Error::GridMismatch(format!("traces of length {} and {} differ in abscissae", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::GridMismatch("at least two samples are needed".into()));
    }
    Ok(())
}

fn trapezoid_l2(x: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let s: f64 = (1..x.len()).map(|i| 0.5 * (x[i] - x[i - 1]) * (f(i - 1) + f(i))).sum();
    s.sqrt()
}

/// Trapezoid L2 norm of the complex difference.
pub fn l2_error(a: &InterfaceTrace, b: &InterfaceTrace) -> Result<f64> {
    check_grids(a, b)?;
    Ok(trapezoid_l2(&a.x, |i| (a.values[i] - b.values[i]).norm_sqr()))
}

/// Trapezoid L2 norm of the difference of real parts.
pub fn l2_error_real(a: &InterfaceTrace, b: &InterfaceTrace) -> Result<f64> {
    check_grids(a, b)?;
    Ok(trapezoid_l2(&a.x, |i| (a.values[i].re - b.values[i].re).powi(2)))
}

/// Hann-windowed Fourier amplitude of the `e^{ikx}` component of a trace on
/// `[x0, x1]`. A pure `A e^{ikx}` on a fine grid returns `|A|`.
pub fn spectral_amplitude(trace: &InterfaceTrace, k: f64, x0: f64, x1: f64) -> f64 {
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for (&x, &v) in trace.x.iter().zip(&trace.values) {
        if x < x0 || x > x1 {
            continue;
        }
        let s = (PI * (x - x0) / (x1 - x0)).sin();
        let w = s * s;
        num += w * v * Complex64::from_polar(1.0, -k * x);
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num.norm() / den
    }
}

/// Discrete fields of one mesh: total, sheet-free companion and the primal
/// factorization.
pub struct CycleFields {
    pub space: EdgeFESpace,
    pub total: FieldSolution,
    pub primary: FieldSolution,
    pub matrix: crate::assembly::SparseMatrix,
    pub factor: Factorization,
}

/// Solves with and without the sheet on the same space. The sheet-free
/// companion is solved first and only its symbolic analysis is kept, so a
/// single numeric factorization is alive at a time.
pub fn solve_fields(mesh: &Mesh, model: &SheetModel) -> Result<CycleFields> {
    let space = distribute_dofs(mesh, 2)?;
    let (primary, symbolic, fingerprint) = {
        let sys0 = assemble_system(mesh, &space, &model.without_sheet())?;
        let f0 = Factorization::new(&sys0.matrix)?;
        (solve_with(&f0, &sys0, &space)?, f0.symbolic().clone(), sys0.mesh_fingerprint)
    };
    let sys = assemble_system(mesh, &space, model)?;
    if sys.mesh_fingerprint != fingerprint {
        return Err(Error::Assembly("companion system built on a different mesh".into()));
    }
    let factor = Factorization::with_symbolic(&sys.matrix, &symbolic)?;
    let total = solve_with(&factor, &sys, &space)?;
    Ok(CycleFields {
        space,
        total,
        primary,
        matrix: sys.matrix,
        factor,
    })
}

/// DWR indicators of the total field for the band-weighted curl energy.
pub fn estimate(mesh: &Mesh, model: &SheetModel, weight: &WeightFunction, fields: &CycleFields) -> Result<IndicatorMap> {
    let space = &fields.space;
    let rhs = assemble_dual_rhs(mesh, space, &fields.total.coeffs, |x| weight.value(x))?;
    let dual = solve_adjoint(&fields.factor, &fields.matrix, &rhs, space)?;
    let re = reconstruct(mesh, space, &fields.total.coeffs)?;
    let rz = reconstruct(mesh, space, &dual.coeffs)?;
    indicators(
        mesh,
        space,
        model,
        weight,
        &DwrFields {
            primal: &fields.total.coeffs,
            dual: &dual.coeffs,
            primal_rec: &re,
            dual_rec: &rz,
        },
    )
}

/// Coarse disk refined globally and then around the dipole.
pub fn initial_mesh(config: &RunConfig, model: &SheetModel) -> Result<Mesh> {
    let mut mesh = Mesh::disk(config.r_outer, config.initial_refines)?;
    refine_for_source(&mut mesh, model);
    Ok(mesh)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub cycle: usize,
    pub n_cells: usize,
    pub n_dofs: usize,
    /// Error of the real part, the reported measure.
    pub l2_error: f64,
    pub l2_error_complex: f64,
    /// `log2(err_{c−1} / err_c)`; absent on the first cycle.
    pub rate: Option<f64>,
    /// `J(E_H)` of the total field.
    pub qoi: f64,
    /// `Σ η_Q`, when indicators were computed.
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub records: Vec<ConvergenceRecord>,
    pub traces: Vec<InterfaceTrace>,
    pub oracle: InterfaceTrace,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes `x, Re Ex_sc, Im Ex_sc, Re oracle, Im oracle`.
pub fn write_trace_csv(path: &Path, trace: &InterfaceTrace, oracle: &InterfaceTrace) -> Result<()> {
    check_grids(trace, oracle)?;
    let mut s = String::from("x,re_ex_sc,im_ex_sc,re_oracle,im_oracle\n");
    for i in 0..trace.len() {
        let (v, o) = (trace.values[i], oracle.values[i]);
        let _ = writeln!(s, "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", trace.x[i], v.re, v.im, o.re, o.im);
    }
    write_file(path, &s)
}

/// Writes `cycle, cells, dofs, l2_error, rate, l2_error_complex`.
pub fn write_convergence_csv(path: &Path, records: &[ConvergenceRecord]) -> Result<()> {
    let mut s = String::from("cycle,cells,dofs,l2_error,rate,l2_error_complex\n");
    for r in records {
        let rate = r.rate.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{:.12e},{},{:.12e}",
            r.cycle, r.n_cells, r.n_dofs, r.l2_error, rate, r.l2_error_complex
        );
    }
    write_file(path, &s)
}

/// Writes `x, re_pole, im_pole, re_bc, im_bc, re_total, im_total`.
pub fn write_oracle_csv(path: &Path, samples: &[OracleSample]) -> Result<()> {
    let mut s = String::from("x,re_pole,im_pole,re_bc,im_bc,re_total,im_total\n");
    for o in samples {
        let t = o.total();
        let _ = writeln!(
            s,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            o.x, o.pole.re, o.pole.im, o.branchcut.re, o.branchcut.im, t.re, t.im
        );
    }
    write_file(path, &s)
}

fn log_rate(prev: f64, cur: f64) -> f64 {
    (prev / cur).log2()
}

/// Runs the refinement loop.
///
/// Per cycle: solve with and without the sheet, record the interface error
/// against the analytic field, then estimate, mark and refine (adaptive) or
/// refine every cell (uniform). Stops after `cycles` cycles or after the
/// first cycle above `max_dofs`.
pub fn run_adaptive(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let model = config.model()?;
    let weight = config.weight()?;
    let xs = trace_grid(config.r_outer, config.samples);
    let oracle_samples = oracle_on_grid(&xs, config.sigma_r, config.a, &config.oracle_quadrature())?;
    let oracle = InterfaceTrace::new(xs.clone(), oracle_samples.iter().map(OracleSample::total).collect())?;
    if let Some(dir) = &config.out {
        ensure_dir(dir)?;
        write_oracle_csv(&dir.join("oracle.csv"), &oracle_samples)?;
    }
    let mut mesh = initial_mesh(config, &model)?;
    let mut records: Vec<ConvergenceRecord> = Vec::new();
    let mut traces = Vec::new();
    for cycle in 1..=config.cycles {
        let step = || -> Result<(ConvergenceRecord, InterfaceTrace, Option<Vec<usize>>)> {
            let fields = solve_fields(&mesh, &model)?;
            let trace = scattered_trace(&mesh, &fields.space, &fields.total, &fields.primary, &xs)?;
            let l2 = l2_error_real(&trace, &oracle)?;
            let l2c = l2_error(&trace, &oracle)?;
            let last = cycle == config.cycles || fields.space.n_dofs > config.max_dofs;
            let ind = match config.refinement {
                Refinement::Adaptive => Some(estimate(&mesh, &model, &weight, &fields)?),
                Refinement::Uniform => None,
            };
            let record = ConvergenceRecord {
                cycle,
                n_cells: mesh.n_active(),
                n_dofs: fields.space.n_dofs,
                l2_error: l2,
                l2_error_complex: l2c,
                rate: records.last().map(|r| log_rate(r.l2_error, l2)),
                qoi: qoi(&mesh, &fields.space, &fields.total.coeffs, &weight)?,
                estimate: ind.as_ref().map(IndicatorMap::total),
            };
            if let Some(dir) = &config.out {
                write_trace_csv(&dir.join(format!("interface_trace_cycle{cycle}.csv")), &trace, &oracle)?;
                let eta = ind.as_ref().map(|i| i.by_active(&mesh)).unwrap_or_else(|| vec![0.0; mesh.n_active()]);
                let level: Vec<f64> = mesh.active_cells().iter().map(|&c| f64::from(mesh.cell(c).level)).collect();
                mesh.write_vtk(
                    &dir.join(format!("mesh_cycle{cycle}.vtk")),
                    &[("indicator", &eta), ("level", &level)],
                )?;
            }
            let marked = if last {
                None
            } else {
                match &ind {
                    Some(ind) => Some(mark(ind, &mesh, &weight, cycle)?),
                    None => Some(mesh.active_cells().to_vec()),
                }
            };
            Ok((record, trace, marked))
        };
        let (record, trace, marked) = step().map_err(|e| e.in_cycle(cycle))?;
        let stop = record.n_dofs > config.max_dofs;
        records.push(record);
        traces.push(trace);
        if let Some(dir) = &config.out {
            write_convergence_csv(&dir.join("convergence.csv"), &records)?;
        }
        match marked {
            Some(m) if !stop => mesh.refine(&m),
            _ => break,
        }
    }
    Ok(RunReport { records, traces, oracle })
}

/// Mesh shared by the PML comparison: the initial mesh refined `cycles`
/// times in the narrowing sheet band.
pub fn band_mesh(config: &RunConfig) -> Result<Mesh> {
    config.validate()?;
    let model = config.model()?;
    let weight = config.weight()?;
    let mut mesh = initial_mesh(config, &model)?;
    for cycle in 1..=config.cycles {
        let marked = band_cells(&mesh, &weight, cycle)?;
        mesh.refine(&marked);
    }
    Ok(mesh)
}

#[derive(Debug, Clone)]
pub struct PmlRun {
    pub s0: f64,
    pub trace: InterfaceTrace,
}

/// One solve per PML strength on one fixed mesh.
pub fn pml_study(config: &RunConfig, s0_list: &[f64]) -> Result<Vec<PmlRun>> {
    if s0_list.is_empty() {
        return Err(Error::Config("pml study needs at least one s0".into()));
    }
    let mesh = band_mesh(config)?;
    let xs = trace_grid(config.r_outer, config.samples);
    let mut runs = Vec::with_capacity(s0_list.len());
    for &s0 in s0_list {
        let model = config.model_with_s0(s0)?;
        let fields = solve_fields(&mesh, &model)?;
        let trace = scattered_trace(&mesh, &fields.space, &fields.total, &fields.primary, &xs)?;
        runs.push(PmlRun { s0, trace });
    }
    if let Some(dir) = &config.out {
        ensure_dir(dir)?;
        let oracle_samples = oracle_on_grid(&xs, config.sigma_r, config.a, &config.oracle_quadrature())?;
        let mut s = String::from("x");
        for r in &runs {
            let _ = write!(s, ",re_s0_{0},im_s0_{0}", r.s0);
        }
        s.push_str(",re_oracle,im_oracle\n");
        for (i, &x) in xs.iter().enumerate() {
            let _ = write!(s, "{x:.12e}");
            for r in &runs {
                let _ = write!(s, ",{:.12e},{:.12e}", r.trace.values[i].re, r.trace.values[i].im);
            }
            let t = oracle_samples[i].total();
            let _ = writeln!(s, ",{:.12e},{:.12e}", t.re, t.im);
        }
        write_file(&dir.join("pml_study.csv"), &s)?;
    }
    Ok(runs)
}

/// Amplitude of the SPP term of the analytic field, `|2/σ² e^{−2ia/σ}|`,
/// and the real part of the exact SPP wavenumber.
pub fn spp_reference(sigma_r: Complex64, a: f64) -> Result<(f64, f64)> {
    let one = Complex64::new(1.0, 0.0);
    let root = dispersion(sigma_r, one, one, DispersionMode::Exact)?;
    let amp = (2.0 / (sigma_r * sigma_r) * (Complex64::new(0.0, -2.0 * a) / sigma_r).exp()).norm();
    Ok((amp, root.k_m.re))
}

/// Reads `convergence.csv` back and formats a table with recomputed rates.
pub fn report(dir: &Path) -> Result<String> {
    let path = dir.join("convergence.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(Error::Config(format!("{}: line {} has {} fields", path.display(), n + 1, f.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: line {}: bad number {s:?}", path.display(), n + 1)))
        };
        rows.push((parse(f[0])? as usize, parse(f[1])? as usize, parse(f[2])? as usize, parse(f[3])?));
    }
    let mut s = format!("{:>5} {:>9} {:>9} {:>12} {:>7}\n", "cycle", "cells", "dofs", "l2_error", "rate");
    for (i, &(cycle, cells, dofs, err)) in rows.iter().enumerate() {
        let rate = if i == 0 {
            String::from("-")
        } else {
            format!("{:.3}", log_rate(rows[i - 1].3, err))
        };
        let _ = writeln!(s, "{cycle:>5} {cells:>9} {dofs:>9} {err:>12.4e} {rate:>7}");
    }
    if rows.len() >= 4 {
        let tail = &rows[rows.len() - 4..];
        let mean = log_rate(tail[0].3, tail[3].3) / 3.0;
        let _ = writeln!(s, "mean rate over the last three cycles: {mean:.3}");
    }
    Ok(s)
}
