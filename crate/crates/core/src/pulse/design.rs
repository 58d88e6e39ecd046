use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bspline::BSplineBasis;
use super::pulse_set::{orthogonality_matrix, PulseSet, PulseSetError};
use super::spectrum::{db_to_linear, mask_violation, psd, SpectralMask, SpectrumError, DEFAULT_PRF_HZ};
use crate::waveform::DEFAULT_DT;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid design config: {0}")]
    InvalidConfig(String),
    #[error("no feasible pulse set after {generations} generations: {report}")]
    Infeasible {
        generations: usize,
        best: Box<PulseSet>,
        report: ConstraintReport,
    },
    #[error(transparent)]
    PulseSet(#[from] PulseSetError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyWeights {
    /// Weight on the squared mask exceedance (dB²).
    pub mask: f64,
    /// Weight on `Σ|row sum|`, with coefficients in units of the initial
    /// gene scale.
    pub row_sum: f64,
    /// Weight on `‖G − I‖²_F` of the normalized Gram matrix.
    pub orthogonality: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self { mask: 1.0, row_sum: 1e3, orthogonality: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub crossover_rate: f64,
    pub tournament: usize,
    pub elitism: usize,
    pub penalty: PenaltyWeights,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 200,
            generations: 500,
            mutation_rate: 0.1,
            sigma_start: 0.3,
            sigma_end: 0.01,
            crossover_rate: 0.9,
            tournament: 3,
            elitism: 2,
            penalty: PenaltyWeights::default(),
            seed: 1,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub mask_db: f64,
    pub orthogonality: f64,
    pub row_sum: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { mask_db: 0.5, orthogonality: 0.05, row_sum: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "Ns")]
    pub ns: usize,
    pub m: usize,
    pub pulse_duration_s: f64,
    pub dt: f64,
    pub nfft: usize,
    pub prf_hz: f64,
    pub mask: SpectralMask,
    pub ga: GaParams,
    pub tolerances: Tolerances,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            l: 4,
            ns: 30,
            m: 4,
            pulse_duration_s: 1.28e-9,
            dt: DEFAULT_DT,
            nfft: 1024,
            prf_hz: DEFAULT_PRF_HZ,
            mask: SpectralMask::fcc_like(),
            ga: GaParams::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl DesignConfig {
    pub fn basis(&self) -> BSplineBasis {
        BSplineBasis::for_duration(self.m, self.ns, self.pulse_duration_s)
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |s: &str| Err(DesignError::InvalidConfig(s.to_string()));
        let ga = &self.ga;
        if self.l == 0 {
            return bad("L must be at least 1");
        }
        if self.m == 0 || self.ns < self.m {
            return bad("need m >= 1 and Ns >= m");
        }
        if self.l >= self.ns {
            return bad("L zero-sum orthogonal rows need Ns > L");
        }
        if !(self.pulse_duration_s > 0.0 && self.dt > 0.0 && self.prf_hz > 0.0) {
            return bad("pulse duration, dt and prf must be positive");
        }
        let n = self.basis().sample_count(self.dt);
        if n < 2 {
            return bad("pulse duration is shorter than two samples");
        }
        if self.nfft < n {
            return bad("nfft must cover the pulse samples");
        }
        if ga.population < 2 || ga.generations == 0 || ga.tournament == 0 {
            return bad("population >= 2, generations >= 1 and tournament >= 1 required");
        }
        if ga.elitism > ga.population {
            return bad("elitism exceeds population");
        }
        if !(ga.sigma_start > 0.0 && ga.sigma_end > 0.0) {
            return bad("mutation sigmas must be positive");
        }
        if !(0.0..=1.0).contains(&ga.mutation_rate) || !(0.0..=1.0).contains(&ga.crossover_rate) {
            return bad("mutation and crossover rates must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Constraint measurements of one candidate pulse set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    /// Worst `density − limit` over all pulses and bins, dB.
    pub mask_violation_db: f64,
    pub max_abs_row_sum: f64,
    pub max_abs_offdiag: f64,
    pub effectiveness: Vec<f64>,
    pub objective: f64,
    pub feasible: bool,
}

impl std::fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "mask {:+.3} dB, max |row sum| {:.2e}, max |offdiag| {:.4}, objective {:.4}",
            self.mask_violation_db, self.max_abs_row_sum, self.max_abs_offdiag, self.objective
        )
    }
}

impl ConstraintReport {
    /// Measures `ps` with the public PSD and Gram routines.
    pub fn measure(ps: &PulseSet, cfg: &DesignConfig) -> Result<Self, DesignError> {
        let mut violation = f64::NEG_INFINITY;
        for p in ps.pulses() {
            let v = mask_violation(&psd(p, cfg.nfft, cfg.prf_hz)?, &cfg.mask)?;
            violation = violation.max(v);
        }
        let max_abs_row_sum = ps.row_sums().iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let g = orthogonality_matrix(ps);
        let mut max_abs_offdiag = 0.0f64;
        for (l, row) in g.iter().enumerate() {
            for (p, v) in row.iter().enumerate() {
                if l != p {
                    max_abs_offdiag = max_abs_offdiag.max(v.abs());
                }
            }
        }
        let effectiveness = match ps.effectiveness(&cfg.mask, cfg.nfft, cfg.prf_hz) {
            Ok(x) => x,
            Err(SpectrumError::ZeroMaskIntegral) => vec![0.0; ps.len()],
            Err(e) => return Err(e.into()),
        };
        let objective = effectiveness.iter().sum();
        let tol = &cfg.tolerances;
        let feasible = violation <= tol.mask_db
            && max_abs_row_sum < tol.row_sum
            && max_abs_offdiag <= tol.orthogonality
            && g.iter().enumerate().all(|(l, row)| row[l].is_finite());
        Ok(Self { mask_violation_db: violation, max_abs_row_sum, max_abs_offdiag, effectiveness, objective, feasible })
    }
}

/// Output of a successful [`design_pulses`] run.
#[derive(Debug, Clone)]
pub struct DesignRun {
    pub pulse_set: PulseSet,
    pub report: ConstraintReport,
    /// Best feasible objective `Σ ξ_l` after each generation, starting with
    /// the initial population; `None` until a feasible individual exists.
    pub history: Vec<Option<f64>>,
}

impl DesignRun {
    /// CSV `generation,best_feasible_objective`; empty field before the first
    /// feasible individual.
    pub fn write_history_csv<W: std::io::Write>(&self, writer: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
        wtr.write_record(["generation", "best_feasible_objective"]).map_err(to_io)?;
        for (g, v) in self.history.iter().enumerate() {
            let v = v.map(|x| format!("{x:.16e}")).unwrap_or_default();
            wtr.write_record([g.to_string(), v]).map_err(to_io)?;
        }
        wtr.flush()
    }
}

/// Precomputed linear maps from coefficients to spectra and energies.
struct Problem {
    l: usize,
    ns: usize,
    /// `bins × ns`, row-major: spectrum of each basis function, `dt·DFT`.
    basis_spectra: Vec<Complex64>,
    /// Per-bin factor turning `|X|²` into linear mW/MHz.
    fold: Vec<f64>,
    /// Mask limit per bin; `None` outside the mask.
    limit_db: Vec<Option<f64>>,
    mask_sum: f64,
    /// `dt·ΦᵀΦ`: energy quadratic form of the basis.
    gram: DMatrix<f64>,
    /// Initial gene scale.
    c_ref: f64,
    weights: PenaltyWeights,
}

#[derive(Debug, Clone)]
struct Evaluation {
    objective: f64,
    violation: f64,
    row_sum: f64,
    max_offdiag: f64,
    fitness: f64,
}

impl Evaluation {
    fn feasible(&self, tol: &Tolerances) -> bool {
        self.violation <= tol.mask_db && self.row_sum < tol.row_sum && self.max_offdiag <= tol.orthogonality
    }
}

#[derive(Debug, Clone)]
struct Individual {
    genes: DMatrix<f64>,
    eval: Evaluation,
}

impl Problem {
    fn new(cfg: &DesignConfig) -> Self {
        let basis = cfg.basis();
        let phi = basis.sampled(cfg.dt);
        let n = phi[0].len();
        let nfft = cfg.nfft;
        let bins = nfft / 2 + 1;
        let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
        let mut basis_spectra = vec![Complex64::default(); bins * basis.ns];
        for (k, row) in phi.iter().enumerate() {
            let mut buf: Vec<Complex64> = vec![Complex64::default(); nfft];
            for (b, &s) in buf.iter_mut().zip(row) {
                *b = Complex64::new(s, 0.0);
            }
            fft.process(&mut buf);
            for j in 0..bins {
                basis_spectra[j * basis.ns + k] = buf[j] * cfg.dt;
            }
        }
        let df = 1.0 / (nfft as f64 * cfg.dt);
        let fold: Vec<f64> = (0..bins)
            .map(|j| {
                let w = if j == 0 || (nfft % 2 == 0 && j == nfft / 2) { 1.0 } else { 2.0 };
                w * cfg.prf_hz * 1e6
            })
            .collect();
        let limit_db: Vec<Option<f64>> = (0..bins).map(|j| cfg.mask.limit_at(j as f64 * df)).collect();
        let mask_sum: f64 = limit_db.iter().flatten().map(|&d| db_to_linear(d)).sum();
        let gram = DMatrix::from_fn(basis.ns, basis.ns, |a, b| {
            (0..n).map(|i| phi[a][i] * phi[b][i]).sum::<f64>() * cfg.dt
        });
        // Energy one pulse would carry if it filled the mask exactly.
        let mask_energy = mask_sum * df / (cfg.prf_hz * 1e6);
        let c_ref = if mask_energy > 0.0 {
            (mask_energy / gram.trace()).sqrt()
        } else {
            (1.0 / gram.trace()).sqrt()
        };
        Self {
            l: cfg.l,
            ns: basis.ns,
            basis_spectra,
            fold,
            limit_db,
            mask_sum,
            gram,
            c_ref,
            weights: cfg.ga.penalty,
        }
    }

    /// Linear PSD of row `l` at every bin.
    fn row_psd(&self, genes: &DMatrix<f64>, l: usize) -> Vec<f64> {
        self.fold
            .iter()
            .enumerate()
            .map(|(j, &fold)| {
                let a = &self.basis_spectra[j * self.ns..(j + 1) * self.ns];
                let x: Complex64 = a.iter().enumerate().map(|(k, &z)| z * genes[(l, k)]).sum();
                fold * x.norm_sqr()
            })
            .collect()
    }

    fn violation_of(&self, p: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (&lin, lim) in p.iter().zip(&self.limit_db) {
            let Some(lim) = *lim else { continue };
            if lin <= 0.0 {
                continue;
            }
            worst = worst.max(10.0 * lin.log10() - lim);
        }
        worst
    }

    fn max_violation(&self, genes: &DMatrix<f64>) -> f64 {
        (0..self.l)
            .map(|l| self.violation_of(&self.row_psd(genes, l)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn evaluate(&self, genes: &DMatrix<f64>) -> Evaluation {
        let mut objective = 0.0;
        let mut violation = f64::NEG_INFINITY;
        for l in 0..self.l {
            let p = self.row_psd(genes, l);
            violation = violation.max(self.violation_of(&p));
            if self.mask_sum > 0.0 {
                let masked: f64 = p
                    .iter()
                    .zip(&self.limit_db)
                    .filter(|(_, lim)| lim.is_some())
                    .map(|(v, _)| v)
                    .sum();
                objective += masked / self.mask_sum;
            }
        }
        let row_sum = genes.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
        let row_abs_total: f64 = genes.row_iter().map(|r| r.sum().abs()).sum();
        let g = genes * &self.gram * genes.transpose();
        let es = g.trace() / self.l as f64;
        let (ortho_err, max_offdiag) = if es > 0.0 {
            let norm = &g / es - DMatrix::identity(self.l, self.l);
            let mut off = 0.0f64;
            for a in 0..self.l {
                for b in 0..self.l {
                    if a != b {
                        off = off.max((g[(a, b)] / es).abs());
                    }
                }
            }
            (norm.norm_squared(), off)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let w = &self.weights;
        let excess = violation.max(0.0);
        let fitness = objective
            - w.mask * excess * excess
            - w.row_sum * row_abs_total / self.c_ref
            - w.orthogonality * ortho_err;
        Evaluation {
            objective,
            violation,
            row_sum,
            max_offdiag,
            fitness: if fitness.is_nan() { f64::NEG_INFINITY } else { fitness },
        }
    }

    /// Projects rows onto the zero-sum hyperplane, symmetrically
    /// orthogonalizes them under the energy inner product at their mean
    /// energy, then scales the set so the worst bin touches the mask.
    fn repair(&self, genes: &mut DMatrix<f64>) {
        for mut row in genes.row_iter_mut() {
            let mean = row.sum() / self.ns as f64;
            row.add_scalar_mut(-mean);
        }
        let g = &*genes * &self.gram * genes.transpose();
        let es = g.trace() / self.l as f64;
        if es > 0.0 && es.is_finite() {
            let eig = SymmetricEigen::new(g);
            let top = eig.eigenvalues.max();
            let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.max(top * 1e-12).sqrt());
            let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
            *genes = w * &*genes * es.sqrt();
            // The orthogonal combination keeps row sums at zero up to rounding;
            // project once more so they stay at machine precision.
            for mut row in genes.row_iter_mut() {
                let mean = row.sum() / self.ns as f64;
                row.add_scalar_mut(-mean);
            }
        }
        let v = self.max_violation(genes);
        if v.is_finite() {
            *genes *= 10f64.powf(-v / 20.0);
        }
    }

    fn random_genes(&self, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(self.l, self.ns, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * self.c_ref
        })
    }

    fn make(&self, mut genes: DMatrix<f64>) -> Individual {
        self.repair(&mut genes);
        let eval = self.evaluate(&genes);
        Individual { genes, eval }
    }
}

fn evaluate_all(problem: &Problem, batch: Vec<DMatrix<f64>>, parallel: bool) -> Vec<Individual> {
    if parallel {
        batch.into_par_iter().map(|g| problem.make(g)).collect()
    } else {
        batch.into_iter().map(|g| problem.make(g)).collect()
    }
}

fn tournament<'a>(pop: &'a [Individual], k: usize, rng: &mut ChaCha8Rng) -> &'a Individual {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..k {
        let c = &pop[rng.random_range(0..pop.len())];
        if c.eval.fitness > best.eval.fitness {
            best = c;
        }
    }
    best
}

fn best_feasible<'a>(pop: &'a [Individual], tol: &Tolerances) -> Option<&'a Individual> {
    pop.iter()
        .filter(|i| i.eval.feasible(tol))
        .max_by(|a, b| a.eval.objective.total_cmp(&b.eval.objective))
}

/// Designs `L` zero-sum, mutually orthogonal, mask-compliant pulses that
/// maximize the summed spectral effectiveness.
///
/// Genetic algorithm with tournament selection, blend crossover, annealed
/// Gaussian mutation and elitism. Every offspring is repaired (zero-sum
/// projection, symmetric orthogonalization, scaling onto the mask) before its
/// penalty fitness is evaluated, and the repaired genes replace the raw ones.
/// The result is a pure function of `cfg`.
pub fn design_pulses(cfg: &DesignConfig) -> Result<DesignRun, DesignError> {
    cfg.validate()?;
    let problem = Problem::new(cfg);
    let ga = &cfg.ga;
    let tol = &cfg.tolerances;
    let mut rng = ChaCha8Rng::seed_from_u64(ga.seed);

    let initial: Vec<DMatrix<f64>> = (0..ga.population).map(|_| problem.random_genes(&mut rng)).collect();
    let mut pop = evaluate_all(&problem, initial, ga.parallel);
    let mut history = vec![best_feasible(&pop, tol).map(|i| i.eval.objective)];

    for gen in 0..ga.generations {
        let progress = if ga.generations > 1 { gen as f64 / (ga.generations - 1) as f64 } else { 1.0 };
        let sigma = ga.sigma_start * (ga.sigma_end / ga.sigma_start).powf(progress) * problem.c_ref;

        let mut elites: Vec<Individual> = Vec::with_capacity(ga.elitism);
        if ga.elitism > 0 {
            if let Some(b) = best_feasible(&pop, tol) {
                elites.push(b.clone());
            }
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&a, &b| pop[b].eval.fitness.total_cmp(&pop[a].eval.fitness));
            for i in order {
                if elites.len() >= ga.elitism {
                    break;
                }
                if !elites.iter().any(|e| e.genes == pop[i].genes) {
                    elites.push(pop[i].clone());
                }
            }
        }

        let mut children = Vec::with_capacity(ga.population - elites.len());
        while children.len() + elites.len() < ga.population {
            let a = tournament(&pop, ga.tournament, &mut rng);
            let b = tournament(&pop, ga.tournament, &mut rng);
            let mut child = a.genes.clone();
            if rng.random::<f64>() < ga.crossover_rate {
                for l in 0..problem.l {
                    let alpha: f64 = rng.random_range(-0.25..1.25);
                    for k in 0..problem.ns {
                        child[(l, k)] = alpha * a.genes[(l, k)] + (1.0 - alpha) * b.genes[(l, k)];
                    }
                }
            }
            for x in child.iter_mut() {
                if rng.random::<f64>() < ga.mutation_rate {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x += sigma * z;
                }
            }
            children.push(child);
        }
        let mut next = elites;
        next.extend(evaluate_all(&problem, children, ga.parallel));
        pop = next;
        history.push(best_feasible(&pop, tol).map(|i| i.eval.objective));
    }

    let winner = best_feasible(&pop, tol)
        .or_else(|| pop.iter().max_by(|a, b| a.eval.fitness.total_cmp(&b.eval.fitness)))
        .expect("population is nonempty");
    let mut genes = winner.genes.clone();
    if winner.eval.violation > 0.0 && winner.eval.violation.is_finite() {
        genes *= 10f64.powf(-winner.eval.violation / 20.0);
    }
    let coeffs: Vec<Vec<f64>> = genes.row_iter().map(|r| r.iter().copied().collect()).collect();
    let pulse_set = PulseSet::new(cfg.basis(), coeffs, cfg.dt)?;
    let report = ConstraintReport::measure(&pulse_set, cfg)?;
    if !report.feasible || !winner.eval.feasible(tol) {
        return Err(DesignError::Infeasible {
            generations: ga.generations,
            best: Box::new(pulse_set),
            report,
        });
    }
    Ok(DesignRun { pulse_set, report, history })
}
