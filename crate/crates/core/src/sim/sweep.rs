use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trial::TrialResult;
use super::{SimError, Simulation};
use crate::seed::trial_seed;

/// Aggregates at one SNR point. NMSE columns: ToA by `Tsym²`, range and
/// position by the squared room diagonal. Failed fixes are excluded from the
/// position columns and counted in `fix_failure_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub trials: usize,
    pub fixes: usize,
    pub fix_failure_rate: f64,
    pub toa_nmse: f64,
    pub toa_nmse_se: f64,
    pub range_nmse: f64,
    pub range_nmse_se: f64,
    pub mean_position_error_m: f64,
    pub position_error_se_m: f64,
    pub position_nmse: f64,
}

const HEADER: [&str; 11] = [
    "snr_db",
    "trials",
    "fixes",
    "fix_failure_rate",
    "toa_nmse",
    "toa_nmse_se",
    "range_nmse",
    "range_nmse_se",
    "mean_position_error_m",
    "position_error_se_m",
    "position_nmse",
];

/// Sweep rows ordered by SNR grid position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Csv(e.to_string())
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                fmt_f64(r.snr_db),
                r.trials.to_string(),
                r.fixes.to_string(),
                fmt_f64(r.fix_failure_rate),
                fmt_f64(r.toa_nmse),
                fmt_f64(r.toa_nmse_se),
                fmt_f64(r.range_nmse),
                fmt_f64(r.range_nmse_se),
                fmt_f64(r.mean_position_error_m),
                fmt_f64(r.position_error_se_m),
                fmt_f64(r.position_nmse),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| SimError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SimError> {
        let mut rd = csv::Reader::from_reader(reader);
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.iter().ne(HEADER.iter().copied()) {
            return Err(SimError::Csv(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let f = |i: usize| -> Result<f64, SimError> {
                rec[i].parse().map_err(|_| SimError::Csv(format!("bad number {:?} in column {}", &rec[i], HEADER[i])))
            };
            let u = |i: usize| -> Result<usize, SimError> {
                rec[i].parse().map_err(|_| SimError::Csv(format!("bad count {:?} in column {}", &rec[i], HEADER[i])))
            };
            rows.push(SweepRow {
                snr_db: f(0)?,
                trials: u(1)?,
                fixes: u(2)?,
                fix_failure_rate: f(3)?,
                toa_nmse: f(4)?,
                toa_nmse_se: f(5)?,
                range_nmse: f(6)?,
                range_nmse_se: f(7)?,
                mean_position_error_m: f(8)?,
                position_error_se_m: f(9)?,
                position_nmse: f(10)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let file = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let file = std::fs::File::open(path).map_err(|e| SimError::io(path, e))?;
        Self::read_csv(file)
    }
}

/// Mean and standard error of the mean; NaN for an empty sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Aggregates trials that share one SNR.
pub fn aggregate(snr_db: f64, trials: &[TrialResult], tsym: f64, diagonal: f64) -> SweepRow {
    let per_trial = |f: &dyn Fn(&super::trial::LinkEstimate) -> f64| -> Vec<f64> {
        trials
            .iter()
            .filter_map(|t| {
                let v: Vec<f64> = t.links.iter().filter_map(|l| l.estimate.as_ref().map(f)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    };
    let toa = per_trial(&|e| (e.toa_err_s / tsym).powi(2));
    let range = per_trial(&|e| (e.range_err_m / diagonal).powi(2));
    let errors: Vec<f64> = trials.iter().filter_map(|t| t.position_error_m).collect();
    let (toa_nmse, toa_nmse_se) = mean_se(&toa);
    let (range_nmse, range_nmse_se) = mean_se(&range);
    let (mean_err, err_se) = mean_se(&errors);
    let sq: Vec<f64> = errors.iter().map(|e| (e / diagonal).powi(2)).collect();
    let n = trials.len();
    SweepRow {
        snr_db,
        trials: n,
        fixes: errors.len(),
        fix_failure_rate: if n == 0 { f64::NAN } else { (n - errors.len()) as f64 / n as f64 },
        toa_nmse,
        toa_nmse_se,
        range_nmse,
        range_nmse_se,
        mean_position_error_m: mean_err,
        position_error_se_m: err_se,
        position_nmse: mean_se(&sq).0,
    }
}

/// Aggregated table plus every trial, ordered by (SNR index, trial index).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub table: SweepTable,
    pub trials: Vec<TrialResult>,
}

impl SweepOutput {
    /// `snr_db,trial,anchor,distance_m,toa_err_s,range_err_m` per link;
    /// failed links have empty error fields.
    pub fn write_links_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["snr_db", "trial", "anchor", "distance_m", "toa_err_s", "range_err_m"])
            .map_err(csv_err)?;
        for t in &self.trials {
            for l in &t.links {
                let (te, re) = match &l.estimate {
                    Some(e) => (fmt_f64(e.toa_err_s), fmt_f64(e.range_err_m)),
                    None => (String::new(), String::new()),
                };
                w.write_record([fmt_f64(t.snr_db), t.trial.to_string(), l.anchor_id.clone(), fmt_f64(l.distance_m), te, re])
                    .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| SimError::Csv(e.to_string()))?;
        Ok(())
    }

    /// One row per trial with the truth, the selected fix and its error.
    pub fn write_fixes_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "snr_db", "trial", "true_x", "true_y", "true_z", "x", "y", "z", "bias_m", "residual_m", "err_m", "failure",
        ])
        .map_err(csv_err)?;
        for t in &self.trials {
            let mut rec = vec![fmt_f64(t.snr_db), t.trial.to_string()];
            rec.extend(t.truth.iter().map(|&v| fmt_f64(v)));
            match (&t.fix, t.position_error_m) {
                (Some(f), Some(err)) => {
                    rec.extend(f.position.iter().map(|&v| fmt_f64(v)));
                    rec.extend([fmt_f64(f.clock_bias), fmt_f64(f.residual_rms), fmt_f64(err)]);
                }
                _ => rec.extend(std::iter::repeat_n(String::new(), 6)),
            }
            rec.push(t.failure.clone().unwrap_or_default());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| SimError::Csv(e.to_string()))?;
        Ok(())
    }

    /// Writes `sweep.csv`, `links.csv` and `fixes.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        self.table.save(&dir.join("sweep.csv"))?;
        let create = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| SimError::io(&p, e))
        };
        self.write_links_csv(create("links.csv")?)?;
        self.write_fixes_csv(create("fixes.csv")?)
    }
}

impl Simulation {
    /// Runs the configured sweep, in parallel if the config says so.
    pub fn sweep(&self) -> Result<SweepOutput, SimError> {
        self.sweep_with(self.config.parallel)
    }

    /// Every (SNR, trial) pair is seeded independently from the master seed,
    /// and results are gathered in grid order, so `parallel` does not change
    /// the output.
    pub fn sweep_with(&self, parallel: bool) -> Result<SweepOutput, SimError> {
        let cfg = &self.config;
        let jobs: Vec<(usize, usize)> = (0..cfg.snr_db.len())
            .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
            .collect();
        let run = |&(s, t): &(usize, usize)| {
            self.run_trial(t, cfg.snr_db[s], trial_seed(cfg.seed, s as u32, t as u32))
        };
        let trials: Vec<TrialResult> = if parallel {
            jobs.par_iter().map(run).collect::<Result<_, _>>()?
        } else {
            jobs.iter().map(run).collect::<Result<_, _>>()?
        };
        let diagonal = cfg.room.diagonal();
        let rows = trials
            .chunks(cfg.trials)
            .zip(&cfg.snr_db)
            .map(|(chunk, &snr)| aggregate(snr, chunk, cfg.symbol_duration_s, diagonal))
            .collect();
        Ok(SweepOutput { table: SweepTable { rows }, trials })
    }
}
