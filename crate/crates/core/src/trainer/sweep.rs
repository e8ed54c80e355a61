//! Grid sweeps. Each (framework, seed) pair trains its same-utterance
//! warm-up once; every positive-sampling variant branches from that
//! checkpoint.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Framework, PosSampling, RunConfig};
use super::{branch_trainer, drive, to_checkpoint, Experiment, Trainer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Base run configuration; framework defaults when absent.
    #[serde(default)]
    pub base: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub frameworks: Vec<Framework>,
    pub pos_sampling: Vec<PosSampling>,
    /// Cluster counts tried for SSPS; the base value when empty.
    #[serde(default)]
    pub k: Vec<usize>,
    /// Neighbor counts tried for SSPS; the base value when empty.
    #[serde(default)]
    pub m: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut grid: SweepGrid = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        if let (Some(base), Some(parent)) = (&grid.base, path.parent()) {
            if base.is_relative() {
                grid.base = Some(parent.join(base));
            }
        }
        Ok(grid)
    }

    fn config_for(&self, framework: Framework) -> Result<RunConfig> {
        let Some(base) = &self.base else {
            return Ok(RunConfig::default_for(framework));
        };
        let text = std::fs::read_to_string(base).map_err(|e| Error::io(base, e))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let run = table
            .entry("run")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let toml::Value::Table(run) = run else {
            return Err(Error::Parse("`run` must be a table".into()));
        };
        run.insert(
            "framework".into(),
            toml::Value::String(framework.to_string()),
        );
        RunConfig::from_toml_str(&toml::to_string(&table).map_err(|e| Error::Parse(e.to_string()))?)
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub framework: Framework,
    pub pos_sampling: PosSampling,
    pub k: Option<usize>,
    pub m: Option<usize>,
    /// `None` for the across-seed mean.
    pub seed: Option<u64>,
    pub eer: f64,
    pub min_dcf: f64,
    pub intra_var: f64,
    pub inter_var: f64,
}

fn variants(
    grid: &SweepGrid,
    base: &RunConfig,
) -> Vec<(PosSampling, Option<usize>, Option<usize>)> {
    let ks = if grid.k.is_empty() {
        vec![base.ssps.k]
    } else {
        grid.k.clone()
    };
    let ms = if grid.m.is_empty() {
        vec![base.ssps.m]
    } else {
        grid.m.clone()
    };
    let mut out = Vec::new();
    for &pos in &grid.pos_sampling {
        if pos == PosSampling::Ssps {
            for &k in &ks {
                for &m in &ms {
                    out.push((pos, Some(k), Some(m)));
                }
            }
        } else {
            out.push((pos, None, None));
        }
    }
    out
}

fn variant_name(pos: PosSampling, k: Option<usize>, m: Option<usize>) -> String {
    match (k, m) {
        (Some(k), Some(m)) => format!("{pos}_k{k}_m{m}"),
        _ => pos.to_string(),
    }
}

/// Run every grid point and write `summary.csv` into the output directory.
pub fn run_sweep(grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &framework in &grid.frameworks {
        let mut base = grid.config_for(framework)?;
        base.run.pos_sampling = PosSampling::Ssl;
        let data = Experiment::build(&base)?;
        let remaining = base.run.epochs_total - base.run.epochs_warmup;
        let warmup_epochs = base.run.epochs_warmup;
        for &seed in &grid.seeds {
            let mut cfg = base.clone();
            cfg.run.seed = seed;
            let run_dir = grid.output_dir.join(format!("{framework}_s{seed}"));
            let mut warm = Trainer::with_experiment(cfg, data.clone())?;
            drive(&mut warm, &run_dir.join("warmup"), warmup_epochs)?;
            let file = to_checkpoint(&warm);
            for (pos, k, m) in variants(grid, &base) {
                let mut t = branch_trainer(
                    &file,
                    pos,
                    remaining,
                    |c| {
                        if let (Some(k), Some(m)) = (k, m) {
                            c.ssps.k = k;
                            c.ssps.m = m;
                        }
                    },
                    Some(data.clone()),
                )?;
                if let Some(cap) = k.filter(|_| t.cfg.ssps.positive_queue_capacity.is_none()) {
                    t.positive_queue = resized(&t.positive_queue, cap)?;
                }
                drive(
                    &mut t,
                    &run_dir.join(variant_name(pos, k, m)),
                    warmup_epochs + remaining,
                )?;
                let report = t.evaluate()?;
                rows.push(SweepRow {
                    framework,
                    pos_sampling: pos,
                    k,
                    m,
                    seed: Some(seed),
                    eer: report.eer,
                    min_dcf: report.min_dcf,
                    intra_var: report.intra_speaker_variance,
                    inter_var: report.inter_speaker_variance,
                });
            }
        }
    }
    let means = mean_rows(&rows);
    rows.extend(means);
    std::fs::create_dir_all(&grid.output_dir).map_err(|e| Error::io(&grid.output_dir, e))?;
    write_summary(&rows, &grid.output_dir.join("summary.csv"))?;
    Ok(rows)
}

/// The queue rebuilt at a new capacity, keeping the newest entries.
fn resized(q: &crate::ssps::MemoryQueue, capacity: usize) -> Result<crate::ssps::MemoryQueue> {
    let mut out = crate::ssps::MemoryQueue::new(capacity, q.dim());
    for (id, v) in q.entries() {
        out.enqueue(id, v)?;
    }
    Ok(out)
}

fn mean_rows(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut out: Vec<(SweepRow, usize)> = Vec::new();
    for r in rows {
        let key = (r.framework, r.pos_sampling, r.k, r.m);
        match out
            .iter_mut()
            .find(|(o, _)| (o.framework, o.pos_sampling, o.k, o.m) == key)
        {
            Some((acc, n)) => {
                acc.eer += r.eer;
                acc.min_dcf += r.min_dcf;
                acc.intra_var += r.intra_var;
                acc.inter_var += r.inter_var;
                *n += 1;
            }
            None => out.push((
                SweepRow {
                    seed: None,
                    ..r.clone()
                },
                1,
            )),
        }
    }
    out.into_iter()
        .map(|(mut r, n)| {
            let n = n as f64;
            r.eer /= n;
            r.min_dcf /= n;
            r.intra_var /= n;
            r.inter_var /= n;
            r
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |x| x.to_string())
}

pub fn write_summary(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let io = |e| Error::io(path, e);
    writeln!(
        f,
        "framework,pos_sampling,k,m,seed,eer,min_dcf,intra_var,inter_var"
    )
    .map_err(io)?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.framework,
            r.pos_sampling,
            opt(r.k, ""),
            opt(r.m, ""),
            opt(r.seed, "mean"),
            r.eer,
            r.min_dcf,
            r.intra_var,
            r.inter_var
        )
        .map_err(io)?;
    }
    Ok(())
}
