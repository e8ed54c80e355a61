//! Train one warm-up per seed and branch into every positive-sampling
//! strategy, printing final metrics. Usage: `compare [simclr|dino] [seeds]`.

use std::time::Instant;

use ssps_lab::nncore::CheckpointFile;
use ssps_lab::trainer::{
    branch_trainer, to_checkpoint, Experiment, Framework, PosSampling, RunConfig, Trainer,
};

fn main() -> ssps_lab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let framework = match args.get(1).map(String::as_str) {
        Some("dino") => Framework::Dino,
        _ => Framework::Simclr,
    };
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = match std::env::var("SSPS_CONFIG") {
        Ok(path) => RunConfig::from_file(path.as_ref())?,
        Err(_) => RunConfig::default_for(framework),
    };
    let data = Experiment::build(&cfg)?;
    for seed in 0..seeds {
        let start = Instant::now();
        let mut c = cfg.clone();
        c.run.seed = seed;
        let mut warm = Trainer::with_experiment(c.clone(), data.clone())?;
        while warm.epoch < c.run.epochs_warmup {
            let r = warm.train_epoch()?;
            if warm.epoch % 10 == 0 {
                let m = warm.evaluate()?;
                println!(
                    "seed {seed} warm epoch {} loss {:.4} eer {:.4} intra {:.4}",
                    r.epoch, r.mean_loss, m.eer, m.intra_speaker_variance
                );
            }
        }
        let file: CheckpointFile = to_checkpoint(&warm);
        for pos in [PosSampling::Ssl, PosSampling::Ssps, PosSampling::Supervised] {
            let remaining = c.run.epochs_total - c.run.epochs_warmup;
            let mut t = branch_trainer(&file, pos, remaining, |_| {}, Some(data.clone()))?;
            let mut last = None;
            while t.epoch < c.run.epochs_total {
                last = Some(t.train_epoch()?);
            }
            let m = t.evaluate()?;
            let d = last.and_then(|r| r.diagnostics);
            println!(
                "seed {seed} {pos:<10} eer {:.4} mindcf {:.4} intra {:.4} inter {:.4} fallback {:?} purity {:?} precision {:?}",
                m.eer,
                m.min_dcf,
                m.intra_speaker_variance,
                m.inter_speaker_variance,
                d.as_ref().map(|d| d.fallback_rate),
                d.as_ref().map(|d| d.speaker_purity),
                d.as_ref().map(|d| d.positive_speaker_precision),
            );
        }
        println!("seed {seed} took {:.1}s", start.elapsed().as_secs_f64());
    }
    Ok(())
}
