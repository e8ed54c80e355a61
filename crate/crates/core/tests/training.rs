use std::path::Path;

use ssps_lab::nncore::CheckpointFile;
use ssps_lab::parallel::set_force_sequential;
use ssps_lab::trainer::{
    self, checkpoint_name, from_checkpoint, run_sweep, to_checkpoint, Framework, PosSampling,
    RunConfig, StepSampling, SweepGrid, Trainer,
};
use ssps_lab::Error;

fn tiny(framework: Framework, pos: PosSampling) -> RunConfig {
    let mut cfg = RunConfig::default_for(framework);
    cfg.corpus.n_speakers = 6;
    cfg.corpus.recordings_per_speaker = 3;
    cfg.corpus.utterances_per_recording = 4;
    cfg.eval.speakers = 4;
    cfg.eval.n_target = 60;
    cfg.eval.n_nontarget = 60;
    cfg.ssps.k = 18;
    cfg.run.batch_size = 12;
    cfg.run.epochs_total = 4;
    cfg.run.epochs_warmup = 2;
    cfg.run.eval_every = 1;
    cfg.run.checkpoint_every = 2;
    cfg.run.pos_sampling = pos;
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn sequential_run_matches_parallel_run() {
    for framework in [Framework::Simclr, Framework::Dino] {
        let cfg = tiny(framework, PosSampling::Ssps);
        let run = |seq: bool| {
            set_force_sequential(seq);
            let mut t = Trainer::new(cfg.clone()).unwrap();
            for _ in 0..cfg.run.epochs_total {
                t.train_epoch().unwrap();
            }
            set_force_sequential(false);
            to_checkpoint(&t)
        };
        assert_eq!(run(true), run(false), "{framework}");
    }
}

#[test]
fn zero_epoch_resume_reproduces_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = trainer::train(
        tiny(Framework::Dino, PosSampling::Ssps),
        None,
        Some(dir.path()),
    )
    .unwrap();
    let resumed = trainer::resume(
        &out.final_checkpoint,
        PosSampling::Ssps,
        0,
        Some(&dir.path().join("again")),
    )
    .unwrap();
    assert!(resumed.metrics.is_empty());
    assert_eq!(read(&out.final_checkpoint), read(&resumed.final_checkpoint));
}

#[test]
fn checkpoint_round_trip_restores_state() {
    let mut t = Trainer::new(tiny(Framework::Simclr, PosSampling::Ssps)).unwrap();
    for _ in 0..3 {
        t.train_epoch().unwrap();
    }
    let file = to_checkpoint(&t);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    file.write(&path).unwrap();
    let loaded = CheckpointFile::read(&path).unwrap();
    let mut back = from_checkpoint(&loaded, t.cfg.clone(), None).unwrap();
    assert_eq!(to_checkpoint(&back), file);
    // Continuing both gives the same next epoch.
    t.train_epoch().unwrap();
    back.train_epoch().unwrap();
    assert_eq!(to_checkpoint(&t), to_checkpoint(&back));
}

#[test]
fn run_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Framework::Simclr, PosSampling::Ssps);
    let out = trainer::train(cfg, Some(9), Some(dir.path())).unwrap();
    for name in [
        "config.toml",
        "trials.txt",
        "corpus.txt",
        "metrics.jsonl",
        "diagnostics.jsonl",
        "train_log.jsonl",
        &checkpoint_name(0),
        &checkpoint_name(2),
        &checkpoint_name(4),
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert_eq!(out.metrics.len(), 4);
    // Pseudo-positive sampling starts after the two warm-up epochs.
    let lines: Vec<serde_json::Value> = metrics
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines[0]["fallback_rate"].is_null());
    assert!(lines[3]["fallback_rate"].is_f64());
    let diag = std::fs::read_to_string(dir.path().join("diagnostics.jsonl")).unwrap();
    assert_eq!(diag.lines().count(), 2);
    let written = RunConfig::from_file(&dir.path().join("config.toml")).unwrap();
    assert_eq!(written.run.seed, 9);
}

#[test]
fn supervised_positives_share_speaker_across_recordings() {
    let mut t = Trainer::new(tiny(Framework::Simclr, PosSampling::Supervised)).unwrap();
    let batch: Vec<usize> = (0..12).collect();
    let report = t.train_step(&batch, StepSampling::Supervised).unwrap();
    assert_eq!(report.found, 12);
    assert_eq!(report.found_same_speaker, 12);
}

#[test]
fn ssps_without_clustering_falls_back_everywhere() {
    let mut t = Trainer::new(tiny(Framework::Dino, PosSampling::Ssps)).unwrap();
    let batch: Vec<usize> = (0..12).collect();
    let report = t.train_step(&batch, StepSampling::SspsUnclustered).unwrap();
    assert_eq!(report.n_fallbacks(), 12);
    assert_eq!(report.found, 0);
}

#[test]
fn diverging_run_stops_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Framework::Simclr, PosSampling::Ssl);
    cfg.optim.lr = 1e300;
    cfg.run.output_dir = dir.path().to_path_buf();
    let err = (|| {
        let mut t = Trainer::new(cfg)?;
        for _ in 0..4 {
            t.train_epoch()?;
        }
        Ok::<_, Error>(())
    })()
    .unwrap_err();
    let Error::NonFiniteLoss { checkpoint, .. } = err else {
        panic!("unexpected error: {err}");
    };
    assert!(checkpoint.exists());
    assert!(checkpoint.starts_with(dir.path()));
}

#[test]
fn sweep_writes_summary_with_means() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base.toml");
    let mut cfg = tiny(Framework::Simclr, PosSampling::Ssl);
    cfg.run.epochs_total = 3;
    std::fs::write(&base, cfg.to_toml_string()).unwrap();
    let grid = SweepGrid {
        base: Some(base),
        output_dir: dir.path().join("sweep"),
        frameworks: vec![Framework::Simclr],
        pos_sampling: vec![PosSampling::Ssl, PosSampling::Ssps],
        k: vec![6, 18],
        m: vec![0],
        seeds: vec![0, 1],
    };
    let rows = run_sweep(&grid).unwrap();
    assert_eq!(rows.len(), 3 * 2 + 3);
    let csv = std::fs::read_to_string(dir.path().join("sweep/summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "framework,pos_sampling,k,m,seed,eer,min_dcf,intra_var,inter_var"
    );
    assert_eq!(lines.len(), 10);
    assert_eq!(lines.iter().filter(|l| l.contains(",mean,")).count(), 3);
    assert!(dir
        .path()
        .join("sweep/simclr_s0/warmup")
        .join(checkpoint_name(2))
        .exists());
    assert!(dir
        .path()
        .join("sweep/simclr_s1/ssps_k6_m0")
        .join(checkpoint_name(3))
        .exists());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let simclr = RunConfig::from_file(&root.join("simclr.toml")).unwrap();
    assert_eq!(simclr.run.framework, Framework::Simclr);
    let dino = RunConfig::from_file(&root.join("dino.toml")).unwrap();
    assert_eq!(dino.run.framework, Framework::Dino);
    assert_eq!(dino.ssps.k, dino.corpus.n_recordings());
    let grid = SweepGrid::from_file(&root.join("grid.toml")).unwrap();
    assert_eq!(grid.frameworks.len(), 2);
}
