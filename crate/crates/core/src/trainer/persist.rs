//! Conversion between [`Trainer`] state and checkpoint files.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::state::{Experiment, Trainer};
use crate::error::{Error, Result};
use crate::nncore::{CheckpointFile, Network};
use crate::ssps::MemoryQueue;

const FORMAT: &str = "ssps-lab-run";

fn rng_to_string(rng: &ChaCha8Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed}:{}:{}", rng.get_stream(), rng.get_word_pos())
}

fn rng_from_string(s: &str) -> Result<ChaCha8Rng> {
    let bad = || Error::CorruptCheckpoint(format!("bad rng state `{s}`"));
    let mut parts = s.split(':');
    let (Some(seed_hex), Some(stream), Some(pos), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(bad());
    };
    if seed_hex.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (k, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * k..2 * k + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream.parse().map_err(|_| bad())?);
    rng.set_word_pos(pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

fn push_network(file: &mut CheckpointFile, prefix: &str, net: &Network) {
    for (j, block) in net.param_blocks().iter().enumerate() {
        file.push_array(format!("{prefix}.{j}"), vec![block.len()], block.to_vec());
    }
}

fn load_network(file: &CheckpointFile, prefix: &str, net: &mut Network) -> Result<()> {
    for (j, block) in net.param_blocks_mut().into_iter().enumerate() {
        let a = file.array(&format!("{prefix}.{j}"))?;
        if a.data.len() != block.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "array {prefix}.{j} has {} values, the configured model needs {}",
                a.data.len(),
                block.len()
            )));
        }
        block.copy_from_slice(&a.data);
    }
    Ok(())
}

fn push_queue(file: &mut CheckpointFile, prefix: &str, q: &MemoryQueue) {
    let mut ids = Vec::with_capacity(q.len());
    let mut data = Vec::with_capacity(q.len() * q.dim());
    for (id, v) in q.entries() {
        ids.push(id as f64);
        data.extend_from_slice(v);
    }
    file.push_array(format!("{prefix}.ids"), vec![ids.len()], ids);
    file.push_array(format!("{prefix}.data"), vec![q.len(), q.dim()], data);
}

fn load_queue(file: &CheckpointFile, prefix: &str, q: &mut MemoryQueue) -> Result<()> {
    let ids = &file.array(&format!("{prefix}.ids"))?.data;
    let data = file.array(&format!("{prefix}.data"))?;
    if data.shape != [ids.len(), q.dim()] {
        return Err(Error::CorruptCheckpoint(format!(
            "queue {prefix} has shape {:?}",
            data.shape
        )));
    }
    q.clear();
    for (id, v) in ids.iter().zip(data.data.chunks_exact(q.dim().max(1))) {
        if *id < 0.0 || id.fract() != 0.0 {
            return Err(Error::CorruptCheckpoint(format!(
                "queue {prefix} has id {id}"
            )));
        }
        q.enqueue(*id as usize, v)?;
    }
    Ok(())
}

pub fn to_checkpoint(t: &Trainer) -> CheckpointFile {
    let mut f = CheckpointFile::default();
    f.set("format", FORMAT);
    f.set("framework", t.cfg.run.framework);
    f.set("pos_sampling", t.cfg.run.pos_sampling);
    f.set("epoch", t.epoch);
    f.set("step", t.step);
    f.set("optimizer_steps", t.optimizer.steps);
    f.set("data_rng", rng_to_string(&t.data_rng));
    f.set("sampling_rng", rng_to_string(&t.sampling_rng));
    // The output directory is a property of the invocation, not the state.
    let mut cfg = t.cfg.clone();
    cfg.run.output_dir = PathBuf::new();
    f.set(
        "config",
        serde_json::to_string(&cfg).expect("config serializes"),
    );

    push_network(&mut f, "student", &t.model.student);
    if t.cfg.run.framework == super::Framework::Dino {
        push_network(&mut f, "teacher", t.model.teacher());
    }
    for (j, b) in t.optimizer.first.iter().enumerate() {
        f.push_array(format!("optim.first.{j}"), vec![b.len()], b.clone());
    }
    for (j, b) in t.optimizer.second.iter().enumerate() {
        f.push_array(format!("optim.second.{j}"), vec![b.len()], b.clone());
    }
    f.push_array(
        "dino.center",
        vec![t.dino.center.len()],
        t.dino.center.clone(),
    );
    push_queue(&mut f, "reference_queue", &t.reference_queue);
    push_queue(&mut f, "positive_queue", &t.positive_queue);
    f
}

pub fn config_from_checkpoint(f: &CheckpointFile) -> Result<RunConfig> {
    if f.get("format")? != FORMAT {
        return Err(Error::CorruptCheckpoint("not a training checkpoint".into()));
    }
    let cfg: RunConfig = serde_json::from_str(f.get("config")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Restore a trainer. `cfg` replaces the stored configuration; it must
/// describe the same model and corpus.
pub fn from_checkpoint(
    f: &CheckpointFile,
    cfg: RunConfig,
    data: Option<Experiment>,
) -> Result<Trainer> {
    let mut t = match data {
        Some(d) => Trainer::with_experiment(cfg, d)?,
        None => Trainer::new(cfg)?,
    };
    load_network(f, "student", &mut t.model.student)?;
    if t.cfg.run.framework == super::Framework::Dino {
        let mut teacher = t.model.teacher().clone();
        load_network(f, "teacher", &mut teacher)?;
        t.model = crate::nncore::ModelPair::from_parts(t.model.student.clone(), Some(teacher));
    }
    for (j, b) in t.optimizer.first.iter_mut().enumerate() {
        let a = &f.array(&format!("optim.first.{j}"))?.data;
        if a.len() != b.len() {
            return Err(Error::CorruptCheckpoint(format!("optim.first.{j} length")));
        }
        b.copy_from_slice(a);
    }
    for (j, b) in t.optimizer.second.iter_mut().enumerate() {
        let a = &f.array(&format!("optim.second.{j}"))?.data;
        if a.len() != b.len() {
            return Err(Error::CorruptCheckpoint(format!("optim.second.{j} length")));
        }
        b.copy_from_slice(a);
    }
    t.optimizer.steps = f.get_parsed("optimizer_steps")?;
    let center = &f.array("dino.center")?.data;
    if center.len() != t.dino.center.len() {
        return Err(Error::CorruptCheckpoint("dino.center length".into()));
    }
    t.dino.center.copy_from_slice(center);
    load_queue(f, "reference_queue", &mut t.reference_queue)?;
    load_queue(f, "positive_queue", &mut t.positive_queue)?;
    t.epoch = f.get_parsed("epoch")?;
    t.step = f.get_parsed("step")?;
    t.data_rng = rng_from_string(f.get("data_rng")?)?;
    t.sampling_rng = rng_from_string(f.get("sampling_rng")?)?;
    Ok(t)
}
