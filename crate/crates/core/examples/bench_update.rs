//! Wall-clock cost of one rollout and one full PPO update per architecture
//! at the default (16 envs x 256 steps, 4 epochs) configuration.

use std::time::Instant;

use modnav::env::EnvConfig;
use modnav::policies::{ArchKind, ArchitectureSpec};
use modnav::trainer::{TrainConfig, Trainer};

fn main() -> modnav::Result<()> {
    for kind in ArchKind::ALL {
        let mut tr = Trainer::<f32>::new(&ArchitectureSpec::default_for(kind), &EnvConfig::default(), &TrainConfig::default())?;
        let t0 = Instant::now();
        tr.collect()?;
        let collect = t0.elapsed();
        let t0 = Instant::now();
        tr.update()?;
        println!("{kind:>6}: rollout {collect:.2?}, rollout + 4 epochs {:.2?}", t0.elapsed());
    }
    Ok(())
}
