use adamemento::agent::baseline::train_plain;
use adamemento::agent::{train, TrainConfig};
use adamemento::env::{make_env, EnvName, SpecOverrides};

fn lines_full(cfg: TrainConfig) -> Vec<String> {
    let mut out = Vec::new();
    train(cfg, |r| {
        out.push(r.csv_line());
        Ok(())
    })
    .unwrap();
    out
}

fn lines_plain(cfg: &TrainConfig) -> Vec<String> {
    let mut out = Vec::new();
    train_plain(cfg, |r| {
        out.push(r.csv_line());
        Ok(())
    })
    .unwrap();
    out
}

#[test]
fn disabled_modules_reproduce_plain_ppo() {
    let spec = make_env(EnvName::CliffWalking, &SpecOverrides::default()).unwrap();
    let mut cfg = TrainConfig::new(spec, 42);
    cfg.num_env = 4;
    cfg.num_step = 32;
    cfg.updates = 6;
    cfg.ensemble.ensemble_env_count = 2;
    cfg.memory_enabled = false;
    cfg.curiosity_enabled = false;
    let full = lines_full(cfg.clone());
    let plain = lines_plain(&cfg);
    assert_eq!(full, plain);
}
