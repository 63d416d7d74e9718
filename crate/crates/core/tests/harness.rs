use std::fs;

use routesim_core::harness::metrics::{compute_metrics, summary_json};
use routesim_core::harness::*;
use routesim_core::harness::trace::split_usize;

fn small(variant: Variant, episodes: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::default().with_variant(variant);
    c.episodes = episodes;
    c.eval_episodes = 2;
    c.agent.actor_hidden = vec![16];
    c.agent.critic_hidden = vec![16];
    c.agent.batch_size = 8;
    c.asem.hidden = 16;
    c.asem.z1 = 8;
    c.asem.z2 = 4;
    c.asem.decoder_hidden = 16;
    c
}

#[test]
fn repeated_runs_write_identical_files() {
    let cfg = small(Variant::Full, 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_training(&cfg, Some(&RunFiles::new(a.path()))).unwrap();
    run_training(&cfg, Some(&RunFiles::new(b.path()))).unwrap();
    for name in ["config.toml", "trace.csv", "metrics.json", "model.ckpt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn zero_episodes_writes_an_empty_run() {
    let cfg = small(Variant::Full, 0);
    let dir = tempfile::tempdir().unwrap();
    let files = RunFiles::new(dir.path());
    let out = run_training(&cfg, Some(&files)).unwrap();
    assert!(out.rows.is_empty());
    assert!(out.summary.metrics.is_none());
    assert!(read_trace(fs::File::open(files.trace()).unwrap()).unwrap().is_empty());
}

#[test]
fn no_variant_invokes_a_masked_expert() {
    for v in Variant::ALL {
        let out = run_training(&small(v, 2), None).unwrap();
        assert_eq!(out.summary.safety.masked_invocations, 0, "{v}");
        assert_eq!(out.summary.safety.empty_masks, 0, "{v}");
        for r in &out.rows {
            let mask: Vec<usize> = split_usize(&r.mask).unwrap();
            for i in split_usize(&r.invoked).unwrap() {
                assert_eq!(mask[i], 1, "{v} step {}", r.global_step);
            }
        }
    }
}

#[test]
fn variants_see_the_same_tasks_and_channels() {
    let a = run_training(&small(Variant::Random, 2), None).unwrap().rows;
    let b = run_training(&small(Variant::NetworkFirst, 2), None).unwrap().rows;
    let c = run_training(&small(Variant::Full, 2), None).unwrap().rows;
    for ((x, y), z) in a.iter().zip(&b).zip(&c) {
        assert_eq!(x.category, y.category);
        assert_eq!(x.category, z.category);
        assert_eq!(x.snr_db, y.snr_db);
        assert_eq!(x.snr_db, z.snr_db);
    }
}

#[test]
fn metrics_file_is_recomputed_from_trace() {
    let cfg = small(Variant::NetworkFirst, 4);
    let dir = tempfile::tempdir().unwrap();
    let files = RunFiles::new(dir.path());
    let out = run_training(&cfg, Some(&files)).unwrap();
    let rows = read_trace(fs::File::open(files.trace()).unwrap()).unwrap();
    let mut bytes = Vec::new();
    write_trace(&mut bytes, &rows).unwrap();
    assert_eq!(bytes, fs::read(files.trace()).unwrap());
    let again = summarize(&rows, cfg.variant.as_str(), cfg.seed, cfg.eval_episodes).unwrap();
    assert_eq!(summary_json(&again).unwrap(), fs::read_to_string(files.metrics()).unwrap());
    let eps = episodes(&rows);
    assert_eq!(compute_metrics(&eps[2..]).unwrap(), out.summary.metrics.unwrap());
    assert!(replay_rows(&cfg, &rows).unwrap().consistent(0.0));
}

#[test]
fn checkpoint_restores_every_parameter_set() {
    let cfg = small(Variant::Full, 2);
    let dir = tempfile::tempdir().unwrap();
    let files = RunFiles::new(dir.path());
    let out = run_training(&cfg, Some(&files)).unwrap();
    let mut fresh = Simulation::new(cfg).unwrap();
    fresh.load_checkpoint(&files.final_checkpoint()).unwrap();
    for ((n1, a), (n2, b)) in out.simulation.named_sets().iter().zip(fresh.named_sets()) {
        assert_eq!(n1, &n2);
        assert!(a.values_equal(b), "{n1}");
    }
}

#[test]
fn baseline_and_ablation_entry_points_reject_wrong_kinds() {
    let cfg = small(Variant::Full, 1);
    assert!(run_baseline(Variant::NoAsem, &cfg, None).is_err());
    assert!(run_ablation(Variant::Random, &cfg, None).is_err());
}
