//! Scratch calibration runs (removed before release).

use gnnlab_core::model::{Architecture, ClassifierConfig, ModelConfig, PoolMode};
use gnnlab_core::synthetic::clique_vs_path;
use gnnlab_core::train::{run_trial, TrainConfig, TrainMode};

fn config(mode: TrainMode, seed: u64, dim: usize) -> TrainConfig {
    let model = ModelConfig {
        architecture: Architecture::GraphSage,
        num_layers: 2,
        input_dim: 16,
        hidden_dim: dim,
        output_dim: dim,
        global_pool: PoolMode::Mean,
        gat_heads: 4,
        diffpool_clusters: 2,
        sagpool_ratio: 0.5,
    };
    let mut cfg = TrainConfig::new(
        mode,
        model,
        ClassifierConfig {
            num_layers: 2,
            hidden_dim: 8,
            num_classes: 2,
        },
        seed,
    );
    cfg.lr = 5e-3;
    cfg.stage1_epochs = 60;
    cfg.stage2_epochs = 40;
    cfg.patience = 10;
    cfg
}

#[test]
#[ignore]
fn calibrate_criterion5() {
    let started = std::time::Instant::now();
    let ds = clique_vs_path(200, 5, 5, 7).unwrap();
    for seed in 0..5 {
        for mode in [TrainMode::TwoStage, TrainMode::TwoStagePlus] {
            let cfg = config(mode, seed, 16);
            let r = run_trial(&ds, &cfg).unwrap();
            println!(
                "seed {seed} {}: stage1 final loss {:?}, test acc {:.3}",
                mode.name(),
                r.stage1_train_loss.last(),
                r.test_accuracy
            );
        }
    }
    println!("elapsed: {:?}", started.elapsed());
}

#[test]
#[ignore]
fn calibrate_criterion7() {
    let started = std::time::Instant::now();
    for (dim, epochs) in [(16usize, 60usize), (64, 60)] {
        let mut orig_finals = Vec::new();
        let mut two_finals = Vec::new();
        for seed in 0..5 {
            let ds = clique_vs_path(120, 4, 8, 100).unwrap();
            let mut oc = config(TrainMode::Original, seed, dim);
            oc.stage2_epochs = epochs;
            oc.patience = epochs - 1;
            let mut tc = config(TrainMode::TwoStage, seed, dim);
            tc.stage1_epochs = epochs;
            tc.patience = epochs - 1;
            let o = run_trial(&ds, &oc).unwrap();
            let t = run_trial(&ds, &tc).unwrap();
            let of = o.correlation_trace.last().cloned().flatten().unwrap();
            let tf = t.correlation_trace.last().cloned().flatten().unwrap();
            let otrace: Vec<String> = o
                .correlation_trace
                .iter()
                .step_by(10)
                .map(|c| format!("{:.2}", c.unwrap_or(-1.0)))
                .collect();
            let ttrace: Vec<String> = t
                .correlation_trace
                .iter()
                .step_by(10)
                .map(|c| format!("{:.2}", c.unwrap_or(-1.0)))
                .collect();
            println!(
                "dim {dim} seed {seed}: original {of:.3} [{}] vs 2stg {tf:.3} [{}]",
                otrace.join(","),
                ttrace.join(","),
            );
            orig_finals.push(of);
            two_finals.push(tf);
        }
        let om: f64 = orig_finals.iter().sum::<f64>() / 5.0;
        let tm: f64 = two_finals.iter().sum::<f64>() / 5.0;
        println!("dim {dim}: mean original {om:.3} vs mean 2stg {tm:.3} -> {}", om > tm);
    }
    println!("elapsed: {:?}", started.elapsed());
}
