mod common;

use std::io::Write;

use common::rel_err;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempbal_core::scheduler::{Assignment, ScheduleConfig};
use tempbal_core::train::{
    run_training, Activation, DataSource, DatasetSpec, InitScheme, ModelSpec, Network, TrainRun,
};

fn mlp_run() -> TrainRun {
    TrainRun {
        model: ModelSpec {
            hidden: vec![32, 32, 16],
            ..Default::default()
        },
        data: DatasetSpec {
            source: DataSource::GaussianMixture {
                classes: 3,
                dims: 8,
                samples: 600,
                separation: 4.0,
                noise: 1.0,
            },
            train_frac: 0.8,
        },
        schedule: ScheduleConfig {
            eta0: 0.05,
            total_epochs: 6,
            ..Default::default()
        },
        epochs: 6,
        batch_size: 32,
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn mlp_gradients_match_central_differences() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ModelSpec {
            hidden: vec![7, 5],
            activation: Activation::Tanh,
            init: InitScheme::XavierUniform,
            ..Default::default()
        };
        let net = Network::new(&spec, 4, 3, &mut rng).unwrap();
        let x: Vec<f64> = (0..6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        let (_, grads) = net.loss_and_grads(&x, &y);
        for _ in 0..32 {
            let pi = rng.random_range(0..net.params.len());
            let j = rng.random_range(0..net.params[pi].values.len());
            let f = |v: &[f64]| {
                let mut n = net.clone();
                n.params[pi].values.copy_from_slice(v);
                n.loss(&x, &y)
            };
            let fd = common::central_diff(f, &net.params[pi].values, j, 1e-6);
            let a = grads[pi][j];
            assert!(
                rel_err(a, fd) < 1e-4 || (a - fd).abs() < 1e-9,
                "seed {seed} {}[{j}]: {a} vs {fd}",
                net.params[pi].name
            );
        }
    }
}

#[test]
fn training_is_reproducible_and_learns() {
    let a = run_training(&mlp_run()).unwrap();
    let b = run_training(&mlp_run()).unwrap();
    assert_eq!(a.telemetry.to_csv_string(false), b.telemetry.to_csv_string(false));
    assert_eq!(a.final_snapshot, b.final_snapshot);
    assert!(a.final_eval_acc().unwrap() > 0.9, "{:?}", a.final_eval_acc());
    let other_seed = run_training(&TrainRun { seed: 18, ..mlp_run() }).unwrap();
    assert_ne!(a.final_snapshot, other_seed.final_snapshot);
}

#[test]
fn first_and_last_layers_ride_the_global_rate() {
    let out = run_training(&mlp_run()).unwrap();
    for d in &out.decisions {
        assert_eq!(d.lr("fc0.weight"), d.eta_t);
        assert_eq!(d.lr("fc3.weight"), d.eta_t);
        assert_eq!(d.alphas_used.len(), 2);
    }
}

#[test]
fn variants_run_end_to_end() {
    for assignment in [Assignment::Sqrt, Assignment::Log2, Assignment::Step, Assignment::GlobalOnly] {
        let mut run = mlp_run();
        run.epochs = 2;
        run.schedule.assignment = assignment;
        let out = run_training(&run).unwrap();
        assert_eq!(out.telemetry.epochs.len(), 2, "{assignment:?}");
    }
}

#[test]
fn trains_from_csv() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "x0,x1,label").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..200 {
        let c = i % 2;
        let shift = if c == 0 { -2.0 } else { 2.0 };
        writeln!(
            file,
            "{},{},{c}",
            shift + rng.random_range(-0.5..0.5),
            rng.random_range(-1.0..1.0)
        )
        .unwrap();
    }
    let run = TrainRun {
        data: DatasetSpec {
            source: DataSource::Csv {
                path: file.path().to_path_buf(),
                label_column: "label".into(),
                has_header: true,
            },
            train_frac: 0.75,
        },
        ..mlp_run()
    };
    let out = run_training(&run).unwrap();
    assert!(out.final_eval_acc().unwrap() >= 0.95);
}
