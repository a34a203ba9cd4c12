//! End-to-end training behavior: determinism, optimization sanity, and log
//! reproducibility.

mod common;

use geodsr_core::fusion::{GeoDsrNetwork, NetworkConfig};
use geodsr_core::geometry::make_target_grid;
use geodsr_core::synth::{gen_synthetic, SyntheticSceneSpec};
use geodsr_core::tensor::Tape;
use geodsr_core::training::{
    degrade_sample, l1_loss, loss_log_to_csv, run_stage, Adam, TrainConfig,
};

fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        channels: 8,
        blocks_per_group: 1,
        encoder_hidden: 8,
        ..NetworkConfig::full()
    }
}

#[test]
fn one_epoch_is_bit_reproducible() {
    let data = gen_synthetic(&SyntheticSceneSpec::new(4, 32, 5)).unwrap();
    let mut cfg = TrainConfig::desk(1, 4);
    cfg.crop = 32;
    cfg.seed = 9;
    let run = |seed: u64| {
        let net = GeoDsrNetwork::new(tiny_config(), seed).unwrap();
        run_stage(&net, &data, &cfg, None).unwrap()
    };
    let a = run(1);
    let b = run(1);
    assert_eq!(a.steps_run, 4);
    assert_eq!(loss_log_to_csv(&a.loss_log), loss_log_to_csv(&b.loss_log));
    // a different init gives a different trajectory
    let c = run(2);
    assert_ne!(loss_log_to_csv(&a.loss_log), loss_log_to_csv(&c.loss_log));
}

#[test]
fn single_step_decreases_loss_for_small_lr() {
    let data = gen_synthetic(&SyntheticSceneSpec::new(1, 32, 77)).unwrap();
    let net = GeoDsrNetwork::new(tiny_config(), 21).unwrap();
    let sample = degrade_sample(&data[0].0, &data[0].1, 4.0, (0.0, 1.0)).unwrap();
    let (lh, lw) = (sample.lr_depth.shape()[1], sample.lr_depth.shape()[2]);
    let (hh, hw) = (sample.hr_depth.shape()[1], sample.hr_depth.shape()[2]);
    let grid = make_target_grid(lh, lw, hh, hw).unwrap();

    let loss_of = |net: &GeoDsrNetwork| {
        let pred = net
            .forward(&sample.lr_depth, &sample.hr_guide, &grid, &sample.spec)
            .unwrap();
        l1_loss(&pred, &sample.hr_depth).unwrap().item()
    };

    let before = loss_of(&net);
    let mut opt = Adam::new(net.params(), 0.9, 0.99);
    let tape = Tape::new();
    let pred = net
        .forward(&sample.lr_depth, &sample.hr_guide, &grid, &sample.spec)
        .unwrap();
    let loss = l1_loss(&pred, &sample.hr_depth).unwrap();
    tape.backward(&loss).unwrap();
    opt.step(1e-6).unwrap();
    opt.zero_grad();
    drop(tape);
    let after = loss_of(&net);
    assert!(
        after < before,
        "loss did not decrease: {before} -> {after}"
    );
}

#[test]
fn nan_input_aborts_with_numeric_failure() {
    // training data is validated on entry, so drive the guard through the
    // loss value directly: a network with a poisoned parameter produces a
    // non-finite loss and run_stage must abort, not skip
    let data = gen_synthetic(&SyntheticSceneSpec::new(1, 32, 3)).unwrap();
    let net = GeoDsrNetwork::new(tiny_config(), 21).unwrap();
    let w = &net.out_head.weight;
    let mut poisoned = w.to_vec();
    poisoned[0] = f32::MAX;
    for v in poisoned.iter_mut().skip(1) {
        *v = f32::MAX;
    }
    w.set_data(&poisoned).unwrap();
    // overflow to inf during the forward pass -> NumericFailure abort;
    // guards must be off so the overflow reaches the loss
    geodsr_core::tensor::set_checked_mode(false);
    let mut cfg = TrainConfig::desk(1, 1);
    cfg.crop = 32;
    let err = run_stage(&net, &data, &cfg, None).unwrap_err();
    geodsr_core::tensor::set_checked_mode(true);
    assert!(
        matches!(err, geodsr_core::Error::NumericFailure(_)),
        "{err}"
    );
}

/// Pilot timing probe for calibrating desk-scale step budgets; run manually
/// with --ignored --nocapture.
#[test]
#[ignore]
fn pilot_step_timing() {
    let data = gen_synthetic(&SyntheticSceneSpec::new(8, 64, 1)).unwrap();
    let net = GeoDsrNetwork::new(NetworkConfig::desk(), 7).unwrap();
    for (label, stage) in [("stage1 (s=8)", 1u8), ("stage2 (U(1,16))", 2u8)] {
        let mut cfg = TrainConfig::desk(stage, 16);
        cfg.seed = 3;
        let start = std::time::Instant::now();
        let result = run_stage(&net, &data, &cfg, None).unwrap();
        let dt = start.elapsed().as_secs_f64();
        println!(
            "{label}: {} steps in {:.2}s = {:.3}s/step, first loss {:.4}, last {:.4}",
            result.steps_run,
            dt,
            dt / result.steps_run as f64,
            result.loss_log.first().unwrap().loss,
            result.loss_log.last().unwrap().loss
        );
    }
}
