//! Quick wall-clock probe: full-batch forward+backward+update step at p=97.

use grokspectra::groupmath::{make_dataset, OpKind, TaskSpec};
use grokspectra::model::{
    adamw_step, backward, forward_batch, AdamState, AttnVector, Grads, Model, ModelConfig,
    Workspace,
};
use std::time::Instant;

fn main() {
    let task = TaskSpec::new(OpKind::Add, 97).unwrap();
    let ds = make_dataset(&task, 42);
    let cfg = ModelConfig::standard(97);
    let mut model: Model<f32> = Model::build(&cfg, 1).unwrap();
    let mut ws = Workspace::new(&model, ds.train().len());
    let mut grads = Grads::zeros(&model);
    let mut opt = AdamState::new(&model);
    let mut delta = AttnVector::zeros(model.layout());

    // Warm up.
    for _ in 0..3 {
        grads.zero_all();
        forward_batch(&model, &mut ws, ds.train(), 0, true);
        backward(&model, &mut ws, ds.train(), 0, &mut grads);
        adamw_step(&mut model, &grads, &mut opt, &mut delta);
    }
    let n = 10;
    let t0 = Instant::now();
    for _ in 0..n {
        grads.zero_all();
        let out = forward_batch(&model, &mut ws, ds.train(), 0, true);
        backward(&model, &mut ws, ds.train(), 0, &mut grads);
        adamw_step(&mut model, &grads, &mut opt, &mut delta);
        std::hint::black_box(out.mean_loss);
    }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    let flops = 15.0e9;
    println!(
        "full-batch step: {:.3} s  (~{:.1} GFLOP/s)  => 1000 steps in {:.1} min",
        dt,
        flops / dt / 1e9,
        dt * 1000.0 / 60.0
    );
    let t0 = Instant::now();
    forward_batch(&model, &mut ws, ds.train(), 0, true);
    println!("forward only: {:.3} s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    grads.zero_all();
    backward(&model, &mut ws, ds.train(), 0, &mut grads);
    println!("backward only: {:.3} s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    adamw_step(&mut model, &grads, &mut opt, &mut delta);
    println!("adamw only: {:.3} s", t0.elapsed().as_secs_f64());
}
