//! Finite-difference verification of the hand-derived gradients on a toy
//! model, in 64-bit mode: 200 randomly selected parameters, central
//! differences, relative error < 1e-4 (1e-2 in 32-bit mode).

use grokspectra::groupmath::{make_dataset, OpKind, TaskSpec};
use grokspectra::model::{
    backward, forward_batch, Grads, Model, ModelConfig, Real, Workspace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch_loss<F: Real>(model: &Model<F>, batch: &[(u32, u32, u32)], task: usize) -> f64 {
    let mut ws = Workspace::new(model, batch.len());
    forward_batch(model, &mut ws, batch, task, true).mean_loss
}

fn analytic_grads<F: Real>(
    model: &Model<F>,
    batch: &[(u32, u32, u32)],
    task: usize,
) -> Grads<F> {
    let mut ws = Workspace::new(model, batch.len());
    let mut grads = Grads::zeros(model);
    forward_batch(model, &mut ws, batch, task, true);
    backward(model, &mut ws, batch, task, &mut grads);
    grads
}

fn check_params<F: Real>(tol: f64, h: f64, floor: f64) -> (f64, usize) {
    let task = TaskSpec::new(OpKind::Add, 5).unwrap();
    let ds = make_dataset(&task, 42);
    let batch = &ds.train()[..10];
    let cfg = ModelConfig::toy(5);
    let mut model: Model<F> = Model::build(&cfg, 1).unwrap();
    let grads = analytic_grads(&model, batch, 0);

    // Collect (param index, element index) coordinates, then sample.
    let coords: Vec<(usize, usize)> = model
        .params()
        .iter()
        .enumerate()
        .flat_map(|(pi, (_, buf))| (0..buf.len()).map(move |j| (pi, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    for _ in 0..200 {
        let (pi, j) = coords[rng.gen_range(0..coords.len())];
        let orig = {
            let buf = model.params().iter().nth(pi).unwrap().1;
            buf[j].as_f64()
        };
        set_param(&mut model, pi, j, orig + h);
        let up = batch_loss(&model, batch, 0);
        set_param(&mut model, pi, j, orig - h);
        let down = batch_loss(&model, batch, 0);
        set_param(&mut model, pi, j, orig);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.by_index(pi)[j].as_f64();
        let denom = analytic.abs().max(numeric.abs());
        if denom < floor {
            continue; // below the finite-difference noise floor
        }
        let rel = (numeric - analytic).abs() / denom;
        assert!(
            rel < tol,
            "param {}[{j}]: analytic {analytic:.6e}, numeric {numeric:.6e}, rel {rel:.3e}",
            names[pi]
        );
        worst = worst.max(rel);
        checked += 1;
    }
    (worst, checked)
}

fn set_param<F: Real>(model: &mut Model<F>, pi: usize, j: usize, value: f64) {
    let (_, buf) = model.params_mut().iter_mut().nth(pi).unwrap();
    buf[j] = F::of(value);
}

#[test]
fn central_differences_match_in_f64() {
    // h balances truncation against f64 rounding; 1e-3 is the 32-bit setting.
    let (worst, checked) = check_params::<f64>(1e-4, 1e-5, 1e-8);
    assert!(checked > 150, "only {checked} informative coordinates");
    println!("f64 gradcheck: worst relative error {worst:.3e} over {checked} params");
}

#[test]
fn central_differences_match_in_f32() {
    // f32 losses carry ~1e-7 rounding noise, so the finite difference has an
    // ~8e-5 absolute floor at h = 1e-3. Only coordinates comfortably above
    // the floor can be checked to 1%.
    let (worst, checked) = check_params::<f32>(1e-2, 1e-3, 1e-2);
    assert!(checked > 40, "only {checked} informative coordinates");
    println!("f32 gradcheck: worst relative error {worst:.3e} over {checked} params");
}

#[test]
fn zero_head_gradient_is_softmax_minus_onehot() {
    let task = TaskSpec::new(OpKind::Add, 5).unwrap();
    let ds = make_dataset(&task, 1);
    let batch = &ds.train()[..6];
    let cfg = ModelConfig::toy(5);
    let mut model: Model<f64> = Model::build(&cfg, 1).unwrap();
    for (name, buf) in model.params_mut().iter_mut() {
        if name.starts_with("head0") {
            buf.fill(0.0);
        }
    }
    let grads = analytic_grads(&model, batch, 0);
    // Zero head => uniform softmax; db[c] = sum_i (p_c - onehot_ic) / B.
    let vocab = 5usize;
    let mut want = vec![0.0f64; vocab];
    for &(_, _, label) in batch {
        for (c, w) in want.iter_mut().enumerate() {
            *w += (1.0 / vocab as f64 - if c == label as usize { 1.0 } else { 0.0 })
                / batch.len() as f64;
        }
    }
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    let bias_idx = names.iter().position(|n| n == "head0.b").unwrap();
    let got = grads.by_index(bias_idx);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn duplicated_examples_leave_mean_gradient_unchanged() {
    let cfg = ModelConfig::toy(5);
    let model: Model<f64> = Model::build(&cfg, 1).unwrap();
    let one = [(2u32, 3u32, 0u32)];
    let four = [(2u32, 3u32, 0u32); 4];
    let g1 = analytic_grads(&model, &one, 0);
    let g4 = analytic_grads(&model, &four, 0);
    for pi in 0..model.params().len() {
        let a = g1.by_index(pi);
        let b = g4.by_index(pi);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
