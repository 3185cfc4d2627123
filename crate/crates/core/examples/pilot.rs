//! Pilot run: modular addition at p = 97, wd = 1.0, seed 42, full batch.
//! Prints the accuracy trajectory so the grokking step can be read off.

use grokspectra::groupmath::{make_dataset, OpKind, TaskSpec};
use grokspectra::model::{
    train_run, EvalCtx, ModelConfig, NullSink, Real, StepCtx, TrainOptions, TrainSink,
};
use std::time::Instant;

struct PrintSink {
    t0: Instant,
}

impl<F: Real> TrainSink<F> for PrintSink {
    fn on_step(&mut self, _: StepCtx<'_, F>) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        Ok(())
    }
    fn on_eval(&mut self, ctx: EvalCtx<'_, F>) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        let e = &ctx.record.evals[0];
        println!(
            "step {:>6}  train_acc {:.4}  test_acc {:.4}  train_loss {:.4e}  [{:.0}s]",
            ctx.record.step,
            e.train_acc,
            e.test_acc,
            e.train_loss,
            self.t0.elapsed().as_secs_f64()
        );
        Ok(())
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let op = args.get(1).map(|s| s.as_str()).unwrap_or("add");
    let wd: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(42);
    let max_steps: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8000);

    let task = TaskSpec::new(OpKind::parse(op).expect("op"), 97).unwrap();
    let ds = make_dataset(&task, seed);
    let mut cfg = ModelConfig::standard(97);
    cfg.wd = wd;
    cfg.seed = seed;
    cfg.max_steps = max_steps;
    println!("pilot: op={op} wd={wd} seed={seed} max_steps={max_steps}");
    let _ = NullSink; // keep the import alive for quick edits
    let mut sink = PrintSink { t0: Instant::now() };
    let (_, _, outcome) = train_run::<f32>(
        &cfg,
        &[task],
        &[ds],
        None,
        TrainOptions { eval_every: 25, stop_margin: Some(1500) },
        &mut sink,
    )
    .unwrap();
    println!("grok_steps: {:?}  final_step: {}", outcome.grok_steps, outcome.final_step);
}
