use std::time::Instant;
fn main() {
    let b = 4705; let d = 128; let dff = 256;
    let x = vec![0.5f32; b*d]; let w = vec![0.25f32; d*dff];
    let mut y = vec![0.0f32; b*dff];
    let t = Instant::now();
    for _ in 0..4 { grokspectra::model::bench_matmul_xw(&x, &w, &mut y, b, d, dff); }
    let dt = t.elapsed().as_secs_f64()/4.0;
    println!("matmul_xw:    {:.4} s  {:.1} GFLOP/s", dt, 2.0*(b*d*dff) as f64/dt/1e9);
    let dy = vec![0.5f32; b*dff];
    let mut dx = vec![0.0f32; b*d];
    let mut wt = vec![0.0f32; d*dff];
    let t = Instant::now();
    for _ in 0..4 {
        grokspectra::model::bench_transpose_into(&w, &mut wt, d, dff);
        grokspectra::model::bench_matmul_xw(&dy, &wt, &mut dx, b, dff, d);
    }
    let dt = t.elapsed().as_secs_f64()/4.0;
    println!("dy*wt via T:  {:.4} s  {:.1} GFLOP/s", dt, 2.0*(b*d*dff) as f64/dt/1e9);
    let mut dw = vec![0.0f32; d*dff];
    let t = Instant::now();
    for _ in 0..4 { grokspectra::model::bench_matmul_xt_dy(&x, &dy, &mut dw, b, d, dff); }
    let dt = t.elapsed().as_secs_f64()/4.0;
    println!("matmul_xt_dy: {:.4} s  {:.1} GFLOP/s", dt, 2.0*(b*d*dff) as f64/dt/1e9);
    let mut h = vec![0.3f32; b*dff];
    let t = Instant::now();
    for _ in 0..4 { grokspectra::model::bench_gelu_grad_all(&mut h); }
    println!("gelu_grad 1.2M: {:.4} s", t.elapsed().as_secs_f64()/4.0);
    std::hint::black_box((&y, &dx, &dw, &h));
}
