//! Fit y = sin(x) with a two-layer network using the reverse-mode graph,
//! then spot-check the analytic gradients against finite differences.

use fxmatch::nn::{gradient_check, Adam, Array, Graph, Linear, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f32>::new();
    let l1 = Linear::init(&mut store, &mut rng, "l1", 1, 32);
    let l2 = Linear::init(&mut store, &mut rng, "l2", 32, 1);

    let n = 64;
    let xs: Vec<f32> = (0..n).map(|i| -3.0 + 6.0 * i as f32 / (n - 1) as f32).collect();
    let ys: Vec<f32> = xs.iter().map(|x| x.sin()).collect();

    let mut opt = Adam::new(1e-2);
    for step in 0..=800 {
        let mut g = Graph::new();
        let x = g.input(Array::from_vec(xs.clone(), &[n, 1]));
        let y = g.input(Array::from_vec(ys.clone(), &[n, 1]));
        let h = l1.forward(&mut g, &store, x);
        let h = g.relu(h);
        let pred = l2.forward(&mut g, &store, h);
        let diff = g.sub(pred, y);
        let sq = g.mul(diff, diff);
        let loss = g.mean(sq);
        if step % 200 == 0 {
            println!("step {step:4}  mse {:.5}", g.value(loss).item());
        }
        g.backward(loss);
        opt.step(&mut store, &g.param_grads());
    }

    // the same architecture in f64, probed with central differences
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let l1 = Linear::init(&mut store, &mut rng, "l1", 1, 8);
    let l2 = Linear::init(&mut store, &mut rng, "l2", 8, 1);
    let worst = gradient_check(
        &mut store,
        |g, s| {
            let x = g.input(Array::from_vec(vec![-1.0, -0.2, 0.3, 1.1], &[4, 1]));
            let h = l1.forward(g, s, x);
            let h = g.relu(h);
            let pred = l2.forward(g, s, h);
            let sq = g.mul(pred, pred);
            g.mean(sq)
        },
        16,
    );
    println!("gradcheck worst rel err {worst:.2e}");
    assert!(worst < 1e-5);
}
