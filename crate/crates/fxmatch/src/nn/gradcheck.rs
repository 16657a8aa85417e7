//! Finite-difference verification of reverse-mode gradients, run in f64.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::store::ParamStore;

/// Compare analytic gradients against central differences for every
/// trainable parameter in the store. `build` must construct the same scalar
/// loss from the store each time it is called. At most `max_coords`
/// coordinates per tensor are probed (sampled with a fixed seed). Returns
/// the worst relative error seen. The denominator floor of 1e-3 turns the
/// check into an absolute one for near-zero gradients, where central
/// differences bottom out at roundoff noise (~1e-10 for a unit-scale loss);
/// some gradients are exactly zero by construction, e.g. a conv bias
/// followed by batch norm.
pub fn gradient_check<F>(store: &mut ParamStore<f64>, mut build: F, max_coords: usize) -> f64
where
    F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> NodeId,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    g.backward(loss);
    let grads = g.param_grads();

    let names: Vec<String> = store
        .names()
        .filter(|n| store.is_trainable(n))
        .map(String::from)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;

    for name in &names {
        let analytic = grads
            .get(name)
            .unwrap_or_else(|| panic!("no gradient for {name}"))
            .clone();
        let numel = store.get(name).numel();
        let mut coords: Vec<usize> = (0..numel).collect();
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);

        for &idx in &coords {
            let w0 = store.get(name).data()[idx];
            let h = 1e-5 * w0.abs().max(1.0);

            store.get_mut(name).data_mut()[idx] = w0 + h;
            let mut gp = Graph::new();
            let lp = build(&mut gp, store);
            let fp = gp.value(lp).item();

            store.get_mut(name).data_mut()[idx] = w0 - h;
            let mut gm = Graph::new();
            let lm = build(&mut gm, store);
            let fm = gm.value(lm).item();

            store.get_mut(name).data_mut()[idx] = w0;

            let fd = (fp - fm) / (2.0 * h);
            let an = analytic.data()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
